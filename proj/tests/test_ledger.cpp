#include <fstream>
#include <random>

#include "catch_amalgamated.hpp"

#include "iotchan/ledger.hpp"

using namespace iotchan;

namespace {

Keypair owner_keys(std::uint32_t n) {
    Digest32 seed{};
    seed[0] = static_cast<std::uint8_t>(n);
    seed[5] = 0x4c;
    return derive_keypair(seed, {Party::DeviceA, KeyRole::Funding, 0, 0});
}

Transaction coinbase_to(const std::vector<std::pair<PublicKey, Satoshi>>& outputs) {
    Transaction tx;
    for (const auto& [pk, value] : outputs)
        tx.outputs.push_back(TxOutput{value, p2pkh_lock(pk)});
    return tx;
}

Transaction spend_p2pkh(const OutPoint& from, const Keypair& keys,
                        const std::vector<std::pair<PublicKey, Satoshi>>& to,
                        std::uint32_t sequence = 0) {
    Transaction tx;
    tx.inputs.push_back(TxInput{from, {}, sequence});
    for (const auto& [pk, value] : to) tx.outputs.push_back(TxOutput{value, p2pkh_lock(pk)});
    Digest32 digest = signing_digest(tx, 0);
    tx.inputs[0].unlocking =
        p2pkh_unlock(sign(keys.sk, {digest.data(), 32}), keys.pk);
    return tx;
}

Transaction reference_tx() {
    Keypair a = owner_keys(1), b = owner_keys(2);
    Transaction tx;
    tx.inputs.push_back(TxInput{OutPoint{Digest32{}, 7}, p2pkh_lock(a.pk), 3});
    tx.outputs.push_back(TxOutput{1234, p2pkh_lock(a.pk)});
    tx.outputs.push_back(TxOutput{5678, p2pkh_lock(b.pk)});
    return tx;
}

}  // namespace

TEST_CASE("txid is stable and value-sensitive") {
    Transaction tx = reference_tx();
    CHECK(txid(tx) == txid(tx));
    Transaction changed = tx;
    changed.outputs[0].value += 1;
    CHECK(txid(changed) != txid(tx));

    std::ifstream golden(std::string(IOTCHAN_SOURCE_DIR) +
                         "/tests/golden/reference_txid.txt");
    REQUIRE(golden.good());
    std::string expected;
    golden >> expected;
    CHECK(txid_hex(tx) == expected);
}

TEST_CASE("signing digest blanks every unlocking script") {
    Transaction tx = reference_tx();
    Digest32 with_witness = signing_digest(tx, 0);
    Transaction stripped = tx;
    stripped.inputs[0].unlocking.clear();
    CHECK(signing_digest(stripped, 0) == with_witness);

    Transaction two_inputs = tx;
    two_inputs.inputs.push_back(TxInput{OutPoint{Digest32{}, 9}, {}, 0});
    CHECK(signing_digest(two_inputs, 0) == signing_digest(two_inputs, 1));

    Transaction changed = tx;
    changed.outputs[1].value -= 1;
    CHECK(signing_digest(changed, 0) != with_witness);

    CHECK_THROWS_AS(signing_digest(tx, 5), IndexOutOfRange);
}

TEST_CASE("confirmed pay-to-public-key-hash outputs can be spent") {
    Chain chain;
    Keypair alice = owner_keys(3), bob = owner_keys(4);
    Transaction cb = coinbase_to({{alice.pk, 10000}});
    REQUIRE_FALSE(chain.submit(cb));
    chain.mine_block();
    OutPoint source{txid(cb), 0};

    Transaction spend = spend_p2pkh(source, alice, {{bob.pk, 9000}});
    CHECK_FALSE(chain.validate(spend).has_value());
    REQUIRE_FALSE(chain.submit(spend));
    chain.mine_block();
    CHECK(chain.utxo().contains(OutPoint{txid(spend), 0}));
    CHECK_FALSE(chain.utxo().contains(source));
    CHECK(chain.total_fees() == 1000);
}

TEST_CASE("double spends within the mempool batch are refused") {
    Chain chain;
    Keypair alice = owner_keys(5), bob = owner_keys(6);
    Transaction cb = coinbase_to({{alice.pk, 10000}});
    chain.submit(cb);
    chain.mine_block();
    OutPoint source{txid(cb), 0};

    Transaction first = spend_p2pkh(source, alice, {{bob.pk, 10000}});
    Transaction second = spend_p2pkh(source, alice, {{alice.pk, 9999}});
    REQUIRE_FALSE(chain.submit(first));
    ValidationResult err = chain.submit(second);
    REQUIRE(err);
    CHECK(err->kind == ValidationErrorKind::DoubleSpend);
    chain.mine_block();
    CHECK(chain.scan_for_spend(source)->spending_txid == txid(first));
}

TEST_CASE("validation failures are specific") {
    Chain chain;
    Keypair alice = owner_keys(7), mallory = owner_keys(8);
    Transaction cb = coinbase_to({{alice.pk, 5000}});
    chain.submit(cb);
    chain.mine_block();
    OutPoint source{txid(cb), 0};

    Transaction missing = spend_p2pkh(OutPoint{Digest32{}, 0}, alice, {{alice.pk, 1}});
    CHECK(chain.validate(missing)->kind == ValidationErrorKind::MissingUtxo);

    Transaction overdraw = spend_p2pkh(source, alice, {{alice.pk, 6000}});
    CHECK(chain.validate(overdraw)->kind == ValidationErrorKind::NegativeFee);

    Transaction forged = spend_p2pkh(source, mallory, {{mallory.pk, 5000}});
    auto err = chain.validate(forged);
    REQUIRE(err);
    CHECK(err->kind == ValidationErrorKind::ScriptInvalid);
    CHECK(err->input_index == 0);

    Transaction doubled = spend_p2pkh(source, alice, {{alice.pk, 2000}});
    doubled.inputs.push_back(doubled.inputs[0]);
    Digest32 digest = signing_digest(doubled, 0);
    Script unlock = p2pkh_unlock(sign(alice.sk, {digest.data(), 32}), alice.pk);
    doubled.inputs[0].unlocking = unlock;
    doubled.inputs[1].unlocking = unlock;
    CHECK(chain.validate(doubled)->kind == ValidationErrorKind::DoubleSpend);
}

TEST_CASE("validate never mutates the chain") {
    Chain chain;
    Keypair alice = owner_keys(9);
    Transaction cb = coinbase_to({{alice.pk, 700}});
    chain.submit(cb);
    chain.mine_block();
    auto before = chain.dump().dump();
    Transaction spend = spend_p2pkh(OutPoint{txid(cb), 0}, alice, {{alice.pk, 700}});
    (void)chain.validate(spend);
    (void)chain.validate(spend);
    CHECK(chain.dump().dump() == before);
}

TEST_CASE("relative locktime gates confirmation height") {
    Chain chain;
    Keypair alice = owner_keys(10);
    const std::int64_t w = 6;
    Transaction cb;
    cb.outputs.push_back(TxOutput{
        4000, parse_script(std::to_string(w) + " CHECKSEQUENCEVERIFY DROP DUP HASH160 <" +
                           to_hex({hash160(alice.pk.view()).data(), 20}) +
                           "> EQUALVERIFY CHECKSIG")});
    chain.submit(cb);
    chain.mine_block();  // confirmed at height 1
    OutPoint locked{txid(cb), 0};

    Transaction claim = spend_p2pkh(locked, alice, {{alice.pk, 4000}},
                                    static_cast<std::uint32_t>(w));
    // Inclusion at height h spends an output confirmed at height 1, so it is
    // premature until h - 1 reaches w.
    while (chain.height() < w) {
        auto err = chain.validate(claim);
        REQUIRE(err);
        CHECK(err->kind == ValidationErrorKind::ScriptInvalid);
        chain.mine_block();
    }
    CHECK_FALSE(chain.validate(claim).has_value());
    chain.submit(claim);
    chain.mine_block();
    CHECK(chain.scan_for_spend(locked).has_value());
}

TEST_CASE("mempool-only spends are invisible to the scanner") {
    Chain chain;
    Keypair alice = owner_keys(11);
    Transaction cb = coinbase_to({{alice.pk, 100}});
    chain.submit(cb);
    chain.mine_block();
    OutPoint source{txid(cb), 0};
    CHECK_FALSE(chain.scan_for_spend(source).has_value());

    Transaction spend = spend_p2pkh(source, alice, {{alice.pk, 100}});
    chain.submit(spend);
    CHECK_FALSE(chain.scan_for_spend(source).has_value());
    chain.mine_block();
    auto record = chain.scan_for_spend(source);
    REQUIRE(record);
    CHECK(record->spending_txid == txid(spend));
    CHECK(record->height == 2);
}

TEST_CASE("mining with an empty mempool only advances the height") {
    Chain chain;
    auto before = chain.utxo();
    chain.mine_block();
    CHECK(chain.height() == 1);
    CHECK(chain.utxo() == before);
}

TEST_CASE("value is conserved across random activity") {
    std::mt19937_64 rng(2024);
    Chain chain;
    std::vector<std::pair<OutPoint, std::pair<Keypair, Satoshi>>> wallet;
    Satoshi seeded = 0;
    for (int i = 0; i < 4; ++i) {
        Keypair kp = owner_keys(20 + static_cast<std::uint32_t>(i));
        Satoshi value = 1000 + static_cast<Satoshi>(rng() % 9000);
        Transaction cb = coinbase_to({{kp.pk, value}});
        chain.submit(cb);
        chain.mine_block();
        wallet.push_back({OutPoint{txid(cb), 0}, {kp, value}});
        seeded += value;
    }
    for (int round = 0; round < 12 && !wallet.empty(); ++round) {
        std::size_t pick = rng() % wallet.size();
        auto [outpoint, entry] = wallet[pick];
        wallet.erase(wallet.begin() + static_cast<std::ptrdiff_t>(pick));
        auto [keys, value] = entry;
        Keypair to = owner_keys(40 + static_cast<std::uint32_t>(round));
        Satoshi fee = static_cast<Satoshi>(rng() % 50);
        if (fee >= value) fee = 0;
        Transaction spend = spend_p2pkh(outpoint, keys, {{to.pk, value - fee}});
        REQUIRE_FALSE(chain.submit(spend));
        chain.mine_block();
        wallet.push_back({OutPoint{txid(spend), 0}, {to, value - fee}});
    }
    Satoshi utxo_total = 0;
    for (const auto& [op, entry] : chain.utxo()) utxo_total += entry.output.value;
    CHECK(utxo_total + chain.total_fees() == seeded);
    CHECK(chain.total_seeded() == seeded);
    CHECK(chain.recheck_confirmed_scripts());
}

TEST_CASE("size estimation matches the published formula") {
    SizeEstimate one_two = estimate_size(1, 2);
    CHECK(one_two.min_bytes == 225);
    CHECK(one_two.max_bytes == 227);
    CHECK(one_two.min_bytes <= 226);
    CHECK(226 <= one_two.max_bytes);

    SizeEstimate two_two = estimate_size(2, 2);
    CHECK(two_two.min_bytes == 372);
    CHECK(two_two.max_bytes == 376);

    SizeEstimate one_one = estimate_size(1, 1);
    CHECK(one_one.min_bytes == 191);
    CHECK(one_one.max_bytes == 193);

    CHECK_THROWS_AS(estimate_size(0, 2), EstimateDomainError);
    CHECK_THROWS_AS(estimate_size(1, 0), EstimateDomainError);
}
