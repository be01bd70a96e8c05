#include <random>

#include "catch_amalgamated.hpp"

#include "iotchan/channel.hpp"

using namespace iotchan;

namespace {

const Digest32 kSeedA = array_from_hex<32>(
    "1111111111111111111111111111111111111111111111111111111111111111");
const Digest32 kSeedB = array_from_hex<32>(
    "2222222222222222222222222222222222222222222222222222222222222222");

ChannelParams fixture_params() {
    ChannelParams p;
    p.omega_a = 50000;
    p.omega_b = 50000;
    p.w = 6;
    p.k1 = 5;
    p.k2 = 5;
    p.sigma1 = 12000;
    p.gamma1 = 12000;
    return p;
}

// A funded channel on a live chain, ready for commitment experiments.
struct Harness {
    ChannelParams params;
    Channel channel;
    Chain chain;
    FundingBuild funding;
    OutPoint funding_outpoint;

    explicit Harness(ChannelParams p = fixture_params())
        : params(p), channel(p, kSeedA, kSeedB, pool_seed_from(kSeedA, kSeedB)) {
        Keypair seed_key_a = channel.funding_keys_a();
        Keypair seed_key_b = channel.funding_keys_b();
        Transaction coinbase;
        std::vector<SpendableSeed> inputs_a, inputs_b;
        std::uint32_t index = 0;
        if (params.omega_a > 0)
            coinbase.outputs.push_back(TxOutput{params.omega_a, p2pkh_lock(seed_key_a.pk)});
        if (params.omega_b > 0)
            coinbase.outputs.push_back(TxOutput{params.omega_b, p2pkh_lock(seed_key_b.pk)});
        chain.submit(coinbase);
        chain.mine_block();
        Digest32 cb = txid(coinbase);
        if (params.omega_a > 0)
            inputs_a.push_back(SpendableSeed{OutPoint{cb, index++}, params.omega_a, seed_key_a});
        if (params.omega_b > 0)
            inputs_b.push_back(SpendableSeed{OutPoint{cb, index++}, params.omega_b, seed_key_b});
        funding = build_funding_tx(params, inputs_a, inputs_b, seed_key_a.pk, seed_key_b.pk);
        REQUIRE_FALSE(chain.submit(funding.tx));
        chain.mine_block();
        funding_outpoint = OutPoint{txid(funding.tx), funding.channel_output_index};
    }

    CommitmentPair pair_for(std::uint32_t state) {
        return channel.commitment_pair(state, funding_outpoint);
    }

    Transaction publish_commitment_b(std::uint32_t state) {
        CommitmentPair pair = pair_for(state);
        Digest32 digest = signing_digest(pair.tx_b, 0);
        Signature own = sign(channel.funding_keys_b().sk, {digest.data(), 32});
        Transaction tx = complete_funding_spend(pair.tx_b, funding.redeem,
                                                pair.sig_a_for_tx_b, own);
        REQUIRE_FALSE(chain.submit(tx));
        chain.mine_block();
        return tx;
    }

    Transaction publish_commitment_a(std::uint32_t state) {
        CommitmentPair pair = pair_for(state);
        Digest32 digest = signing_digest(pair.tx_a, 0);
        Signature own = sign(channel.funding_keys_a().sk, {digest.data(), 32});
        Transaction tx = complete_funding_spend(pair.tx_a, funding.redeem, own,
                                                pair.sig_b_for_tx_a);
        REQUIRE_FALSE(chain.submit(tx));
        chain.mine_block();
        return tx;
    }

    void mine_until(std::int64_t height) {
        while (chain.height() < height) chain.mine_block();
    }
};

}  // namespace

TEST_CASE("funding locks both contributions behind the 2-of-2") {
    Harness h;
    CHECK(h.funding.tx.inputs.size() == 2);
    CHECK(h.funding.tx.outputs.size() == 1);
    CHECK(h.funding.tx.outputs[0].value == 100000);
    CHECK(h.chain.utxo().contains(h.funding_outpoint));
}

TEST_CASE("gateway-only funding is a valid single-input channel") {
    ChannelParams p = fixture_params();
    p.omega_a = 0;
    p.omega_b = 100000;
    Harness h(p);
    CHECK(h.funding.tx.inputs.size() == 1);
    CHECK(h.funding.tx.outputs[0].value == 100000);
}

TEST_CASE("funding refuses inputs short by one satoshi") {
    ChannelParams p = fixture_params();
    Keypair a = derive_keypair(kSeedA, {Party::DeviceA, KeyRole::Funding, 0, 0});
    Keypair b = derive_keypair(kSeedB, {Party::GatewayB, KeyRole::Funding, 0, 0});
    std::vector<SpendableSeed> inputs_a{{OutPoint{}, p.omega_a - 1, a}};
    std::vector<SpendableSeed> inputs_b{{OutPoint{}, p.omega_b, b}};
    try {
        build_funding_tx(p, inputs_a, inputs_b, a.pk, b.pk);
        FAIL("expected InsufficientFunds");
    } catch (const ChannelError& e) {
        CHECK(e.kind == ChannelErrorKind::InsufficientFunds);
    }
}

TEST_CASE("funding returns change to each side") {
    ChannelParams p = fixture_params();
    Keypair a = derive_keypair(kSeedA, {Party::DeviceA, KeyRole::Funding, 0, 0});
    Keypair b = derive_keypair(kSeedB, {Party::GatewayB, KeyRole::Funding, 0, 0});
    std::vector<SpendableSeed> inputs_a{{OutPoint{}, p.omega_a + 700, a}};
    std::vector<SpendableSeed> inputs_b{{OutPoint{}, p.omega_b + 300, b}};
    FundingBuild build = build_funding_tx(p, inputs_a, inputs_b, a.pk, b.pk);
    REQUIRE(build.tx.outputs.size() == 3);
    CHECK(build.tx.outputs[1].value == 700);
    CHECK(build.tx.outputs[2].value == 300);
}

TEST_CASE("commitment pair carries the fixture arithmetic") {
    Harness h;
    auto [state, msgs] = h.channel.update_state(60000);
    (void)msgs;
    CommitmentPair pair = h.pair_for(2);
    REQUIRE(pair.tx_a.outputs.size() == 3);
    CHECK(pair.tx_a.outputs[0].value == 60000 - 12000);
    CHECK(pair.tx_a.outputs[1].value == 40000);
    CHECK(pair.tx_a.outputs[2].value == 12000);
    Satoshi total = 0;
    for (const TxOutput& o : pair.tx_a.outputs) total += o.value;
    CHECK(total == 100000);

    REQUIRE(pair.tx_b.outputs.size() == 2);
    CHECK(pair.tx_b.outputs[0].value == 40000);
    CHECK(pair.tx_b.outputs[1].value == 60000);
}

TEST_CASE("commitment budget checks") {
    Harness h;
    auto [s2, m2] = h.channel.update_state(5000);  // below sigma1
    (void)m2;
    try {
        h.pair_for(2);
        FAIL("expected BudgetExceeded");
    } catch (const ChannelError& e) {
        CHECK(e.kind == ChannelErrorKind::BudgetExceeded);
    }
    auto [s3, m3] = h.channel.update_state(0);  // nothing to protect: allowed
    (void)m3;
    CommitmentPair pair = h.pair_for(3);
    REQUIRE(pair.tx_a.outputs.size() == 1);
    CHECK(pair.tx_a.outputs[0].value == 100000);
    REQUIRE(pair.tx_b.outputs.size() == 1);  // only the revocable side
    CHECK(pair.tx_b.outputs[0].value == 100000);
}

TEST_CASE("the device commitment's timelocked branch matures inclusively") {
    Harness h;
    h.channel.update_state(60000);
    Transaction published = h.publish_commitment_a(2);
    std::int64_t conf = h.chain.height();
    OutPoint revocable{txid(published), 0};

    Keypair claim_key = derive_keypair(kSeedA, {Party::DeviceA, KeyRole::StateA, 2, 0});
    Transaction claim;
    claim.inputs.push_back(TxInput{revocable, {}, static_cast<std::uint32_t>(h.params.w)});
    claim.outputs.push_back(
        TxOutput{48000, p2pkh_lock(h.channel.close_keys_a().pk)});
    Digest32 digest = signing_digest(claim, 0);
    claim.inputs[0].unlocking =
        csv_claim_witness(sign(claim_key.sk, {digest.data(), 32}), claim_key.pk);

    h.mine_until(conf + h.params.w - 2);
    // Inclusion in the next block would be one short of the window.
    auto premature = h.chain.validate(claim);
    REQUIRE(premature);
    CHECK(premature->kind == ValidationErrorKind::ScriptInvalid);
    h.chain.mine_block();
    CHECK_FALSE(h.chain.validate(claim).has_value());  // exactly W blocks deep
    h.chain.submit(claim);
    h.chain.mine_block();
    CHECK(h.chain.scan_for_spend(revocable).has_value());
}

TEST_CASE("revocation path needs both keys") {
    Harness h;
    auto [s2, msgs] = h.channel.update_state(60000);
    (void)s2;
    h.channel.update_state(80000);  // state 2 now revoked
    Transaction published = h.publish_commitment_a(2);
    OutPoint revocable{txid(published), 0};

    CommitmentKeys keys = h.channel.commitment_keys(2);
    SecretKey sk_b_b = derive_keypair(kSeedB, {Party::GatewayB, KeyRole::StateB, 2, 0}).sk;
    SecretKey revealed = h.channel.state(2).revocation_secret_a.value();

    Transaction sweep;
    sweep.inputs.push_back(TxInput{revocable, {}, 0});
    sweep.outputs.push_back(TxOutput{48000, p2pkh_lock(h.channel.close_keys_b().pk)});
    Digest32 digest = signing_digest(sweep, 0);
    Signature sig_c = sign(revealed, {digest.data(), 32});
    Signature sig_b = sign(sk_b_b, {digest.data(), 32});

    SECTION("both keys satisfy the punishment branch") {
        sweep.inputs[0].unlocking = remedy_witness_a(sig_c, keys.slots_a.c, sig_b, keys.slots_b.b);
        CHECK_FALSE(h.chain.validate(sweep).has_value());
    }
    SECTION("either key alone fails") {
        sweep.inputs[0].unlocking = remedy_witness_a(sig_c, keys.slots_a.c, sig_c, keys.slots_a.c);
        CHECK(h.chain.validate(sweep).has_value());
        sweep.inputs[0].unlocking = remedy_witness_a(sig_b, keys.slots_b.b, sig_b, keys.slots_b.b);
        CHECK(h.chain.validate(sweep).has_value());
    }
}

TEST_CASE("update_state walks the fixture sequence and revokes") {
    Harness h;
    CHECK(h.channel.current().index == 1);
    auto [s2, m2] = h.channel.update_state(60000);
    CHECK(s2.index == 2);
    CHECK(s2.balance_a == 60000);
    CHECK(s2.balance_b == 40000);
    CHECK(h.channel.state(1).revoked);
    CHECK(h.channel.state(1).revocation_secret_a.has_value());
    CHECK(h.channel.state(1).revocation_secret_b.has_value());
    // The exchanged secrets are exactly the slot-c keys of the revoked state.
    CHECK(public_key_of(m2.secret_a_c) ==
          derive_keypair(kSeedA, {Party::DeviceA, KeyRole::StateC, 1, 0}).pk);
    CHECK(public_key_of(m2.secret_b_c) ==
          derive_keypair(kSeedB, {Party::GatewayB, KeyRole::StateC, 1, 0}).pk);

    auto [s3, m3] = h.channel.update_state(80000);
    (void)m3;
    CHECK(s3.balance_a == 80000);
    CHECK(s3.balance_b == 20000);

    // No-op delta still advances and revokes.
    auto [s4, m4] = h.channel.update_state(80000);
    (void)m4;
    CHECK(s4.index == 4);
    CHECK(h.channel.state(3).revoked);

    CHECK_THROWS_AS(h.channel.update_state(100001), ChannelError);
    h.channel.mark_closed();
    CHECK_THROWS_AS(h.channel.update_state(50000), ChannelError);
}

TEST_CASE("state capacity is bounded by max_states") {
    ChannelParams p = fixture_params();
    p.max_states = 3;
    Channel channel(p, kSeedA, kSeedB, pool_seed_from(kSeedA, kSeedB));
    channel.update_state(60000);
    channel.update_state(55000);
    try {
        channel.update_state(50000);
        FAIL("expected StateExhausted");
    } catch (const ChannelError& e) {
        CHECK(e.kind == ChannelErrorKind::StateExhausted);
    }
}

TEST_CASE("mutual close pays the current balances") {
    Harness h;
    h.channel.update_state(60000);
    h.channel.update_state(80000);
    CommitmentKeys keys = h.channel.commitment_keys(3);

    Transaction skeleton = build_mutual_close_skeleton(
        h.params, h.channel.current(), keys, h.channel.close_keys_a().pk,
        h.channel.close_keys_b().pk, h.funding_outpoint);
    Digest32 digest = signing_digest(skeleton, 0);
    Signature sig_a = sign(h.channel.funding_keys_a().sk, {digest.data(), 32});
    Signature sig_b = sign(h.channel.funding_keys_b().sk, {digest.data(), 32});
    Transaction close = build_mutual_close(
        h.params, h.channel.current(), keys, h.funding.redeem,
        h.channel.close_keys_a().pk, h.channel.close_keys_b().pk, h.funding_outpoint,
        sig_a, sig_b);
    REQUIRE(close.outputs.size() == 2);
    CHECK(close.outputs[0].value == 80000);
    CHECK(close.outputs[1].value == 20000);
    REQUIRE_FALSE(h.chain.submit(close));
    h.chain.mine_block();

    try {
        build_mutual_close(h.params, h.channel.current(), keys, h.funding.redeem,
                           h.channel.close_keys_a().pk, h.channel.close_keys_b().pk,
                           h.funding_outpoint, sig_a, std::nullopt);
        FAIL("expected MissingSignature");
    } catch (const ChannelError& e) {
        CHECK(e.kind == ChannelErrorKind::MissingSignature);
    }
}

TEST_CASE("close at the opening state returns the funding amounts") {
    Harness h;
    CommitmentKeys keys = h.channel.commitment_keys(1);
    Transaction skeleton = build_mutual_close_skeleton(
        h.params, h.channel.current(), keys, h.channel.close_keys_a().pk,
        h.channel.close_keys_b().pk, h.funding_outpoint);
    REQUIRE(skeleton.outputs.size() == 2);
    CHECK(skeleton.outputs[0].value == h.params.omega_a);
    CHECK(skeleton.outputs[1].value == h.params.omega_b);
}

TEST_CASE("relayed close carves the publisher fee from the device side") {
    Harness h;
    h.channel.update_state(60000);
    h.channel.update_state(80000);
    CommitmentKeys keys = h.channel.commitment_keys(3);
    MutualCloseOptions opts;
    opts.relay_via_pool = true;
    Transaction skeleton = build_mutual_close_skeleton(
        h.params, h.channel.current(), keys, h.channel.close_keys_a().pk,
        h.channel.close_keys_b().pk, h.funding_outpoint, opts);
    REQUIRE(skeleton.outputs.size() == 3);
    CHECK(skeleton.outputs[0].value == 80000 - 12000);
    CHECK(skeleton.outputs[1].value == 20000);
    CHECK(skeleton.outputs[2].value == 12000);
}

TEST_CASE("breach remedy claims a revoked device commitment in the window") {
    Harness h;
    h.channel.update_state(60000);
    h.channel.update_state(80000);  // state 2 revoked
    Transaction published = h.publish_commitment_a(2);
    std::int64_t conf = h.chain.height();

    CommitmentKeys keys = h.channel.commitment_keys(2);
    SecretKey sk_b_b = derive_keypair(kSeedB, {Party::GatewayB, KeyRole::StateB, 2, 0}).sk;
    const ChannelState& revoked = h.channel.state(2);

    Transaction remedy = build_breach_remedy(
        h.params, published, revoked, keys, sk_b_b, *revoked.revocation_secret_a,
        h.channel.close_keys_b().pk, WindowInfo{conf, h.chain.height()});
    CHECK(remedy.outputs[0].value == 48000);
    REQUIRE_FALSE(h.chain.submit(remedy));
    h.chain.mine_block();

    try {
        build_breach_remedy(h.params, published, h.channel.current(), keys, sk_b_b,
                            *revoked.revocation_secret_a, h.channel.close_keys_b().pk,
                            WindowInfo{conf, conf});
        FAIL("expected NotRevoked");
    } catch (const ChannelError& e) {
        CHECK(e.kind == ChannelErrorKind::NotRevoked);
    }
    try {
        build_breach_remedy(h.params, published, revoked, keys, sk_b_b,
                            *revoked.revocation_secret_a, h.channel.close_keys_b().pk,
                            WindowInfo{conf, conf + h.params.w});
        FAIL("expected WindowExpired");
    } catch (const ChannelError& e) {
        CHECK(e.kind == ChannelErrorKind::WindowExpired);
    }
}

TEST_CASE("recovery sweeps the published gateway commitment") {
    Harness h;
    h.channel.update_state(20000);
    h.channel.update_state(70000);  // state 2 = (20000, 80000) now revoked
    Transaction published = h.publish_commitment_b(2);
    std::int64_t conf = h.chain.height();

    CommitmentKeys keys = h.channel.commitment_keys(2);
    const ChannelState& revoked = h.channel.state(2);
    SecretKey sk_a_b = derive_keypair(kSeedA, {Party::DeviceA, KeyRole::StateB, 2, 0}).sk;
    SecretKey wd = derive_keypair(pool_seed_from(kSeedA, kSeedB),
                                  {Party::ThirdPartyWatch, KeyRole::ThirdPartyA, 0, 1}).sk;

    Transaction recovery = build_recovery_tx(
        h.params, published, revoked, keys, sk_a_b, *revoked.revocation_secret_b,
        h.channel.recovery_keys_a(2).pk, 1, wd, WindowInfo{conf, h.chain.height()});
    REQUIRE(recovery.inputs.size() == 2);
    REQUIRE(recovery.outputs.size() == 3);
    CHECK(recovery.outputs[0].value == 100000 - 12000 - 12000);
    CHECK(recovery.outputs[1].value == 12000);
    CHECK(recovery.outputs[2].value == 12000);
    REQUIRE_FALSE(h.chain.submit(recovery));
    h.chain.mine_block();

    SECTION("member index must address the watchdog pool") {
        try {
            build_recovery_tx(h.params, published, revoked, keys, sk_a_b,
                              *revoked.revocation_secret_b, h.channel.recovery_keys_a(2).pk,
                              7, wd, WindowInfo{conf, conf});
            FAIL("expected BadMemberIndex");
        } catch (const ChannelError& e) {
            CHECK(e.kind == ChannelErrorKind::BadMemberIndex);
        }
    }
}

TEST_CASE("recovery without the watchdog signature fails validation") {
    Harness h;
    h.channel.update_state(20000);
    h.channel.update_state(70000);
    Transaction published = h.publish_commitment_b(2);

    CommitmentKeys keys = h.channel.commitment_keys(2);
    const ChannelState& revoked = h.channel.state(2);
    SecretKey sk_a_b = derive_keypair(kSeedA, {Party::DeviceA, KeyRole::StateB, 2, 0}).sk;

    Transaction recovery =
        build_recovery_skeleton(h.params, published, keys, h.channel.recovery_keys_a(2).pk, 0);
    // Device signs with its own key where the watchdog signature belongs.
    Digest32 digest = signing_digest(recovery, 0);
    Signature fake_wd = sign(sk_a_b, {digest.data(), 32});
    recovery = complete_recovery_tx(std::move(recovery), keys, sk_a_b,
                                    *revoked.revocation_secret_b, fake_wd);
    auto err = h.chain.validate(recovery);
    REQUIRE(err);
    CHECK(err->kind == ValidationErrorKind::ScriptInvalid);
}

TEST_CASE("only the named party can complete its commitment") {
    Harness h;
    h.channel.update_state(60000);
    CommitmentPair pair = h.pair_for(2);

    // The gateway tries to publish the device's commitment using its own
    // signature for both halves.
    Digest32 digest = signing_digest(pair.tx_a, 0);
    Signature gateway_sig = sign(h.channel.funding_keys_b().sk, {digest.data(), 32});
    Transaction forged =
        complete_funding_spend(pair.tx_a, h.funding.redeem, gateway_sig, pair.sig_b_for_tx_a);
    auto err = h.chain.validate(forged);
    REQUIRE(err);
    CHECK(err->kind == ValidationErrorKind::ScriptInvalid);

    // Completed by the right party it validates.
    Signature device_sig = sign(h.channel.funding_keys_a().sk, {digest.data(), 32});
    Transaction genuine =
        complete_funding_spend(pair.tx_a, h.funding.redeem, device_sig, pair.sig_b_for_tx_a);
    CHECK_FALSE(h.chain.validate(genuine).has_value());
}

TEST_CASE("commitments preserve the channel total across random updates") {
    std::mt19937_64 rng(99);
    Harness h;
    for (int round = 0; round < 10; ++round) {
        Satoshi target = static_cast<Satoshi>(rng() % (h.params.capacity() + 1));
        auto [state, msgs] = h.channel.update_state(target);
        (void)msgs;
        CHECK(state.balance_a + state.balance_b == h.params.capacity());
        if (state.balance_a != 0 && state.balance_a < h.params.sigma1) continue;
        CommitmentPair pair = h.pair_for(state.index);
        Satoshi total_a = 0, total_b = 0;
        for (const TxOutput& o : pair.tx_a.outputs) total_a += o.value;
        for (const TxOutput& o : pair.tx_b.outputs) total_b += o.value;
        CHECK(total_a == h.params.capacity());
        CHECK(total_b == h.params.capacity());
    }
}

TEST_CASE("fee bounds demand strict dominance over the collusion share") {
    ChannelParams p = fixture_params();
    auto state = [](std::uint32_t i, Satoshi a) {
        return ChannelState{i, a, 100000 - a, false, {}, {}};
    };
    std::vector<ChannelState> states{state(1, 60000), state(2, 80000), state(3, 30000)};

    FeeBounds bounds = check_fee_bounds(p, states);
    CHECK(bounds.sigma1_min == Rational(10000));
    CHECK(bounds.gamma1_min == Rational(10000));
    CHECK(bounds.ok);  // 12000 > 10000

    p.sigma1 = 10000;
    CHECK_FALSE(check_fee_bounds(p, states).ok);  // strict inequality

    p.sigma1 = 12000;
    std::vector<ChannelState> single{state(1, 60000)};
    FeeBounds zero = check_fee_bounds(p, single);
    CHECK(zero.sigma1_min == Rational(0));
    CHECK(zero.ok);

    CHECK_THROWS_AS(check_fee_bounds(p, {}), ChannelError);
}

TEST_CASE("channel parameter validation") {
    ChannelParams p = fixture_params();
    p.sigma1 = 60000;
    p.gamma1 = 40000;  // sum equals capacity
    CHECK_THROWS_AS(p.validate(), ChannelError);
    p = fixture_params();
    p.w = 0;
    CHECK_THROWS_AS(p.validate(), ChannelError);
    p = fixture_params();
    p.k1 = 0;
    CHECK_THROWS_AS(p.validate(), ChannelError);
}
