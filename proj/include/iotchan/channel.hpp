#pragma once

#include <boost/rational.hpp>

#include "iotchan/ledger.hpp"

namespace iotchan {

using Rational = boost::rational<long long>;

enum class ChannelErrorKind {
    ParamsInvalid,
    InsufficientFunds,
    StateExhausted,
    BudgetExceeded,
    ChannelClosed,
    BalanceOutOfRange,
    MissingSignature,
    WindowExpired,
    NotRevoked,
    BadMemberIndex,
    EmptyStates,
};

struct ChannelError : std::runtime_error {
    ChannelErrorKind kind;
    ChannelError(ChannelErrorKind k, const std::string& what)
        : std::runtime_error(what), kind(k) {}
};

struct ChannelParams {
    Satoshi omega_a = 0;      // device-side funding
    Satoshi omega_b = 0;      // gateway-side funding
    std::int64_t w = 6;       // revocation window in blocks
    int k1 = 1;               // publisher pool size
    int k2 = 1;               // watchdog pool size
    Satoshi sigma1 = 0;       // publisher fee
    Satoshi gamma1 = 0;       // watchdog fee
    std::uint32_t max_states = 1024;

    Satoshi capacity() const { return omega_a + omega_b; }

    void validate() const {
        if (omega_a < 0 || omega_b < 0 || sigma1 < 0 || gamma1 < 0)
            throw ChannelError(ChannelErrorKind::ParamsInvalid, "negative channel value");
        if (capacity() > kMaxMoney)
            throw ChannelError(ChannelErrorKind::ParamsInvalid, "capacity exceeds money range");
        if (w < 1) throw ChannelError(ChannelErrorKind::ParamsInvalid, "w must be >= 1");
        if (k1 < 1 || k1 > kMaxMultisigKeys || k2 < 1 || k2 > kMaxMultisigKeys)
            throw ChannelError(ChannelErrorKind::ParamsInvalid, "pool size out of range");
        if (sigma1 + gamma1 >= capacity())
            throw ChannelError(ChannelErrorKind::ParamsInvalid,
                               "fees must leave room in the channel");
        if (max_states < 1)
            throw ChannelError(ChannelErrorKind::ParamsInvalid, "max_states must be >= 1");
    }
};

struct ChannelState {
    std::uint32_t index = 1;
    Satoshi balance_a = 0;
    Satoshi balance_b = 0;
    bool revoked = false;
    // Counterparty revocation-slot secrets, exchanged when the state is
    // superseded. revoked implies both are present.
    std::optional<SecretKey> revocation_secret_a;
    std::optional<SecretKey> revocation_secret_b;
};

// ---------------------------------------------------------------------------
// Key schedule.
// ---------------------------------------------------------------------------

struct StateSlotKeys {
    PublicKey a;  // CSV self-claim
    PublicKey b;  // direct payment on the counterparty's commitment
    PublicKey c;  // revocation slot
};

inline KeyPath slot_path(Party party, KeyRole slot, std::uint32_t state) {
    return KeyPath{party, slot, state, 0};
}

inline StateSlotKeys derive_state_slots(const Digest32& seed, Party party,
                                        std::uint32_t state) {
    return StateSlotKeys{
        derive_keypair(seed, slot_path(party, KeyRole::StateA, state)).pk,
        derive_keypair(seed, slot_path(party, KeyRole::StateB, state)).pk,
        derive_keypair(seed, slot_path(party, KeyRole::StateC, state)).pk,
    };
}

inline std::vector<PublicKey> derive_pool_keys(const Digest32& seed, Party pool_party,
                                               int members) {
    std::vector<PublicKey> keys;
    keys.reserve(static_cast<std::size_t>(members));
    for (int i = 0; i < members; ++i)
        keys.push_back(derive_keypair(seed, KeyPath{pool_party, KeyRole::ThirdPartyA, 0,
                                                    static_cast<std::uint16_t>(i)})
                           .pk);
    return keys;
}

/// Everything public needed to reconstruct one state's commitment pair.
struct CommitmentKeys {
    PublicKey funding_a, funding_b;
    StateSlotKeys slots_a, slots_b;
    std::vector<PublicKey> publisher_pool;
    std::vector<PublicKey> watchdog_pool;
};

// ---------------------------------------------------------------------------
// Funding (transaction 1).
// ---------------------------------------------------------------------------

struct SeedInput {
    OutPoint outpoint;
    Satoshi value = 0;
    PublicKey owner;  // P2PKH owner, also the change address
};

struct SpendableSeed {
    OutPoint outpoint;
    Satoshi value = 0;
    Keypair keys;  // P2PKH owner of the seed output
};

struct FundingBuild {
    Transaction tx;
    Script redeem;  // 2-of-2 multisig behind the P2SH channel output
    std::uint32_t channel_output_index = 0;
};

/// Unsigned funding transaction. Deterministic in its arguments, so both
/// parties construct bit-identical skeletons and sign their own inputs
/// independently (inputs are ordered device first, then gateway).
inline FundingBuild build_funding_skeleton(const ChannelParams& params,
                                           const std::vector<SeedInput>& inputs_a,
                                           const std::vector<SeedInput>& inputs_b,
                                           const PublicKey& pk_a_ft,
                                           const PublicKey& pk_b_ft,
                                           Satoshi miner_fee = 0) {
    params.validate();
    if (miner_fee < 0)
        throw ChannelError(ChannelErrorKind::ParamsInvalid, "negative miner fee");

    Satoshi sum_a = 0, sum_b = 0;
    for (const auto& s : inputs_a) sum_a += s.value;
    for (const auto& s : inputs_b) sum_b += s.value;
    Satoshi surplus_a = sum_a - params.omega_a;
    Satoshi surplus_b = sum_b - params.omega_b;
    if (surplus_a < 0 || surplus_b < 0)
        throw ChannelError(ChannelErrorKind::InsufficientFunds,
                           "inputs do not cover the agreed channel funding");
    // Miner fee comes out of surplus, device side first.
    Satoshi fee_a = std::min(miner_fee, surplus_a);
    Satoshi fee_b = miner_fee - fee_a;
    if (surplus_b < fee_b)
        throw ChannelError(ChannelErrorKind::InsufficientFunds,
                           "inputs do not cover the miner fee");

    FundingBuild build;
    build.redeem = multisig_2of2_redeem(pk_a_ft, pk_b_ft);
    build.tx.outputs.push_back(TxOutput{params.capacity(), p2sh_lock(build.redeem)});
    build.channel_output_index = 0;
    if (Satoshi change = surplus_a - fee_a; change > 0)
        build.tx.outputs.push_back(TxOutput{change, p2pkh_lock(inputs_a.front().owner)});
    if (Satoshi change = surplus_b - fee_b; change > 0)
        build.tx.outputs.push_back(TxOutput{change, p2pkh_lock(inputs_b.front().owner)});

    for (const auto& s : inputs_a) build.tx.inputs.push_back(TxInput{s.outpoint, {}, 0});
    for (const auto& s : inputs_b) build.tx.inputs.push_back(TxInput{s.outpoint, {}, 0});
    return build;
}

inline FundingBuild build_funding_tx(const ChannelParams& params,
                                     const std::vector<SpendableSeed>& inputs_a,
                                     const std::vector<SpendableSeed>& inputs_b,
                                     const PublicKey& pk_a_ft, const PublicKey& pk_b_ft,
                                     Satoshi miner_fee = 0) {
    std::vector<SeedInput> plain_a, plain_b;
    for (const auto& s : inputs_a) plain_a.push_back({s.outpoint, s.value, s.keys.pk});
    for (const auto& s : inputs_b) plain_b.push_back({s.outpoint, s.value, s.keys.pk});
    FundingBuild build =
        build_funding_skeleton(params, plain_a, plain_b, pk_a_ft, pk_b_ft, miner_fee);

    Digest32 digest = signing_digest(build.tx, 0);
    std::size_t i = 0;
    for (const auto& s : inputs_a)
        build.tx.inputs[i++].unlocking =
            p2pkh_unlock(sign(s.keys.sk, {digest.data(), digest.size()}), s.keys.pk);
    for (const auto& s : inputs_b)
        build.tx.inputs[i++].unlocking =
            p2pkh_unlock(sign(s.keys.sk, {digest.data(), digest.size()}), s.keys.pk);
    return build;
}

// ---------------------------------------------------------------------------
// Commitment pair (transactions 3 and 4).
// ---------------------------------------------------------------------------

namespace detail {

inline Opcode push_key(const PublicKey& pk) {
    return Opcode::push(Bytes(pk.bytes.begin(), pk.bytes.end()));
}

inline Opcode push_digest20(const Digest20& d) {
    return Opcode::push(Bytes(d.begin(), d.end()));
}

inline void append_csv_self_branch(Script& s, std::int64_t w, const PublicKey& pk_self) {
    if (w <= 16)
        s.push_back(Opcode::constant(static_cast<int>(w)));
    else
        s.push_back(Opcode::push(encode_number(static_cast<std::uint64_t>(w))));
    s.push_back(Opcode::simple(OpType::CheckSequenceVerify));
    s.push_back(Opcode::simple(OpType::Drop));
    s.push_back(Opcode::simple(OpType::Dup));
    s.push_back(Opcode::simple(OpType::Hash160));
    s.push_back(push_digest20(hash160(pk_self.view())));
    s.push_back(Opcode::simple(OpType::EqualVerify));
    s.push_back(Opcode::simple(OpType::CheckSig));
}

inline void append_pkh_check(Script& s, const PublicKey& pk, bool fail_fast) {
    s.push_back(Opcode::simple(OpType::Dup));
    s.push_back(Opcode::simple(OpType::Hash160));
    s.push_back(push_digest20(hash160(pk.view())));
    s.push_back(Opcode::simple(OpType::EqualVerify));
    s.push_back(Opcode::simple(fail_fast ? OpType::CheckSigVerify : OpType::CheckSig));
}

}  // namespace detail

/// Revocable output on the device's commitment: after W blocks the device can
/// claim with its state-a key; at any time the gateway's state-b key together
/// with the device's revealed state-c key sweeps it.
inline Script commitment_lock_a(std::int64_t w, const PublicKey& pk_a_state_a,
                                const PublicKey& pk_b_state_b,
                                const PublicKey& pk_a_state_c) {
    Script s{Opcode::simple(OpType::If)};
    detail::append_csv_self_branch(s, w, pk_a_state_a);
    s.push_back(Opcode::simple(OpType::Else));
    detail::append_pkh_check(s, pk_b_state_b, /*fail_fast=*/true);
    detail::append_pkh_check(s, pk_a_state_c, /*fail_fast=*/false);
    s.push_back(Opcode::simple(OpType::EndIf));
    return s;
}

/// Revocable output on the gateway's commitment. The punishment branch needs
/// any one watchdog key plus the gateway's revealed state-c key plus the
/// device's state-b key.
inline Script commitment_lock_b(std::int64_t w, const PublicKey& pk_b_state_a,
                                const std::vector<PublicKey>& watchdog_pool,
                                const PublicKey& pk_b_state_c,
                                const PublicKey& pk_a_state_b) {
    Script s{Opcode::simple(OpType::If)};
    detail::append_csv_self_branch(s, w, pk_b_state_a);
    s.push_back(Opcode::simple(OpType::Else));
    {
        Script pool = pool_multisig_lock(watchdog_pool);
        pool.back().type = OpType::CheckMultisigVerify;
        s.insert(s.end(), pool.begin(), pool.end());
    }
    detail::append_pkh_check(s, pk_b_state_c, /*fail_fast=*/true);
    detail::append_pkh_check(s, pk_a_state_b, /*fail_fast=*/false);
    s.push_back(Opcode::simple(OpType::EndIf));
    return s;
}

/// Device-side commitment (publishable by A). Outputs: the revocable claim on
/// A's balance net of the publisher fee, B's direct payment, and the
/// publisher-pool incentive. Zero-value outputs are omitted.
inline Transaction build_commitment_tx_a(const ChannelParams& params,
                                         const ChannelState& state,
                                         const CommitmentKeys& keys,
                                         const OutPoint& funding_outpoint) {
    Transaction tx;
    tx.inputs.push_back(TxInput{funding_outpoint, {}, 0});
    Satoshi pool_fee = params.sigma1;
    if (state.balance_a == 0) {
        pool_fee = 0;  // nothing to protect, nothing to publish
    } else if (state.balance_a < params.sigma1) {
        throw ChannelError(ChannelErrorKind::BudgetExceeded,
                           "device balance cannot fund the publisher fee");
    }
    if (Satoshi v = state.balance_a - pool_fee; v > 0)
        tx.outputs.push_back(TxOutput{
            v, commitment_lock_a(params.w, keys.slots_a.a, keys.slots_b.b, keys.slots_a.c)});
    if (state.balance_b > 0)
        tx.outputs.push_back(TxOutput{state.balance_b, p2pkh_lock(keys.slots_b.b)});
    if (pool_fee > 0)
        tx.outputs.push_back(TxOutput{pool_fee, pool_multisig_lock(keys.publisher_pool)});
    return tx;
}

/// Gateway-side commitment (publishable by B). The watchdog fee is carved out
/// later by the recovery transaction, not here, so honest closes never pay it.
inline Transaction build_commitment_tx_b(const ChannelParams& params,
                                         const ChannelState& state,
                                         const CommitmentKeys& keys,
                                         const OutPoint& funding_outpoint) {
    Transaction tx;
    tx.inputs.push_back(TxInput{funding_outpoint, {}, 0});
    if (state.balance_b > 0)
        tx.outputs.push_back(TxOutput{
            state.balance_b, commitment_lock_b(params.w, keys.slots_b.a, keys.watchdog_pool,
                                               keys.slots_b.c, keys.slots_a.b)});
    if (state.balance_a > 0)
        tx.outputs.push_back(TxOutput{state.balance_a, p2pkh_lock(keys.slots_a.b)});
    return tx;
}

struct CommitmentPair {
    std::uint32_t state_index = 1;
    Transaction tx_a;            // skeleton, funding input unsigned
    Transaction tx_b;
    Signature sig_b_for_tx_a{};  // partial signatures: each party holds the
    Signature sig_a_for_tx_b{};  // counterparty's half for its own transaction
};

/// Complete a transaction spending the funding output with both halves of the
/// 2-of-2 plus the revealed redeem script.
inline Transaction complete_funding_spend(Transaction tx, const Script& redeem,
                                          const Signature& sig_a, const Signature& sig_b,
                                          std::size_t input_index = 0) {
    Script unlock{Opcode::push(Bytes(sig_a.bytes.begin(), sig_a.bytes.end())),
                  Opcode::push(Bytes(sig_b.bytes.begin(), sig_b.bytes.end())),
                  Opcode::push(serialize_script(redeem))};
    tx.inputs.at(input_index).unlocking = std::move(unlock);
    return tx;
}

inline CommitmentPair build_commitment_pair(const ChannelParams& params,
                                            const ChannelState& state,
                                            const CommitmentKeys& keys,
                                            const OutPoint& funding_outpoint,
                                            const SecretKey& sk_a_ft,
                                            const SecretKey& sk_b_ft) {
    if (state.index > params.max_states)
        throw ChannelError(ChannelErrorKind::StateExhausted,
                           "state index exceeds max_states");
    if (state.balance_a + state.balance_b != params.capacity())
        throw ChannelError(ChannelErrorKind::BalanceOutOfRange,
                           "state does not preserve the channel total");
    CommitmentPair pair;
    pair.state_index = state.index;
    pair.tx_a = build_commitment_tx_a(params, state, keys, funding_outpoint);
    pair.tx_b = build_commitment_tx_b(params, state, keys, funding_outpoint);
    Digest32 da = signing_digest(pair.tx_a, 0);
    Digest32 db = signing_digest(pair.tx_b, 0);
    pair.sig_b_for_tx_a = sign(sk_b_ft, {da.data(), da.size()});
    pair.sig_a_for_tx_b = sign(sk_a_ft, {db.data(), db.size()});
    return pair;
}

// ---------------------------------------------------------------------------
// Mutual close (transaction 2).
// ---------------------------------------------------------------------------

struct MutualCloseOptions {
    Satoshi miner_fee = 0;       // deducted from the device side
    bool relay_via_pool = false; // add a publisher-pool fee output, also from A
};

inline Transaction build_mutual_close_skeleton(const ChannelParams& params,
                                               const ChannelState& state,
                                               const CommitmentKeys& keys,
                                               const PublicKey& pk_a_close,
                                               const PublicKey& pk_b_close,
                                               const OutPoint& funding_outpoint,
                                               const MutualCloseOptions& opts = {}) {
    Satoshi device_cut = opts.miner_fee + (opts.relay_via_pool ? params.sigma1 : 0);
    if (state.balance_a < device_cut)
        throw ChannelError(ChannelErrorKind::InsufficientFunds,
                           "device balance cannot cover close fees");
    Transaction tx;
    tx.inputs.push_back(TxInput{funding_outpoint, {}, 0});
    if (Satoshi v = state.balance_a - device_cut; v > 0)
        tx.outputs.push_back(TxOutput{v, p2pkh_lock(pk_a_close)});
    if (state.balance_b > 0)
        tx.outputs.push_back(TxOutput{state.balance_b, p2pkh_lock(pk_b_close)});
    if (opts.relay_via_pool && params.sigma1 > 0)
        tx.outputs.push_back(TxOutput{params.sigma1, pool_multisig_lock(keys.publisher_pool)});
    return tx;
}

inline Transaction build_mutual_close(const ChannelParams& params, const ChannelState& state,
                                      const CommitmentKeys& keys, const Script& redeem,
                                      const PublicKey& pk_a_close, const PublicKey& pk_b_close,
                                      const OutPoint& funding_outpoint,
                                      const std::optional<Signature>& sig_a,
                                      const std::optional<Signature>& sig_b,
                                      const MutualCloseOptions& opts = {}) {
    if (!sig_a || !sig_b)
        throw ChannelError(ChannelErrorKind::MissingSignature,
                           "mutual close requires both close signatures");
    Transaction tx = build_mutual_close_skeleton(params, state, keys, pk_a_close, pk_b_close,
                                                 funding_outpoint, opts);
    return complete_funding_spend(std::move(tx), redeem, *sig_a, *sig_b);
}

// ---------------------------------------------------------------------------
// Witnesses for the revocable outputs.
// ---------------------------------------------------------------------------

inline Script csv_claim_witness(const Signature& sig, const PublicKey& pk) {
    return {Opcode::push(Bytes(sig.bytes.begin(), sig.bytes.end())),
            Opcode::push(Bytes(pk.bytes.begin(), pk.bytes.end())), Opcode::constant(1)};
}

inline Script remedy_witness_a(const Signature& sig_a_c, const PublicKey& pk_a_c,
                               const Signature& sig_b_b, const PublicKey& pk_b_b) {
    return {Opcode::push(Bytes(sig_a_c.bytes.begin(), sig_a_c.bytes.end())),
            Opcode::push(Bytes(pk_a_c.bytes.begin(), pk_a_c.bytes.end())),
            Opcode::push(Bytes(sig_b_b.bytes.begin(), sig_b_b.bytes.end())),
            Opcode::push(Bytes(pk_b_b.bytes.begin(), pk_b_b.bytes.end())),
            Opcode::constant(0)};
}

inline Script recovery_witness_b(const Signature& sig_a_b, const PublicKey& pk_a_b,
                                 const Signature& sig_b_c, const PublicKey& pk_b_c,
                                 const Signature& sig_watchdog) {
    return {Opcode::push(Bytes(sig_a_b.bytes.begin(), sig_a_b.bytes.end())),
            Opcode::push(Bytes(pk_a_b.bytes.begin(), pk_a_b.bytes.end())),
            Opcode::push(Bytes(sig_b_c.bytes.begin(), sig_b_c.bytes.end())),
            Opcode::push(Bytes(pk_b_c.bytes.begin(), pk_b_c.bytes.end())),
            Opcode::push(Bytes(sig_watchdog.bytes.begin(), sig_watchdog.bytes.end())),
            Opcode::constant(0)};
}

// ---------------------------------------------------------------------------
// Breach remedy: the gateway punishes a revoked device-side commitment by
// sweeping its revocable output inside the W-block window.
// ---------------------------------------------------------------------------

struct WindowInfo {
    std::int64_t confirmation_height = 0;
    std::int64_t current_height = 0;
};

inline void check_window(const ChannelParams& params, const WindowInfo& window) {
    if (window.current_height - window.confirmation_height >= params.w)
        throw ChannelError(ChannelErrorKind::WindowExpired,
                           "revocation window has expired");
}

inline std::optional<std::uint32_t> find_output(const Transaction& tx, const Script& lock) {
    for (std::uint32_t i = 0; i < tx.outputs.size(); ++i)
        if (tx.outputs[i].locking == lock) return i;
    return std::nullopt;
}

inline Transaction build_breach_remedy(const ChannelParams& params,
                                       const Transaction& published_tx_a,
                                       const ChannelState& state, const CommitmentKeys& keys,
                                       const SecretKey& sk_b_state_b,
                                       const SecretKey& revealed_sk_a_state_c,
                                       const PublicKey& beneficiary,
                                       const WindowInfo& window, Satoshi miner_fee = 0) {
    if (!state.revoked)
        throw ChannelError(ChannelErrorKind::NotRevoked,
                           "breach remedy only applies to revoked states");
    check_window(params, window);
    Script lock = commitment_lock_a(params.w, keys.slots_a.a, keys.slots_b.b, keys.slots_a.c);
    auto index = find_output(published_tx_a, lock);
    if (!index)
        throw ChannelError(ChannelErrorKind::NotRevoked,
                           "published transaction has no matching revocable output");
    Satoshi value = published_tx_a.outputs[*index].value - miner_fee;
    if (value <= 0)
        throw ChannelError(ChannelErrorKind::InsufficientFunds,
                           "revocable output cannot cover the miner fee");

    Transaction tx;
    tx.inputs.push_back(TxInput{OutPoint{txid(published_tx_a), *index}, {}, 0});
    tx.outputs.push_back(TxOutput{value, p2pkh_lock(beneficiary)});

    Digest32 digest = signing_digest(tx, 0);
    Signature sig_c = sign(revealed_sk_a_state_c, {digest.data(), digest.size()});
    Signature sig_b = sign(sk_b_state_b, {digest.data(), digest.size()});
    tx.inputs[0].unlocking =
        remedy_witness_a(sig_c, keys.slots_a.c, sig_b, keys.slots_b.b);
    return tx;
}

// ---------------------------------------------------------------------------
// Recovery (transaction 5): watchdog-assisted punishment of a revoked
// gateway-side commitment. Sweeps the whole published commitment — the
// revocable output through the punishment branch and the device's direct
// output — into a fresh recovery key, paying the acting watchdog its fee and
// funding the publisher pool so the recovery itself gets broadcast.
// ---------------------------------------------------------------------------

/// Unsigned recovery sweep of a published gateway commitment: both its
/// outputs in, three outputs out (device recovery value, watchdog fee,
/// publisher-pool fee).
inline Transaction build_recovery_skeleton(const ChannelParams& params,
                                           const Transaction& published_tx_b,
                                           const CommitmentKeys& keys,
                                           const PublicKey& pk_a_recovery,
                                           int watchdog_member_index,
                                           Satoshi miner_fee = 0) {
    if (watchdog_member_index < 0 || watchdog_member_index >= params.k2)
        throw ChannelError(ChannelErrorKind::BadMemberIndex,
                           "watchdog member index out of range");
    Script revocable_lock = commitment_lock_b(params.w, keys.slots_b.a, keys.watchdog_pool,
                                              keys.slots_b.c, keys.slots_a.b);
    auto revocable_index = find_output(published_tx_b, revocable_lock);
    if (!revocable_index)
        throw ChannelError(ChannelErrorKind::NotRevoked,
                           "published transaction has no matching revocable output");
    Digest32 breached_id = txid(published_tx_b);

    Transaction tx;
    tx.inputs.push_back(TxInput{OutPoint{breached_id, *revocable_index}, {}, 0});
    Satoshi total = published_tx_b.outputs[*revocable_index].value;
    auto direct_index = find_output(published_tx_b, p2pkh_lock(keys.slots_a.b));
    if (direct_index) {
        tx.inputs.push_back(TxInput{OutPoint{breached_id, *direct_index}, {}, 0});
        total += published_tx_b.outputs[*direct_index].value;
    }

    Satoshi to_device = total - params.gamma1 - params.sigma1 - miner_fee;
    if (to_device <= 0)
        throw ChannelError(ChannelErrorKind::InsufficientFunds,
                           "breached value cannot cover the recovery fees");
    const PublicKey& watchdog_pk =
        keys.watchdog_pool[static_cast<std::size_t>(watchdog_member_index)];
    tx.outputs.push_back(TxOutput{to_device, p2pkh_lock(pk_a_recovery)});
    if (params.gamma1 > 0)
        tx.outputs.push_back(TxOutput{params.gamma1, p2pkh_lock(watchdog_pk)});
    if (params.sigma1 > 0)
        tx.outputs.push_back(TxOutput{params.sigma1, pool_multisig_lock(keys.publisher_pool)});
    return tx;
}

/// Fill the recovery witnesses: the punishment branch on the revocable input
/// plus the device's direct claim. All signatures cover the same blanked
/// digest, so they can be produced in any order.
inline Transaction complete_recovery_tx(Transaction tx, const CommitmentKeys& keys,
                                        const SecretKey& sk_a_state_b,
                                        const SecretKey& revealed_sk_b_state_c,
                                        const Signature& sig_watchdog) {
    Digest32 digest = signing_digest(tx, 0);
    Signature sig_ab = sign(sk_a_state_b, {digest.data(), digest.size()});
    Signature sig_bc = sign(revealed_sk_b_state_c, {digest.data(), digest.size()});
    tx.inputs[0].unlocking =
        recovery_witness_b(sig_ab, keys.slots_a.b, sig_bc, keys.slots_b.c, sig_watchdog);
    if (tx.inputs.size() > 1)
        tx.inputs[1].unlocking = p2pkh_unlock(sig_ab, keys.slots_a.b);
    return tx;
}

inline Transaction build_recovery_tx(const ChannelParams& params,
                                     const Transaction& published_tx_b,
                                     const ChannelState& state, const CommitmentKeys& keys,
                                     const SecretKey& sk_a_state_b,
                                     const SecretKey& revealed_sk_b_state_c,
                                     const PublicKey& pk_a_recovery,
                                     int watchdog_member_index,
                                     const SecretKey& sk_watchdog_member,
                                     const WindowInfo& window, Satoshi miner_fee = 0) {
    if (!state.revoked)
        throw ChannelError(ChannelErrorKind::NotRevoked,
                           "recovery only applies to revoked states");
    check_window(params, window);
    Transaction tx = build_recovery_skeleton(params, published_tx_b, keys, pk_a_recovery,
                                             watchdog_member_index, miner_fee);
    Digest32 digest = signing_digest(tx, 0);
    Signature sig_wd = sign(sk_watchdog_member, {digest.data(), digest.size()});
    return complete_recovery_tx(std::move(tx), keys, sk_a_state_b, revealed_sk_b_state_c,
                                sig_wd);
}

// ---------------------------------------------------------------------------
// Fee bounds.
// ---------------------------------------------------------------------------

struct FeeBounds {
    bool ok = false;
    Rational sigma1_min{0};
    Rational gamma1_min{0};
};

/// The collusion bounds over a set of states: the widest device-balance swing
/// divided by the pool size. Fees must exceed the bounds strictly.
inline FeeBounds check_fee_bounds(const ChannelParams& params,
                                  const std::vector<ChannelState>& states) {
    if (states.empty())
        throw ChannelError(ChannelErrorKind::EmptyStates, "no states to bound fees over");
    Satoshi lo = states.front().balance_a, hi = states.front().balance_a;
    for (const ChannelState& s : states) {
        lo = std::min(lo, s.balance_a);
        hi = std::max(hi, s.balance_a);
    }
    FeeBounds bounds;
    bounds.sigma1_min = Rational(hi - lo, params.k1);
    bounds.gamma1_min = Rational(hi - lo, params.k2);
    bounds.ok = Rational(params.sigma1) > bounds.sigma1_min &&
                Rational(params.gamma1) > bounds.gamma1_min;
    return bounds;
}

// ---------------------------------------------------------------------------
// Two-sided channel record: the shared view protocol tests drive directly.
// Per-party actors live in scenario.hpp and exchange explicit messages.
// ---------------------------------------------------------------------------

class Channel {
public:
    Channel(ChannelParams params, Digest32 seed_a, Digest32 seed_b, Digest32 pool_seed)
        : params_(params), seed_a_(seed_a), seed_b_(seed_b), pool_seed_(pool_seed) {
        params_.validate();
        states_.push_back(
            ChannelState{1, params_.omega_a, params_.omega_b, false, {}, {}});
    }

    const ChannelParams& params() const { return params_; }
    const std::vector<ChannelState>& states() const { return states_; }
    const ChannelState& current() const { return states_.back(); }
    const ChannelState& state(std::uint32_t index) const { return states_.at(index - 1); }
    bool is_open() const { return open_; }
    const Digest32& seed_a() const { return seed_a_; }
    const Digest32& seed_b() const { return seed_b_; }

    Keypair funding_keys_a() const {
        return derive_keypair(seed_a_, {Party::DeviceA, KeyRole::Funding, 0, 0});
    }
    Keypair funding_keys_b() const {
        return derive_keypair(seed_b_, {Party::GatewayB, KeyRole::Funding, 0, 0});
    }
    Keypair close_keys_a() const {
        return derive_keypair(seed_a_, {Party::DeviceA, KeyRole::Close, 0, 0});
    }
    Keypair close_keys_b() const {
        return derive_keypair(seed_b_, {Party::GatewayB, KeyRole::Close, 0, 0});
    }
    Keypair recovery_keys_a(std::uint32_t state) const {
        return derive_keypair(seed_a_, {Party::DeviceA, KeyRole::ThirdPartyRc, state, 0});
    }

    CommitmentKeys commitment_keys(std::uint32_t state) const {
        CommitmentKeys keys;
        keys.funding_a = funding_keys_a().pk;
        keys.funding_b = funding_keys_b().pk;
        keys.slots_a = derive_state_slots(seed_a_, Party::DeviceA, state);
        keys.slots_b = derive_state_slots(seed_b_, Party::GatewayB, state);
        keys.publisher_pool = derive_pool_keys(pool_seed_, Party::ThirdPartyPub, params_.k1);
        keys.watchdog_pool = derive_pool_keys(pool_seed_, Party::ThirdPartyWatch, params_.k2);
        return keys;
    }

    CommitmentPair commitment_pair(std::uint32_t state_index,
                                   const OutPoint& funding_outpoint) const {
        return build_commitment_pair(params_, state(state_index),
                                     commitment_keys(state_index), funding_outpoint,
                                     funding_keys_a().sk, funding_keys_b().sk);
    }

    struct RevocationMessages {
        std::uint32_t revoked_index = 0;
        SecretKey secret_a_c;  // device hands this to the gateway
        SecretKey secret_b_c;  // gateway hands this to the device
    };

    std::pair<ChannelState, RevocationMessages> update_state(Satoshi new_balance_a) {
        if (!open_)
            throw ChannelError(ChannelErrorKind::ChannelClosed, "channel is closed");
        if (new_balance_a < 0 || new_balance_a > params_.capacity())
            throw ChannelError(ChannelErrorKind::BalanceOutOfRange,
                               "balance outside channel capacity");
        if (states_.size() + 1 > params_.max_states)
            throw ChannelError(ChannelErrorKind::StateExhausted,
                               "channel ran out of pre-derivable states");
        ChannelState& old = states_.back();
        RevocationMessages msgs;
        msgs.revoked_index = old.index;
        msgs.secret_a_c =
            derive_keypair(seed_a_, slot_path(Party::DeviceA, KeyRole::StateC, old.index)).sk;
        msgs.secret_b_c =
            derive_keypair(seed_b_, slot_path(Party::GatewayB, KeyRole::StateC, old.index)).sk;
        old.revoked = true;
        old.revocation_secret_a = msgs.secret_a_c;
        old.revocation_secret_b = msgs.secret_b_c;

        ChannelState next{old.index + 1, new_balance_a,
                          params_.capacity() - new_balance_a, false, {}, {}};
        states_.push_back(next);
        return {next, msgs};
    }

    void mark_closed() { open_ = false; }

private:
    ChannelParams params_;
    Digest32 seed_a_, seed_b_, pool_seed_;
    std::vector<ChannelState> states_;
    bool open_ = true;
};

/// Pool key material is public setup data shared by both parties; deriving it
/// from the two master seeds keeps fixtures self-contained.
inline Digest32 pool_seed_from(const Digest32& seed_a, const Digest32& seed_b) {
    Bytes material;
    material.reserve(4 + seed_a.size() + seed_b.size());
    const char tag[] = {'p', 'o', 'o', 'l'};
    material.insert(material.end(), tag, tag + 4);
    material.insert(material.end(), seed_a.begin(), seed_a.end());
    material.insert(material.end(), seed_b.begin(), seed_b.end());
    return sha256(material);
}

}  // namespace iotchan
