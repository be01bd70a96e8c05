#pragma once

#include <variant>

#include "iotchan/channel.hpp"

namespace iotchan {

// ---------------------------------------------------------------------------
// Block-synchronous actor simulation. Four roles: the device (no ledger
// access, inbox only), the gateway, and the publisher and watchdog pools.
// Every message sent at tick t is readable at tick t+1; a block is mined at
// the end of every tick.
// ---------------------------------------------------------------------------

inline constexpr std::int64_t kCloseRelayTimeout = 6;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ScenarioTrace;

struct UnsettledError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class StrategyKind {
    Honest,
    PublishRevoked,
    ColludePublisher,
    ColludeWatchdog,
    WatchdogSilent,
    PublisherDrop,
};

struct Strategy {
    StrategyKind kind = StrategyKind::Honest;
    std::uint32_t state_index = 0;  // which revoked state to publish
    Satoshi bribe = 0;              // collusion offer

    static Strategy honest() { return {}; }
    static Strategy publish_revoked(std::uint32_t state) {
        return {StrategyKind::PublishRevoked, state, 0};
    }
    static Strategy collude_publisher(std::uint32_t state, Satoshi bribe) {
        return {StrategyKind::ColludePublisher, state, bribe};
    }
    static Strategy collude_watchdog(std::uint32_t state, Satoshi bribe) {
        return {StrategyKind::ColludeWatchdog, state, bribe};
    }

    bool operator==(const Strategy&) const = default;
};

struct ScenarioConfig {
    ChannelParams params;
    Digest32 seed_a{};
    Digest32 seed_b{};
    std::vector<Satoshi> updates;  // successive balance_a targets
    Strategy device;
    Strategy gateway;
    std::vector<Strategy> publishers;  // size k1 (or empty = all honest)
    std::vector<Strategy> watchdogs;   // size k2 (or empty = all honest)
    std::int64_t horizon = 200;
    Satoshi miner_fee = 0;  // applied to channel-resolution transactions
    bool relay_close = false;

    void validate() const {
        params.validate();
        if (horizon < 1) throw ConfigError("horizon must be positive");
        if (miner_fee < 0) throw ConfigError("miner fee must be non-negative");
        if (updates.size() + 1 > params.max_states)
            throw ConfigError("update schedule exceeds max_states");
        for (Satoshi b : updates)
            if (b < 0 || b > params.capacity())
                throw ConfigError("update target outside channel capacity");
        if (device.kind != StrategyKind::Honest &&
            device.kind != StrategyKind::PublishRevoked)
            throw ConfigError("device strategy must be honest or publish_revoked");
        if (gateway.kind == StrategyKind::WatchdogSilent ||
            gateway.kind == StrategyKind::PublisherDrop)
            throw ConfigError("gateway strategy cannot be a pool strategy");
        auto check_revoked_index = [&](const Strategy& s, const char* who) {
            if (s.kind == StrategyKind::PublishRevoked ||
                s.kind == StrategyKind::ColludePublisher ||
                s.kind == StrategyKind::ColludeWatchdog) {
                if (s.state_index < 1 || s.state_index > updates.size())
                    throw ConfigError(std::string(who) +
                                      " must publish a state revoked by the schedule");
            }
            if (s.kind == StrategyKind::ColludePublisher ||
                s.kind == StrategyKind::ColludeWatchdog) {
                if (s.bribe < 0) throw ConfigError("bribe must be non-negative");
                const int pool =
                    s.kind == StrategyKind::ColludePublisher ? params.k1 : params.k2;
                if (s.bribe % pool != 0)
                    throw ConfigError("bribe must split evenly across the pool");
            }
        };
        check_revoked_index(device, "device");
        check_revoked_index(gateway, "gateway");
        if (device.kind == StrategyKind::PublishRevoked &&
            gateway.kind != StrategyKind::Honest)
            throw ConfigError("only one party may deviate per scenario");
        auto check_pool = [&](const std::vector<Strategy>& pool, std::size_t size,
                              StrategyKind dos_kind, const char* who) {
            if (!pool.empty() && pool.size() != size)
                throw ConfigError(std::string(who) + " strategy list must match pool size");
            for (const Strategy& s : pool)
                if (s.kind != StrategyKind::Honest && s.kind != dos_kind)
                    throw ConfigError(std::string(who) +
                                      " members are honest or denial-of-service only");
        };
        check_pool(publishers, static_cast<std::size_t>(params.k1),
                   StrategyKind::PublisherDrop, "publisher");
        check_pool(watchdogs, static_cast<std::size_t>(params.k2),
                   StrategyKind::WatchdogSilent, "watchdog");
    }

    Strategy publisher_strategy(int i) const {
        return publishers.empty() ? Strategy::honest()
                                  : publishers[static_cast<std::size_t>(i)];
    }
    Strategy watchdog_strategy(int i) const {
        return watchdogs.empty() ? Strategy::honest()
                                 : watchdogs[static_cast<std::size_t>(i)];
    }
};

// ---------------------------------------------------------------------------
// Trace.
// ---------------------------------------------------------------------------

struct TraceEvent {
    std::int64_t tick = 0;
    std::string kind;
    std::string actor;
    nlohmann::ordered_json data;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["tick"] = tick;
        j["kind"] = kind;
        j["actor"] = actor;
        j["data"] = data;
        return j;
    }
};

struct FinalUtxo {
    OutPoint outpoint;
    Satoshi value = 0;
    Bytes locking;
    std::int64_t confirmation_height = 0;
};

struct SidePayment {
    std::string from;
    std::string to;
    Satoshi amount = 0;
};

struct PoolClaim {
    std::string member;  // actor label
    OutPoint outpoint;
};

struct ScenarioTrace {
    std::vector<TraceEvent> events;
    bool settled = false;
    std::string outcome;  // mutual_close | breach_recovered | breach_remedied | breach_swept
    std::int64_t final_height = 0;
    int on_chain_channel_txs = 0;
    std::uint32_t max_state_index = 1;
    std::vector<FinalUtxo> final_utxo;
    std::vector<PoolClaim> pool_claims;
    std::vector<SidePayment> side_payments;
    Satoshi total_fees = 0;
    Satoshi total_seeded = 0;
    nlohmann::ordered_json chain_dump;

    std::string to_jsonl() const {
        std::string out;
        for (const TraceEvent& e : events) {
            out += e.to_json().dump();
            out += '\n';
        }
        return out;
    }
};

struct HorizonExceeded : std::runtime_error {
    ScenarioTrace partial;
    HorizonExceeded(const std::string& what, ScenarioTrace trace)
        : std::runtime_error(what), partial(std::move(trace)) {}
};

/// The device's whole persistent footprint. Every key the device ever uses
/// re-derives from the master seed and the state counter; protocol material
/// received from others (public keys, partial signatures, revealed revocation
/// secrets) is counterparty data, not device key storage.
struct DeviceCore {
    Digest32 master_seed{};
    std::uint32_t state_index = 1;
    Satoshi balance_a = 0;
    Satoshi balance_b = 0;

    Bytes serialize() const {
        Bytes out(master_seed.begin(), master_seed.end());
        append_u32le(out, state_index);
        append_u64le(out, static_cast<std::uint64_t>(balance_a));
        append_u64le(out, static_cast<std::uint64_t>(balance_b));
        return out;
    }
};

struct AuditViolation {
    TraceEvent event;
};

/// The device must never observe chain state directly; everything it knows
/// arrives through its inbox. Chain reads are logged per actor, so a trace
/// with any device-attributed read is a violation.
inline std::optional<AuditViolation> device_interface_audit(const ScenarioTrace& trace) {
    for (const TraceEvent& e : trace.events)
        if (e.kind == "chain_read" && e.actor == "device") return AuditViolation{e};
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Messages.
// ---------------------------------------------------------------------------

namespace msg {

struct OpenRequest {
    std::optional<SeedInput> input;  // absent when the party funds nothing
    PublicKey pk_ft, pk_close;
    StateSlotKeys slots1;
};
struct OpenAck {
    std::optional<SeedInput> input;
    PublicKey pk_ft, pk_close;
    StateSlotKeys slots1;
};
struct OpenCommit {
    Signature funding_sig;  // device's signature on its funding inputs
};
struct ChannelOpen {
    OutPoint funding_outpoint;
    Signature sig_b_for_tx_a1;
};
struct StateAck {
    std::uint32_t index = 1;
    Signature sig_a_for_tx_b;
};
struct UpdateRequest {
    std::uint32_t new_index = 2;
    Satoshi new_balance_a = 0;
    StateSlotKeys slots_a;
};
struct UpdateAck {
    std::uint32_t new_index = 2;
    StateSlotKeys slots_b;
    Signature sig_b_for_tx_a;
    SecretKey revoke_b_c_prev;  // gateway's slot-c secret for the superseded state
};
struct UpdateDone {
    std::uint32_t new_index = 2;
    Signature sig_a_for_tx_b;
    SecretKey revoke_a_c_prev;
};
struct CloseRequest {
    Signature funding_sig_a;
    bool relay = false;
};
struct CloseAck {
    Signature funding_sig_b;
};
struct WatchRequest {
    OutPoint funding_outpoint;
};
struct Alert {
    Transaction spending_tx;
    std::int64_t confirmation_height = 0;
    std::int64_t current_height = 0;
    int member_index = 0;
};
struct CosignRequest {
    Transaction unsigned_tx;
};
struct CosignResponse {
    Signature sig;
    int member_index = 0;
};
struct PublishRequest {
    Transaction tx;
    std::string label;
};
struct BribeOffer {
    Satoshi amount = 0;
};

using Payload =
    std::variant<OpenRequest, OpenAck, OpenCommit, ChannelOpen, StateAck, UpdateRequest,
                 UpdateAck, UpdateDone, CloseRequest, CloseAck, WatchRequest, Alert,
                 CosignRequest, CosignResponse, PublishRequest, BribeOffer>;

inline const char* kind_name(const Payload& p) {
    static constexpr const char* names[] = {
        "open_request", "open_ack",   "open_commit",    "channel_open",
        "state_ack",    "update_request", "update_ack", "update_done",
        "close_request", "close_ack", "watch_request",  "alert",
        "cosign_request", "cosign_response", "publish_request", "bribe_offer"};
    return names[p.index()];
}

}  // namespace msg

struct Message {
    std::string from;
    std::string to;
    msg::Payload payload;
};

// ---------------------------------------------------------------------------
// Runner.
// ---------------------------------------------------------------------------

class ScenarioRunner {
public:
    explicit ScenarioRunner(ScenarioConfig config) : cfg_(std::move(config)) {
        cfg_.validate();
        pool_seed_ = pool_seed_from(cfg_.seed_a, cfg_.seed_b);
    }

    ScenarioTrace run() {
        init_actors();
        genesis();
        for (tick_ = 2; tick_ <= cfg_.horizon; ++tick_) {
            deliver_messages();
            chain_readers_this_tick_.clear();
            act_device();
            act_gateway();
            for (int i = 0; i < cfg_.params.k1; ++i) act_publisher(i);
            for (int i = 0; i < cfg_.params.k2; ++i) act_watchdog(i);
            finalize_bribes();
            mine();
            if (check_settled()) break;
        }
        if (!trace_.settled) {
            finish_trace();
            throw HorizonExceeded("scenario did not settle within the horizon",
                                  std::move(trace_));
        }
        finish_trace();
        return std::move(trace_);
    }

private:
    // --- helpers -----------------------------------------------------------

    static std::string publisher_label(int i) { return "publisher_" + std::to_string(i); }
    static std::string watchdog_label(int i) { return "watchdog_" + std::to_string(i); }

    void event(const std::string& kind, const std::string& actor,
               nlohmann::ordered_json data = nlohmann::ordered_json::object()) {
        trace_.events.push_back(TraceEvent{tick_, kind, actor, std::move(data)});
    }

    void send(const std::string& from, const std::string& to, msg::Payload payload) {
        event("message", from,
              {{"to", to}, {"type", msg::kind_name(payload)}});
        outbox_.push_back(Message{from, to, std::move(payload)});
    }

    void deliver_messages() {
        inboxes_.clear();
        for (Message& m : outbox_) inboxes_[m.to].push_back(std::move(m));
        outbox_.clear();
    }

    std::vector<Message> take_inbox(const std::string& actor) {
        auto it = inboxes_.find(actor);
        if (it == inboxes_.end()) return {};
        std::vector<Message> inbox = std::move(it->second);
        inboxes_.erase(it);
        return inbox;
    }

    // Chain access for every actor except the device; each read is logged
    // once per actor per tick so the isolation audit has evidence.
    const Chain& read_chain(const std::string& actor) {
        if (chain_readers_this_tick_.insert(actor).second)
            event("chain_read", actor);
        return chain_;
    }

    bool submit_tx(const std::string& actor, const Transaction& tx,
                   const std::string& label) {
        ValidationResult err = chain_.submit(tx);
        Digest32 id = txid(tx);
        if (err) {
            event("submit_rejected", actor,
                  {{"label", label},
                   {"txid", to_hex({id.data(), id.size()})},
                   {"error", to_string(err->kind)},
                   {"detail", err->detail}});
            return false;
        }
        event("submit", actor,
              {{"label", label}, {"txid", to_hex({id.data(), id.size()})}});
        submitted_labels_[id] = label;
        return true;
    }

    void mine() {
        Chain::MineResult result = chain_.mine_block();
        for (const Digest32& id : result.block.txids) {
            auto it = submitted_labels_.find(id);
            const std::string label = it == submitted_labels_.end() ? "?" : it->second;
            event("confirm", "chain",
                  {{"txid", to_hex({id.data(), id.size()})},
                   {"label", label},
                   {"height", result.block.height}});
            if (label != "seed" && label != "?") ++trace_.on_chain_channel_txs;
        }
        for (const auto& [id, why] : result.dropped)
            event("drop", "chain",
                  {{"txid", to_hex({id.data(), id.size()})},
                   {"reason", to_string(why.kind)},
                   {"detail", why.detail}});
    }

    // --- setup -------------------------------------------------------------

    void init_actors() {
        device_.seed = cfg_.seed_a;
        device_.strategy = cfg_.device;
        device_.balance_a = cfg_.params.omega_a;
        device_.balance_b = cfg_.params.omega_b;
        device_.pending_updates.assign(cfg_.updates.begin(), cfg_.updates.end());
        device_.publisher_pool = derive_pool_keys(pool_seed_, Party::ThirdPartyPub,
                                                  cfg_.params.k1);
        device_.watchdog_pool = derive_pool_keys(pool_seed_, Party::ThirdPartyWatch,
                                                 cfg_.params.k2);

        gateway_.seed = cfg_.seed_b;
        gateway_.strategy = cfg_.gateway;
        gateway_.expected_updates = cfg_.updates.size();
        gateway_.publisher_pool = device_.publisher_pool;
        gateway_.watchdog_pool = device_.watchdog_pool;

        publishers_.clear();
        for (int i = 0; i < cfg_.params.k1; ++i) {
            PoolMember m;
            m.strategy = cfg_.publisher_strategy(i);
            m.keys = derive_keypair(pool_seed_, {Party::ThirdPartyPub, KeyRole::ThirdPartyA,
                                                 0, static_cast<std::uint16_t>(i)});
            publishers_.push_back(std::move(m));
        }
        watchdogs_.clear();
        for (int i = 0; i < cfg_.params.k2; ++i) {
            PoolMember m;
            m.strategy = cfg_.watchdog_strategy(i);
            m.keys = derive_keypair(pool_seed_, {Party::ThirdPartyWatch,
                                                 KeyRole::ThirdPartyA, 0,
                                                 static_cast<std::uint16_t>(i)});
            watchdogs_.push_back(std::move(m));
        }
    }

    // Exogenous seed outputs for both parties, confirmed in block 1. The
    // parties learn their own outpoints as bootstrap data, not by reading
    // the chain.
    void genesis() {
        tick_ = 1;
        Transaction coinbase;
        std::uint32_t index = 0;
        if (cfg_.params.omega_a > 0) {
            coinbase.outputs.push_back(
                TxOutput{cfg_.params.omega_a, p2pkh_lock(device_keys(KeyRole::Funding).pk)});
            device_.seed_input = SeedInput{OutPoint{}, cfg_.params.omega_a,
                                           device_keys(KeyRole::Funding).pk};
            device_.seed_index = index++;
        }
        if (cfg_.params.omega_b > 0) {
            coinbase.outputs.push_back(TxOutput{
                cfg_.params.omega_b, p2pkh_lock(gateway_keys(KeyRole::Funding).pk)});
            gateway_.seed_input = SeedInput{OutPoint{}, cfg_.params.omega_b,
                                            gateway_keys(KeyRole::Funding).pk};
            gateway_.seed_index = index++;
        }
        Digest32 id = txid(coinbase);
        if (device_.seed_input)
            device_.seed_input->outpoint = OutPoint{id, device_.seed_index};
        if (gateway_.seed_input)
            gateway_.seed_input->outpoint = OutPoint{id, gateway_.seed_index};
        event("seed", "chain", {{"txid", to_hex({id.data(), id.size()})}});
        submit_tx("chain", coinbase, "seed");
        mine();
    }

    Keypair device_keys(KeyRole role, std::uint32_t state = 0) const {
        return derive_keypair(cfg_.seed_a, {Party::DeviceA, role, state, 0});
    }
    Keypair gateway_keys(KeyRole role, std::uint32_t state = 0) const {
        return derive_keypair(cfg_.seed_b, {Party::GatewayB, role, state, 0});
    }

    CommitmentKeys keys_for_state(std::uint32_t state, const StateSlotKeys& slots_a,
                                  const StateSlotKeys& slots_b) const {
        CommitmentKeys keys;
        keys.funding_a = device_.pk_ft_self;
        keys.funding_b = gateway_.pk_ft_self;
        keys.slots_a = slots_a;
        keys.slots_b = slots_b;
        keys.publisher_pool = device_.publisher_pool;
        keys.watchdog_pool = device_.watchdog_pool;
        return keys;
    }

    // --- device ------------------------------------------------------------

    struct DeviceState {
        // Persistable core: the master seed plus the state counter and
        // balances; every own key re-derives from these.
        Digest32 seed{};
        std::uint32_t state_index = 1;
        Satoshi balance_a = 0;
        Satoshi balance_b = 0;

        Strategy strategy;
        enum class Phase {
            Init,
            WaitOpenAck,
            WaitChannelOpen,
            Active,
            WaitUpdateAck,
            WaitCloseAck,
            Idle,
        } phase = Phase::Init;

        std::optional<SeedInput> seed_input;
        std::uint32_t seed_index = 0;
        PublicKey pk_ft_self, pk_close_self;
        std::optional<SeedInput> gateway_input;
        PublicKey pk_ft_b, pk_close_b;
        std::optional<OutPoint> funding_outpoint;
        std::vector<PublicKey> publisher_pool, watchdog_pool;

        std::map<std::uint32_t, StateSlotKeys> gateway_slots;
        std::map<std::uint32_t, Signature> sig_b_for_tx_a;
        std::map<std::uint32_t, SecretKey> revealed_b_secrets;
        std::map<std::uint32_t, std::pair<Satoshi, Satoshi>> state_balances;

        std::vector<Satoshi> pending_updates;
        Satoshi pending_balance = 0;  // target of the in-flight update
        bool close_after_updates = true;
        std::set<Digest32> handled_breaches;
        std::optional<Transaction> pending_recovery;
        std::uint32_t pending_recovery_state = 0;
        std::optional<Transaction> close_tx;  // relay path
        bool breach_published = false;
    };

    StateSlotKeys device_slots(std::uint32_t state) const {
        return derive_state_slots(cfg_.seed_a, Party::DeviceA, state);
    }

    Transaction device_tx_a_skeleton(std::uint32_t state) {
        ChannelState s{state, device_.state_balances.at(state).first,
                       device_.state_balances.at(state).second, false, {}, {}};
        return build_commitment_tx_a(
            cfg_.params, s,
            keys_for_state(state, device_slots(state), device_.gateway_slots.at(state)),
            *device_.funding_outpoint);
    }

    Transaction device_tx_b_skeleton(std::uint32_t state) {
        ChannelState s{state, device_.state_balances.at(state).first,
                       device_.state_balances.at(state).second, false, {}, {}};
        return build_commitment_tx_b(
            cfg_.params, s,
            keys_for_state(state, device_slots(state), device_.gateway_slots.at(state)),
            *device_.funding_outpoint);
    }

    Transaction device_close_skeleton() {
        ChannelState s{device_.state_index, device_.balance_a, device_.balance_b, false,
                       {}, {}};
        MutualCloseOptions opts;
        opts.miner_fee = cfg_.miner_fee;
        opts.relay_via_pool = cfg_.relay_close;
        return build_mutual_close_skeleton(
            cfg_.params, s,
            keys_for_state(device_.state_index, device_slots(device_.state_index),
                           device_.gateway_slots.at(device_.state_index)),
            device_.pk_close_self, device_.pk_close_b, *device_.funding_outpoint, opts);
    }

    void device_record_state(std::uint32_t index, Satoshi balance_a) {
        device_.state_index = index;
        device_.balance_a = balance_a;
        device_.balance_b = cfg_.params.capacity() - balance_a;
        device_.state_balances[index] = {device_.balance_a, device_.balance_b};
        event("state", "device",
              {{"index", index},
               {"balance_a", device_.balance_a},
               {"balance_b", device_.balance_b}});
    }

    void act_device() {
        auto inbox = take_inbox("device");
        if (device_.phase == DeviceState::Phase::Init) {
            device_.pk_ft_self = device_keys(KeyRole::Funding).pk;
            device_.pk_close_self = device_keys(KeyRole::Close).pk;
            device_.state_balances[1] = {cfg_.params.omega_a, cfg_.params.omega_b};
            send("device", "gateway",
                 msg::OpenRequest{device_.seed_input, device_.pk_ft_self,
                                  device_.pk_close_self, device_slots(1)});
            device_.phase = DeviceState::Phase::WaitOpenAck;
            return;
        }
        for (Message& m : inbox) device_handle(m);
    }

    void device_handle(Message& m) {
        std::visit(
            [&](auto&& payload) {
                using T = std::decay_t<decltype(payload)>;
                if constexpr (std::is_same_v<T, msg::OpenAck>) {
                    device_.gateway_input = payload.input;
                    device_.pk_ft_b = payload.pk_ft;
                    device_.pk_close_b = payload.pk_close;
                    device_.gateway_slots[1] = payload.slots1;
                    // Sign the funding skeleton; the gateway completes it.
                    FundingBuild skeleton = funding_skeleton_for(device_);
                    Digest32 digest = signing_digest(skeleton.tx, 0);
                    Signature sig =
                        sign(device_keys(KeyRole::Funding).sk, {digest.data(), 32});
                    send("device", "gateway", msg::OpenCommit{sig});
                    device_.phase = DeviceState::Phase::WaitChannelOpen;
                } else if constexpr (std::is_same_v<T, msg::ChannelOpen>) {
                    device_.funding_outpoint = payload.funding_outpoint;
                    device_.sig_b_for_tx_a[1] = payload.sig_b_for_tx_a1;
                    Transaction tx_b1 = device_tx_b_skeleton(1);
                    Digest32 digest = signing_digest(tx_b1, 0);
                    send("device", "gateway",
                         msg::StateAck{1, sign(device_keys(KeyRole::Funding).sk,
                                               {digest.data(), 32})});
                    for (int i = 0; i < cfg_.params.k2; ++i)
                        send("device", watchdog_label(i),
                             msg::WatchRequest{payload.funding_outpoint});
                    device_.phase = DeviceState::Phase::Active;
                    device_advance();
                } else if constexpr (std::is_same_v<T, msg::UpdateAck>) {
                    const std::uint32_t j = payload.new_index;
                    device_.gateway_slots[j] = payload.slots_b;
                    device_.sig_b_for_tx_a[j] = payload.sig_b_for_tx_a;
                    device_.revealed_b_secrets[j - 1] = payload.revoke_b_c_prev;
                    device_record_state(j, device_.pending_balance);
                    Transaction tx_b = device_tx_b_skeleton(j);
                    Digest32 digest = signing_digest(tx_b, 0);
                    SecretKey revoke =
                        derive_keypair(cfg_.seed_a,
                                       slot_path(Party::DeviceA, KeyRole::StateC, j - 1))
                            .sk;
                    send("device", "gateway",
                         msg::UpdateDone{j,
                                         sign(device_keys(KeyRole::Funding).sk,
                                              {digest.data(), 32}),
                                         revoke});
                    device_.phase = DeviceState::Phase::Active;
                    device_advance();
                } else if constexpr (std::is_same_v<T, msg::CloseAck>) {
                    // Relay path: assemble the close and hand it to the pool.
                    Transaction close = device_close_skeleton();
                    Digest32 digest = signing_digest(close, 0);
                    Signature sig_a =
                        sign(device_keys(KeyRole::Funding).sk, {digest.data(), 32});
                    Script redeem =
                        multisig_2of2_redeem(device_.pk_ft_self, device_.pk_ft_b);
                    close = complete_funding_spend(std::move(close), redeem, sig_a,
                                                   payload.funding_sig_b);
                    for (int i = 0; i < cfg_.params.k1; ++i)
                        send("device", publisher_label(i),
                             msg::PublishRequest{close, "mutual_close"});
                    device_.phase = DeviceState::Phase::Idle;
                } else if constexpr (std::is_same_v<T, msg::Alert>) {
                    device_on_alert(payload);
                } else if constexpr (std::is_same_v<T, msg::CosignResponse>) {
                    device_complete_recovery(payload);
                }
            },
            m.payload);
    }

    // Drive the configured schedule: next update, then breach or close.
    void device_advance() {
        if (device_.phase != DeviceState::Phase::Active) return;
        if (!device_.pending_updates.empty()) {
            Satoshi target = device_.pending_updates.front();
            device_.pending_updates.erase(device_.pending_updates.begin());
            device_.pending_balance = target;
            const std::uint32_t j = device_.state_index + 1;
            send("device", "gateway", msg::UpdateRequest{j, target, device_slots(j)});
            device_.phase = DeviceState::Phase::WaitUpdateAck;
            return;
        }
        if (device_.strategy.kind == StrategyKind::PublishRevoked &&
            !device_.breach_published) {
            device_.breach_published = true;
            const std::uint32_t j = device_.strategy.state_index;
            Transaction tx_a = device_tx_a_skeleton(j);
            Digest32 digest = signing_digest(tx_a, 0);
            Signature own = sign(device_keys(KeyRole::Funding).sk, {digest.data(), 32});
            Script redeem = multisig_2of2_redeem(device_.pk_ft_self, device_.pk_ft_b);
            tx_a = complete_funding_spend(std::move(tx_a), redeem, own,
                                          device_.sig_b_for_tx_a.at(j));
            for (int i = 0; i < cfg_.params.k1; ++i)
                send("device", publisher_label(i),
                     msg::PublishRequest{tx_a, "commitment_a_state_" + std::to_string(j)});
            device_.phase = DeviceState::Phase::Idle;
            return;
        }
        if (device_.close_after_updates) {
            Transaction close = device_close_skeleton();
            Digest32 digest = signing_digest(close, 0);
            Signature sig_a = sign(device_keys(KeyRole::Funding).sk, {digest.data(), 32});
            send("device", "gateway", msg::CloseRequest{sig_a, cfg_.relay_close});
            device_.phase = cfg_.relay_close ? DeviceState::Phase::WaitCloseAck
                                             : DeviceState::Phase::Idle;
        }
    }

    void device_on_alert(const msg::Alert& alert) {
        Digest32 breach_id = txid(alert.spending_tx);
        if (device_.handled_breaches.contains(breach_id)) return;
        device_.handled_breaches.insert(breach_id);
        if (!device_.funding_outpoint) return;

        // Identify which transaction spent the funding output by comparing
        // witness-blanked digests against the skeletons this device knows.
        Digest32 seen = signing_digest(alert.spending_tx, 0);
        auto matches = [&](const Transaction& skeleton) {
            return signing_digest(skeleton, 0) == seen;
        };
        if (device_.phase == DeviceState::Phase::Idle ||
            device_.phase == DeviceState::Phase::Active) {
            Transaction close = device_close_skeleton();
            if (matches(close)) return;  // cooperative close, nothing to do
        }
        for (std::uint32_t j = 1; j <= device_.state_index; ++j) {
            if (!device_.gateway_slots.contains(j)) continue;
            if (matches(device_tx_a_skeleton(j))) return;  // own commitment
            if (!matches(device_tx_b_skeleton(j))) continue;
            if (j == device_.state_index) return;  // current state: a legal close
            auto secret = device_.revealed_b_secrets.find(j);
            if (secret == device_.revealed_b_secrets.end()) return;
            // Revoked gateway commitment: build the recovery and collect the
            // alerting watchdog's co-signature.
            if (alert.current_height - alert.confirmation_height >= cfg_.params.w) {
                event("window_expired", "device",
                      {{"state", j}, {"txid", to_hex({breach_id.data(), 32})}});
                return;
            }
            CommitmentKeys keys =
                keys_for_state(j, device_slots(j), device_.gateway_slots.at(j));
            Transaction recovery = build_recovery_skeleton(
                cfg_.params, alert.spending_tx, keys,
                device_keys(KeyRole::ThirdPartyRc, j).pk, alert.member_index,
                cfg_.miner_fee);
            device_.pending_recovery = recovery;
            device_.pending_recovery_state = j;
            send("device", watchdog_label(alert.member_index),
                 msg::CosignRequest{recovery});
            return;
        }
    }

    void device_complete_recovery(const msg::CosignResponse& resp) {
        if (!device_.pending_recovery) return;
        const std::uint32_t j = device_.pending_recovery_state;
        CommitmentKeys keys =
            keys_for_state(j, device_slots(j), device_.gateway_slots.at(j));
        SecretKey sk_a_b =
            derive_keypair(cfg_.seed_a, slot_path(Party::DeviceA, KeyRole::StateB, j)).sk;
        Transaction tx =
            complete_recovery_tx(std::move(*device_.pending_recovery), keys, sk_a_b,
                                 device_.revealed_b_secrets.at(j), resp.sig);
        device_.pending_recovery.reset();
        for (int i = 0; i < cfg_.params.k1; ++i)
            send("device", publisher_label(i),
                 msg::PublishRequest{tx, "recovery_state_" + std::to_string(j)});
    }

    FundingBuild funding_skeleton_for(const DeviceState& d) const {
        std::vector<SeedInput> a, b;
        if (d.seed_input) a.push_back(*d.seed_input);
        if (d.gateway_input) b.push_back(*d.gateway_input);
        return build_funding_skeleton(cfg_.params, a, b, d.pk_ft_self, d.pk_ft_b, 0);
    }

    // --- gateway -----------------------------------------------------------

    struct GatewayState {
        Digest32 seed{};
        Strategy strategy;
        enum class Phase { Init, Open, Closed } phase = Phase::Init;

        std::optional<SeedInput> seed_input;
        std::uint32_t seed_index = 0;
        PublicKey pk_ft_self, pk_close_self;
        std::optional<SeedInput> device_input;
        PublicKey pk_ft_a, pk_close_a;
        std::vector<PublicKey> publisher_pool, watchdog_pool;

        std::optional<Transaction> funding_tx;
        std::optional<OutPoint> funding_outpoint;
        std::optional<std::int64_t> funding_height;
        bool channel_announced = false;

        std::uint32_t state_index = 1;
        Satoshi balance_a = 0, balance_b = 0;
        std::map<std::uint32_t, StateSlotKeys> device_slots;
        std::map<std::uint32_t, Signature> sig_a_for_tx_b;
        std::map<std::uint32_t, SecretKey> revealed_a_secrets;
        std::map<std::uint32_t, std::pair<Satoshi, Satoshi>> state_balances;
        Satoshi pending_balance = 0;
        std::size_t expected_updates = 0;
        std::size_t seen_updates = 0;

        std::optional<Signature> close_sig_a;
        bool close_relay = false;
        std::optional<Transaction> close_tx;
        std::optional<std::int64_t> close_sent_tick;
        bool close_submitted = false;

        bool breach_published = false;
        bool bribes_offered = false;
        std::optional<OutPoint> sweep_target;
        Satoshi sweep_value = 0;
        std::uint32_t sweep_state = 0;
        std::optional<std::int64_t> sweep_maturity;
        bool sweep_submitted = false;
        std::set<Digest32> handled_spends;
    };

    StateSlotKeys gateway_slots(std::uint32_t state) const {
        return derive_state_slots(cfg_.seed_b, Party::GatewayB, state);
    }

    Transaction gateway_tx_a_skeleton(std::uint32_t state) {
        ChannelState s{state, gateway_.state_balances.at(state).first,
                       gateway_.state_balances.at(state).second, false, {}, {}};
        return build_commitment_tx_a(
            cfg_.params, s,
            keys_for_state(state, gateway_.device_slots.at(state), gateway_slots(state)),
            *gateway_.funding_outpoint);
    }

    Transaction gateway_tx_b_skeleton(std::uint32_t state) {
        ChannelState s{state, gateway_.state_balances.at(state).first,
                       gateway_.state_balances.at(state).second, false, {}, {}};
        return build_commitment_tx_b(
            cfg_.params, s,
            keys_for_state(state, gateway_.device_slots.at(state), gateway_slots(state)),
            *gateway_.funding_outpoint);
    }

    Transaction gateway_close_skeleton() {
        ChannelState s{gateway_.state_index, gateway_.balance_a, gateway_.balance_b,
                       false, {}, {}};
        MutualCloseOptions opts;
        opts.miner_fee = cfg_.miner_fee;
        opts.relay_via_pool = gateway_.close_relay;
        return build_mutual_close_skeleton(
            cfg_.params, s,
            keys_for_state(gateway_.state_index,
                           gateway_.device_slots.at(gateway_.state_index),
                           gateway_slots(gateway_.state_index)),
            gateway_.pk_close_a, gateway_.pk_close_self, *gateway_.funding_outpoint, opts);
    }

    void act_gateway() {
        auto inbox = take_inbox("gateway");
        for (Message& m : inbox) gateway_handle(m);
        gateway_monitor();
    }

    void gateway_handle(Message& m) {
        std::visit(
            [&](auto&& payload) {
                using T = std::decay_t<decltype(payload)>;
                if constexpr (std::is_same_v<T, msg::OpenRequest>) {
                    gateway_.pk_ft_self = gateway_keys(KeyRole::Funding).pk;
                    gateway_.pk_close_self = gateway_keys(KeyRole::Close).pk;
                    gateway_.device_input = payload.input;
                    gateway_.pk_ft_a = payload.pk_ft;
                    gateway_.pk_close_a = payload.pk_close;
                    gateway_.device_slots[1] = payload.slots1;
                    gateway_.state_balances[1] = {cfg_.params.omega_a, cfg_.params.omega_b};
                    gateway_.balance_a = cfg_.params.omega_a;
                    gateway_.balance_b = cfg_.params.omega_b;
                    send("gateway", "device",
                         msg::OpenAck{gateway_.seed_input, gateway_.pk_ft_self,
                                      gateway_.pk_close_self, gateway_slots(1)});
                } else if constexpr (std::is_same_v<T, msg::OpenCommit>) {
                    std::vector<SeedInput> a, b;
                    if (gateway_.device_input) a.push_back(*gateway_.device_input);
                    if (gateway_.seed_input) b.push_back(*gateway_.seed_input);
                    FundingBuild build = build_funding_skeleton(
                        cfg_.params, a, b, gateway_.pk_ft_a, gateway_.pk_ft_self, 0);
                    Digest32 digest = signing_digest(build.tx, 0);
                    Signature own =
                        sign(gateway_keys(KeyRole::Funding).sk, {digest.data(), 32});
                    std::size_t i = 0;
                    if (gateway_.device_input)
                        build.tx.inputs[i++].unlocking =
                            p2pkh_unlock(payload.funding_sig, gateway_.pk_ft_a);
                    if (gateway_.seed_input)
                        build.tx.inputs[i++].unlocking =
                            p2pkh_unlock(own, gateway_.pk_ft_self);
                    gateway_.funding_tx = build.tx;
                    gateway_.funding_outpoint =
                        OutPoint{txid(build.tx), build.channel_output_index};
                    submit_tx("gateway", build.tx, "funding");
                } else if constexpr (std::is_same_v<T, msg::StateAck>) {
                    gateway_.sig_a_for_tx_b[payload.index] = payload.sig_a_for_tx_b;
                    gateway_.phase = GatewayState::Phase::Open;
                    gateway_maybe_breach();
                } else if constexpr (std::is_same_v<T, msg::UpdateRequest>) {
                    const std::uint32_t j = payload.new_index;
                    gateway_.device_slots[j] = payload.slots_a;
                    gateway_.pending_balance = payload.new_balance_a;
                    Transaction tx_a = [&] {
                        ChannelState s{j, payload.new_balance_a,
                                       cfg_.params.capacity() - payload.new_balance_a,
                                       false, {}, {}};
                        return build_commitment_tx_a(
                            cfg_.params, s,
                            keys_for_state(j, payload.slots_a, gateway_slots(j)),
                            *gateway_.funding_outpoint);
                    }();
                    Digest32 digest = signing_digest(tx_a, 0);
                    SecretKey revoke =
                        derive_keypair(cfg_.seed_b,
                                       slot_path(Party::GatewayB, KeyRole::StateC, j - 1))
                            .sk;
                    send("gateway", "device",
                         msg::UpdateAck{j, gateway_slots(j),
                                        sign(gateway_keys(KeyRole::Funding).sk,
                                             {digest.data(), 32}),
                                        revoke});
                } else if constexpr (std::is_same_v<T, msg::UpdateDone>) {
                    const std::uint32_t j = payload.new_index;
                    gateway_.sig_a_for_tx_b[j] = payload.sig_a_for_tx_b;
                    gateway_.revealed_a_secrets[j - 1] = payload.revoke_a_c_prev;
                    gateway_.state_index = j;
                    gateway_.balance_a = gateway_.pending_balance;
                    gateway_.balance_b = cfg_.params.capacity() - gateway_.balance_a;
                    gateway_.state_balances[j] = {gateway_.balance_a, gateway_.balance_b};
                    ++gateway_.seen_updates;
                    event("state", "gateway",
                          {{"index", j},
                           {"balance_a", gateway_.balance_a},
                           {"balance_b", gateway_.balance_b}});
                    gateway_maybe_breach();
                } else if constexpr (std::is_same_v<T, msg::CloseRequest>) {
                    if (gateway_.strategy.kind != StrategyKind::Honest) return;
                    gateway_.close_sig_a = payload.funding_sig_a;
                    gateway_.close_relay = payload.relay;
                    Transaction close = gateway_close_skeleton();
                    Digest32 digest = signing_digest(close, 0);
                    Signature own =
                        sign(gateway_keys(KeyRole::Funding).sk, {digest.data(), 32});
                    Script redeem =
                        multisig_2of2_redeem(gateway_.pk_ft_a, gateway_.pk_ft_self);
                    gateway_.close_tx = complete_funding_spend(
                        std::move(close), redeem, payload.funding_sig_a, own);
                    gateway_.close_sent_tick = tick_;
                    if (payload.relay) {
                        send("gateway", "device", msg::CloseAck{own});
                    } else {
                        gateway_.close_submitted = true;
                        submit_tx("gateway", *gateway_.close_tx, "mutual_close");
                    }
                }
            },
            m.payload);
    }

    void gateway_maybe_breach() {
        if (gateway_.strategy.kind != StrategyKind::PublishRevoked &&
            gateway_.strategy.kind != StrategyKind::ColludePublisher &&
            gateway_.strategy.kind != StrategyKind::ColludeWatchdog)
            return;
        if (gateway_.breach_published) return;
        if (gateway_.seen_updates < gateway_.expected_updates) return;
        const std::uint32_t j = gateway_.strategy.state_index;
        if (!gateway_.sig_a_for_tx_b.contains(j)) return;
        gateway_.breach_published = true;

        if (gateway_.strategy.kind == StrategyKind::ColludePublisher ||
            gateway_.strategy.kind == StrategyKind::ColludeWatchdog) {
            const bool target_publishers =
                gateway_.strategy.kind == StrategyKind::ColludePublisher;
            const int members = target_publishers ? cfg_.params.k1 : cfg_.params.k2;
            event("bribe_offer", "gateway",
                  {{"pool", target_publishers ? "publisher" : "watchdog"},
                   {"amount", gateway_.strategy.bribe}});
            for (int i = 0; i < members; ++i)
                send("gateway",
                     target_publishers ? publisher_label(i) : watchdog_label(i),
                     msg::BribeOffer{gateway_.strategy.bribe});
        }

        Transaction tx_b = gateway_tx_b_skeleton(j);
        Digest32 digest = signing_digest(tx_b, 0);
        Signature own = sign(gateway_keys(KeyRole::Funding).sk, {digest.data(), 32});
        Script redeem = multisig_2of2_redeem(gateway_.pk_ft_a, gateway_.pk_ft_self);
        tx_b = complete_funding_spend(std::move(tx_b), redeem,
                                      gateway_.sig_a_for_tx_b.at(j), own);
        submit_tx("gateway", tx_b, "commitment_b_state_" + std::to_string(j));

        // Remember its revocable output for the CSV sweep attempt.
        Script lock = commitment_lock_b(cfg_.params.w, gateway_slots(j).a,
                                        gateway_.watchdog_pool, gateway_slots(j).c,
                                        gateway_.device_slots.at(j).b);
        if (auto index = find_output(tx_b, lock)) {
            gateway_.sweep_target = OutPoint{txid(tx_b), *index};
            gateway_.sweep_value = tx_b.outputs[*index].value;
            gateway_.sweep_state = j;
        }
    }

    void gateway_monitor() {
        if (gateway_.phase == GatewayState::Phase::Closed) return;
        if (!gateway_.funding_outpoint) return;
        const Chain& chain = read_chain("gateway");

        // Funding confirmation policy: announce the channel only after the
        // recommended depth.
        if (!gateway_.channel_announced) {
            auto height = chain.confirmation_height(gateway_.funding_outpoint->txid);
            if (height &&
                chain.height() - *height + 1 >= kRecommendedConfirmationDepth) {
                gateway_.channel_announced = true;
                gateway_.funding_height = *height;
                send("gateway", "device",
                     msg::ChannelOpen{*gateway_.funding_outpoint,
                                      [&] {
                                          Transaction tx_a = gateway_tx_a_skeleton(1);
                                          Digest32 d = signing_digest(tx_a, 0);
                                          return sign(gateway_keys(KeyRole::Funding).sk,
                                                      {d.data(), 32});
                                      }()});
            }
            return;
        }

        // Sweep its own revocable output once the window has expired.
        if (gateway_.sweep_target && !gateway_.sweep_submitted) {
            auto spent = chain.scan_for_spend(*gateway_.sweep_target);
            if (spent) {
                gateway_.sweep_submitted = true;  // punished; nothing left to sweep
            } else if (auto conf =
                           chain.confirmation_height(gateway_.sweep_target->txid)) {
                if (chain.height() + 1 - *conf >= cfg_.params.w) {
                    Transaction sweep;
                    sweep.inputs.push_back(
                        TxInput{*gateway_.sweep_target, {},
                                static_cast<std::uint32_t>(cfg_.params.w)});
                    Satoshi value = gateway_.sweep_value - cfg_.miner_fee;
                    sweep.outputs.push_back(
                        TxOutput{value, p2pkh_lock(gateway_.pk_close_self)});
                    Digest32 digest = signing_digest(sweep, 0);
                    SecretKey sk =
                        derive_keypair(cfg_.seed_b, slot_path(Party::GatewayB,
                                                              KeyRole::StateA,
                                                              gateway_.sweep_state))
                            .sk;
                    sweep.inputs[0].unlocking = csv_claim_witness(
                        sign(sk, {digest.data(), 32}),
                        gateway_slots(gateway_.sweep_state).a);
                    if (submit_tx("gateway", sweep, "csv_sweep"))
                        gateway_.sweep_submitted = true;
                }
            }
        }

        // Relay closes the publisher pool refuses to carry get republished by
        // the gateway itself after a timeout; it holds the fully signed copy.
        auto spend = chain.scan_for_spend(*gateway_.funding_outpoint);
        if (!spend && gateway_.close_tx && gateway_.close_relay &&
            !gateway_.close_submitted && gateway_.close_sent_tick &&
            tick_ - *gateway_.close_sent_tick >= kCloseRelayTimeout) {
            gateway_.close_submitted = true;
            submit_tx("gateway", *gateway_.close_tx, "mutual_close");
            return;
        }
        if (!spend) return;
        if (gateway_.handled_spends.contains(spend->spending_txid)) return;
        gateway_.handled_spends.insert(spend->spending_txid);
        const Transaction* spending = chain.find_confirmed(spend->spending_txid);
        if (!spending) return;
        Digest32 seen = signing_digest(*spending, 0);
        if (gateway_.close_tx && signing_digest(*gateway_.close_tx, 0) == seen) {
            gateway_.phase = GatewayState::Phase::Closed;
            return;
        }
        for (std::uint32_t j = 1; j <= gateway_.state_index; ++j) {
            if (!gateway_.device_slots.contains(j)) continue;
            if (signing_digest(gateway_tx_b_skeleton(j), 0) == seen) return;  // own
            if (signing_digest(gateway_tx_a_skeleton(j), 0) != seen) continue;
            if (j == gateway_.state_index) return;  // current state, legal
            auto secret = gateway_.revealed_a_secrets.find(j);
            if (secret == gateway_.revealed_a_secrets.end()) return;
            ChannelState state{j, gateway_.state_balances.at(j).first,
                               gateway_.state_balances.at(j).second, true, {}, {}};
            state.revocation_secret_a = secret->second;
            CommitmentKeys keys =
                keys_for_state(j, gateway_.device_slots.at(j), gateway_slots(j));
            SecretKey sk_b_b =
                derive_keypair(cfg_.seed_b, slot_path(Party::GatewayB, KeyRole::StateB, j))
                    .sk;
            Transaction remedy = build_breach_remedy(
                cfg_.params, *spending, state, keys, sk_b_b, secret->second,
                gateway_.pk_close_self, WindowInfo{spend->height, chain.height()},
                cfg_.miner_fee);
            submit_tx("gateway", remedy, "breach_remedy_state_" + std::to_string(j));
            return;
        }
    }

    // --- pools -------------------------------------------------------------

    struct PoolMember {
        Strategy strategy;
        Keypair keys;
        bool accepted_bribe = false;
        std::optional<OutPoint> watched;
        std::set<Digest32> alerted;
        std::set<Digest32> refused;
    };

    bool publisher_willing(int i) const {
        const PoolMember& m = publishers_[static_cast<std::size_t>(i)];
        return m.strategy.kind == StrategyKind::Honest && !m.accepted_bribe;
    }

    void act_publisher(int i) {
        PoolMember& m = publishers_[static_cast<std::size_t>(i)];
        const std::string label = publisher_label(i);
        auto inbox = take_inbox(label);
        for (Message& in : inbox) {
            if (auto* offer = std::get_if<msg::BribeOffer>(&in.payload)) {
                pool_consider_bribe(label, m, *offer, cfg_.params.k1, cfg_.params.sigma1,
                                    publisher_acceptances_);
                continue;
            }
            auto* req = std::get_if<msg::PublishRequest>(&in.payload);
            if (!req) continue;
            Digest32 id = txid(req->tx);
            if (!publisher_willing(i)) {
                if (m.refused.insert(id).second)
                    event("publish_refused", label, {{"label", req->label}});
                continue;
            }
            if (fulfilled_publishes_.contains(id)) continue;
            // Lowest-index willing member performs the service; acting in
            // index order makes that exact.
            read_chain(label);
            if (submit_tx(label, req->tx, req->label)) {
                fulfilled_publishes_.insert(id);
                // Pool outputs created by the service are the acting member's
                // claim.
                Script pool_lock = pool_multisig_lock(device_.publisher_pool);
                for (std::uint32_t out = 0; out < req->tx.outputs.size(); ++out) {
                    if (req->tx.outputs[out].locking == pool_lock) {
                        trace_.pool_claims.push_back(PoolClaim{label, OutPoint{id, out}});
                        event("pool_claim", label,
                              {{"txid", to_hex({id.data(), id.size()})}, {"index", out}});
                    }
                }
            }
        }
    }

    void act_watchdog(int i) {
        PoolMember& m = watchdogs_[static_cast<std::size_t>(i)];
        const std::string label = watchdog_label(i);
        auto inbox = take_inbox(label);
        for (Message& in : inbox) {
            if (auto* offer = std::get_if<msg::BribeOffer>(&in.payload)) {
                pool_consider_bribe(label, m, *offer, cfg_.params.k2, cfg_.params.gamma1,
                                    watchdog_acceptances_);
                continue;
            }
            if (auto* watch = std::get_if<msg::WatchRequest>(&in.payload)) {
                m.watched = watch->funding_outpoint;
                continue;
            }
            if (auto* cosign = std::get_if<msg::CosignRequest>(&in.payload)) {
                if (m.strategy.kind == StrategyKind::WatchdogSilent || m.accepted_bribe)
                    continue;
                Digest32 digest = signing_digest(cosign->unsigned_tx, 0);
                send(label, "device",
                     msg::CosignResponse{sign(m.keys.sk, {digest.data(), 32}), i});
                continue;
            }
        }
        if (m.strategy.kind == StrategyKind::WatchdogSilent || m.accepted_bribe) return;
        if (!m.watched) return;
        const Chain& chain = read_chain(label);
        auto spend = chain.scan_for_spend(*m.watched);
        if (!spend) return;
        if (!m.alerted.insert(spend->spending_txid).second) return;
        const Transaction* spending = chain.find_confirmed(spend->spending_txid);
        if (!spending) return;
        event("alert", label,
              {{"txid", to_hex({spend->spending_txid.data(), 32})},
               {"height", spend->height}});
        send(label, "device",
             msg::Alert{*spending, spend->height, chain.height(), i});
    }

    void pool_consider_bribe(const std::string& label, PoolMember& m,
                             const msg::BribeOffer& offer, int pool_size, Satoshi fee,
                             std::set<std::string>& acceptances) {
        // A rational member defects from the collusion whenever its share of
        // the bribe falls short of the fee it could earn by serving.
        const bool accept = Rational(offer.amount, pool_size) >= Rational(fee);
        event(accept ? "bribe_accept" : "bribe_refuse", label,
              {{"amount", offer.amount}});
        if (accept) {
            m.accepted_bribe = true;
            acceptances.insert(label);
        }
    }

    // Collusion binds only when unanimous; a single refusal voids it (and the
    // payment) while the refusing members go on serving honestly.
    void finalize_bribes() {
        auto settle_pool = [&](std::set<std::string>& acceptances,
                               std::vector<PoolMember>& members, const char* pool_name,
                               auto label_of) {
            if (acceptances.empty()) return;
            if (acceptances.size() < members.size()) {
                for (std::size_t i = 0; i < members.size(); ++i)
                    members[i].accepted_bribe = false;
                event("collusion_failed", "chain", {{"pool", pool_name}});
                acceptances.clear();
                return;
            }
            const Satoshi total = gateway_.strategy.bribe;
            const Satoshi share = total / static_cast<Satoshi>(members.size());
            for (std::size_t i = 0; i < members.size(); ++i) {
                trace_.side_payments.push_back(
                    SidePayment{"gateway", label_of(static_cast<int>(i)), share});
                event("side_payment", "gateway",
                      {{"to", label_of(static_cast<int>(i))}, {"amount", share}});
            }
            event("collusion", "gateway", {{"pool", pool_name}, {"amount", total}});
            acceptances.clear();
            for (PoolMember& m : members) m.accepted_bribe = true;
        };
        settle_pool(publisher_acceptances_, publishers_, "publisher", publisher_label);
        settle_pool(watchdog_acceptances_, watchdogs_, "watchdog", watchdog_label);
    }

    // --- settlement --------------------------------------------------------

    bool actors_idle() const {
        if (device_.phase == DeviceState::Phase::WaitOpenAck ||
            device_.phase == DeviceState::Phase::WaitChannelOpen ||
            device_.phase == DeviceState::Phase::WaitUpdateAck ||
            device_.phase == DeviceState::Phase::WaitCloseAck)
            return false;
        if (device_.pending_recovery) return false;
        if (!device_.pending_updates.empty()) return false;
        return outbox_.empty() && inboxes_.empty();
    }

    bool check_settled() {
        if (!gateway_.funding_outpoint) return false;
        auto spend = chain_.scan_for_spend(*gateway_.funding_outpoint);
        if (!spend) return false;
        const Transaction* spending = chain_.find_confirmed(spend->spending_txid);
        if (!spending) return false;

        // Any still-unspent revocable output keeps the scenario live unless
        // its owner has given up the chase.
        std::string outcome = "mutual_close";
        Digest32 spend_id = spend->spending_txid;
        const std::string label = submitted_labels_.count(spend_id)
                                      ? submitted_labels_[spend_id]
                                      : std::string("?");
        if (label.rfind("commitment", 0) == 0) {
            bool unresolved = false;
            std::string resolution;
            for (std::uint32_t i = 0; i < spending->outputs.size(); ++i) {
                const Script& lock = spending->outputs[i].locking;
                const bool revocable =
                    !lock.empty() && lock.front().type == OpType::If;
                if (!revocable) continue;
                auto resolved = chain_.scan_for_spend(OutPoint{spend_id, i});
                if (!resolved) {
                    unresolved = true;
                    continue;
                }
                const std::string res_label =
                    submitted_labels_.count(resolved->spending_txid)
                        ? submitted_labels_[resolved->spending_txid]
                        : std::string("?");
                if (res_label.rfind("recovery", 0) == 0)
                    resolution = "breach_recovered";
                else if (res_label.rfind("breach_remedy", 0) == 0)
                    resolution = "breach_remedied";
                else if (res_label == "csv_sweep")
                    resolution = "breach_swept";
            }
            if (unresolved) return false;
            outcome = resolution.empty() ? "commitment_resolved" : resolution;
        }
        if (!actors_idle()) return false;
        if (chain_.mempool_size() > 0) return false;
        trace_.settled = true;
        trace_.outcome = outcome;
        event("device_core", "device",
              {{"state_index", device_.state_index},
               {"balance_a", device_.balance_a},
               {"balance_b", device_.balance_b}});
        event("settled", "chain", {{"outcome", outcome}});
        return true;
    }

    void finish_trace() {
        trace_.final_height = chain_.height();
        trace_.max_state_index =
            std::max(device_.state_index, gateway_.state_index);
        trace_.total_fees = chain_.total_fees();
        trace_.total_seeded = chain_.total_seeded();
        for (const auto& [op, entry] : chain_.utxo())
            trace_.final_utxo.push_back(FinalUtxo{op, entry.output.value,
                                                  serialize_script(entry.output.locking),
                                                  entry.confirmation_height});
        trace_.chain_dump = chain_.dump();
    }

    // --- data --------------------------------------------------------------

    ScenarioConfig cfg_;
    Digest32 pool_seed_{};
    Chain chain_;
    ScenarioTrace trace_;
    std::int64_t tick_ = 0;

    std::vector<Message> outbox_;
    std::map<std::string, std::vector<Message>> inboxes_;
    std::set<std::string> chain_readers_this_tick_;
    std::map<Digest32, std::string> submitted_labels_;
    std::set<Digest32> fulfilled_publishes_;
    std::set<std::string> publisher_acceptances_, watchdog_acceptances_;

    DeviceState device_;
    GatewayState gateway_;
    std::vector<PoolMember> publishers_;
    std::vector<PoolMember> watchdogs_;
};

inline ScenarioTrace run_scenario(const ScenarioConfig& config) {
    return ScenarioRunner(config).run();
}

// ---------------------------------------------------------------------------
// Settlement accounting: who can spend what once the dust settles. Pool
// multisig outputs are attributed to the member that performed the service;
// off-chain side payments transfer between actors.
// ---------------------------------------------------------------------------

inline std::map<std::string, Satoshi> settle(const ScenarioConfig& config,
                                             const ScenarioTrace& trace) {
    if (!trace.settled) throw UnsettledError("scenario did not settle");
    Digest32 pool_seed = pool_seed_from(config.seed_a, config.seed_b);

    std::map<Bytes, std::string> by_p2pkh;  // hash160(pk) bytes -> actor
    auto register_key = [&](const PublicKey& pk, const std::string& owner) {
        Digest20 h = hash160(pk.view());
        by_p2pkh[Bytes(h.begin(), h.end())] = owner;
    };
    auto device_key = [&](KeyRole role, std::uint32_t state) {
        return derive_keypair(config.seed_a, {Party::DeviceA, role, state, 0}).pk;
    };
    auto gateway_key = [&](KeyRole role, std::uint32_t state) {
        return derive_keypair(config.seed_b, {Party::GatewayB, role, state, 0}).pk;
    };
    register_key(device_key(KeyRole::Funding, 0), "device");
    register_key(device_key(KeyRole::Close, 0), "device");
    register_key(gateway_key(KeyRole::Funding, 0), "gateway");
    register_key(gateway_key(KeyRole::Close, 0), "gateway");
    for (std::uint32_t j = 1; j <= trace.max_state_index; ++j) {
        register_key(device_key(KeyRole::StateA, j), "device");
        register_key(device_key(KeyRole::StateB, j), "device");
        register_key(device_key(KeyRole::StateC, j), "device");
        register_key(device_key(KeyRole::ThirdPartyRc, j), "device");
        register_key(gateway_key(KeyRole::StateA, j), "gateway");
        register_key(gateway_key(KeyRole::StateB, j), "gateway");
        register_key(gateway_key(KeyRole::StateC, j), "gateway");
    }
    std::map<std::string, Satoshi> balances{{"device", 0}, {"gateway", 0}};
    std::vector<PublicKey> publisher_pool =
        derive_pool_keys(pool_seed, Party::ThirdPartyPub, config.params.k1);
    std::vector<PublicKey> watchdog_pool =
        derive_pool_keys(pool_seed, Party::ThirdPartyWatch, config.params.k2);
    for (int i = 0; i < config.params.k1; ++i) {
        register_key(publisher_pool[static_cast<std::size_t>(i)],
                     "publisher_" + std::to_string(i));
        balances["publisher_" + std::to_string(i)] = 0;
    }
    for (int i = 0; i < config.params.k2; ++i) {
        register_key(watchdog_pool[static_cast<std::size_t>(i)],
                     "watchdog_" + std::to_string(i));
        balances["watchdog_" + std::to_string(i)] = 0;
    }

    const Bytes publisher_lock = serialize_script(pool_multisig_lock(publisher_pool));
    const Bytes watchdog_lock = serialize_script(pool_multisig_lock(watchdog_pool));

    for (const FinalUtxo& u : trace.final_utxo) {
        std::string owner;
        Script lock = parse_script_bytes({u.locking.data(), u.locking.size()});
        if (lock.size() == 5 && lock[0].type == OpType::Dup &&
            lock[2].type == OpType::Push) {
            auto it = by_p2pkh.find(lock[2].payload);
            if (it != by_p2pkh.end()) owner = it->second;
        } else if (u.locking == publisher_lock || u.locking == watchdog_lock) {
            for (const PoolClaim& claim : trace.pool_claims)
                if (claim.outpoint == u.outpoint) owner = claim.member;
            if (owner.empty())
                owner = u.locking == publisher_lock ? "publisher_pool" : "watchdog_pool";
        } else if (!lock.empty() && lock.front().type == OpType::If) {
            // Unresolved revocable output: attribute to its timelocked owner.
            bool device_side = false;
            for (const Opcode& op : lock)
                if (op.type == OpType::Push && op.payload.size() == 20) {
                    auto it = by_p2pkh.find(op.payload);
                    if (it != by_p2pkh.end() && it->second == "device")
                        device_side = true;
                    break;
                }
            owner = device_side ? "device" : "gateway";
        }
        if (owner.empty()) owner = "unattributed";
        balances[owner] += u.value;
    }
    for (const SidePayment& p : trace.side_payments) {
        balances[p.from] -= p.amount;
        balances[p.to] += p.amount;
    }
    return balances;
}

inline Satoshi pool_total(const std::map<std::string, Satoshi>& settled,
                          const std::string& prefix) {
    Satoshi total = 0;
    for (const auto& [actor, value] : settled)
        if (actor.rfind(prefix, 0) == 0) total += value;
    return total;
}

}  // namespace iotchan
