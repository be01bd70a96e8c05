#pragma once

#include "iotchan/game.hpp"
#include "iotchan/scenario.hpp"

namespace iotchan {

// JSON forms of the channel descriptor, scenario config, and game config.
// Field order in emitted JSON is fixed so reports are byte-stable.

using Json = nlohmann::ordered_json;

namespace serde {

inline Satoshi require_int(const Json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number_integer())
        throw ConfigError(std::string("missing or non-integer field: ") + key);
    return j[key].get<Satoshi>();
}

inline Digest32 require_seed(const Json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_string())
        throw ConfigError(std::string("missing master seed: ") + key);
    std::string hex = j[key].get<std::string>();
    if (hex.size() != 64) throw ConfigError(std::string(key) + " must be 64 hex chars");
    try {
        return array_from_hex<32>(hex);
    } catch (const std::invalid_argument&) {
        throw ConfigError(std::string(key) + " is not valid hex");
    }
}

inline ChannelParams params_from_json(const Json& j) {
    ChannelParams p;
    p.omega_a = require_int(j, "omega_a");
    p.omega_b = require_int(j, "omega_b");
    p.w = require_int(j, "w");
    p.k1 = static_cast<int>(require_int(j, "k1"));
    p.k2 = static_cast<int>(require_int(j, "k2"));
    p.sigma1 = require_int(j, "sigma1");
    p.gamma1 = require_int(j, "gamma1");
    p.max_states = j.contains("max_states")
                       ? static_cast<std::uint32_t>(require_int(j, "max_states"))
                       : 1024u;
    return p;
}

inline Json params_to_json(const ChannelParams& p, const Digest32& seed_a,
                           const Digest32& seed_b) {
    Json j;
    j["omega_a"] = p.omega_a;
    j["omega_b"] = p.omega_b;
    j["w"] = p.w;
    j["k1"] = p.k1;
    j["k2"] = p.k2;
    j["sigma1"] = p.sigma1;
    j["gamma1"] = p.gamma1;
    j["max_states"] = p.max_states;
    j["master_seed_a"] = to_hex({seed_a.data(), seed_a.size()});
    j["master_seed_b"] = to_hex({seed_b.data(), seed_b.size()});
    return j;
}

inline Strategy strategy_from_json(const Json& j) {
    if (j.is_string()) {
        std::string s = j.get<std::string>();
        if (s == "honest") return Strategy::honest();
        if (s == "watchdog_silent") return Strategy{StrategyKind::WatchdogSilent, 0, 0};
        if (s == "publisher_drop") return Strategy{StrategyKind::PublisherDrop, 0, 0};
        throw ConfigError("unknown strategy: " + s);
    }
    if (!j.is_object() || !j.contains("kind"))
        throw ConfigError("strategy must be a string or an object with a kind");
    std::string kind = j["kind"].get<std::string>();
    Strategy s;
    if (kind == "honest") s.kind = StrategyKind::Honest;
    else if (kind == "publish_revoked") s.kind = StrategyKind::PublishRevoked;
    else if (kind == "collude_publisher") s.kind = StrategyKind::ColludePublisher;
    else if (kind == "collude_watchdog") s.kind = StrategyKind::ColludeWatchdog;
    else if (kind == "watchdog_silent") s.kind = StrategyKind::WatchdogSilent;
    else if (kind == "publisher_drop") s.kind = StrategyKind::PublisherDrop;
    else throw ConfigError("unknown strategy kind: " + kind);
    if (j.contains("state")) s.state_index = j["state"].get<std::uint32_t>();
    if (j.contains("bribe")) s.bribe = j["bribe"].get<Satoshi>();
    return s;
}

inline Json strategy_to_json(const Strategy& s) {
    switch (s.kind) {
        case StrategyKind::Honest: return "honest";
        case StrategyKind::WatchdogSilent: return "watchdog_silent";
        case StrategyKind::PublisherDrop: return "publisher_drop";
        case StrategyKind::PublishRevoked: {
            Json j;
            j["kind"] = "publish_revoked";
            j["state"] = s.state_index;
            return j;
        }
        case StrategyKind::ColludePublisher:
        case StrategyKind::ColludeWatchdog: {
            Json j;
            j["kind"] = s.kind == StrategyKind::ColludePublisher ? "collude_publisher"
                                                                 : "collude_watchdog";
            j["state"] = s.state_index;
            j["bribe"] = s.bribe;
            return j;
        }
    }
    return "honest";
}

inline std::vector<Strategy> pool_strategies_from_json(const Json& j, int size) {
    if (j.is_string()) {
        Strategy s = strategy_from_json(j);
        if (s.kind == StrategyKind::Honest) return {};  // default
        return std::vector<Strategy>(static_cast<std::size_t>(size), s);
    }
    std::vector<Strategy> out;
    for (const Json& e : j) out.push_back(strategy_from_json(e));
    return out;
}

inline ScenarioConfig scenario_from_json(const Json& j) {
    if (!j.contains("channel")) throw ConfigError("scenario config needs a channel");
    ScenarioConfig cfg;
    cfg.params = params_from_json(j["channel"]);
    cfg.seed_a = require_seed(j["channel"], "master_seed_a");
    cfg.seed_b = require_seed(j["channel"], "master_seed_b");
    if (j.contains("updates"))
        for (const Json& u : j["updates"]) cfg.updates.push_back(u.get<Satoshi>());
    if (j.contains("strategies")) {
        const Json& s = j["strategies"];
        if (s.contains("device")) cfg.device = strategy_from_json(s["device"]);
        if (s.contains("gateway")) cfg.gateway = strategy_from_json(s["gateway"]);
        if (s.contains("publisher"))
            cfg.publishers = pool_strategies_from_json(s["publisher"], cfg.params.k1);
        if (s.contains("watchdog"))
            cfg.watchdogs = pool_strategies_from_json(s["watchdog"], cfg.params.k2);
    }
    if (j.contains("horizon")) cfg.horizon = j["horizon"].get<std::int64_t>();
    if (j.contains("miner_fee")) cfg.miner_fee = j["miner_fee"].get<Satoshi>();
    if (j.contains("relay_close")) cfg.relay_close = j["relay_close"].get<bool>();
    cfg.validate();
    return cfg;
}

inline Json scenario_to_json(const ScenarioConfig& cfg) {
    Json j;
    j["channel"] = params_to_json(cfg.params, cfg.seed_a, cfg.seed_b);
    j["updates"] = cfg.updates;
    Json strategies;
    strategies["device"] = strategy_to_json(cfg.device);
    strategies["gateway"] = strategy_to_json(cfg.gateway);
    Json pubs = Json::array();
    for (int i = 0; i < cfg.params.k1; ++i)
        pubs.push_back(strategy_to_json(cfg.publisher_strategy(i)));
    strategies["publisher"] = pubs;
    Json dogs = Json::array();
    for (int i = 0; i < cfg.params.k2; ++i)
        dogs.push_back(strategy_to_json(cfg.watchdog_strategy(i)));
    strategies["watchdog"] = dogs;
    j["strategies"] = strategies;
    j["horizon"] = cfg.horizon;
    j["miner_fee"] = cfg.miner_fee;
    j["relay_close"] = cfg.relay_close;
    return j;
}

inline GameConfig game_from_json(const Json& j) {
    auto state = [&](const char* key) {
        if (!j.contains(key)) throw ConfigError(std::string("missing state: ") + key);
        return StatePair{require_int(j[key], "alpha"), require_int(j[key], "beta")};
    };
    GameConfig cfg;
    cfg.tx1 = state("tx1");
    cfg.tx2 = state("tx2");
    cfg.tx3 = state("tx3");
    cfg.sigma1 = require_int(j, "sigma1");
    cfg.gamma1 = require_int(j, "gamma1");
    cfg.sigma2 = j.contains("sigma2") ? require_int(j, "sigma2") : cfg.alpha_gap();
    cfg.gamma2 = j.contains("gamma2") ? require_int(j, "gamma2") : cfg.alpha_gap();
    cfg.k1 = static_cast<int>(require_int(j, "k1"));
    cfg.k2 = static_cast<int>(require_int(j, "k2"));
    try {
        cfg.validate();
    } catch (const GameError& e) {
        throw ConfigError(std::string("invalid game config: ") + e.what());
    }
    return cfg;
}

inline Json game_to_json(const GameConfig& cfg) {
    auto state = [](const StatePair& s) {
        Json j;
        j["alpha"] = s.alpha;
        j["beta"] = s.beta;
        return j;
    };
    Json j;
    j["tx1"] = state(cfg.tx1);
    j["tx2"] = state(cfg.tx2);
    j["tx3"] = state(cfg.tx3);
    j["sigma1"] = cfg.sigma1;
    j["sigma2"] = cfg.sigma2;
    j["gamma1"] = cfg.gamma1;
    j["gamma2"] = cfg.gamma2;
    j["k1"] = cfg.k1;
    j["k2"] = cfg.k2;
    return j;
}

}  // namespace serde
}  // namespace iotchan
