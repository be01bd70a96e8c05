#pragma once

#include "iotchan/serde.hpp"

namespace iotchan::fixtures {

// Reference channel: 50k/50k funding, W = 6, pools of five, 12k fees.
// Shipped as JSON under fixtures/ as well; the demo subcommands fall back to
// these built-ins when no fixture directory is configured.

inline Digest32 seed_a() {
    return array_from_hex<32>(
        "1111111111111111111111111111111111111111111111111111111111111111");
}

inline Digest32 seed_b() {
    return array_from_hex<32>(
        "2222222222222222222222222222222222222222222222222222222222222222");
}

inline ChannelParams channel_params(Satoshi sigma1 = 12000, Satoshi gamma1 = 12000) {
    ChannelParams p;
    p.omega_a = 50000;
    p.omega_b = 50000;
    p.w = 6;
    p.k1 = 5;
    p.k2 = 5;
    p.sigma1 = sigma1;
    p.gamma1 = gamma1;
    p.max_states = 1024;
    return p;
}

inline ScenarioConfig base_scenario(Satoshi sigma1 = 12000, Satoshi gamma1 = 12000) {
    ScenarioConfig cfg;
    cfg.params = channel_params(sigma1, gamma1);
    cfg.seed_a = seed_a();
    cfg.seed_b = seed_b();
    cfg.miner_fee = 0;
    return cfg;
}

/// Open, two updates, mutual close: the whole life of a well-behaved channel.
inline ScenarioConfig honest() {
    ScenarioConfig cfg = base_scenario();
    cfg.updates = {60000, 80000};
    cfg.horizon = 20;
    return cfg;
}

/// Gateway publishes revoked state 2, where its balance peaked; honest pools
/// punish it inside the window.
inline ScenarioConfig breach() {
    ScenarioConfig cfg = base_scenario();
    cfg.updates = {20000, 70000, 40000};
    cfg.gateway = Strategy::publish_revoked(2);
    cfg.horizon = 40;
    return cfg;
}

/// Same breach, but the fees sit below the collusion bound, so a 50k bribe
/// rationally buys the whole publisher pool and the device's recovery never
/// reaches the chain.
inline ScenarioConfig collude_publisher() {
    ScenarioConfig cfg = base_scenario(8000, 8000);
    cfg.updates = {20000, 70000, 40000};
    cfg.gateway = Strategy::collude_publisher(2, 50000);
    cfg.horizon = 40;
    return cfg;
}

/// Underpaid watchdogs accept the bribe and stay silent; the device never
/// learns the channel closed.
inline ScenarioConfig collude_watchdog() {
    ScenarioConfig cfg = base_scenario(8000, 8000);
    cfg.updates = {0, 40000};
    cfg.gateway = Strategy::collude_watchdog(2, 50000);
    cfg.horizon = 40;
    return cfg;
}

/// The device cheats instead; the gateway needs no third parties to punish.
inline ScenarioConfig device_breach() {
    ScenarioConfig cfg = base_scenario();
    cfg.updates = {20000, 70000, 40000};
    cfg.device = Strategy::publish_revoked(3);
    cfg.horizon = 40;
    return cfg;
}

/// Four of five watchdogs mount a denial of service; one honest member is
/// enough.
inline ScenarioConfig watchdog_silent_one_honest() {
    ScenarioConfig cfg = base_scenario();
    cfg.updates = {20000, 70000, 40000};
    cfg.gateway = Strategy::publish_revoked(2);
    cfg.watchdogs = {Strategy{StrategyKind::WatchdogSilent, 0, 0},
                     Strategy{StrategyKind::WatchdogSilent, 0, 0},
                     Strategy{StrategyKind::WatchdogSilent, 0, 0},
                     Strategy{StrategyKind::WatchdogSilent, 0, 0}, Strategy::honest()};
    cfg.horizon = 40;
    return cfg;
}

/// The game configuration induced by the breach scenario's states, with
/// bribes at their rational maximum.
inline GameConfig game() {
    GameConfig cfg;
    cfg.tx1 = {60000, 40000};
    cfg.tx2 = {80000, 20000};
    cfg.tx3 = {30000, 70000};
    cfg.sigma1 = 12000;
    cfg.gamma1 = 12000;
    cfg.sigma2 = 50000;
    cfg.gamma2 = 50000;
    cfg.k1 = 5;
    cfg.k2 = 5;
    return cfg;
}

/// Same game with fees below the collusion bound.
inline GameConfig game_low_fees() {
    GameConfig cfg = game();
    cfg.sigma1 = 8000;
    cfg.gamma1 = 8000;
    return cfg;
}

}  // namespace iotchan::fixtures
