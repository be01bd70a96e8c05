#pragma once

#include "iotchan/game.hpp"
#include "iotchan/scenario.hpp"

namespace iotchan {

// ---------------------------------------------------------------------------
// Bridge between the simulation and the game model. In the game, alpha is the
// gateway's balance (Player 1 publishes), so a channel state (balance_a,
// balance_b) maps to the game pair (balance_b, balance_a). TX1 is the current
// state, TX2 the revoked state maximizing the gateway's take, TX3 the one
// minimizing it.
// ---------------------------------------------------------------------------

inline std::vector<std::pair<Satoshi, Satoshi>> scenario_states(
    const ScenarioConfig& cfg) {
    std::vector<std::pair<Satoshi, Satoshi>> states;
    states.emplace_back(cfg.params.omega_a, cfg.params.omega_b);
    for (Satoshi balance_a : cfg.updates)
        states.emplace_back(balance_a, cfg.params.capacity() - balance_a);
    return states;
}

inline bool gateway_bribes_pool(const ScenarioConfig& cfg, StrategyKind kind) {
    return cfg.gateway.kind == kind;
}

inline GameConfig game_from_scenario(const ScenarioConfig& cfg) {
    auto states = scenario_states(cfg);
    if (states.size() < 3)
        throw GameError("a game mapping needs at least three channel states");
    auto alpha_of = [](const std::pair<Satoshi, Satoshi>& s) { return s.second; };
    GameConfig game;
    game.tx1 = {alpha_of(states.back()), states.back().first};
    auto hi = states.front(), lo = states.front();
    for (const auto& s : states) {
        if (alpha_of(s) > alpha_of(hi)) hi = s;
        if (alpha_of(s) < alpha_of(lo)) lo = s;
    }
    game.tx2 = {alpha_of(hi), hi.first};
    game.tx3 = {alpha_of(lo), lo.first};
    game.sigma1 = cfg.params.sigma1;
    game.gamma1 = cfg.params.gamma1;
    const Satoshi gap = game.alpha_gap();
    game.sigma2 = gateway_bribes_pool(cfg, StrategyKind::ColludePublisher)
                      ? cfg.gateway.bribe
                      : gap;
    game.gamma2 = gateway_bribes_pool(cfg, StrategyKind::ColludeWatchdog)
                      ? cfg.gateway.bribe
                      : gap;
    game.k1 = cfg.params.k1;
    game.k2 = cfg.params.k2;
    game.validate();
    return game;
}

/// Which game state (1..3) a published channel state corresponds to, by its
/// gateway-side balance.
inline int game_state_of(const GameConfig& game, Satoshi balance_a, Satoshi balance_b) {
    StatePair pair{balance_b, balance_a};
    if (pair == game.tx1) return 1;
    if (pair == game.tx2) return 2;
    if (pair == game.tx3) return 3;
    throw GameError("published state does not map to a game state");
}

/// Follow labeled edges from the root; the path is a sequence of actions.
inline Payoff4 leaf_at(const GameTree& tree, const std::vector<std::string>& path) {
    const GameNode* node = &tree.root();
    for (const std::string& action : path) {
        const GameNode* next = nullptr;
        for (const auto& [label, child] : node->edges)
            if (label == action) next = &tree.nodes[child];
        if (!next) throw GameError("no action " + action + " on the path");
        node = next;
    }
    if (!node->is_leaf()) throw GameError("path does not end at a leaf");
    return *node->payoff;
}

struct LeafComparison {
    Payoff4 expected{};          // per the game tree (pool entries per member)
    Satoshi gateway = 0;         // settled values
    Satoshi device = 0;
    Satoshi publisher_pool = 0;  // pool totals; compare against leaf * K
    Satoshi watchdog_pool = 0;
    bool matches = false;
};

/// Compare a settled scenario against a game-tree leaf. Pool payoffs in the
/// tree are per-member averages, so pool totals are leaf value times pool
/// size. `slack` absorbs configured miner fees.
inline LeafComparison compare_settlement(const GameConfig& game, const GameTree& tree,
                                         const std::vector<std::string>& path,
                                         const std::map<std::string, Satoshi>& settled,
                                         Satoshi slack = 0) {
    LeafComparison cmp;
    cmp.expected = leaf_at(tree, path);
    cmp.gateway = settled.contains("gateway") ? settled.at("gateway") : 0;
    cmp.device = settled.contains("device") ? settled.at("device") : 0;
    cmp.publisher_pool = pool_total(settled, "publisher_");
    cmp.watchdog_pool = pool_total(settled, "watchdog_");
    auto close = [&](Satoshi actual, const Rational& want) {
        Rational diff = Rational(actual) - want;
        if (diff < 0) diff = -diff;
        return diff <= Rational(slack);
    };
    cmp.matches = close(cmp.gateway, cmp.expected[0]) &&
                  close(cmp.device, cmp.expected[1]) &&
                  close(cmp.publisher_pool, cmp.expected[2] * game.k1) &&
                  close(cmp.watchdog_pool, cmp.expected[3] * game.k2);
    return cmp;
}

}  // namespace iotchan
