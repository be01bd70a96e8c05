#pragma once

#include <algorithm>
#include <map>

#include <boost/rational.hpp>

#include "iotchan/ledger.hpp"

namespace iotchan {

using Rational = boost::rational<long long>;

// ---------------------------------------------------------------------------
// The four-player channel game: P1 the gateway (chooses which state to
// publish), P2 the device, P3 the publisher pool, P4 the watchdog pool.
// Alpha is P1's balance in a state, beta is P2's.
// ---------------------------------------------------------------------------

struct GameError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StatePair {
    Satoshi alpha = 0;
    Satoshi beta = 0;

    bool operator==(const StatePair&) const = default;
    Satoshi total() const { return alpha + beta; }
};

struct GameConfig {
    StatePair tx1;  // current state
    StatePair tx2;  // previous state maximizing alpha
    StatePair tx3;  // previous state minimizing alpha
    Satoshi sigma1 = 0;  // publisher fee
    Satoshi sigma2 = 0;  // publisher-pool bribe on offer
    Satoshi gamma1 = 0;  // watchdog fee
    Satoshi gamma2 = 0;  // watchdog-pool bribe on offer
    int k1 = 1;
    int k2 = 1;

    Satoshi alpha_gap() const { return tx2.alpha - tx3.alpha; }

    void validate() const {
        if (!(tx2.alpha > tx1.alpha && tx1.alpha > tx3.alpha))
            throw GameError("states must satisfy alpha2 > alpha1 > alpha3");
        if (!(tx3.beta > tx1.beta && tx1.beta > tx2.beta))
            throw GameError("states must satisfy beta3 > beta1 > beta2");
        if (tx1.total() != tx2.total() || tx1.total() != tx3.total())
            throw GameError("channel total must be constant across states");
        if (tx3.alpha < 0 || tx2.beta < 0)
            throw GameError("balances must be non-negative");
        if (sigma1 < 0 || sigma2 < 0 || gamma1 < 0 || gamma2 < 0)
            throw GameError("fees and bribes must be non-negative");
        if (k1 < 1 || k2 < 1) throw GameError("pool sizes must be positive");
    }

    GameConfig with_max_bribes() const {
        GameConfig c = *this;
        c.sigma2 = alpha_gap();
        c.gamma2 = alpha_gap();
        return c;
    }
};

/// Strict collusion thresholds: fees must exceed (alpha2 - alpha3) / K.
inline std::pair<Rational, Rational> min_fees(const GameConfig& config) {
    config.validate();
    return {Rational(config.alpha_gap(), config.k1),
            Rational(config.alpha_gap(), config.k2)};
}

// ---------------------------------------------------------------------------
// Normal-form payoff matrix. Rows are Player II's response (F, D_1, D_2),
// columns are Player I's publish choice (TX1, TX2, TX3); cells hold
// (payoff_II, payoff_I).
// ---------------------------------------------------------------------------

struct PayoffCell {
    Satoshi ii = 0;
    Satoshi i = 0;

    bool operator==(const PayoffCell&) const = default;
};

struct PayoffMatrix {
    std::array<std::array<PayoffCell, 3>, 3> cell{};

    static constexpr const char* row_names[3] = {"F", "D_1", "D_2"};
    static constexpr const char* col_names[3] = {"TX1", "TX2", "TX3"};
};

inline PayoffMatrix payoff_matrix(const GameConfig& config) {
    config.validate();
    const StatePair s[3] = {config.tx1, config.tx2, config.tx3};
    PayoffMatrix m;
    for (int col = 0; col < 3; ++col) {
        const bool current = col == 0;
        // Follow: punish a revoked publish by taking everything.
        m.cell[0][col] = current ? PayoffCell{s[0].beta, s[0].alpha}
                                 : PayoffCell{s[col].total(), 0};
        // Deviate_1: take only the direct output.
        m.cell[1][col] = PayoffCell{s[col].beta, s[col].alpha};
        // Deviate_2: do nothing.
        m.cell[2][col] = PayoffCell{0, s[col].alpha};
    }
    return m;
}

/// All pure-strategy Nash profiles (row, col); ties count as equilibria.
inline std::vector<std::pair<int, int>> matrix_equilibrium(const PayoffMatrix& m) {
    std::vector<std::pair<int, int>> out;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            bool best_ii = true, best_i = true;
            for (int r2 = 0; r2 < 3; ++r2)
                if (m.cell[r2][c].ii > m.cell[r][c].ii) best_ii = false;
            for (int c2 = 0; c2 < 3; ++c2)
                if (m.cell[r][c2].i > m.cell[r][c].i) best_i = false;
            if (best_ii && best_i) out.emplace_back(r, c);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Extensive forms.
// ---------------------------------------------------------------------------

enum class PlayerId : int { P1 = 0, P2 = 1, P3 = 2, P4 = 3 };

inline const char* player_name(PlayerId p) {
    switch (p) {
        case PlayerId::P1: return "P1";
        case PlayerId::P2: return "P2";
        case PlayerId::P3: return "P3";
        case PlayerId::P4: return "P4";
    }
    return "?";
}

using Payoff4 = std::array<Rational, 4>;

struct GameNode {
    PlayerId player = PlayerId::P1;
    std::string info_set;  // internal nodes only; dashed sets share one id
    std::vector<std::pair<std::string, std::size_t>> edges;
    std::optional<Payoff4> payoff;  // leaves only

    bool is_leaf() const { return payoff.has_value(); }
};

struct GameTree {
    std::string name;
    std::vector<GameNode> nodes;  // nodes[0] is the root
    std::vector<std::string> warnings;

    const GameNode& root() const { return nodes.front(); }

    std::map<std::string, std::pair<PlayerId, std::vector<std::string>>> info_sets() const {
        std::map<std::string, std::pair<PlayerId, std::vector<std::string>>> out;
        for (const GameNode& n : nodes) {
            if (n.is_leaf()) continue;
            std::vector<std::string> actions;
            for (const auto& [label, child] : n.edges) actions.push_back(label);
            auto it = out.find(n.info_set);
            if (it == out.end()) {
                out.emplace(n.info_set, std::make_pair(n.player, actions));
            } else if (it->second.first != n.player || it->second.second != actions) {
                throw GameError("information set " + n.info_set +
                                " mixes players or action sets");
            }
        }
        return out;
    }
};

namespace detail {

class TreeBuilder {
public:
    explicit TreeBuilder(GameTree& tree) : tree_(tree) {}

    std::size_t node(PlayerId player, std::string info_set) {
        tree_.nodes.push_back(GameNode{player, std::move(info_set), {}, std::nullopt});
        return tree_.nodes.size() - 1;
    }

    std::size_t leaf(Payoff4 payoff) {
        tree_.nodes.push_back(GameNode{PlayerId::P1, {}, {}, payoff});
        return tree_.nodes.size() - 1;
    }

    void edge(std::size_t from, const std::string& label, std::size_t to) {
        tree_.nodes[from].edges.emplace_back(label, to);
    }

private:
    GameTree& tree_;
};

}  // namespace detail

/// Gateway moves first: it publishes a state, the watchdog pool decides
/// whether to report it, the device decides whether to respond, and the
/// publisher pool decides whether to broadcast the response. The watchdog and
/// publisher pools each act under one information set (they cannot tell which
/// state was published); the device is told by the alert.
inline GameTree build_tree_p1_first(const GameConfig& cfg) {
    cfg.validate();
    GameTree tree;
    tree.name = "p1_first";
    detail::TreeBuilder b(tree);
    const Rational sig1_share(cfg.sigma1, cfg.k1);
    const Rational sig2_share(cfg.sigma2, cfg.k1);
    const Rational gam1_share(cfg.gamma1, cfg.k2);
    const Rational gam2_share(cfg.gamma2, cfg.k2);
    const StatePair s[3] = {cfg.tx1, cfg.tx2, cfg.tx3};

    std::size_t root = b.node(PlayerId::P1, "P1:publish");
    for (int i = 0; i < 3; ++i) {
        const Satoshi alpha = s[i].alpha, beta = s[i].beta, total = s[i].total();
        const bool current = i == 0;
        std::size_t watch = b.node(PlayerId::P4, "P4:report");
        b.edge(root, "S" + std::to_string(i + 1), watch);

        std::size_t respond =
            b.node(PlayerId::P2, "P2:respond:S" + std::to_string(i + 1));
        b.edge(watch, "F", respond);
        b.edge(watch, "D",
               current ? b.leaf({Rational(alpha), 0, 0, 0})
                       : b.leaf({Rational(total) - cfg.gamma2, 0, 0, gam2_share}));

        std::size_t publish = b.node(PlayerId::P3, "P3:publish");
        b.edge(respond, "F", publish);
        b.edge(respond, "D",
               current ? b.leaf({Rational(alpha), 0, 0, 0})
                       : b.leaf({Rational(total), 0, 0, 0}));

        b.edge(publish, "F",
               current ? b.leaf({Rational(alpha), Rational(beta) - cfg.sigma1, sig1_share, 0})
                       : b.leaf({0, Rational(total) - cfg.sigma1 - cfg.gamma1, sig1_share,
                                 gam1_share}));
        b.edge(publish, "D",
               current ? b.leaf({Rational(alpha), 0, 0, 0})
                       : b.leaf({Rational(alpha) - cfg.sigma2, Rational(beta), sig2_share, 0}));
    }
    return tree;
}

/// Device moves first through the publisher pool; the gateway, watching the
/// chain itself, responds. The published figure reuses the TX2 balances in
/// the S3 deviation leaf; it is normalized here to the S1/S2 pattern and the
/// normalization is surfaced as a warning.
inline GameTree build_tree_p2_first(const GameConfig& cfg) {
    cfg.validate();
    GameTree tree;
    tree.name = "p2_first";
    tree.warnings.push_back("p2_first S3 deviation leaf normalized to alpha3/beta3");
    detail::TreeBuilder b(tree);
    const Rational sig1_share(cfg.sigma1, cfg.k1);
    const Rational sig2_share(cfg.sigma2, cfg.k1);
    const StatePair s[3] = {cfg.tx1, cfg.tx2, cfg.tx3};

    std::size_t root = b.node(PlayerId::P2, "P2:publish");
    for (int i = 0; i < 3; ++i) {
        const Satoshi alpha = s[i].alpha, beta = s[i].beta, total = s[i].total();
        const bool current = i == 0;
        std::size_t relay = b.node(PlayerId::P3, "P3:relay");
        b.edge(root, "S" + std::to_string(i + 1), relay);

        std::size_t respond =
            b.node(PlayerId::P1, "P1:respond:S" + std::to_string(i + 1));
        b.edge(relay, "F", respond);
        b.edge(relay, "D", b.leaf({0, 0, 0, 0}));

        b.edge(respond, "F",
               current ? b.leaf({Rational(alpha), Rational(beta) - cfg.sigma1, sig1_share, 0})
                       : b.leaf({Rational(total) - cfg.sigma1, 0, sig1_share, 0}));
        b.edge(respond, "D",
               current ? b.leaf({0, Rational(beta) - cfg.sigma2, sig2_share, 0})
                       : b.leaf({Rational(alpha), Rational(beta) - cfg.sigma2, sig2_share, 0}));
    }
    return tree;
}

// ---------------------------------------------------------------------------
// Equilibrium checking.
// ---------------------------------------------------------------------------

using Profile = std::map<std::string, std::string>;

/// The everyone-follows profile: P1 publishes the current state, everyone
/// else plays F everywhere.
inline Profile all_follow_profile(const GameTree& tree) {
    Profile p;
    for (const auto& [set, info] : tree.info_sets()) {
        const auto& actions = info.second;
        if (std::find(actions.begin(), actions.end(), "F") != actions.end())
            p[set] = "F";
        else
            p[set] = actions.front();  // publish sets list S1 first
    }
    return p;
}

inline Payoff4 play(const GameTree& tree, const Profile& profile) {
    const GameNode* node = &tree.root();
    while (!node->is_leaf()) {
        auto it = profile.find(node->info_set);
        if (it == profile.end())
            throw GameError("profile missing information set " + node->info_set);
        const std::string& action = it->second;
        const GameNode* next = nullptr;
        for (const auto& [label, child] : node->edges)
            if (label == action) next = &tree.nodes[child];
        if (!next)
            throw GameError("profile action " + action + " not available at " +
                            node->info_set);
        node = next;
    }
    return *node->payoff;
}

struct Deviation {
    PlayerId player;
    std::string description;
    Rational gain{0};
};

struct EquilibriumReport {
    bool is_equilibrium = false;
    Payoff4 outcome{};
    std::vector<Deviation> profitable_deviations;
};

/// A profile is an equilibrium when no player gains by unilaterally changing
/// the action at its information set(s), and no pool finds unanimous
/// collusion at least as attractive as its protocol fee. The pool test uses
/// the per-member bribe against the acting member's fee, with the bribe
/// capped by the alpha2 - alpha3 swing the briber could actually gain;
/// indifference already breaks the strict inequality the bounds demand.
inline EquilibriumReport equilibrium_check(const GameTree& tree, const Profile& profile,
                                           const GameConfig& cfg) {
    auto sets = tree.info_sets();
    for (const auto& [set, info] : sets) {
        auto it = profile.find(set);
        if (it == profile.end())
            throw GameError("incomplete profile: no action for " + set);
        const auto& actions = info.second;
        if (std::find(actions.begin(), actions.end(), it->second) == actions.end())
            throw GameError("incomplete profile: invalid action for " + set);
    }

    EquilibriumReport report;
    report.outcome = play(tree, profile);

    // Unilateral deviations: every alternative assignment over one player's
    // information sets.
    for (int p = 0; p < 4; ++p) {
        PlayerId player = static_cast<PlayerId>(p);
        std::vector<std::pair<std::string, std::vector<std::string>>> own;
        for (const auto& [set, info] : sets)
            if (info.first == player) own.emplace_back(set, info.second);
        if (own.empty()) continue;

        std::vector<std::size_t> choice(own.size(), 0);
        while (true) {
            Profile alt = profile;
            bool differs = false;
            for (std::size_t i = 0; i < own.size(); ++i) {
                alt[own[i].first] = own[i].second[choice[i]];
                if (alt[own[i].first] != profile.at(own[i].first)) differs = true;
            }
            if (differs) {
                Payoff4 alt_payoff = play(tree, alt);
                if (alt_payoff[p] > report.outcome[p]) {
                    std::string desc = std::string(player_name(player)) + " switches to {";
                    for (std::size_t i = 0; i < own.size(); ++i) {
                        if (i) desc += ", ";
                        desc += own[i].first + "=" + alt[own[i].first];
                    }
                    desc += "}";
                    report.profitable_deviations.push_back(
                        Deviation{player, desc, alt_payoff[p] - report.outcome[p]});
                }
            }
            std::size_t i = 0;
            for (; i < own.size(); ++i) {
                if (++choice[i] < own[i].second.size()) break;
                choice[i] = 0;
            }
            if (i == own.size()) break;
        }
    }

    // Pool collusion: unanimous defection bought by the counterparty's bribe.
    auto pool_collusion = [&](PlayerId pool, Satoshi bribe, Satoshi fee, int members,
                              const char* label) {
        bool present = false;
        for (const auto& [set, info] : sets) present = present || info.first == pool;
        if (!present) return;
        Satoshi capped = std::min(bribe, cfg.alpha_gap());
        Rational share(capped, members);
        if (share >= Rational(fee)) {
            report.profitable_deviations.push_back(Deviation{
                pool,
                std::string(player_name(pool)) + " colludes: per-member " + label +
                    " share matches or beats the protocol fee",
                share - Rational(fee)});
        }
    };
    pool_collusion(PlayerId::P3, cfg.sigma2, cfg.sigma1, cfg.k1, "bribe");
    pool_collusion(PlayerId::P4, cfg.gamma2, cfg.gamma1, cfg.k2, "bribe");

    report.is_equilibrium = report.profitable_deviations.empty();
    return report;
}

/// Perfect-information relaxation: backward induction treating every node as
/// its own singleton decision. Secondary diagnostic only; the real check
/// respects the dashed information sets.
inline Payoff4 backward_induction(const GameTree& tree, std::size_t index = 0) {
    const GameNode& node = tree.nodes[index];
    if (node.is_leaf()) return *node.payoff;
    Payoff4 best{};
    bool first = true;
    for (const auto& [label, child] : node.edges) {
        Payoff4 value = backward_induction(tree, child);
        if (first || value[static_cast<int>(node.player)] >
                         best[static_cast<int>(node.player)]) {
            best = value;
            first = false;
        }
    }
    return best;
}

inline std::string rational_string(const Rational& r) {
    if (r.denominator() == 1) return std::to_string(r.numerator());
    return std::to_string(r.numerator()) + "/" + std::to_string(r.denominator());
}

}  // namespace iotchan
