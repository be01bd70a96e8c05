#include "catch_amalgamated.hpp"

#include "iotchan/game.hpp"
#include "random_configs.hpp"

using namespace iotchan;

namespace {

GameConfig fixture() {
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

}  // namespace

TEST_CASE("config validation enforces the state ordering") {
    GameConfig cfg = fixture();
    CHECK_NOTHROW(cfg.validate());
    GameConfig bad = cfg;
    std::swap(bad.tx2, bad.tx3);
    CHECK_THROWS_AS(bad.validate(), GameError);
    bad = cfg;
    bad.tx2.beta += 1;  // breaks the constant sum
    CHECK_THROWS_AS(bad.validate(), GameError);
}

TEST_CASE("payoff matrix reproduces the fixture values") {
    PayoffMatrix m = payoff_matrix(fixture());
    CHECK(m.cell[0][1] == PayoffCell{100000, 0});   // II follows, I published TX2
    CHECK(m.cell[0][0] == PayoffCell{40000, 60000});  // both follow
    for (int col = 0; col < 3; ++col) CHECK(m.cell[2][col].ii == 0);
    CHECK(m.cell[1][1] == PayoffCell{20000, 80000});
    CHECK(m.cell[0][2] == PayoffCell{100000, 0});
}

TEST_CASE("all-follow is a matrix equilibrium; lazy punishment is not") {
    PayoffMatrix m = payoff_matrix(fixture());
    auto eq = matrix_equilibrium(m);
    CHECK(std::find(eq.begin(), eq.end(), std::make_pair(0, 0)) != eq.end());
    // (D_1, TX2): following instead earns the whole channel.
    CHECK(std::find(eq.begin(), eq.end(), std::make_pair(1, 1)) == eq.end());
}

TEST_CASE("a constant matrix makes every profile an equilibrium") {
    PayoffMatrix m;
    for (auto& row : m.cell)
        for (auto& cell : row) cell = PayoffCell{5, 5};
    CHECK(matrix_equilibrium(m).size() == 9);
}

TEST_CASE("matrix entries are symbolically exact for random configs") {
    std::mt19937_64 rng(31337);
    for (int round = 0; round < 200; ++round) {
        GameConfig cfg = testgen::random_game_config(rng);
        PayoffMatrix m = payoff_matrix(cfg);
        const StatePair s[3] = {cfg.tx1, cfg.tx2, cfg.tx3};
        for (int col = 0; col < 3; ++col) {
            PayoffCell follow = col == 0 ? PayoffCell{s[0].beta, s[0].alpha}
                                         : PayoffCell{s[col].total(), 0};
            CHECK(m.cell[0][col] == follow);
            CHECK(m.cell[1][col] == PayoffCell{s[col].beta, s[col].alpha});
            CHECK(m.cell[2][col] == PayoffCell{0, s[col].alpha});
        }
        auto eq = matrix_equilibrium(m);
        CHECK(std::find(eq.begin(), eq.end(), std::make_pair(0, 0)) != eq.end());
    }
}

TEST_CASE("the gateway-first tree reproduces the published leaves") {
    GameConfig cfg = fixture();
    GameTree tree = build_tree_p1_first(cfg);
    CHECK(tree.nodes.size() == 22);

    // Everyone follows after a revoked publish: the gateway loses everything.
    Profile p = all_follow_profile(tree);
    p["P1:publish"] = "S2";
    Payoff4 leaf = play(tree, p);
    CHECK(leaf == Payoff4{0, Rational(76000), Rational(2400), Rational(2400)});

    // Watchdog deviates after an honest publish: nothing changes hands.
    p = all_follow_profile(tree);
    p["P4:report"] = "D";
    CHECK(play(tree, p) == Payoff4{Rational(60000), 0, 0, 0});

    // Watchdog bribed after the revoked publish.
    p["P1:publish"] = "S2";
    CHECK(play(tree, p) ==
          Payoff4{Rational(50000), 0, 0, Rational(10000)});

    // Publisher bribed: the device's recovery never lands.
    p = all_follow_profile(tree);
    p["P1:publish"] = "S2";
    p["P3:publish"] = "D";
    CHECK(play(tree, p) ==
          Payoff4{Rational(30000), Rational(20000), Rational(10000), 0});
}

TEST_CASE("the device-first tree reproduces the published leaves") {
    GameConfig cfg = fixture();
    GameTree tree = build_tree_p2_first(cfg);
    CHECK(tree.nodes.size() == 16);
    REQUIRE_FALSE(tree.warnings.empty());

    Profile p = all_follow_profile(tree);
    CHECK(play(tree, p) == Payoff4{Rational(60000), Rational(28000), Rational(2400), 0});

    // Publisher denial of service resets the game.
    p["P3:relay"] = "D";
    CHECK(play(tree, p) == Payoff4{0, 0, 0, 0});

    // Revoked publish punished by the gateway.
    p = all_follow_profile(tree);
    p["P2:publish"] = "S2";
    CHECK(play(tree, p) == Payoff4{Rational(88000), 0, Rational(2400), 0});

    // The S3 deviation leaf is normalized to the S1/S2 pattern.
    p = all_follow_profile(tree);
    p["P2:publish"] = "S3";
    p["P1:respond:S3"] = "D";
    CHECK(play(tree, p) ==
          Payoff4{Rational(30000), Rational(70000 - 50000), Rational(10000), 0});
}

TEST_CASE("information sets follow the dashed groupings") {
    GameConfig cfg = fixture();
    auto sets1 = build_tree_p1_first(cfg).info_sets();
    // One shared set each for the pools, three singletons for the device.
    CHECK(sets1.size() == 1 + 1 + 3 + 1);
    CHECK(sets1.at("P4:report").first == PlayerId::P4);
    CHECK(sets1.at("P3:publish").first == PlayerId::P3);
    CHECK(sets1.contains("P2:respond:S1"));
    CHECK(sets1.contains("P2:respond:S3"));

    auto sets2 = build_tree_p2_first(cfg).info_sets();
    CHECK(sets2.size() == 1 + 1 + 3);
    CHECK(sets2.at("P3:relay").first == PlayerId::P3);
}

TEST_CASE("all-follow equilibrium holds exactly above the fee bounds") {
    GameConfig cfg = fixture().with_max_bribes();
    GameTree p1 = build_tree_p1_first(cfg);
    GameTree p2 = build_tree_p2_first(cfg);
    CHECK(equilibrium_check(p1, all_follow_profile(p1), cfg).is_equilibrium);
    CHECK(equilibrium_check(p2, all_follow_profile(p2), cfg).is_equilibrium);

    GameConfig low = cfg;
    low.sigma1 = 8000;  // below the 10000 bound
    GameTree p1_low = build_tree_p1_first(low);
    EquilibriumReport rep = equilibrium_check(p1_low, all_follow_profile(p1_low), low);
    CHECK_FALSE(rep.is_equilibrium);
    bool publisher_collusion = false;
    for (const Deviation& d : rep.profitable_deviations)
        publisher_collusion |= d.player == PlayerId::P3 &&
                               d.description.find("collude") != std::string::npos;
    CHECK(publisher_collusion);
    // Per-member share 10000 against the 8000 fee.
    CHECK(rep.profitable_deviations.front().gain == Rational(2000));
}

TEST_CASE("equilibrium check demands a complete profile") {
    GameConfig cfg = fixture();
    GameTree tree = build_tree_p1_first(cfg);
    Profile p = all_follow_profile(tree);
    p.erase("P3:publish");
    CHECK_THROWS_AS(equilibrium_check(tree, p, cfg), GameError);
    p = all_follow_profile(tree);
    p["P4:report"] = "Q";
    CHECK_THROWS_AS(equilibrium_check(tree, p, cfg), GameError);
}

TEST_CASE("minimum fees are the alpha swing over the pool size") {
    auto [sigma_min, gamma_min] = min_fees(fixture());
    CHECK(sigma_min == Rational(10000));
    CHECK(gamma_min == Rational(10000));

    GameConfig solo = fixture();
    solo.k1 = 1;
    CHECK(min_fees(solo).first == Rational(50000));

    // Minimal legal gap of 2 * k1 gives an exact small bound.
    GameConfig tight;
    tight.k1 = 5;
    tight.k2 = 5;
    tight.tx1 = {5, 95};
    tight.tx2 = {12, 88};
    tight.tx3 = {2, 98};
    tight.sigma1 = 3;
    tight.gamma1 = 3;
    tight.sigma2 = 10;
    tight.gamma2 = 10;
    CHECK(min_fees(tight).first == Rational(2));
    CHECK(min_fees(tight) == min_fees(tight.with_max_bribes()));
}

TEST_CASE("leaf payoffs never exceed the published state's total") {
    std::mt19937_64 rng(4242);
    for (int round = 0; round < 100; ++round) {
        GameConfig cfg = testgen::random_game_config(rng);
        for (const GameTree& tree :
             {build_tree_p1_first(cfg), build_tree_p2_first(cfg)}) {
            const GameNode& root = tree.root();
            for (const auto& [action, child] : root.edges) {
                const StatePair state = action == "S1"   ? cfg.tx1
                                        : action == "S2" ? cfg.tx2
                                                         : cfg.tx3;
                // Walk the whole subtree under this publish choice.
                std::vector<std::size_t> stack{child};
                while (!stack.empty()) {
                    std::size_t at = stack.back();
                    stack.pop_back();
                    const GameNode& node = tree.nodes[at];
                    if (node.is_leaf()) {
                        Rational sum = (*node.payoff)[0] + (*node.payoff)[1] +
                                       (*node.payoff)[2] + (*node.payoff)[3];
                        CHECK(sum <= Rational(state.total()));
                    } else {
                        for (const auto& [label, grandchild] : node.edges)
                            stack.push_back(grandchild);
                    }
                }
            }
        }
    }
}

TEST_CASE("backward induction favors following in the fixture") {
    GameConfig cfg = fixture().with_max_bribes();
    Payoff4 p1 = backward_induction(build_tree_p1_first(cfg));
    // Under perfect information the gateway publishes the current state.
    CHECK(p1[0] == Rational(60000));
}
