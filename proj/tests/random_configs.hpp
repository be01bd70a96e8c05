#pragma once

// Test-only generator of valid game configurations. Draws three ordered
// states over a random capacity and fees on both sides of the collusion
// bound; sigma1 stays within beta1 so the all-follow path never leaves the
// device out of pocket.

#include <random>

#include "iotchan/game.hpp"

namespace iotchan::testgen {

inline GameConfig random_game_config(std::mt19937_64& rng) {
    auto draw = [&](Satoshi lo, Satoshi hi) {
        return lo + static_cast<Satoshi>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
    };
    GameConfig cfg;
    const Satoshi capacity = draw(1000, 1'000'000);
    // Three strictly ordered alphas within the capacity.
    Satoshi a3 = draw(0, capacity - 3);
    Satoshi a1 = draw(a3 + 1, capacity - 2);
    Satoshi a2 = draw(a1 + 1, capacity - 1);
    cfg.tx1 = {a1, capacity - a1};
    cfg.tx2 = {a2, capacity - a2};
    cfg.tx3 = {a3, capacity - a3};
    cfg.k1 = static_cast<int>(1 + rng() % 10);
    cfg.k2 = static_cast<int>(1 + rng() % 10);

    // Fees straddle the bound but may not exceed what the device holds in
    // the current state.
    const Satoshi beta1 = cfg.tx1.beta;
    const Satoshi gap = cfg.alpha_gap();
    auto fee_near_bound = [&](int k) {
        Satoshi bound_ceiling = gap / k + 2;
        Satoshi hi = std::min<Satoshi>(beta1, bound_ceiling + gap / std::max(1, k / 2 + 1));
        if (hi < 0) hi = 0;
        return draw(0, hi);
    };
    cfg.sigma1 = fee_near_bound(cfg.k1);
    cfg.gamma1 = fee_near_bound(cfg.k2);
    cfg.sigma2 = gap;
    cfg.gamma2 = gap;
    cfg.validate();
    return cfg;
}

}  // namespace iotchan::testgen
