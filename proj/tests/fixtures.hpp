#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "riskgrad/ac.hpp"
#include "riskgrad/augmented.hpp"
#include "riskgrad/mdp.hpp"
#include "riskgrad/oracle.hpp"
#include "riskgrad/policy.hpp"
#include "riskgrad/random.hpp"
#include "riskgrad/schedule.hpp"

namespace fixtures {

using riskgrad::FiniteMdp;

inline FiniteMdp::Tables empty_tables(std::size_t n_states, std::size_t n_actions, double gamma, std::size_t horizon) {
    FiniteMdp::Tables t;
    t.n_states = n_states;
    t.n_actions = n_actions;
    t.gamma = gamma;
    t.horizon = horizon;
    t.cost.assign(n_states, std::vector<double>(n_actions, 0.0));
    t.dcost.assign(n_states, std::vector<double>(n_actions, 0.0));
    t.transition.assign(n_states, std::vector<std::vector<double>>(n_actions, std::vector<double>(n_states, 0.0)));
    t.initial = 0;
    t.target = n_states - 1;
    for (std::size_t a = 0; a < n_actions; ++a) {
        t.transition[n_states - 1][a][n_states - 1] = 1.0;
    }
    return t;
}

/// x0 -> target under every action, cost `c`, constraint cost `d`.
inline FiniteMdp one_step(double c = 1.0, double d = 0.0, double gamma = 0.95, std::size_t n_actions = 2) {
    auto t = empty_tables(2, n_actions, gamma, 1);
    for (std::size_t a = 0; a < n_actions; ++a) {
        t.cost[0][a] = c;
        t.dcost[0][a] = d;
        t.transition[0][a][1] = 1.0;
    }
    return FiniteMdp(t);
}

/// Deterministic chain of `n` transient states with unit cost and unit constraint cost, one action.
inline FiniteMdp chain(std::size_t n, double gamma) {
    auto t = empty_tables(n + 1, 1, gamma, n);
    for (std::size_t x = 0; x < n; ++x) {
        t.cost[x][0] = 1.0;
        t.dcost[x][0] = 1.0;
        t.transition[x][0][x + 1] = 1.0;
    }
    return FiniteMdp(t);
}

/// One stochastic step: x0 -> x1 w.p. p, -> x2 otherwise, then both absorb. Costs 1 and 3.
inline FiniteMdp coin(double p, double gamma = 1.0) {
    auto t = empty_tables(4, 1, gamma, 2);
    t.transition[0][0][1] = p;
    t.transition[0][0][2] = 1.0 - p;
    t.cost[1][0] = t.dcost[1][0] = 1.0;
    t.cost[2][0] = t.dcost[2][0] = 3.0;
    t.transition[1][0][3] = 1.0;
    t.transition[2][0][3] = 1.0;
    return FiniteMdp(t);
}

/// Two steps x0 -> x1 -> target with two actions whose costs differ.
inline FiniteMdp two_step(double gamma = 0.9) {
    auto t = empty_tables(3, 2, gamma, 2);
    t.cost[0] = {1.0, 2.0};
    t.dcost[0] = {0.5, 2.0};
    t.cost[1] = {0.0, 1.5};
    t.dcost[1] = {1.0, 0.25};
    for (std::size_t a = 0; a < 2; ++a) {
        t.transition[0][a][1] = 1.0;
        t.transition[1][a][2] = 1.0;
    }
    return FiniteMdp(t);
}

/**
 * Random acyclic MDP over `transient` states plus the target; state i moves to
 * a later state or the target, so every episode ends within `transient` steps.
 */
inline FiniteMdp random_dag(std::uint64_t seed, std::size_t transient = 3, std::size_t n_actions = 2,
                            double gamma = 0.9) {
    riskgrad::RandomSource rng(seed);
    const std::size_t n = transient + 1;
    auto t = empty_tables(n, n_actions, gamma, transient);
    for (std::size_t x = 0; x < transient; ++x) {
        for (std::size_t a = 0; a < n_actions; ++a) {
            t.cost[x][a] = 2.0 * rng.uniform();
            t.dcost[x][a] = 0.25 * static_cast<double>(static_cast<int>(8.0 * rng.uniform()));
            double total = 0.0;
            for (std::size_t y = x + 1; y < n; ++y) {
                const double w = 0.1 + rng.uniform();
                t.transition[x][a][y] = w;
                total += w;
            }
            for (std::size_t y = x + 1; y < n; ++y) {
                t.transition[x][a][y] /= total;
            }
        }
    }
    return FiniteMdp(t);
}

inline riskgrad::Policy tabular_policy(const FiniteMdp& mdp, double box = 20.0) {
    return riskgrad::Policy(std::make_shared<const riskgrad::FeatureMap>(riskgrad::FeatureMap::tabular(mdp.n_states())),
                            mdp.n_actions(), box);
}

inline void randomize(riskgrad::Policy& policy, riskgrad::RandomSource& rng, double scale = 1.0) {
    for (auto& w : policy.params().theta) {
        w = scale * (2.0 * rng.uniform() - 1.0);
    }
}

/// One-hot critic features over every reachable (x, s) of the closure.
inline std::shared_ptr<const riskgrad::FeatureMap> closure_features(const riskgrad::DiscretizedAugmentation& aug) {
    return std::make_shared<const riskgrad::FeatureMap>(
        riskgrad::FeatureMap::tabular_augmented(aug.mdp().base().n_states(), aug.s_grid()));
}

/// Critic weights that reproduce `values` (indexed like the closure) under closure_features.
inline riskgrad::CriticWeights weights_from_values(const riskgrad::DiscretizedAugmentation& aug,
                                                   std::shared_ptr<const riskgrad::FeatureMap> features,
                                                   const std::vector<double>& values) {
    auto w = riskgrad::CriticWeights::zeros(features);
    for (std::size_t i = 0; i < aug.size(); ++i) {
        const auto& st = aug.state(i);
        if (st.absorbed) continue;
        const auto phi = (*features)(st.x, st.s);
        for (std::size_t j = 0; j < phi.size(); ++j) {
            if (phi[j] == 1.0) w.v[j] = values[i];
        }
    }
    return w;
}

/**
 * Tabular-style TD(0): consecutive episodes from (x0, s0), each ending with the
 * target -> sink transition, critic updated with zeta(k) at global step k.
 */
inline riskgrad::CriticWeights run_td(const riskgrad::AugmentedMdp& mdp, const riskgrad::Policy& policy, double s0,
                                      double lambda, riskgrad::CriticWeights critic, std::size_t steps,
                                      const riskgrad::PowerStep& zeta, riskgrad::RandomSource& rng) {
    std::size_t k = 0;
    while (k < steps) {
        const auto episode = riskgrad::sample_transitions(mdp, policy, s0, lambda, rng);
        for (const auto& t : episode.transitions) {
            if (k == steps) break;
            ++k;
            critic = riskgrad::critic_update(critic, t, mdp.gamma(), zeta(k));
        }
    }
    return critic;
}

}  // namespace fixtures
