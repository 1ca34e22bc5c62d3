#pragma once

#include <vector>

#include "riskgrad/mdp.hpp"
#include "riskgrad/policy.hpp"
#include "riskgrad/random.hpp"

namespace riskgrad {

enum class ConstraintKind { cvar, chance };

/**
 * State (x, s) of the augmented MDP. `absorbed` marks the zero-cost sink
 * entered one step after the target is hit; its value is identically zero.
 */
struct AugmentedState {
    StateId x = 0;
    double s = 0.0;
    bool absorbed = false;
};

struct AugmentedStepResult {
    AugmentedState next;
    double cost;  ///< C(x, a); interior costs do not depend on lambda
};

/**
 * Augmented MDP over (x, s) with s' = (s - D(x, a)) / gamma.
 *
 * CVaR variant: terminal cost lambda (-s)^+ / (1 - alpha), initial s = nu.
 * Chance variant: terminal cost lambda 1{s <= 0}, initial s = the threshold on J.
 * lambda is supplied at evaluation time, so one wrapper serves every iterate.
 */
class AugmentedMdp {
public:
    AugmentedMdp(FiniteMdp base, ConstraintKind kind, double alpha = 0.0);

    const FiniteMdp& base() const { return base_; }
    ConstraintKind kind() const { return kind_; }
    double alpha() const { return alpha_; }
    double gamma() const { return base_.gamma(); }

    AugmentedState initial_state(double s0) const { return {base_.initial(), s0, false}; }

    /// Throws TerminalStep at the target or the sink.
    AugmentedStepResult step(const AugmentedState& state, ActionId action, RandomSource& rng) const;
    /// Deterministic part of a step: s' given (s, x, a).
    double next_budget(double s, StateId x, ActionId a) const;

    double terminal_cost(double s, double lambda) const;
    /// C-bar_lambda(x, s, a): base cost inside, terminal cost at the target, zero in the sink.
    double cost(const AugmentedState& state, ActionId action, double lambda) const;
    /// The state that follows a target hit.
    static AugmentedState sink() { return {0, 0.0, true}; }

private:
    FiniteMdp base_;
    ConstraintKind kind_;
    double alpha_;
};

AugmentedStepResult augmented_step(const AugmentedMdp& mdp, const AugmentedState& state, ActionId action,
                                   RandomSource& rng);
double terminal_cost(const AugmentedMdp& mdp, double s, double lambda);

struct AugmentedStep {
    StateId x;
    double s;
    ActionId action;
    double cost;
    double dcost;
};

/// Episode on the augmented MDP, from (x0, s0) to (x_Tar, s_Tar).
struct AugmentedTrajectory {
    std::vector<AugmentedStep> steps;
    double s0 = 0.0;
    double terminal_s = 0.0;  ///< s_Tar
    double g_total = 0.0;
    double j_total = 0.0;
    std::size_t length() const { return steps.size(); }
};

/// Rolls out mu(a | x, s; theta) on the augmented MDP from (x0, s0).
AugmentedTrajectory sample_augmented_episode(const AugmentedMdp& mdp, const Policy& policy, double s0,
                                             RandomSource& rng);

/// sum_{k<T} gamma^k C(x_k, a_k) + gamma^T * terminal_cost(s_Tar, lambda).
double augmented_trajectory_cost(const AugmentedMdp& mdp, const AugmentedTrajectory& traj, double lambda);

}  // namespace riskgrad
