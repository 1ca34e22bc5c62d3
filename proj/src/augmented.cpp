#include "riskgrad/augmented.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "riskgrad/errors.hpp"
#include "riskgrad/risk.hpp"

namespace riskgrad {

AugmentedMdp::AugmentedMdp(FiniteMdp base, ConstraintKind kind, double alpha)
    : base_(std::move(base)), kind_(kind), alpha_(alpha) {
    if (kind_ == ConstraintKind::cvar) {
        check_confidence(alpha_);
    }
}

double AugmentedMdp::next_budget(double s, StateId x, ActionId a) const {
    return (s - base_.dcost(x, a)) / base_.gamma();
}

AugmentedStepResult AugmentedMdp::step(const AugmentedState& state, ActionId action, RandomSource& rng) const {
    if (state.absorbed || base_.is_target(state.x)) {
        throw TerminalStep("augmented step requested at the target state");
    }
    const StateId next = base_.sample_next(state.x, action, rng);
    return {{next, next_budget(state.s, state.x, action), false}, base_.cost(state.x, action)};
}

double AugmentedMdp::terminal_cost(double s, double lambda) const {
    if (kind_ == ConstraintKind::cvar) {
        return lambda * std::max(-s, 0.0) / (1.0 - alpha_);
    }
    return s <= 0.0 ? lambda : 0.0;
}

double AugmentedMdp::cost(const AugmentedState& state, ActionId action, double lambda) const {
    if (state.absorbed) {
        return 0.0;
    }
    if (base_.is_target(state.x)) {
        return terminal_cost(state.s, lambda);
    }
    return base_.cost(state.x, action);
}

AugmentedStepResult augmented_step(const AugmentedMdp& mdp, const AugmentedState& state, ActionId action,
                                   RandomSource& rng) {
    return mdp.step(state, action, rng);
}

double terminal_cost(const AugmentedMdp& mdp, double s, double lambda) { return mdp.terminal_cost(s, lambda); }

AugmentedTrajectory sample_augmented_episode(const AugmentedMdp& mdp, const Policy& policy, double s0,
                                             RandomSource& rng) {
    const auto& base = mdp.base();
    AugmentedTrajectory traj;
    traj.s0 = s0;
    AugmentedState state = mdp.initial_state(s0);
    double discount = 1.0;
    while (!base.is_target(state.x)) {
        if (traj.steps.size() >= base.horizon()) {
            throw HorizonExceeded("target not reached within " + std::to_string(base.horizon()) + " steps");
        }
        const ActionId a = policy.sample(state.x, state.s, rng);
        const double c = base.cost(state.x, a);
        const double d = base.dcost(state.x, a);
        traj.steps.push_back({state.x, state.s, a, c, d});
        traj.g_total += discount * c;
        traj.j_total += discount * d;
        discount *= base.gamma();
        state = mdp.step(state, a, rng).next;
    }
    traj.terminal_s = state.s;
    return traj;
}

double augmented_trajectory_cost(const AugmentedMdp& mdp, const AugmentedTrajectory& traj, double lambda) {
    double total = 0.0;
    double discount = 1.0;
    for (const auto& step : traj.steps) {
        total += discount * step.cost;
        discount *= mdp.gamma();
    }
    return total + discount * mdp.terminal_cost(traj.terminal_s, lambda);
}

}  // namespace riskgrad
