#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"

#include "riskgrad/policy.hpp"
#include "riskgrad/random.hpp"

namespace riskgrad {

/**
 * Finite MDP with a single initial state and an absorbing target state.
 *
 * States and actions are dense ids; `n_states` counts the target. Every
 * episode is required to hit the target within `horizon` steps.
 */
class FiniteMdp {
public:
    struct Tables {
        std::size_t n_states = 0;
        std::size_t n_actions = 0;
        double gamma = 1.0;
        std::size_t horizon = 0;
        std::vector<std::vector<double>> cost;                     // [x][a]
        std::vector<std::vector<double>> dcost;                    // [x][a]
        std::vector<std::vector<std::vector<double>>> transition;  // [x][a][x']
        StateId initial = 0;
        StateId target = 0;
    };

    struct Successor {
        StateId state;
        double probability;
    };

    explicit FiniteMdp(Tables tables);

    /// Reads {"n_states", "n_actions", "gamma", "horizon", "cost", "dcost", "transition", "initial", "target"}.
    static FiniteMdp from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;

    std::size_t n_states() const { return n_states_; }
    std::size_t n_actions() const { return n_actions_; }
    double gamma() const { return gamma_; }
    std::size_t horizon() const { return horizon_; }
    StateId initial() const { return initial_; }
    StateId target() const { return target_; }
    bool is_target(StateId x) const { return x == target_; }

    double cost(StateId x, ActionId a) const { return cost_[x * n_actions_ + a]; }
    double dcost(StateId x, ActionId a) const { return dcost_[x * n_actions_ + a]; }
    double transition(StateId x, ActionId a, StateId next) const {
        return transition_[(x * n_actions_ + a) * n_states_ + next];
    }
    std::span<const double> transition_row(StateId x, ActionId a) const {
        return std::span<const double>(transition_).subspan((x * n_actions_ + a) * n_states_, n_states_);
    }
    /// Nonzero entries of P(.|x,a).
    const std::vector<Successor>& successors(StateId x, ActionId a) const { return successors_[x * n_actions_ + a]; }

    double cost_bound() const { return cost_max_; }    ///< C_max
    double dcost_bound() const { return dcost_max_; }  ///< D_max

    StateId sample_next(StateId x, ActionId a, RandomSource& rng) const;

private:
    std::size_t n_states_;
    std::size_t n_actions_;
    double gamma_;
    std::size_t horizon_;
    StateId initial_;
    StateId target_;
    std::vector<double> cost_;
    std::vector<double> dcost_;
    std::vector<double> transition_;
    std::vector<std::vector<Successor>> successors_;
    double cost_max_ = 0.0;
    double dcost_max_ = 0.0;
};

struct Step {
    StateId state;
    ActionId action;
    double cost;
    double dcost;
};

/// One simulated episode from the initial state to the target.
struct Trajectory {
    std::vector<Step> steps;
    StateId terminal_state = 0;
    double g_total = 0.0;  ///< sum_k gamma^k C(x_k, a_k)
    double j_total = 0.0;  ///< sum_k gamma^k D(x_k, a_k)
    /// sum_k grad_theta log mu(a_k | x_k; theta); empty unless requested at sampling time.
    std::vector<double> score;

    std::size_t length() const { return steps.size(); }
};

/// Recomputes sum_k gamma^k C and sum_k gamma^k D from the step list.
std::pair<double, double> discounted_totals(const std::vector<Step>& steps, double gamma);

/// Rolls out `policy` from the initial state until the target; throws HorizonExceeded after `horizon` steps.
Trajectory sample_trajectory(const FiniteMdp& mdp, const Policy& policy, RandomSource& rng, bool track_score = false);

/// Fills `traj.score` with sum_k grad log mu(a_k|x_k).
void accumulate_score(const Policy& policy, Trajectory& traj);

struct OccupationSample {
    StateId state;
    std::size_t step_index;
};

/**
 * Draws x ~ d_gamma(.|x0) = (1 - gamma) sum_k gamma^k P(x_k = x).
 *
 * Simulates from x0 and stops after each step with probability 1 - gamma; the
 * target is absorbing, so it is returned when the stop falls after the hit.
 */
OccupationSample sample_occupation_state(const FiniteMdp& mdp, const Policy& policy, RandomSource& rng);

struct WeightedTrajectory {
    Trajectory trajectory;
    double probability;
};

struct Enumeration {
    std::vector<WeightedTrajectory> paths;
    /// Probability of paths still short of the target after max_len steps (dropped).
    double unterminated_mass = 0.0;
};

inline constexpr std::size_t kDefaultEnumerationBudget = 1'000'000;

/// All trajectories of length <= max_len with their exact probabilities P_theta(xi).
Enumeration enumerate_trajectories(const FiniteMdp& mdp, const Policy& policy, std::size_t max_len,
                                   std::size_t budget = kDefaultEnumerationBudget, bool track_score = false);

}  // namespace riskgrad
