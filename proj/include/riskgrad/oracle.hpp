#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <vector>

#include "riskgrad/ac.hpp"
#include "riskgrad/augmented.hpp"
#include "riskgrad/mdp.hpp"
#include "riskgrad/policy.hpp"

namespace riskgrad {

/// L(nu, theta, lambda) = E[G] + lambda (nu + E[(J - nu)^+] / (1 - alpha) - beta), by exhaustive enumeration.
double exact_lagrangian(const FiniteMdp& mdp, const Policy& policy, double nu, double lambda, double alpha,
                        double beta);

struct ExactGradients {
    double nu_q1 = 0.0;  ///< lambda (1 - P(J >= nu) / (1 - alpha)), the lower subgradient endpoint
    double nu_q0 = 0.0;  ///< lambda (1 - P(J > nu) / (1 - alpha)), the upper endpoint
    std::vector<double> theta;
    double lambda = 0.0;
};

/**
 * Exact gradients of L by enumeration. The path-probability derivative is
 * computed here from the softmax definition, independently of the policy
 * module's score function.
 */
ExactGradients exact_gradients(const FiniteMdp& mdp, const Policy& policy, double nu, double lambda, double alpha,
                               double beta);

/// E[G] + lambda (P(J >= threshold) - beta).
double exact_cc_lagrangian(const FiniteMdp& mdp, const Policy& policy, double lambda, double threshold, double beta);

struct ExactCcGradients {
    std::vector<double> theta;
    double lambda = 0.0;
};
ExactCcGradients exact_cc_gradients(const FiniteMdp& mdp, const Policy& policy, double lambda, double threshold,
                                    double beta);

/**
 * Exact forward closure of the augmented MDP from (x0, s0): every reachable
 * (x, s) pair plus the zero-value sink entered after the target. Budgets equal
 * within 1e-12 are merged.
 */
class DiscretizedAugmentation {
public:
    DiscretizedAugmentation(const AugmentedMdp& mdp, double s0, std::size_t budget = 1'000'000);

    struct Edge {
        std::size_t to;
        double probability;
    };

    const AugmentedMdp& mdp() const { return *mdp_; }
    std::size_t size() const { return states_.size(); }
    const AugmentedState& state(std::size_t i) const { return states_[i]; }
    std::size_t initial() const { return 0; }
    std::size_t sink() const { return sink_; }
    /// Sorted distinct budgets that occur at base state x.
    std::vector<double> s_grid(StateId x) const;
    /// All distinct budgets over every base state, sorted.
    std::vector<double> s_grid() const;
    /// Index of (x, s); throws RangeError if the pair is not reachable.
    std::size_t index_of(StateId x, double s) const;
    /// Successors of state i under action a (the sink for the target and the sink).
    const std::vector<Edge>& edges(std::size_t i, ActionId a) const { return edges_[i * n_actions_ + a]; }

private:
    std::size_t lookup_or_add(StateId x, double s, bool& added);

    const AugmentedMdp* mdp_;
    std::size_t n_actions_;
    std::vector<AugmentedState> states_;
    std::vector<std::vector<Edge>> edges_;
    std::vector<std::map<double, std::size_t>> by_state_;
    std::size_t sink_ = 0;
};

struct ValueIterationResult {
    std::vector<double> values;
    std::size_t sweeps = 0;
    /// Sup-norm change per sweep.
    std::vector<double> residuals;
};

/// Fixed point of B_theta V = sum_a mu(a|x,s) {C-bar_lambda + gamma sum P-bar V}; sink pinned at zero.
ValueIterationResult value_iteration(const DiscretizedAugmentation& aug, const Policy& policy, double lambda,
                                     double tolerance = 1e-10, std::size_t max_sweeps = 1'000'000);

/// Policy-averaged transition matrix P_mu over the discretized states (row-major, n x n).
std::vector<double> policy_transition_matrix(const DiscretizedAugmentation& aug, const Policy& policy);

/// d_gamma(.|x0, s0) from (I - gamma P_mu)^T d = (1 - gamma) e_0.
std::vector<double> occupation_measure(const DiscretizedAugmentation& aug, const Policy& policy);

/// Same measure for the base MDP started at its initial state.
std::vector<double> occupation_measure(const FiniteMdp& mdp, const Policy& policy);

/// (1/(1-gamma)) sum d_gamma(x,s) 1{x = x_Tar} (-s)^+ / (1 - alpha).
double grad_lambda_dp(const DiscretizedAugmentation& aug, const Policy& policy);

/// Expected TD error E[C-bar + gamma V(x',s') - V(x,s) | x, s, a] under critic `weights`.
double expected_td_error(const DiscretizedAugmentation& aug, const CriticWeights& weights, std::size_t state,
                         ActionId action, double lambda);

struct TdFixedPoint {
    std::vector<double> a;  ///< row-major kappa x kappa
    std::vector<double> b;
    std::vector<double> v;
};

/**
 * Projected TD(0) fixed point A v = b with A = Phi^T D (I - gamma P) Phi and
 * b = Phi^T D c, where D weights states by `distribution` (the occupation
 * measure by default). The sink contributes a zero row.
 */
TdFixedPoint td_fixed_point(const DiscretizedAugmentation& aug, const Policy& policy,
                            const std::shared_ptr<const FeatureMap>& features, double lambda,
                            const std::vector<double>& distribution = {});

/// Central finite-difference gradient of `f` at `point` with step `h`.
std::vector<double> finite_difference_gradient(const std::function<double(const std::vector<double>&)>& f,
                                               const std::vector<double>& point, double h);

}  // namespace riskgrad
