#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "riskgrad/augmented.hpp"
#include "riskgrad/pg.hpp"
#include "riskgrad/policy.hpp"
#include "riskgrad/schedule.hpp"
#include "riskgrad/telemetry.hpp"

namespace riskgrad {

/// Linear critic V(x, s) ~ v . phi(x, s). The sink state has value zero by definition.
struct CriticWeights {
    std::shared_ptr<const FeatureMap> features;
    std::vector<double> v;

    static CriticWeights zeros(std::shared_ptr<const FeatureMap> features);
    double value(const AugmentedState& state) const;
};

/// One observed transition of the augmented chain; `cost` is C-bar_lambda(x, s, a).
struct AugmentedTransition {
    AugmentedState state;
    ActionId action = 0;
    double cost = 0.0;
    AugmentedState next;
};

/// delta = cost + gamma V(next) - V(state).
double td_error(const CriticWeights& weights, const AugmentedTransition& transition, double gamma);

/// v <- v + zeta4 delta phi(x, s). Returns the critic unchanged when `transition.state` is the sink.
CriticWeights critic_update(const CriticWeights& weights, const AugmentedTransition& transition, double gamma,
                            double zeta4);

/// nu <- Gamma_N[nu - zeta3 (lambda + v . (phi(x0, nu + D) - phi(x0, nu - D)) / (2 D))].
double spsa_nu_step(const LagrangianState& state, const CriticWeights& weights, StateId x0, double delta_k,
                    double zeta3);

/// The SPSA estimate of d/dnu [V(x0, nu) + lambda nu] without the step.
double spsa_nu_gradient(const LagrangianState& state, const CriticWeights& weights, StateId x0, double delta_k);

/**
 * nu <- Gamma_N[nu - zeta3 (lambda - lambda 1{s_Tar <= 0} / (1 - alpha))].
 * Throws NotTerminal unless `terminal` sits at the target.
 */
double semi_trajectory_nu_step(const LagrangianState& state, const AugmentedMdp& mdp, const AugmentedState& terminal,
                               double zeta3);

/// Per-step sample of the lambda ascent direction: nu - beta + 1{x = x_Tar} (-s)^+ / ((1-alpha)(1-gamma)).
double lambda_estimate(const LagrangianState& state, const AugmentedMdp& mdp, const AugmentedState& at,
                       double beta);

/**
 * theta <- Gamma_Theta[theta - zeta2/(1-gamma) grad log mu(a|x,s) delta] and
 * lambda <- Gamma_Lambda[lambda + zeta1 lambda_estimate]. `k` indexes the
 * schedule. The theta step is skipped at the target and in the sink, where
 * the action has no effect.
 */
LagrangianState actor_lambda_step(const LagrangianState& state, const Policy& policy, const AugmentedMdp& mdp,
                                  const AugmentedTransition& transition, double delta, const StepSchedule& schedule,
                                  std::size_t k, double beta);

/// Episode of the chance-variant augmented chain including the final target transition.
struct AugmentedEpisode {
    std::vector<AugmentedTransition> transitions;
    double terminal_s = 0.0;
};

/// Rolls out one episode from (x0, s0); the last transition goes from the target to the sink.
AugmentedEpisode sample_transitions(const AugmentedMdp& mdp, const Policy& policy, double s0, double lambda,
                                    RandomSource& rng);

struct EpisodeUpdate {
    LagrangianState state;
    CriticWeights weights;
};

/**
 * Episodic chance-constrained actor-critic step:
 *   v      <- v + zeta3 sum_h phi(x_h, s_h) delta_h(v)
 *   theta  <- Gamma_Theta[theta - zeta2 sum_h grad log mu(a_h|x_h,s_h) delta_h(v)]
 *   lambda <- Gamma_Lambda[lambda + zeta1 (-beta + 1{s_Tar <= 0})]
 * All TD errors use the critic from before the episode. Throws NotTerminal if
 * the episode does not end at the target.
 */
EpisodeUpdate cc_episode_update(const LagrangianState& state, const CriticWeights& weights, const Policy& policy,
                                const AugmentedMdp& mdp, const AugmentedEpisode& episode,
                                const StepSchedule& schedule, double beta);

/// Draws (x, s) from the gamma-occupation measure of the augmented chain started at (x0, s0).
AugmentedState sample_augmented_occupation(const AugmentedMdp& mdp, const Policy& policy, double s0,
                                           RandomSource& rng);

enum class AcVariant { neutral, cvar_spsa, cvar_semi, chance };

enum class SamplingMode {
    occupation,  ///< restart at (x0, nu) with probability 1 - gamma after every step
    on_policy,   ///< restart only after the target; biased for gamma < 1
};

struct AcProblem {
    const AugmentedMdp* mdp = nullptr;
    AcVariant variant = AcVariant::cvar_spsa;
    double beta = 0.0;         ///< CVaR bound, or violation probability for the chance variant
    double threshold = 0.0;    ///< chance variant: initial budget s0, the bound on J
    SamplingMode mode = SamplingMode::occupation;
    /// Steps (episodes for the chance variant) per movement-test iteration.
    std::size_t block = 1000;
    std::shared_ptr<const FeatureMap> critic_features;
};

struct AcResult {
    OuterResult outer;
    CriticWeights critic;
};

/// Actor-critic with the lambda_max doubling outer loop; one inner iteration is `problem.block` steps.
AcResult run_actor_critic(const AcProblem& problem, const Policy& policy, const LagrangianState& initial,
                          const StepSchedule& schedule, const ConvergenceOptions& options, std::uint64_t seed,
                          TelemetryCsv* telemetry = nullptr);

}  // namespace riskgrad
