#include "riskgrad/ac.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "riskgrad/errors.hpp"

namespace riskgrad {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += a[i] * b[i];
    }
    return sum;
}

bool at_target(const AugmentedMdp& mdp, const AugmentedState& state) {
    return !state.absorbed && mdp.base().is_target(state.x);
}

bool acts(const AugmentedMdp& mdp, const AugmentedState& state) {
    return !state.absorbed && !mdp.base().is_target(state.x);
}

// The transition out of `state` under `action`: target -> sink, sink -> sink.
AugmentedState successor(const AugmentedMdp& mdp, const AugmentedState& state, ActionId action, RandomSource& rng) {
    if (!acts(mdp, state)) {
        return AugmentedMdp::sink();
    }
    return mdp.step(state, action, rng).next;
}

ActionId choose(const AugmentedMdp& mdp, const Policy& policy, const AugmentedState& state, RandomSource& rng) {
    return acts(mdp, state) ? policy.sample(state.x, state.s, rng) : 0;
}

}  // namespace

CriticWeights CriticWeights::zeros(std::shared_ptr<const FeatureMap> features) {
    CriticWeights w;
    w.v.assign(features->dimension(), 0.0);
    w.features = std::move(features);
    return w;
}

double CriticWeights::value(const AugmentedState& state) const {
    if (state.absorbed) {
        return 0.0;
    }
    return dot(v, (*features)(state.x, state.s));
}

double td_error(const CriticWeights& weights, const AugmentedTransition& transition, double gamma) {
    return transition.cost + gamma * weights.value(transition.next) - weights.value(transition.state);
}

CriticWeights critic_update(const CriticWeights& weights, const AugmentedTransition& transition, double gamma,
                            double zeta4) {
    CriticWeights out = weights;
    if (transition.state.absorbed) {
        return out;
    }
    const double delta = td_error(weights, transition, gamma);
    const auto phi = (*weights.features)(transition.state.x, transition.state.s);
    for (std::size_t i = 0; i < phi.size(); ++i) {
        out.v[i] += zeta4 * delta * phi[i];
    }
    return out;
}

double spsa_nu_gradient(const LagrangianState& state, const CriticWeights& weights, StateId x0, double delta_k) {
    if (!(delta_k > 0.0)) {
        throw RangeError("SPSA perturbation must be positive");
    }
    const auto up = (*weights.features)(x0, state.nu + delta_k);
    const auto down = (*weights.features)(x0, state.nu - delta_k);
    double diff = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) {
        diff += weights.v[i] * (up[i] - down[i]);
    }
    return state.lambda + diff / (2.0 * delta_k);
}

double spsa_nu_step(const LagrangianState& state, const CriticWeights& weights, StateId x0, double delta_k,
                    double zeta3) {
    return state.project_nu(state.nu - zeta3 * spsa_nu_gradient(state, weights, x0, delta_k));
}

double semi_trajectory_nu_step(const LagrangianState& state, const AugmentedMdp& mdp, const AugmentedState& terminal,
                               double zeta3) {
    if (!at_target(mdp, terminal)) {
        throw NotTerminal("semi-trajectory nu update requires the target state");
    }
    const double violated = terminal.s <= 0.0 ? 1.0 : 0.0;
    const double g = state.lambda - state.lambda * violated / (1.0 - mdp.alpha());
    return state.project_nu(state.nu - zeta3 * g);
}

double lambda_estimate(const LagrangianState& state, const AugmentedMdp& mdp, const AugmentedState& at,
                       double beta) {
    double g = state.nu - beta;
    if (at_target(mdp, at)) {
        g += std::max(-at.s, 0.0) / ((1.0 - mdp.alpha()) * (1.0 - mdp.gamma()));
    }
    return g;
}

LagrangianState actor_lambda_step(const LagrangianState& state, const Policy& policy, const AugmentedMdp& mdp,
                                  const AugmentedTransition& transition, double delta, const StepSchedule& schedule,
                                  std::size_t k, double beta) {
    if (!(mdp.gamma() < 1.0)) {
        throw InvalidDiscount("per-step actor update needs gamma < 1");
    }
    LagrangianState next = state;
    if (acts(mdp, transition.state) && delta != 0.0) {
        const double weight = -schedule.zeta2(k) / (1.0 - mdp.gamma()) * delta;
        policy.accumulate_grad_log(transition.state.x, transition.state.s, transition.action, weight,
                                   next.theta.theta);
        next.theta.project();
    }
    next.lambda = state.project_lambda(state.lambda +
                                       schedule.zeta1(k) * lambda_estimate(state, mdp, transition.state, beta));
    return next;
}

AugmentedEpisode sample_transitions(const AugmentedMdp& mdp, const Policy& policy, double s0, double lambda,
                                    RandomSource& rng) {
    const auto& base = mdp.base();
    AugmentedEpisode episode;
    AugmentedState state = mdp.initial_state(s0);
    while (!base.is_target(state.x)) {
        if (episode.transitions.size() >= base.horizon()) {
            throw HorizonExceeded("target not reached within " + std::to_string(base.horizon()) + " steps");
        }
        const ActionId a = policy.sample(state.x, state.s, rng);
        const auto result = mdp.step(state, a, rng);
        episode.transitions.push_back({state, a, result.cost, result.next});
        state = result.next;
    }
    episode.terminal_s = state.s;
    episode.transitions.push_back({state, 0, mdp.terminal_cost(state.s, lambda), AugmentedMdp::sink()});
    return episode;
}

EpisodeUpdate cc_episode_update(const LagrangianState& state, const CriticWeights& weights, const Policy& policy,
                                const AugmentedMdp& mdp, const AugmentedEpisode& episode,
                                const StepSchedule& schedule, double beta) {
    if (episode.transitions.empty() || !at_target(mdp, episode.transitions.back().state)) {
        throw NotTerminal("episodic update requires an episode that ends at the target");
    }
    const std::size_t k = state.iteration + 1;
    const double z3 = schedule.zeta3(k);
    const double z2 = schedule.zeta2(k);
    EpisodeUpdate out{state, weights};
    std::vector<double> phi(weights.features->dimension());
    for (const auto& t : episode.transitions) {
        const double delta = td_error(weights, t, mdp.gamma());
        if (delta == 0.0) {
            continue;
        }
        weights.features->evaluate(t.state.x, t.state.s, phi);
        for (std::size_t i = 0; i < phi.size(); ++i) {
            out.weights.v[i] += z3 * delta * phi[i];
        }
        if (acts(mdp, t.state)) {
            policy.accumulate_grad_log(t.state.x, t.state.s, t.action, -z2 * delta, out.state.theta.theta);
        }
    }
    out.state.theta.project();
    const double violated = episode.terminal_s <= 0.0 ? 1.0 : 0.0;
    out.state.lambda = state.project_lambda(state.lambda + schedule.zeta1(k) * (violated - beta));
    out.state.iteration = k;
    return out;
}

AugmentedState sample_augmented_occupation(const AugmentedMdp& mdp, const Policy& policy, double s0,
                                           RandomSource& rng) {
    if (!(mdp.gamma() < 1.0)) {
        throw InvalidDiscount("occupation sampling needs gamma < 1");
    }
    AugmentedState state = mdp.initial_state(s0);
    while (rng.uniform() < mdp.gamma()) {
        if (state.absorbed) {
            break;
        }
        const ActionId a = choose(mdp, policy, state, rng);
        state = successor(mdp, state, a, rng);
    }
    return state;
}

namespace {

struct BlockStats {
    double td_abs = 0.0;
    double td_mean = 0.0;
    double g_nu = 0.0;
    double g_lambda = 0.0;
    std::size_t count = 0;

    void add(double delta, double gnu, double glambda) {
        td_abs += std::abs(delta);
        td_mean += delta;
        g_nu += gnu;
        g_lambda += glambda;
        ++count;
    }
    TelemetryRow row() const {
        TelemetryRow r;
        const double n = count > 0 ? static_cast<double>(count) : 1.0;
        r.td_abs = td_abs / n;
        r.critic_residual = td_mean / n;
        r.g_nu = g_nu / n;
        r.g_lambda = g_lambda / n;
        return r;
    }
};

}  // namespace

AcResult run_actor_critic(const AcProblem& problem, const Policy& policy, const LagrangianState& initial,
                          const StepSchedule& schedule, const ConvergenceOptions& options, std::uint64_t seed,
                          TelemetryCsv* telemetry) {
    if (problem.mdp == nullptr || !problem.critic_features) {
        throw ConfigInvalid("actor-critic problem needs an augmented MDP and critic features");
    }
    if (problem.block == 0) {
        throw ConfigInvalid("actor-critic block size must be positive");
    }
    schedule.validate();
    const AugmentedMdp& mdp = *problem.mdp;
    const bool chance = problem.variant == AcVariant::chance;
    if (chance != (mdp.kind() == ConstraintKind::chance)) {
        throw ConfigInvalid("actor-critic variant does not match the augmented MDP kind");
    }
    if (!chance && !(mdp.gamma() < 1.0)) {
        throw InvalidDiscount("discounted actor-critic needs gamma < 1");
    }
    const bool constrained = problem.variant != AcVariant::neutral;
    const StateId x0 = mdp.base().initial();
    const double gamma = mdp.gamma();

    LagrangianState start = initial;
    if (!constrained) {
        start.lambda = 0.0;
        start.lambda_max = 0.0;
    }
    CriticWeights critic = CriticWeights::zeros(problem.critic_features);
    RandomSource rng(RandomSource::derive(seed, 0xac));

    auto inner = [&](const LagrangianState& from, std::size_t round) {
        InnerOutcome out;
        out.state = from;
        Policy current(policy.feature_ptr(), from.theta);
        MovementWindow window(options.window);
        window.push(from);
        const double s_start = chance ? problem.threshold : from.nu;
        AugmentedState x = mdp.initial_state(s_start);
        std::vector<double> phi(critic.features->dimension());

        for (std::size_t it = 0; it < options.max_iterations; ++it) {
            BlockStats stats;
            for (std::size_t b = 0; b < problem.block; ++b) {
                LagrangianState& st = out.state;
                current.params() = st.theta;
                if (chance) {
                    const auto episode = sample_transitions(mdp, current, problem.threshold, st.lambda, rng);
                    for (const auto& t : episode.transitions) {
                        stats.add(td_error(critic, t, gamma), 0.0, 0.0);
                    }
                    auto upd = cc_episode_update(st, critic, current, mdp, episode, schedule, problem.beta);
                    stats.g_lambda += (episode.terminal_s <= 0.0 ? 1.0 : 0.0) - problem.beta;
                    st = std::move(upd.state);
                    critic = std::move(upd.weights);
                    continue;
                }

                const std::size_t k = st.iteration + 1;
                const ActionId a = choose(mdp, current, x, rng);
                AugmentedTransition t{x, a, mdp.cost(x, a, st.lambda), successor(mdp, x, a, rng)};
                const double delta = td_error(critic, t, gamma);

                double gnu = 0.0;
                double next_nu = st.nu;
                if (problem.variant == AcVariant::cvar_spsa) {
                    const double width = schedule.spsa(k);
                    gnu = spsa_nu_gradient(st, critic, x0, width);
                    next_nu = st.project_nu(st.nu - schedule.zeta3(k) * gnu);
                } else if (problem.variant == AcVariant::cvar_semi && at_target(mdp, x)) {
                    next_nu = semi_trajectory_nu_step(st, mdp, x, schedule.zeta3(k));
                    gnu = st.lambda - st.lambda * (x.s <= 0.0 ? 1.0 : 0.0) / (1.0 - mdp.alpha());
                }
                const double glambda = constrained ? lambda_estimate(st, mdp, x, problem.beta) : 0.0;
                LagrangianState next = actor_lambda_step(st, current, mdp, t, delta, schedule, k, problem.beta);
                next.nu = next_nu;
                next.iteration = k;

                if (!x.absorbed && delta != 0.0) {
                    critic.features->evaluate(x.x, x.s, phi);
                    const double z4 = schedule.zeta4(k);
                    for (std::size_t i = 0; i < phi.size(); ++i) {
                        critic.v[i] += z4 * delta * phi[i];
                    }
                }
                stats.add(delta, gnu, glambda);

                const bool hit = at_target(mdp, x);
                st = std::move(next);
                if (problem.mode == SamplingMode::occupation) {
                    x = rng.uniform() < gamma ? t.next : mdp.initial_state(constrained ? st.nu : 0.0);
                } else {
                    x = hit ? mdp.initial_state(constrained ? st.nu : 0.0) : t.next;
                }
            }
            window.push(out.state);
            out.iterations = it + 1;
            out.last_movement = window.mean();
            if (telemetry != nullptr && (out.iterations % options.telemetry_every == 0)) {
                TelemetryRow row = stats.row();
                if (chance) {
                    row.g_lambda = stats.g_lambda / static_cast<double>(problem.block);
                }
                row.round = round;
                row.k = out.state.iteration;
                row.nu = out.state.nu;
                row.lambda = out.state.lambda;
                row.lambda_max = out.state.lambda_max;
                telemetry->write(row);
            }
            if (window.full() && out.last_movement < options.tolerance) {
                out.movement_converged = true;
                break;
            }
        }
        return out;
    };
    AcResult result;
    result.outer = lambda_doubling_loop(start, options, constrained, inner);
    result.critic = std::move(critic);
    return result;
}

}  // namespace riskgrad
