#include "riskgrad/pg.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "riskgrad/errors.hpp"
#include "riskgrad/risk.hpp"

namespace riskgrad {

double Box::project(double value) const { return std::clamp(value, lo, hi); }

Box nu_box_for(const FiniteMdp& mdp) {
    const double scale = mdp.gamma() < 1.0 ? 1.0 / (1.0 - mdp.gamma()) : static_cast<double>(mdp.horizon());
    const double bound = mdp.dcost_bound() * scale;
    return {-bound, bound};
}

double LagrangianState::project_lambda(double value) const { return std::clamp(value, 0.0, lambda_max); }

namespace {

void check_batch(std::span<const Trajectory> batch, std::span<const double> weights, std::size_t dim) {
    if (batch.empty()) {
        throw EmptyBatch("gradient estimate needs at least one trajectory");
    }
    if (!weights.empty() && weights.size() != batch.size()) {
        throw DimensionMismatch("weight count differs from batch size");
    }
    for (const auto& traj : batch) {
        if (traj.score.size() != dim) {
            throw DimensionMismatch("trajectory score has dimension " + std::to_string(traj.score.size()) +
                                    ", expected " + std::to_string(dim));
        }
    }
}

double weight_of(std::span<const double> weights, std::size_t j, std::size_t n) {
    return weights.empty() ? 1.0 / static_cast<double>(n) : weights[j];
}

double l2_norm(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) {
        sum += x * x;
    }
    return std::sqrt(sum);
}

}  // namespace

PgGradient estimate_gradients(std::span<const Trajectory> batch, std::span<const double> weights,
                              const LagrangianState& state, double alpha, double beta) {
    check_confidence(alpha);
    check_batch(batch, weights, state.theta.theta.size());
    const double tail = 1.0 / (1.0 - alpha);
    const std::size_t n = batch.size();

    PgGradient g;
    g.theta.assign(state.theta.theta.size(), 0.0);
    double exceed = 0.0;
    double excess = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const auto& traj = batch[j];
        const double w = weight_of(weights, j, n);
        const bool hit = traj.j_total >= state.nu;
        double factor = traj.g_total;
        if (hit) {
            exceed += w;
            excess += w * (traj.j_total - state.nu);
            factor += state.lambda * tail * (traj.j_total - state.nu);
        }
        const double scale = w * factor;
        for (std::size_t i = 0; i < g.theta.size(); ++i) {
            g.theta[i] += scale * traj.score[i];
        }
    }
    g.nu = state.lambda * (1.0 - tail * exceed);
    g.lambda = state.nu - beta + tail * excess;
    return g;
}

PgGradient estimate_gradients(std::span<const Trajectory> batch, const LagrangianState& state, double alpha,
                              double beta) {
    return estimate_gradients(batch, {}, state, alpha, beta);
}

LagrangianState pg_step(const LagrangianState& state, std::span<const Trajectory> batch, const StepSchedule& schedule,
                        double alpha, double beta) {
    const PgGradient g = estimate_gradients(batch, state, alpha, beta);
    const std::size_t k = state.iteration + 1;
    LagrangianState next = state;
    next.nu = state.project_nu(state.nu - schedule.zeta3(k) * g.nu);
    const double z2 = schedule.zeta2(k);
    for (std::size_t i = 0; i < g.theta.size(); ++i) {
        next.theta.theta[i] -= z2 * g.theta[i];
    }
    next.theta.project();
    next.lambda = state.project_lambda(state.lambda + schedule.zeta1(k) * g.lambda);
    next.iteration = k;
    return next;
}

CcGradient estimate_cc_gradients(std::span<const Trajectory> batch, std::span<const double> weights, double lambda,
                                 double threshold, double beta) {
    if (batch.empty()) {
        throw EmptyBatch("gradient estimate needs at least one trajectory");
    }
    check_batch(batch, weights, batch.front().score.size());
    const std::size_t n = batch.size();
    CcGradient g;
    g.theta.assign(batch.front().score.size(), 0.0);
    double violations = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const auto& traj = batch[j];
        const double w = weight_of(weights, j, n);
        const bool hit = traj.j_total >= threshold;
        if (hit) {
            violations += w;
        }
        const double scale = w * (traj.g_total + (hit ? lambda : 0.0));
        for (std::size_t i = 0; i < g.theta.size(); ++i) {
            g.theta[i] += scale * traj.score[i];
        }
    }
    g.lambda = violations - beta;
    return g;
}

LagrangianState cc_pg_step(const LagrangianState& state, std::span<const Trajectory> batch,
                           const StepSchedule& schedule, double threshold, double beta) {
    check_batch(batch, {}, state.theta.theta.size());
    const CcGradient g = estimate_cc_gradients(batch, {}, state.lambda, threshold, beta);
    const std::size_t k = state.iteration + 1;
    LagrangianState next = state;
    const double z2 = schedule.zeta2(k);
    for (std::size_t i = 0; i < g.theta.size(); ++i) {
        next.theta.theta[i] -= z2 * g.theta[i];
    }
    next.theta.project();
    next.lambda = state.project_lambda(state.lambda + schedule.zeta1(k) * g.lambda);
    next.iteration = k;
    return next;
}

std::string to_string(RunStatus status) {
    switch (status) {
        case RunStatus::converged:
            return "converged";
        case RunStatus::budget_exhausted:
            return "budget_exhausted";
        case RunStatus::likely_infeasible:
            return "likely_infeasible";
    }
    return "unknown";
}

void MovementWindow::push(const LagrangianState& state) {
    std::vector<double> flat;
    flat.reserve(state.theta.theta.size() + 2);
    flat.push_back(state.nu);
    flat.push_back(state.lambda);
    flat.insert(flat.end(), state.theta.theta.begin(), state.theta.theta.end());
    snapshots_.push_back(std::move(flat));
    if (snapshots_.size() > size_ + 1) {
        snapshots_.pop_front();
    }
}

double MovementWindow::mean() const {
    if (snapshots_.size() < 2) {
        return 0.0;
    }
    const auto& a = snapshots_.front();
    const auto& b = snapshots_.back();
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(b[i] - a[i]));
    }
    return m / static_cast<double>(snapshots_.size() - 1);
}

double max_movement(const LagrangianState& before, const LagrangianState& after) {
    double m = std::max(std::abs(after.nu - before.nu), std::abs(after.lambda - before.lambda));
    for (std::size_t i = 0; i < before.theta.theta.size(); ++i) {
        m = std::max(m, std::abs(after.theta.theta[i] - before.theta.theta[i]));
    }
    return m;
}

OuterResult lambda_doubling_loop(const LagrangianState& initial, const ConvergenceOptions& options,
                                 bool constrained, const InnerLoop& inner) {
    if (options.max_rounds == 0) {
        throw ConfigInvalid("outer loop needs at least one round");
    }
    OuterResult result;
    result.state = initial;
    result.lambda_max_history.push_back(initial.lambda_max);
    if (initial.converged) {
        result.status = RunStatus::converged;
        return result;
    }
    for (std::size_t round = 0; round < options.max_rounds; ++round) {
        LagrangianState start = result.state;
        start.iteration = 0;
        InnerOutcome out = inner(start, round);
        result.rounds = round + 1;
        result.total_iterations += out.iterations;
        result.last_movement = out.last_movement;
        result.state = std::move(out.state);

        if (constrained) {
            const double eps = options.epsilon_fraction * result.state.lambda_max;
            if (std::abs(result.state.lambda - result.state.lambda_max) <= eps) {
                if (round + 1 == options.max_rounds) {
                    result.status = RunStatus::likely_infeasible;
                    return result;
                }
                result.state.lambda_max *= 2.0;
                result.lambda_max_history.push_back(result.state.lambda_max);
                continue;
            }
        }
        if (out.movement_converged) {
            result.status = RunStatus::converged;
            result.state.converged = true;
        } else {
            result.status = RunStatus::budget_exhausted;
        }
        return result;
    }
    return result;
}

std::vector<Trajectory> sample_batch(const FiniteMdp& mdp, const Policy& policy, std::size_t batch_size,
                                     std::size_t streams, std::uint64_t seed, std::uint64_t iteration) {
    if (batch_size == 0) {
        throw EmptyBatch("batch size must be positive");
    }
    streams = std::clamp<std::size_t>(streams, 1, batch_size);
    std::vector<Trajectory> batch(batch_size);
    auto work = [&](std::size_t stream) {
        RandomSource rng(RandomSource::derive(seed, iteration, stream));
        const std::size_t lo = batch_size * stream / streams;
        const std::size_t hi = batch_size * (stream + 1) / streams;
        for (std::size_t j = lo; j < hi; ++j) {
            batch[j] = sample_trajectory(mdp, policy, rng, true);
        }
    };
    const std::size_t workers = std::min<std::size_t>(streams, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t s = 0; s < streams; ++s) {
            work(s);
        }
        return batch;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            try {
                for (std::size_t s = w; s < streams; s += workers) {
                    work(s);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) {
        t.join();
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return batch;
}

OuterResult outer_loop(const PgProblem& problem, const Policy& policy, const LagrangianState& initial,
                       const StepSchedule& schedule, const ConvergenceOptions& options, std::uint64_t seed,
                       TelemetryCsv* telemetry) {
    if (problem.mdp == nullptr) {
        throw ConfigInvalid("policy-gradient problem has no MDP");
    }
    schedule.validate();
    const FiniteMdp& mdp = *problem.mdp;
    const bool constrained = problem.variant != PgVariant::neutral;
    LagrangianState start = initial;
    if (!constrained) {
        start.lambda = 0.0;
        start.lambda_max = 0.0;
    }
    std::uint64_t draws = 0;

    auto inner = [&](const LagrangianState& from, std::size_t round) {
        InnerOutcome out;
        out.state = from;
        Policy current(policy.feature_ptr(), from.theta);
        MovementWindow window(options.window);
        window.push(from);
        for (std::size_t it = 0; it < options.max_iterations; ++it) {
            current.params() = out.state.theta;
            const auto batch = sample_batch(mdp, current, problem.batch_size, problem.streams, seed, draws++);
            LagrangianState next;
            TelemetryRow row;
            if (problem.variant == PgVariant::chance) {
                const auto g = estimate_cc_gradients(batch, {}, out.state.lambda, problem.alpha, problem.beta);
                next = cc_pg_step(out.state, batch, schedule, problem.alpha, problem.beta);
                row.g_theta_norm = l2_norm(g.theta);
                row.g_lambda = g.lambda;
            } else {
                const auto g = estimate_gradients(batch, out.state, problem.alpha, problem.beta);
                next = pg_step(out.state, batch, schedule, problem.alpha, problem.beta);
                row.g_nu = g.nu;
                row.g_theta_norm = l2_norm(g.theta);
                row.g_lambda = g.lambda;
            }
            out.state = std::move(next);
            window.push(out.state);
            out.iterations = it + 1;
            out.last_movement = window.mean();

            if (telemetry != nullptr && (out.state.iteration % options.telemetry_every == 0)) {
                std::vector<double> gs;
                std::vector<double> js;
                gs.reserve(batch.size());
                js.reserve(batch.size());
                for (const auto& t : batch) {
                    gs.push_back(t.g_total);
                    js.push_back(t.j_total);
                }
                const SampleBatch gb(std::move(gs));
                const SampleBatch jb(std::move(js));
                row.round = round;
                row.k = out.state.iteration;
                row.nu = out.state.nu;
                row.lambda = out.state.lambda;
                row.lambda_max = out.state.lambda_max;
                row.mean_g = gb.mean();
                row.cvar_g = cvar_alpha(gb, problem.report_alpha);
                row.mean_j = jb.mean();
                row.cvar_j = cvar_alpha(jb, problem.report_alpha);
                telemetry->write(row);
            }
            if (window.full() && out.last_movement < options.tolerance) {
                out.movement_converged = true;
                break;
            }
        }
        return out;
    };
    return lambda_doubling_loop(start, options, constrained, inner);
}

}  // namespace riskgrad
