#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "riskgrad/mdp.hpp"
#include "riskgrad/policy.hpp"
#include "riskgrad/schedule.hpp"
#include "riskgrad/telemetry.hpp"

namespace riskgrad {

/// Closed interval with Euclidean projection.
struct Box {
    double lo = 0.0;
    double hi = 0.0;
    double project(double value) const;
};

/// N = [-D_max/(1-gamma), D_max/(1-gamma)]; for gamma = 1 the horizon replaces 1/(1-gamma).
Box nu_box_for(const FiniteMdp& mdp);

/// The iterate (nu, theta, lambda) of the Lagrangian saddle-point search.
struct LagrangianState {
    double nu = 0.0;
    PolicyParams theta;
    double lambda = 0.0;
    double lambda_max = 1.0;
    std::size_t iteration = 0;
    Box nu_box;
    /// Set by the outer loop once the movement test passed with lambda off its cap.
    bool converged = false;

    double project_nu(double value) const { return nu_box.project(value); }
    double project_lambda(double value) const;
};

struct PgGradient {
    double nu = 0.0;
    std::vector<double> theta;
    double lambda = 0.0;
};

/**
 * Batch estimates of the Lagrangian (sub)gradients. Trajectories must carry
 * their score sum. `weights` defaults to 1/N each; passing exact path
 * probabilities turns the estimate into the exact expectation.
 *
 *   g_nu     = lambda (1 - sum_j w_j 1{J_j >= nu} / (1 - alpha))
 *   g_theta  = sum_j w_j score_j [G_j + lambda/(1-alpha) (J_j - nu) 1{J_j >= nu}]
 *   g_lambda = nu - beta + sum_j w_j (J_j - nu) 1{J_j >= nu} / (1 - alpha)
 */
PgGradient estimate_gradients(std::span<const Trajectory> batch, std::span<const double> weights,
                              const LagrangianState& state, double alpha, double beta);
PgGradient estimate_gradients(std::span<const Trajectory> batch, const LagrangianState& state, double alpha,
                              double beta);

/// One projected three-timescale update; all three use the same batch.
LagrangianState pg_step(const LagrangianState& state, std::span<const Trajectory> batch, const StepSchedule& schedule,
                        double alpha, double beta);

struct CcGradient {
    std::vector<double> theta;
    double lambda = 0.0;
};

/// Chance-constrained estimates for P(J >= threshold) <= beta.
CcGradient estimate_cc_gradients(std::span<const Trajectory> batch, std::span<const double> weights, double lambda,
                                 double threshold, double beta);

/// Two-timescale update of (theta, lambda); nu is left untouched.
LagrangianState cc_pg_step(const LagrangianState& state, std::span<const Trajectory> batch,
                           const StepSchedule& schedule, double threshold, double beta);

enum class PgVariant { neutral, cvar, chance };

struct PgProblem {
    const FiniteMdp* mdp = nullptr;
    PgVariant variant = PgVariant::cvar;
    double alpha = 0.95;  ///< CVaR confidence, or the J threshold for the chance variant
    double beta = 0.0;    ///< CVaR bound, or the violation probability for the chance variant
    std::size_t batch_size = 2000;
    /// Independent RNG streams per batch; fixed so results do not depend on thread count.
    std::size_t streams = 8;
    /// Confidence level for the batch CVaR columns in telemetry.
    double report_alpha = 0.95;
};

struct ConvergenceOptions {
    std::size_t max_rounds = 6;          ///< lambda_max doublings + 1
    std::size_t max_iterations = 1000;   ///< inner iterations per round
    double tolerance = 1e-4;             ///< windowed mean of max-norm parameter movement
    std::size_t window = 50;
    double epsilon_fraction = 0.01;      ///< |lambda - lambda_max| <= eps * lambda_max triggers doubling
    std::size_t telemetry_every = 1;
};

enum class RunStatus { converged, budget_exhausted, likely_infeasible };
std::string to_string(RunStatus status);

struct OuterResult {
    RunStatus status = RunStatus::budget_exhausted;
    LagrangianState state;
    std::size_t rounds = 0;
    std::size_t total_iterations = 0;
    double last_movement = 0.0;
    std::vector<double> lambda_max_history;
};

/**
 * Windowed parameter movement: the max-norm displacement between the newest
 * iterate and the one `size` iterations earlier, divided by `size`.
 */
class MovementWindow {
public:
    explicit MovementWindow(std::size_t size) : size_(size) {}
    void push(const LagrangianState& state);
    bool full() const { return snapshots_.size() > size_; }
    double mean() const;
    void clear() { snapshots_.clear(); }

private:
    std::size_t size_;
    std::deque<std::vector<double>> snapshots_;
};

double max_movement(const LagrangianState& before, const LagrangianState& after);

/**
 * lambda_max doubling driver shared by the policy-gradient and actor-critic
 * loops. `inner` runs one inner loop from the given state (iteration reset to
 * zero) and reports whether its movement test passed.
 */
struct InnerOutcome {
    LagrangianState state;
    bool movement_converged = false;
    std::size_t iterations = 0;
    double last_movement = 0.0;
};
using InnerLoop = std::function<InnerOutcome(const LagrangianState&, std::size_t round)>;
OuterResult lambda_doubling_loop(const LagrangianState& initial, const ConvergenceOptions& options,
                                 bool constrained, const InnerLoop& inner);

/// Samples `problem.batch_size` trajectories with scores, split over fixed RNG streams.
std::vector<Trajectory> sample_batch(const FiniteMdp& mdp, const Policy& policy, std::size_t batch_size,
                                     std::size_t streams, std::uint64_t seed, std::uint64_t iteration);

/**
 * Algorithm loop: sample, update, test movement; double lambda_max when lambda
 * sticks to its cap. `policy` supplies the feature map; its parameters are
 * replaced by `initial.theta`.
 */
OuterResult outer_loop(const PgProblem& problem, const Policy& policy, const LagrangianState& initial,
                       const StepSchedule& schedule, const ConvergenceOptions& options, std::uint64_t seed,
                       TelemetryCsv* telemetry = nullptr);

}  // namespace riskgrad
