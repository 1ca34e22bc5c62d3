#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "riskgrad/ac.hpp"
#include "riskgrad/mdp.hpp"
#include "riskgrad/pg.hpp"
#include "riskgrad/policy.hpp"
#include "riskgrad/risk.hpp"
#include "riskgrad/schedule.hpp"

namespace riskgrad {

/// How the purchase cost is charged on acceptance.
enum class PurchaseRule {
    floor,  ///< max(K, c)
    cap,    ///< min(K, c)
};

/**
 * Optimal stopping of a purchase. The price moves on a binomial lattice,
 * c' = f_u c with probability p and f_d c otherwise. Waiting costs p_h per
 * step; accepting (forced at k = T) pays the purchase cost and ends the
 * episode. The constraint cost equals the cost.
 */
struct StoppingEnvConfig {
    double f_u = 2.0;
    double f_d = 0.5;
    double p = 0.65;
    double p_h = 0.1;
    double K = 5.0;
    std::size_t T = 20;
    double gamma = 0.95;
    double initial_cost = 1.0;
    PurchaseRule purchase_rule = PurchaseRule::floor;

    void validate() const;
    nlohmann::json to_json() const;
    static StoppingEnvConfig from_json(const nlohmann::json& doc, StoppingEnvConfig base);
    static StoppingEnvConfig from_json(const nlohmann::json& doc) { return from_json(doc, StoppingEnvConfig{}); }
};

/// Lattice node bookkeeping for the stopping MDP.
struct StoppingLattice {
    /// State id of lattice node (ups, k); ups <= k <= T.
    StateId node(std::size_t ups, std::size_t k) const { return k * (k + 1) / 2 + ups; }
    std::size_t n_nodes = 0;
    std::vector<double> price;      ///< per state id
    std::vector<std::size_t> step;  ///< per state id
    std::vector<std::size_t> ups;   ///< per state id
    StateId target = 0;
    /// (log c, k) per state, used by smooth feature maps.
    std::vector<std::vector<double>> coords;
    std::vector<Interval> ranges;
};

inline constexpr ActionId kAccept = 0;
inline constexpr ActionId kWait = 1;

StoppingLattice stopping_lattice(const StoppingEnvConfig& config);
FiniteMdp build_stopping_mdp(const StoppingEnvConfig& config);

enum class Algorithm { pg, pg_cvar, pg_cc, ac, ac_cvar, ac_cvar_spsa, ac_var };
std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& name);
bool is_actor_critic(Algorithm algorithm);

/// Feature map description: kind plus the grid parameters that kind needs.
struct FeatureSpec {
    FeatureKind kind = FeatureKind::tabular;
    std::vector<std::size_t> centers;  ///< rbf: per input dimension (log c, k[, s])
    std::size_t order = 2;             ///< fourier
    std::size_t s_centers = 5;         ///< tabular_rbf, and the s grid size of tabular_aug

    nlohmann::json to_json() const;
    static FeatureSpec from_json(const nlohmann::json& doc, FeatureSpec base);
    static FeatureSpec from_json(const nlohmann::json& doc) { return from_json(doc, FeatureSpec{}); }
};

struct AcSettings {
    SamplingMode mode = SamplingMode::occupation;
    std::size_t block = 1000;
    FeatureSpec actor;
    FeatureSpec critic;
    /// Range of s seen by the feature maps; inputs outside are clamped.
    Interval s_range{-10.0, 10.0};
};

struct ExperimentConfig {
    Algorithm algorithm = Algorithm::pg_cvar;
    /// CVaR confidence; for the chance variants the bound is P(G >= beta) <= 1 - alpha.
    double alpha = 0.95;
    double beta = 3.0;
    std::size_t batch_size = 2000;
    std::size_t streams = 8;
    std::size_t eval_trajectories = 10000;
    std::uint64_t seed = 1;
    double lambda_max = 5000.0;
    double lambda_init = 0.0;
    double theta_bound = 20.0;
    double nu_init = 0.0;
    std::size_t histogram_bins = 50;
    StoppingEnvConfig env;
    StepSchedule schedule;
    ConvergenceOptions convergence;
    FeatureSpec pg_features;
    AcSettings ac;

    void validate() const;
    nlohmann::json to_json() const;
    /// Overlays the fields present in `doc` onto `base`; unknown keys are errors.
    static ExperimentConfig from_json(const nlohmann::json& doc, ExperimentConfig base);
    static ExperimentConfig from_json(const nlohmann::json& doc) { return from_json(doc, ExperimentConfig{}); }
};

/// Paper-scale or desk-scale defaults ("paper" | "desk").
ExperimentConfig preset(const std::string& name, Algorithm algorithm = Algorithm::pg);

struct SummaryRow {
    double mean = 0.0;
    double std = 0.0;  ///< population standard deviation
    double cvar = 0.0;
    double var = 0.0;
};

SummaryRow summarize(const SampleBatch& returns, double alpha);

struct RunReport {
    ExperimentConfig config;
    RunStatus status = RunStatus::budget_exhausted;
    std::size_t rounds = 0;
    std::size_t iterations = 0;
    double nu = 0.0;
    double lambda = 0.0;
    double lambda_max = 0.0;
    nlohmann::json policy;
    std::vector<double> returns;  ///< per-episode G of the converged run
    SummaryRow summary;
    /// Empirical H_alpha(G, nu*) over the converged run.
    double h_alpha = 0.0;
    /// Fraction of converged-run episodes with G >= beta.
    double violation = 0.0;
    /// lambda * (constraint value - bound) at the final iterate.
    double slackness = 0.0;

    nlohmann::json summary_json() const;
};

/**
 * Tuning phase with the configured optimizer, then `eval_trajectories`
 * episodes under the final policy with per-episode seeded streams. Telemetry
 * rows go to `telemetry` when given.
 */
RunReport run_experiment(const ExperimentConfig& config, std::ostream* telemetry = nullptr);

/// Writes summary.json, returns.csv, histogram.csv and telemetry.csv into `dir`.
RunReport run_to_directory(const ExperimentConfig& config, const std::filesystem::path& dir);

void write_returns_csv(std::ostream& out, const std::vector<double>& returns);
void write_histogram_csv(std::ostream& out, const std::vector<double>& returns, std::size_t bins);
/// Reads a returns CSV (header "episode,G", or a bare column of numbers).
std::vector<double> read_returns_csv(std::istream& in);

}  // namespace riskgrad
