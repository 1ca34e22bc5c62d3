#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "riskgrad/augmented.hpp"
#include "riskgrad/errors.hpp"
#include "riskgrad/harness.hpp"
#include "riskgrad/oracle.hpp"
#include "riskgrad/risk.hpp"

using nlohmann::json;
using namespace riskgrad;

namespace {

constexpr int kConfigError = 2;
constexpr int kBudgetError = 3;

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigInvalid("cannot open " + path);
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigInvalid(path + ": " + e.what());
    }
}

Policy load_policy(const FiniteMdp& mdp, const std::string& path) {
    auto features = std::make_shared<const FeatureMap>(FeatureMap::tabular(mdp.n_states()));
    Policy policy(features, mdp.n_actions(), 20.0);
    if (!path.empty()) {
        policy.restore(load_json(path));
    }
    return policy;
}

int run_command(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
                std::optional<std::string> preset_name) {
    const json doc = load_json(config_path);
    std::string name = "desk";
    if (doc.contains("preset")) {
        name = doc.at("preset").get<std::string>();
    }
    if (preset_name) {
        name = *preset_name;
    }
    Algorithm algorithm = Algorithm::pg;
    if (doc.contains("algorithm")) {
        algorithm = algorithm_from_string(doc.at("algorithm").get<std::string>());
    }
    ExperimentConfig config = ExperimentConfig::from_json(doc, preset(name, algorithm));
    if (seed) {
        config.seed = *seed;
    }
    config.validate();
    const RunReport report = run_to_directory(config, out_dir);
    const auto& s = report.summary;
    std::cout << fmt::format("{} {}: mean={:.4f} std={:.4f} VaR={:.4f} CVaR={:.4f} nu={:.4f} lambda={:.4f}\n",
                             to_string(config.algorithm), to_string(report.status), s.mean, s.std, s.var, s.cvar,
                             report.nu, report.lambda);
    return report.status == RunStatus::converged ? 0 : kBudgetError;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Risk-constrained policy gradient and actor-critic for finite MDPs"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> preset_name;
    auto* run = app.add_subcommand("run", "Tune a policy on the stopping problem and evaluate it");
    run->add_option("--config", config_path, "Experiment configuration JSON")->required();
    run->add_option("--out", out_dir, "Output directory")->required();
    run->add_option("--seed", seed, "Override the configured seed");
    run->add_option("--preset", preset_name, "Base preset")->check(CLI::IsMember({"paper", "desk"}));

    std::string returns_path;
    double alpha = 0.95;
    auto* summarize_cmd = app.add_subcommand("summarize", "Mean, std, VaR and CVaR of a returns CSV");
    summarize_cmd->add_option("returns", returns_path, "CSV of per-episode costs")->required();
    summarize_cmd->add_option("--alpha", alpha, "Confidence level")->required();

    auto* oracle = app.add_subcommand("oracle", "Exact quantities on small MDPs");
    oracle->require_subcommand(1);
    std::string mdp_path;
    std::string policy_path;
    double nu = 0.0;
    double lambda = 0.0;
    double beta = 0.0;
    double s0 = 0.0;
    std::string kind = "cvar";

    auto* lagr = oracle->add_subcommand("lagrangian", "L(nu, theta, lambda) and its gradients by enumeration");
    auto* value = oracle->add_subcommand("value", "Value iteration on the augmented MDP at (x0, s0)");
    auto* occupation = oracle->add_subcommand("occupation", "Discounted occupation measure of the base MDP");
    auto* stopping = oracle->add_subcommand("stopping-mdp", "Emit the stopping-problem MDP as JSON");
    for (auto* cmd : {lagr, value, occupation}) {
        cmd->add_option("--mdp", mdp_path, "MDP JSON")->required();
        cmd->add_option("--policy", policy_path, "Policy checkpoint over tabular features (uniform if absent)");
    }
    for (auto* cmd : {lagr, value}) {
        cmd->add_option("--lambda", lambda, "Lagrange multiplier");
        cmd->add_option("--alpha", alpha, "Confidence level");
    }
    lagr->add_option("--nu", nu, "VaR surrogate");
    lagr->add_option("--beta", beta, "Constraint bound");
    value->add_option("--s0", s0, "Initial budget");
    value->add_option("--kind", kind, "cvar or chance")->check(CLI::IsMember({"cvar", "chance"}));
    stopping->add_option("--config", config_path, "Experiment configuration JSON (env section used)");
    stopping->add_option("--preset", preset_name, "Base preset")->check(CLI::IsMember({"paper", "desk"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    try {
        if (*run) {
            return run_command(config_path, out_dir, seed, preset_name);
        }
        if (*summarize_cmd) {
            std::ifstream in(returns_path);
            if (!in) {
                throw ConfigInvalid("cannot open " + returns_path);
            }
            const SampleBatch batch(read_returns_csv(in));
            const SummaryRow row = summarize(batch, alpha);
            std::cout << json{{"n", batch.size()}, {"alpha", alpha}, {"mean", row.mean}, {"std", row.std},
                              {"var", row.var}, {"cvar", row.cvar}}
                             .dump(2)
                      << "\n";
            return 0;
        }
        if (*stopping) {
            ExperimentConfig config = preset(preset_name.value_or("desk"));
            if (!config_path.empty()) {
                config = ExperimentConfig::from_json(load_json(config_path), config);
            }
            std::cout << build_stopping_mdp(config.env).to_json().dump() << "\n";
            return 0;
        }
        const FiniteMdp mdp = FiniteMdp::from_json(load_json(mdp_path));
        const Policy policy = load_policy(mdp, policy_path);
        if (*lagr) {
            const auto g = exact_gradients(mdp, policy, nu, lambda, alpha, beta);
            std::cout << json{{"lagrangian", exact_lagrangian(mdp, policy, nu, lambda, alpha, beta)},
                              {"grad_nu", {g.nu_q1, g.nu_q0}},
                              {"grad_theta", g.theta},
                              {"grad_lambda", g.lambda}}
                             .dump(2)
                      << "\n";
            return 0;
        }
        if (*value) {
            const AugmentedMdp aug(mdp, kind == "cvar" ? ConstraintKind::cvar : ConstraintKind::chance, alpha);
            const DiscretizedAugmentation grid(aug, s0);
            const auto vi = value_iteration(grid, policy, lambda);
            json out{{"value", vi.values[grid.initial()]}, {"states", grid.size()}, {"sweeps", vi.sweeps}};
            if (kind == "cvar" && mdp.gamma() < 1.0) {
                out["grad_lambda"] = grad_lambda_dp(grid, policy);
            }
            std::cout << out.dump(2) << "\n";
            return 0;
        }
        if (*occupation) {
            std::cout << json(occupation_measure(mdp, policy)).dump() << "\n";
            return 0;
        }
    } catch (const ConfigInvalid& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const InvalidModel& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const BudgetExceeded& e) {
        std::cerr << "budget exceeded: " << e.what() << "\n";
        return kBudgetError;
    } catch (const NoConvergence& e) {
        std::cerr << "no convergence: " << e.what() << "\n";
        return kBudgetError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
