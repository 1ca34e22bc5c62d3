#include "riskgrad/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "riskgrad/augmented.hpp"
#include "riskgrad/errors.hpp"
#include "riskgrad/telemetry.hpp"

namespace riskgrad {

using nlohmann::json;

namespace {

void require_keys(const json& doc, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!doc.is_object()) {
        throw ConfigInvalid(where + " must be a JSON object");
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : doc.items()) {
        if (!ok.count(key)) {
            throw ConfigInvalid("unknown key '" + key + "' in " + where);
        }
    }
}

template <typename T>
void read(const json& doc, const char* key, T& into) {
    if (!doc.contains(key)) {
        return;
    }
    try {
        into = doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigInvalid(std::string("bad value for '") + key + "': " + e.what());
    }
}

std::string rule_name(PurchaseRule rule) { return rule == PurchaseRule::floor ? "floor" : "cap"; }

std::string mode_name(SamplingMode mode) { return mode == SamplingMode::occupation ? "occupation" : "on_policy"; }

}  // namespace

void StoppingEnvConfig::validate() const {
    if (!(f_u > 1.0 && f_d > 0.0 && f_d < 1.0)) {
        throw ConfigInvalid("stopping problem needs f_u > 1 > f_d > 0");
    }
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigInvalid("up-probability p must lie in [0, 1]");
    }
    if (T == 0) {
        throw ConfigInvalid("horizon T must be positive");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw ConfigInvalid("gamma must lie in (0, 1]");
    }
    if (!(initial_cost > 0.0) || !(K > 0.0) || !(p_h >= 0.0)) {
        throw ConfigInvalid("initial cost and K must be positive, p_h nonnegative");
    }
}

json StoppingEnvConfig::to_json() const {
    return {{"f_u", f_u}, {"f_d", f_d}, {"p", p}, {"p_h", p_h}, {"K", K}, {"T", T}, {"gamma", gamma},
            {"initial_cost", initial_cost}, {"purchase_rule", rule_name(purchase_rule)}};
}

StoppingEnvConfig StoppingEnvConfig::from_json(const json& doc, StoppingEnvConfig base) {
    require_keys(doc, {"f_u", "f_d", "p", "p_h", "K", "T", "gamma", "initial_cost", "purchase_rule"}, "env");
    read(doc, "f_u", base.f_u);
    read(doc, "f_d", base.f_d);
    read(doc, "p", base.p);
    read(doc, "p_h", base.p_h);
    read(doc, "K", base.K);
    read(doc, "T", base.T);
    read(doc, "gamma", base.gamma);
    read(doc, "initial_cost", base.initial_cost);
    if (doc.contains("purchase_rule")) {
        std::string rule;
        read(doc, "purchase_rule", rule);
        if (rule == "floor") {
            base.purchase_rule = PurchaseRule::floor;
        } else if (rule == "cap") {
            base.purchase_rule = PurchaseRule::cap;
        } else {
            throw ConfigInvalid("purchase_rule must be 'floor' or 'cap'");
        }
    }
    return base;
}

StoppingLattice stopping_lattice(const StoppingEnvConfig& config) {
    config.validate();
    StoppingLattice lat;
    const std::size_t T = config.T;
    lat.n_nodes = (T + 1) * (T + 2) / 2;
    lat.target = lat.n_nodes;
    lat.price.assign(lat.n_nodes + 1, 0.0);
    lat.step.assign(lat.n_nodes + 1, T + 1);
    lat.ups.assign(lat.n_nodes + 1, 0);
    lat.price[lat.node(0, 0)] = config.initial_cost;
    for (std::size_t k = 1; k <= T; ++k) {
        for (std::size_t u = 0; u < k; ++u) {
            lat.price[lat.node(u, k)] = lat.price[lat.node(u, k - 1)] * config.f_d;
        }
        lat.price[lat.node(k, k)] = lat.price[lat.node(k - 1, k - 1)] * config.f_u;
    }
    double lo = std::log(config.initial_cost);
    double hi = lo;
    lat.coords.assign(lat.n_nodes + 1, {});
    for (std::size_t k = 0; k <= T; ++k) {
        for (std::size_t u = 0; u <= k; ++u) {
            const StateId x = lat.node(u, k);
            lat.step[x] = k;
            lat.ups[x] = u;
            const double lc = std::log(lat.price[x]);
            lo = std::min(lo, lc);
            hi = std::max(hi, lc);
            lat.coords[x] = {lc, static_cast<double>(k)};
        }
    }
    lat.price[lat.target] = config.initial_cost;
    lat.coords[lat.target] = {std::log(config.initial_cost), static_cast<double>(T + 1)};
    lat.ranges = {{lo, hi}, {0.0, static_cast<double>(T + 1)}};
    return lat;
}

FiniteMdp build_stopping_mdp(const StoppingEnvConfig& config) {
    const StoppingLattice lat = stopping_lattice(config);
    const std::size_t n = lat.n_nodes + 1;
    FiniteMdp::Tables t;
    t.n_states = n;
    t.n_actions = 2;
    t.gamma = config.gamma;
    t.horizon = config.T + 1;
    t.initial = lat.node(0, 0);
    t.target = lat.target;
    t.cost.assign(n, std::vector<double>(2, 0.0));
    t.transition.assign(n, std::vector<std::vector<double>>(2, std::vector<double>(n, 0.0)));
    for (std::size_t k = 0; k <= config.T; ++k) {
        for (std::size_t u = 0; u <= k; ++u) {
            const StateId x = lat.node(u, k);
            const double c = lat.price[x];
            const double purchase = config.purchase_rule == PurchaseRule::floor ? std::max(config.K, c)
                                                                                : std::min(config.K, c);
            t.cost[x][kAccept] = purchase;
            t.transition[x][kAccept][lat.target] = 1.0;
            if (k == config.T) {
                t.cost[x][kWait] = purchase;
                t.transition[x][kWait][lat.target] = 1.0;
            } else {
                t.cost[x][kWait] = config.p_h;
                t.transition[x][kWait][lat.node(u + 1, k + 1)] += config.p;
                t.transition[x][kWait][lat.node(u, k + 1)] += 1.0 - config.p;
            }
        }
    }
    for (std::size_t a = 0; a < 2; ++a) {
        t.transition[lat.target][a][lat.target] = 1.0;
    }
    t.dcost = t.cost;
    return FiniteMdp(std::move(t));
}

std::string to_string(Algorithm algorithm) {
    switch (algorithm) {
        case Algorithm::pg:
            return "PG";
        case Algorithm::pg_cvar:
            return "PG-CVaR";
        case Algorithm::pg_cc:
            return "PG-CC";
        case Algorithm::ac:
            return "AC";
        case Algorithm::ac_cvar:
            return "AC-CVaR";
        case Algorithm::ac_cvar_spsa:
            return "AC-CVaR-SPSA";
        case Algorithm::ac_var:
            return "AC-VaR";
    }
    return "unknown";
}

Algorithm algorithm_from_string(const std::string& name) {
    for (Algorithm a : {Algorithm::pg, Algorithm::pg_cvar, Algorithm::pg_cc, Algorithm::ac, Algorithm::ac_cvar,
                        Algorithm::ac_cvar_spsa, Algorithm::ac_var}) {
        if (to_string(a) == name) {
            return a;
        }
    }
    throw ConfigInvalid("unknown algorithm '" + name + "'");
}

bool is_actor_critic(Algorithm algorithm) {
    return algorithm == Algorithm::ac || algorithm == Algorithm::ac_cvar || algorithm == Algorithm::ac_cvar_spsa ||
           algorithm == Algorithm::ac_var;
}

json FeatureSpec::to_json() const {
    return {{"kind", riskgrad::to_string(kind)}, {"centers", centers}, {"order", order}, {"s_centers", s_centers}};
}

FeatureSpec FeatureSpec::from_json(const json& doc, FeatureSpec base) {
    require_keys(doc, {"kind", "centers", "order", "s_centers"}, "features");
    if (doc.contains("kind")) {
        std::string kind;
        read(doc, "kind", kind);
        try {
            base.kind = feature_kind_from_string(kind);
        } catch (const Error& e) {
            throw ConfigInvalid(e.what());
        }
    }
    read(doc, "centers", base.centers);
    read(doc, "order", base.order);
    read(doc, "s_centers", base.s_centers);
    return base;
}

void ExperimentConfig::validate() const {
    env.validate();
    schedule.validate();
    if (eval_trajectories == 0) {
        throw ConfigInvalid("eval_trajectories must be at least 1");
    }
    if (batch_size == 0 || streams == 0) {
        throw ConfigInvalid("batch_size and streams must be positive");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ConfigInvalid("alpha must lie in (0, 1)");
    }
    if (!(lambda_max > 0.0) || lambda_init < 0.0 || lambda_init > lambda_max) {
        throw ConfigInvalid("need lambda_max > 0 and 0 <= lambda_init <= lambda_max");
    }
    if (!(theta_bound > 0.0)) {
        throw ConfigInvalid("theta_bound must be positive");
    }
    if (convergence.max_rounds == 0 || convergence.max_iterations == 0 || convergence.window == 0) {
        throw ConfigInvalid("convergence budgets must be positive");
    }
    if (histogram_bins == 0) {
        throw ConfigInvalid("histogram_bins must be positive");
    }
    if (is_actor_critic(algorithm)) {
        if (ac.block == 0) {
            throw ConfigInvalid("ac.block must be positive");
        }
        if (!(ac.s_range.lo < ac.s_range.hi)) {
            throw ConfigInvalid("ac.s_range must be a nonempty interval");
        }
        if (algorithm != Algorithm::ac_var && !(env.gamma < 1.0)) {
            throw ConfigInvalid(to_string(algorithm) + " needs gamma < 1");
        }
    }
}

json ExperimentConfig::to_json() const {
    json conv = {{"max_rounds", convergence.max_rounds},
                 {"max_iterations", convergence.max_iterations},
                 {"tolerance", convergence.tolerance},
                 {"window", convergence.window},
                 {"epsilon_fraction", convergence.epsilon_fraction},
                 {"telemetry_every", convergence.telemetry_every}};
    json acj = {{"mode", mode_name(ac.mode)},
                {"block", ac.block},
                {"actor_features", ac.actor.to_json()},
                {"critic_features", ac.critic.to_json()},
                {"s_range", {ac.s_range.lo, ac.s_range.hi}}};
    return {{"algorithm", to_string(algorithm)},
            {"alpha", alpha},
            {"beta", beta},
            {"batch_size", batch_size},
            {"streams", streams},
            {"eval_trajectories", eval_trajectories},
            {"seed", seed},
            {"lambda_max", lambda_max},
            {"lambda_init", lambda_init},
            {"theta_bound", theta_bound},
            {"nu_init", nu_init},
            {"histogram_bins", histogram_bins},
            {"env", env.to_json()},
            {"schedule", schedule.to_json()},
            {"convergence", conv},
            {"pg_features", pg_features.to_json()},
            {"ac", acj}};
}

ExperimentConfig ExperimentConfig::from_json(const json& doc, ExperimentConfig base) {
    require_keys(doc,
                 {"algorithm", "alpha", "beta", "batch_size", "streams", "eval_trajectories", "seed", "lambda_max",
                  "lambda_init", "theta_bound", "nu_init", "histogram_bins", "env", "schedule", "convergence",
                  "pg_features", "ac", "preset"},
                 "config");
    if (doc.contains("algorithm")) {
        std::string name;
        read(doc, "algorithm", name);
        base.algorithm = algorithm_from_string(name);
    }
    read(doc, "alpha", base.alpha);
    read(doc, "beta", base.beta);
    read(doc, "batch_size", base.batch_size);
    read(doc, "streams", base.streams);
    read(doc, "eval_trajectories", base.eval_trajectories);
    read(doc, "seed", base.seed);
    read(doc, "lambda_max", base.lambda_max);
    read(doc, "lambda_init", base.lambda_init);
    read(doc, "theta_bound", base.theta_bound);
    read(doc, "nu_init", base.nu_init);
    read(doc, "histogram_bins", base.histogram_bins);
    if (doc.contains("env")) {
        base.env = StoppingEnvConfig::from_json(doc.at("env"), base.env);
    }
    if (doc.contains("schedule")) {
        const json& s = doc.at("schedule");
        require_keys(s, {"zeta1", "zeta2", "zeta3", "zeta4", "spsa"}, "schedule");
        json merged = base.schedule.to_json();
        for (const auto& [key, value] : s.items()) {
            require_keys(value, {"c", "p", "k0"}, "schedule." + key);
            for (const auto& [k2, v2] : value.items()) {
                merged[key][k2] = v2;
            }
        }
        try {
            base.schedule = StepSchedule::from_json(merged);
        } catch (const json::exception& e) {
            throw ConfigInvalid(std::string("bad schedule: ") + e.what());
        }
    }
    if (doc.contains("convergence")) {
        const json& c = doc.at("convergence");
        require_keys(c, {"max_rounds", "max_iterations", "tolerance", "window", "epsilon_fraction", "telemetry_every"},
                     "convergence");
        read(c, "max_rounds", base.convergence.max_rounds);
        read(c, "max_iterations", base.convergence.max_iterations);
        read(c, "tolerance", base.convergence.tolerance);
        read(c, "window", base.convergence.window);
        read(c, "epsilon_fraction", base.convergence.epsilon_fraction);
        read(c, "telemetry_every", base.convergence.telemetry_every);
        if (base.convergence.telemetry_every == 0) {
            throw ConfigInvalid("telemetry_every must be positive");
        }
    }
    if (doc.contains("pg_features")) {
        base.pg_features = FeatureSpec::from_json(doc.at("pg_features"), base.pg_features);
    }
    if (doc.contains("ac")) {
        const json& a = doc.at("ac");
        require_keys(a, {"mode", "block", "actor_features", "critic_features", "s_range"}, "ac");
        if (a.contains("mode")) {
            std::string mode;
            read(a, "mode", mode);
            if (mode == "occupation") {
                base.ac.mode = SamplingMode::occupation;
            } else if (mode == "on_policy") {
                base.ac.mode = SamplingMode::on_policy;
            } else {
                throw ConfigInvalid("ac.mode must be 'occupation' or 'on_policy'");
            }
        }
        read(a, "block", base.ac.block);
        if (a.contains("actor_features")) {
            base.ac.actor = FeatureSpec::from_json(a.at("actor_features"), base.ac.actor);
        }
        if (a.contains("critic_features")) {
            base.ac.critic = FeatureSpec::from_json(a.at("critic_features"), base.ac.critic);
        }
        if (a.contains("s_range")) {
            std::vector<double> r;
            read(a, "s_range", r);
            if (r.size() != 2) {
                throw ConfigInvalid("ac.s_range must be [lo, hi]");
            }
            base.ac.s_range = {r[0], r[1]};
        }
    }
    return base;
}

ExperimentConfig preset(const std::string& name, Algorithm algorithm) {
    ExperimentConfig c;
    c.algorithm = algorithm;
    if (name == "paper") {
        c.env = StoppingEnvConfig{};
        c.alpha = 0.95;
        c.beta = 3.0;
        c.batch_size = 500000;
        c.eval_trajectories = 10000;
        c.lambda_max = 5000.0;
        c.theta_bound = 20.0;
        c.pg_features = {FeatureKind::rbf, {32, 32}, 2, 5};
        c.ac.actor = {FeatureKind::rbf, {16, 8, 8}, 2, 8};
        c.ac.critic = c.ac.actor;
        c.ac.s_range = {-20.0, 20.0};
        return c;
    }
    if (name == "desk") {
        c.env = StoppingEnvConfig{};
        c.env.T = 8;
        c.env.p = 0.25;
        c.env.purchase_rule = PurchaseRule::cap;
        c.alpha = 0.95;
        c.beta = 1.8;
        c.batch_size = 2000;
        c.eval_trajectories = 10000;
        c.lambda_max = 100.0;
        c.theta_bound = 20.0;
        c.pg_features = {FeatureKind::tabular, {}, 2, 5};
        c.ac.actor = {FeatureKind::tabular_rbf, {}, 2, 13};
        c.ac.critic = c.ac.actor;
        c.ac.s_range = {-1.0, 2.0};
        if (is_actor_critic(algorithm)) {
            c.schedule.zeta1 = {0.1, 1.0, 1e4};
            c.schedule.zeta2 = {100.0, 0.85, 1e4};
            c.schedule.zeta4 = {5.0, 0.55, 1e3};
            c.convergence.max_iterations = 15000;
        } else {
            c.schedule.zeta1 = {0.1, 1.0, 0.0};
            c.schedule.zeta2 = {150.0, 0.85, 0.0};
            c.schedule.zeta3 = {2.0, 0.7, 0.0};
            c.schedule.zeta4 = {470.0, 0.55, 0.0};
            c.convergence.max_iterations = 6000;
        }
        if (algorithm == Algorithm::pg_cvar || algorithm == Algorithm::ac_cvar ||
            algorithm == Algorithm::ac_cvar_spsa) {
            c.nu_init = 1.8;
        }
        if (algorithm == Algorithm::ac_cvar_spsa) {
            c.schedule.zeta3 = {0.05, 0.7, 1e4};
        }
        // chance runs read beta as the cost threshold and 1 - alpha as the violation bound
        if (algorithm == Algorithm::pg_cc || algorithm == Algorithm::ac_var) {
            c.alpha = 0.97;
            c.beta = 1.3;
            c.schedule.zeta1.coefficient = algorithm == Algorithm::pg_cc ? 60.0 : 30.0;
        }
        return c;
    }
    throw ConfigInvalid("unknown preset '" + name + "'");
}

SummaryRow summarize(const SampleBatch& returns, double alpha) {
    SummaryRow row;
    row.mean = returns.mean();
    double m2 = 0.0;
    for (std::size_t i = 0; i < returns.size(); ++i) {
        const double d = returns.values()[i] - row.mean;
        m2 += returns.weight(i) * d * d;
    }
    row.std = std::sqrt(m2);
    row.cvar = cvar_alpha(returns, alpha);
    row.var = var_alpha(returns, alpha);
    return row;
}

namespace {

std::shared_ptr<const FeatureMap> make_features(const FeatureSpec& spec, const StoppingLattice& lat,
                                                std::size_t n_states, bool uses_s, Interval s_range) {
    auto coords = lat.coords;
    auto ranges = lat.ranges;
    if (uses_s) {
        ranges.push_back(s_range);
    }
    switch (spec.kind) {
        case FeatureKind::tabular:
            return std::make_shared<const FeatureMap>(FeatureMap::tabular(n_states));
        case FeatureKind::tabular_aug: {
            if (spec.s_centers < 1) {
                throw ConfigInvalid("tabular_aug needs s_centers >= 1");
            }
            std::vector<double> grid(spec.s_centers);
            for (std::size_t i = 0; i < grid.size(); ++i) {
                grid[i] = spec.s_centers == 1 ? 0.5 * (s_range.lo + s_range.hi)
                                              : s_range.lo + (s_range.hi - s_range.lo) * static_cast<double>(i) /
                                                                 static_cast<double>(spec.s_centers - 1);
            }
            return std::make_shared<const FeatureMap>(FeatureMap::tabular_augmented(n_states, grid));
        }
        case FeatureKind::rbf: {
            if (spec.centers.size() != ranges.size()) {
                throw ConfigInvalid("rbf needs one center count per input dimension (" +
                                    std::to_string(ranges.size()) + ")");
            }
            return std::make_shared<const FeatureMap>(FeatureMap::rbf(coords, ranges, spec.centers, uses_s));
        }
        case FeatureKind::fourier:
            return std::make_shared<const FeatureMap>(FeatureMap::fourier(coords, ranges, spec.order, uses_s));
        case FeatureKind::tabular_rbf:
            return std::make_shared<const FeatureMap>(FeatureMap::tabular_rbf(n_states, s_range, spec.s_centers));
    }
    throw ConfigInvalid("unsupported feature kind");
}

// Converged-run rollouts; one seeded stream per episode so the result does not depend on threading.
std::vector<double> evaluate_policy(const AugmentedMdp& aug, const Policy& policy, double s0, std::size_t episodes,
                                    std::uint64_t seed) {
    std::vector<double> out(episodes);
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            RandomSource rng(RandomSource::derive(seed, 0x5eed'e7a1ULL, i));
            out[i] = sample_augmented_episode(aug, policy, s0, rng).g_total;
        }
    };
    const std::size_t workers =
        std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), std::max<std::size_t>(1, episodes / 256));
    if (workers <= 1) {
        work(0, episodes);
        return out;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            try {
                work(episodes * w / workers, episodes * (w + 1) / workers);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& config, std::ostream* telemetry) {
    config.validate();
    const StoppingLattice lat = stopping_lattice(config.env);
    const FiniteMdp mdp = build_stopping_mdp(config.env);
    const bool ac = is_actor_critic(config.algorithm);
    const bool chance = config.algorithm == Algorithm::pg_cc || config.algorithm == Algorithm::ac_var;
    const double threshold = config.beta;
    const double violation_bound = 1.0 - config.alpha;

    std::shared_ptr<const FeatureMap> actor_features =
        ac ? make_features(config.ac.actor, lat, mdp.n_states(), true, config.ac.s_range)
           : make_features(config.pg_features, lat, mdp.n_states(), false, config.ac.s_range);
    Policy policy(actor_features, mdp.n_actions(), config.theta_bound);

    LagrangianState init;
    init.theta = policy.params();
    init.nu_box = nu_box_for(mdp);
    init.nu = init.nu_box.project(config.nu_init);
    init.lambda_max = config.lambda_max;
    init.lambda = config.lambda_init;

    std::optional<TelemetryCsv> csv;
    if (telemetry != nullptr) {
        csv.emplace(*telemetry, ac);
    }
    TelemetryCsv* sink = csv ? &*csv : nullptr;

    const AugmentedMdp aug(mdp, chance ? ConstraintKind::chance : ConstraintKind::cvar, config.alpha);
    OuterResult outer;
    if (ac) {
        AcProblem problem;
        problem.mdp = &aug;
        problem.mode = config.ac.mode;
        problem.block = config.ac.block;
        problem.critic_features = make_features(config.ac.critic, lat, mdp.n_states(), true, config.ac.s_range);
        switch (config.algorithm) {
            case Algorithm::ac:
                problem.variant = AcVariant::neutral;
                break;
            case Algorithm::ac_cvar:
                problem.variant = AcVariant::cvar_semi;
                problem.beta = config.beta;
                break;
            case Algorithm::ac_cvar_spsa:
                problem.variant = AcVariant::cvar_spsa;
                problem.beta = config.beta;
                break;
            default:
                problem.variant = AcVariant::chance;
                problem.beta = violation_bound;
                problem.threshold = threshold;
                break;
        }
        outer = run_actor_critic(problem, policy, init, config.schedule, config.convergence, config.seed, sink).outer;
    } else {
        PgProblem problem;
        problem.mdp = &mdp;
        problem.batch_size = config.batch_size;
        problem.streams = config.streams;
        problem.report_alpha = config.alpha;
        switch (config.algorithm) {
            case Algorithm::pg:
                problem.variant = PgVariant::neutral;
                problem.alpha = config.alpha;
                break;
            case Algorithm::pg_cvar:
                problem.variant = PgVariant::cvar;
                problem.alpha = config.alpha;
                problem.beta = config.beta;
                break;
            default:
                problem.variant = PgVariant::chance;
                problem.alpha = threshold;
                problem.beta = violation_bound;
                break;
        }
        outer = outer_loop(problem, policy, init, config.schedule, config.convergence, config.seed, sink);
    }

    RunReport report;
    report.config = config;
    report.status = outer.status;
    report.rounds = outer.rounds;
    report.iterations = outer.total_iterations;
    report.nu = outer.state.nu;
    report.lambda = outer.state.lambda;
    report.lambda_max = outer.state.lambda_max;
    Policy final_policy(actor_features, outer.state.theta);
    report.policy = final_policy.checkpoint();

    const double s0 = chance ? threshold : (ac && config.algorithm != Algorithm::ac ? report.nu : 0.0);
    report.returns = evaluate_policy(aug, final_policy, s0, config.eval_trajectories, config.seed);
    const SampleBatch batch(report.returns);
    report.summary = summarize(batch, config.alpha);
    // runs that do not learn nu are scored at the empirical VaR, where H equals the CVaR
    const bool learns_nu = !chance && config.algorithm != Algorithm::pg && config.algorithm != Algorithm::ac;
    report.h_alpha = h_alpha(batch, learns_nu ? report.nu : report.summary.var, config.alpha);
    std::size_t violations = 0;
    for (double g : report.returns) {
        if (g >= config.beta) ++violations;
    }
    report.violation = static_cast<double>(violations) / static_cast<double>(report.returns.size());
    if (chance) {
        report.slackness = report.lambda * (report.violation - violation_bound);
    } else if (config.algorithm == Algorithm::pg || config.algorithm == Algorithm::ac) {
        report.slackness = 0.0;
    } else {
        report.slackness = report.lambda * (report.h_alpha - config.beta);
    }
    return report;
}

json RunReport::summary_json() const {
    return {{"algorithm", to_string(config.algorithm)},
            {"status", to_string(status)},
            {"rounds", rounds},
            {"iterations", iterations},
            {"nu", nu},
            {"lambda", lambda},
            {"lambda_max", lambda_max},
            {"alpha", config.alpha},
            {"beta", config.beta},
            {"episodes", returns.size()},
            {"mean", summary.mean},
            {"std", summary.std},
            {"cvar", summary.cvar},
            {"var", summary.var},
            {"h_alpha", h_alpha},
            {"violation", violation},
            {"slackness", slackness},
            {"policy", policy},
            {"config", config.to_json()}};
}

void write_returns_csv(std::ostream& out, const std::vector<double>& returns) {
    out << "episode,G\n";
    for (std::size_t i = 0; i < returns.size(); ++i) {
        out << fmt::format("{},{}\n", i, returns[i]);
    }
}

void write_histogram_csv(std::ostream& out, const std::vector<double>& returns, std::size_t bins) {
    if (returns.empty() || bins == 0) {
        throw EmptyBatch("histogram of an empty sample");
    }
    const auto [lo_it, hi_it] = std::minmax_element(returns.begin(), returns.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
    std::vector<std::size_t> counts(hi > lo ? bins : 1, 0);
    for (double g : returns) {
        auto b = static_cast<std::size_t>((g - lo) / width);
        counts[std::min(b, counts.size() - 1)] += 1;
    }
    out << "bin_lo,bin_hi,count\n";
    for (std::size_t b = 0; b < counts.size(); ++b) {
        out << fmt::format("{},{},{}\n", lo + width * static_cast<double>(b),
                           lo + width * static_cast<double>(b + 1), counts[b]);
    }
}

std::vector<double> read_returns_csv(std::istream& in) {
    std::vector<double> values;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        const std::string field = comma == std::string::npos ? line : line.substr(comma + 1);
        try {
            std::size_t used = 0;
            const double v = std::stod(field, &used);
            if (used != field.size()) throw std::invalid_argument(field);
            values.push_back(v);
        } catch (const std::exception&) {
            if (line_no == 1) continue;  // header
            throw ConfigInvalid("returns CSV line " + std::to_string(line_no) + " is not numeric");
        }
    }
    if (values.empty()) {
        throw EmptyBatch("returns CSV holds no values");
    }
    return values;
}

RunReport run_to_directory(const ExperimentConfig& config, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    RunReport report;
    {
        std::ofstream telemetry(dir / "telemetry.csv", std::ios::binary);
        report = run_experiment(config, &telemetry);
    }
    std::ofstream(dir / "summary.json", std::ios::binary) << report.summary_json().dump(2) << "\n";
    {
        std::ofstream out(dir / "returns.csv", std::ios::binary);
        write_returns_csv(out, report.returns);
    }
    {
        std::ofstream out(dir / "histogram.csv", std::ios::binary);
        write_histogram_csv(out, report.returns, config.histogram_bins);
    }
    return report;
}

}  // namespace riskgrad
