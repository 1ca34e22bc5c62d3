#include "riskgrad/mdp.hpp"

#include <cmath>
#include <string>

#include "riskgrad/errors.hpp"

namespace riskgrad {

namespace {

constexpr double kRowTolerance = 1e-12;

std::string at(StateId x, ActionId a) {
    return "(x=" + std::to_string(x) + ", a=" + std::to_string(a) + ")";
}

}  // namespace

FiniteMdp::FiniteMdp(Tables t)
    : n_states_(t.n_states),
      n_actions_(t.n_actions),
      gamma_(t.gamma),
      horizon_(t.horizon),
      initial_(t.initial),
      target_(t.target) {
    if (n_states_ < 2 || n_actions_ < 1) {
        throw InvalidModel("MDP needs at least two states (one transient plus the target) and one action");
    }
    if (!(gamma_ > 0.0 && gamma_ <= 1.0)) {
        throw InvalidModel("discount must lie in (0, 1]");
    }
    if (horizon_ == 0) {
        throw InvalidModel("horizon bound must be positive");
    }
    if (initial_ >= n_states_ || target_ >= n_states_) {
        throw InvalidModel("initial/target state id out of range");
    }
    if (initial_ == target_) {
        throw InvalidModel("initial state must be transient");
    }
    if (t.cost.size() != n_states_ || t.dcost.size() != n_states_ || t.transition.size() != n_states_) {
        throw InvalidModel("cost, dcost and transition tables need one row per state");
    }

    cost_.resize(n_states_ * n_actions_);
    dcost_.resize(n_states_ * n_actions_);
    transition_.resize(n_states_ * n_actions_ * n_states_);
    successors_.resize(n_states_ * n_actions_);

    for (StateId x = 0; x < n_states_; ++x) {
        if (t.cost[x].size() != n_actions_ || t.dcost[x].size() != n_actions_ || t.transition[x].size() != n_actions_) {
            throw InvalidModel("state " + std::to_string(x) + " does not list every action");
        }
        for (ActionId a = 0; a < n_actions_; ++a) {
            const double c = t.cost[x][a];
            const double d = t.dcost[x][a];
            if (!std::isfinite(c) || !std::isfinite(d)) {
                throw InvalidModel("non-finite cost at " + at(x, a));
            }
            if (x == target_ && (c != 0.0 || d != 0.0)) {
                throw InvalidModel("costs at the target state must be zero " + at(x, a));
            }
            cost_[x * n_actions_ + a] = c;
            dcost_[x * n_actions_ + a] = d;
            cost_max_ = std::max(cost_max_, std::abs(c));
            dcost_max_ = std::max(dcost_max_, std::abs(d));

            const auto& row = t.transition[x][a];
            if (row.size() != n_states_) {
                throw InvalidModel("transition row " + at(x, a) + " has the wrong length");
            }
            double total = 0.0;
            for (StateId y = 0; y < n_states_; ++y) {
                const double p = row[y];
                if (!(p >= 0.0) || !std::isfinite(p)) {
                    throw InvalidModel("negative or non-finite probability in row " + at(x, a));
                }
                total += p;
                transition_[(x * n_actions_ + a) * n_states_ + y] = p;
                if (p > 0.0) {
                    successors_[x * n_actions_ + a].push_back({y, p});
                }
            }
            if (std::abs(total - 1.0) > kRowTolerance) {
                throw InvalidModel("transition row " + at(x, a) + " sums to " + std::to_string(total));
            }
            if (x == target_ && row[target_] != 1.0) {
                throw InvalidModel("target state must be absorbing " + at(x, a));
            }
        }
    }
}

FiniteMdp FiniteMdp::from_json(const nlohmann::json& doc) {
    Tables t;
    try {
        t.n_states = doc.at("n_states").get<std::size_t>();
        t.n_actions = doc.at("n_actions").get<std::size_t>();
        t.gamma = doc.at("gamma").get<double>();
        t.horizon = doc.at("horizon").get<std::size_t>();
        t.cost = doc.at("cost").get<std::vector<std::vector<double>>>();
        t.dcost = doc.at("dcost").get<std::vector<std::vector<double>>>();
        t.transition = doc.at("transition").get<std::vector<std::vector<std::vector<double>>>>();
        t.initial = doc.at("initial").get<std::size_t>();
        t.target = doc.at("target").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidModel(std::string("malformed MDP document: ") + e.what());
    }
    return FiniteMdp(std::move(t));
}

nlohmann::json FiniteMdp::to_json() const {
    std::vector<std::vector<double>> cost(n_states_, std::vector<double>(n_actions_));
    std::vector<std::vector<double>> dcost = cost;
    std::vector<std::vector<std::vector<double>>> trans(
        n_states_, std::vector<std::vector<double>>(n_actions_, std::vector<double>(n_states_)));
    for (StateId x = 0; x < n_states_; ++x) {
        for (ActionId a = 0; a < n_actions_; ++a) {
            cost[x][a] = this->cost(x, a);
            dcost[x][a] = this->dcost(x, a);
            for (StateId y = 0; y < n_states_; ++y) {
                trans[x][a][y] = transition(x, a, y);
            }
        }
    }
    return {{"n_states", n_states_}, {"n_actions", n_actions_}, {"gamma", gamma_}, {"horizon", horizon_},
            {"cost", cost},          {"dcost", dcost},          {"transition", trans},
            {"initial", initial_},   {"target", target_}};
}

StateId FiniteMdp::sample_next(StateId x, ActionId a, RandomSource& rng) const {
    const auto& succ = successors(x, a);
    if (succ.size() == 1) {
        return succ.front().state;
    }
    const double u = rng.uniform();
    double acc = 0.0;
    for (const auto& s : succ) {
        acc += s.probability;
        if (u < acc) {
            return s.state;
        }
    }
    return succ.back().state;
}

std::pair<double, double> discounted_totals(const std::vector<Step>& steps, double gamma) {
    double g = 0.0;
    double j = 0.0;
    double discount = 1.0;
    for (const auto& step : steps) {
        g += discount * step.cost;
        j += discount * step.dcost;
        discount *= gamma;
    }
    return {g, j};
}

Trajectory sample_trajectory(const FiniteMdp& mdp, const Policy& policy, RandomSource& rng, bool track_score) {
    Trajectory traj;
    if (track_score) {
        traj.score.assign(policy.params().theta.size(), 0.0);
    }
    StateId x = mdp.initial();
    while (!mdp.is_target(x)) {
        if (traj.steps.size() >= mdp.horizon()) {
            throw HorizonExceeded("target not reached within " + std::to_string(mdp.horizon()) + " steps");
        }
        const ActionId a = policy.sample(x, 0.0, rng);
        if (track_score) {
            policy.accumulate_grad_log(x, 0.0, a, 1.0, traj.score);
        }
        traj.steps.push_back({x, a, mdp.cost(x, a), mdp.dcost(x, a)});
        x = mdp.sample_next(x, a, rng);
    }
    traj.terminal_state = x;
    std::tie(traj.g_total, traj.j_total) = discounted_totals(traj.steps, mdp.gamma());
    return traj;
}

void accumulate_score(const Policy& policy, Trajectory& traj) {
    traj.score.assign(policy.params().theta.size(), 0.0);
    for (const auto& step : traj.steps) {
        policy.accumulate_grad_log(step.state, 0.0, step.action, 1.0, traj.score);
    }
}

OccupationSample sample_occupation_state(const FiniteMdp& mdp, const Policy& policy, RandomSource& rng) {
    if (!(mdp.gamma() < 1.0)) {
        throw InvalidDiscount("occupation sampling needs gamma < 1");
    }
    StateId x = mdp.initial();
    std::size_t k = 0;
    // P(stop at k) = (1 - gamma) gamma^k; once at the target the chain stays there.
    while (rng.uniform() < mdp.gamma()) {
        if (mdp.is_target(x)) {
            // Remaining draws cannot move the chain; the result is already decided.
            return {x, k};
        }
        if (k >= mdp.horizon()) {
            throw HorizonExceeded("target not reached within " + std::to_string(mdp.horizon()) + " steps");
        }
        const ActionId a = policy.sample(x, 0.0, rng);
        x = mdp.sample_next(x, a, rng);
        ++k;
    }
    return {x, k};
}

namespace {

struct Enumerator {
    const FiniteMdp& mdp;
    const Policy& policy;
    std::size_t max_len;
    std::size_t budget;
    bool track_score;
    Enumeration result;
    std::size_t leaves = 0;
    std::vector<Step> prefix;

    void leaf() {
        if (++leaves > budget) {
            throw BudgetExceeded("trajectory enumeration exceeded " + std::to_string(budget) + " leaves");
        }
    }

    void visit(StateId x, double probability) {
        if (mdp.is_target(x)) {
            leaf();
            Trajectory traj;
            traj.steps = prefix;
            traj.terminal_state = x;
            std::tie(traj.g_total, traj.j_total) = discounted_totals(traj.steps, mdp.gamma());
            if (track_score) {
                accumulate_score(policy, traj);
            }
            result.paths.push_back({std::move(traj), probability});
            return;
        }
        if (prefix.size() >= max_len) {
            leaf();
            result.unterminated_mass += probability;
            return;
        }
        const auto probs = policy.probabilities(x, 0.0);
        for (ActionId a = 0; a < mdp.n_actions(); ++a) {
            if (probs[a] == 0.0) continue;
            prefix.push_back({x, a, mdp.cost(x, a), mdp.dcost(x, a)});
            for (const auto& succ : mdp.successors(x, a)) {
                visit(succ.state, probability * probs[a] * succ.probability);
            }
            prefix.pop_back();
        }
    }
};

}  // namespace

Enumeration enumerate_trajectories(const FiniteMdp& mdp, const Policy& policy, std::size_t max_len,
                                   std::size_t budget, bool track_score) {
    Enumerator e{mdp, policy, max_len, budget, track_score, {}, 0, {}};
    e.visit(mdp.initial(), 1.0);
    return std::move(e.result);
}

}  // namespace riskgrad
