#include "riskgrad/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>

#include <Eigen/Dense>

#include "riskgrad/errors.hpp"
#include "riskgrad/risk.hpp"

namespace riskgrad {

namespace {

constexpr double kMergeTolerance = 1e-12;

Enumeration enumerate_all(const FiniteMdp& mdp, const Policy& policy) {
    Enumeration e = enumerate_trajectories(mdp, policy, mdp.horizon());
    if (e.unterminated_mass > 1e-12) {
        throw HorizonExceeded("enumeration left probability mass short of the target");
    }
    return e;
}

// d/dtheta of log prod_k mu(a_k|x_k), written out from the softmax directly.
std::vector<double> path_log_derivative(const Policy& policy, const Trajectory& traj) {
    const auto& params = policy.params();
    const std::size_t m = params.block_size;
    std::vector<double> grad(params.theta.size(), 0.0);
    std::vector<long double> z(params.n_actions);
    for (const auto& step : traj.steps) {
        const auto phi = policy.features()(step.state, 0.0);
        long double top = -std::numeric_limits<long double>::infinity();
        for (std::size_t b = 0; b < params.n_actions; ++b) {
            long double acc = 0.0L;
            for (std::size_t i = 0; i < m; ++i) {
                acc += static_cast<long double>(params.theta[b * m + i]) * phi[i];
            }
            z[b] = acc;
            top = std::max(top, acc);
        }
        long double total = 0.0L;
        for (auto& v : z) {
            v = std::exp(v - top);
            total += v;
        }
        for (std::size_t b = 0; b < params.n_actions; ++b) {
            const long double mu_b = z[b] / total;
            const long double coef = (b == step.action ? 1.0L : 0.0L) - mu_b;
            for (std::size_t i = 0; i < m; ++i) {
                grad[b * m + i] += static_cast<double>(coef * phi[i]);
            }
        }
    }
    return grad;
}

}  // namespace

double exact_lagrangian(const FiniteMdp& mdp, const Policy& policy, double nu, double lambda, double alpha,
                        double beta) {
    check_confidence(alpha);
    const auto e = enumerate_all(mdp, policy);
    double mean_g = 0.0;
    double excess = 0.0;
    for (const auto& p : e.paths) {
        mean_g += p.probability * p.trajectory.g_total;
        excess += p.probability * std::max(p.trajectory.j_total - nu, 0.0);
    }
    return mean_g + lambda * (nu + excess / (1.0 - alpha) - beta);
}

ExactGradients exact_gradients(const FiniteMdp& mdp, const Policy& policy, double nu, double lambda, double alpha,
                               double beta) {
    check_confidence(alpha);
    const auto e = enumerate_all(mdp, policy);
    const double tail = 1.0 / (1.0 - alpha);
    ExactGradients g;
    g.theta.assign(policy.params().theta.size(), 0.0);
    double p_ge = 0.0;
    double p_gt = 0.0;
    double excess = 0.0;
    for (const auto& p : e.paths) {
        const auto& t = p.trajectory;
        const double pos = std::max(t.j_total - nu, 0.0);
        if (t.j_total >= nu) p_ge += p.probability;
        if (t.j_total > nu) p_gt += p.probability;
        excess += p.probability * pos;
        const auto dlog = path_log_derivative(policy, t);
        const double value = t.g_total + lambda * tail * pos;
        for (std::size_t i = 0; i < dlog.size(); ++i) {
            g.theta[i] += p.probability * dlog[i] * value;
        }
    }
    g.nu_q1 = lambda * (1.0 - tail * p_ge);
    g.nu_q0 = lambda * (1.0 - tail * p_gt);
    g.lambda = nu + tail * excess - beta;
    return g;
}

double exact_cc_lagrangian(const FiniteMdp& mdp, const Policy& policy, double lambda, double threshold,
                           double beta) {
    const auto e = enumerate_all(mdp, policy);
    double mean_g = 0.0;
    double violation = 0.0;
    for (const auto& p : e.paths) {
        mean_g += p.probability * p.trajectory.g_total;
        if (p.trajectory.j_total >= threshold) violation += p.probability;
    }
    return mean_g + lambda * (violation - beta);
}

ExactCcGradients exact_cc_gradients(const FiniteMdp& mdp, const Policy& policy, double lambda, double threshold,
                                    double beta) {
    const auto e = enumerate_all(mdp, policy);
    ExactCcGradients g;
    g.theta.assign(policy.params().theta.size(), 0.0);
    double violation = 0.0;
    for (const auto& p : e.paths) {
        const auto& t = p.trajectory;
        const bool hit = t.j_total >= threshold;
        if (hit) violation += p.probability;
        const auto dlog = path_log_derivative(policy, t);
        const double value = t.g_total + (hit ? lambda : 0.0);
        for (std::size_t i = 0; i < dlog.size(); ++i) {
            g.theta[i] += p.probability * dlog[i] * value;
        }
    }
    g.lambda = violation - beta;
    return g;
}

DiscretizedAugmentation::DiscretizedAugmentation(const AugmentedMdp& mdp, double s0, std::size_t budget)
    : mdp_(&mdp), n_actions_(mdp.base().n_actions()) {
    const auto& base = mdp.base();
    by_state_.resize(base.n_states());
    bool added = false;
    lookup_or_add(base.initial(), s0, added);
    // Breadth-first closure; states_ grows while we walk it.
    for (std::size_t i = 0; i < states_.size(); ++i) {
        if (states_.size() > budget) {
            throw BudgetExceeded("augmented closure exceeds " + std::to_string(budget) + " states");
        }
        edges_.resize(states_.size() * n_actions_);
        const AugmentedState st = states_[i];
        if (base.is_target(st.x)) {
            continue;  // edges to the sink are filled in below
        }
        for (ActionId a = 0; a < n_actions_; ++a) {
            const double s_next = mdp.next_budget(st.s, st.x, a);
            std::vector<Edge> out;
            for (const auto& succ : base.successors(st.x, a)) {
                const std::size_t j = lookup_or_add(succ.state, s_next, added);
                out.push_back({j, succ.probability});
            }
            edges_[i * n_actions_ + a] = std::move(out);
        }
    }
    sink_ = states_.size();
    states_.push_back(AugmentedMdp::sink());
    edges_.resize(states_.size() * n_actions_);
    for (std::size_t i = 0; i < states_.size(); ++i) {
        if (states_[i].absorbed || base.is_target(states_[i].x)) {
            for (ActionId a = 0; a < n_actions_; ++a) {
                edges_[i * n_actions_ + a] = {{sink_, 1.0}};
            }
        }
    }
}

std::size_t DiscretizedAugmentation::lookup_or_add(StateId x, double s, bool& added) {
    auto& known = by_state_[x];
    auto it = known.lower_bound(s - kMergeTolerance);
    if (it != known.end() && std::abs(it->first - s) <= kMergeTolerance) {
        added = false;
        return it->second;
    }
    added = true;
    const std::size_t id = states_.size();
    states_.push_back({x, s, false});
    known.emplace(s, id);
    return id;
}

std::vector<double> DiscretizedAugmentation::s_grid(StateId x) const {
    std::vector<double> out;
    for (const auto& [s, id] : by_state_.at(x)) {
        out.push_back(s);
    }
    return out;
}

std::vector<double> DiscretizedAugmentation::s_grid() const {
    std::vector<double> out;
    for (const auto& known : by_state_) {
        for (const auto& [s, id] : known) {
            out.push_back(s);
        }
    }
    std::sort(out.begin(), out.end());
    std::vector<double> merged;
    for (double s : out) {
        if (merged.empty() || s - merged.back() > kMergeTolerance) {
            merged.push_back(s);
        }
    }
    return merged;
}

std::size_t DiscretizedAugmentation::index_of(StateId x, double s) const {
    if (x >= by_state_.size()) {
        throw RangeError("state id out of range");
    }
    const auto& known = by_state_[x];
    auto it = known.lower_bound(s - kMergeTolerance);
    if (it != known.end() && std::abs(it->first - s) <= kMergeTolerance) {
        return it->second;
    }
    throw RangeError("augmented state is not reachable");
}

namespace {

std::vector<std::vector<double>> policy_table(const DiscretizedAugmentation& aug, const Policy& policy) {
    std::vector<std::vector<double>> mu(aug.size());
    const auto& base = aug.mdp().base();
    for (std::size_t i = 0; i < aug.size(); ++i) {
        const auto& st = aug.state(i);
        if (st.absorbed || base.is_target(st.x)) {
            // The action is irrelevant here; pick the first one.
            mu[i].assign(base.n_actions(), 0.0);
            mu[i][0] = 1.0;
        } else {
            mu[i] = policy.probabilities(st.x, st.s);
        }
    }
    return mu;
}

double expected_cost(const DiscretizedAugmentation& aug, const std::vector<double>& mu, std::size_t i,
                     double lambda) {
    double c = 0.0;
    for (ActionId a = 0; a < mu.size(); ++a) {
        if (mu[a] > 0.0) {
            c += mu[a] * aug.mdp().cost(aug.state(i), a, lambda);
        }
    }
    return c;
}

}  // namespace

ValueIterationResult value_iteration(const DiscretizedAugmentation& aug, const Policy& policy, double lambda,
                                     double tolerance, std::size_t max_sweeps) {
    const auto mu = policy_table(aug, policy);
    const double gamma = aug.mdp().gamma();
    const std::size_t n = aug.size();
    std::vector<double> cost(n);
    for (std::size_t i = 0; i < n; ++i) {
        cost[i] = expected_cost(aug, mu[i], i, lambda);
    }
    ValueIterationResult result;
    result.values.assign(n, 0.0);
    std::vector<double> next(n, 0.0);
    while (result.sweeps < max_sweeps) {
        double change = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (i == aug.sink()) {
                next[i] = 0.0;
                continue;
            }
            double v = cost[i];
            for (ActionId a = 0; a < mu[i].size(); ++a) {
                if (mu[i][a] == 0.0) continue;
                double ev = 0.0;
                for (const auto& e : aug.edges(i, a)) {
                    ev += e.probability * result.values[e.to];
                }
                v += gamma * mu[i][a] * ev;
            }
            next[i] = v;
            change = std::max(change, std::abs(v - result.values[i]));
        }
        result.values.swap(next);
        ++result.sweeps;
        result.residuals.push_back(change);
        if (change <= tolerance) {
            return result;
        }
    }
    throw NoConvergence("value iteration did not converge in " + std::to_string(max_sweeps) + " sweeps");
}

std::vector<double> policy_transition_matrix(const DiscretizedAugmentation& aug, const Policy& policy) {
    const auto mu = policy_table(aug, policy);
    const std::size_t n = aug.size();
    std::vector<double> p(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (ActionId a = 0; a < mu[i].size(); ++a) {
            if (mu[i][a] == 0.0) continue;
            for (const auto& e : aug.edges(i, a)) {
                p[i * n + e.to] += mu[i][a] * e.probability;
            }
        }
    }
    return p;
}

namespace {

std::vector<double> solve_occupation(const std::vector<double>& p, std::size_t n, std::size_t start, double gamma) {
    if (!(gamma < 1.0)) {
        throw InvalidDiscount("occupation measure needs gamma < 1");
    }
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            // Transposed system: row j, column i.
            m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) -= gamma * p[i * n + j];
        }
    }
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    rhs(static_cast<Eigen::Index>(start)) = 1.0 - gamma;
    const Eigen::VectorXd d = m.partialPivLu().solve(rhs);
    return {d.data(), d.data() + d.size()};
}

}  // namespace

std::vector<double> occupation_measure(const DiscretizedAugmentation& aug, const Policy& policy) {
    return solve_occupation(policy_transition_matrix(aug, policy), aug.size(), aug.initial(), aug.mdp().gamma());
}

std::vector<double> occupation_measure(const FiniteMdp& mdp, const Policy& policy) {
    const std::size_t n = mdp.n_states();
    std::vector<double> p(n * n, 0.0);
    for (StateId x = 0; x < n; ++x) {
        if (mdp.is_target(x)) {
            p[x * n + x] = 1.0;
            continue;
        }
        const auto mu = policy.probabilities(x, 0.0);
        for (ActionId a = 0; a < mdp.n_actions(); ++a) {
            for (const auto& succ : mdp.successors(x, a)) {
                p[x * n + succ.state] += mu[a] * succ.probability;
            }
        }
    }
    return solve_occupation(p, n, mdp.initial(), mdp.gamma());
}

double grad_lambda_dp(const DiscretizedAugmentation& aug, const Policy& policy) {
    const auto& mdp = aug.mdp();
    if (mdp.kind() != ConstraintKind::cvar) {
        throw ConfigInvalid("lambda gradient by occupation measure is defined for the CVaR variant");
    }
    const auto d = occupation_measure(aug, policy);
    double total = 0.0;
    for (std::size_t i = 0; i < aug.size(); ++i) {
        const auto& st = aug.state(i);
        if (!st.absorbed && mdp.base().is_target(st.x)) {
            total += d[i] * std::max(-st.s, 0.0) / (1.0 - mdp.alpha());
        }
    }
    return total / (1.0 - mdp.gamma());
}

double expected_td_error(const DiscretizedAugmentation& aug, const CriticWeights& weights, std::size_t state,
                         ActionId action, double lambda) {
    const auto& st = aug.state(state);
    double next = 0.0;
    for (const auto& e : aug.edges(state, action)) {
        next += e.probability * weights.value(aug.state(e.to));
    }
    return aug.mdp().cost(st, action, lambda) + aug.mdp().gamma() * next - weights.value(st);
}

TdFixedPoint td_fixed_point(const DiscretizedAugmentation& aug, const Policy& policy,
                            const std::shared_ptr<const FeatureMap>& features, double lambda,
                            const std::vector<double>& distribution) {
    const std::size_t n = aug.size();
    const auto k = static_cast<Eigen::Index>(features->dimension());
    const auto d = distribution.empty() ? occupation_measure(aug, policy) : distribution;
    if (d.size() != n) {
        throw DimensionMismatch("state distribution has the wrong length");
    }
    const auto p = policy_transition_matrix(aug, policy);
    const auto mu = policy_table(aug, policy);
    const double gamma = aug.mdp().gamma();

    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), k);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& st = aug.state(i);
        if (st.absorbed) continue;
        const auto row = (*features)(st.x, st.s);
        for (Eigen::Index j = 0; j < k; ++j) {
            phi(static_cast<Eigen::Index>(i), j) = row[static_cast<std::size_t>(j)];
        }
    }
    Eigen::MatrixXd pm(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Eigen::VectorXd c(static_cast<Eigen::Index>(n));
    Eigen::VectorXd dv(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        c(static_cast<Eigen::Index>(i)) = expected_cost(aug, mu[i], i, lambda);
        dv(static_cast<Eigen::Index>(i)) = d[i];
        for (std::size_t j = 0; j < n; ++j) {
            pm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p[i * n + j];
        }
    }
    const Eigen::MatrixXd weighted = dv.asDiagonal() * (phi - gamma * pm * phi);
    const Eigen::MatrixXd a = phi.transpose() * weighted;
    const Eigen::VectorXd b = phi.transpose() * (dv.asDiagonal() * c);
    const Eigen::VectorXd v = a.colPivHouseholderQr().solve(b);

    TdFixedPoint out;
    out.a.resize(static_cast<std::size_t>(k * k));
    for (Eigen::Index r = 0; r < k; ++r) {
        for (Eigen::Index col = 0; col < k; ++col) {
            out.a[static_cast<std::size_t>(r * k + col)] = a(r, col);
        }
    }
    out.b.assign(b.data(), b.data() + b.size());
    out.v.assign(v.data(), v.data() + v.size());
    return out;
}

std::vector<double> finite_difference_gradient(const std::function<double(const std::vector<double>&)>& f,
                                               const std::vector<double>& point, double h) {
    std::vector<double> grad(point.size());
    std::vector<double> probe = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        probe[i] = point[i] + h;
        const double up = f(probe);
        probe[i] = point[i] - h;
        const double down = f(probe);
        probe[i] = point[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

}  // namespace riskgrad
