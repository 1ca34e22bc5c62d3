#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "doctest.h"

#include "fixtures.hpp"
#include "riskgrad/ac.hpp"
#include "riskgrad/errors.hpp"
#include "riskgrad/oracle.hpp"

using namespace riskgrad;

namespace {

LagrangianState lagrangian(const Policy& policy, double nu, double lambda, double lambda_max = 10.0) {
    LagrangianState st;
    st.nu = nu;
    st.theta = policy.params();
    st.lambda = lambda;
    st.lambda_max = lambda_max;
    st.nu_box = {-10.0, 10.0};
    return st;
}

// Policy over base states that ignores the budget.
Policy base_policy(const FiniteMdp& mdp) { return fixtures::tabular_policy(mdp); }

StepSchedule constant_steps(double z1, double z2, double z3, double z4) {
    StepSchedule s;
    s.zeta1 = {z1, 1.0, 0.0};
    s.zeta2 = {z2, 0.85, 0.0};
    s.zeta3 = {z3, 0.7, 0.0};
    s.zeta4 = {z4, 0.55, 0.0};
    return s;
}

}  // namespace

TEST_CASE("td_error and critic_update") {
    auto features = std::make_shared<const FeatureMap>(FeatureMap::tabular_augmented(3, {0.0}));
    auto w = CriticWeights::zeros(features);
    w.v = {2.0, 1.0, 7.0};
    const AugmentedTransition t{{0, 0.0, false}, 0, 1.0, {1, 0.0, false}};
    CHECK(td_error(w, t, 0.9) == doctest::Approx(-0.1).epsilon(1e-14));

    const AugmentedTransition to_sink{{2, 0.0, false}, 0, 3.0, AugmentedMdp::sink()};
    CHECK(td_error(w, to_sink, 0.9) == doctest::Approx(-4.0));

    const auto u = critic_update(w, t, 0.9, 0.5);
    CHECK(u.v[0] == doctest::Approx(2.0 - 0.05));
    CHECK(u.v[1] == 1.0);
    CHECK(u.v[2] == 7.0);

    const AugmentedTransition from_sink{AugmentedMdp::sink(), 0, 0.0, AugmentedMdp::sink()};
    CHECK(critic_update(w, from_sink, 0.9, 0.5).v == w.v);
    CHECK(w.value(AugmentedMdp::sink()) == 0.0);
}

TEST_CASE("spsa_nu_gradient") {
    const auto base = fixtures::one_step(1.0, 1.0, 0.9, 2);
    const auto policy = base_policy(base);

    SUBCASE("zero critic leaves lambda") {
        auto features = std::make_shared<const FeatureMap>(FeatureMap::tabular_rbf(2, {-3.0, 3.0}, 7));
        const auto w = CriticWeights::zeros(features);
        auto st = lagrangian(policy, 0.5, 1.5);
        CHECK(spsa_nu_gradient(st, w, 0, 0.1) == 1.5);
        CHECK(spsa_nu_step(st, w, 0, 0.1, 0.2) == doctest::Approx(0.2));
        st.nu_box = {0.4, 5.0};
        CHECK(spsa_nu_step(st, w, 0, 0.1, 0.2) == 0.4);
        CHECK_THROWS_AS(spsa_nu_gradient(st, w, 0, 0.0), RangeError);
    }

    SUBCASE("critic fitted to V = -2 s") {
        auto features = std::make_shared<const FeatureMap>(FeatureMap::tabular_rbf(2, {-3.0, 3.0}, 13));
        const std::size_t dim = features->dimension();
        const int n = 241;
        Eigen::MatrixXd phi(n, static_cast<Eigen::Index>(dim));
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            const double s = -3.0 + 6.0 * i / (n - 1);
            const auto row = (*features)(0, s);
            for (std::size_t j = 0; j < dim; ++j) phi(i, static_cast<Eigen::Index>(j)) = row[j];
            y(i) = -2.0 * s;
        }
        const Eigen::VectorXd v = phi.colPivHouseholderQr().solve(y);
        auto w = CriticWeights::zeros(features);
        w.v.assign(v.data(), v.data() + v.size());

        const auto st = lagrangian(policy, 0.3, 1.0);
        CHECK(std::abs(spsa_nu_gradient(st, w, 0, 0.1) - (1.0 - 2.0)) <= 0.05);

        // central differences of a smooth critic converge as the width shrinks
        const double reference = spsa_nu_gradient(st, w, 0, 1e-5);
        double previous = std::abs(spsa_nu_gradient(st, w, 0, 0.5) - reference);
        for (double width : {0.1, 0.01, 0.001}) {
            const double err = std::abs(spsa_nu_gradient(st, w, 0, width) - reference);
            CHECK(err <= previous);
            previous = err;
        }
    }
}

TEST_CASE("semi_trajectory_nu_step") {
    const auto base = fixtures::one_step(1.0, 1.0, 0.9, 1);
    const AugmentedMdp mdp(base, ConstraintKind::cvar, 0.5);
    const auto policy = base_policy(base);
    auto st = lagrangian(policy, 1.0, 1.0);
    // violated: gradient 1 - 1/0.5 = -1, so nu rises by zeta3
    CHECK(semi_trajectory_nu_step(st, mdp, {1, -0.2, false}, 0.1) == doctest::Approx(1.1));
    CHECK(semi_trajectory_nu_step(st, mdp, {1, 0.0, false}, 0.1) == doctest::Approx(1.1));
    CHECK(semi_trajectory_nu_step(st, mdp, {1, 0.3, false}, 0.1) == doctest::Approx(0.9));
    st.lambda = 0.0;
    CHECK(semi_trajectory_nu_step(st, mdp, {1, -0.2, false}, 0.1) == 1.0);
    CHECK_THROWS_AS(semi_trajectory_nu_step(st, mdp, {0, -0.2, false}, 0.1), NotTerminal);
    CHECK_THROWS_AS(semi_trajectory_nu_step(st, mdp, AugmentedMdp::sink(), 0.1), NotTerminal);
}

TEST_CASE("lambda_estimate and actor_lambda_step") {
    const auto base = fixtures::two_step(0.9);
    const AugmentedMdp mdp(base, ConstraintKind::cvar, 0.5);
    const auto policy = base_policy(base);
    const auto st = lagrangian(policy, 1.0, 2.0, 3.0);
    CHECK(lambda_estimate(st, mdp, {0, 1.0, false}, 0.4) == doctest::Approx(0.6));
    CHECK(lambda_estimate(st, mdp, {2, -1.0, false}, 0.4) == doctest::Approx(0.6 + 1.0 / (0.5 * 0.1)));
    CHECK(lambda_estimate(st, mdp, {2, 1.0, false}, 0.4) == doctest::Approx(0.6));

    const auto schedule = constant_steps(0.1, 1.0, 1.0, 1.0);
    SUBCASE("zero TD error leaves theta") {
        const AugmentedTransition t{{0, 1.0, false}, 1, 2.0, {1, -1.0 / 0.9, false}};
        const auto next = actor_lambda_step(st, policy, mdp, t, 0.0, schedule, 1, 0.4);
        CHECK(next.theta.theta == st.theta.theta);
        CHECK(next.lambda == doctest::Approx(2.0 + 0.1 * 0.6));
    }
    SUBCASE("positive TD error lowers the chosen action's preference") {
        const AugmentedTransition t{{0, 1.0, false}, 1, 2.0, {1, -1.0 / 0.9, false}};
        const auto next = actor_lambda_step(st, policy, mdp, t, 0.5, schedule, 1, 0.4);
        const Policy after(policy.feature_ptr(), next.theta);
        CHECK(after.probabilities(0, 1.0)[1] < 0.5);
        CHECK(after.probabilities(1, 0.0)[1] == 0.5);
    }
    SUBCASE("no actor step at the target; lambda capped") {
        const AugmentedTransition t{{2, -1.0, false}, 0, 40.0, AugmentedMdp::sink()};
        const auto next = actor_lambda_step(st, policy, mdp, t, 5.0, schedule, 1, 0.4);
        CHECK(next.theta.theta == st.theta.theta);
        CHECK(next.lambda == 3.0);
    }
    SUBCASE("lambda floored at zero") {
        auto low = st;
        low.lambda = 0.01;
        low.nu = 0.0;
        const AugmentedTransition t{{0, 0.0, false}, 0, 1.0, {1, -0.5 / 0.9, false}};
        CHECK(actor_lambda_step(low, policy, mdp, t, 0.0, schedule, 1, 0.4).lambda == 0.0);
    }
    SUBCASE("needs discounting") {
        const AugmentedMdp undiscounted(fixtures::two_step(1.0), ConstraintKind::cvar, 0.5);
        const AugmentedTransition t{{0, 1.0, false}, 0, 1.0, {1, 0.5, false}};
        CHECK_THROWS_AS(actor_lambda_step(st, policy, undiscounted, t, 0.0, schedule, 1, 0.4), InvalidDiscount);
    }
}

TEST_CASE("lambda estimator is unbiased under the occupation measure") {
    RandomSource rng(31);
    const auto base = fixtures::random_dag(7, 3, 2, 0.8);
    const AugmentedMdp mdp(base, ConstraintKind::cvar, 0.8);
    auto policy = base_policy(base);
    fixtures::randomize(policy, rng);
    const double nu = 0.4;
    const double beta = 0.5;
    const auto st = lagrangian(policy, nu, 1.0);
    const DiscretizedAugmentation aug(mdp, nu);
    const double expected = nu - beta + grad_lambda_dp(aug, policy);

    const int n = 200000;
    double sum = 0.0;
    double sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double g = lambda_estimate(st, mdp, sample_augmented_occupation(mdp, policy, nu, rng), beta);
        sum += g;
        sum2 += g * g;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / n);
    CHECK(std::abs(mean - expected) <= 4.0 * se);
}

TEST_CASE("sample_transitions") {
    RandomSource rng(2);
    const auto base = fixtures::chain(2, 1.0);
    const AugmentedMdp mdp(base, ConstraintKind::chance);
    const auto ep = sample_transitions(mdp, base_policy(base), 1.5, 4.0, rng);
    REQUIRE(ep.transitions.size() == 3);
    CHECK(ep.terminal_s == doctest::Approx(-0.5));
    CHECK(ep.transitions.back().next.absorbed);
    CHECK(ep.transitions.back().cost == 4.0);
    CHECK(ep.transitions[0].cost == 1.0);
}

TEST_CASE("cc_episode_update") {
    RandomSource rng(3);
    const auto base = fixtures::chain(3, 1.0);
    const AugmentedMdp mdp(base, ConstraintKind::chance);
    const auto policy = base_policy(base);
    const auto schedule = constant_steps(0.1, 0.5, 0.5, 0.5);
    const double beta = 0.2;
    const double lambda = 1.5;
    const double threshold = 2.5;  // J = 3 always violates

    const DiscretizedAugmentation aug(mdp, threshold);
    const auto features = fixtures::closure_features(aug);
    const auto st = lagrangian(policy, 0.0, lambda);
    const auto episode = sample_transitions(mdp, policy, threshold, lambda, rng);

    SUBCASE("at the exact values nothing but lambda moves") {
        const auto vi = value_iteration(aug, policy, lambda, 1e-14);
        CHECK(vi.values[aug.initial()] == doctest::Approx(3.0 + lambda));
        const auto w = fixtures::weights_from_values(aug, features, vi.values);
        for (const auto& t : episode.transitions) CHECK(std::abs(td_error(w, t, 1.0)) <= 1e-12);
        const auto out = cc_episode_update(st, w, policy, mdp, episode, schedule, beta);
        for (std::size_t i = 0; i < w.v.size(); ++i) CHECK(std::abs(out.weights.v[i] - w.v[i]) <= 1e-12);
        CHECK(out.state.theta.theta == st.theta.theta);
        CHECK(out.state.lambda == doctest::Approx(lambda + 0.1 * (1.0 - beta)));
        CHECK(out.state.iteration == 1);
    }
    SUBCASE("zero critic moves toward the costs") {
        const auto w = CriticWeights::zeros(features);
        const auto out = cc_episode_update(st, w, policy, mdp, episode, schedule, beta);
        // each visited cell gets zeta3 * its one-step cost
        const auto first = (*features)(0, threshold);
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (first[i] == 1.0) CHECK(out.weights.v[i] == doctest::Approx(0.5));
        }
        const auto last = (*features)(3, episode.terminal_s);
        for (std::size_t i = 0; i < last.size(); ++i) {
            if (last[i] == 1.0) CHECK(out.weights.v[i] == doctest::Approx(0.5 * lambda));
        }
    }
    SUBCASE("no violation lowers lambda") {
        const auto slack = sample_transitions(mdp, policy, 10.0, lambda, rng);
        const auto out = cc_episode_update(st, CriticWeights::zeros(features), policy, mdp, slack, schedule, beta);
        CHECK(out.state.lambda == doctest::Approx(lambda - 0.1 * beta));
    }
    SUBCASE("truncated episodes are rejected") {
        auto cut = episode;
        cut.transitions.pop_back();
        CHECK_THROWS_AS(cc_episode_update(st, CriticWeights::zeros(features), policy, mdp, cut, schedule, beta),
                        NotTerminal);
    }
}

TEST_CASE("sampled TD error is unbiased") {
    RandomSource rng(41);
    const auto base = fixtures::random_dag(8, 3, 2, 0.9);
    const AugmentedMdp mdp(base, ConstraintKind::cvar, 0.8);
    auto policy = base_policy(base);
    fixtures::randomize(policy, rng);
    const double lambda = 0.7;
    const DiscretizedAugmentation aug(mdp, 0.5);
    const auto features = fixtures::closure_features(aug);
    auto w = CriticWeights::zeros(features);
    for (auto& x : w.v) x = 4.0 * rng.uniform() - 2.0;

    for (std::size_t i = 0; i < aug.size(); ++i) {
        const auto& st = aug.state(i);
        if (st.absorbed || base.is_target(st.x)) continue;
        for (ActionId a = 0; a < base.n_actions(); ++a) {
            const int n = 4000;
            double sum = 0.0;
            double sum2 = 0.0;
            for (int k = 0; k < n; ++k) {
                const auto step = mdp.step(st, a, rng);
                const double d = td_error(w, {st, a, mdp.cost(st, a, lambda), step.next}, 0.9);
                sum += d;
                sum2 += d * d;
            }
            const double mean = sum / n;
            const double se = std::sqrt(std::max(sum2 / n - mean * mean, 0.0) / n);
            CHECK(std::abs(mean - expected_td_error(aug, w, i, a, lambda)) <= 4.0 * se + 1e-12);
        }
    }
}

TEST_CASE("TD(0) converges to the critic fixed point") {
    SUBCASE("tabular on a deterministic chain") {
        RandomSource rng(5);
        const auto base = fixtures::chain(4, 0.9);
        const AugmentedMdp mdp(base, ConstraintKind::cvar, 0.9);
        const auto policy = base_policy(base);
        const double nu = 2.5;  // the final budget is negative, so the terminal cost is active
        const double lambda = 0.6;
        const DiscretizedAugmentation aug(mdp, nu);
        const auto features = fixtures::closure_features(aug);
        const auto vi = value_iteration(aug, policy, lambda, 1e-14);
        const auto w = fixtures::run_td(mdp, policy, nu, lambda, CriticWeights::zeros(features), 20000,
                                        {1.0, 0.55, 0.0}, rng);
        for (std::size_t i = 0; i < aug.size(); ++i) {
            if (aug.state(i).absorbed) continue;
            CHECK(std::abs(w.value(aug.state(i)) - vi.values[i]) <= 1e-3);
        }
    }
    SUBCASE("tabular on a stochastic chain") {
        RandomSource rng(6);
        const auto base = fixtures::random_dag(10, 3, 2, 0.9);
        const AugmentedMdp mdp(base, ConstraintKind::cvar, 0.8);
        auto policy = base_policy(base);
        fixtures::randomize(policy, rng);
        const double nu = 0.6;
        const double lambda = 0.3;
        const DiscretizedAugmentation aug(mdp, nu);
        const auto features = fixtures::closure_features(aug);
        const auto vi = value_iteration(aug, policy, lambda, 1e-14);
        const auto w = fixtures::run_td(mdp, policy, nu, lambda, CriticWeights::zeros(features), 200000,
                                        {1.0, 0.6, 0.0}, rng);
        const double v0 = vi.values[aug.initial()];
        CHECK(std::abs(w.value(aug.state(aug.initial())) - v0) <= 0.05 * std::max(1.0, std::abs(v0)));
    }
    SUBCASE("linear features reach the projected fixed point") {
        RandomSource rng(7);
        const auto base = fixtures::random_dag(11, 3, 2, 0.9);
        const AugmentedMdp mdp(base, ConstraintKind::cvar, 0.8);
        auto policy = base_policy(base);
        fixtures::randomize(policy, rng);
        const double nu = 0.8;
        const double lambda = 0.3;
        const DiscretizedAugmentation aug(mdp, nu);
        // coarser than the closure: one weight per base state
        const auto features = std::make_shared<const FeatureMap>(FeatureMap::tabular(base.n_states()));

        // episodic sampling visits states in proportion to expected visits per episode
        const auto p = policy_transition_matrix(aug, policy);
        const std::size_t n = aug.size();
        std::vector<double> visits(n, 0.0);
        std::vector<double> row(n, 0.0);
        row[aug.initial()] = 1.0;
        for (std::size_t k = 0; k <= base.horizon() + 1; ++k) {
            std::vector<double> next(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                if (i == aug.sink()) continue;
                visits[i] += row[i];
                for (std::size_t j = 0; j < n; ++j) next[j] += row[i] * p[i * n + j];
            }
            row = next;
        }
        double total = 0.0;
        for (double v : visits) total += v;
        for (auto& v : visits) v /= total;

        const auto fp = td_fixed_point(aug, policy, features, lambda, visits);
        const auto w = fixtures::run_td(mdp, policy, nu, lambda, CriticWeights::zeros(features), 200000,
                                        {1.0, 0.6, 0.0}, rng);
        for (std::size_t j = 0; j < fp.v.size(); ++j) {
            CHECK(std::abs(w.v[j] - fp.v[j]) <= 0.05 * std::max(1.0, std::abs(fp.v[j])));
        }
    }
}

TEST_CASE("run_actor_critic") {
    const auto base = fixtures::two_step(0.9);
    const AugmentedMdp mdp(base, ConstraintKind::cvar, 0.8);
    const auto policy = std::make_shared<const FeatureMap>(FeatureMap::tabular_rbf(3, {-2.0, 4.0}, 5));
    const Policy actor(policy, base.n_actions(), 20.0);
    AcProblem problem;
    problem.mdp = &mdp;
    problem.variant = AcVariant::cvar_semi;
    problem.beta = 2.5;
    problem.block = 200;
    problem.critic_features = policy;
    LagrangianState init = lagrangian(actor, 1.0, 0.0, 5.0);
    init.nu_box = nu_box_for(base);
    ConvergenceOptions options;
    options.max_rounds = 2;
    options.max_iterations = 20;
    options.window = 5;

    const StepSchedule schedule;
    const auto a = run_actor_critic(problem, actor, init, schedule, options, 99);
    const auto b = run_actor_critic(problem, actor, init, schedule, options, 99);
    CHECK(a.outer.state.theta.theta == b.outer.state.theta.theta);
    CHECK(a.outer.state.nu == b.outer.state.nu);
    CHECK(a.outer.state.lambda == b.outer.state.lambda);
    CHECK(a.critic.v == b.critic.v);
    CHECK(a.outer.state.lambda >= 0.0);
    CHECK(a.outer.state.lambda <= a.outer.state.lambda_max);
    for (double x : a.critic.v) CHECK(std::isfinite(x));

    SUBCASE("variant must match the chain") {
        problem.variant = AcVariant::chance;
        CHECK_THROWS_AS(run_actor_critic(problem, actor, init, schedule, options, 1), ConfigInvalid);
    }
    SUBCASE("critic features are required") {
        problem.critic_features.reset();
        CHECK_THROWS_AS(run_actor_critic(problem, actor, init, schedule, options, 1), ConfigInvalid);
    }
}
