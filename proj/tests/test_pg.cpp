#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"

#include "fixtures.hpp"
#include "riskgrad/errors.hpp"
#include "riskgrad/oracle.hpp"
#include "riskgrad/pg.hpp"
#include "riskgrad/schedule.hpp"

using namespace riskgrad;

namespace {

LagrangianState make_state(const FiniteMdp& mdp, const Policy& policy, double nu, double lambda,
                           double lambda_max = 100.0) {
    LagrangianState s;
    s.nu = nu;
    s.theta = policy.params();
    s.lambda = lambda;
    s.lambda_max = lambda_max;
    s.nu_box = nu_box_for(mdp);
    return s;
}

struct Exact {
    std::vector<Trajectory> paths;
    std::vector<double> weights;
};

Exact enumerate(const FiniteMdp& mdp, const Policy& policy) {
    const auto e = enumerate_trajectories(mdp, policy, mdp.horizon(), kDefaultEnumerationBudget, true);
    Exact out;
    for (const auto& w : e.paths) {
        out.paths.push_back(w.trajectory);
        out.weights.push_back(w.probability);
    }
    return out;
}

}  // namespace

TEST_CASE("estimate_gradients") {
    RandomSource rng(1);
    const auto mdp = fixtures::random_dag(2);
    auto policy = fixtures::tabular_policy(mdp);
    fixtures::randomize(policy, rng);
    std::vector<Trajectory> batch;
    for (int i = 0; i < 50; ++i) batch.push_back(sample_trajectory(mdp, policy, rng, true));

    SUBCASE("lambda = 0 reduces to REINFORCE") {
        const auto g = estimate_gradients(batch, make_state(mdp, policy, 0.5, 0.0), 0.9, 1.0);
        CHECK(g.nu == 0.0);
        std::vector<double> reinforce(g.theta.size(), 0.0);
        for (const auto& t : batch) {
            for (std::size_t i = 0; i < reinforce.size(); ++i) reinforce[i] += t.g_total * t.score[i] / batch.size();
        }
        for (std::size_t i = 0; i < reinforce.size(); ++i) CHECK(g.theta[i] == doctest::Approx(reinforce[i]));
    }
    SUBCASE("every J below nu") {
        const auto g = estimate_gradients(batch, make_state(mdp, policy, 100.0, 2.0), 0.9, 1.0);
        CHECK(g.nu == 2.0);
        CHECK(g.lambda == 99.0);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(estimate_gradients(std::span<const Trajectory>{}, make_state(mdp, policy, 0, 0), 0.9, 1.0),
                        EmptyBatch);
        auto bad = batch;
        bad[3].score.clear();
        CHECK_THROWS_AS(estimate_gradients(bad, make_state(mdp, policy, 0, 0), 0.9, 1.0), DimensionMismatch);
    }
}

TEST_CASE("enumeration-weighted estimate equals the exact gradient") {
    RandomSource rng(2);
    for (std::uint64_t seed : {3, 4, 5}) {
        const auto mdp = fixtures::random_dag(seed);
        auto policy = fixtures::tabular_policy(mdp);
        fixtures::randomize(policy, rng);
        const auto ex = enumerate(mdp, policy);
        for (double nu : {0.1, 0.77, 1.3}) {
            const double lambda = 1.7;
            const auto g = estimate_gradients(ex.paths, ex.weights, make_state(mdp, policy, nu, lambda), 0.8, 0.9);
            const auto o = exact_gradients(mdp, policy, nu, lambda, 0.8, 0.9);
            REQUIRE(g.theta.size() == o.theta.size());
            for (std::size_t i = 0; i < g.theta.size(); ++i) CHECK(std::abs(g.theta[i] - o.theta[i]) <= 1e-9);
            CHECK(std::abs(g.lambda - o.lambda) <= 1e-9);
        }
    }
}

TEST_CASE("nu subgradient at an atom lies between the two endpoints") {
    RandomSource rng(3);
    const auto mdp = fixtures::random_dag(6);
    auto policy = fixtures::tabular_policy(mdp);
    fixtures::randomize(policy, rng);
    const auto ex = enumerate(mdp, policy);
    for (const auto& t : ex.paths) {
        const double nu = t.j_total;
        const auto g = estimate_gradients(ex.paths, ex.weights, make_state(mdp, policy, nu, 2.0), 0.7, 1.0);
        const auto o = exact_gradients(mdp, policy, nu, 2.0, 0.7, 1.0);
        CHECK(o.nu_q1 <= o.nu_q0);
        CHECK(g.nu >= o.nu_q1 - 1e-12);
        CHECK(g.nu <= o.nu_q0 + 1e-12);
    }
}

TEST_CASE("pg_step") {
    RandomSource rng(4);
    const auto mdp = fixtures::one_step(1.0, 1.0, 0.9, 1);
    const auto policy = fixtures::tabular_policy(mdp);
    std::vector<Trajectory> batch{sample_trajectory(mdp, policy, rng, true)};
    StepSchedule schedule;

    SUBCASE("zero gradients leave the state unchanged") {
        // one action: zero score; lambda = 0: zero nu gradient; nu - beta + tail excess = 0
        auto s = make_state(mdp, policy, 1.0, 0.0);
        const auto next = pg_step(s, batch, schedule, 0.5, 1.0);
        CHECK(next.nu == s.nu);
        CHECK(next.lambda == s.lambda);
        CHECK(next.theta.theta == s.theta.theta);
        CHECK(next.iteration == 1);
    }
    SUBCASE("lambda stays at its cap") {
        auto s = make_state(mdp, policy, 0.0, 5.0, 5.0);
        const auto next = pg_step(s, batch, schedule, 0.5, 0.0);
        CHECK(next.lambda == 5.0);
    }
    SUBCASE("nu at the lower edge with a positive gradient stays put") {
        // J = 1 < nu, so g_nu = lambda > 0 pushes nu below the box
        auto s = make_state(mdp, policy, 1.5, 1.0);
        s.nu_box = {1.5, 5.0};
        const auto next = pg_step(s, batch, schedule, 0.5, 0.0);
        CHECK(next.nu == 1.5);
    }
}

TEST_CASE("projections are idempotent") {
    LagrangianState s;
    s.lambda_max = 3.0;
    s.nu_box = {-2.0, 2.0};
    for (double v : {-10.0, -2.0, 0.3, 2.0, 7.0}) {
        CHECK(s.project_nu(s.project_nu(v)) == s.project_nu(v));
        CHECK(s.project_lambda(s.project_lambda(v)) == s.project_lambda(v));
    }
    CHECK(s.project_lambda(-1.0) == 0.0);
    CHECK(s.project_lambda(4.0) == 3.0);
}

TEST_CASE("nu box") {
    const auto mdp = fixtures::one_step(1.0, 2.0, 0.9);
    const auto box = nu_box_for(mdp);
    CHECK(box.hi == doctest::Approx(20.0));
    CHECK(box.lo == doctest::Approx(-20.0));
    const auto undiscounted = fixtures::coin(0.5, 1.0);
    CHECK(nu_box_for(undiscounted).hi == doctest::Approx(6.0));
}

TEST_CASE("cc_pg_step") {
    RandomSource rng(5);
    const auto mdp = fixtures::coin(0.5, 1.0);
    const auto policy = fixtures::tabular_policy(mdp);
    std::vector<Trajectory> batch;
    for (int i = 0; i < 10; ++i) batch.push_back(sample_trajectory(mdp, policy, rng, true));
    StepSchedule schedule;
    auto s = make_state(mdp, policy, 0.0, 1.0);
    const double z1 = schedule.zeta1(1);

    auto none = cc_pg_step(s, batch, schedule, 10.0, 0.2);
    CHECK(none.lambda == doctest::Approx(1.0 - z1 * 0.2));
    auto all = cc_pg_step(s, batch, schedule, 0.5, 0.2);
    CHECK(all.lambda == doctest::Approx(1.0 + z1 * 0.8));
    CHECK(none.nu == s.nu);
    CHECK_THROWS_AS(cc_pg_step(s, std::span<const Trajectory>{}, schedule, 1.0, 0.1), EmptyBatch);
}

TEST_CASE("chance gradient by enumeration matches the oracle") {
    RandomSource rng(6);
    for (std::uint64_t seed : {7, 8}) {
        const auto mdp = fixtures::random_dag(seed, 3, 2, 1.0);
        auto policy = fixtures::tabular_policy(mdp);
        fixtures::randomize(policy, rng);
        const auto ex = enumerate(mdp, policy);
        const auto g = estimate_cc_gradients(ex.paths, ex.weights, 1.3, 1.0, 0.1);
        const auto o = exact_cc_gradients(mdp, policy, 1.3, 1.0, 0.1);
        for (std::size_t i = 0; i < g.theta.size(); ++i) CHECK(std::abs(g.theta[i] - o.theta[i]) <= 1e-9);
        CHECK(std::abs(g.lambda - o.lambda) <= 1e-9);
    }
}

TEST_CASE("movement window") {
    LagrangianState s;
    s.theta = PolicyParams::zeros(1, 1, 10.0);
    MovementWindow w(2);
    w.push(s);
    CHECK_FALSE(w.full());
    s.nu = 1.0;
    w.push(s);
    s.nu = 0.0;
    s.lambda = 0.5;
    w.push(s);
    CHECK(w.full());
    // net displacement over two steps: lambda moved 0.5, nu returned to 0
    CHECK(w.mean() == doctest::Approx(0.25));
    s.theta.theta[0] = 3.0;
    w.push(s);
    CHECK(w.mean() == doctest::Approx(1.5));
    LagrangianState a = s;
    a.theta.theta[0] = -1.0;
    CHECK(max_movement(s, a) == 4.0);
}

TEST_CASE("lambda_max doubling driver") {
    ConvergenceOptions options;
    options.max_rounds = 3;
    LagrangianState init;
    init.lambda_max = 1.0;

    SUBCASE("converged state returns immediately") {
        auto s = init;
        s.converged = true;
        int calls = 0;
        const auto r = lambda_doubling_loop(s, options, true, [&](const LagrangianState& from, std::size_t) {
            ++calls;
            return InnerOutcome{from, true, 1, 0.0};
        });
        CHECK(calls == 0);
        CHECK(r.status == RunStatus::converged);
    }
    SUBCASE("lambda pinned at the cap doubles until the budget runs out") {
        const auto r = lambda_doubling_loop(init, options, true, [&](const LagrangianState& from, std::size_t) {
            auto s = from;
            s.lambda = s.lambda_max;
            CHECK(from.iteration == 0);
            return InnerOutcome{s, true, 5, 0.0};
        });
        CHECK(r.status == RunStatus::likely_infeasible);
        CHECK(r.rounds == 3);
        CHECK(r.lambda_max_history == std::vector<double>{1.0, 2.0, 4.0});
    }
    SUBCASE("interior lambda converges") {
        const auto r = lambda_doubling_loop(init, options, true, [&](const LagrangianState& from, std::size_t) {
            auto s = from;
            s.lambda = 0.3;
            return InnerOutcome{s, true, 5, 0.0};
        });
        CHECK(r.status == RunStatus::converged);
        CHECK(r.state.converged);
    }
    SUBCASE("no movement convergence exhausts the budget") {
        const auto r = lambda_doubling_loop(init, options, true, [&](const LagrangianState& from, std::size_t) {
            return InnerOutcome{from, false, 5, 1.0};
        });
        CHECK(r.status == RunStatus::budget_exhausted);
    }
}

TEST_CASE("outer loop on small instances") {
    StepSchedule schedule;
    ConvergenceOptions options;
    options.max_iterations = 400;
    options.window = 20;

    SUBCASE("slack constraint: lambda goes to zero without doubling") {
        const auto mdp = fixtures::one_step(1.0, 1.0, 0.9, 1);
        const auto policy = fixtures::tabular_policy(mdp);
        PgProblem problem{&mdp, PgVariant::cvar, 0.9, 100.0, 50, 2, 0.9};
        auto init = make_state(mdp, policy, 0.0, 1.0, 10.0);
        const auto r = outer_loop(problem, policy, init, schedule, options, 1);
        CHECK(r.state.lambda == 0.0);
        CHECK(r.lambda_max_history.size() == 1);
        CHECK(r.status == RunStatus::converged);

        const auto again = outer_loop(problem, policy, r.state, schedule, options, 1);
        CHECK(again.status == RunStatus::converged);
        CHECK(again.total_iterations == 0);
        CHECK(again.state.nu == r.state.nu);
    }
    SUBCASE("infeasible constraint doubles until likely infeasible") {
        const auto mdp = fixtures::one_step(1.0, 2.0, 0.9, 1);
        const auto policy = fixtures::tabular_policy(mdp);
        PgProblem problem{&mdp, PgVariant::cvar, 0.9, 1.0, 50, 2, 0.9};
        options.max_rounds = 4;
        auto init = make_state(mdp, policy, 0.0, 0.0, 1.0);
        schedule.zeta1.coefficient = 5.0;
        const auto r = outer_loop(problem, policy, init, schedule, options, 1);
        CHECK(r.status == RunStatus::likely_infeasible);
        CHECK(r.lambda_max_history == std::vector<double>{1.0, 2.0, 4.0, 8.0});
    }
    SUBCASE("telemetry rows and determinism") {
        const auto mdp = fixtures::random_dag(12);
        const auto policy = fixtures::tabular_policy(mdp);
        PgProblem problem{&mdp, PgVariant::cvar, 0.9, 1.0, 100, 4, 0.9};
        options.max_iterations = 30;
        options.max_rounds = 1;
        auto init = make_state(mdp, policy, 0.5, 0.0, 10.0);
        std::ostringstream a;
        std::ostringstream b;
        TelemetryCsv ta(a, false);
        TelemetryCsv tb(b, false);
        const auto ra = outer_loop(problem, policy, init, schedule, options, 9, &ta);
        const auto rb = outer_loop(problem, policy, init, schedule, options, 9, &tb);
        CHECK(a.str() == b.str());
        CHECK(ra.state.theta.theta == rb.state.theta.theta);
        const std::string text = a.str();
        CHECK(std::count(text.begin(), text.end(), '\n') == 31);
    }
}

TEST_CASE("sample_batch does not depend on the thread layout") {
    const auto mdp = fixtures::random_dag(13);
    const auto policy = fixtures::tabular_policy(mdp);
    const auto a = sample_batch(mdp, policy, 64, 8, 5, 2);
    const auto b = sample_batch(mdp, policy, 64, 8, 5, 2);
    const auto c = sample_batch(mdp, policy, 64, 8, 5, 3);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].g_total == b[i].g_total);
        CHECK(a[i].score == b[i].score);
        differs = differs || a[i].g_total != c[i].g_total;
    }
    CHECK(differs);
    CHECK_THROWS_AS(sample_batch(mdp, policy, 0, 8, 5, 2), EmptyBatch);
}

TEST_CASE("step schedule") {
    StepSchedule s;
    CHECK_NOTHROW(s.validate());
    for (std::size_t k = 10; k < 200000; k = k < 1000 ? k + 1 : k + 97) {
        CHECK(s.ordered_at(k));
    }
    CHECK(s.ordered_at(1u << 30));
    CHECK(s.ordered_from() <= 10);
    // sum (zeta2 / Delta)^2 converges: 2 (0.85 - 0.3) = 1.1 > 1
    CHECK(2.0 * (s.zeta2.exponent - s.spsa.exponent) > 1.0);

    auto bad = s;
    bad.zeta3.exponent = 0.9;
    CHECK_THROWS_AS(bad.validate(), ConfigInvalid);
    bad = s;
    bad.zeta4.exponent = 0.5;
    CHECK_THROWS_AS(bad.validate(), ConfigInvalid);
    bad = s;
    bad.spsa.exponent = 0.4;
    CHECK_THROWS_AS(bad.validate(), ConfigInvalid);

    // large coefficients on the slow steps only delay the ordering
    auto late = s;
    late.zeta2.coefficient = 20.0;
    late.zeta3.coefficient = 2.0;
    CHECK_NOTHROW(late.validate());
    const std::size_t from = late.ordered_from();
    CHECK(from > 10);
    CHECK(from < (std::size_t{1} << 40));
    CHECK(late.ordered_at(from));
    CHECK_FALSE(late.ordered_at(from - 1));

    PowerStep offset{100.0, 0.85, 1e4};
    CHECK(offset(1) == doctest::Approx(100.0 / std::pow(1e4 + 1, 0.85)));

    const auto back = StepSchedule::from_json(late.to_json());
    CHECK(back.zeta2.coefficient == 20.0);
    CHECK(back.zeta3.exponent == 0.7);
}
