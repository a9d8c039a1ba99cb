#include "mastitis/cobyla.hpp"
#include "mastitis/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace mastitis::cobyla;

namespace {

OptProblem quadratic() {
    OptProblem p;
    p.x0 = {0.0};
    p.rho_begin = 0.5;
    p.rho_end = 1e-8;
    p.objective = [](std::span<const double> x) { return (x[0] - 1) * (x[0] - 1); };
    return p;
}

OptProblem circle() {
    OptProblem p;
    p.x0 = {0.0, 0.0};
    p.objective = [](std::span<const double> x) { return x[0] + x[1]; };
    p.constraints = {[](std::span<const double> x) { return 1 - x[0] * x[0] - x[1] * x[1]; }};
    return p;
}

OptProblem rosenbrock() {
    OptProblem p;
    p.x0 = {-1.0, 1.0};
    p.objective = [](std::span<const double> x) {
        return 10 * (x[1] - x[0] * x[0]) * (x[1] - x[0] * x[0]) + (1 - x[0]) * (1 - x[0]);
    };
    p.constraints = {[](std::span<const double> x) { return 1 - x[0] - x[1]; }};
    return p;
}

/// Hock-Schittkowski 43 (Rosen-Suzuki): optimum (0, 1, 2, -1), f = -44.
OptProblem rosen_suzuki() {
    OptProblem p;
    p.x0 = {1, 1, 1, 1};
    p.rho_begin = 0.5;
    p.rho_end = 1e-8;
    p.objective = [](std::span<const double> x) {
        return x[0] * x[0] + x[1] * x[1] + 2 * x[2] * x[2] + x[3] * x[3] - 5 * x[0] - 5 * x[1] - 21 * x[2] + 7 * x[3];
    };
    p.constraints = {
        [](std::span<const double> x) {
            return 8 - x[0] * x[0] - x[1] * x[1] - x[2] * x[2] - x[3] * x[3] - x[0] + x[1] - x[2] + x[3];
        },
        [](std::span<const double> x) {
            return 10 - x[0] * x[0] - 2 * x[1] * x[1] - x[2] * x[2] - 2 * x[3] * x[3] + x[0] + x[3];
        },
        [](std::span<const double> x) {
            return 5 - 2 * x[0] * x[0] - x[1] * x[1] - x[2] * x[2] - 2 * x[0] + x[1] + x[3];
        }};
    return p;
}

}  // namespace

TEST(Cobyla, UnconstrainedQuadratic) {
    const auto r = minimize(quadratic());
    EXPECT_NEAR(r.x_best[0], 1.0, 1e-6);
    EXPECT_EQ(r.status, Status::Converged);
}

TEST(Cobyla, LinearObjectiveOnDisc) {
    const auto r = minimize(circle());
    EXPECT_NEAR(r.x_best[0], -std::sqrt(0.5), 1e-5);
    EXPECT_NEAR(r.x_best[1], -std::sqrt(0.5), 1e-5);
    EXPECT_LE(r.max_violation, 1e-6);
}

TEST(Cobyla, ConstrainedRosenbrockMatchesGridOracle) {
    const auto r = minimize(rosenbrock());
    EXPECT_TRUE(check_feasible(rosenbrock(), r.x_best, 1e-9));
    EXPECT_NEAR(r.f_best, mastitis::oracle::rosenbrock_grid_minimum(), 1e-3);
}

TEST(Cobyla, RosenSuzuki) {
    const auto r = minimize(rosen_suzuki());
    const double want[] = {0, 1, 2, -1};
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(r.x_best[std::size_t(i)], want[i], 1e-4);
    EXPECT_NEAR(r.f_best, -44.0, 1e-6);
}

TEST(Cobyla, ConvergedMeansRadiusReachedFloor) {
    for (const auto& p : {quadratic(), circle(), rosenbrock(), rosen_suzuki()}) {
        const auto r = minimize(p);
        if (r.status == Status::Converged) {
            EXPECT_LE(r.final_rho, p.rho_end);
        }
    }
}

TEST(Cobyla, BudgetRespectedExactly) {
    for (std::size_t budget : {3u, 5u, 10u, 17u, 40u}) {
        auto p = rosenbrock();
        std::size_t calls = 0;
        auto f = p.objective;
        p.objective = [&](std::span<const double> x) {
            ++calls;
            return f(x);
        };
        p.max_evals = budget;
        const auto r = minimize(p);
        EXPECT_LE(calls, budget);
        EXPECT_EQ(r.n_evals, calls);
        EXPECT_EQ(r.status, Status::MaxEvals);
    }
}

TEST(Cobyla, DefaultBudgetIsTwoThousandPerDimension) {
    OptProblem p = rosen_suzuki();
    EXPECT_EQ(p.budget(), 8000u);
    std::size_t calls = 0;
    auto f = p.objective;
    p.objective = [&](std::span<const double> x) {
        ++calls;
        return f(x);
    };
    minimize(p);
    EXPECT_LE(calls, 8000u);
}

TEST(Cobyla, DeterministicAcrossHundredRuns) {
    for (const auto& make : {quadratic, circle, rosenbrock, rosen_suzuki}) {
        const auto first = minimize(make());
        for (int i = 0; i < 100; ++i) {
            const auto r = minimize(make());
            ASSERT_EQ(r.x_best, first.x_best);
            ASSERT_EQ(r.f_best, first.f_best);
            ASSERT_EQ(r.n_evals, first.n_evals);
            ASSERT_EQ(r.status, first.status);
            ASSERT_EQ(r.merit_trace, first.merit_trace);
        }
    }
}

TEST(Cobyla, BestMeritNonIncreasingUnderFixedPenalty) {
    for (const auto& p : {circle(), rosenbrock(), rosen_suzuki()}) {
        const auto r = minimize(p);
        ASSERT_FALSE(r.merit_trace.empty());
        for (std::size_t i = 1; i < r.merit_trace.size(); ++i)
            if (r.merit_trace[i].first == r.merit_trace[i - 1].first) {
                EXPECT_LE(r.merit_trace[i].second, r.merit_trace[i - 1].second + 1e-12) << "step " << i;
            }
    }
}

TEST(Cobyla, NonFiniteValueStopsWithLastGoodPoint) {
    OptProblem p;
    p.x0 = {0.0};
    p.objective = [](std::span<const double> x) {
        return x[0] > 0.3 ? std::numeric_limits<double>::quiet_NaN() : (x[0] - 1) * (x[0] - 1);
    };
    const auto r = minimize(p);
    EXPECT_EQ(r.status, Status::DegenerateSimplex);
    ASSERT_EQ(r.x_best.size(), 1u);
    EXPECT_TRUE(std::isfinite(r.f_best));
    EXPECT_LE(r.x_best[0], 0.3);
}

TEST(Cobyla, InvalidProblemsRejected) {
    auto p = quadratic();
    p.rho_end = p.rho_begin;
    EXPECT_THROW(minimize(p), std::invalid_argument);
    p = quadratic();
    p.x0 = {std::numeric_limits<double>::infinity()};
    EXPECT_THROW(minimize(p), std::invalid_argument);
    p = quadratic();
    p.x0.clear();
    EXPECT_THROW(minimize(p), std::invalid_argument);
}

TEST(CheckFeasible, Boundaries) {
    OptProblem p;
    p.x0 = {0};
    p.constraints = {[](std::span<const double> x) { return x[0]; }};
    EXPECT_TRUE(check_feasible(p, std::vector<double>{0.0}, 0.0));
    EXPECT_TRUE(check_feasible(p, std::vector<double>{-1e-9}, 1e-8));
    EXPECT_FALSE(check_feasible(p, std::vector<double>{-1.0}, 1e-8));
}
