#include <catch2/catch_amalgamated.hpp>

#include "pidtune/optimize.hpp"
#include "pidtune/rng.hpp"

using namespace pidtune;

namespace {

Objective quadratic(const Vector& target) {
    return [target](const Vector& x, Vector& g) {
        g = 2.0 * (x - target);
        return (x - target).squaredNorm();
    };
}

double rosenbrock(const Vector& x, Vector& g) {
    const double a = x(1) - x(0) * x(0);
    g.resize(2);
    g(0) = -400.0 * a * x(0) - 2.0 * (1.0 - x(0));
    g(1) = 200.0 * a;
    return 100.0 * a * a + (1.0 - x(0)) * (1.0 - x(0));
}

}  // namespace

TEST_CASE("convex quadratic converges to the optimum") {
    Vector target(3);
    target << 1.0, -2.0, 0.5;
    OptimizerConfig cfg;
    cfg.max_linesearches = 20;
    cfg.gradient_tolerance = 1e-10;
    auto res = minimize(quadratic(target), Vector::Zero(3), cfg);
    REQUIRE(res.value <= 1e-8);
    REQUIRE((res.x - target).norm() <= 1e-4);
    REQUIRE(res.linesearches <= 20);
}

TEST_CASE("Rosenbrock from the classic start") {
    OptimizerConfig cfg;
    cfg.max_linesearches = 200;
    cfg.gradient_tolerance = 1e-9;
    Vector x0(2);
    x0 << -1.2, 1.0;

    SECTION("BFGS") {
        auto res = minimize(rosenbrock, x0, cfg);
        REQUIRE(res.value < 1e-6);
    }
    SECTION("CG") {
        cfg.method = OptimizerConfig::Method::CG;
        cfg.max_linesearches = 800;
        auto res = minimize(rosenbrock, x0, cfg);
        REQUIRE(res.value < 1e-6);
    }
}

TEST_CASE("accepted-step trace is non-increasing") {
    OptimizerConfig cfg;
    cfg.max_linesearches = 150;
    Vector x0(2);
    x0 << -1.2, 1.0;
    auto res = minimize(rosenbrock, x0, cfg);
    REQUIRE(res.trace.size() >= 2);
    for (std::size_t i = 1; i < res.trace.size(); ++i)
        REQUIRE(res.trace[i].value <= res.trace[i - 1].value);
}

TEST_CASE("multistart returns the best run") {
    // objective with two basins; the explicit starts land in different ones
    auto f = [](const Vector& x, Vector& g) {
        const double v = x(0);
        // quartic double well with minima near -1 (value 0) and +1 (value 0.5)
        const double fx = (v * v - 1.0) * (v * v - 1.0) + 0.25 * (v + 1.0);
        g.resize(1);
        g(0) = 4.0 * v * (v * v - 1.0) + 0.25;
        return fx;
    };
    OptimizerConfig cfg;
    cfg.max_linesearches = 60;
    std::vector<Vector> starts{Vector::Constant(1, 0.9), Vector::Constant(1, -0.9)};
    auto res = minimize_multistart(f, starts, cfg);
    REQUIRE(res.x(0) < 0.0);
    REQUIRE(res.all_traces.size() == 2);
    for (const auto& t : res.all_traces)
        REQUIRE(res.value <= t.back().value + 1e-12);
}

TEST_CASE("non-finite objective regions are rejected") {
    // f blows up for x > 2; optimum at 1.5 reachable from 0
    auto f = [](const Vector& x, Vector& g) {
        g.resize(1);
        if (x(0) > 2.0) {
            g(0) = std::numeric_limits<double>::quiet_NaN();
            return std::numeric_limits<double>::quiet_NaN();
        }
        g(0) = 2.0 * (x(0) - 1.5);
        return (x(0) - 1.5) * (x(0) - 1.5);
    };
    OptimizerConfig cfg;
    cfg.max_linesearches = 40;
    auto res = minimize(f, Vector::Zero(1), cfg);
    REQUIRE(std::isfinite(res.value));
    REQUIRE(std::abs(res.x(0) - 1.5) < 1e-4);
}

TEST_CASE("abort with diagnostic when start is non-finite") {
    auto f = [](const Vector&, Vector& g) {
        g.resize(1);
        g(0) = 0.0;
        return std::numeric_limits<double>::quiet_NaN();
    };
    OptimizerConfig cfg;
    auto res = minimize(f, Vector::Zero(1), cfg);
    REQUIRE_FALSE(res.diagnostic.empty());
}

TEST_CASE("deterministic given seed and config") {
    OptimizerConfig cfg;
    cfg.restarts = 3;
    cfg.seed = 17;
    cfg.max_linesearches = 80;
    Vector x0(2);
    x0 << -1.2, 1.0;
    auto a = minimize(rosenbrock, x0, cfg);
    auto b = minimize(rosenbrock, x0, cfg);
    REQUIRE(a.value == b.value);
    REQUIRE(a.x == b.x);
    REQUIRE(a.evaluations == b.evaluations);
}

TEST_CASE("gradient_check on a quadratic") {
    Vector target(4);
    target << 0.3, -0.1, 2.0, 1.0;
    auto rep = gradient_check(quadratic(target), Vector::Ones(4));
    REQUIRE(rep.max_rel_error <= 1e-8);
}

TEST_CASE("gradient_check on an empty parameter vector") {
    auto f = [](const Vector&, Vector& g) {
        g.resize(0);
        return 1.0;
    };
    auto rep = gradient_check(f, Vector());
    REQUIRE(rep.analytic.size() == 0);
    REQUIRE(rep.max_rel_error == 0.0);
}
