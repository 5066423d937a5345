#include <catch2/catch_amalgamated.hpp>

#include "pidtune/sim/plant.hpp"
#include "support/lqr.hpp"

using namespace pidtune;
using namespace pidtune::sim;

namespace {

CartPoleParams frictionless() {
    CartPoleParams p;
    p.cart_friction = 0.0;
    p.pivot_friction = 0.0;
    p.angle_bias = 0.0;
    return p;
}

MeasurementNoise no_noise() { return {0.0, 0.0}; }

ActuatorModel ideal_actuator() {
    ActuatorModel a;
    a.lag_time_constant = 0.0;
    a.dead_time = 0.0;
    return a;
}

// the PID-on-position, PD-on-angle structure used throughout the experiments
PidStructure balance_structure() {
    return PidStructure(1, 2,
                        {{0, 0, PidTerm::P},
                         {0, 0, PidTerm::I},
                         {0, 0, PidTerm::D},
                         {0, 1, PidTerm::P},
                         {0, 1, PidTerm::D}});
}

}  // namespace

TEST_CASE("equilibria are preserved") {
    CartPoleSim sim(frictionless(), ideal_actuator(), no_noise(), {});

    SECTION("exactly upright stays upright") {
        sim.reset({0.0, 0.0, 0.0, 0.0, 0.0}, 1);
        for (int t = 0; t < 100; ++t) sim.tick(0.0);
        REQUIRE(std::abs(sim.true_state().phi) <= 1e-9);
        REQUIRE(std::abs(sim.true_state().x) <= 1e-9);
    }
    SECTION("hanging down stays hanging") {
        sim.reset({0.0, 0.0, std::numbers::pi, 0.0, 0.0}, 1);
        for (int t = 0; t < 100; ++t) sim.tick(0.0);
        REQUIRE(std::abs(sim.true_state().phi - std::numbers::pi) <= 1e-9);
    }
}

TEST_CASE("small-angle frequency matches the linearized value") {
    CartPoleParams p = frictionless();
    CartPoleSim sim(p, ideal_actuator(), no_noise(), {});
    sim.reset({0.0, 0.0, std::numbers::pi + 0.05, 0.0, 0.0}, 1);

    const double duration = 10.0;
    int crossings = 0;
    double prev = sim.true_state().phi - std::numbers::pi;
    double first_cross = -1.0, last_cross = -1.0;
    for (int t = 0; t < static_cast<int>(duration * 100); ++t) {
        sim.tick(0.0);
        const double cur = sim.true_state().phi - std::numbers::pi;
        if (prev != 0.0 && ((prev < 0.0) != (cur < 0.0))) {
            ++crossings;
            const double tc = (t + 1) * 0.01;
            if (first_cross < 0.0) first_cross = tc;
            last_cross = tc;
        }
        prev = cur;
    }
    REQUIRE(crossings >= 4);
    const double omega =
        std::numbers::pi * (crossings - 1) / (last_cross - first_cross);
    const double expected =
        std::sqrt(p.gravity / p.pendulum_length * (1.0 + p.pendulum_mass / p.cart_mass));
    REQUIRE(omega == Catch::Approx(expected).epsilon(0.02));
}

TEST_CASE("energy drift stays below 0.1 percent over 10 s") {
    CartPoleSim sim(frictionless(), ideal_actuator(), no_noise(), {});
    sim.reset({0.0, 0.0, 0.3, 0.0, 0.0}, 1);
    const double e0 = sim.energy();
    for (int t = 0; t < 1000; ++t) sim.tick(0.0);
    REQUIRE(std::abs(sim.energy() - e0) <= 1e-3 * std::abs(e0));
}

TEST_CASE("actuator chain opens a commanded-vs-realized gap") {
    CartPoleSim sim(CartPoleParams{}, ActuatorModel{}, no_noise(), {});
    sim.reset({}, 1);
    double cmd_sq = 0.0, diff_sq = 0.0;
    for (int t = 0; t < 500; ++t) {
        const double u = std::sin(2.0 * std::numbers::pi * t * 0.01);
        sim.tick(u);
        if (t >= 100) {  // steady state
            cmd_sq += u * u;
            const double d = u - sim.realized_acceleration();
            diff_sq += d * d;
        }
    }
    REQUIRE(std::sqrt(diff_sq) / std::sqrt(cmd_sq) > 0.2);
}

TEST_CASE("zero gains lose the pendulum within a few seconds") {
    CartPoleSim sim(CartPoleParams{}, ActuatorModel{}, MeasurementNoise{}, {});
    auto log = execute_policy(sim, balance_structure(), Vector::Zero(5),
                              ErrorSelector::identity(2), Vector::Zero(2), 20.0,
                              InitialSpread{}, 7);
    REQUIRE(log.termination == "angle limit");
    REQUIRE(log.duration() < 10.0);
}

TEST_CASE("LQR fixture gains balance for the full duration") {
    CartPoleParams params;
    Vector qd(4);
    qd << 1.0, 0.5, 12.0, 1.0;
    Matrix q = qd.asDiagonal();
    Matrix r = Matrix::Constant(1, 1, 1.0);
    const Vector k = pidtune::testing::cartpole_lqr(params, q, r);
    Vector theta(5);
    theta << k(0), 0.05 * k(0), k(1), k(2), k(3);

    CartPoleSim sim(params, ActuatorModel{}, MeasurementNoise{}, {});
    auto log = execute_policy(sim, balance_structure(), theta, ErrorSelector::identity(2),
                              Vector::Zero(2), 20.0, InitialSpread{}, 11);
    INFO("terminated: " << log.termination << " after " << log.duration() << " s");
    REQUIRE(log.termination == "duration");
    REQUIRE(log.size() == 2000);
}

TEST_CASE("duration zero gives a single-sample log") {
    CartPoleSim sim(CartPoleParams{}, ActuatorModel{}, MeasurementNoise{}, {});
    auto log = execute_policy(sim, balance_structure(), Vector::Zero(5),
                              ErrorSelector::identity(2), Vector::Zero(2), 0.0,
                              InitialSpread{}, 3);
    REQUIRE(log.size() == 1);
    REQUIRE(log.termination == "duration");
}

TEST_CASE("random rollouts") {
    CartPoleSim sim(CartPoleParams{}, ActuatorModel{}, MeasurementNoise{}, {});

    SECTION("zero excitation gives a zero input log") {
        auto log = random_rollout(sim, 0.0, 1.0, InitialSpread{}, 5);
        for (double u : log.u) REQUIRE(u == 0.0);
        for (double u : log.u_raw) REQUIRE(u == 0.0);
    }
    SECTION("command statistics match the configured noise") {
        double sq = 0.0;
        long n = 0;
        for (std::uint64_t seed = 0; n < 10'000 && seed < 200; ++seed) {
            auto log = random_rollout(sim, 1.0, 20.0, InitialSpread{}, seed);
            // last sample may be the unactuated limit-violation sentinel
            const std::size_t usable = log.size() > 0 ? log.size() - 1 : 0;
            for (std::size_t i = 0; i < usable; ++i) sq += log.u_raw[i] * log.u_raw[i];
            n += static_cast<long>(usable);
        }
        REQUIRE(n >= 10'000);
        REQUIRE(std::sqrt(sq / n) == Catch::Approx(1.0).epsilon(0.05));
    }
    SECTION("identical seeds give byte-identical logs") {
        auto a = random_rollout(sim, 1.0, 5.0, InitialSpread{}, 42);
        auto b = random_rollout(sim, 1.0, 5.0, InitialSpread{}, 42);
        REQUIRE(a.time == b.time);
        REQUIRE(a.x == b.x);
        REQUIRE(a.phi == b.phi);
        REQUIRE(a.u == b.u);
        REQUIRE(a.termination == b.termination);
    }
}
