#pragma once

#include <cstdint>

#include "pidtune/pid_policy.hpp"
#include "pidtune/sim/cartpole.hpp"

namespace pidtune::sim {

namespace detail {
inline void append(RolloutLog& log, double t, const CartPoleSim::Measurement& m, double u,
                   double u_raw, double u_realized) {
    log.time.push_back(t);
    log.x.push_back(m.x);
    log.phi.push_back(m.phi);
    log.u.push_back(u);
    log.u_raw.push_back(u_raw);
    log.u_realized.push_back(u_realized);
}
}  // namespace detail

/// Run the discrete PID law (rectangle-rule integral, backward-difference
/// derivative) on the measured signals at control rate until the duration is
/// reached or a safety limit trips. Gains shared with the prediction side;
/// only the measurement path differs.
inline RolloutLog execute_policy(CartPoleSim& sim, const PidStructure& structure,
                                 const Vector& theta, const ErrorSelector& selector,
                                 const Vector& target, double duration_s,
                                 const InitialSpread& init, std::uint64_t seed) {
    require(target.size() == selector.num_error_channels(),
            "execute_policy: target dimension mismatch");
    require(selector.num_measured() == 2,
            "execute_policy: the cart-pole exposes two measured channels");
    const Matrix gains = build_gain_matrix(structure, theta);
    sim.reset_random(init, seed);

    RolloutLog log;
    log.control_hz = sim.control_hz();
    const double dt = 1.0 / sim.control_hz();
    const int ticks = static_cast<int>(std::lround(duration_s * sim.control_hz()));
    const int e = static_cast<int>(selector.num_error_channels());

    Vector acc = Vector::Zero(e), e_prev(e);
    bool first = true;
    log.termination = "duration";
    for (int t = 0; t <= ticks; ++t) {
        const auto m = sim.measure();
        if (!std::isfinite(m.x) || !std::isfinite(m.phi)) {
            log.termination = "non-finite";
            break;
        }
        if (sim.violates_limits(m)) {
            log.termination =
                std::abs(m.x) > sim.limits().position_max ? "position limit" : "angle limit";
            detail::append(log, t * dt, m, 0.0, 0.0, 0.0);
            break;
        }
        if (t == ticks) {
            if (ticks == 0) detail::append(log, 0.0, m, 0.0, 0.0, 0.0);  // single initial sample
            break;
        }

        Vector meas(2);
        meas << m.x, m.phi;
        const Vector err = target - selector.s * meas;
        if (first) {
            e_prev = err;
            first = false;
        }
        acc += dt * err;
        Vector stacked(3 * e);
        stacked << err, acc, (err - e_prev) / dt;
        e_prev = err;
        const double u_cmd = (gains * stacked)(0);

        const double logged = sim.tick(u_cmd);
        detail::append(log, t * dt, m, logged, u_cmd, sim.realized_acceleration());
    }
    return log;
}

/// White-noise excitation rollout used to gather the initial data.
inline RolloutLog random_rollout(CartPoleSim& sim, double noise_std, double duration_s,
                                 const InitialSpread& init, std::uint64_t seed) {
    sim.reset_random(init, seed);
    Rng cmd(Rng::derive(seed, 0xCD));

    RolloutLog log;
    log.control_hz = sim.control_hz();
    const double dt = 1.0 / sim.control_hz();
    const int ticks = static_cast<int>(std::lround(duration_s * sim.control_hz()));
    log.termination = "duration";
    for (int t = 0; t < ticks; ++t) {
        const auto m = sim.measure();
        if (!std::isfinite(m.x) || !std::isfinite(m.phi)) {
            log.termination = "non-finite";
            break;
        }
        if (sim.violates_limits(m)) {
            log.termination =
                std::abs(m.x) > sim.limits().position_max ? "position limit" : "angle limit";
            detail::append(log, t * dt, m, 0.0, 0.0, 0.0);
            break;
        }
        const double u_cmd = cmd.normal(0.0, noise_std);
        const double logged = sim.tick(u_cmd);
        detail::append(log, t * dt, m, logged, u_cmd, sim.realized_acceleration());
    }
    if (ticks == 0) {
        const auto m = sim.measure();
        detail::append(log, 0.0, m, 0.0, 0.0, 0.0);
    }
    return log;
}

}  // namespace pidtune::sim
