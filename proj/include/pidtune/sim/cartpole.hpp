#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <string>
#include <vector>

#include "pidtune/data/filter.hpp"
#include "pidtune/linalg.hpp"
#include "pidtune/rng.hpp"

namespace pidtune::sim {

inline constexpr double deg(double d) { return d * std::numbers::pi / 180.0; }

/// Point-mass pendulum on an acceleration-commanded cart. The commanded
/// acceleration is converted to a cart force by a deliberately crude inverse
/// dynamics F = (m_c + m_p) a that ignores the pendulum reaction, one of the
/// imperfections the learned model has to absorb.
struct CartPoleParams {
    double pendulum_length = 0.5;  // m, pivot to bob
    double pendulum_mass = 0.1;    // kg
    double cart_mass = 1.0;        // kg
    double cart_friction = 0.1;    // N s/m, viscous
    double pivot_friction = 2e-4;  // N m s, viscous
    double gravity = 9.81;         // m/s^2
    double angle_bias = deg(0.5);  // rad, constant measurement offset

    void validate() const {
        require(pendulum_length > 0 && pendulum_mass > 0 && cart_mass > 0,
                "CartPoleParams: masses and length must be positive");
        require(gravity > 0, "CartPoleParams: gravity must be positive");
    }
};

/// Actuation imperfections between the commanded and realized acceleration:
/// command low-pass, dead time, first-order lag, safety clamp.
struct ActuatorModel {
    double filter_cutoff_hz = 20.0;  // second-order Butterworth at control rate
    double dead_time = 0.0;          // s, rounded to whole control ticks
    double lag_time_constant = 0.08; // s, first-order tracking lag
    double u_max = 3.0;              // m/s^2

    void validate() const {
        require(dead_time >= 0.0 && lag_time_constant >= 0.0,
                "ActuatorModel: times must be non-negative");
        require(u_max > 0.0, "ActuatorModel: clamp must be positive");
    }
};

struct MeasurementNoise {
    double position_std = 1e-3;   // m
    double angle_std = deg(0.1);  // rad
};

struct SafetyLimits {
    double position_max = 0.3;    // m
    double angle_max = deg(30.0); // rad
};

/// Gaussian spread of the initial condition around the upright equilibrium.
struct InitialSpread {
    double position_std = 0.01;          // m
    double angle_std = deg(1.0);         // rad
    double velocity_std = 0.005;         // m/s
    double angular_velocity_std = deg(0.5);  // rad/s
};

struct PhysState {
    double x = 0.0;     // cart position, m
    double xd = 0.0;    // cart velocity, m/s
    double phi = 0.0;   // pendulum angle from upright, rad
    double phid = 0.0;  // angular velocity, rad/s
    double act = 0.0;   // actuator lag state, m/s^2
};

/// Control-rate measurement log of one rollout. The u column holds the
/// commanded acceleration after the command filter and before the clamp;
/// u_raw and u_realized are diagnostic columns (controller output and the
/// acceleration the actuator chain actually delivered).
struct RolloutLog {
    double control_hz = 100.0;
    std::vector<double> time;       // s
    std::vector<double> x;          // measured cart position, m
    std::vector<double> phi;        // measured pendulum angle, rad
    std::vector<double> u;          // logged command, m/s^2
    std::vector<double> u_raw;      // pre-filter command, m/s^2
    std::vector<double> u_realized; // post-chain acceleration, m/s^2
    std::string termination;   // "duration" | "position limit" | "angle limit" | "non-finite"

    std::size_t size() const { return time.size(); }
    double duration() const { return time.empty() ? 0.0 : time.back(); }
};

class CartPoleSim {
public:
    CartPoleSim(CartPoleParams params, ActuatorModel actuator, MeasurementNoise noise,
                SafetyLimits limits, double control_hz = 100.0, double integrator_hz = 1000.0)
        : params_(params), actuator_(actuator), noise_(noise), limits_(limits),
          control_hz_(control_hz), integrator_hz_(integrator_hz), rng_(0) {
        params_.validate();
        actuator_.validate();
        require(control_hz_ > 0 && integrator_hz_ >= control_hz_,
                "CartPoleSim: integrator must run at least at the control rate");
        substeps_ = static_cast<int>(std::lround(integrator_hz_ / control_hz_));
        filter_ = data::Biquad::butterworth_lowpass(actuator_.filter_cutoff_hz, control_hz_);
        delay_ticks_ = static_cast<int>(std::lround(actuator_.dead_time * control_hz_));
        reset({}, 0);
    }

    void reset(const PhysState& state, std::uint64_t seed) {
        state_ = state;
        rng_ = Rng(Rng::derive(seed, 0x51u));
        filter_.reset();
        delay_line_.assign(static_cast<std::size_t>(delay_ticks_), 0.0);
        last_realized_ = 0.0;
    }

    /// Sample an initial condition near upright and reset to it.
    void reset_random(const InitialSpread& spread, std::uint64_t seed) {
        Rng init(Rng::derive(seed, 0x1c0u));
        PhysState s;
        s.x = init.normal(0.0, spread.position_std);
        s.xd = init.normal(0.0, spread.velocity_std);
        s.phi = init.normal(0.0, spread.angle_std);
        s.phid = init.normal(0.0, spread.angular_velocity_std);
        reset(s, seed);
    }

    struct Measurement {
        double x;
        double phi;
    };

    /// Measured state (noise plus constant angle bias).
    Measurement measure() {
        return {state_.x + noise_.position_std * rng_.normal(),
                state_.phi + params_.angle_bias + noise_.angle_std * rng_.normal()};
    }

    /// Advance one control period under the commanded acceleration.
    /// Returns the logged command (post-filter, pre-clamp).
    double tick(double u_cmd) {
        const double filtered = filter_.step(u_cmd);
        double delayed = filtered;
        if (delay_ticks_ > 0) {
            delay_line_.push_back(filtered);
            delayed = delay_line_.front();
            delay_line_.pop_front();
        }
        const double dt = 1.0 / integrator_hz_;
        for (int i = 0; i < substeps_; ++i) rk4_substep(delayed, dt);
        last_realized_ = clamp_accel(state_.act);
        return filtered;
    }

    const PhysState& true_state() const { return state_; }
    double realized_acceleration() const { return last_realized_; }
    const SafetyLimits& limits() const { return limits_; }
    double control_hz() const { return control_hz_; }

    bool violates_limits(const Measurement& m) const {
        return std::abs(m.x) > limits_.position_max || std::abs(m.phi) > limits_.angle_max;
    }

    /// Total mechanical energy of the cart-pendulum (integration quality gate).
    double energy() const {
        const auto& p = params_;
        const auto& s = state_;
        const double t = 0.5 * (p.cart_mass + p.pendulum_mass) * s.xd * s.xd +
                         p.pendulum_mass * p.pendulum_length * s.xd * s.phid * std::cos(s.phi) +
                         0.5 * p.pendulum_mass * p.pendulum_length * p.pendulum_length *
                             s.phid * s.phid;
        const double v = p.pendulum_mass * p.gravity * p.pendulum_length * std::cos(s.phi);
        return t + v;
    }

private:
    double clamp_accel(double a) const {
        return std::clamp(a, -actuator_.u_max, actuator_.u_max);
    }

    struct Deriv {
        double xd, xdd, phid, phidd, actd;
    };

    Deriv dynamics(const PhysState& s, double u_delayed) const {
        const auto& p = params_;
        const double force = (p.cart_mass + p.pendulum_mass) * clamp_accel(s.act);
        const double ml = p.pendulum_mass * p.pendulum_length;
        const double cphi = std::cos(s.phi), sphi = std::sin(s.phi);

        // [ mc+mp      ml cos ] [xdd  ]   [ F - cc xd + ml phid^2 sin        ]
        // [ ml cos     ml l   ] [phidd] = [ mp g l sin - cp phid             ]
        const double a11 = p.cart_mass + p.pendulum_mass;
        const double a12 = ml * cphi;
        const double a22 = ml * p.pendulum_length;
        const double r1 = force - p.cart_friction * s.xd + ml * s.phid * s.phid * sphi;
        const double r2 = p.pendulum_mass * p.gravity * p.pendulum_length * sphi -
                          p.pivot_friction * s.phid;
        const double det = a11 * a22 - a12 * a12;
        Deriv d;
        d.xd = s.xd;
        d.phid = s.phid;
        d.xdd = (a22 * r1 - a12 * r2) / det;
        d.phidd = (a11 * r2 - a12 * r1) / det;
        d.actd = actuator_.lag_time_constant > 0.0
                     ? (u_delayed - s.act) / actuator_.lag_time_constant
                     : 0.0;
        return d;
    }

    static PhysState advance(const PhysState& s, const Deriv& d, double h) {
        return {s.x + h * d.xd, s.xd + h * d.xdd, s.phi + h * d.phid,
                s.phid + h * d.phidd, s.act + h * d.actd};
    }

    void rk4_substep(double u_delayed, double h) {
        if (actuator_.lag_time_constant <= 0.0) state_.act = u_delayed;
        const Deriv k1 = dynamics(state_, u_delayed);
        const Deriv k2 = dynamics(advance(state_, k1, 0.5 * h), u_delayed);
        const Deriv k3 = dynamics(advance(state_, k2, 0.5 * h), u_delayed);
        const Deriv k4 = dynamics(advance(state_, k3, h), u_delayed);
        state_.x += h / 6.0 * (k1.xd + 2 * k2.xd + 2 * k3.xd + k4.xd);
        state_.xd += h / 6.0 * (k1.xdd + 2 * k2.xdd + 2 * k3.xdd + k4.xdd);
        state_.phi += h / 6.0 * (k1.phid + 2 * k2.phid + 2 * k3.phid + k4.phid);
        state_.phid += h / 6.0 * (k1.phidd + 2 * k2.phidd + 2 * k3.phidd + k4.phidd);
        state_.act += h / 6.0 * (k1.actd + 2 * k2.actd + 2 * k3.actd + k4.actd);
    }

    CartPoleParams params_;
    ActuatorModel actuator_;
    MeasurementNoise noise_;
    SafetyLimits limits_;
    double control_hz_;
    double integrator_hz_;
    int substeps_ = 10;
    int delay_ticks_ = 0;
    data::Biquad filter_;
    std::deque<double> delay_line_;
    PhysState state_;
    Rng rng_;
    double last_realized_ = 0.0;
};

}  // namespace pidtune::sim
