#pragma once

#include <cstdint>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "pidtune/data/pipeline.hpp"
#include "pidtune/optimize.hpp"
#include "pidtune/pid_policy.hpp"
#include "pidtune/rollout/cost.hpp"
#include "pidtune/sim/cartpole.hpp"

namespace pidtune::io {

using nlohmann::json;

/// Everything a learning experiment needs; defaults reproduce the reference
/// cart-pole balancing setup (weights 1/0.2^2 and 1/0.02^2 on position and
/// angle error, 1/0.4^2 on the input, 10 s horizon at 25 Hz, four random
/// rollouts, 20 s test rollouts, 400 inducing points, histories (4, 3, 7)).
struct ExperimentConfig {
    sim::CartPoleParams plant;
    sim::ActuatorModel actuator;
    sim::MeasurementNoise noise;
    sim::SafetyLimits limits;
    sim::InitialSpread init;

    std::vector<GainEntry> structure{{0, 0, PidTerm::P},
                                     {0, 0, PidTerm::I},
                                     {0, 0, PidTerm::D},
                                     {0, 1, PidTerm::P},
                                     {0, 1, PidTerm::D}};

    Vector cost_q = (Vector(2) << 1.0 / 0.04, 1.0 / 0.0004).finished();  // diag(1/0.2^2, 1/0.02^2)
    Vector cost_r = Vector::Constant(1, 1.0 / 0.16);                     // 1/0.4^2
    double horizon_s = 10.0;
    double control_hz = 100.0;
    double model_hz = 25.0;

    bool narx_auto = false;
    data::NarxConfig narx{4, 3, 7, 25.0};
    data::HistoryGrid narx_grid;

    Index num_inducing = 400;
    std::string inducing_init = "kmeans";  // or "subset"
    int mle_restarts = 4;
    Index mle_max_points = 800;
    bool refit_hyperparameters = false;

    int opt_max_linesearches = 35;
    double opt_gradient_tolerance = 1e-5;
    int opt_random_restarts = 0;
    double opt_restart_noise = 0.1;
    bool opt_zero_restart = true;  // always also optimize from theta = 0
    std::string opt_method = "bfgs";

    int num_random_rollouts = 4;
    double random_noise_std = 1.0;
    double rollout_duration_s = 20.0;
    int max_iterations = 10;
    int extra_iterations_after_success = 2;
    double success_angle = sim::deg(2.0);
    double success_window_s = 5.0;
    double cov_trace_bound = 4.0;

    std::uint64_t seed = 0;

    PidStructure pid_structure() const { return PidStructure(1, 2, structure); }
    ErrorSelector selector() const { return ErrorSelector::identity(2); }
    Vector target() const { return Vector::Zero(2); }
    int horizon_steps() const { return static_cast<int>(std::lround(horizon_s * model_hz)); }

    CostConfig cost_config() const {
        CostConfig c;
        c.q = cost_q.asDiagonal();
        c.r = cost_r.asDiagonal();
        c.target = target();
        c.horizon = horizon_steps();
        c.dt = 1.0 / model_hz;
        return c;
    }

    StateLayout state_layout() const {
        return StateLayout({narx.n_x, narx.n_phi}, 1, narx.n_u, selector());
    }

    OptimizerConfig optimizer_config() const {
        OptimizerConfig c;
        c.method = opt_method == "cg" ? OptimizerConfig::Method::CG
                                      : OptimizerConfig::Method::BFGS;
        c.max_linesearches = opt_max_linesearches;
        c.gradient_tolerance = opt_gradient_tolerance;
        c.restarts = opt_random_restarts;
        c.restart_noise = opt_restart_noise;
        return c;
    }

    void validate() const {
        plant.validate();
        actuator.validate();
        narx.validate();
        require(cost_q.size() == 2 && cost_r.size() == 1, "config: cost weights have fixed sizes 2 and 1");
        require(horizon_s > 0 && control_hz > 0 && model_hz > 0, "config: rates must be positive");
        require(num_random_rollouts >= 1, "config: need at least one random rollout");
        require(max_iterations >= 0, "config: max_iterations must be >= 0");
        require(num_inducing >= 1, "config: need at least one inducing point");
        require(inducing_init == "kmeans" || inducing_init == "subset",
                "config: inducing_init must be 'kmeans' or 'subset'");
        require(opt_method == "bfgs" || opt_method == "cg",
                "config: optimizer method must be 'bfgs' or 'cg'");
        pid_structure();  // throws on malformed structure entries
    }
};

namespace detail {

inline void check_keys(const json& j, const std::string& where,
                       const std::set<std::string>& allowed) {
    for (const auto& [key, value] : j.items())
        if (!allowed.contains(key))
            throw config_error("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_vector(const json& j, const char* key, Vector& out) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    out = Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline PidTerm term_from_string(const std::string& s) {
    if (s == "P") return PidTerm::P;
    if (s == "I") return PidTerm::I;
    if (s == "D") return PidTerm::D;
    throw config_error("config: PID term must be one of P, I, D (got '" + s + "')");
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    detail::check_keys(j, "the top level",
                       {"plant", "actuator", "noise", "limits", "initial_state", "structure",
                        "cost", "rates", "narx", "gp", "optimizer", "learn", "seed"});

    if (j.contains("plant")) {
        const auto& p = j.at("plant");
        detail::check_keys(p, "plant",
                           {"pendulum_length", "pendulum_mass", "cart_mass", "cart_friction",
                            "pivot_friction", "gravity", "angle_bias_deg"});
        detail::read(p, "pendulum_length", c.plant.pendulum_length);
        detail::read(p, "pendulum_mass", c.plant.pendulum_mass);
        detail::read(p, "cart_mass", c.plant.cart_mass);
        detail::read(p, "cart_friction", c.plant.cart_friction);
        detail::read(p, "pivot_friction", c.plant.pivot_friction);
        detail::read(p, "gravity", c.plant.gravity);
        if (p.contains("angle_bias_deg")) c.plant.angle_bias = sim::deg(p.at("angle_bias_deg").get<double>());
    }
    if (j.contains("actuator")) {
        const auto& a = j.at("actuator");
        detail::check_keys(a, "actuator",
                           {"filter_cutoff_hz", "dead_time_s", "lag_time_constant_s", "u_max"});
        detail::read(a, "filter_cutoff_hz", c.actuator.filter_cutoff_hz);
        detail::read(a, "dead_time_s", c.actuator.dead_time);
        detail::read(a, "lag_time_constant_s", c.actuator.lag_time_constant);
        detail::read(a, "u_max", c.actuator.u_max);
    }
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        detail::check_keys(n, "noise", {"position_std", "angle_std_deg"});
        detail::read(n, "position_std", c.noise.position_std);
        if (n.contains("angle_std_deg")) c.noise.angle_std = sim::deg(n.at("angle_std_deg").get<double>());
    }
    if (j.contains("limits")) {
        const auto& l = j.at("limits");
        detail::check_keys(l, "limits", {"position_max", "angle_max_deg"});
        detail::read(l, "position_max", c.limits.position_max);
        if (l.contains("angle_max_deg")) c.limits.angle_max = sim::deg(l.at("angle_max_deg").get<double>());
    }
    if (j.contains("initial_state")) {
        const auto& i = j.at("initial_state");
        detail::check_keys(i, "initial_state",
                           {"position_std", "angle_std_deg", "velocity_std",
                            "angular_velocity_std_deg"});
        detail::read(i, "position_std", c.init.position_std);
        detail::read(i, "velocity_std", c.init.velocity_std);
        if (i.contains("angle_std_deg")) c.init.angle_std = sim::deg(i.at("angle_std_deg").get<double>());
        if (i.contains("angular_velocity_std_deg"))
            c.init.angular_velocity_std = sim::deg(i.at("angular_velocity_std_deg").get<double>());
    }
    if (j.contains("structure")) {
        c.structure.clear();
        for (const auto& e : j.at("structure")) {
            detail::check_keys(e, "structure entries", {"input", "error_channel", "term"});
            c.structure.push_back({e.at("input").get<int>(), e.at("error_channel").get<int>(),
                                   detail::term_from_string(e.at("term").get<std::string>())});
        }
    }
    if (j.contains("cost")) {
        const auto& k = j.at("cost");
        detail::check_keys(k, "cost", {"q", "r", "horizon_s"});
        detail::read_vector(k, "q", c.cost_q);
        detail::read_vector(k, "r", c.cost_r);
        detail::read(k, "horizon_s", c.horizon_s);
    }
    if (j.contains("rates")) {
        const auto& r = j.at("rates");
        detail::check_keys(r, "rates", {"control_hz", "model_hz"});
        detail::read(r, "control_hz", c.control_hz);
        detail::read(r, "model_hz", c.model_hz);
    }
    if (j.contains("narx")) {
        const auto& n = j.at("narx");
        detail::check_keys(n, "narx", {"auto", "n_x", "n_phi", "n_u", "grid_n_x", "grid_n_phi", "grid_n_u"});
        detail::read(n, "auto", c.narx_auto);
        detail::read(n, "n_x", c.narx.n_x);
        detail::read(n, "n_phi", c.narx.n_phi);
        detail::read(n, "n_u", c.narx.n_u);
        detail::read(n, "grid_n_x", c.narx_grid.n_x);
        detail::read(n, "grid_n_phi", c.narx_grid.n_phi);
        detail::read(n, "grid_n_u", c.narx_grid.n_u);
    }
    if (j.contains("gp")) {
        const auto& g = j.at("gp");
        detail::check_keys(g, "gp",
                           {"num_inducing", "inducing_init", "mle_restarts", "mle_max_points",
                            "refit_hyperparameters"});
        if (g.contains("num_inducing")) c.num_inducing = g.at("num_inducing").get<Index>();
        detail::read(g, "inducing_init", c.inducing_init);
        detail::read(g, "mle_restarts", c.mle_restarts);
        if (g.contains("mle_max_points")) c.mle_max_points = g.at("mle_max_points").get<Index>();
        detail::read(g, "refit_hyperparameters", c.refit_hyperparameters);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::check_keys(o, "optimizer",
                           {"method", "max_linesearches", "gradient_tolerance", "random_restarts",
                            "restart_noise", "zero_restart"});
        detail::read(o, "method", c.opt_method);
        detail::read(o, "max_linesearches", c.opt_max_linesearches);
        detail::read(o, "gradient_tolerance", c.opt_gradient_tolerance);
        detail::read(o, "random_restarts", c.opt_random_restarts);
        detail::read(o, "restart_noise", c.opt_restart_noise);
        detail::read(o, "zero_restart", c.opt_zero_restart);
    }
    if (j.contains("learn")) {
        const auto& l = j.at("learn");
        detail::check_keys(l, "learn",
                           {"num_random_rollouts", "random_noise_std", "rollout_duration_s",
                            "max_iterations", "extra_iterations_after_success",
                            "success_angle_deg", "success_window_s", "cov_trace_bound"});
        detail::read(l, "num_random_rollouts", c.num_random_rollouts);
        detail::read(l, "random_noise_std", c.random_noise_std);
        detail::read(l, "rollout_duration_s", c.rollout_duration_s);
        detail::read(l, "max_iterations", c.max_iterations);
        detail::read(l, "extra_iterations_after_success", c.extra_iterations_after_success);
        if (l.contains("success_angle_deg")) c.success_angle = sim::deg(l.at("success_angle_deg").get<double>());
        detail::read(l, "success_window_s", c.success_window_s);
        detail::read(l, "cov_trace_bound", c.cov_trace_bound);
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.narx.model_hz = c.model_hz;
    c.validate();
    return c;
}

inline json config_to_json(const ExperimentConfig& c) {
    json j;
    j["plant"] = {{"pendulum_length", c.plant.pendulum_length},
                  {"pendulum_mass", c.plant.pendulum_mass},
                  {"cart_mass", c.plant.cart_mass},
                  {"cart_friction", c.plant.cart_friction},
                  {"pivot_friction", c.plant.pivot_friction},
                  {"gravity", c.plant.gravity},
                  {"angle_bias_deg", c.plant.angle_bias * 180.0 / std::numbers::pi}};
    j["actuator"] = {{"filter_cutoff_hz", c.actuator.filter_cutoff_hz},
                     {"dead_time_s", c.actuator.dead_time},
                     {"lag_time_constant_s", c.actuator.lag_time_constant},
                     {"u_max", c.actuator.u_max}};
    j["noise"] = {{"position_std", c.noise.position_std},
                  {"angle_std_deg", c.noise.angle_std * 180.0 / std::numbers::pi}};
    j["limits"] = {{"position_max", c.limits.position_max},
                   {"angle_max_deg", c.limits.angle_max * 180.0 / std::numbers::pi}};
    j["initial_state"] = {
        {"position_std", c.init.position_std},
        {"angle_std_deg", c.init.angle_std * 180.0 / std::numbers::pi},
        {"velocity_std", c.init.velocity_std},
        {"angular_velocity_std_deg", c.init.angular_velocity_std * 180.0 / std::numbers::pi}};
    j["structure"] = json::array();
    for (const auto& e : c.structure)
        j["structure"].push_back({{"input", e.input},
                                  {"error_channel", e.channel},
                                  {"term", to_string(e.term)}});
    j["cost"] = {{"q", std::vector<double>(c.cost_q.begin(), c.cost_q.end())},
                 {"r", std::vector<double>(c.cost_r.begin(), c.cost_r.end())},
                 {"horizon_s", c.horizon_s}};
    j["rates"] = {{"control_hz", c.control_hz}, {"model_hz", c.model_hz}};
    j["narx"] = {{"auto", c.narx_auto}, {"n_x", c.narx.n_x}, {"n_phi", c.narx.n_phi},
                 {"n_u", c.narx.n_u},   {"grid_n_x", c.narx_grid.n_x},
                 {"grid_n_phi", c.narx_grid.n_phi}, {"grid_n_u", c.narx_grid.n_u}};
    j["gp"] = {{"num_inducing", c.num_inducing},
               {"inducing_init", c.inducing_init},
               {"mle_restarts", c.mle_restarts},
               {"mle_max_points", c.mle_max_points},
               {"refit_hyperparameters", c.refit_hyperparameters}};
    j["optimizer"] = {{"method", c.opt_method},
                      {"max_linesearches", c.opt_max_linesearches},
                      {"gradient_tolerance", c.opt_gradient_tolerance},
                      {"random_restarts", c.opt_random_restarts},
                      {"restart_noise", c.opt_restart_noise},
                      {"zero_restart", c.opt_zero_restart}};
    j["learn"] = {{"num_random_rollouts", c.num_random_rollouts},
                  {"random_noise_std", c.random_noise_std},
                  {"rollout_duration_s", c.rollout_duration_s},
                  {"max_iterations", c.max_iterations},
                  {"extra_iterations_after_success", c.extra_iterations_after_success},
                  {"success_angle_deg", c.success_angle * 180.0 / std::numbers::pi},
                  {"success_window_s", c.success_window_s},
                  {"cov_trace_bound", c.cov_trace_bound}};
    j["seed"] = c.seed;
    return j;
}

/// FNV-1a over the canonical serialized config; stored in the manifest.
inline std::string config_hash(const ExperimentConfig& c) {
    const std::string text = config_to_json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace pidtune::io
