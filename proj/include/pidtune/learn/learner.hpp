#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "pidtune/data/pipeline.hpp"
#include "pidtune/io/config.hpp"
#include "pidtune/io/csv.hpp"
#include "pidtune/rollout/engine.hpp"
#include "pidtune/sim/plant.hpp"

namespace pidtune::learn {

namespace fs = std::filesystem;

struct IterationRecord {
    int iteration = 0;
    Vector theta;
    double predicted_cost = 0.0;
    double observed_cost = 0.0;
    double interaction_seconds = 0.0;  // cumulative plant time
    bool success = false;
    std::string rollout_termination;
    std::string model_checkpoint;  // run-dir relative paths, empty without persistence
    std::string optimizer_trace;
};

struct LearnResult {
    std::vector<IterationRecord> records;
    bool success = false;
    int first_success_iteration = -1;
    Vector theta;
    data::NarxConfig narx;
    double interaction_seconds = 0.0;
    std::vector<std::string> warnings;
};

/// Saturated cost of an executed rollout, evaluated pointwise on the
/// model-rate trajectory over the prediction horizon; steps beyond the end of
/// a terminated rollout count the saturation maximum of 1.
inline double evaluate_observed_cost(const sim::RolloutLog& model_rate_log,
                                     const CostConfig& cost, const ErrorSelector& selector,
                                     bool use_input_cost) {
    double total = 0.0;
    const int n = static_cast<int>(model_rate_log.size());
    for (int t = 0; t <= cost.horizon; ++t) {
        if (t >= n) {
            total += 1.0;
            continue;
        }
        Vector meas(2);
        meas << model_rate_log.x[static_cast<std::size_t>(t)],
            model_rate_log.phi[static_cast<std::size_t>(t)];
        const Vector e = cost.target - selector.s * meas;
        double quad = e.dot(cost.q * e);
        if (use_input_cost && t >= 1) {
            const double u_prev = model_rate_log.u[static_cast<std::size_t>(t - 1)];
            quad += u_prev * cost.r(0, 0) * u_prev;
        }
        total += 1.0 - std::exp(-0.5 * quad);
    }
    return total;
}

/// Success criterion: the measured angle stays within the configured band for
/// the final window of a full-duration rollout.
inline bool stabilized(const sim::RolloutLog& log, const io::ExperimentConfig& cfg) {
    if (log.termination != "duration") return false;
    const double t_start = cfg.rollout_duration_s - cfg.success_window_s;
    for (std::size_t i = 0; i < log.size(); ++i) {
        if (log.time[i] < t_start) continue;
        if (std::abs(log.phi[i]) >= cfg.success_angle) return false;
    }
    return true;
}

namespace detail {

inline std::vector<std::string> state_column_names(const StateLayout& lay) {
    std::vector<std::string> names;
    const char* channel[] = {"x", "phi"};
    for (int c = 0; c < lay.num_channels(); ++c)
        for (int k = 0; k < lay.channel_history()[static_cast<std::size_t>(c)]; ++k)
            names.push_back(std::string(channel[c]) + "_t" + (k ? "-" + std::to_string(k) : ""));
    for (int lag = 0; lag < lay.input_history() - 1; ++lag)
        names.push_back("u_t-" + std::to_string(lag + 1));
    for (const char* base : {"e_prev", "int_e"})
        for (int e = 0; e < lay.num_error_channels(); ++e)
            names.push_back(std::string(base) + "_" + std::to_string(e));
    return names;
}

inline void write_rollout_csv(const fs::path& path, const sim::RolloutLog& log) {
    io::CsvWriter csv(path);
    csv.header({"time", "x", "phi", "u", "u_raw", "u_realized"});
    for (std::size_t i = 0; i < log.size(); ++i)
        csv.row({log.time[i], log.x[i], log.phi[i], log.u[i], log.u_raw[i], log.u_realized[i]});
}

inline void write_rollout_meta(const fs::path& path, const sim::RolloutLog& log,
                               const std::string& kind, std::uint64_t seed,
                               const Vector* theta = nullptr) {
    nlohmann::json j;
    j["kind"] = kind;
    j["seed"] = seed;
    j["control_hz"] = log.control_hz;
    j["termination"] = log.termination;
    j["samples"] = log.size();
    if (theta) j["theta"] = std::vector<double>(theta->begin(), theta->end());
    std::ofstream(path) << j.dump(2) << "\n";
}

inline void write_prediction_csv(const fs::path& path, const StateLayout& lay,
                                 const RolloutPrediction& pred, double dt) {
    io::CsvWriter csv(path);
    std::vector<std::string> header{"t", "time"};
    for (const auto& name : state_column_names(lay)) {
        header.push_back(name + "_mean");
        header.push_back(name + "_std");
    }
    header.push_back("expected_cost");
    csv.header(header);
    for (std::size_t t = 0; t < pred.states.size(); ++t) {
        std::vector<double> row{static_cast<double>(t), static_cast<double>(t) * dt};
        const auto& g = pred.states[t];
        for (Index i = 0; i < g.dim(); ++i) {
            row.push_back(g.mean(i));
            row.push_back(std::sqrt(std::max(0.0, g.cov(i, i))));
        }
        row.push_back(pred.per_step_cost(static_cast<Index>(t)));
        csv.row(row);
    }
}

inline void write_opt_trace_csv(const fs::path& path, const MinimizeResult& res) {
    io::CsvWriter csv(path);
    csv.header({"run", "linesearch", "cost"});
    for (std::size_t r = 0; r < res.all_traces.size(); ++r)
        for (const auto& p : res.all_traces[r])
            csv.row({static_cast<double>(r), static_cast<double>(p.linesearch), p.value});
}

inline void write_record_json(const fs::path& path, const IterationRecord& rec) {
    nlohmann::json j;
    j["iteration"] = rec.iteration;
    j["theta"] = std::vector<double>(rec.theta.begin(), rec.theta.end());
    j["predicted_cost"] = rec.predicted_cost;
    j["observed_cost"] = rec.observed_cost;
    j["interaction_seconds"] = rec.interaction_seconds;
    j["success"] = rec.success;
    j["rollout_termination"] = rec.rollout_termination;
    j["model_checkpoint"] = rec.model_checkpoint;
    j["optimizer_trace"] = rec.optimizer_trace;
    std::ofstream(path) << j.dump(2) << "\n";
}

}  // namespace detail

/// The iterative tuning loop: random excitation, model fitting, simulated
/// policy optimization, execution on the plant, model refinement. With an
/// output directory every per-iteration artifact is persisted.
class Learner {
public:
    explicit Learner(io::ExperimentConfig cfg, fs::path out_dir = {})
        : cfg_(std::move(cfg)), out_(std::move(out_dir)) {
        cfg_.validate();
        if (!out_.empty()) fs::create_directories(out_);
    }

    LearnResult run() {
        LearnResult result;
        sim::CartPoleSim plant(cfg_.plant, cfg_.actuator, cfg_.noise, cfg_.limits,
                               cfg_.control_hz);

        // initial data from white-noise excitation
        std::vector<sim::RolloutLog> coarse_logs;
        double interaction = 0.0;
        if (!out_.empty()) fs::create_directories(out_ / "random_rollouts");
        for (int k = 0; k < cfg_.num_random_rollouts; ++k) {
            const auto seed = Rng::derive(cfg_.seed, 1000 + static_cast<std::uint64_t>(k));
            const auto log = sim::random_rollout(plant, cfg_.random_noise_std,
                                                 cfg_.rollout_duration_s, cfg_.init, seed);
            interaction += static_cast<double>(log.size()) / cfg_.control_hz;
            if (!out_.empty()) {
                const auto base = out_ / "random_rollouts" /
                                  ("rollout_" + std::to_string(k));
                detail::write_rollout_csv(base.string() + ".csv", log);
                detail::write_rollout_meta(base.string() + ".meta.json", log, "random", seed);
            }
            coarse_logs.push_back(data::downsample(log, cfg_.model_hz));
        }

        // regressor history selection
        data::NarxConfig narx = cfg_.narx;
        narx.model_hz = cfg_.model_hz;
        if (cfg_.narx_auto) {
            data::HistorySelectOptions opts;
            opts.seed = Rng::derive(cfg_.seed, 42);
            narx = data::select_history_lengths(coarse_logs, cfg_.narx_grid, cfg_.model_hz, opts)
                       .best;
            result.warnings.push_back("narx auto-selection: n_x=" + std::to_string(narx.n_x) +
                                      " n_phi=" + std::to_string(narx.n_phi) +
                                      " n_u=" + std::to_string(narx.n_u));
        }
        result.narx = narx;

        // hyperparameters from the initial data, frozen afterwards
        auto dataset = data::build_narx_dataset(coarse_logs, narx, &result.warnings);
        gp::MleOptions mle;
        mle.restarts = cfg_.mle_restarts;
        mle.max_points = cfg_.mle_max_points;
        mle.seed = Rng::derive(cfg_.seed, 7);
        auto mle_result = gp::fit_hyperparameters(dataset.data, mle);
        for (const auto& w : mle_result.warnings) result.warnings.push_back(w);
        std::vector<gp::Hyperparams> hyps = mle_result.hyps;

        const StateLayout lay({narx.n_x, narx.n_phi}, 1, narx.n_u, cfg_.selector());
        const CostConfig cost = cfg_.cost_config();
        const PidStructure structure = cfg_.pid_structure();
        Vector theta = Vector::Zero(structure.num_gains());

        // prediction-side initial state: measured channels near the upright
        Vector x0_mean = Vector::Zero(2);
        Matrix x0_cov = Matrix::Zero(2, 2);
        x0_cov(0, 0) = cfg_.init.position_std * cfg_.init.position_std +
                       cfg_.noise.position_std * cfg_.noise.position_std;
        x0_cov(1, 1) = cfg_.init.angle_std * cfg_.init.angle_std +
                       cfg_.noise.angle_std * cfg_.noise.angle_std;
        const Gaussian z0 = initial_state(lay, Gaussian(x0_mean, x0_cov), cost.target);
        const std::vector<Gaussian> desired{Gaussian::point(cost.target)};

        for (int it = 1; it <= cfg_.max_iterations; ++it) {
            if (cfg_.refit_hyperparameters && it > 1) {
                mle.seed = Rng::derive(cfg_.seed, 7000 + static_cast<std::uint64_t>(it));
                hyps = gp::fit_hyperparameters(dataset.data, mle).hyps;
            }

            gp::SparseOptions sparse;
            sparse.init = cfg_.inducing_init == "subset" ? gp::SparseOptions::Init::Subset
                                                         : gp::SparseOptions::Init::KMeans;
            sparse.seed = Rng::derive(cfg_.seed, 2000 + static_cast<std::uint64_t>(it));
            const auto model = gp::fit_sparse(dataset.data, cfg_.num_inducing, hyps, sparse,
                                              &result.warnings);
            RolloutEngine engine(lay, structure, &model, cost);

            RolloutOptions ropts;
            ropts.cov_trace_bound = cfg_.cov_trace_bound;
            ropts.want_gradient = true;
            Objective objective = [&](const Vector& th, Vector& grad) {
                try {
                    const auto pred = engine.run(z0, th, desired, ropts);
                    grad = pred.grad;
                    return pred.total_cost;
                } catch (const numeric_error&) {
                    // reject the probe; the line search backs off
                    grad.setConstant(th.size(), std::numeric_limits<double>::quiet_NaN());
                    return std::numeric_limits<double>::quiet_NaN();
                }
            };

            OptimizerConfig oc = cfg_.optimizer_config();
            oc.seed = Rng::derive(cfg_.seed, 4000 + static_cast<std::uint64_t>(it));
            std::vector<Vector> starts{theta};
            if (cfg_.opt_zero_restart && theta.cwiseAbs().maxCoeff() > 0.0)
                starts.push_back(Vector::Zero(theta.size()));
            const auto opt = minimize_multistart(objective, starts, oc);
            theta = opt.x;

            // execute the optimized policy on the plant
            const auto seed = Rng::derive(cfg_.seed, 3000 + static_cast<std::uint64_t>(it));
            const auto log = sim::execute_policy(plant, structure, theta, cfg_.selector(),
                                                 cost.target, cfg_.rollout_duration_s,
                                                 cfg_.init, seed);
            interaction += static_cast<double>(log.size()) / cfg_.control_hz;
            const auto coarse = data::downsample(log, cfg_.model_hz);

            IterationRecord rec;
            rec.iteration = it;
            rec.theta = theta;
            rec.predicted_cost = opt.value;
            rec.observed_cost =
                evaluate_observed_cost(coarse, cost, cfg_.selector(), narx.n_u > 1);
            rec.interaction_seconds = interaction;
            rec.success = stabilized(log, cfg_);
            rec.rollout_termination = log.termination;

            if (!out_.empty()) {
                char dirname[16];
                std::snprintf(dirname, sizeof dirname, "iter_%03d", it);
                const fs::path iter_dir = out_ / dirname;
                fs::create_directories(iter_dir);
                detail::write_rollout_csv(iter_dir / "rollout.csv", log);
                detail::write_rollout_meta(iter_dir / "rollout.meta.json", log, "policy", seed,
                                           &theta);
                std::ofstream(iter_dir / "model.json") << gp::to_json(model).dump() << "\n";
                detail::write_opt_trace_csv(iter_dir / "opt_trace.csv", opt);
                const auto pred = engine.run(z0, theta, desired, {cfg_.cov_trace_bound, false});
                detail::write_prediction_csv(iter_dir / "prediction.csv", lay, pred,
                                             1.0 / cfg_.model_hz);
                rec.model_checkpoint = std::string(dirname) + "/model.json";
                rec.optimizer_trace = std::string(dirname) + "/opt_trace.csv";
                detail::write_record_json(iter_dir / "record.json", rec);
            }

            result.records.push_back(rec);
            if (rec.success && result.first_success_iteration < 0)
                result.first_success_iteration = it;

            // grow the dataset (strict superset each iteration)
            coarse_logs.push_back(coarse);
            dataset = data::build_narx_dataset(coarse_logs, narx, &result.warnings);

            if (result.first_success_iteration > 0 &&
                it - result.first_success_iteration >= cfg_.extra_iterations_after_success)
                break;
        }

        result.theta = theta;
        result.interaction_seconds = interaction;
        result.success = result.first_success_iteration > 0;
        if (!out_.empty()) write_summary(result);
        return result;
    }

    void write_summary(const LearnResult& result) const {
        io::CsvWriter csv(out_ / "summary.csv");
        csv.header({"iteration", "predicted_cost", "observed_cost", "interaction_seconds",
                    "success"});
        for (const auto& r : result.records)
            csv.row({static_cast<double>(r.iteration), r.predicted_cost, r.observed_cost,
                     r.interaction_seconds, r.success ? 1.0 : 0.0});
    }

private:
    io::ExperimentConfig cfg_;
    fs::path out_;
};

}  // namespace pidtune::learn
