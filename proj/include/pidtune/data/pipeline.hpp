#pragma once

#include <string>
#include <vector>

#include "pidtune/data/filter.hpp"
#include "pidtune/gp/dataset.hpp"
#include "pidtune/gp/fit.hpp"
#include "pidtune/gp/model.hpp"
#include "pidtune/sim/cartpole.hpp"

namespace pidtune::data {

/// History lengths of the regressor state: current-plus-past positions and
/// angles, current-plus-past inputs. The resulting model input is
/// (x_t..x_{t-n_x+1}, phi_t..phi_{t-n_phi+1}, u_t..u_{t-n_u+1}).
struct NarxConfig {
    int n_x = 4;
    int n_phi = 3;
    int n_u = 7;
    double model_hz = 25.0;

    int input_dim() const { return n_x + n_phi + n_u; }
    int max_lag() const { return std::max({n_x, n_phi, n_u}) - 1; }

    void validate() const {
        require(n_x >= 1 && n_phi >= 1 && n_u >= 1, "NarxConfig: history lengths must be >= 1");
        require(model_hz > 0.0, "NarxConfig: model rate must be positive");
    }
};

/// Decimate a control-rate log to the model rate: positions zero-phase
/// low-pass filtered then decimated, inputs averaged over each model-rate
/// interval. The cutoff defaults to the new Nyquist rate.
inline sim::RolloutLog downsample(const sim::RolloutLog& log, double to_rate_hz,
                                  double cutoff_hz = 0.0) {
    require(to_rate_hz > 0.0 && log.control_hz > 0.0, "downsample: rates must be positive");
    const double ratio = log.control_hz / to_rate_hz;
    const int factor = static_cast<int>(std::lround(ratio));
    require(std::abs(ratio - factor) < 1e-9 && factor >= 1,
            "downsample: control rate must be an integer multiple of the target rate");
    if (cutoff_hz <= 0.0) cutoff_hz = 0.5 * to_rate_hz;

    sim::RolloutLog out;
    out.control_hz = to_rate_hz;
    out.termination = log.termination;
    if (log.size() == 0) return out;
    if (factor == 1) return log;

    const auto xf = zero_phase_lowpass(log.x, cutoff_hz, log.control_hz);
    const auto pf = zero_phase_lowpass(log.phi, cutoff_hz, log.control_hz);
    const std::size_t n_coarse = log.size() / static_cast<std::size_t>(factor);
    for (std::size_t k = 0; k < n_coarse; ++k) {
        const std::size_t i = k * static_cast<std::size_t>(factor);
        out.time.push_back(static_cast<double>(k) / to_rate_hz);
        out.x.push_back(xf[i]);
        out.phi.push_back(pf[i]);
        double mean_u = 0.0;
        for (int j = 0; j < factor; ++j) mean_u += log.u[i + static_cast<std::size_t>(j)];
        out.u.push_back(mean_u / factor);
    }
    return out;
}

/// NARX training tuples from model-rate logs. No tuple spans a rollout
/// boundary; logs shorter than the history are skipped with a warning.
struct Dataset {
    gp::TrainingSet data;
    std::vector<std::pair<int, int>> provenance;  // (log index, time index)
};

inline Dataset build_narx_dataset(const std::vector<sim::RolloutLog>& logs,
                                  const NarxConfig& cfg,
                                  std::vector<std::string>* warnings = nullptr) {
    cfg.validate();
    const int lag = cfg.max_lag();
    std::vector<Vector> rows, targets;
    Dataset out;
    for (std::size_t li = 0; li < logs.size(); ++li) {
        const auto& log = logs[li];
        const int n = static_cast<int>(log.size());
        if (n < lag + 2) {
            if (warnings)
                warnings->push_back("rollout " + std::to_string(li) +
                                    " shorter than the NARX history; skipped");
            continue;
        }
        for (int t = lag; t + 1 < n; ++t) {
            Vector row(cfg.input_dim());
            int c = 0;
            for (int j = 0; j < cfg.n_x; ++j) row(c++) = log.x[static_cast<std::size_t>(t - j)];
            for (int j = 0; j < cfg.n_phi; ++j) row(c++) = log.phi[static_cast<std::size_t>(t - j)];
            for (int j = 0; j < cfg.n_u; ++j) row(c++) = log.u[static_cast<std::size_t>(t - j)];
            Vector target(2);
            target << log.x[static_cast<std::size_t>(t + 1)] - log.x[static_cast<std::size_t>(t)],
                log.phi[static_cast<std::size_t>(t + 1)] - log.phi[static_cast<std::size_t>(t)];
            rows.push_back(std::move(row));
            targets.push_back(std::move(target));
            out.provenance.emplace_back(static_cast<int>(li), t);
        }
    }
    require(!rows.empty(), "build_narx_dataset: no usable training tuples");
    out.data.inputs.resize(static_cast<Index>(rows.size()), cfg.input_dim());
    out.data.targets.resize(static_cast<Index>(rows.size()), 2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.data.inputs.row(static_cast<Index>(i)) = rows[i].transpose();
        out.data.targets.row(static_cast<Index>(i)) = targets[i].transpose();
    }
    return out;
}

struct HistoryGrid {
    std::vector<int> n_x{1, 2, 3, 4};
    std::vector<int> n_phi{1, 2, 3};
    std::vector<int> n_u{1, 3, 5, 7};
};

struct HistoryScore {
    NarxConfig cfg;
    double kstep_rmse = 0.0;
    double one_step_rmse = 0.0;
};

struct HistorySelection {
    NarxConfig best;
    std::vector<HistoryScore> scores;
};

namespace detail {

/// Deterministic mean-propagation of the NARX model over recorded inputs.
/// Returns the normalized k-step and 1-step RMSE over strided start points.
inline std::pair<double, double> multistep_rmse(const gp::GpModel& model,
                                                const sim::RolloutLog& log,
                                                const NarxConfig& cfg, int k_steps,
                                                double x_scale, double phi_scale) {
    const int n = static_cast<int>(log.size());
    const int lag = cfg.max_lag();
    double se_k = 0.0, se_1 = 0.0;
    long count_k = 0, count_1 = 0;
    const int stride = 5;
    for (int start = lag; start + 2 < n; start += stride) {
        std::vector<double> px(log.x.begin(), log.x.end());
        std::vector<double> pp(log.phi.begin(), log.phi.end());
        const int last = std::min(n - 1, start + k_steps);
        for (int t = start; t < last; ++t) {
            Vector row(cfg.input_dim());
            int c = 0;
            for (int j = 0; j < cfg.n_x; ++j) row(c++) = px[static_cast<std::size_t>(t - j)];
            for (int j = 0; j < cfg.n_phi; ++j) row(c++) = pp[static_cast<std::size_t>(t - j)];
            for (int j = 0; j < cfg.n_u; ++j) row(c++) = log.u[static_cast<std::size_t>(t - j)];
            const Gaussian pred = gp::predict_point(model, row);
            px[static_cast<std::size_t>(t + 1)] = px[static_cast<std::size_t>(t)] + pred.mean(0);
            pp[static_cast<std::size_t>(t + 1)] = pp[static_cast<std::size_t>(t)] + pred.mean(1);
            const double ex = (px[static_cast<std::size_t>(t + 1)] - log.x[static_cast<std::size_t>(t + 1)]) / x_scale;
            const double ep = (pp[static_cast<std::size_t>(t + 1)] - log.phi[static_cast<std::size_t>(t + 1)]) / phi_scale;
            se_k += ex * ex + ep * ep;
            count_k += 2;
            if (t == start) {
                se_1 += ex * ex + ep * ep;
                count_1 += 2;
            }
        }
    }
    if (count_k == 0) return {std::numeric_limits<double>::infinity(), 0.0};
    return {std::sqrt(se_k / count_k), std::sqrt(se_1 / count_1)};
}

}  // namespace detail

struct HistorySelectOptions {
    int k_steps = 10;
    Index max_fit_points = 250;
    std::uint64_t seed = 0;
    double slack = 0.05;  // accept the smallest config within 5 % of the best
};

/// Grid search over history lengths scored by k-step-ahead validation RMSE
/// of a quickly fitted GP; returns the smallest configuration whose score is
/// within the slack of the best one.
inline HistorySelection select_history_lengths(const std::vector<sim::RolloutLog>& logs,
                                               const HistoryGrid& grid,
                                               double model_hz,
                                               const HistorySelectOptions& opts = {}) {
    require(!grid.n_x.empty() && !grid.n_phi.empty() && !grid.n_u.empty(),
            "select_history_lengths: empty candidate grid");
    require(logs.size() >= 2, "select_history_lengths: need at least two rollouts to hold one out");

    const std::size_t n_val = std::max<std::size_t>(1, logs.size() / 4);
    std::vector<sim::RolloutLog> train(logs.begin(), logs.end() - static_cast<std::ptrdiff_t>(n_val));
    std::vector<sim::RolloutLog> val(logs.end() - static_cast<std::ptrdiff_t>(n_val), logs.end());

    double x_var = 0.0, phi_var = 0.0;
    long n_samp = 0;
    for (const auto& log : val) {
        for (double v : log.x) x_var += v * v;
        for (double v : log.phi) phi_var += v * v;
        n_samp += static_cast<long>(log.size());
    }
    const double x_scale = std::max(1e-6, std::sqrt(x_var / std::max(1L, n_samp)));
    const double phi_scale = std::max(1e-6, std::sqrt(phi_var / std::max(1L, n_samp)));

    HistorySelection sel;
    double best_score = std::numeric_limits<double>::infinity();
    for (int nx : grid.n_x)
        for (int nphi : grid.n_phi)
            for (int nu : grid.n_u) {
                NarxConfig cfg{nx, nphi, nu, model_hz};
                Dataset ds;
                try {
                    ds = build_narx_dataset(train, cfg);
                } catch (const config_error&) {
                    continue;  // rollouts too short for this history
                }
                ds.data.inputs = gp::detail::stride_rows(ds.data.inputs, opts.max_fit_points);
                ds.data.targets = gp::detail::stride_rows(ds.data.targets, opts.max_fit_points);
                if (ds.data.inputs.rows() < cfg.input_dim() + 2) continue;

                gp::MleOptions mle;
                mle.restarts = 1;
                mle.max_linesearches = 25;
                mle.seed = Rng::derive(opts.seed, static_cast<std::uint64_t>(cfg.input_dim()));
                auto hyps = gp::fit_hyperparameters(ds.data, mle);
                auto model = gp::fit_full(ds.data, hyps.hyps);

                double se_k = 0.0, se_1 = 0.0;
                int pieces = 0;
                for (const auto& log : val) {
                    const auto [k_rmse, one_rmse] =
                        detail::multistep_rmse(model, log, cfg, opts.k_steps, x_scale, phi_scale);
                    if (std::isfinite(k_rmse)) {
                        se_k += k_rmse;
                        se_1 += one_rmse;
                        ++pieces;
                    }
                }
                if (pieces == 0) continue;
                HistoryScore score{cfg, se_k / pieces, se_1 / pieces};
                sel.scores.push_back(score);
                best_score = std::min(best_score, score.kstep_rmse);
            }
    require(!sel.scores.empty(), "select_history_lengths: no candidate could be evaluated");

    const NarxConfig* best = nullptr;
    for (const auto& s : sel.scores) {
        if (s.kstep_rmse > (1.0 + opts.slack) * best_score) continue;
        if (best == nullptr || s.cfg.input_dim() < best->input_dim() ||
            (s.cfg.input_dim() == best->input_dim() &&
             std::tie(s.cfg.n_x, s.cfg.n_phi, s.cfg.n_u) <
                 std::tie(best->n_x, best->n_phi, best->n_u)))
            best = &s.cfg;
    }
    sel.best = *best;
    return sel;
}

}  // namespace pidtune::data
