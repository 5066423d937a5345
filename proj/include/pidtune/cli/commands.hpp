#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "pidtune/learn/learner.hpp"
#include "pidtune/validation/suites.hpp"

namespace pidtune::cli {

namespace fs = std::filesystem;

inline io::ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) return io::ExperimentConfig{};  // built-in defaults
    std::ifstream in(path);
    if (!in.good()) throw config_error("config file not found: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config " + path + ": " + e.what());
    }
    return io::config_from_json(j);
}

inline void write_manifest(const fs::path& out, const io::ExperimentConfig& cfg) {
    nlohmann::json j;
    j["artifact"] = "pidtune";
    j["format_version"] = 1;
    j["config_hash"] = io::config_hash(cfg);
    j["seed"] = cfg.seed;
    j["created_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    std::ofstream(out / "manifest.json") << j.dump(2) << "\n";
}

/// learn: run the full experiment. Exit 0 once the success criterion is met,
/// 2 when the iteration budget runs out first, 1 on configuration errors.
inline int run_learn(const std::string& config_path, std::optional<std::uint64_t> seed,
                     const std::string& out_dir) {
    io::ExperimentConfig cfg;
    try {
        cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        fs::create_directories(out_dir);
        write_manifest(out_dir, cfg);  // manifest precedes all experiment output
        std::ofstream(fs::path(out_dir) / "config.json")
            << io::config_to_json(cfg).dump(2) << "\n";
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }

    try {
        learn::Learner learner(cfg, out_dir);
        const auto result = learner.run();
        for (const auto& w : result.warnings) std::fprintf(stderr, "note: %s\n", w.c_str());
        std::printf("iter  predicted_J  observed_J  interaction_s  success\n");
        for (const auto& r : result.records)
            std::printf("%4d  %11.3f  %10.3f  %13.2f  %s\n", r.iteration, r.predicted_cost,
                        r.observed_cost, r.interaction_seconds, r.success ? "yes" : "no");
        if (result.success) {
            std::printf("stabilized at iteration %d after %.1f s of interaction\n",
                        result.first_success_iteration, result.interaction_seconds);
            return 0;
        }
        std::printf("budget exhausted without meeting the success criterion\n");
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

/// simulate: one policy rollout with explicit gains.
inline int run_simulate(const std::string& config_path, const std::string& gains,
                        double duration, std::optional<std::uint64_t> seed,
                        const std::string& out_dir) {
    try {
        io::ExperimentConfig cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;

        std::vector<double> values;
        std::stringstream ss(gains);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (cell.empty()) continue;
            values.push_back(std::stod(cell));
        }
        const auto structure = cfg.pid_structure();
        if (static_cast<int>(values.size()) != structure.num_gains())
            throw config_error("expected " + std::to_string(structure.num_gains()) +
                               " gains for this structure, got " + std::to_string(values.size()));
        const Vector theta = Eigen::Map<const Vector>(values.data(),
                                                      static_cast<Index>(values.size()));

        sim::CartPoleSim plant(cfg.plant, cfg.actuator, cfg.noise, cfg.limits, cfg.control_hz);
        const auto log = sim::execute_policy(plant, structure, theta, cfg.selector(),
                                             cfg.target(), duration, cfg.init, cfg.seed);
        fs::create_directories(out_dir);
        learn::detail::write_rollout_csv(fs::path(out_dir) / "rollout.csv", log);
        learn::detail::write_rollout_meta(fs::path(out_dir) / "rollout.meta.json", log,
                                          "simulate", cfg.seed, &theta);

        const auto coarse = data::downsample(log, cfg.model_hz);
        const double observed = learn::evaluate_observed_cost(coarse, cfg.cost_config(),
                                                              cfg.selector(), cfg.narx.n_u > 1);
        std::printf("termination: %s after %.2f s\n", log.termination.c_str(), log.duration());
        std::printf("observed cost over the %.0f s horizon: %.3f\n", cfg.horizon_s, observed);
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

/// check: run one of the numerical validation suites.
inline int run_check(const std::string& suite, std::uint64_t seed) {
    try {
        validation::SuiteResult r;
        if (suite == "appendix")
            r = validation::appendix_suite(seed);
        else if (suite == "pid-oracle")
            r = validation::pid_oracle_suite(seed);
        else if (suite == "moments")
            r = validation::moments_suite(seed);
        else if (suite == "gradients")
            r = validation::gradients_suite(seed);
        else if (suite == "cost")
            r = validation::cost_suite(seed);
        else {
            std::fprintf(stderr, "error: unknown suite '%s' (available: appendix, pid-oracle, "
                                 "moments, gradients, cost)\n",
                         suite.c_str());
            return 1;
        }
        std::printf("[%s] suite %-10s  max err %.3e  median err %.3e\n  %s\n",
                    r.pass ? "PASS" : "FAIL", r.name.c_str(), r.max_error, r.median_error,
                    r.detail.c_str());
        return r.pass ? 0 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

/// report: regenerate plot-ready CSV tables from a finished run directory.
inline int run_report(const std::string& run_dir) {
    try {
        const fs::path run(run_dir);
        std::vector<std::string> missing;
        if (!fs::exists(run / "config.json")) missing.push_back("config.json");
        std::vector<fs::path> iter_dirs;
        for (int it = 1;; ++it) {
            char name[16];
            std::snprintf(name, sizeof name, "iter_%03d", it);
            if (!fs::exists(run / name)) break;
            iter_dirs.push_back(run / name);
        }
        if (iter_dirs.empty()) missing.push_back("iter_001/");
        for (const auto& dir : iter_dirs)
            for (const char* f : {"record.json", "prediction.csv", "rollout.csv"})
                if (!fs::exists(dir / f)) missing.push_back((dir.filename() / f).string());
        if (!missing.empty()) {
            std::fprintf(stderr, "error: run directory is missing:\n");
            for (const auto& m : missing) std::fprintf(stderr, "  %s\n", m.c_str());
            return 1;
        }

        nlohmann::json cfg_json;
        std::ifstream(run / "config.json") >> cfg_json;
        const auto cfg = io::config_from_json(cfg_json);

        const fs::path report = run / "report";
        fs::create_directories(report);

        io::CsvWriter loss(report / "loss.csv");
        loss.header({"iteration", "predicted_cost", "observed_cost", "interaction_seconds",
                     "success"});
        for (const auto& dir : iter_dirs) {
            nlohmann::json rec;
            std::ifstream(dir / "record.json") >> rec;
            loss.row({rec.at("iteration").get<double>(), rec.at("predicted_cost").get<double>(),
                      rec.at("observed_cost").get<double>(),
                      rec.at("interaction_seconds").get<double>(),
                      rec.at("success").get<bool>() ? 1.0 : 0.0});
        }

        for (std::size_t i = 0; i < iter_dirs.size(); ++i) {
            const auto pred = io::read_csv(iter_dirs[i] / "prediction.csv");
            const auto roll = io::read_csv(iter_dirs[i] / "rollout.csv");

            // executed trajectory at model rate
            sim::RolloutLog log;
            log.control_hz = cfg.control_hz;
            const Index tc = roll.column("time"), xc = roll.column("x"), pc = roll.column("phi"),
                        uc = roll.column("u");
            for (const auto& row : roll.rows) {
                log.time.push_back(row[static_cast<std::size_t>(tc)]);
                log.x.push_back(row[static_cast<std::size_t>(xc)]);
                log.phi.push_back(row[static_cast<std::size_t>(pc)]);
                log.u.push_back(row[static_cast<std::size_t>(uc)]);
                log.u_raw.push_back(0.0);
                log.u_realized.push_back(0.0);
            }
            const auto coarse = data::downsample(log, cfg.model_hz);

            char name[32];
            std::snprintf(name, sizeof name, "traj_iter_%03zu.csv", i + 1);
            io::CsvWriter traj(report / name);
            traj.header({"t", "time", "pred_x_mean", "pred_x_lo", "pred_x_hi", "pred_phi_mean",
                         "pred_phi_lo", "pred_phi_hi", "exec_x", "exec_phi"});
            const Index px = pred.column("x_t_mean"), sx = pred.column("x_t_std");
            const Index pp = pred.column("phi_t_mean"), sp = pred.column("phi_t_std");
            const Index pt = pred.column("time");
            for (std::size_t t = 0; t < pred.rows.size(); ++t) {
                const auto& row = pred.rows[t];
                const double xm = row[static_cast<std::size_t>(px)];
                const double xs = row[static_cast<std::size_t>(sx)];
                const double pm = row[static_cast<std::size_t>(pp)];
                const double ps = row[static_cast<std::size_t>(sp)];
                const double ex = t < coarse.size() ? coarse.x[t] : std::nan("");
                const double ep = t < coarse.size() ? coarse.phi[t] : std::nan("");
                traj.row({static_cast<double>(t), row[static_cast<std::size_t>(pt)], xm,
                          xm - 1.96 * xs, xm + 1.96 * xs, pm, pm - 1.96 * ps, pm + 1.96 * ps,
                          ex, ep});
            }
        }
        std::printf("report written to %s (%zu trajectory tables)\n", report.string().c_str(),
                    iter_dirs.size());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace pidtune::cli
