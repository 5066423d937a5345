#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pidtune/cli/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"GP-based auto-tuning of multivariable PID controllers on a cart-pole"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "run";
    std::string gains;
    std::string suite = "appendix";
    std::string run_dir;
    double duration = 20.0;
    std::optional<std::uint64_t> seed;
    std::uint64_t check_seed = 0;

    auto* learn = app.add_subcommand("learn", "run the iterative tuning experiment");
    learn->add_option("--config", config_path, "experiment config (JSON); defaults if omitted");
    learn->add_option("--seed", seed, "override the config seed");
    learn->add_option("--out", out_dir, "run directory for artifacts");

    auto* simulate = app.add_subcommand("simulate", "execute one rollout with explicit gains");
    simulate->add_option("--config", config_path, "experiment config (JSON)");
    simulate->add_option("--gains", gains, "comma-separated gain vector")->required();
    simulate->add_option("--duration", duration, "rollout duration in seconds");
    simulate->add_option("--seed", seed, "override the config seed");
    simulate->add_option("--out", out_dir, "output directory for the rollout log");

    auto* check = app.add_subcommand("check", "run a numerical validation suite");
    check->add_option("--suite", suite,
                      "one of: appendix, pid-oracle, moments, gradients, cost")->required();
    check->add_option("--seed", check_seed, "suite seed");

    auto* report = app.add_subcommand("report", "regenerate plot-ready tables from a run");
    report->add_option("run_dir", run_dir, "run directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (learn->parsed()) return pidtune::cli::run_learn(config_path, seed, out_dir);
    if (simulate->parsed())
        return pidtune::cli::run_simulate(config_path, gains, duration, seed, out_dir);
    if (check->parsed()) return pidtune::cli::run_check(suite, check_seed);
    if (report->parsed()) return pidtune::cli::run_report(run_dir);
    return 1;
}
