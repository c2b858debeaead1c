// Command-line experiment runner.
#include "nlfk/config.hpp"
#include "nlfk/errors.hpp"
#include "nlfk/experiment.hpp"
#include "nlfk/parallel.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdlib>
#include <iostream>
#include <optional>

namespace {

enum Exit { ok = 0, check_failed = 1, usage = 2, numeric = 3 };

nlfk::ExperimentConfig prepare(const std::string& path, const std::optional<std::uint64_t>& seed,
                               const std::optional<std::string>& out) {
    auto cfg = nlfk::load_config(path);
    if (seed) cfg.seed = *seed;
    if (const char* env = std::getenv("NLFK_OUT"); env && *env) cfg.output_dir = env;
    if (out) cfg.output_dir = *out;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Nonlinear Feynman-Kac solver: dynamic programming, finite-difference oracle and property checks"};
    app.require_subcommand(0, 1);

    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::size_t jobs = 0;
    bool list_checks = false;
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out, "output directory (takes precedence over NLFK_OUT and the config)");
    app.add_option("--jobs", jobs, "worker thread count hint (0 = hardware concurrency)");
    app.add_flag("--list-checks", list_checks, "list the named property checks and exit");

    std::string run_path, table_path;
    auto* run = app.add_subcommand("run", "run the solvers and checks of an experiment config");
    run->add_option("config", run_path, "experiment config file")->required();
    auto* table = app.add_subcommand("table", "build a convergence table from a config with >= 3 levels");
    table->add_option("config", table_path, "experiment config file")->required();
    // global options may follow the subcommand
    run->fallthrough();
    table->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return usage;
    }

    if (list_checks) {
        for (const auto& c : nlfk::known_checks()) std::cout << fmt::format("{:<20} {}\n", c.name, c.description);
        return ok;
    }
    if (!run->parsed() && !table->parsed()) {
        std::cerr << app.help();
        return usage;
    }
    if (jobs > 0) nlfk::set_worker_count(jobs);

    try {
        if (run->parsed()) {
            const auto cfg = prepare(run_path, seed, out);
            const auto report = nlfk::run_experiment(cfg);
            nlfk::write_report_text(std::cout, report);
            std::cout << fmt::format("artifacts written to {}\n", cfg.output_dir);
            return report.all_passed() ? ok : check_failed;
        }
        const auto cfg = prepare(table_path, seed, out);
        if (!cfg.table) throw nlfk::ConfigError("the config has no table section", -1, "table");
        const auto t = nlfk::convergence_table(cfg);
        nlfk::write_table_text(std::cout, t);
        std::cout << fmt::format("artifacts written to {}\n", cfg.output_dir);
        return t.passed() ? ok : check_failed;
    } catch (const nlfk::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage;
    } catch (const nlfk::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return numeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return numeric;
    }
}
