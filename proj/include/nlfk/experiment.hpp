#pragma once

#include "nlfk/config.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nlfk {

struct PointResult {
    std::size_t level = 0;
    std::string solver;
    double t = 0.0;
    Vector x;
    double value = 0.0;
    double stderr_value = 0.0;
    std::optional<double> oracle;
    std::optional<double> relative_gap;  // |value - oracle| / max(|oracle|, 1)
};

struct CheckResult {
    std::string name;
    bool passed = true;
    double worst = 0.0;  // check-specific worst observed quantity
    std::string witness;
};

struct OrderEstimate {
    std::string solver;
    std::size_t point = 0;
    std::size_t level_from = 0;
    std::size_t level_to = 0;
    double order = 0.0;
};

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

struct SolveReport {
    std::string name;
    std::uint64_t seed = 0;
    std::vector<PointResult> points;
    std::vector<CheckResult> checks;  // one entry per configured check, in config order
    std::vector<OrderEstimate> orders;
    std::vector<StageTiming> timings;
    std::vector<std::string> warnings;
    std::vector<std::string> artifacts;  // files written, relative to the output directory

    bool all_passed() const;
    const CheckResult* find_check(const std::string& name) const;
};

/// Runs the configured solvers on every refinement level and the configured
/// checks on the finest level; writes report.txt and CSV artifacts into
/// cfg.output_dir (created if missing). Solver failures are rethrown with
/// the stage name prefixed.
SolveReport run_experiment(const ExperimentConfig& cfg);

void write_report_text(std::ostream& out, const SolveReport& report);

struct TableRow {
    std::size_t level = 0;
    std::size_t steps = 0;
    double h = 0.0;
    std::size_t paths = 0;
    double step = 0.0;  // the refinement variable (h or dt)
    std::optional<double> value;  // absent for strong-order rows
    std::optional<double> error;
};

struct ConvergenceTable {
    std::string kind;
    std::string variable;  // "h" or "dt"
    std::vector<TableRow> rows;
    double order = 0.0;  // least-squares slope of log error against log step
    bool exact = false;  // every error at round-off
    std::optional<double> min_order;

    bool passed() const;
};

/// Builds the table described by cfg.table over cfg.levels and writes
/// table.csv and table.txt into cfg.output_dir.
ConvergenceTable convergence_table(const ExperimentConfig& cfg);

void write_table_text(std::ostream& out, const ConvergenceTable& table);

}  // namespace nlfk
