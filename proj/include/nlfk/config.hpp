#pragma once

#include "nlfk/bsde.hpp"
#include "nlfk/dpp.hpp"
#include "nlfk/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nlfk {

/// One refinement level: K time steps, lattice spacing h, P Monte-Carlo paths,
/// and optionally an explicit finite-difference step (else the admissible one).
struct Level {
    std::size_t steps = 20;
    double h = 0.05;
    std::size_t paths = 10000;
    std::optional<double> fd_dt;
};

struct TestPoint {
    double t = 0.0;
    Vector x;
    std::optional<double> expected;
    double tolerance = 0.02;
    /// Per-solver overrides of `tolerance`.
    std::map<std::string, double> solver_tolerance;

    double tolerance_for(const std::string& solver) const;
};

struct TableSpec {
    enum class Kind { fd, dpp, sde_strong, bsde_zero_noise };
    Kind kind = Kind::fd;
    TestPoint point;
    std::optional<double> reference;  // error is taken against the finest level otherwise
    std::optional<double> min_order;  // table fails when the fitted order is below
};

struct ExperimentConfig {
    std::string name;
    OperatorSpec problem;
    std::vector<std::string> solvers;  // subset of dpp, fd, policy_mc
    Vector lower, upper;               // dpp lattice box
    Vector fd_lower, fd_upper;         // fd lattice box (defaults to the dpp box)
    std::vector<Level> levels;
    std::vector<TestPoint> test_points;
    std::vector<std::string> checks;
    std::uint64_t seed = 0;
    std::string output_dir = "out";

    ExpectationRule rule;
    bool fd_cross_fallback = false;
    BsdeOptions bsde;
    std::size_t assumption_samples = 2000;
    double regularity_radius = 2.0;
    double residual_tolerance = 0.05;
    std::optional<TableSpec> table;

    bool uses(const std::string& solver) const;
    bool wants(const std::string& check) const;
};

struct CheckInfo {
    std::string name;
    std::string description;
};

/// Named property suites that a config may request.
const std::vector<CheckInfo>& known_checks();

/// Parses the YAML-structured config text. Errors carry the line and field.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

}  // namespace nlfk
