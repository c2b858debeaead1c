#include "doctest.h"

#include "nlfk/config.hpp"
#include "nlfk/errors.hpp"
#include "nlfk/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace nlfk;
namespace fs = std::filesystem;

namespace {

const char* const tiny = R"(name: tiny
problem:
  horizon: 1.0
  controls:
    - {drift: 0.0, diffusion: 1.0}
    - {drift: 0.0, diffusion: 2.0}
  terminal: {name: square_norm, lipschitz: 6.0, growth: 3.0}
solvers: [dpp, fd]
domain: {lower: -10.0, upper: 10.0}
fd_domain: {lower: -8.0, upper: 8.0}
levels:
  - {K: 5, h: 0.2, P: 500}
  - {K: 10, h: 0.1, P: 1000}
test_points:
  - {t: 0.0, x: 0.0, expected: 4.0, tolerance: {dpp: 0.2, fd: 0.1}}
checks: [growth, reference_value, dpp_fd_agreement, comparison]
seed: 7
)";

std::string with(const std::string& base, const std::string& from, const std::string& to) {
    std::string s = base;
    const auto pos = s.find(from);
    REQUIRE(pos != std::string::npos);
    s.replace(pos, from.size(), to);
    return s;
}

ConfigError config_error(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e;
    }
    FAIL("expected a config error");
    return ConfigError("unreachable");
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("nlfk_test_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("a complete config parses") {
    const auto cfg = parse_config(tiny);
    CHECK(cfg.name == "tiny");
    CHECK(cfg.problem.controls.size() == 2);
    CHECK(cfg.problem.ellipticity_lambda == doctest::Approx(0.5));
    CHECK(cfg.uses("dpp"));
    CHECK_FALSE(cfg.uses("policy_mc"));
    CHECK(cfg.wants("growth"));
    CHECK(cfg.levels.size() == 2);
    CHECK(cfg.levels[1].paths == 1000);
    CHECK(cfg.fd_lower(0) == -8.0);
    CHECK(cfg.seed == 7);
    REQUIRE(cfg.test_points.size() == 1);
    CHECK(cfg.test_points[0].tolerance_for("dpp") == 0.2);
    CHECK(cfg.test_points[0].tolerance_for("fd") == 0.1);
    CHECK(cfg.test_points[0].tolerance_for("policy_mc") == 0.02);
    CHECK(cfg.rule.kind == ExpectationRule::Kind::gauss_hermite);
    CHECK(cfg.checks.front() == "growth");
}

TEST_CASE("defaults") {
    const auto cfg = parse_config(with(with(tiny, "fd_domain: {lower: -8.0, upper: 8.0}\n", ""), "seed: 7\n", ""));
    CHECK(cfg.fd_lower == cfg.lower);
    CHECK(cfg.seed == 0);
    CHECK(cfg.output_dir == "out");
    CHECK(cfg.bsde.picard_iters == 2);
}

TEST_CASE("affine fields and drivers") {
    auto text = with(tiny, "- {drift: 0.0, diffusion: 2.0}", "- {drift: {affine: {A: -1.0, c: 0.5}}, diffusion: {affine: {offset: 2.0, slopes: [0.0]}}}");
    text = with(text, "  terminal:", "  driver: {form: affine, offset: 0.1, rate: -0.2, lambda: [0.3]}\n  terminal:");
    const auto cfg = parse_config(text);
    const auto& drift = cfg.problem.controls[1].drift;
    CHECK(drift.kind() == FieldSpec::Kind::affine);
    Vector x(1);
    x << 2.0;
    CHECK(drift(0.0, x)(0, 0) == doctest::Approx(-1.5));
    CHECK(cfg.problem.driver.form() == DriverSpec::Form::affine);
    CHECK(cfg.problem.driver.rate() == -0.2);
    CHECK(cfg.problem.driver.monotonicity_mu == doctest::Approx(-0.2));
}

TEST_CASE("unknown keys are rejected with their line") {
    const auto e = config_error(with(tiny, "seed: 7", "sead: 7"));
    CHECK(e.line() == 17);
    CHECK(e.field() == "sead");
    const auto nested = config_error(with(tiny, "terminal: {name: square_norm,", "terminal: {nme: square_norm,"));
    CHECK(nested.line() == 7);
    CHECK(nested.field().find("terminal") != std::string::npos);
}

TEST_CASE("type and value errors carry the field") {
    const auto e = config_error(with(tiny, "horizon: 1.0", "horizon: soon"));
    CHECK(e.line() == 3);
    CHECK(e.field() == "problem.horizon");
    CHECK(config_error(with(tiny, "horizon: 1.0", "horizon: -1.0")).field() == "problem.horizon");
    CHECK(config_error(with(tiny, "{K: 10, h: 0.1, P: 1000}", "{K: 10, h: 0.3, P: 1000}")).line() == 13);
    CHECK(config_error(with(tiny, "comparison]", "comparisons]")).field().find("checks") != std::string::npos);
    CHECK(config_error(with(tiny, "solvers: [dpp, fd]", "solvers: [dpp, pde]")).field().find("solvers") != std::string::npos);
    CHECK(config_error(with(tiny, "name: square_norm", "name: nope")).field().find("terminal") != std::string::npos);
}

TEST_CASE("cross-field validation") {
    // levels must refine
    config_error(with(tiny, "{K: 10, h: 0.1, P: 1000}", "{K: 5, h: 0.2, P: 500}"));
    // dpp_fd_agreement needs both solvers
    config_error(with(tiny, "solvers: [dpp, fd]", "solvers: [dpp]"));
    // at least one solver
    config_error(with(tiny, "solvers: [dpp, fd]", "solvers: []"));
    // a named field needs a declared Lipschitz bound
    config_error(with(tiny, "{drift: 0.0, diffusion: 1.0}", "{drift: {named: sin_state}, diffusion: 1.0}"));
    // tables need at least three levels
    config_error(with(tiny, "checks:", "table: {kind: fd, point: {t: 0.0, x: 0.0}}\nchecks:"));
}

TEST_CASE("malformed YAML reports a line") {
    const auto e = config_error("name: x\nproblem: [1, 2\n");
    CHECK(e.line() >= 2);
    CHECK(config_error("- 1\n- 2\n").line() == 1);
}

TEST_CASE("missing config file") {
    CHECK_THROWS_AS(load_config("/nonexistent/nowhere.cfg"), ConfigError);
}

TEST_CASE("known checks") {
    const auto& checks = known_checks();
    CHECK(checks.size() == 10);
    for (const auto& c : checks) CHECK_FALSE(c.description.empty());
}

TEST_CASE("an experiment reports each configured check once") {
    auto cfg = parse_config(tiny);
    cfg.output_dir = scratch("report").string();
    const auto report = run_experiment(cfg);
    REQUIRE(report.checks.size() == cfg.checks.size());
    for (std::size_t i = 0; i < cfg.checks.size(); ++i) CHECK(report.checks[i].name == cfg.checks[i]);
    CHECK(report.find_check("comparison") != nullptr);
    CHECK(report.find_check("residuals") == nullptr);
    CHECK(report.all_passed());
    CHECK(report.orders.size() > 0);
    for (const char* f : {"report.txt", "points.csv", "checks.csv", "orders.csv", "dpp_value.csv", "fd_value.csv"})
        CHECK(fs::exists(fs::path(cfg.output_dir) / f));

    std::ostringstream text;
    write_report_text(text, report);
    CHECK(text.str().find("reference_value") != std::string::npos);
}

TEST_CASE("experiments are byte-identical under a fixed seed") {
    auto cfg = parse_config(with(tiny, "solvers: [dpp, fd]", "solvers: [dpp, fd, policy_mc]"));
    cfg.checks.push_back("policy_mc_agreement");
    cfg.test_points[0].solver_tolerance["policy_mc"] = 0.5;
    const auto a = scratch("det_a"), b = scratch("det_b");
    cfg.output_dir = a.string();
    run_experiment(cfg);
    cfg.output_dir = b.string();
    run_experiment(cfg);
    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
        if (entry.path().extension() != ".csv") continue;
        CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));
        ++compared;
    }
    CHECK(compared >= 5);
}

TEST_CASE("solver errors keep their type and gain the stage") {
    auto cfg = parse_config(with(tiny, "{K: 10, h: 0.1, P: 1000}", "{K: 10, h: 0.1, P: 1000, fd_dt: 0.01}"));
    cfg.output_dir = scratch("cfl").string();
    try {
        run_experiment(cfg);
        FAIL("expected a CFL error");
    } catch (const CflError& e) {
        const std::string what = e.what();
        CHECK(what.find("fd") != std::string::npos);
        CHECK(e.admissible_dt() == doctest::Approx(0.01 / 8.0));
    }
}

TEST_CASE("convergence table") {
    const std::string text = R"(name: table
problem:
  horizon: 1.0
  controls:
    - {drift: 0.0, diffusion: 1.0}
  terminal: {name: cos_first, lipschitz: 1.0, growth: 1.0}
domain: {lower: -6.0, upper: 6.0}
levels:
  - {K: 10, h: 0.2, P: 10, fd_dt: 0.001}
  - {K: 10, h: 0.1, P: 10, fd_dt: 0.001}
  - {K: 10, h: 0.05, P: 10, fd_dt: 0.001}
table: {kind: fd, point: {t: 0.0, x: 0.4}, reference: 0.5586517323281438, min_order: 1.8}
)";
    auto cfg = parse_config(text);
    cfg.output_dir = scratch("table").string();
    const auto table = convergence_table(cfg);
    CHECK(table.variable == "h");
    CHECK(table.rows.size() == 3);
    CHECK(table.order >= 1.8);
    CHECK(table.passed());
    CHECK(fs::exists(fs::path(cfg.output_dir) / "table.csv"));
}
