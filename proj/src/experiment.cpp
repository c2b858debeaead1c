#include "nlfk/experiment.hpp"

#include "nlfk/csv.hpp"
#include "nlfk/dpp.hpp"
#include "nlfk/errors.hpp"
#include "nlfk/fd_oracle.hpp"
#include "nlfk/sde.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>

namespace nlfk {

bool SolveReport::all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

const CheckResult* SolveReport::find_check(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

bool ConvergenceTable::passed() const { return !min_order || exact || order >= *min_order; }

namespace {

using Clock = std::chrono::steady_clock;

// Rethrows solver failures with the stage name in front, keeping the error family.
template <class F>
auto in_stage(const std::string& stage, F&& body) {
    try {
        return body();
    } catch (const ConfigError&) {
        throw;
    } catch (const CflError& e) {
        throw CflError(fmt::format("{}: {}", stage, e.what()), e.admissible_dt());
    } catch (const SolverError& e) {
        throw SolverError(fmt::format("{}: {}", stage, e.what()));
    } catch (const NumericError& e) {
        throw NumericError(fmt::format("{}: {}", stage, e.what()));
    } catch (const InputError& e) {
        throw InputError(fmt::format("{}: {}", stage, e.what()));
    }
}

std::size_t nearest_step(const TimeGrid& g, double t) {
    const double pos = std::round((t - g.start()) / g.dt());
    return static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(g.steps())));
}

std::string fmt_point(double t, const Vector& x) {
    std::string s = fmt::format("t={}, x=(", t);
    for (Eigen::Index i = 0; i < x.size(); ++i) s += fmt::format("{}{}", i ? ", " : "", x(i));
    return s + ")";
}

double relative_gap(double v, double oracle) { return std::abs(v - oracle) / std::max(std::abs(oracle), 1.0); }

double relative_change(double coarse, double fine) {
    const double d = std::abs(fine - coarse);
    if (d <= 1e-12 * std::max(1.0, std::abs(fine))) return 0.0;
    return d / std::max(std::abs(fine), 1e-300);
}

struct LevelSolution {
    std::optional<DppResult> dpp;
    std::optional<ValueField> fd;
};

DppOptions dpp_options(const ExperimentConfig& cfg) {
    DppOptions o;
    o.rule = cfg.rule;
    o.rule.seed = cfg.seed;
    o.rule.stream = 0;
    return o;
}

SpaceGrid fd_space(const ExperimentConfig& cfg, double h) { return SpaceGrid(cfg.fd_lower, cfg.fd_upper, h); }

FdScheme fd_scheme(const ExperimentConfig& cfg, const OperatorSpec& op, const Level& lv) {
    SpaceGrid space = fd_space(cfg, lv.h);
    const double dt = lv.fd_dt ? *lv.fd_dt : fd_admissible_dt(op, space);
    return make_fd_scheme(op, std::move(space), dt, cfg.fd_cross_fallback);
}

class Timer {
public:
    explicit Timer(std::vector<StageTiming>& sink, std::string stage) : sink_(sink), stage_(std::move(stage)) {}
    ~Timer() { sink_.push_back({stage_, std::chrono::duration<double>(Clock::now() - start_).count()}); }
    Timer(const Timer&) = delete;
    Timer& operator=(const Timer&) = delete;

private:
    std::vector<StageTiming>& sink_;
    std::string stage_;
    Clock::time_point start_ = Clock::now();
};

std::vector<std::string> point_header(std::size_t dims) {
    std::vector<std::string> h{"level", "K", "h", "P", "solver", "t"};
    for (std::size_t i = 0; i < dims; ++i) h.push_back(fmt::format("x_{}", i + 1));
    for (const char* c : {"value", "stderr", "oracle", "relative_gap"}) h.emplace_back(c);
    return h;
}

void write_fd_checkpoints(std::ostream& out, const ValueField& f) {
    std::vector<std::string> header{"step", "time"};
    for (std::size_t i = 0; i < f.space().dims(); ++i) header.push_back(fmt::format("x_{}", i + 1));
    header.emplace_back("value");
    header.emplace_back("argmax_index");
    csv::write_row(out, header);
    const double T = f.grid().end();
    std::vector<std::size_t> steps;
    for (double frac : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const std::size_t k = nearest_step(f.grid(), frac * T);
        if (steps.empty() || steps.back() != k) steps.push_back(k);
    }
    for (std::size_t k : steps) {
        for (std::size_t j = 0; j < f.space().node_count(); ++j) {
            std::vector<std::string> row{std::to_string(k), csv::number(f.grid().node(k))};
            for (double v : f.space().point(j)) row.push_back(csv::number(v));
            row.push_back(csv::number(f.at(k, j)));
            row.emplace_back("-1");
            csv::write_row(out, row);
        }
    }
}

std::ofstream open_artifact(const std::filesystem::path& dir, const std::string& name, SolveReport* report) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw InputError(fmt::format("cannot write '{}'", (dir / name).string()));
    if (report) report->artifacts.push_back(name);
    return out;
}

// ------------------------------------------------------------------ checks

CheckResult check_assumptions(const ExperimentConfig& cfg) {
    const auto rep = validate_assumptions(cfg.problem, cfg.assumption_samples, cfg.seed);
    CheckResult c{"assumptions", rep.violation_count() == 0, static_cast<double>(rep.violation_count()), {}};
    for (const auto& b : rep.checks) {
        if (b.violated) {
            c.witness = fmt::format("{} declared {} observed {} at {}", b.name, b.declared, b.observed, b.witness);
            break;
        }
    }
    if (c.passed) c.witness = fmt::format("{} bounds hold on {} samples", rep.checks.size(), cfg.assumption_samples);
    return c;
}

CheckResult check_reference(const ExperimentConfig& cfg, const std::vector<PointResult>& points, std::size_t finest) {
    CheckResult c{"reference_value", true, 0.0, {}};
    double worst_ratio = -1.0;
    for (const auto& pr : points) {
        if (pr.level != finest) continue;
        for (const auto& tp : cfg.test_points) {
            if (!tp.expected || tp.t != pr.t || tp.x != pr.x) continue;
            const double err = std::abs(pr.value - *tp.expected);
            const double tol = tp.tolerance_for(pr.solver);
            if (err > tol) c.passed = false;
            if (err / tol > worst_ratio) {
                worst_ratio = err / tol;
                c.worst = err;
                c.witness = fmt::format("{} at {}: {} vs expected {} (tolerance {})", pr.solver, fmt_point(tp.t, tp.x),
                                        pr.value, *tp.expected, tol);
            }
        }
    }
    return c;
}

CheckResult check_agreement(const std::vector<PointResult>& points, std::size_t finest) {
    CheckResult c{"dpp_fd_agreement", true, 0.0, {}};
    std::map<std::pair<double, std::vector<double>>, std::pair<std::optional<double>, std::optional<double>>> by_point;
    for (const auto& pr : points) {
        if (pr.level != finest) continue;
        auto& slot = by_point[{pr.t, std::vector<double>(pr.x.begin(), pr.x.end())}];
        if (pr.solver == "dpp") slot.first = pr.value;
        if (pr.solver == "fd") slot.second = pr.value;
    }
    for (const auto& [key, vals] : by_point) {
        if (!vals.first || !vals.second) continue;
        const double gap = relative_gap(*vals.first, *vals.second);
        if (gap > 0.02) c.passed = false;
        if (gap >= c.worst) {
            c.worst = gap;
            const Vector x = Eigen::Map<const Vector>(key.second.data(), static_cast<Eigen::Index>(key.second.size()));
            c.witness = fmt::format("at {}: dpp {} vs fd {}", fmt_point(key.first, x), *vals.first, *vals.second);
        }
    }
    return c;
}

double dpp_value_at(const DppResult& r, double t, const Vector& x) {
    return r.field.interpolate(nearest_step(r.field.grid(), t), x);
}

CheckResult check_envelope(const ExperimentConfig& cfg, const DppResult& dpp, const Level& lv) {
    CheckResult c{"envelope_dominance", true, -std::numeric_limits<double>::infinity(), {}};
    const auto& op = cfg.problem;
    for (const auto& tp : cfg.test_points) {
        const double t = dpp.field.grid().node(nearest_step(dpp.field.grid(), tp.t));
        const double u = dpp_value_at(dpp, t, tp.x);
        double best_gap = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < op.controls.size(); ++j) {
            const auto frozen = FeedbackPolicy::constant(dpp.field, j);
            const auto pv = evaluate_policy_value(op, frozen, t, tp.x, lv.paths, cfg.seed, cfg.bsde);
            const double slack = 3.0 * pv.stderr_value + 0.05;
            const double excess = pv.estimate - u - slack;
            if (excess > 0.0) c.passed = false;
            if (excess > c.worst) {
                c.worst = excess;
                c.witness = fmt::format("control {} at {}: frozen value {} +- {} vs dpp {}", j, fmt_point(t, tp.x),
                                        pv.estimate, pv.stderr_value, u);
            }
            best_gap = std::min(best_gap, u - pv.estimate - slack);
        }
        if (best_gap > 0.0) {
            c.passed = false;
            c.witness = fmt::format("no frozen control attains the dpp value {} at {} (shortfall {})", u,
                                    fmt_point(t, tp.x), best_gap);
        }
    }
    return c;
}

CheckResult check_consistency(const ExperimentConfig& cfg, const Level& lv) {
    CheckResult c{"dpp_consistency", true, 0.0, {}};
    const auto& op = cfg.problem;
    const TimeGrid full(0.0, op.horizon, lv.steps);
    for (const auto& tp : cfg.test_points) {
        const std::size_t k0 = nearest_step(full, tp.t);
        const std::size_t steps = lv.steps - k0;
        if (steps < 2) {
            c.passed = false;
            c.witness = fmt::format("at {}: fewer than two steps remain before T", fmt_point(tp.t, tp.x));
            continue;
        }
        const double t0 = full.node(k0);
        const TimeGrid sub(t0, op.horizon, steps);
        const double t_mid = sub.node(steps / 2);
        DppSolverConfig sc{steps, SpaceGrid(cfg.lower, cfg.upper, lv.h), dpp_options(cfg)};
        const auto r = dpp_two_stage(op, t0, tp.x, t_mid, sc);
        const double diff = std::abs(r.direct - r.two_stage);
        const double tol = std::max(0.02, 3.0 * r.combined_stderr);
        if (diff > tol) c.passed = false;
        if (diff >= c.worst) {
            c.worst = diff;
            c.witness = fmt::format("at {}: direct {} vs two-stage {} (tolerance {})", fmt_point(t0, tp.x), r.direct,
                                    r.two_stage, tol);
        }
    }
    return c;
}

CheckResult check_comparison(const ExperimentConfig& cfg, const Level& lv, const LevelSolution& sol) {
    CheckResult c{"comparison", true, 0.0, {}};
    OperatorSpec shifted = cfg.problem;
    shifted.terminal = cfg.problem.terminal.shifted(1.0);
    std::vector<std::string> notes;
    double worst = -std::numeric_limits<double>::infinity();
    if (sol.fd) {
        const auto v = solve_fd(shifted, fd_scheme(cfg, shifted, lv));
        const auto ord = check_comparison_order(*sol.fd, v, 1e-10);
        worst = std::max(worst, ord.worst_margin);
        if (!ord.ordered) {
            c.passed = false;
            notes.push_back(fmt::format("fd violates the order by {} at step {}, node {}", ord.worst_margin,
                                        ord.witness_step, ord.witness_node));
        }
    }
    if (sol.dpp) {
        const double dt = sol.dpp->field.grid().dt();
        const double threshold = dpp_monotone_dt_threshold(cfg.problem);
        if (dt <= threshold) {
            const auto v = solve_value_dpp(shifted, sol.dpp->field.grid(), sol.dpp->field.space(), dpp_options(cfg));
            const auto ord = check_comparison_order(sol.dpp->field, v.field, 1e-10);
            worst = std::max(worst, ord.worst_margin);
            if (!ord.ordered) {
                c.passed = false;
                notes.push_back(fmt::format("dpp violates the order by {} at step {}, node {}", ord.worst_margin,
                                            ord.witness_step, ord.witness_node));
            }
        } else {
            notes.push_back(fmt::format("dpp ordering not asserted: dt {} exceeds the monotone threshold {}", dt, threshold));
        }
    }
    const auto structure = check_comparison_structure(cfg.problem, cfg.assumption_samples, cfg.seed);
    if (!structure.ok()) {
        c.passed = false;
        notes.push_back(fmt::format("structure condition fails: monotonicity excess {}, second-order excess {}",
                                    structure.worst_monotonicity_excess, structure.worst_second_order_excess));
    }
    c.worst = std::isfinite(worst) ? worst : 0.0;
    if (notes.empty()) notes.push_back(fmt::format("worst margin u - v = {}", c.worst));
    for (std::size_t i = 0; i < notes.size(); ++i) c.witness += (i ? "; " : "") + notes[i];
    return c;
}

CheckResult check_policy_mc(const ExperimentConfig& cfg, const std::vector<PointResult>& points, std::size_t finest) {
    CheckResult c{"policy_mc_agreement", true, 0.0, {}};
    for (const auto& pr : points) {
        if (pr.level != finest || pr.solver != "policy_mc") continue;
        for (const auto& other : points) {
            if (other.level != finest || other.solver != "dpp" || other.t != pr.t || other.x != pr.x) continue;
            double tol = 0.02;
            for (const auto& tp : cfg.test_points)
                if (tp.t == pr.t && tp.x == pr.x) tol = tp.tolerance_for("policy_mc");
            const double diff = std::abs(pr.value - other.value);
            const double allowed = 3.0 * pr.stderr_value + tol;
            if (diff > allowed) c.passed = false;
            if (diff >= c.worst) {
                c.worst = diff;
                c.witness = fmt::format("at {}: policy {} +- {} vs dpp {} (allowed {})", fmt_point(pr.t, pr.x),
                                        pr.value, pr.stderr_value, other.value, allowed);
            }
        }
    }
    return c;
}

const ValueField& regularity_field(const LevelSolution& s) { return s.dpp ? s.dpp->field : *s.fd; }

CheckResult check_regularity(const ExperimentConfig& cfg, const std::vector<LevelSolution>& sols, bool growth) {
    const auto& coarse = regularity_field(sols[sols.size() - 2]);
    const auto& fine = regularity_field(sols.back());
    const auto a = fit_regularity(coarse, cfg.regularity_radius);
    const auto b = fit_regularity(fine, cfg.regularity_radius);
    CheckResult c{growth ? "growth" : "regularity", true, 0.0, {}};
    if (growth) {
        c.worst = relative_change(a.growth, b.growth);
        c.witness = fmt::format("growth constant {} -> {}", a.growth, b.growth);
    } else {
        const double ch = relative_change(a.holder_t, b.holder_t);
        const double cl = relative_change(a.lipschitz_x, b.lipschitz_x);
        c.worst = std::max(ch, cl);
        c.witness = fmt::format("holder_t {} -> {}, lipschitz_x {} -> {}", a.holder_t, b.holder_t, a.lipschitz_x,
                                b.lipschitz_x);
    }
    c.passed = c.worst < 0.2;
    return c;
}

CheckResult check_residuals(const ExperimentConfig& cfg, const ValueField& fd) {
    const auto rep = viscosity_residuals(fd, cfg.problem);
    CheckResult c{"residuals", rep.max_abs <= cfg.residual_tolerance, rep.max_abs, {}};
    c.witness = fmt::format("max |r| = {} at {} (tolerance {})", rep.max_abs,
                            fmt_point(fd.grid().node(rep.max_step), fd.space().point(rep.max_node)),
                            cfg.residual_tolerance);
    return c;
}

}  // namespace

SolveReport run_experiment(const ExperimentConfig& cfg) {
    cfg.problem.validate();
    SolveReport report;
    report.name = cfg.name;
    report.seed = cfg.seed;
    const auto& op = cfg.problem;
    const std::size_t L = cfg.levels.size();
    const std::size_t finest = L - 1;

    std::vector<LevelSolution> sols(L);
    for (std::size_t i = 0; i < L; ++i) {
        const auto& lv = cfg.levels[i];
        if (cfg.uses("dpp")) {
            const std::string stage = fmt::format("dpp level {}", i);
            Timer timer(report.timings, stage);
            sols[i].dpp = in_stage(stage, [&] {
                return solve_value_dpp(op, TimeGrid(0.0, op.horizon, lv.steps), SpaceGrid(cfg.lower, cfg.upper, lv.h),
                                       dpp_options(cfg));
            });
            for (const auto& w : sols[i].dpp->warnings) report.warnings.push_back(fmt::format("{}: {}", stage, w));
            const double margin = required_boundary_margin(op, sols[i].dpp->field.space());
            for (const auto& tp : cfg.test_points) {
                const double d = sols[i].dpp->field.space().distance_to_boundary(tp.x);
                if (d < margin)
                    report.warnings.push_back(fmt::format("{}: test point {} lies {} from the box boundary (< {})", stage,
                                                          fmt_point(tp.t, tp.x), d, margin));
            }
        }
        if (cfg.uses("fd")) {
            const std::string stage = fmt::format("fd level {}", i);
            Timer timer(report.timings, stage);
            sols[i].fd = in_stage(stage, [&] { return solve_fd(op, fd_scheme(cfg, op, lv)); });
        }
    }

    // point values on every level
    for (std::size_t i = 0; i < L; ++i) {
        for (const auto& tp : cfg.test_points) {
            std::optional<double> fd_value;
            if (sols[i].fd) fd_value = sols[i].fd->interpolate(nearest_step(sols[i].fd->grid(), tp.t), tp.x);
            auto oracle_for = [&](const std::string& solver) -> std::optional<double> {
                if (tp.expected) return tp.expected;
                if (solver != "fd") return fd_value;
                return std::nullopt;
            };
            auto add = [&](const std::string& solver, double v, double se) {
                PointResult pr{i, solver, tp.t, tp.x, v, se, oracle_for(solver), std::nullopt};
                if (pr.oracle) pr.relative_gap = relative_gap(v, *pr.oracle);
                report.points.push_back(std::move(pr));
            };
            if (sols[i].dpp) {
                const auto& f = sols[i].dpp->field;
                const std::size_t k = nearest_step(f.grid(), tp.t);
                add("dpp", f.interpolate(k, tp.x), f.interpolate_stderr(k, tp.x));
            }
            if (fd_value) add("fd", *fd_value, 0.0);
            if (cfg.uses("policy_mc") && i == finest) {
                const std::string stage = fmt::format("policy_mc {}", fmt_point(tp.t, tp.x));
                Timer timer(report.timings, stage);
                const auto& f = sols[i].dpp->field;
                const double t = f.grid().node(nearest_step(f.grid(), tp.t));
                const auto pv = in_stage(stage, [&] {
                    return evaluate_policy_value(op, sols[i].dpp->policy(), t, tp.x, cfg.levels[i].paths, cfg.seed,
                                                 cfg.bsde);
                });
                add("policy_mc", pv.estimate, pv.stderr_value);
            }
        }
    }

    // empirical orders between consecutive levels against the expected value
    for (const std::string solver : {"dpp", "fd"}) {
        for (std::size_t q = 0; q < cfg.test_points.size(); ++q) {
            const auto& tp = cfg.test_points[q];
            if (!tp.expected) continue;
            std::vector<double> err(L, -1.0);
            for (const auto& pr : report.points)
                if (pr.solver == solver && pr.t == tp.t && pr.x == tp.x) err[pr.level] = std::abs(pr.value - *tp.expected);
            for (std::size_t i = 0; i + 1 < L; ++i) {
                const double floor = 1e-10 * std::max(1.0, std::abs(*tp.expected));
                if (!(err[i] > floor) || !(err[i + 1] > floor)) continue;
                const auto& a = cfg.levels[i];
                const auto& b = cfg.levels[i + 1];
                const double ratio = a.h != b.h ? a.h / b.h : static_cast<double>(b.steps) / static_cast<double>(a.steps);
                if (ratio == 1.0) continue;
                report.orders.push_back({solver, q, i, i + 1, std::log(err[i] / err[i + 1]) / std::log(ratio)});
            }
        }
    }

    const auto& flv = cfg.levels[finest];
    const auto& fsol = sols[finest];
    for (const auto& name : cfg.checks) {
        Timer timer(report.timings, "check " + name);
        const std::string stage = "check " + name;
        CheckResult c = in_stage(stage, [&]() -> CheckResult {
            if (name == "assumptions") return check_assumptions(cfg);
            if (name == "reference_value") return check_reference(cfg, report.points, finest);
            if (name == "dpp_fd_agreement") return check_agreement(report.points, finest);
            if (name == "envelope_dominance") return check_envelope(cfg, *fsol.dpp, flv);
            if (name == "dpp_consistency") return check_consistency(cfg, flv);
            if (name == "comparison") return check_comparison(cfg, flv, fsol);
            if (name == "policy_mc_agreement") return check_policy_mc(cfg, report.points, finest);
            if (name == "regularity") return check_regularity(cfg, sols, false);
            if (name == "growth") return check_regularity(cfg, sols, true);
            if (name == "residuals") return check_residuals(cfg, *fsol.fd);
            throw InputError(fmt::format("unknown check '{}'", name));
        });
        report.checks.push_back(std::move(c));
    }

    // artifacts
    namespace fs = std::filesystem;
    const fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));

    {
        auto out = open_artifact(dir, "points.csv", &report);
        csv::write_row(out, point_header(op.state_dim));
        for (const auto& pr : report.points) {
            const auto& lv = cfg.levels[pr.level];
            std::vector<std::string> row{std::to_string(pr.level), std::to_string(lv.steps), csv::number(lv.h),
                                         std::to_string(lv.paths), pr.solver, csv::number(pr.t)};
            for (double v : pr.x) row.push_back(csv::number(v));
            row.push_back(csv::number(pr.value));
            row.push_back(csv::number(pr.stderr_value));
            row.push_back(pr.oracle ? csv::number(*pr.oracle) : "");
            row.push_back(pr.relative_gap ? csv::number(*pr.relative_gap) : "");
            csv::write_row(out, row);
        }
    }
    {
        auto out = open_artifact(dir, "checks.csv", &report);
        csv::write_row(out, {"check", "passed", "worst", "witness"});
        for (const auto& c : report.checks)
            csv::write_row(out, {c.name, c.passed ? "1" : "0", csv::number(c.worst), c.witness});
    }
    {
        auto out = open_artifact(dir, "orders.csv", &report);
        csv::write_row(out, {"solver", "point", "level_from", "level_to", "order"});
        for (const auto& o : report.orders)
            csv::write_row(out, {o.solver, std::to_string(o.point), std::to_string(o.level_from),
                                 std::to_string(o.level_to), csv::number(o.order)});
    }
    if (fsol.dpp) {
        auto out = open_artifact(dir, "dpp_value.csv", &report);
        write_value_field_csv(out, fsol.dpp->field);
    }
    if (fsol.fd) {
        auto out = open_artifact(dir, "fd_value.csv", &report);
        write_fd_checkpoints(out, *fsol.fd);
    }
    report.artifacts.push_back("report.txt");
    {
        auto out = open_artifact(dir, "report.txt", nullptr);
        write_report_text(out, report);
    }
    return report;
}

void write_report_text(std::ostream& out, const SolveReport& r) {
    out << fmt::format("experiment: {}\nseed: {}\n\n", r.name, r.seed);
    out << "point values\n";
    out << fmt::format("  {:<6} {:<10} {:<28} {:>14} {:>12} {:>14} {:>12}\n", "level", "solver", "point", "value",
                       "stderr", "oracle", "rel gap");
    for (const auto& p : r.points) {
        out << fmt::format("  {:<6} {:<10} {:<28} {:>14.8f} {:>12.3e} {:>14} {:>12}\n", p.level, p.solver,
                           fmt_point(p.t, p.x), p.value, p.stderr_value,
                           p.oracle ? fmt::format("{:.8f}", *p.oracle) : "-",
                           p.relative_gap ? fmt::format("{:.3e}", *p.relative_gap) : "-");
    }
    if (!r.orders.empty()) {
        out << "\nempirical orders\n";
        for (const auto& o : r.orders)
            out << fmt::format("  {:<10} point {} levels {}->{}: {:.3f}\n", o.solver, o.point, o.level_from, o.level_to,
                               o.order);
    }
    out << "\nchecks\n";
    for (const auto& c : r.checks)
        out << fmt::format("  [{}] {:<20} worst={:.6g}  {}\n", c.passed ? "PASS" : "FAIL", c.name, c.worst, c.witness);
    if (!r.warnings.empty()) {
        out << "\nwarnings\n";
        for (const auto& w : r.warnings) out << "  " << w << "\n";
    }
    out << "\nwall clock\n";
    for (const auto& t : r.timings) out << fmt::format("  {:<28} {:.3f} s\n", t.stage, t.seconds);
    out << fmt::format("\nresult: {}\n", r.all_passed() ? "all checks passed" : "some checks FAILED");
}

// ------------------------------------------------------------------ tables

ConvergenceTable convergence_table(const ExperimentConfig& cfg) {
    if (!cfg.table) throw ConfigError("the config has no table section", -1, "table");
    const auto& spec = *cfg.table;
    const auto& op = cfg.problem;
    const std::size_t L = cfg.levels.size();
    if (L < 3) throw ConfigError("a convergence table needs at least 3 refinement levels", -1, "levels");

    ConvergenceTable table;
    table.min_order = spec.min_order;
    const Vector& x0 = spec.point.x;

    auto fill_errors = [&] {
        const double ref = spec.reference ? *spec.reference : *table.rows.back().value;
        for (auto& row : table.rows) row.error = std::abs(*row.value - ref);
        if (!spec.reference) table.rows.back().error.reset();
        std::vector<double> lx, ly;
        bool all_tiny = true;
        for (const auto& row : table.rows) {
            if (!row.error) continue;
            if (*row.error > 1e-13 * std::max(1.0, std::abs(ref))) all_tiny = false;
            if (*row.error > 0.0) {
                lx.push_back(std::log(row.step));
                ly.push_back(std::log(*row.error));
            }
        }
        table.exact = all_tiny;
        if (all_tiny)
            table.order = std::numeric_limits<double>::infinity();
        else if (lx.size() >= 2)
            table.order = least_squares_slope(lx, ly);
        else
            throw NumericError("convergence table: fewer than two nonzero errors to fit an order");
    };

    switch (spec.kind) {
        case TableSpec::Kind::fd: {
            table.kind = "fd";
            table.variable = "h";
            for (std::size_t i = 0; i < L; ++i) {
                const auto& lv = cfg.levels[i];
                const auto u = in_stage(fmt::format("fd level {}", i), [&] { return solve_fd(op, fd_scheme(cfg, op, lv)); });
                table.rows.push_back({i, u.grid().steps(), lv.h, lv.paths, lv.h,
                                      u.interpolate(nearest_step(u.grid(), spec.point.t), x0), std::nullopt});
            }
            fill_errors();
            break;
        }
        case TableSpec::Kind::dpp: {
            table.kind = "dpp";
            const bool h_varies = cfg.levels.front().h != cfg.levels.back().h;
            table.variable = h_varies ? "h" : "dt";
            for (std::size_t i = 0; i < L; ++i) {
                const auto& lv = cfg.levels[i];
                const auto r = in_stage(fmt::format("dpp level {}", i), [&] {
                    return solve_value_dpp(op, TimeGrid(0.0, op.horizon, lv.steps), SpaceGrid(cfg.lower, cfg.upper, lv.h),
                                           dpp_options(cfg));
                });
                const double step = h_varies ? lv.h : op.horizon / static_cast<double>(lv.steps);
                table.rows.push_back({i, lv.steps, lv.h, lv.paths, step,
                                      r.field.interpolate(nearest_step(r.field.grid(), spec.point.t), x0), std::nullopt});
            }
            fill_errors();
            break;
        }
        case TableSpec::Kind::sde_strong: {
            table.kind = "sde_strong";
            table.variable = "dt";
            const std::size_t coarse = cfg.levels.front().steps;
            for (std::size_t i = 0; i < L; ++i)
                if (cfg.levels[i].steps != coarse << i)
                    throw ConfigError("sde_strong tables need K doubling from level to level", -1, "levels");
            // the finest listed level is the coupled reference
            const auto res = in_stage("sde strong order", [&] {
                return estimate_strong_order(op, constant_policy(0), x0, coarse, L - 1, cfg.levels.back().paths, cfg.seed);
            });
            for (std::size_t i = 0; i + 1 < L; ++i) {
                const auto& lv = cfg.levels[i];
                table.rows.push_back({i, lv.steps, lv.h, lv.paths, res.dts[i], std::nullopt, res.errors[i]});
            }
            const auto& last = cfg.levels.back();
            table.rows.push_back({L - 1, last.steps, last.h, last.paths, op.horizon / static_cast<double>(last.steps),
                                  std::nullopt, std::nullopt});
            table.exact = res.exact;
            table.order = res.rate;
            break;
        }
        case TableSpec::Kind::bsde_zero_noise: {
            table.kind = "bsde_zero_noise";
            table.variable = "dt";
            const auto& c0 = op.controls.front();
            const Vector z = Vector::Zero(static_cast<Eigen::Index>(op.noise_dim));
            const double yT = op.terminal(x0);
            auto f = [&](double t, double y) {
                const Vector b = c0.b(t, x0);
                const Matrix s = Matrix::Zero(static_cast<Eigen::Index>(op.state_dim), static_cast<Eigen::Index>(op.noise_dim));
                return op.driver(DriverArgs{t, x0, b, s, y, z});
            };
            for (std::size_t i = 0; i < L; ++i) {
                const auto& lv = cfg.levels[i];
                const TimeGrid grid(spec.point.t, op.horizon, lv.steps);
                const auto y = in_stage("zero-noise bsde", [&] { return solve_bsde_zero_noise(yT, f, grid); });
                table.rows.push_back({i, lv.steps, lv.h, lv.paths, grid.dt(), y.front(), std::nullopt});
            }
            fill_errors();
            break;
        }
    }

    namespace fs = std::filesystem;
    const fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError(fmt::format("cannot create output directory '{}': {}", dir.string(), ec.message()));
    {
        auto out = open_artifact(dir, "table.csv", nullptr);
        csv::write_row(out, {"level", "K", "h", "P", table.variable, "value", "error"});
        for (const auto& row : table.rows)
            csv::write_row(out, {std::to_string(row.level), std::to_string(row.steps), csv::number(row.h),
                                 std::to_string(row.paths), csv::number(row.step), row.value ? csv::number(*row.value) : "",
                                 row.error ? csv::number(*row.error) : ""});
        csv::write_row(out, {"order", "", "", "", "", "", csv::number(table.order)});
    }
    {
        auto out = open_artifact(dir, "table.txt", nullptr);
        write_table_text(out, table);
    }
    return table;
}

void write_table_text(std::ostream& out, const ConvergenceTable& t) {
    out << fmt::format("convergence table: {} (refinement in {})\n", t.kind, t.variable);
    out << fmt::format("  {:<6} {:>8} {:>10} {:>10} {:>12} {:>18} {:>12}\n", "level", "K", "h", "P", t.variable, "value",
                       "error");
    for (const auto& r : t.rows)
        out << fmt::format("  {:<6} {:>8} {:>10.4g} {:>10} {:>12.4e} {:>18} {:>12}\n", r.level, r.steps, r.h, r.paths,
                           r.step, r.value ? fmt::format("{:.10f}", *r.value) : "-",
                           r.error ? fmt::format("{:.4e}", *r.error) : "-");
    if (t.exact)
        out << "  fitted order: exact (all errors at round-off)\n";
    else
        out << fmt::format("  fitted order: {:.4f}\n", t.order);
    if (t.min_order)
        out << fmt::format("  required order >= {}: {}\n", *t.min_order, t.passed() ? "PASS" : "FAIL");
}

}  // namespace nlfk
