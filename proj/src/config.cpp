#include "nlfk/config.hpp"

#include "nlfk/errors.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace nlfk {

double TestPoint::tolerance_for(const std::string& solver) const {
    auto it = solver_tolerance.find(solver);
    return it == solver_tolerance.end() ? tolerance : it->second;
}

bool ExperimentConfig::uses(const std::string& solver) const {
    return std::find(solvers.begin(), solvers.end(), solver) != solvers.end();
}

bool ExperimentConfig::wants(const std::string& check) const {
    return std::find(checks.begin(), checks.end(), check) != checks.end();
}

const std::vector<CheckInfo>& known_checks() {
    static const std::vector<CheckInfo> checks{
        {"assumptions", "sampled structural bounds on the controls, driver and terminal hold as declared"},
        {"reference_value", "solver values at test points match their expected values within tolerance"},
        {"dpp_fd_agreement", "dpp and fd agree within 2% (relative to max(|fd|, 1)) at test points"},
        {"envelope_dominance", "every frozen control's value is at most the dpp value; the best one attains it"},
        {"dpp_consistency", "direct and two-stage dpp solves agree at test points"},
        {"comparison", "ordered terminals g <= g + 1 give ordered fd and dpp fields; F has comparison structure"},
        {"policy_mc_agreement", "Monte-Carlo value of the dpp feedback policy matches the dpp value"},
        {"regularity", "Holder-1/2 in t and Lipschitz in x constants are stable between the two finest levels"},
        {"growth", "quadratic growth constant is stable between the two finest levels"},
        {"residuals", "discrete viscosity residuals of the fd solution stay below the configured tolerance"},
    };
    return checks;
}

namespace {

int line_of(const YAML::Node& n) {
    const auto m = n.Mark();
    return m.is_null() ? -1 : m.line + 1;
}

[[noreturn]] void fail(const YAML::Node& n, const std::string& field, const std::string& what) {
    throw ConfigError(what, line_of(n), field);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void require_map(const YAML::Node& n, const std::string& path) {
    if (!n.IsMap()) fail(n, path, "expected a section of key: value pairs");
}

void reject_unknown(const YAML::Node& n, const std::string& path, std::initializer_list<const char*> allowed) {
    for (const auto& kv : n) {
        const auto key = kv.first.as<std::string>();
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            fail(kv.first, join(path, key), "unknown key");
    }
}

template <class T>
T scalar(const YAML::Node& n, const std::string& field) {
    if (!n.IsScalar()) fail(n, field, "expected a scalar value");
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        fail(n, field, fmt::format("cannot parse '{}'", n.Scalar()));
    }
}

double real(const YAML::Node& n, const std::string& field) {
    const double v = scalar<double>(n, field);
    if (!std::isfinite(v)) fail(n, field, "value must be finite");
    return v;
}

std::size_t count(const YAML::Node& n, const std::string& field) {
    const auto s = n.IsScalar() ? n.Scalar() : std::string{};
    if (!s.empty() && s[0] == '-') fail(n, field, "expected a nonnegative integer");
    // accept 1e4 style
    const double v = real(n, field);
    if (v < 0.0 || v != std::floor(v) || v > 1e15) fail(n, field, "expected a nonnegative integer");
    return static_cast<std::size_t>(v);
}

Vector vec(const YAML::Node& n, const std::string& field, std::size_t dims) {
    if (n.IsScalar()) return Vector::Constant(static_cast<Eigen::Index>(dims), real(n, field));
    if (!n.IsSequence()) fail(n, field, "expected a number or a list of numbers");
    if (n.size() != dims) fail(n, field, fmt::format("expected {} entries, got {}", dims, n.size()));
    Vector v(static_cast<Eigen::Index>(dims));
    for (std::size_t i = 0; i < dims; ++i) v(static_cast<Eigen::Index>(i)) = real(n[i], fmt::format("{}[{}]", field, i));
    return v;
}

Matrix mat(const YAML::Node& n, const std::string& field, std::size_t rows, std::size_t cols) {
    if (n.IsScalar()) {
        if (rows != cols) fail(n, field, fmt::format("a scalar needs a square shape, here {}x{}", rows, cols));
        return Matrix::Identity(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)) * real(n, field);
    }
    if (!n.IsSequence() || n.size() != rows) fail(n, field, fmt::format("expected a list of {} rows", rows));
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        const auto row = vec(n[r], fmt::format("{}[{}]", field, r), cols);
        m.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    return m;
}

bool has(const YAML::Node& parent, const char* key) { return parent.IsMap() && parent[key].IsDefined(); }

const YAML::Node need(const YAML::Node& parent, const char* key, const std::string& path) {
    const YAML::Node c = parent[key];
    if (!c.IsDefined() || c.IsNull()) fail(parent, join(path, key), "required key is missing");
    return c;
}

FieldSpec field_spec(const YAML::Node& n, const std::string& path, std::size_t rows, std::size_t cols, bool drift,
                     double& lipschitz) {
    if (!n.IsMap()) {
        lipschitz = 0.0;
        if (drift) return FieldSpec::constant(vec(n, path, rows));
        return FieldSpec::constant(mat(n, path, rows, cols));
    }
    if (n.size() != 1) fail(n, path, "expected exactly one of constant, affine, named");
    const auto key = n.begin()->first.as<std::string>();
    const YAML::Node v = n.begin()->second;
    const std::string sub = join(path, key);
    if (key == "constant") {
        lipschitz = 0.0;
        if (drift) return FieldSpec::constant(vec(v, sub, rows));
        return FieldSpec::constant(mat(v, sub, rows, cols));
    }
    if (key == "affine") {
        require_map(v, sub);
        if (drift) {
            reject_unknown(v, sub, {"A", "c"});
            const Matrix A = mat(need(v, "A", sub), join(sub, "A"), rows, rows);
            const Vector c = has(v, "c") ? vec(v["c"], join(sub, "c"), rows) : Vector::Zero(static_cast<Eigen::Index>(rows));
            auto f = FieldSpec::affine_drift(A, c);
            lipschitz = f.affine_lipschitz();
            return f;
        }
        reject_unknown(v, sub, {"offset", "slopes"});
        const Matrix offset = mat(need(v, "offset", sub), join(sub, "offset"), rows, cols);
        std::vector<Matrix> slopes;
        const YAML::Node s = need(v, "slopes", sub);
        if (!s.IsSequence() || s.size() != rows) fail(s, join(sub, "slopes"), fmt::format("expected {} slope matrices", rows));
        for (std::size_t i = 0; i < rows; ++i) slopes.push_back(mat(s[i], fmt::format("{}.slopes[{}]", sub, i), rows, cols));
        auto f = FieldSpec::affine(offset, slopes);
        lipschitz = f.affine_lipschitz();
        return f;
    }
    if (key == "named") {
        const auto name = scalar<std::string>(v, sub);
        try {
            lookup_field(name);
        } catch (const InputError& e) {
            fail(v, sub, e.what());
        }
        lipschitz = -1.0;  // must be declared
        return FieldSpec::named(name, rows, drift ? 1 : cols);
    }
    fail(n, sub, "expected one of constant, affine, named");
}

CoefficientField control(const YAML::Node& n, const std::string& path, std::size_t N, std::size_t M) {
    require_map(n, path);
    reject_unknown(n, path, {"drift", "diffusion", "lipschitz"});
    double lb = 0.0, ls = 0.0;
    CoefficientField c;
    c.drift = has(n, "drift") ? field_spec(n["drift"], join(path, "drift"), N, 1, true, lb)
                              : FieldSpec::constant(Matrix::Zero(static_cast<Eigen::Index>(N), 1));
    c.diffusion = field_spec(need(n, "diffusion", path), join(path, "diffusion"), N, M, false, ls);
    if (has(n, "lipschitz")) {
        c.lipschitz_bound = real(n["lipschitz"], join(path, "lipschitz"));
        if (c.lipschitz_bound < 0.0) fail(n["lipschitz"], join(path, "lipschitz"), "must be nonnegative");
    } else {
        if (lb < 0.0 || ls < 0.0) fail(n, join(path, "lipschitz"), "named coefficients need a declared lipschitz bound");
        c.lipschitz_bound = std::max(lb, ls);
    }
    return c;
}

DriverSpec driver(const YAML::Node& n, const std::string& path, std::size_t M) {
    if (!n.IsDefined() || n.IsNull()) return DriverSpec::zero();
    require_map(n, path);
    reject_unknown(n, path, {"form", "rate", "lambda", "offset", "name", "lipschitz_z", "monotonicity_mu"});
    const auto form = scalar<std::string>(need(n, "form", path), join(path, "form"));
    auto opt_real = [&](const char* key, double def) { return has(n, key) ? real(n[key], join(path, key)) : def; };
    const Vector zero_lambda = Vector::Zero(static_cast<Eigen::Index>(M));
    auto lambda = [&] { return has(n, "lambda") ? vec(n["lambda"], join(path, "lambda"), M) : zero_lambda; };
    DriverSpec d;
    if (form == "zero") {
        d = DriverSpec::zero();
    } else if (form == "linear_in_y") {
        d = DriverSpec::linear_in_y(real(need(n, "rate", path), join(path, "rate")));
    } else if (form == "linear_in_z") {
        d = DriverSpec::linear_in_z(vec(need(n, "lambda", path), join(path, "lambda"), M));
    } else if (form == "affine") {
        d = DriverSpec::affine(opt_real("offset", 0.0), opt_real("rate", 0.0), lambda());
    } else if (form == "named") {
        const auto name = scalar<std::string>(need(n, "name", path), join(path, "name"));
        try {
            d = DriverSpec::named(name, real(need(n, "lipschitz_z", path), join(path, "lipschitz_z")),
                                  real(need(n, "monotonicity_mu", path), join(path, "monotonicity_mu")));
        } catch (const ConfigError&) {
            throw;
        } catch (const InputError& e) {
            fail(n["name"], join(path, "name"), e.what());
        }
        return d;
    } else {
        fail(n["form"], join(path, "form"), "expected zero, linear_in_y, linear_in_z, affine or named");
    }
    // explicit declarations override the values implied by the form
    if (has(n, "lipschitz_z")) d.lipschitz_z = real(n["lipschitz_z"], join(path, "lipschitz_z"));
    if (has(n, "monotonicity_mu")) d.monotonicity_mu = real(n["monotonicity_mu"], join(path, "monotonicity_mu"));
    return d;
}

TerminalSpec terminal(const YAML::Node& n, const std::string& path) {
    require_map(n, path);
    reject_unknown(n, path, {"name", "scale", "shift", "lipschitz", "growth"});
    const auto name = scalar<std::string>(need(n, "name", path), join(path, "name"));
    TerminalSpec g;
    try {
        g = TerminalSpec::named(name, has(n, "scale") ? real(n["scale"], join(path, "scale")) : 1.0,
                                has(n, "shift") ? real(n["shift"], join(path, "shift")) : 0.0);
    } catch (const ConfigError&) {
        throw;
    } catch (const InputError& e) {
        fail(n["name"], join(path, "name"), e.what());
    }
    if (has(n, "lipschitz")) g.lipschitz_bound = real(n["lipschitz"], join(path, "lipschitz"));
    if (has(n, "growth")) g.growth_bound = real(n["growth"], join(path, "growth"));
    return g;
}

OperatorSpec problem(const YAML::Node& n, const std::string& path) {
    require_map(n, path);
    reject_unknown(n, path, {"horizon", "state_dim", "noise_dim", "ellipticity_lambda", "controls", "driver", "terminal"});
    OperatorSpec op;
    op.horizon = real(need(n, "horizon", path), join(path, "horizon"));
    if (!(op.horizon > 0.0)) fail(n["horizon"], join(path, "horizon"), "must be positive");
    op.state_dim = has(n, "state_dim") ? count(n["state_dim"], join(path, "state_dim")) : 1;
    op.noise_dim = has(n, "noise_dim") ? count(n["noise_dim"], join(path, "noise_dim")) : op.state_dim;
    if (op.state_dim < 1 || op.noise_dim < 1) fail(n, path, "state_dim and noise_dim must be >= 1");
    const YAML::Node cs = need(n, "controls", path);
    if (!cs.IsSequence() || cs.size() == 0) fail(cs, join(path, "controls"), "expected a nonempty list of controls");
    for (std::size_t j = 0; j < cs.size(); ++j)
        op.controls.push_back(control(cs[j], fmt::format("{}.controls[{}]", path, j), op.state_dim, op.noise_dim));
    op.driver = driver(n["driver"], join(path, "driver"), op.noise_dim);
    op.terminal = terminal(need(n, "terminal", path), join(path, "terminal"));
    try {
        op.validate();
    } catch (const InputError& e) {
        fail(n, path, e.what());
    }
    if (has(n, "ellipticity_lambda")) {
        op.ellipticity_lambda = real(n["ellipticity_lambda"], join(path, "ellipticity_lambda"));
        if (op.ellipticity_lambda < 0.0) fail(n["ellipticity_lambda"], join(path, "ellipticity_lambda"), "must be >= 0");
    } else {
        // the generator carries 1/2 <sigma sigma^T, S>
        op.ellipticity_lambda = 0.5 * sampled_min_diffusion_eigenvalue(op, 512, 0);
    }
    return op;
}

TestPoint test_point(const YAML::Node& n, const std::string& path, std::size_t N, bool allow_expectation) {
    require_map(n, path);
    if (allow_expectation)
        reject_unknown(n, path, {"t", "x", "expected", "tolerance"});
    else
        reject_unknown(n, path, {"t", "x"});
    TestPoint tp;
    tp.t = has(n, "t") ? real(n["t"], join(path, "t")) : 0.0;
    tp.x = vec(need(n, "x", path), join(path, "x"), N);
    if (has(n, "expected")) tp.expected = real(n["expected"], join(path, "expected"));
    if (has(n, "tolerance")) {
        const YAML::Node tol = n["tolerance"];
        if (tol.IsMap()) {
            for (const auto& kv : tol) {
                const auto key = kv.first.as<std::string>();
                if (key != "dpp" && key != "fd" && key != "policy_mc" && key != "default")
                    fail(kv.first, join(join(path, "tolerance"), key), "expected dpp, fd, policy_mc or default");
                const double v = real(kv.second, join(join(path, "tolerance"), key));
                if (key == "default")
                    tp.tolerance = v;
                else
                    tp.solver_tolerance[key] = v;
            }
        } else {
            tp.tolerance = real(tol, join(path, "tolerance"));
        }
    }
    return tp;
}

std::vector<std::string> name_list(const YAML::Node& n, const std::string& path, const std::set<std::string>& allowed) {
    std::vector<std::string> out;
    if (!n.IsDefined() || n.IsNull()) return out;
    if (!n.IsSequence()) fail(n, path, "expected a list");
    for (std::size_t i = 0; i < n.size(); ++i) {
        const auto s = scalar<std::string>(n[i], fmt::format("{}[{}]", path, i));
        if (!allowed.count(s)) {
            std::string names;
            for (const auto& a : allowed) names += (names.empty() ? "" : ", ") + a;
            fail(n[i], fmt::format("{}[{}]", path, i), fmt::format("unknown name '{}' (expected one of {})", s, names));
        }
        if (std::find(out.begin(), out.end(), s) != out.end()) fail(n[i], fmt::format("{}[{}]", path, i), "listed twice");
        out.push_back(s);
    }
    return out;
}

void validate_levels(const YAML::Node& n, const std::vector<Level>& levels) {
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const auto& l = levels[i];
        if (l.steps < 1) fail(n[i], fmt::format("levels[{}].K", i), "must be >= 1");
        if (!(l.h > 0.0)) fail(n[i], fmt::format("levels[{}].h", i), "must be positive");
        if (l.paths < 2) fail(n[i], fmt::format("levels[{}].P", i), "must be >= 2");
        if (l.fd_dt && !(*l.fd_dt > 0.0)) fail(n[i], fmt::format("levels[{}].fd_dt", i), "must be positive");
        if (i == 0) continue;
        const auto& p = levels[i - 1];
        const bool not_coarser = l.steps >= p.steps && l.h <= p.h && l.paths >= p.paths;
        const bool finer = l.steps > p.steps || l.h < p.h || l.paths > p.paths;
        if (!not_coarser || !finer)
            fail(n[i], fmt::format("levels[{}]", i), "refinement levels must be strictly ordered from coarse to fine");
    }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    YAML::Node loaded;
    try {
        loaded = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(e.msg, e.mark.is_null() ? -1 : e.mark.line + 1);
    }
    const YAML::Node root = loaded;
    if (!root.IsMap()) throw ConfigError("the config must be a section of key: value pairs", 1);
    reject_unknown(root, "",
                   {"name", "problem", "solvers", "domain", "fd_domain", "levels", "test_points", "checks", "seed",
                    "output", "dpp", "fd", "bsde", "assumption_samples", "regularity_radius", "residual_tolerance",
                    "table"});

    ExperimentConfig cfg;
    cfg.name = has(root, "name") ? scalar<std::string>(root["name"], "name") : "experiment";
    cfg.problem = problem(need(root, "problem", ""), "problem");
    const std::size_t N = cfg.problem.state_dim;

    cfg.solvers = name_list(root["solvers"], "solvers", {"dpp", "fd", "policy_mc"});

    if (has(root, "domain")) {
        const YAML::Node d = root["domain"];
        require_map(d, "domain");
        reject_unknown(d, "domain", {"lower", "upper"});
        cfg.lower = vec(need(d, "lower", "domain"), "domain.lower", N);
        cfg.upper = vec(need(d, "upper", "domain"), "domain.upper", N);
    } else {
        cfg.lower = Vector::Constant(static_cast<Eigen::Index>(N), -8.0);
        cfg.upper = Vector::Constant(static_cast<Eigen::Index>(N), 8.0);
    }
    if ((cfg.upper - cfg.lower).minCoeff() <= 0.0) fail(root["domain"], "domain", "need lower < upper on every axis");
    if (has(root, "fd_domain")) {
        const YAML::Node d = root["fd_domain"];
        require_map(d, "fd_domain");
        reject_unknown(d, "fd_domain", {"lower", "upper"});
        cfg.fd_lower = vec(need(d, "lower", "fd_domain"), "fd_domain.lower", N);
        cfg.fd_upper = vec(need(d, "upper", "fd_domain"), "fd_domain.upper", N);
        if ((cfg.fd_upper - cfg.fd_lower).minCoeff() <= 0.0) fail(d, "fd_domain", "need lower < upper on every axis");
    } else {
        cfg.fd_lower = cfg.lower;
        cfg.fd_upper = cfg.upper;
    }

    const YAML::Node lv = need(root, "levels", "");
    if (!lv.IsSequence() || lv.size() == 0) fail(lv, "levels", "expected a nonempty list of refinement levels");
    for (std::size_t i = 0; i < lv.size(); ++i) {
        const std::string path = fmt::format("levels[{}]", i);
        require_map(lv[i], path);
        reject_unknown(lv[i], path, {"K", "h", "P", "fd_dt"});
        Level l;
        if (has(lv[i], "K")) l.steps = count(lv[i]["K"], join(path, "K"));
        if (has(lv[i], "h")) l.h = real(lv[i]["h"], join(path, "h"));
        if (has(lv[i], "P")) l.paths = count(lv[i]["P"], join(path, "P"));
        if (has(lv[i], "fd_dt")) l.fd_dt = real(lv[i]["fd_dt"], join(path, "fd_dt"));
        cfg.levels.push_back(l);
    }
    validate_levels(lv, cfg.levels);

    if (has(root, "test_points")) {
        const YAML::Node tp = root["test_points"];
        if (!tp.IsSequence()) fail(tp, "test_points", "expected a list");
        for (std::size_t i = 0; i < tp.size(); ++i) {
            auto p = test_point(tp[i], fmt::format("test_points[{}]", i), N, true);
            if (p.t < 0.0 || p.t >= cfg.problem.horizon)
                fail(tp[i], fmt::format("test_points[{}].t", i), "must lie in [0, T)");
            cfg.test_points.push_back(std::move(p));
        }
    }

    std::set<std::string> check_names;
    for (const auto& c : known_checks()) check_names.insert(c.name);
    cfg.checks = name_list(root["checks"], "checks", check_names);

    if (has(root, "seed")) {
        const YAML::Node s = root["seed"];
        const auto str = s.IsScalar() ? s.Scalar() : std::string{};
        if (str.empty() || str.find_first_not_of("0123456789") != std::string::npos)
            fail(s, "seed", "expected an unsigned 64-bit integer");
        try {
            cfg.seed = std::stoull(str);
        } catch (const std::exception&) {
            fail(s, "seed", "expected an unsigned 64-bit integer");
        }
    }
    if (has(root, "output")) cfg.output_dir = scalar<std::string>(root["output"], "output");

    cfg.rule = ExpectationRule::defaults_for(cfg.problem);
    if (has(root, "dpp")) {
        const YAML::Node d = root["dpp"];
        require_map(d, "dpp");
        reject_unknown(d, "dpp", {"rule", "quad_nodes", "mc_samples"});
        if (has(d, "rule")) {
            const auto r = scalar<std::string>(d["rule"], "dpp.rule");
            if (r == "gauss_hermite")
                cfg.rule.kind = ExpectationRule::Kind::gauss_hermite;
            else if (r == "antithetic_mc")
                cfg.rule.kind = ExpectationRule::Kind::antithetic_mc;
            else
                fail(d["rule"], "dpp.rule", "expected gauss_hermite or antithetic_mc");
        }
        if (has(d, "quad_nodes")) cfg.rule.quad_nodes = count(d["quad_nodes"], "dpp.quad_nodes");
        if (has(d, "mc_samples")) cfg.rule.mc_samples = count(d["mc_samples"], "dpp.mc_samples");
        if (cfg.rule.quad_nodes < 1) fail(d, "dpp.quad_nodes", "must be >= 1");
        if (cfg.rule.mc_samples < 2) fail(d, "dpp.mc_samples", "must be >= 2");
    }
    if (has(root, "fd")) {
        const YAML::Node f = root["fd"];
        require_map(f, "fd");
        reject_unknown(f, "fd", {"cross_fallback"});
        if (has(f, "cross_fallback")) cfg.fd_cross_fallback = scalar<bool>(f["cross_fallback"], "fd.cross_fallback");
    }
    if (has(root, "bsde")) {
        const YAML::Node b = root["bsde"];
        require_map(b, "bsde");
        reject_unknown(b, "bsde", {"basis", "degree", "picard_iters"});
        if (has(b, "basis")) {
            const auto k = scalar<std::string>(b["basis"], "bsde.basis");
            if (k == "total_degree")
                cfg.bsde.basis.kind = RegressionBasis::Kind::total_degree;
            else if (k == "tensor")
                cfg.bsde.basis.kind = RegressionBasis::Kind::tensor;
            else
                fail(b["basis"], "bsde.basis", "expected total_degree or tensor");
        }
        if (has(b, "degree")) cfg.bsde.basis.degree = count(b["degree"], "bsde.degree");
        if (has(b, "picard_iters")) cfg.bsde.picard_iters = count(b["picard_iters"], "bsde.picard_iters");
        if (cfg.bsde.picard_iters < 1) fail(b, "bsde.picard_iters", "must be >= 1");
    }
    if (has(root, "assumption_samples")) {
        cfg.assumption_samples = count(root["assumption_samples"], "assumption_samples");
        if (cfg.assumption_samples < 1) fail(root["assumption_samples"], "assumption_samples", "must be >= 1");
    }
    if (has(root, "regularity_radius")) cfg.regularity_radius = real(root["regularity_radius"], "regularity_radius");
    if (has(root, "residual_tolerance")) cfg.residual_tolerance = real(root["residual_tolerance"], "residual_tolerance");

    if (has(root, "table")) {
        const YAML::Node t = root["table"];
        require_map(t, "table");
        reject_unknown(t, "table", {"kind", "point", "reference", "min_order"});
        TableSpec spec;
        const auto kind = scalar<std::string>(need(t, "kind", "table"), "table.kind");
        if (kind == "fd")
            spec.kind = TableSpec::Kind::fd;
        else if (kind == "dpp")
            spec.kind = TableSpec::Kind::dpp;
        else if (kind == "sde_strong")
            spec.kind = TableSpec::Kind::sde_strong;
        else if (kind == "bsde_zero_noise")
            spec.kind = TableSpec::Kind::bsde_zero_noise;
        else
            fail(t["kind"], "table.kind", "expected fd, dpp, sde_strong or bsde_zero_noise");
        spec.point = test_point(need(t, "point", "table"), "table.point", N, false);
        if (has(t, "reference")) spec.reference = real(t["reference"], "table.reference");
        if (has(t, "min_order")) spec.min_order = real(t["min_order"], "table.min_order");
        if (cfg.levels.size() < 3) fail(lv, "levels", "a convergence table needs at least 3 refinement levels");
        cfg.table = spec;
    }

    // cross-field requirements
    if (cfg.solvers.empty() && !cfg.table) fail(root, "solvers", "at least one solver is required");
    if (cfg.uses("policy_mc") && !cfg.uses("dpp")) fail(root["solvers"], "solvers", "policy_mc evaluates the dpp policy; add dpp");
    auto need_solver = [&](const char* check, const char* solver) {
        if (cfg.wants(check) && !cfg.uses(solver))
            fail(root["checks"], "checks", fmt::format("check '{}' needs the {} solver", check, solver));
    };
    need_solver("dpp_fd_agreement", "dpp");
    need_solver("dpp_fd_agreement", "fd");
    need_solver("envelope_dominance", "dpp");
    need_solver("dpp_consistency", "dpp");
    need_solver("policy_mc_agreement", "policy_mc");
    need_solver("residuals", "fd");
    for (const char* c : {"regularity", "growth"}) {
        if (cfg.wants(c) && !cfg.uses("dpp") && !cfg.uses("fd"))
            fail(root["checks"], "checks", fmt::format("check '{}' needs the dpp or fd solver", c));
        if (cfg.wants(c) && cfg.levels.size() < 2)
            fail(root["checks"], "checks", fmt::format("check '{}' needs at least two refinement levels", c));
    }
    if (cfg.wants("reference_value") &&
        std::none_of(cfg.test_points.begin(), cfg.test_points.end(), [](const TestPoint& p) { return p.expected.has_value(); }))
        fail(root["checks"], "checks", "check 'reference_value' needs a test point with an expected value");
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace nlfk
