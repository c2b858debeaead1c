#include "nlfk/model.hpp"

#include "nlfk/errors.hpp"
#include "nlfk/rng.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <vector>

namespace nlfk {

namespace {

struct Registry {
    std::map<std::string, FieldFn> fields;
    std::map<std::string, DriverFn> drivers;
    std::map<std::string, TerminalFn> terminals;
    std::mutex mutex;

    Registry() {
        auto& r = *this;
        r.fields["neg_state"] = [](double, const Vector& x) -> Matrix { return -x; };
        r.fields["sin_state"] = [](double, const Vector& x) -> Matrix { return x.array().sin().matrix(); };
        r.fields["state_diag"] = [](double, const Vector& x) -> Matrix { return x.asDiagonal(); };
        r.fields["bounded_vol"] = [](double, const Vector& x) -> Matrix {
            Vector d = (1.0 + 0.5 * x.array().sin()).matrix();
            return d.asDiagonal();
        };
        r.fields["time_vol"] = [](double t, const Vector& x) -> Matrix {
            return Matrix::Identity(x.size(), x.size()) * (1.0 + 0.5 * t);
        };

        r.drivers["y_squared"] = [](const DriverArgs& a) { return a.y * a.y; };
        r.drivers["neg_y_cubed"] = [](const DriverArgs& a) { return -a.y * a.y * a.y; };
        r.drivers["abs_z"] = [](const DriverArgs& a) { return a.z.norm(); };
        r.drivers["tanh_z"] = [](const DriverArgs& a) { return a.z.array().tanh().sum(); };
        r.drivers["discount_abs_z"] = [](const DriverArgs& a) { return -0.1 * a.y + 0.5 * a.z.norm(); };

        r.terminals["zero"] = [](const Vector&) { return 0.0; };
        r.terminals["first"] = [](const Vector& x) { return x(0); };
        r.terminals["sum"] = [](const Vector& x) { return x.sum(); };
        r.terminals["square_norm"] = [](const Vector& x) { return x.squaredNorm(); };
        r.terminals["norm"] = [](const Vector& x) { return x.norm(); };
        r.terminals["cos_first"] = [](const Vector& x) { return std::cos(x(0)); };
        r.terminals["abs_first"] = [](const Vector& x) { return std::abs(x(0)); };
        r.terminals["call_first"] = [](const Vector& x) { return std::max(x(0) - 1.0, 0.0); };
    }
};

Registry& registry() {
    static Registry reg;
    return reg;
}

template <class Map>
auto lookup(Map& map, const std::string& name, const char* what) {
    auto& reg = registry();
    std::scoped_lock lock(reg.mutex);
    auto it = map.find(name);
    if (it == map.end()) throw InputError(fmt::format("unknown {} function '{}'", what, name));
    return it->second;
}

template <class Map>
std::vector<std::string> keys(Map& map) {
    std::scoped_lock lock(registry().mutex);
    std::vector<std::string> out;
    for (const auto& [k, v] : map) out.push_back(k);
    return out;
}

std::string fmt_vec(const Vector& v) {
    return fmt::format("[{:.6g}]", fmt::join(std::vector<double>(v.data(), v.data() + v.size()), ", "));
}

bool exceeds(double observed, double declared) {
    return observed > declared + 1e-9 * std::max(1.0, std::abs(declared));
}

}  // namespace

FieldFn lookup_field(const std::string& name) { return lookup(registry().fields, name, "field"); }
DriverFn lookup_driver(const std::string& name) { return lookup(registry().drivers, name, "driver"); }
TerminalFn lookup_terminal(const std::string& name) { return lookup(registry().terminals, name, "terminal"); }
std::vector<std::string> registered_fields() { return keys(registry().fields); }
std::vector<std::string> registered_drivers() { return keys(registry().drivers); }
std::vector<std::string> registered_terminals() { return keys(registry().terminals); }

void register_field(const std::string& name, FieldFn fn) {
    std::scoped_lock lock(registry().mutex);
    registry().fields[name] = std::move(fn);
}
void register_driver(const std::string& name, DriverFn fn) {
    std::scoped_lock lock(registry().mutex);
    registry().drivers[name] = std::move(fn);
}
void register_terminal(const std::string& name, TerminalFn fn) {
    std::scoped_lock lock(registry().mutex);
    registry().terminals[name] = std::move(fn);
}

// ---------------------------------------------------------------- FieldSpec

FieldSpec FieldSpec::constant(Matrix value) {
    FieldSpec f;
    f.kind_ = Kind::constant;
    f.rows_ = value.rows();
    f.cols_ = value.cols();
    f.offset_ = std::move(value);
    return f;
}

FieldSpec FieldSpec::affine(Matrix offset, std::vector<Matrix> slopes) {
    for (const auto& s : slopes) {
        if (s.rows() != offset.rows() || s.cols() != offset.cols())
            throw InputError("affine field: slope shape differs from offset shape");
    }
    FieldSpec f;
    f.kind_ = Kind::affine;
    f.rows_ = offset.rows();
    f.cols_ = offset.cols();
    f.offset_ = std::move(offset);
    f.slopes_ = std::move(slopes);
    return f;
}

FieldSpec FieldSpec::affine_drift(const Matrix& A, const Vector& c) {
    if (A.rows() != c.size() || A.cols() != c.size()) throw InputError("affine drift: A must be N x N and c of size N");
    std::vector<Matrix> slopes;
    for (Eigen::Index l = 0; l < A.cols(); ++l) slopes.emplace_back(A.col(l));
    return affine(Matrix(c), std::move(slopes));
}

FieldSpec FieldSpec::named(const std::string& name, std::size_t rows, std::size_t cols) {
    FieldSpec f;
    f.kind_ = Kind::named;
    f.rows_ = rows;
    f.cols_ = cols;
    f.name_ = name;
    f.fn_ = lookup_field(name);
    const Matrix probe = f.fn_(0.0, Vector::Zero(static_cast<Eigen::Index>(rows)));
    if (static_cast<std::size_t>(probe.rows()) != rows || static_cast<std::size_t>(probe.cols()) != cols)
        throw InputError(fmt::format("field '{}' yields {}x{}, expected {}x{}", name, probe.rows(), probe.cols(),
                                     rows, cols));
    return f;
}

Matrix FieldSpec::operator()(double t, const Vector& x) const {
    switch (kind_) {
    case Kind::constant:
        return offset_;
    case Kind::affine: {
        if (static_cast<std::size_t>(x.size()) != slopes_.size())
            throw InputError("affine field evaluated at a point of the wrong dimension");
        Matrix v = offset_;
        for (std::size_t l = 0; l < slopes_.size(); ++l) v += x(static_cast<Eigen::Index>(l)) * slopes_[l];
        return v;
    }
    case Kind::named:
        return fn_(t, x);
    }
    return offset_;
}

double FieldSpec::affine_lipschitz() const {
    if (kind_ == Kind::constant) return 0.0;
    if (kind_ != Kind::affine) throw InputError("affine_lipschitz called on a named field");
    Matrix J(rows_ * cols_, slopes_.size());
    for (std::size_t l = 0; l < slopes_.size(); ++l)
        J.col(static_cast<Eigen::Index>(l)) = slopes_[l].reshaped();
    Eigen::JacobiSVD<Matrix> svd(J);
    return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

// --------------------------------------------------------------- DriverSpec

DriverSpec DriverSpec::zero() { return DriverSpec{}; }

DriverSpec DriverSpec::linear_in_y(double rate) {
    DriverSpec d = affine(0.0, rate, Vector());
    d.form_ = Form::linear_in_y;
    return d;
}

DriverSpec DriverSpec::linear_in_z(Vector lambda) {
    DriverSpec d = affine(0.0, 0.0, std::move(lambda));
    d.form_ = Form::linear_in_z;
    return d;
}

DriverSpec DriverSpec::affine(double offset, double rate, Vector lambda) {
    DriverSpec d;
    d.form_ = Form::affine;
    d.offset_ = offset;
    d.rate_ = rate;
    d.lambda_z_ = std::move(lambda);
    d.lipschitz_z = d.lambda_z_.size() ? d.lambda_z_.norm() : 0.0;
    d.monotonicity_mu = rate;
    return d;
}

DriverSpec DriverSpec::named(const std::string& name, double lipschitz_z, double monotonicity_mu) {
    DriverSpec d;
    d.form_ = Form::named;
    d.name_ = name;
    d.fn_ = lookup_driver(name);
    d.lipschitz_z = lipschitz_z;
    d.monotonicity_mu = monotonicity_mu;
    return d;
}

double DriverSpec::operator()(const DriverArgs& a) const {
    switch (form_) {
    case Form::zero:
        return 0.0;
    case Form::named:
        return fn_(a);
    default: {
        double v = offset_ + rate_ * a.y;
        if (lambda_z_.size()) {
            if (lambda_z_.size() != a.z.size()) throw InputError("driver lambda_z has the wrong dimension");
            v += lambda_z_.dot(a.z);
        }
        return v;
    }
    }
}

bool DriverSpec::depends_on_y() const noexcept {
    return form_ == Form::named || rate_ != 0.0;
}

bool DriverSpec::depends_on_z() const noexcept {
    return form_ == Form::named || (lambda_z_.size() && lambda_z_.cwiseAbs().maxCoeff() != 0.0);
}

// ------------------------------------------------------------- TerminalSpec

TerminalSpec TerminalSpec::named(const std::string& name, double scale, double shift) {
    TerminalSpec g;
    g.name_ = name;
    g.scale_ = scale;
    g.shift_ = shift;
    g.fn_ = lookup_terminal(name);
    return g;
}

TerminalSpec TerminalSpec::custom(std::string label, TerminalFn fn) {
    TerminalSpec g;
    g.name_ = std::move(label);
    g.fn_ = std::move(fn);
    return g;
}

TerminalSpec TerminalSpec::shifted(double c) const {
    TerminalSpec g = *this;
    g.shift_ += c;
    return g;
}

// ------------------------------------------------------------- OperatorSpec

void OperatorSpec::validate() const {
    if (controls.empty()) throw InputError("operator: control family is empty");
    if (state_dim < 1 || noise_dim < 1) throw InputError("operator: dimensions must be >= 1");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InputError("operator: horizon must be positive");
    if (ellipticity_lambda < 0.0) throw InputError("operator: ellipticity lambda must be >= 0");
    for (std::size_t j = 0; j < controls.size(); ++j) {
        const auto& c = controls[j];
        if (c.drift.rows() != state_dim || c.drift.cols() != 1)
            throw InputError(fmt::format("control {}: drift must be {}x1, got {}x{}", j, state_dim, c.drift.rows(),
                                         c.drift.cols()));
        if (c.diffusion.rows() != state_dim || c.diffusion.cols() != noise_dim)
            throw InputError(fmt::format("control {}: diffusion must be {}x{}, got {}x{}", j, state_dim, noise_dim,
                                         c.diffusion.rows(), c.diffusion.cols()));
        if (c.lipschitz_bound < 0.0) throw InputError(fmt::format("control {}: negative lipschitz bound", j));
    }
    if (driver.lambda_z().size() && static_cast<std::size_t>(driver.lambda_z().size()) != noise_dim)
        throw InputError("operator: driver lambda_z must have one entry per noise dimension");
}

// --------------------------------------------------------------- operators

double eval_generator(const CoefficientField& ctrl, const DriverSpec& driver, double t, const Vector& x, double y,
                      const Vector& p, const Matrix& S) {
    const Vector b = ctrl.b(t, x);
    const Matrix sigma = ctrl.sigma(t, x);
    const auto n = sigma.rows();
    if (x.size() != n || p.size() != n || S.rows() != n || S.cols() != n || b.size() != n)
        throw InputError("eval_generator: dimension mismatch");
    if ((S - S.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + S.cwiseAbs().maxCoeff()))
        throw InputError("eval_generator: S is not symmetric");
    const Vector z = sigma.transpose() * p;
    const double second = 0.5 * (sigma * sigma.transpose()).cwiseProduct(S).sum();
    const double value = second + p.dot(b) + driver(DriverArgs{t, x, b, sigma, y, z});
    if (!std::isfinite(value)) throw NumericError("eval_generator: non-finite value");
    return value;
}

EnvelopeValue eval_F(const OperatorSpec& op, double t, const Vector& x, double y, const Vector& p, const Matrix& S) {
    EnvelopeValue best{-std::numeric_limits<double>::infinity(), 0};
    for (std::size_t j = 0; j < op.controls.size(); ++j) {
        const double v = eval_generator(op.controls[j], op.driver, t, x, y, p, S);
        if (v > best.value) best = {v, j};
    }
    return best;
}

// -------------------------------------------------------------- validation

std::size_t AssumptionReport::violation_count() const {
    return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](const auto& c) { return c.violated; }));
}

const BoundCheck* AssumptionReport::find(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

namespace {

Vector sample_point(SampleStream& rng, std::size_t n, double radius) {
    Vector x(static_cast<Eigen::Index>(n));
    for (auto& v : x) v = rng.uniform(-radius, radius);
    return x;
}

Matrix sample_symmetric(SampleStream& rng, std::size_t n, double scale) {
    Matrix A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j) A(i, j) = scale * rng.normal();
    return 0.5 * (A + A.transpose());
}

double min_eigenvalue(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

}  // namespace

double sampled_min_diffusion_eigenvalue(const OperatorSpec& op, std::size_t sample_count, std::uint64_t seed,
                                        const SamplingBox& box) {
    SampleStream rng(seed, 0x5eed0001);
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < sample_count; ++s) {
        const double t = rng.uniform(0.0, op.horizon);
        const Vector x = sample_point(rng, op.state_dim, box.radius);
        for (const auto& c : op.controls) {
            const Matrix sig = c.sigma(t, x);
            lo = std::min(lo, min_eigenvalue(sig * sig.transpose()));
        }
    }
    return std::max(lo, 0.0);
}

AssumptionReport validate_assumptions(const OperatorSpec& op, std::size_t sample_count, std::uint64_t seed,
                                      const SamplingBox& box) {
    op.validate();
    if (sample_count < 1) throw InputError("validate_assumptions: sample_count must be >= 1");

    SampleStream rng(seed, 0xa55e);
    const std::size_t n = op.state_dim;
    const std::size_t m = op.noise_dim;
    const std::size_t nc = op.controls.size();

    std::vector<BoundCheck> drift_lip(nc), diff_lip(nc);
    for (std::size_t j = 0; j < nc; ++j) {
        drift_lip[j] = {fmt::format("control[{}].drift_lipschitz", j), op.controls[j].lipschitz_bound};
        diff_lip[j] = {fmt::format("control[{}].diffusion_lipschitz", j), op.controls[j].lipschitz_bound};
    }
    BoundCheck bounded{"local_equiboundedness", 0.0};
    bounded.certified = false;
    BoundCheck equicont{"equicontinuity_modulus", 0.0};
    equicont.certified = false;
    BoundCheck zlip{"driver_lipschitz_z", op.driver.lipschitz_z};
    BoundCheck mono{"driver_monotonicity", op.driver.monotonicity_mu};
    mono.observed = -std::numeric_limits<double>::infinity();
    BoundCheck glip{"terminal_lipschitz", op.terminal.lipschitz_bound};
    BoundCheck ggrowth{"terminal_growth", op.terminal.growth_bound};
    BoundCheck ellip{"ellipticity", op.ellipticity_lambda};
    double min_eig = std::numeric_limits<double>::infinity();

    auto record = [](BoundCheck& c, double ratio, auto&& witness) {
        if (!std::isfinite(ratio)) {
            c.violated = true;
            c.observed = ratio;
            c.witness = witness();
            return;
        }
        if (ratio > c.observed) {
            c.observed = ratio;
            if (c.certified && exceeds(ratio, c.declared)) {
                c.violated = true;
                c.witness = witness();
            }
        }
    };

    for (std::size_t s = 0; s < sample_count; ++s) {
        const double t = rng.uniform(0.0, op.horizon);
        const Vector x = sample_point(rng, n, box.radius);
        const Vector x2 = sample_point(rng, n, box.radius);
        const double dx = (x - x2).norm();
        // small perturbation for the equicontinuity modulus
        const double dt_small = 1e-3 * rng.uniform();
        Vector x_near = x;
        for (auto& v : x_near) v += 1e-3 * (rng.uniform() - 0.5);
        const double t_near = std::min(op.horizon, t + dt_small);
        const double near_dist = std::abs(t_near - t) + (x_near - x).norm();

        double sup_bs = 0.0;
        double worst_mod = 0.0;
        for (std::size_t j = 0; j < nc; ++j) {
            const auto& c = op.controls[j];
            const Vector b1 = c.b(t, x), b2 = c.b(t, x2);
            const Matrix s1 = c.sigma(t, x), s2 = c.sigma(t, x2);
            if (dx > 0.0) {
                auto wit = [&] { return fmt::format("t={:.6g}, x={}, x'={}", t, fmt_vec(x), fmt_vec(x2)); };
                record(drift_lip[j], (b1 - b2).norm() / dx, wit);
                record(diff_lip[j], (s1 - s2).norm() / dx, wit);
            }
            sup_bs = std::max(sup_bs, b1.norm() + s1.norm());
            if (near_dist > 0.0) {
                const double d = (c.b(t_near, x_near) - b1).norm() + (c.sigma(t_near, x_near) - s1).norm();
                worst_mod = std::max(worst_mod, d / near_dist);
            }
            const Matrix a = s1 * s1.transpose();
            min_eig = std::min(min_eig, min_eigenvalue(a));

            // driver samples use this control's (b, sigma)
            const double y = rng.uniform(-box.y_radius, box.y_radius);
            const double y2 = rng.uniform(-box.y_radius, box.y_radius);
            Vector z(static_cast<Eigen::Index>(m)), z2(static_cast<Eigen::Index>(m));
            for (auto& v : z) v = rng.uniform(-box.z_radius, box.z_radius);
            for (auto& v : z2) v = rng.uniform(-box.z_radius, box.z_radius);
            const double fz1 = op.driver(DriverArgs{t, x, b1, s1, y, z});
            const double fz2 = op.driver(DriverArgs{t, x, b1, s1, y, z2});
            const double dz = (z - z2).norm();
            if (dz > 0.0) {
                record(zlip, std::abs(fz1 - fz2) / dz, [&] {
                    return fmt::format("t={:.6g}, x={}, y={:.6g}, z={}, z'={}", t, fmt_vec(x), y, fmt_vec(z),
                                       fmt_vec(z2));
                });
            }
            const double fy2 = op.driver(DriverArgs{t, x, b1, s1, y2, z});
            const double dy = y - y2;
            if (dy != 0.0) {
                record(mono, (dy * (fz1 - fy2)) / (dy * dy), [&] {
                    return fmt::format("t={:.6g}, x={}, y={:.6g}, y'={:.6g}, z={}", t, fmt_vec(x), y, y2, fmt_vec(z));
                });
            }
        }
        record(bounded, sup_bs, [] { return std::string{}; });
        record(equicont, worst_mod, [] { return std::string{}; });

        const double g1 = op.terminal(x), g2 = op.terminal(x2);
        if (dx > 0.0) {
            record(glip, std::abs(g1 - g2) / dx,
                   [&] { return fmt::format("x={}, x'={}", fmt_vec(x), fmt_vec(x2)); });
        }
        record(ggrowth, std::abs(g1) / (1.0 + x.norm()), [&] { return fmt::format("x={}", fmt_vec(x)); });
    }

    // F gains 1/2 <sigma sigma^T, P> >= lambda |P| for unit P >= 0
    ellip.observed = 0.5 * min_eig;
    if (op.ellipticity_lambda > ellip.observed + 1e-12) {
        ellip.violated = true;
        ellip.witness = fmt::format("sampled min eigenvalue of sigma sigma^T is {:.6g}, so lambda <= {:.6g}", min_eig,
                                    ellip.observed);
    }

    AssumptionReport report;
    for (auto& c : drift_lip) report.checks.push_back(std::move(c));
    for (auto& c : diff_lip) report.checks.push_back(std::move(c));
    report.checks.push_back(std::move(bounded));
    report.checks.push_back(std::move(equicont));
    report.checks.push_back(std::move(zlip));
    report.checks.push_back(std::move(mono));
    report.checks.push_back(std::move(glip));
    report.checks.push_back(std::move(ggrowth));
    report.checks.push_back(std::move(ellip));
    report.min_diffusion_eigenvalue = min_eig;
    return report;
}

ComparisonStructureReport check_comparison_structure(const OperatorSpec& op, std::size_t sample_count,
                                                     std::uint64_t seed, const SamplingBox& box) {
    op.validate();
    SampleStream rng(seed, 0xc0c0);
    const std::size_t n = op.state_dim;
    const auto ni = static_cast<Eigen::Index>(n);
    ComparisonStructureReport rep;
    rep.worst_monotonicity_excess = -std::numeric_limits<double>::infinity();
    rep.worst_second_order_excess = -std::numeric_limits<double>::infinity();

    const Matrix I = Matrix::Identity(ni, ni);
    Matrix upper(2 * ni, 2 * ni);
    upper << I, -I, -I, I;

    for (std::size_t s = 0; s < sample_count; ++s) {
        const double t = rng.uniform(0.0, op.horizon);
        const Vector x = sample_point(rng, n, box.radius);
        const Vector p = sample_point(rng, n, box.z_radius);
        const Matrix S = sample_symmetric(rng, n, 1.0);
        const double r = rng.uniform(-box.y_radius, box.y_radius);
        const double r2 = rng.uniform(-box.y_radius, box.y_radius);
        const double gap = (eval_F(op, t, x, r, p, S).value - eval_F(op, t, x, r2, p, S).value) * (r - r2);
        rep.worst_monotonicity_excess =
            std::max(rep.worst_monotonicity_excess, gap - op.driver.monotonicity_mu * (r - r2) * (r - r2));

        // (S, S') pairs satisfying the doubled-variables block inequality, by rejection.
        for (int attempt = 0; attempt < 200; ++attempt) {
            const double alpha = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
            const Matrix Sa = sample_symmetric(rng, n, 2.0 * alpha);
            const Matrix Sb = sample_symmetric(rng, n, 2.0 * alpha);
            Matrix block = Matrix::Zero(2 * ni, 2 * ni);
            block.topLeftCorner(ni, ni) = Sa;
            block.bottomRightCorner(ni, ni) = -Sb;
            const bool lower_ok = min_eigenvalue(block + 3.0 * alpha * Matrix::Identity(2 * ni, 2 * ni)) >= 0.0;
            const bool upper_ok = min_eigenvalue(3.0 * alpha * upper - block) >= 0.0;
            if (!lower_ok || !upper_ok) continue;
            ++rep.accepted_pairs;
            const Vector y = sample_point(rng, n, box.radius);
            const double d2 = (x - y).squaredNorm();
            for (const auto& c : op.controls) {
                const Matrix sx = c.sigma(t, x), sy = c.sigma(t, y);
                const double lhs =
                    (sx * sx.transpose()).cwiseProduct(Sa).sum() - (sy * sy.transpose()).cwiseProduct(Sb).sum();
                const double bound = 3.0 * alpha * c.lipschitz_bound * c.lipschitz_bound * d2;
                rep.worst_second_order_excess = std::max(rep.worst_second_order_excess, lhs - bound);
            }
            break;
        }
    }
    return rep;
}

}  // namespace nlfk
