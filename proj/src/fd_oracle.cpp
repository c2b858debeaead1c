#include "nlfk/fd_oracle.hpp"

#include "nlfk/errors.hpp"
#include "nlfk/parallel.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace nlfk {

namespace {

std::vector<std::size_t> strides(const SpaceGrid& space) {
    std::vector<std::size_t> s(space.dims());
    std::size_t acc = 1;
    for (std::size_t i = 0; i < space.dims(); ++i) {
        s[i] = acc;
        acc *= space.count(i);
    }
    return s;
}

bool has_cross_diffusion(const OperatorSpec& op, const SpaceGrid& space) {
    if (op.state_dim < 2) return false;
    for (std::size_t j = 0; j < space.node_count(); ++j) {
        const Vector x = space.point(j);
        for (double t : {0.0, 0.5 * op.horizon, op.horizon}) {
            for (const auto& c : op.controls) {
                const Matrix s = c.sigma(t, x);
                const Matrix a = s * s.transpose();
                const double scale = a.cwiseAbs().maxCoeff();
                for (Eigen::Index r = 0; r < a.rows(); ++r)
                    for (Eigen::Index q = 0; q < a.cols(); ++q)
                        if (r != q && std::abs(a(r, q)) > 1e-12 * (1.0 + scale)) return true;
            }
        }
    }
    return false;
}

// Drift that multiplies the first-order term, including a linear z-coupling
// of affine drivers (z = sigma^T p contributes sigma lambda_z).
Vector effective_drift(const OperatorSpec& op, const CoefficientField& c, double t, const Vector& x) {
    Vector b = c.b(t, x);
    if (op.driver.form() != DriverSpec::Form::named && op.driver.lambda_z().size())
        b += c.sigma(t, x) * op.driver.lambda_z();
    return b;
}

struct Derivatives {
    Vector forward, backward;
    Matrix hessian;
};

Derivatives derivatives(const SpaceGrid& space, const std::vector<std::size_t>& stride, std::span<const double> u,
                        std::size_t node, bool cross) {
    const std::size_t n = space.dims();
    const auto ni = static_cast<Eigen::Index>(n);
    Derivatives d{Vector(ni), Vector(ni), Matrix::Zero(ni, ni)};
    const double centre = u[node];
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double h = space.spacing()(ii);
        const double up = u[node + stride[i]];
        const double dn = u[node - stride[i]];
        d.forward(ii) = (up - centre) / h;
        d.backward(ii) = (centre - dn) / h;
        d.hessian(ii, ii) = (up - 2.0 * centre + dn) / (h * h);
    }
    if (cross) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t l = i + 1; l < n; ++l) {
                const auto ii = static_cast<Eigen::Index>(i);
                const auto li = static_cast<Eigen::Index>(l);
                const double v = (u[node + stride[i] + stride[l]] - u[node + stride[i] - stride[l]] -
                                  u[node - stride[i] + stride[l]] + u[node - stride[i] - stride[l]]) /
                                 (4.0 * space.spacing()(ii) * space.spacing()(li));
                d.hessian(ii, li) = d.hessian(li, ii) = v;
            }
        }
    }
    return d;
}

// max over controls of the generator with per-control upwinded gradient
double discrete_F(const OperatorSpec& op, double t, const Vector& x, double y, const Derivatives& d) {
    double best = -std::numeric_limits<double>::infinity();
    Vector p(d.forward.size());
    for (const auto& c : op.controls) {
        const Vector e = effective_drift(op, c, t, x);
        for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = e(i) >= 0.0 ? d.forward(i) : d.backward(i);
        best = std::max(best, eval_generator(c, op.driver, t, x, y, p, d.hessian));
    }
    return best;
}

void extrapolate_boundary(const SpaceGrid& space, const std::vector<std::size_t>& stride, std::span<double> u) {
    const std::size_t n = space.dims();
    for (std::size_t a = 0; a < n; ++a) {
        const std::size_t last = space.count(a) - 1;
        for (std::size_t j = 0; j < space.node_count(); ++j) {
            const auto idx = space.multi_index(j);
            if (idx[a] != 0 && idx[a] != last) continue;
            bool later_interior = true;
            for (std::size_t b = a + 1; b < n; ++b) later_interior = later_interior && idx[b] != 0 && idx[b] + 1 != space.count(b);
            if (!later_interior) continue;
            const std::size_t s = stride[a];
            if (idx[a] == 0)
                u[j] = 3.0 * u[j + s] - 3.0 * u[j + 2 * s] + u[j + 3 * s];
            else
                u[j] = 3.0 * u[j - s] - 3.0 * u[j - 2 * s] + u[j - 3 * s];
        }
    }
}

}  // namespace

double fd_admissible_dt(const OperatorSpec& op, const SpaceGrid& space) {
    op.validate();
    double max_a = 0.0, max_b = 0.0;
    for (std::size_t j = 0; j < space.node_count(); ++j) {
        const Vector x = space.point(j);
        for (double t : {0.0, 0.5 * op.horizon, op.horizon}) {
            for (const auto& c : op.controls) {
                const Matrix s = c.sigma(t, x);
                max_a = std::max(max_a, (s * s.transpose()).cwiseAbs().maxCoeff());
                max_b = std::max(max_b, effective_drift(op, c, t, x).norm());
            }
        }
    }
    const double h = space.spacing().minCoeff();
    const double denom = 2.0 * static_cast<double>(space.dims()) * max_a + h * max_b +
                         h * h * std::abs(op.driver.monotonicity_mu);
    return denom > 0.0 ? h * h / denom : std::numeric_limits<double>::infinity();
}

FdScheme make_fd_scheme(const OperatorSpec& op, SpaceGrid space, double dt, bool cross_fallback) {
    if (space.dims() != op.state_dim) throw InputError("fd scheme: lattice dimension differs from operator");
    for (std::size_t i = 0; i < space.dims(); ++i)
        if (space.count(i) < 4) throw InputError("fd scheme: each axis needs at least 4 nodes");
    if (!(dt > 0.0)) throw InputError("fd scheme: dt must be positive");
    const double admissible = fd_admissible_dt(op, space);
    if (dt > admissible * (1.0 + 1e-12))
        throw CflError(fmt::format("CFL condition violated: dt={:.6g} exceeds the admissible dt={:.6g} for h={:.6g}", dt,
                                   admissible, space.spacing().minCoeff()),
                       admissible);
    if (!cross_fallback && has_cross_diffusion(op, space))
        throw SolverError("fd scheme: sigma sigma^T is not diagonal; enable the cross-derivative fallback explicitly");
    return FdScheme{std::move(space), dt, cross_fallback};
}

ValueField solve_fd(const OperatorSpec& op, const FdScheme& scheme) {
    const auto steps = static_cast<std::size_t>(std::ceil(op.horizon / scheme.dt - 1e-9));
    const TimeGrid grid(0.0, op.horizon, std::max<std::size_t>(1, steps));
    ValueField u(grid, scheme.space);
    const auto& space = scheme.space;
    const auto stride = strides(space);
    const std::size_t K = grid.steps();
    const double dt = grid.dt();

    std::vector<std::size_t> interior;
    for (std::size_t j = 0; j < space.node_count(); ++j)
        if (!space.on_boundary(j)) interior.push_back(j);

    for (std::size_t j = 0; j < space.node_count(); ++j) u.at(K, j) = op.terminal(space.point(j));
    for (std::size_t k = K; k-- > 0;) {
        const double t = grid.node(k + 1);
        const auto next = std::as_const(u).slice(k + 1);
        auto cur = u.slice(k);
        parallel_for(interior.size(), [&](std::size_t r) {
            const std::size_t j = interior[r];
            const Vector x = space.point(j);
            const auto d = derivatives(space, stride, next, j, scheme.cross_fallback);
            const double v = next[j] + dt * discrete_F(op, t, x, next[j], d);
            if (!std::isfinite(v)) throw NumericError(fmt::format("solve_fd: non-finite value at step {}, node {}", k, j));
            cur[j] = v;
        });
        extrapolate_boundary(space, stride, cur);
    }
    return u;
}

ResidualReport viscosity_residuals(const ValueField& u, const OperatorSpec& op) {
    const auto& space = u.space();
    const auto& grid = u.grid();
    const auto stride = strides(space);
    const bool cross = has_cross_diffusion(op, space);
    ResidualReport rep{ValueField(grid, space)};
    const std::size_t K = grid.steps();
    for (std::size_t k = 0; k < K; ++k) {
        const double t = grid.node(k);
        const auto cur = u.slice(k);
        const auto next = u.slice(k + 1);
        for (std::size_t j = 0; j < space.node_count(); ++j) {
            if (space.on_boundary(j)) continue;
            const Vector x = space.point(j);
            const auto d = derivatives(space, stride, cur, j, cross);
            const double r = (next[j] - cur[j]) / grid.dt() + discrete_F(op, t, x, cur[j], d);
            rep.residual.at(k, j) = r;
            if (std::abs(r) > rep.max_abs) {
                rep.max_abs = std::abs(r);
                rep.max_step = k;
                rep.max_node = j;
            }
        }
    }
    return rep;
}

FieldOrdering check_comparison_order(const ValueField& u, const ValueField& v, double tol) {
    if (!(u.space() == v.space()) || u.grid().steps() != v.grid().steps() || u.grid().dt() != v.grid().dt())
        throw InputError("check_comparison_order: fields live on different grids");
    FieldOrdering out;
    out.worst_margin = -std::numeric_limits<double>::infinity();
    const auto& a = u.values();
    const auto& b = v.values();
    const std::size_t nodes = u.space().node_count();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double m = a[i] - b[i];
        if (m > out.worst_margin) {
            out.worst_margin = m;
            out.witness_step = i / nodes;
            out.witness_node = i % nodes;
        }
    }
    out.ordered = out.worst_margin <= tol;
    return out;
}

}  // namespace nlfk
