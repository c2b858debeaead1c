#include "nlfk/bsde.hpp"

#include "nlfk/csv.hpp"
#include "nlfk/errors.hpp"
#include "nlfk/parallel.hpp"

#include <fmt/format.h>

#include <cmath>
#include <numeric>

namespace nlfk {

// ------------------------------------------------------------------ basis

std::vector<std::vector<int>> RegressionBasis::exponents(std::size_t dims) const {
    std::vector<std::vector<int>> out;
    std::vector<int> cur(dims, 0);
    const int d = static_cast<int>(degree);
    // odometer over [0, d]^dims, filtered for total degree when requested
    while (true) {
        const int total = std::accumulate(cur.begin(), cur.end(), 0);
        if (kind == Kind::tensor || total <= d) out.push_back(cur);
        std::size_t i = 0;
        while (i < dims && cur[i] == d) cur[i++] = 0;
        if (i == dims) break;
        ++cur[i];
    }
    if (out.empty()) out.emplace_back(dims, 0);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return std::accumulate(a.begin(), a.end(), 0) < std::accumulate(b.begin(), b.end(), 0);
    });
    return out;
}

Matrix regress(const Matrix& states, const Matrix& responses, const RegressionBasis& basis) {
    const Eigen::Index rows = states.rows();
    if (responses.rows() != rows) throw InputError("regress: state and response row counts differ");
    if (rows == 0) return Matrix(0, responses.cols());

    // per-slice standardization; flat axes are dropped
    std::vector<Eigen::Index> active;
    Vector mean = states.colwise().mean();
    Vector sd(states.cols());
    for (Eigen::Index i = 0; i < states.cols(); ++i) {
        sd(i) = std::sqrt((states.col(i).array() - mean(i)).square().mean());
        if (sd(i) > 1e-12 * (1.0 + std::abs(mean(i)))) active.push_back(i);
    }
    const auto exps = basis.exponents(active.size());
    const auto cols = static_cast<Eigen::Index>(exps.size());

    Matrix design(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            double v = 1.0;
            for (std::size_t a = 0; a < active.size(); ++a) {
                const Eigen::Index i = active[a];
                const double s = (states(r, i) - mean(i)) / sd(i);
                for (int e = 0; e < exps[static_cast<std::size_t>(c)][a]; ++e) v *= s;
            }
            design(r, c) = v;
        }
    }
    if (!design.allFinite()) throw NumericError("regress: non-finite design matrix");

    Eigen::ColPivHouseholderQR<Matrix> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < cols)
        throw SolverError(fmt::format("rank-deficient regression design ({} of {} columns independent over {} samples); "
                                      "lower the basis degree",
                                      qr.rank(), cols, rows));
    const Matrix coef = qr.solve(responses);
    return design * coef;
}

// ----------------------------------------------------------------- drivers

PathDriver controlled_driver(const OperatorSpec& op, const PathEnsemble& ensemble) {
    return [&op, &ensemble](std::size_t p, std::size_t k, double t, const Vector& x, double y, const Vector& z) {
        const auto& c = op.controls[ensemble.control(p, k)];
        const Vector b = c.b(t, x);
        const Matrix s = c.sigma(t, x);
        return op.driver(DriverArgs{t, x, b, s, y, z});
    };
}

PathDriver stopped_driver(PathDriver inner, std::vector<std::size_t> stop_steps) {
    return [inner = std::move(inner), stops = std::move(stop_steps)](std::size_t p, std::size_t k, double t,
                                                                      const Vector& x, double y, const Vector& z) {
        return k >= stops[p] ? 0.0 : inner(p, k, t, x, y, z);
    };
}

// ------------------------------------------------------------------ solver

BsdeSolution solve_bsde_lsmc(const PathEnsemble& e, std::span<const double> terminal, const PathDriver& driver,
                             const BsdeOptions& options) {
    if (!e.noise) throw InputError("solve_bsde_lsmc: ensemble has no noise store");
    if (terminal.size() != e.paths) throw InputError("solve_bsde_lsmc: one terminal value per path is required");
    if (options.picard_iters < 1) throw InputError("solve_bsde_lsmc: at least one Picard pass is required");
    for (std::size_t p = 0; p < e.paths; ++p)
        if (!std::isfinite(terminal[p])) throw InputError(fmt::format("solve_bsde_lsmc: non-finite terminal on path {}", p));

    const std::size_t P = e.paths;
    const std::size_t K = e.grid.steps();
    const std::size_t M = e.noise->noise_dim();
    const std::size_t N = e.state_dim;
    const double dt = e.grid.dt();

    BsdeSolution sol{e.grid, P, M};
    sol.Y.assign(P * (K + 1), 0.0);
    sol.Z.assign(P * (K + 1) * M, 0.0);
    for (std::size_t p = 0; p < P; ++p) sol.Y[p * (K + 1) + K] = terminal[p];

    std::vector<double> driver_sum(P, 0.0);  // sum_k dt f along each path, for the standard error
    const bool has_stops = !e.stop_steps.empty();

    for (std::size_t kk = K; kk-- > 0;) {
        const std::size_t k = kk;
        const double t = e.grid.node(k);

        std::vector<std::size_t> groups[2];
        for (std::size_t p = 0; p < P; ++p) groups[has_stops && e.stopped(p, k) ? 1 : 0].push_back(p);

        std::vector<double> cont(P), zhat(P * M);
        // Stopped paths are frozen with zero increments, so Y_{k+1} is already
        // known given X_k and Z vanishes.
        for (std::size_t p : groups[1]) cont[p] = sol.Y[p * (K + 1) + k + 1];
        if (!groups[0].empty()) {
            const auto& g = groups[0];
            const auto n = static_cast<Eigen::Index>(g.size());
            Matrix X(n, static_cast<Eigen::Index>(N));
            Matrix R(n, static_cast<Eigen::Index>(1 + M));
            parallel_for(g.size(), [&](std::size_t r) {
                const std::size_t p = g[r];
                const auto ri = static_cast<Eigen::Index>(r);
                const auto s = e.state(p, k);
                for (std::size_t i = 0; i < N; ++i) X(ri, static_cast<Eigen::Index>(i)) = s[i];
                const double ynext = sol.Y[p * (K + 1) + k + 1];
                const Vector dw = e.increment(p, k);
                R(ri, 0) = ynext;
                for (std::size_t m = 0; m < M; ++m) R(ri, static_cast<Eigen::Index>(1 + m)) = ynext * dw(static_cast<Eigen::Index>(m));
            });
            Matrix fitted;
            try {
                fitted = regress(X, R, options.basis);
            } catch (const SolverError& err) {
                throw SolverError(fmt::format("step {}: {}", k, err.what()));
            }
            for (Eigen::Index r = 0; r < n; ++r) {
                const std::size_t p = g[static_cast<std::size_t>(r)];
                cont[p] = fitted(r, 0);
                for (std::size_t m = 0; m < M; ++m) zhat[p * M + m] = fitted(r, static_cast<Eigen::Index>(1 + m)) / dt;
            }
        }

        std::vector<double> last_change(P, 0.0);
        parallel_for(P, [&](std::size_t p) {
            const Vector x = e.state_vector(p, k);
            const Vector z = Eigen::Map<const Vector>(zhat.data() + p * M, static_cast<Eigen::Index>(M));
            double ybar = cont[p];
            double fval = 0.0;
            for (std::size_t j = 0; j < options.picard_iters; ++j) {
                fval = driver(p, k, t, x, ybar, z);
                const double next = cont[p] + dt * fval;
                last_change[p] = std::abs(next - ybar);
                ybar = next;
            }
            if (!std::isfinite(ybar)) throw NumericError(fmt::format("solve_bsde_lsmc: non-finite Y at path {}, step {}", p, k));
            sol.Y[p * (K + 1) + k] = ybar;
            for (std::size_t m = 0; m < M; ++m) sol.Z[(p * (K + 1) + k) * M + m] = z(static_cast<Eigen::Index>(m));
            driver_sum[p] += dt * fval;
        });
        if (options.picard_iters > 1)
            sol.picard_residual = std::max(sol.picard_residual, *std::max_element(last_change.begin(), last_change.end()));
    }

    double mean = 0.0;
    for (std::size_t p = 0; p < P; ++p) mean += sol.Y[p * (K + 1)];
    sol.y0_estimate = mean / static_cast<double>(P);

    // spread of the pathwise representation xi + sum dt f
    std::vector<double> pathwise(P);
    for (std::size_t p = 0; p < P; ++p) pathwise[p] = terminal[p] + driver_sum[p];
    const double pm = std::accumulate(pathwise.begin(), pathwise.end(), 0.0) / static_cast<double>(P);
    double ss = 0.0;
    for (double v : pathwise) ss += (v - pm) * (v - pm);
    sol.y0_stderr = P > 1 ? std::sqrt(ss / static_cast<double>(P - 1) / static_cast<double>(P)) : 0.0;
    return sol;
}

std::vector<double> solve_bsde_zero_noise(double terminal, const std::function<double(double, double)>& driver,
                                          const TimeGrid& grid) {
    const std::size_t K = grid.steps();
    std::vector<double> y(K + 1);
    y[K] = terminal;
    for (std::size_t k = K; k-- > 0;) {
        y[k] = y[k + 1] + grid.dt() * driver(grid.node(k), y[k + 1]);
        if (!std::isfinite(y[k])) throw NumericError(fmt::format("solve_bsde_zero_noise: non-finite value at step {}", k));
    }
    return y;
}

// ------------------------------------------------------------- diagnostics

OrderingCheck check_bsde_comparison(const BsdeSolution& a, const BsdeSolution& b, double tol) {
    if (a.paths != b.paths || a.grid.steps() != b.grid.steps() || a.grid.dt() != b.grid.dt() ||
        a.grid.start() != b.grid.start())
        throw InputError("check_bsde_comparison: solutions live on different grids");
    OrderingCheck out;
    out.worst_margin = -std::numeric_limits<double>::infinity();
    const std::size_t K = a.grid.steps();
    for (std::size_t p = 0; p < a.paths; ++p) {
        for (std::size_t k = 0; k <= K; ++k) {
            const double margin = a.y(p, k) - b.y(p, k);
            if (margin > out.worst_margin) {
                out.worst_margin = margin;
                out.witness_path = p;
                out.witness_step = k;
            }
        }
    }
    out.ordered = out.worst_margin <= tol;
    return out;
}

StoppedCheck check_stopped_bsde(const BsdeSolution& sol, std::span<const std::size_t> stop_steps, double tol) {
    if (stop_steps.size() != sol.paths) throw InputError("check_stopped_bsde: one stopping step per path is required");
    StoppedCheck out;
    const std::size_t K = sol.grid.steps();
    double worst = 0.0;
    for (std::size_t p = 0; p < sol.paths; ++p) {
        const std::size_t tau = std::min(stop_steps[p], K);
        const double ytau = sol.y(p, tau);
        for (std::size_t k = tau; k <= K; ++k) {
            const double dy = std::abs(sol.y(p, k) - ytau);
            double dz = 0.0;
            if (k < K)
                for (double v : sol.z(p, k)) dz = std::max(dz, std::abs(v));
            out.worst_y_deviation = std::max(out.worst_y_deviation, dy);
            out.worst_z = std::max(out.worst_z, dz);
            if (std::max(dy, dz) > worst) {
                worst = std::max(dy, dz);
                out.witness_path = p;
                out.witness_step = k;
            }
        }
    }
    out.ok = worst <= tol;
    return out;
}

void write_bsde_csv(std::ostream& out, const BsdeSolution& sol) {
    std::vector<std::string> header{"path", "step", "Y"};
    for (std::size_t m = 0; m < sol.noise_dim; ++m) header.push_back(fmt::format("Z_{}", m + 1));
    csv::write_row(out, header);
    const std::size_t K = sol.grid.steps();
    for (std::size_t p = 0; p < sol.paths; ++p) {
        for (std::size_t k = 0; k <= K; ++k) {
            std::vector<std::string> row{std::to_string(p), std::to_string(k), csv::number(sol.y(p, k))};
            for (double v : sol.z(p, k)) row.push_back(csv::number(v));
            csv::write_row(out, row);
        }
    }
}

}  // namespace nlfk
