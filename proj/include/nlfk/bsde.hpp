#pragma once

#include "nlfk/model.hpp"
#include "nlfk/sde.hpp"

#include <cstddef>
#include <functional>
#include <ostream>
#include <span>
#include <vector>

namespace nlfk {

/// Polynomial basis for per-slice least squares. States are standardized per
/// slice; axes with zero spread in a slice are dropped from the monomials.
/// The constant function is always included.
struct RegressionBasis {
    enum class Kind { total_degree, tensor };
    Kind kind = Kind::total_degree;
    std::size_t degree = 3;

    /// Exponent tuples for `dims` active axes.
    std::vector<std::vector<int>> exponents(std::size_t dims) const;
};

/// Least-squares fit of several responses on the basis evaluated at `states`
/// (rows = samples). Returns fitted values, one column per response. Throws
/// SolverError on a column-degenerate design.
Matrix regress(const Matrix& states, const Matrix& responses, const RegressionBasis& basis);

/// f evaluated along path p at step k.
using PathDriver =
    std::function<double(std::size_t p, std::size_t k, double t, const Vector& x, double y, const Vector& z)>;

/// f_{(b, sigma)} with (b, sigma) taken from the ensemble's control trace.
PathDriver controlled_driver(const OperatorSpec& op, const PathEnsemble& ensemble);

/// Wraps a driver so that it vanishes on and after each path's stopping step.
PathDriver stopped_driver(PathDriver inner, std::vector<std::size_t> stop_steps);

struct BsdeOptions {
    RegressionBasis basis;
    std::size_t picard_iters = 2;
};

struct BsdeSolution {
    TimeGrid grid;
    std::size_t paths = 0;
    std::size_t noise_dim = 0;
    std::vector<double> Y;  // [p][k], k = 0..K
    std::vector<double> Z;  // [p][k][m], k = 0..K (zero on the terminal slice)
    double y0_estimate = 0.0;
    double y0_stderr = 0.0;
    /// Largest change made by the last Picard pass, over all paths and steps.
    double picard_residual = 0.0;

    double y(std::size_t p, std::size_t k) const { return Y[p * (grid.steps() + 1) + k]; }
    std::span<const double> z(std::size_t p, std::size_t k) const {
        return {Z.data() + (p * (grid.steps() + 1) + k) * noise_dim, noise_dim};
    }
};

/// Backward Euler with regression-based conditional expectations:
/// Z_k = E[Y_{k+1} dW_k | X_k] / dt, Y_k = E[Y_{k+1} | X_k] + dt f(t_k, X_k, Ybar, Z_k).
/// Stopped and running paths are regressed separately.
BsdeSolution solve_bsde_lsmc(const PathEnsemble& ensemble, std::span<const double> terminal, const PathDriver& driver,
                             const BsdeOptions& options = {});

/// Backward explicit Euler for y' = -f(t, y), y(T) = terminal. Returns Y_0..Y_K.
std::vector<double> solve_bsde_zero_noise(double terminal, const std::function<double(double t, double y)>& driver,
                                          const TimeGrid& grid);

struct OrderingCheck {
    bool ordered = true;
    double worst_margin = 0.0;  // max of first - second (<= tol when ordered)
    std::size_t witness_path = 0;
    std::size_t witness_step = 0;
};

/// Y1 <= Y2 + tol on every path and step.
OrderingCheck check_bsde_comparison(const BsdeSolution& first, const BsdeSolution& second, double tol);

struct StoppedCheck {
    bool ok = true;
    double worst_y_deviation = 0.0;
    double worst_z = 0.0;
    std::size_t witness_path = 0;
    std::size_t witness_step = 0;
};

/// After each path's stopping step, Y stays at Y_tau and Z vanishes, within tol.
StoppedCheck check_stopped_bsde(const BsdeSolution& solution, std::span<const std::size_t> stop_steps, double tol);

/// CSV columns: path, step, Y, Z_1..Z_M.
void write_bsde_csv(std::ostream& out, const BsdeSolution& solution);

}  // namespace nlfk
