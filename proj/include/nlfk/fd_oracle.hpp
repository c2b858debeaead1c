#pragma once

#include "nlfk/model.hpp"
#include "nlfk/value_field.hpp"

#include <cstddef>

namespace nlfk {

/// Explicit monotone finite differences for du/dt + F(t, x, u, Du, D^2u) = 0:
/// central second differences, first differences upwinded per control by the
/// sign of its effective drift, boundary nodes filled by one-sided quadratic
/// extrapolation.
struct FdScheme {
    SpaceGrid space;
    double dt = 0.0;
    /// Allow non-diagonal sigma sigma^T through the plain central cross
    /// stencil (not monotone).
    bool cross_fallback = false;
};

/// Largest dt satisfying dt <= h^2 / (2 N max|ss^T| + h max|b| + h^2 |mu|),
/// with the maxima taken over lattice nodes, controls and t in {0, T/2, T}.
double fd_admissible_dt(const OperatorSpec& op, const SpaceGrid& space);

/// Validates the CFL condition; throws CflError naming the admissible dt.
FdScheme make_fd_scheme(const OperatorSpec& op, SpaceGrid space, double dt, bool cross_fallback = false);

/// Backward explicit march u_k = u_{k+1} + dt F(t_{k+1}, x, u_{k+1}, D_h u_{k+1}, D_h^2 u_{k+1}).
/// The time grid uses ceil(T / dt) steps (so the realized step is <= dt).
ValueField solve_fd(const OperatorSpec& op, const FdScheme& scheme);

struct ResidualReport {
    ValueField residual;  // zero on boundary nodes and the terminal slice
    double max_abs = 0.0;
    std::size_t max_step = 0;
    std::size_t max_node = 0;
};

/// r(t_k, x) = (u_{k+1} - u_k) / dt + F(t_k, x, u_k, D_h u_k, D_h^2 u_k) at interior nodes.
ResidualReport viscosity_residuals(const ValueField& u, const OperatorSpec& op);

struct FieldOrdering {
    bool ordered = true;
    double worst_margin = 0.0;  // max of u - v
    std::size_t witness_step = 0;
    std::size_t witness_node = 0;
};

/// u <= v + tol at every node and time.
FieldOrdering check_comparison_order(const ValueField& u, const ValueField& v, double tol);

}  // namespace nlfk
