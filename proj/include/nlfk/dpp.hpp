#pragma once

#include "nlfk/bsde.hpp"
#include "nlfk/model.hpp"
#include "nlfk/sde.hpp"
#include "nlfk/value_field.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nlfk {

/// How the one-step Gaussian expectation is computed at each node.
struct ExpectationRule {
    enum class Kind { gauss_hermite, antithetic_mc };
    Kind kind = Kind::gauss_hermite;
    std::size_t quad_nodes = 8;     // per noise axis
    std::size_t mc_samples = 4096;  // total draws per node and control (pairs = half)
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    /// Gauss-Hermite with 8 nodes per axis for up to two noise axes,
    /// antithetic Monte Carlo with 4096 draws beyond that.
    static ExpectationRule defaults_for(const OperatorSpec& op);
};

/// Replaces g on the terminal slice (nodal values, optionally with standard errors).
struct TerminalOverride {
    std::vector<double> values;
    std::vector<double> stderr_values;
};

struct DppOptions {
    ExpectationRule rule;
    double contamination_warning = 0.01;
    std::optional<TerminalOverride> terminal;
};

struct DppResult {
    ValueField field;
    BoundaryStats boundary;
    std::vector<std::string> warnings;

    FeedbackPolicy policy() const { return FeedbackPolicy(field); }
};

/// Backward dynamic programming over the finite control family:
///   v_j(x) = E[u_{k+1}(x + b dt + sigma sqrt(dt) xi)] + dt f(t_k, x, b, sigma, ybar, z_j),
///   z_j = E[u_{k+1}(...) xi] / sqrt(dt),  ybar = the continuation expectation,
///   u_k(x) = max_j v_j(x), ties to the smallest index.
/// Off-lattice evaluations are clamped to the box and counted.
DppResult solve_value_dpp(const OperatorSpec& op, const TimeGrid& grid, const SpaceGrid& space,
                          const DppOptions& options = {});

/// Largest dt for which one backward step is order preserving in g
/// (1 / (2|mu|), infinite when mu = 0).
double dpp_monotone_dt_threshold(const OperatorSpec& op);

/// 3 sqrt(max eig(sigma sigma^T) * T) sampled over the lattice nodes: the
/// minimum distance between a test point and the box boundary.
double required_boundary_margin(const OperatorSpec& op, const SpaceGrid& space);

struct PolicyValue {
    double estimate = 0.0;
    double stderr_value = 0.0;
};

/// Forward simulation under a frozen feedback policy and the control-frozen
/// BSDE by regression; a lower-bound estimator of u(t0, x0).
PolicyValue evaluate_policy_value(const OperatorSpec& op, const FeedbackPolicy& policy, double t0, const Vector& x0,
                                  std::size_t paths, std::uint64_t seed, const BsdeOptions& bsde = {});

struct DppSolverConfig {
    std::size_t steps = 20;  // over [t0, T]
    SpaceGrid space;
    DppOptions options;
};

struct TwoStageResult {
    double direct = 0.0;
    double two_stage = 0.0;
    double combined_stderr = 0.0;
};

/// Solves on [t0, T] directly and again as [t_mid, T] followed by [t0, t_mid]
/// with terminal u(t_mid, .). Monte-Carlo rules draw independent streams for
/// the three solves.
TwoStageResult dpp_two_stage(const OperatorSpec& op, double t0, const Vector& x0, double t_mid,
                             const DppSolverConfig& config);

/// Pathwise extremes are dominated by regression error on sparse tail paths;
/// the path-averaged process E_p[K_k] is the quantity to hold to a tolerance.
struct GapReport {
    double min_increment = 0.0;       // min over p, k of K_{k+1} - K_k
    double max_abs_gap = 0.0;         // max over p, k of |K_k|
    double mean_min_increment = 0.0;  // min over k of E_p[K_{k+1} - K_k]
    double mean_max_abs_gap = 0.0;    // max over k of |E_p[K_k]|
    double terminal_gap_mean = 0.0;   // mean over p of K_K
    double terminal_gap_stderr = 0.0;
};

/// Gap process K_k = D_0 - D_k with D_k = u(t_k, X_k) - Y_k, along paths of
/// the frozen control and its own BSDE value Y. Non-decreasing up to
/// numerical error; K_K measures how far the frozen control is from optimal.
GapReport second_order_gap(const OperatorSpec& op, const ValueField& value, std::size_t frozen_control, double t0,
                           const Vector& x0, std::size_t paths, std::uint64_t seed, const BsdeOptions& bsde = {});

/// min over controls of the mean terminal gap; zero when the family attains the sup.
double minimal_gap(const OperatorSpec& op, const ValueField& value, double t0, const Vector& x0, std::size_t paths,
                   std::uint64_t seed, const BsdeOptions& bsde = {});

struct RegularityFit {
    double holder_t = 0.0;     // max |u(t,x)-u(s,x)| / (sqrt|t-s| (1+|x|))
    double lipschitz_x = 0.0;  // max |u(t,x)-u(t,x')| / |x-x'| over lattice neighbours
    double growth = 0.0;       // max u(t,x)^2 / (1+|x|^2)
};

/// Empirical regularity constants over nodes with |x|_inf <= radius, on the
/// time checkpoints 0, T/4, T/2, 3T/4, T of the field's grid.
RegularityFit fit_regularity(const ValueField& value, double radius);

}  // namespace nlfk
