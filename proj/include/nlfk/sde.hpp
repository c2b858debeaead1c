#pragma once

#include "nlfk/model.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <span>
#include <vector>

namespace nlfk {

/// Uniform time nodes origin + (first + k) * dt, k = 0..steps. Sub-grids keep
/// the parent's origin and step so their nodes are bit-identical to the parent's.
class TimeGrid {
public:
    TimeGrid(double t0, double T, std::size_t steps);
    static TimeGrid with_step(double origin, double dt, std::size_t first, std::size_t steps);

    double node(std::size_t k) const noexcept {
        return origin_ + static_cast<double>(first_ + k) * dt_;
    }
    double start() const noexcept { return node(0); }
    double end() const noexcept { return node(steps_); }
    double dt() const noexcept { return dt_; }
    std::size_t steps() const noexcept { return steps_; }

    /// Nodes k_begin..k_end of this grid as a grid of its own.
    TimeGrid subgrid(std::size_t k_begin, std::size_t k_end) const;
    /// Index of the node closest to t; throws InputError if t is not on the grid.
    std::size_t index_of(double t) const;

private:
    TimeGrid() = default;
    double origin_ = 0.0;
    double dt_ = 1.0;
    std::size_t first_ = 0;
    std::size_t steps_ = 1;
};

/// Brownian increments addressed by (path, step, component). Nothing is
/// stored; each increment is regenerated from the counter-based generator.
/// A coarsened store sums consecutive fine increments so that grids of
/// different resolution share the same Brownian path.
class NoiseStore {
public:
    NoiseStore(std::uint64_t seed, std::size_t paths, std::size_t steps, std::size_t noise_dim, double dt,
               std::uint64_t stream = 0);

    NoiseStore coarsened(std::size_t factor) const;

    void increment(std::size_t path, std::size_t step, std::span<double> out) const;
    Vector increment(std::size_t path, std::size_t step) const;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::size_t paths() const noexcept { return paths_; }
    std::size_t steps() const noexcept { return steps_; }
    std::size_t noise_dim() const noexcept { return noise_dim_; }
    double dt() const noexcept { return dt_; }
    std::size_t aggregation() const noexcept { return aggregation_; }

    bool operator==(const NoiseStore& o) const = default;

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::size_t paths_;
    std::size_t steps_;
    std::size_t noise_dim_;
    double dt_;
    std::size_t aggregation_ = 1;
};

/// Chooses the control index used on [t_k, t_{k+1}) from the current state.
using ControlPolicy = std::function<std::size_t(std::size_t step, const Vector& x)>;

ControlPolicy constant_policy(std::size_t control);

/// Forward paths X_k^(p), k = 0..K, with the control trace that generated them.
struct PathEnsemble {
    TimeGrid grid;
    std::size_t paths = 0;
    std::size_t state_dim = 0;
    std::vector<double> states;          // [p][k][i]
    std::vector<std::uint32_t> controls; // [p][k], k < K
    std::shared_ptr<const NoiseStore> noise;
    /// Per-path stopping step; empty means no stopping. Increments at or
    /// after the stopping step are reported as zero and states are frozen.
    std::vector<std::size_t> stop_steps;

    std::size_t steps() const noexcept { return grid.steps(); }
    std::span<const double> state(std::size_t p, std::size_t k) const {
        return {states.data() + (p * (grid.steps() + 1) + k) * state_dim, state_dim};
    }
    std::span<double> state(std::size_t p, std::size_t k) {
        return {states.data() + (p * (grid.steps() + 1) + k) * state_dim, state_dim};
    }
    Vector state_vector(std::size_t p, std::size_t k) const;
    std::size_t control(std::size_t p, std::size_t k) const { return controls[p * grid.steps() + k]; }
    bool stopped(std::size_t p, std::size_t k) const { return !stop_steps.empty() && k >= stop_steps[p]; }
    /// Driving increment for the step k -> k+1 of path p (zero once stopped).
    Vector increment(std::size_t p, std::size_t k) const;
};

/// Euler-Maruyama: X_{k+1} = X_k + sigma(t_k, X_k) dW_k + b(t_k, X_k) dt, with
/// (b, sigma) = op.controls[policy(k, X_k)]. x0 holds one point or one per path.
PathEnsemble simulate_forward(const ControlPolicy& policy, const OperatorSpec& op, const TimeGrid& grid,
                              const std::vector<Vector>& x0, std::shared_ptr<const NoiseStore> noise);

/// Re-simulates from step r onward on the ensemble's own increments.
PathEnsemble restart_flow(const PathEnsemble& ensemble, std::size_t restart_step, const OperatorSpec& op,
                          const ControlPolicy& policy);

/// Stops every path at the first grid node outside [lower, upper] (componentwise).
PathEnsemble stop_at_first_exit(const PathEnsemble& ensemble, const Vector& lower, const Vector& upper);

struct StrongOrderResult {
    double rate = 0.0;
    std::vector<double> dts;
    std::vector<double> errors;  // E|X_T^ref - X_T^level|
    /// All level errors sit at round-off: the scheme is exact on the coupled
    /// paths and the rate is reported as +infinity.
    bool exact = false;
};

/// Couples levels K_coarse * 2^l (l < levels) with a reference level
/// K_coarse * 2^levels on shared Brownian paths and fits the slope of
/// log E|X_T^ref - X_T^l| against log dt.
StrongOrderResult estimate_strong_order(const OperatorSpec& op, const ControlPolicy& policy, const Vector& x0,
                                        std::size_t coarse_steps, std::size_t levels, std::size_t paths,
                                        std::uint64_t seed);

/// Empirical stability constant: E sup_k |X_k - X'_k|^2 / |x0 - x0'|^2 on shared noise.
double initial_data_stability(const OperatorSpec& op, const ControlPolicy& policy, const TimeGrid& grid,
                              const Vector& x0, const Vector& x0_shifted, std::size_t paths, std::uint64_t seed);

/// CSV columns: path, step, time, x_1..x_N, control_index (-1 on the terminal row).
void write_ensemble_csv(std::ostream& out, const PathEnsemble& ensemble);

/// Least-squares slope of ys against xs.
double least_squares_slope(std::span<const double> xs, std::span<const double> ys);

}  // namespace nlfk
