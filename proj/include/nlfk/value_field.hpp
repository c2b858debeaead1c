#pragma once

#include "nlfk/model.hpp"
#include "nlfk/sde.hpp"

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <vector>

namespace nlfk {

/// Uniform box lattice in R^N; axis 0 varies fastest in the flat node index.
class SpaceGrid {
public:
    /// Spacing must divide each side length (to 1e-9 relative).
    SpaceGrid(Vector lower, Vector upper, Vector spacing);
    /// Same spacing on every axis.
    SpaceGrid(Vector lower, Vector upper, double spacing);

    std::size_t dims() const noexcept { return static_cast<std::size_t>(lower_.size()); }
    std::size_t node_count() const noexcept { return total_; }
    std::size_t count(std::size_t axis) const { return counts_[axis]; }
    const Vector& lower() const noexcept { return lower_; }
    const Vector& upper() const noexcept { return upper_; }
    const Vector& spacing() const noexcept { return spacing_; }

    Vector point(std::size_t node) const;
    std::vector<std::size_t> multi_index(std::size_t node) const;
    std::size_t flat_index(const std::vector<std::size_t>& idx) const;
    std::size_t nearest_node(const Vector& x) const;
    /// Distance from x to the closest face of the box (negative outside).
    double distance_to_boundary(const Vector& x) const;
    bool on_boundary(std::size_t node) const;

    bool operator==(const SpaceGrid& o) const;

private:
    Vector lower_, upper_, spacing_;
    std::vector<std::size_t> counts_;
    std::size_t total_ = 0;
};

struct BoundaryStats {
    std::uint64_t clamped_evaluations = 0;
    std::uint64_t total_evaluations = 0;
    double clamped_weight = 0.0;  // quadrature mass that fell outside the box
    double total_weight = 0.0;

    double contamination() const { return total_weight > 0.0 ? clamped_weight / total_weight : 0.0; }
    void merge(const BoundaryStats& o);
};

/// u(t_k, x_j) on a time grid times a space lattice, multilinear in space.
/// Optionally carries the argmax control per (k < K, node) and a standard
/// error field (Monte-Carlo expectation rules only).
class ValueField {
public:
    ValueField(TimeGrid grid, SpaceGrid space);

    const TimeGrid& grid() const noexcept { return grid_; }
    const SpaceGrid& space() const noexcept { return space_; }

    double& at(std::size_t k, std::size_t node) { return values_[k * space_.node_count() + node]; }
    double at(std::size_t k, std::size_t node) const { return values_[k * space_.node_count() + node]; }
    std::span<const double> slice(std::size_t k) const {
        return {values_.data() + k * space_.node_count(), space_.node_count()};
    }
    std::span<double> slice(std::size_t k) { return {values_.data() + k * space_.node_count(), space_.node_count()}; }

    /// Multilinear interpolation, clamped to the box. Sets *clamped when the
    /// point lay outside.
    double interpolate(std::size_t k, const Vector& x, bool* clamped = nullptr) const;
    /// Interpolation at (t, x) with t required to be a grid node.
    double value(double t, const Vector& x) const { return interpolate(grid_.index_of(t), x); }

    bool has_policy() const noexcept { return !argmax_.empty(); }
    std::uint32_t& argmax(std::size_t k, std::size_t node) { return argmax_[k * space_.node_count() + node]; }
    std::uint32_t argmax(std::size_t k, std::size_t node) const { return argmax_[k * space_.node_count() + node]; }
    void enable_policy() { argmax_.assign(grid_.steps() * space_.node_count(), 0); }

    bool has_stderr() const noexcept { return !stderr_.empty(); }
    double& stderr_at(std::size_t k, std::size_t node) { return stderr_[k * space_.node_count() + node]; }
    double stderr_at(std::size_t k, std::size_t node) const {
        return stderr_.empty() ? 0.0 : stderr_[k * space_.node_count() + node];
    }
    void enable_stderr() { stderr_.assign((grid_.steps() + 1) * space_.node_count(), 0.0); }
    double interpolate_stderr(std::size_t k, const Vector& x) const;

    const std::vector<double>& values() const noexcept { return values_; }

private:
    template <class Data>
    double interpolate_impl(const Data& data, std::size_t k, const Vector& x, bool* clamped) const;

    TimeGrid grid_;
    SpaceGrid space_;
    std::vector<double> values_;
    std::vector<std::uint32_t> argmax_;
    std::vector<double> stderr_;
};

/// Piecewise-constant Markov feedback read off a solved ValueField: the
/// control at (t_k, x) is the argmax at the node nearest x.
class FeedbackPolicy {
public:
    explicit FeedbackPolicy(const ValueField& field);

    std::size_t control_at(std::size_t k, const Vector& x) const;
    /// Adapter for simulation on `sim_grid`, whose nodes must be nodes of the
    /// policy grid.
    ControlPolicy as_control_policy(const TimeGrid& sim_grid) const;
    /// Same policy with every index replaced by `control`.
    static FeedbackPolicy constant(const ValueField& field, std::size_t control);

    const TimeGrid& grid() const noexcept { return grid_; }
    const SpaceGrid& space() const noexcept { return space_; }
    std::uint32_t index(std::size_t k, std::size_t node) const { return indices_[k * space_.node_count() + node]; }

private:
    TimeGrid grid_;
    SpaceGrid space_;
    std::vector<std::uint32_t> indices_;
};

/// CSV columns: step, time, x_1..x_N, value, argmax_index (-1 where undefined).
void write_value_field_csv(std::ostream& out, const ValueField& field);

}  // namespace nlfk
