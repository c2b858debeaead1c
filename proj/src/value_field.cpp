#include "nlfk/value_field.hpp"

#include "nlfk/csv.hpp"
#include "nlfk/errors.hpp"

#include <fmt/format.h>

#include <array>
#include <cmath>
#include <memory>

namespace nlfk {

// --------------------------------------------------------------- SpaceGrid

SpaceGrid::SpaceGrid(Vector lower, Vector upper, Vector spacing)
    : lower_(std::move(lower)), upper_(std::move(upper)), spacing_(std::move(spacing)) {
    if (lower_.size() < 1 || lower_.size() != upper_.size() || lower_.size() != spacing_.size())
        throw InputError("space grid: bounds and spacing must share a dimension >= 1");
    total_ = 1;
    for (Eigen::Index i = 0; i < lower_.size(); ++i) {
        const double len = upper_(i) - lower_(i);
        if (!(len > 0.0) || !(spacing_(i) > 0.0)) throw InputError("space grid: need lower < upper and spacing > 0");
        const double cells = len / spacing_(i);
        const double rounded = std::round(cells);
        if (rounded < 1.0 || std::abs(cells - rounded) > 1e-9 * std::max(1.0, cells))
            throw InputError(fmt::format("space grid: spacing {} does not divide [{}, {}]", spacing_(i), lower_(i), upper_(i)));
        spacing_(i) = len / rounded;
        counts_.push_back(static_cast<std::size_t>(rounded) + 1);
        total_ *= counts_.back();
    }
}

SpaceGrid::SpaceGrid(Vector lower, Vector upper, double spacing)
    : SpaceGrid(lower, upper, Vector::Constant(lower.size(), spacing)) {}

Vector SpaceGrid::point(std::size_t node) const {
    Vector x(lower_.size());
    for (std::size_t i = 0; i < dims(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const std::size_t j = node % counts_[i];
        node /= counts_[i];
        x(ii) = lower_(ii) + static_cast<double>(j) * spacing_(ii);
    }
    return x;
}

std::vector<std::size_t> SpaceGrid::multi_index(std::size_t node) const {
    std::vector<std::size_t> idx(dims());
    for (std::size_t i = 0; i < dims(); ++i) {
        idx[i] = node % counts_[i];
        node /= counts_[i];
    }
    return idx;
}

std::size_t SpaceGrid::flat_index(const std::vector<std::size_t>& idx) const {
    std::size_t flat = 0;
    for (std::size_t i = dims(); i-- > 0;) flat = flat * counts_[i] + idx[i];
    return flat;
}

std::size_t SpaceGrid::nearest_node(const Vector& x) const {
    std::vector<std::size_t> idx(dims());
    for (std::size_t i = 0; i < dims(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double pos = std::round((x(ii) - lower_(ii)) / spacing_(ii));
        idx[i] = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(counts_[i] - 1)));
    }
    return flat_index(idx);
}

double SpaceGrid::distance_to_boundary(const Vector& x) const {
    double d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < lower_.size(); ++i) d = std::min({d, x(i) - lower_(i), upper_(i) - x(i)});
    return d;
}

bool SpaceGrid::on_boundary(std::size_t node) const {
    const auto idx = multi_index(node);
    for (std::size_t i = 0; i < dims(); ++i)
        if (idx[i] == 0 || idx[i] + 1 == counts_[i]) return true;
    return false;
}

bool SpaceGrid::operator==(const SpaceGrid& o) const {
    return lower_ == o.lower_ && upper_ == o.upper_ && counts_ == o.counts_;
}

void BoundaryStats::merge(const BoundaryStats& o) {
    clamped_evaluations += o.clamped_evaluations;
    total_evaluations += o.total_evaluations;
    clamped_weight += o.clamped_weight;
    total_weight += o.total_weight;
}

// -------------------------------------------------------------- ValueField

namespace {
constexpr std::size_t kMaxInterpolationDims = 8;
}

ValueField::ValueField(TimeGrid grid, SpaceGrid space)
    : grid_(grid), space_(std::move(space)), values_((grid_.steps() + 1) * space_.node_count(), 0.0) {}

template <class Data>
double ValueField::interpolate_impl(const Data& data, std::size_t k, const Vector& x, bool* clamped) const {
    const std::size_t n = space_.dims();
    if (static_cast<std::size_t>(x.size()) != n) throw InputError("interpolate: point has the wrong dimension");
    if (n > kMaxInterpolationDims) throw InputError("interpolate: at most 8 state dimensions are supported");
    const std::size_t base = k * space_.node_count();
    // per-axis lower cell index, fractional position and flat-index stride
    std::array<std::size_t, kMaxInterpolationDims> cp{}, sp{};
    std::array<double, kMaxInterpolationDims> fp{};
    bool outside = false;
    std::size_t s = 1;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        sp[i] = s;
        s *= space_.count(i);
        double pos = (x(ii) - space_.lower()(ii)) / space_.spacing()(ii);
        const double last = static_cast<double>(space_.count(i) - 1);
        if (pos < 0.0 || pos > last) {
            outside = true;
            pos = std::clamp(pos, 0.0, last);
        }
        double c = std::floor(pos);
        if (c >= last) c = last - 1.0;
        cp[i] = static_cast<std::size_t>(c);
        fp[i] = pos - c;
    }
    if (clamped) *clamped = outside;
    double acc = 0.0;
    const std::size_t corners = std::size_t{1} << n;
    for (std::size_t corner = 0; corner < corners; ++corner) {
        double w = 1.0;
        std::size_t flat = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool up = (corner >> i) & 1U;
            w *= up ? fp[i] : 1.0 - fp[i];
            flat += (cp[i] + (up ? 1 : 0)) * sp[i];
        }
        if (w != 0.0) acc += w * data[base + flat];
    }
    return acc;
}

double ValueField::interpolate(std::size_t k, const Vector& x, bool* clamped) const {
    if (k > grid_.steps()) throw InputError("interpolate: step beyond the grid");
    return interpolate_impl(values_, k, x, clamped);
}

double ValueField::interpolate_stderr(std::size_t k, const Vector& x) const {
    if (stderr_.empty()) return 0.0;
    return interpolate_impl(stderr_, k, x, nullptr);
}

// ---------------------------------------------------------- FeedbackPolicy

FeedbackPolicy::FeedbackPolicy(const ValueField& field) : grid_(field.grid()), space_(field.space()) {
    if (!field.has_policy()) throw InputError("FeedbackPolicy: value field carries no argmax data");
    indices_.resize(grid_.steps() * space_.node_count());
    for (std::size_t k = 0; k < grid_.steps(); ++k)
        for (std::size_t j = 0; j < space_.node_count(); ++j) indices_[k * space_.node_count() + j] = field.argmax(k, j);
}

FeedbackPolicy FeedbackPolicy::constant(const ValueField& field, std::size_t control) {
    ValueField copy = field;
    if (!copy.has_policy()) copy.enable_policy();
    FeedbackPolicy p(copy);
    std::fill(p.indices_.begin(), p.indices_.end(), static_cast<std::uint32_t>(control));
    return p;
}

std::size_t FeedbackPolicy::control_at(std::size_t k, const Vector& x) const {
    if (k >= grid_.steps()) throw InputError("FeedbackPolicy: no decision at or after the final step");
    return indices_[k * space_.node_count() + space_.nearest_node(x)];
}

ControlPolicy FeedbackPolicy::as_control_policy(const TimeGrid& sim_grid) const {
    const std::size_t offset = grid_.index_of(sim_grid.start());
    if (std::abs(sim_grid.dt() - grid_.dt()) > 1e-12 * grid_.dt())
        throw InputError("FeedbackPolicy: simulation grid step differs from the policy grid step");
    auto self = std::make_shared<const FeedbackPolicy>(*this);
    return [self, offset](std::size_t k, const Vector& x) { return self->control_at(offset + k, x); };
}

void write_value_field_csv(std::ostream& out, const ValueField& f) {
    std::vector<std::string> header{"step", "time"};
    for (std::size_t i = 0; i < f.space().dims(); ++i) header.push_back(fmt::format("x_{}", i + 1));
    header.emplace_back("value");
    header.emplace_back("argmax_index");
    csv::write_row(out, header);
    for (std::size_t k = 0; k <= f.grid().steps(); ++k) {
        for (std::size_t j = 0; j < f.space().node_count(); ++j) {
            std::vector<std::string> row{std::to_string(k), csv::number(f.grid().node(k))};
            const Vector x = f.space().point(j);
            for (double v : x) row.push_back(csv::number(v));
            row.push_back(csv::number(f.at(k, j)));
            row.push_back(f.has_policy() && k < f.grid().steps() ? std::to_string(f.argmax(k, j)) : "-1");
            csv::write_row(out, row);
        }
    }
}

}  // namespace nlfk
