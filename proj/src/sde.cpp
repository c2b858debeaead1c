#include "nlfk/sde.hpp"

#include "nlfk/csv.hpp"
#include "nlfk/errors.hpp"
#include "nlfk/parallel.hpp"
#include "nlfk/rng.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <numeric>

namespace nlfk {

// ---------------------------------------------------------------- TimeGrid

TimeGrid::TimeGrid(double t0, double T, std::size_t steps) : origin_(t0), dt_((T - t0) / static_cast<double>(steps)),
                                                             first_(0), steps_(steps) {
    if (steps < 1) throw InputError("time grid needs at least one step");
    if (!(T > t0) || !std::isfinite(T) || !std::isfinite(t0)) throw InputError("time grid needs t0 < T");
}

TimeGrid TimeGrid::with_step(double origin, double dt, std::size_t first, std::size_t steps) {
    if (steps < 1) throw InputError("time grid needs at least one step");
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InputError("time grid needs dt > 0");
    TimeGrid g;
    g.origin_ = origin;
    g.dt_ = dt;
    g.first_ = first;
    g.steps_ = steps;
    return g;
}

TimeGrid TimeGrid::subgrid(std::size_t k_begin, std::size_t k_end) const {
    if (k_begin >= k_end || k_end > steps_) throw InputError("subgrid: need k_begin < k_end <= steps");
    return with_step(origin_, dt_, first_ + k_begin, k_end - k_begin);
}

std::size_t TimeGrid::index_of(double t) const {
    const double pos = (t - start()) / dt_;
    const double k = std::round(pos);
    if (k < 0.0 || k > static_cast<double>(steps_) || std::abs(pos - k) > 1e-9)
        throw InputError(fmt::format("time {} is not a node of the grid [{}, {}] with dt={}", t, start(), end(), dt_));
    return static_cast<std::size_t>(k);
}

// -------------------------------------------------------------- NoiseStore

NoiseStore::NoiseStore(std::uint64_t seed, std::size_t paths, std::size_t steps, std::size_t noise_dim, double dt,
                       std::uint64_t stream)
    : seed_(seed), stream_(stream), paths_(paths), steps_(steps), noise_dim_(noise_dim), dt_(dt) {
    if (paths < 1 || steps < 1 || noise_dim < 1) throw InputError("noise store needs paths, steps, dims >= 1");
    if (!(dt > 0.0)) throw InputError("noise store needs dt > 0");
}

NoiseStore NoiseStore::coarsened(std::size_t factor) const {
    if (factor < 1 || steps_ % factor != 0) throw InputError("noise coarsening factor must divide the step count");
    NoiseStore c = *this;
    c.steps_ = steps_ / factor;
    c.dt_ = dt_ * static_cast<double>(factor);
    c.aggregation_ = aggregation_ * factor;
    return c;
}

void NoiseStore::increment(std::size_t path, std::size_t step, std::span<double> out) const {
    const CounterRng rng(seed_, stream_);
    const double fine_sd = std::sqrt(dt_ / static_cast<double>(aggregation_));
    for (std::size_t i = 0; i < noise_dim_; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < aggregation_; ++j) sum += fine_sd * rng.normal(path, step * aggregation_ + j, i);
        out[i] = sum;
    }
}

Vector NoiseStore::increment(std::size_t path, std::size_t step) const {
    Vector v(static_cast<Eigen::Index>(noise_dim_));
    increment(path, step, std::span<double>(v.data(), noise_dim_));
    return v;
}

// ------------------------------------------------------------ PathEnsemble

ControlPolicy constant_policy(std::size_t control) {
    return [control](std::size_t, const Vector&) { return control; };
}

Vector PathEnsemble::state_vector(std::size_t p, std::size_t k) const {
    const auto s = state(p, k);
    return Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
}

Vector PathEnsemble::increment(std::size_t p, std::size_t k) const {
    if (stopped(p, k)) return Vector::Zero(static_cast<Eigen::Index>(noise->noise_dim()));
    return noise->increment(p, k);
}

namespace {

void check_noise(const NoiseStore& noise, const TimeGrid& grid, std::size_t paths, const OperatorSpec& op) {
    if (noise.steps() < grid.steps()) throw InputError("noise store has fewer steps than the time grid");
    if (noise.paths() < paths) throw InputError("noise store has fewer paths than requested");
    if (noise.noise_dim() != op.noise_dim) throw InputError("noise store dimension differs from the operator's M");
    if (std::abs(noise.dt() - grid.dt()) > 1e-12 * grid.dt()) throw InputError("noise store dt differs from grid dt");
}

// Advances path p from step `from` to the end of the grid, in place.
void advance_path(PathEnsemble& e, std::size_t p, std::size_t from, const OperatorSpec& op,
                  const ControlPolicy& policy) {
    const std::size_t n = e.state_dim;
    const auto ni = static_cast<Eigen::Index>(n);
    Vector dw(static_cast<Eigen::Index>(op.noise_dim));
    Vector x(ni);
    for (std::size_t k = from; k < e.grid.steps(); ++k) {
        const auto cur = e.state(p, k);
        std::copy(cur.begin(), cur.end(), x.data());
        const std::size_t j = policy(k, x);
        if (j >= op.controls.size()) throw SimulationError("policy returned an out-of-range control", p, k);
        e.controls[p * e.grid.steps() + k] = static_cast<std::uint32_t>(j);
        const double t = e.grid.node(k);
        const auto& c = op.controls[j];
        e.noise->increment(p, k, std::span<double>(dw.data(), op.noise_dim));
        const Vector next = x + c.sigma(t, x) * dw + c.b(t, x) * e.grid.dt();
        if (!next.allFinite()) throw SimulationError("non-finite state", p, k + 1);
        auto out = e.state(p, k + 1);
        std::copy(next.data(), next.data() + n, out.begin());
    }
}

}  // namespace

PathEnsemble simulate_forward(const ControlPolicy& policy, const OperatorSpec& op, const TimeGrid& grid,
                              const std::vector<Vector>& x0, std::shared_ptr<const NoiseStore> noise) {
    op.validate();
    if (!noise) throw InputError("simulate_forward: missing noise store");
    if (x0.empty()) throw InputError("simulate_forward: missing initial condition");
    const std::size_t paths = x0.size() == 1 ? noise->paths() : x0.size();
    check_noise(*noise, grid, paths, op);

    PathEnsemble e{grid, paths, op.state_dim};
    e.states.assign(paths * (grid.steps() + 1) * op.state_dim, 0.0);
    e.controls.assign(paths * grid.steps(), 0);
    e.noise = std::move(noise);

    parallel_for(paths, [&](std::size_t p) {
        const Vector& start = x0.size() == 1 ? x0.front() : x0[p];
        if (static_cast<std::size_t>(start.size()) != op.state_dim)
            throw InputError("simulate_forward: initial point has the wrong dimension");
        if (!start.allFinite()) throw InputError("simulate_forward: initial point is not finite");
        auto s = e.state(p, 0);
        std::copy(start.data(), start.data() + op.state_dim, s.begin());
        advance_path(e, p, 0, op, policy);
    });
    return e;
}

PathEnsemble restart_flow(const PathEnsemble& ensemble, std::size_t restart_step, const OperatorSpec& op,
                          const ControlPolicy& policy) {
    if (restart_step > ensemble.grid.steps()) throw InputError("restart_flow: restart step beyond the grid");
    if (!ensemble.noise) throw InputError("restart_flow: ensemble has no noise store");
    check_noise(*ensemble.noise, ensemble.grid, ensemble.paths, op);
    if (ensemble.state_dim != op.state_dim) throw InputError("restart_flow: ensemble dimension differs from operator");
    if (!ensemble.stop_steps.empty()) throw InputError("restart_flow: stopped ensembles cannot be restarted");

    PathEnsemble e = ensemble;
    parallel_for(e.paths, [&](std::size_t p) { advance_path(e, p, restart_step, op, policy); });
    return e;
}

PathEnsemble stop_at_first_exit(const PathEnsemble& ensemble, const Vector& lower, const Vector& upper) {
    if (static_cast<std::size_t>(lower.size()) != ensemble.state_dim ||
        static_cast<std::size_t>(upper.size()) != ensemble.state_dim)
        throw InputError("stop_at_first_exit: box dimension mismatch");
    PathEnsemble e = ensemble;
    const std::size_t K = e.grid.steps();
    e.stop_steps.assign(e.paths, K);
    for (std::size_t p = 0; p < e.paths; ++p) {
        for (std::size_t k = 0; k <= K; ++k) {
            const auto s = e.state(p, k);
            bool outside = false;
            for (std::size_t i = 0; i < e.state_dim; ++i) {
                const auto ii = static_cast<Eigen::Index>(i);
                outside = outside || s[i] < lower(ii) || s[i] > upper(ii);
            }
            if (outside) {
                e.stop_steps[p] = k;
                break;
            }
        }
        const std::size_t tau = e.stop_steps[p];
        for (std::size_t k = tau + 1; k <= K; ++k) {
            const auto frozen = e.state(p, tau);
            std::copy(frozen.begin(), frozen.end(), e.state(p, k).begin());
        }
        for (std::size_t k = tau; k < K; ++k) e.controls[p * K + k] = e.controls[p * K + (tau ? tau - 1 : 0)];
    }
    return e;
}

// ----------------------------------------------------------- diagnostics

double least_squares_slope(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw InputError("least_squares_slope needs >= 2 matching points");
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    if (sxx == 0.0) throw InputError("least_squares_slope: abscissae are all equal");
    return sxy / sxx;
}

namespace {

Vector terminal_state(const OperatorSpec& op, const ControlPolicy& policy, const TimeGrid& grid,
                      const NoiseStore& noise, std::size_t p, const Vector& x0) {
    Vector x = x0;
    Vector dw(static_cast<Eigen::Index>(op.noise_dim));
    for (std::size_t k = 0; k < grid.steps(); ++k) {
        const std::size_t j = policy(k, x);
        if (j >= op.controls.size()) throw SimulationError("policy returned an out-of-range control", p, k);
        const auto& c = op.controls[j];
        const double t = grid.node(k);
        noise.increment(p, k, std::span<double>(dw.data(), op.noise_dim));
        x = x + c.sigma(t, x) * dw + c.b(t, x) * grid.dt();
        if (!x.allFinite()) throw SimulationError("non-finite state", p, k + 1);
    }
    return x;
}

}  // namespace

StrongOrderResult estimate_strong_order(const OperatorSpec& op, const ControlPolicy& policy, const Vector& x0,
                                        std::size_t coarse_steps, std::size_t levels, std::size_t paths,
                                        std::uint64_t seed) {
    op.validate();
    if (levels < 2) throw InputError("estimate_strong_order needs at least 2 levels");
    if (coarse_steps < 1 || paths < 1) throw InputError("estimate_strong_order needs steps, paths >= 1");
    const std::size_t ref_steps = coarse_steps << levels;
    const TimeGrid ref_grid(0.0, op.horizon, ref_steps);
    const NoiseStore ref_noise(seed, paths, ref_steps, op.noise_dim, ref_grid.dt());

    std::vector<double> ref_terminal(paths * op.state_dim);
    std::vector<double> level_err(paths * levels, 0.0);
    parallel_for(paths, [&](std::size_t p) {
        const Vector xr = terminal_state(op, policy, ref_grid, ref_noise, p, x0);
        for (std::size_t l = 0; l < levels; ++l) {
            const std::size_t steps = coarse_steps << l;
            const TimeGrid grid(0.0, op.horizon, steps);
            const NoiseStore noise = ref_noise.coarsened(ref_steps / steps);
            const Vector xl = terminal_state(op, policy, grid, noise, p, x0);
            level_err[p * levels + l] = (xr - xl).norm();
        }
    });

    StrongOrderResult res;
    double scale = x0.norm() + 1.0;
    for (std::size_t l = 0; l < levels; ++l) {
        double sum = 0.0;
        for (std::size_t p = 0; p < paths; ++p) sum += level_err[p * levels + l];
        res.errors.push_back(sum / static_cast<double>(paths));
        res.dts.push_back(op.horizon / static_cast<double>(coarse_steps << l));
    }
    const double worst = *std::max_element(res.errors.begin(), res.errors.end());
    if (worst <= 1e-12 * scale) {
        res.exact = true;
        res.rate = std::numeric_limits<double>::infinity();
        return res;
    }
    std::vector<double> lx, ly;
    for (std::size_t l = 0; l < levels; ++l) {
        lx.push_back(std::log(res.dts[l]));
        ly.push_back(std::log(res.errors[l]));
    }
    res.rate = least_squares_slope(lx, ly);
    return res;
}

double initial_data_stability(const OperatorSpec& op, const ControlPolicy& policy, const TimeGrid& grid,
                              const Vector& x0, const Vector& x0_shifted, std::size_t paths, std::uint64_t seed) {
    const double d2 = (x0 - x0_shifted).squaredNorm();
    if (d2 == 0.0) throw InputError("initial_data_stability needs distinct initial points");
    auto noise = std::make_shared<const NoiseStore>(seed, paths, grid.steps(), op.noise_dim, grid.dt());
    const auto a = simulate_forward(policy, op, grid, {x0}, noise);
    const auto b = simulate_forward(policy, op, grid, {x0_shifted}, noise);
    double acc = 0.0;
    for (std::size_t p = 0; p < paths; ++p) {
        double sup = 0.0;
        for (std::size_t k = 0; k <= grid.steps(); ++k)
            sup = std::max(sup, (a.state_vector(p, k) - b.state_vector(p, k)).squaredNorm());
        acc += sup;
    }
    return acc / static_cast<double>(paths) / d2;
}

void write_ensemble_csv(std::ostream& out, const PathEnsemble& e) {
    std::vector<std::string> header{"path", "step", "time"};
    for (std::size_t i = 0; i < e.state_dim; ++i) header.push_back(fmt::format("x_{}", i + 1));
    header.emplace_back("control_index");
    csv::write_row(out, header);
    const std::size_t K = e.grid.steps();
    for (std::size_t p = 0; p < e.paths; ++p) {
        for (std::size_t k = 0; k <= K; ++k) {
            std::vector<std::string> row{std::to_string(p), std::to_string(k), csv::number(e.grid.node(k))};
            for (double v : e.state(p, k)) row.push_back(csv::number(v));
            row.push_back(k < K ? std::to_string(e.control(p, k)) : "-1");
            csv::write_row(out, row);
        }
    }
}

}  // namespace nlfk
