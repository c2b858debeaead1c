#include "nlfk/dpp.hpp"

#include "nlfk/errors.hpp"
#include "nlfk/parallel.hpp"
#include "nlfk/quadrature.hpp"
#include "nlfk/rng.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <memory>

namespace nlfk {

ExpectationRule ExpectationRule::defaults_for(const OperatorSpec& op) {
    ExpectationRule r;
    if (op.noise_dim > 2) r.kind = Kind::antithetic_mc;
    return r;
}

double dpp_monotone_dt_threshold(const OperatorSpec& op) {
    const double mu = std::abs(op.driver.monotonicity_mu);
    return mu > 0.0 ? 1.0 / (2.0 * mu) : std::numeric_limits<double>::infinity();
}

double required_boundary_margin(const OperatorSpec& op, const SpaceGrid& space) {
    double top = 0.0;
    for (std::size_t j = 0; j < space.node_count(); ++j) {
        const Vector x = space.point(j);
        for (double t : {0.0, op.horizon}) {
            for (const auto& c : op.controls) {
                const Matrix s = c.sigma(t, x);
                Eigen::SelfAdjointEigenSolver<Matrix> es(s * s.transpose(), Eigen::EigenvaluesOnly);
                top = std::max(top, es.eigenvalues().maxCoeff());
            }
        }
    }
    return 3.0 * std::sqrt(top * op.horizon);
}

namespace {

struct NodeStats {
    BoundaryStats boundary;
};

// Gaussian sample set for one (step, node): points xi_q in R^M, weights w_q,
// and for Monte Carlo the pairing needed for the antithetic variance.
struct SampleSet {
    std::size_t dims = 0;
    std::vector<double> points;
    std::vector<double> weights;
    bool antithetic = false;
};

class Sampler {
public:
    Sampler(const ExpectationRule& rule, std::size_t noise_dim) : rule_(rule), dims_(noise_dim) {
        if (rule.kind == ExpectationRule::Kind::gauss_hermite) {
            const auto t = gauss_hermite_tensor(rule.quad_nodes, noise_dim);
            fixed_.dims = noise_dim;
            fixed_.points = t.points;
            fixed_.weights = t.weights;
        } else if (rule.mc_samples < 2 || rule.mc_samples % 2) {
            throw InputError("antithetic Monte Carlo needs an even sample count >= 2");
        }
    }

    bool is_random() const { return rule_.kind == ExpectationRule::Kind::antithetic_mc; }

    // For Monte Carlo: pairs (xi, -xi) stored consecutively.
    void fill(std::size_t abs_step, std::size_t node, SampleSet& out) const {
        if (!is_random()) {
            out = fixed_;
            return;
        }
        const CounterRng rng(rule_.seed, 0x0dd0 + rule_.stream);
        const std::size_t pairs = rule_.mc_samples / 2;
        out.dims = dims_;
        out.antithetic = true;
        out.points.resize(rule_.mc_samples * dims_);
        out.weights.assign(rule_.mc_samples, 1.0 / static_cast<double>(rule_.mc_samples));
        for (std::size_t s = 0; s < pairs; ++s) {
            for (std::size_t i = 0; i < dims_; ++i) {
                const double g = rng.normal(abs_step, node, s * dims_ + i);
                out.points[(2 * s) * dims_ + i] = g;
                out.points[(2 * s + 1) * dims_ + i] = -g;
            }
        }
    }

private:
    ExpectationRule rule_;
    std::size_t dims_;
    SampleSet fixed_;
};

}  // namespace

DppResult solve_value_dpp(const OperatorSpec& op, const TimeGrid& grid, const SpaceGrid& space,
                          const DppOptions& options) {
    op.validate();
    if (space.dims() != op.state_dim) throw InputError("solve_value_dpp: lattice dimension differs from operator");

    DppResult res{ValueField(grid, space)};
    ValueField& u = res.field;
    u.enable_policy();
    const Sampler sampler(options.rule, op.noise_dim);
    if (sampler.is_random()) u.enable_stderr();

    const std::size_t K = grid.steps();
    const std::size_t nodes = space.node_count();
    const std::size_t M = op.noise_dim;
    const double dt = grid.dt();
    const double sqdt = std::sqrt(dt);

    if (options.terminal) {
        const auto& term = *options.terminal;
        if (term.values.size() != nodes) throw InputError("solve_value_dpp: terminal override has the wrong node count");
        for (std::size_t j = 0; j < nodes; ++j) u.at(K, j) = term.values[j];
        if (!term.stderr_values.empty()) {
            if (!u.has_stderr()) u.enable_stderr();
            for (std::size_t j = 0; j < nodes; ++j) u.stderr_at(K, j) = term.stderr_values[j];
        }
    } else {
        for (std::size_t j = 0; j < nodes; ++j) u.at(K, j) = op.terminal(space.point(j));
    }
    for (std::size_t j = 0; j < nodes; ++j)
        if (!std::isfinite(u.at(K, j))) throw NumericError(fmt::format("solve_value_dpp: non-finite terminal value at node {}", j));

    std::vector<NodeStats> stats(nodes);
    const auto abs_offset = static_cast<std::size_t>(std::llround(grid.start() / dt));
    for (std::size_t k = K; k-- > 0;) {
        const double t = grid.node(k);
        const std::size_t abs_step = abs_offset + k;
        parallel_for(nodes, [&](std::size_t j) {
            const Vector x = space.point(j);
            SampleSet samples;
            sampler.fill(abs_step, j, samples);
            const std::size_t Q = samples.weights.size();
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_j = 0;
            double best_var = 0.0;
            Vector pt(x.size());
            Eigen::Map<const Matrix> xi(samples.points.data(), static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(Q));
            std::vector<double> vals(Q);
            for (std::size_t c = 0; c < op.controls.size(); ++c) {
                const auto& ctrl = op.controls[c];
                const Vector b = ctrl.b(t, x);
                const Matrix sig = ctrl.sigma(t, x);
                const Vector centre = x + b * dt;
                double cont = 0.0;
                Vector zacc = Vector::Zero(static_cast<Eigen::Index>(M));
                for (std::size_t q = 0; q < Q; ++q) {
                    const auto qi = static_cast<Eigen::Index>(q);
                    pt = centre + sig * (sqdt * xi.col(qi));
                    bool clamped = false;
                    const double v = u.interpolate(k + 1, pt, &clamped);
                    vals[q] = v;
                    const double w = samples.weights[q];
                    cont += w * v;
                    zacc += (w * v) * xi.col(qi);
                    auto& bs = stats[j].boundary;
                    ++bs.total_evaluations;
                    bs.total_weight += w;
                    if (clamped) {
                        ++bs.clamped_evaluations;
                        bs.clamped_weight += w;
                    }
                }
                const Vector z = zacc / sqdt;
                const double f = op.driver(DriverArgs{t, x, b, sig, cont, z});
                const double v = cont + dt * f;
                if (!std::isfinite(v))
                    throw NumericError(fmt::format("solve_value_dpp: non-finite value at step {}, node {}", k, j));
                if (v > best) {
                    best = v;
                    best_j = c;
                    if (samples.antithetic) {
                        const std::size_t pairs = Q / 2;
                        double m = 0.0, ss = 0.0;
                        for (std::size_t s = 0; s < pairs; ++s) m += 0.5 * (vals[2 * s] + vals[2 * s + 1]);
                        m /= static_cast<double>(pairs);
                        for (std::size_t s = 0; s < pairs; ++s) {
                            const double h = 0.5 * (vals[2 * s] + vals[2 * s + 1]) - m;
                            ss += h * h;
                        }
                        best_var = pairs > 1 ? ss / static_cast<double>(pairs - 1) / static_cast<double>(pairs) : 0.0;
                    }
                }
            }
            u.at(k, j) = best;
            u.argmax(k, j) = static_cast<std::uint32_t>(best_j);
            if (u.has_stderr()) {
                const double carried = u.interpolate_stderr(k + 1, x);
                u.stderr_at(k, j) = std::sqrt(best_var + carried * carried);
            }
        });
    }

    for (const auto& s : stats) res.boundary.merge(s.boundary);
    if (res.boundary.contamination() > options.contamination_warning)
        res.warnings.push_back(fmt::format("boundary contamination {:.3g} exceeds {:.3g}: {} of {} expectation "
                                           "points were clamped to the lattice box",
                                           res.boundary.contamination(), options.contamination_warning,
                                           res.boundary.clamped_evaluations, res.boundary.total_evaluations));
    return res;
}

PolicyValue evaluate_policy_value(const OperatorSpec& op, const FeedbackPolicy& policy, double t0, const Vector& x0,
                                  std::size_t paths, std::uint64_t seed, const BsdeOptions& bsde) {
    const std::size_t k0 = policy.grid().index_of(t0);
    if (k0 >= policy.grid().steps()) throw InputError("evaluate_policy_value: t0 must precede the horizon");
    const TimeGrid sim = policy.grid().subgrid(k0, policy.grid().steps());
    auto noise = std::make_shared<const NoiseStore>(seed, paths, sim.steps(), op.noise_dim, sim.dt());
    const PathEnsemble ens = simulate_forward(policy.as_control_policy(sim), op, sim, {x0}, noise);
    std::vector<double> xi(paths);
    for (std::size_t p = 0; p < paths; ++p) xi[p] = op.terminal(ens.state_vector(p, sim.steps()));
    const BsdeSolution sol = solve_bsde_lsmc(ens, xi, controlled_driver(op, ens), bsde);
    return {sol.y0_estimate, sol.y0_stderr};
}

TwoStageResult dpp_two_stage(const OperatorSpec& op, double t0, const Vector& x0, double t_mid,
                             const DppSolverConfig& config) {
    if (!(t0 < t_mid && t_mid < op.horizon)) throw InputError("dpp_two_stage: need t0 < t_mid < T");
    const TimeGrid grid(t0, op.horizon, config.steps);
    const std::size_t k_mid = grid.index_of(t_mid);
    if (k_mid == 0 || k_mid >= grid.steps()) throw InputError("dpp_two_stage: t_mid must be an interior grid node");

    DppOptions direct_opts = config.options;
    direct_opts.terminal.reset();
    const DppResult direct = solve_value_dpp(op, grid, config.space, direct_opts);

    DppOptions late_opts = direct_opts;
    late_opts.rule.stream = config.options.rule.stream + 1;
    const DppResult late = solve_value_dpp(op, grid.subgrid(k_mid, grid.steps()), config.space, late_opts);

    DppOptions early_opts = direct_opts;
    early_opts.rule.stream = config.options.rule.stream + 2;
    TerminalOverride handoff;
    const auto slice = late.field.slice(0);
    handoff.values.assign(slice.begin(), slice.end());
    if (late.field.has_stderr())
        for (std::size_t j = 0; j < config.space.node_count(); ++j) handoff.stderr_values.push_back(late.field.stderr_at(0, j));
    early_opts.terminal = std::move(handoff);
    const DppResult early = solve_value_dpp(op, grid.subgrid(0, k_mid), config.space, early_opts);

    TwoStageResult out;
    out.direct = direct.field.interpolate(0, x0);
    out.two_stage = early.field.interpolate(0, x0);
    const double sd = direct.field.interpolate_stderr(0, x0);
    const double se = early.field.interpolate_stderr(0, x0);
    out.combined_stderr = std::sqrt(sd * sd + se * se);
    return out;
}

GapReport second_order_gap(const OperatorSpec& op, const ValueField& value, std::size_t frozen_control, double t0,
                           const Vector& x0, std::size_t paths, std::uint64_t seed, const BsdeOptions& bsde) {
    if (frozen_control >= op.controls.size()) throw InputError("second_order_gap: control index out of range");
    const std::size_t k0 = value.grid().index_of(t0);
    if (k0 >= value.grid().steps()) throw InputError("second_order_gap: t0 must precede the horizon");
    const TimeGrid sim = value.grid().subgrid(k0, value.grid().steps());
    const std::size_t K = sim.steps();
    auto noise = std::make_shared<const NoiseStore>(seed, paths, K, op.noise_dim, sim.dt());
    const PathEnsemble ens = simulate_forward(constant_policy(frozen_control), op, sim, {x0}, noise);
    std::vector<double> xi(paths);
    for (std::size_t p = 0; p < paths; ++p) xi[p] = op.terminal(ens.state_vector(p, K));
    const BsdeSolution frozen = solve_bsde_lsmc(ens, xi, controlled_driver(op, ens), bsde);

    GapReport rep;
    rep.min_increment = std::numeric_limits<double>::infinity();
    std::vector<double> terminal_gap(paths);
    std::vector<double> mean_gap(K + 1, 0.0);
    for (std::size_t p = 0; p < paths; ++p) {
        const double d0 = value.interpolate(k0, ens.state_vector(p, 0)) - frozen.y(p, 0);
        double prev = 0.0;
        for (std::size_t k = 1; k <= K; ++k) {
            const double dk = value.interpolate(k0 + k, ens.state_vector(p, k)) - frozen.y(p, k);
            const double gap = d0 - dk;
            rep.min_increment = std::min(rep.min_increment, gap - prev);
            rep.max_abs_gap = std::max(rep.max_abs_gap, std::abs(gap));
            mean_gap[k] += gap;
            prev = gap;
        }
        terminal_gap[p] = prev;
    }
    rep.mean_min_increment = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= K; ++k) {
        mean_gap[k] /= static_cast<double>(paths);
        rep.mean_min_increment = std::min(rep.mean_min_increment, mean_gap[k] - mean_gap[k - 1]);
        rep.mean_max_abs_gap = std::max(rep.mean_max_abs_gap, std::abs(mean_gap[k]));
    }
    double mean = 0.0;
    for (double g : terminal_gap) mean += g;
    mean /= static_cast<double>(paths);
    double ss = 0.0;
    for (double g : terminal_gap) ss += (g - mean) * (g - mean);
    rep.terminal_gap_mean = mean;
    rep.terminal_gap_stderr = paths > 1 ? std::sqrt(ss / static_cast<double>(paths - 1) / static_cast<double>(paths)) : 0.0;
    return rep;
}

double minimal_gap(const OperatorSpec& op, const ValueField& value, double t0, const Vector& x0, std::size_t paths,
                   std::uint64_t seed, const BsdeOptions& bsde) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < op.controls.size(); ++j)
        best = std::min(best, second_order_gap(op, value, j, t0, x0, paths, seed, bsde).terminal_gap_mean);
    return best;
}

RegularityFit fit_regularity(const ValueField& value, double radius) {
    const auto& grid = value.grid();
    const auto& space = value.space();
    const std::size_t K = grid.steps();
    std::vector<std::size_t> checkpoints;
    for (double frac : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const auto k = static_cast<std::size_t>(std::llround(frac * static_cast<double>(K)));
        if (checkpoints.empty() || checkpoints.back() != k) checkpoints.push_back(k);
    }
    std::vector<std::size_t> region;
    for (std::size_t j = 0; j < space.node_count(); ++j)
        if (space.point(j).cwiseAbs().maxCoeff() <= radius + 1e-12) region.push_back(j);
    if (region.empty()) throw InputError("fit_regularity: no lattice nodes inside the requested radius");

    RegularityFit fit;
    for (std::size_t j : region) {
        const Vector x = space.point(j);
        const double nx = x.norm();
        const auto idx = space.multi_index(j);
        for (std::size_t a = 0; a < checkpoints.size(); ++a) {
            const std::size_t ka = checkpoints[a];
            const double ua = value.at(ka, j);
            fit.growth = std::max(fit.growth, ua * ua / (1.0 + nx * nx));
            for (std::size_t b = a + 1; b < checkpoints.size(); ++b) {
                const std::size_t kb = checkpoints[b];
                const double dt = std::abs(grid.node(kb) - grid.node(ka));
                fit.holder_t = std::max(fit.holder_t, std::abs(value.at(kb, j) - ua) / (std::sqrt(dt) * (1.0 + nx)));
            }
            for (std::size_t axis = 0; axis < space.dims(); ++axis) {
                if (idx[axis] + 1 >= space.count(axis)) continue;
                auto nb = idx;
                ++nb[axis];
                const std::size_t jn = space.flat_index(nb);
                if (space.point(jn).cwiseAbs().maxCoeff() > radius + 1e-12) continue;
                const double h = space.spacing()(static_cast<Eigen::Index>(axis));
                fit.lipschitz_x = std::max(fit.lipschitz_x, std::abs(value.at(ka, jn) - ua) / h);
            }
        }
    }
    return fit;
}

}  // namespace nlfk
