#include "doctest.h"

#include "support.hpp"

#include "nlfk/errors.hpp"
#include "nlfk/sde.hpp"

#include <cmath>
#include <sstream>

using namespace nlfk;
using namespace nlfk::testing;

namespace {

OperatorSpec scalar_op(FieldSpec drift, FieldSpec diffusion, double lipschitz = 1.0) {
    OperatorSpec op;
    op.controls.push_back(CoefficientField{std::move(drift), std::move(diffusion), lipschitz});
    op.terminal = TerminalSpec::named("first");
    return op;
}

FieldSpec linear_field(double slope) { return FieldSpec::affine(mat1(0.0), {mat1(slope)}); }

PathEnsemble simulate(const OperatorSpec& op, std::size_t steps, std::size_t paths, double x0, std::uint64_t seed) {
    const TimeGrid grid(0.0, op.horizon, steps);
    auto noise = std::make_shared<const NoiseStore>(seed, paths, steps, op.noise_dim, grid.dt());
    return simulate_forward(constant_policy(0), op, grid, {vec1(x0)}, noise);
}

}  // namespace

TEST_CASE("time grid nodes") {
    const TimeGrid g(0.5, 1.5, 4);
    CHECK(g.dt() == 0.25);
    CHECK(g.node(0) == 0.5);
    CHECK(g.end() == 1.5);
    CHECK(g.index_of(1.0) == 2);
    CHECK_THROWS_AS(g.index_of(0.6), InputError);
    const auto sub = g.subgrid(2, 4);
    CHECK(sub.start() == g.node(2));
    CHECK(sub.node(1) == g.node(3));
    CHECK_THROWS_AS(TimeGrid(1.0, 1.0, 3), InputError);
    CHECK_THROWS_AS(TimeGrid(0.0, 1.0, 0), InputError);
}

TEST_CASE("noise is reproducible, Gaussian and coarsens by summation") {
    const NoiseStore a(5, 200, 8, 2, 0.125);
    const NoiseStore b(5, 200, 8, 2, 0.125);
    for (std::size_t p = 0; p < 200; p += 17)
        for (std::size_t k = 0; k < 8; ++k) CHECK(a.increment(p, k) == b.increment(p, k));
    CHECK(a.increment(0, 0) != NoiseStore(6, 200, 8, 2, 0.125).increment(0, 0));
    CHECK(a.increment(0, 0) != NoiseStore(5, 200, 8, 2, 0.125, 1).increment(0, 0));

    const auto c = a.coarsened(4);
    CHECK(c.steps() == 2);
    CHECK(c.dt() == 0.5);
    Vector sum = Vector::Zero(2);
    for (std::size_t k = 4; k < 8; ++k) sum += a.increment(3, k);
    CHECK((c.increment(3, 1) - sum).norm() <= 1e-15);
    CHECK_THROWS_AS(a.coarsened(3), InputError);

    // moments of many increments
    const NoiseStore big(9, 100000, 1, 1, 0.04);
    double m = 0.0, v = 0.0;
    for (std::size_t p = 0; p < big.paths(); ++p) {
        const double w = big.increment(p, 0)(0);
        m += w;
        v += w * w;
    }
    m /= 1e5;
    v = v / 1e5 - m * m;
    CHECK(std::abs(m) <= 3.0 * 0.2 / std::sqrt(1e5));
    CHECK(v == doctest::Approx(0.04).epsilon(0.03));
}

TEST_CASE("deterministic drift b = 1 reaches 1 exactly") {
    const auto op = scalar_op(FieldSpec::constant(vec1(1.0)), FieldSpec::constant(mat1(0.0)), 0.0);
    for (std::size_t K : {1, 3, 8, 64}) {
        const auto ens = simulate(op, K, 10, 0.0, 1);
        for (std::size_t p = 0; p < ens.paths; ++p) CHECK(ens.state(p, K)[0] == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("Brownian motion moments at T = 1") {
    const auto ens = simulate(heat_problem(), 4, 100000, 0.0, 2);
    double m = 0.0, v = 0.0;
    for (std::size_t p = 0; p < ens.paths; ++p) m += ens.state(p, 4)[0];
    m /= static_cast<double>(ens.paths);
    for (std::size_t p = 0; p < ens.paths; ++p) v += std::pow(ens.state(p, 4)[0] - m, 2);
    v /= static_cast<double>(ens.paths - 1);
    CHECK(std::abs(m) <= 3.0 / std::sqrt(1e5));
    CHECK(std::abs(v - 1.0) <= 0.05);
}

TEST_CASE("explicit Euler on x' = -x") {
    const auto op = scalar_op(linear_field(-1.0), FieldSpec::constant(mat1(0.0)));
    const auto ens = simulate(op, 1000, 2, 1.0, 3);
    CHECK(std::abs(ens.state(0, 1000)[0] - std::exp(-1.0)) <= 2e-3);
    CHECK(ens.state(0, 1000)[0] == std::pow(1.0 - 1e-3, 1000));
}

TEST_CASE("simulation records the control trace and validates input") {
    auto op = gheat_problem();
    const TimeGrid grid(0.0, 1.0, 10);
    auto noise = std::make_shared<const NoiseStore>(4, 50, 10, 1, grid.dt());
    const auto ens = simulate_forward([](std::size_t k, const Vector&) { return k % 2; }, op, grid, {vec1(0.0)}, noise);
    for (std::size_t p = 0; p < 50; p += 7)
        for (std::size_t k = 0; k < 10; ++k) CHECK(ens.control(p, k) == k % 2);

    auto bad = [](std::size_t, const Vector&) { return std::size_t{5}; };
    CHECK_THROWS_AS(simulate_forward(bad, op, grid, {vec1(0.0)}, noise), SimulationError);
    auto short_noise = std::make_shared<const NoiseStore>(4, 50, 5, 1, grid.dt());
    CHECK_THROWS_AS(simulate_forward(constant_policy(0), op, grid, {vec1(0.0)}, short_noise), InputError);
    CHECK_THROWS_AS(simulate_forward(constant_policy(0), op, grid, {vec1(std::nan(""))}, noise), InputError);
    CHECK_THROWS_AS(simulate_forward(constant_policy(0), op, grid, {Vector::Zero(2)}, noise), InputError);
}

TEST_CASE("blow-up is reported with path and step") {
    const auto op = scalar_op(FieldSpec::named("neg_state", 1, 1), FieldSpec::constant(mat1(0.0)));
    // x_{k+1} = x_k (1 - dt) with dt = 1e6 grows without bound
    OperatorSpec fast = op;
    fast.horizon = 1e6 * 400;
    const TimeGrid grid(0.0, fast.horizon, 400);
    auto noise = std::make_shared<const NoiseStore>(1, 2, 400, 1, grid.dt());
    try {
        simulate_forward(constant_policy(0), fast, grid, {vec1(1.0)}, noise);
        FAIL("expected a simulation error");
    } catch (const SimulationError& e) {
        CHECK(e.step() < 400);
        CHECK(std::string(e.what()).find("path") != std::string::npos);
    }
}

TEST_CASE("restart_flow reproduces the tail exactly") {
    const auto gbm = scalar_op(FieldSpec::constant(vec1(0.0)), linear_field(1.0));
    const auto ens = simulate(gbm, 64, 300, 1.0, 5);
    for (std::size_t r : {std::size_t{0}, std::size_t{1}, std::size_t{32}, std::size_t{63}, std::size_t{64}}) {
        const auto again = restart_flow(ens, r, gbm, constant_policy(0));
        CHECK(again.states == ens.states);
        CHECK(again.controls == ens.controls);
    }
    const auto ode = scalar_op(linear_field(-1.0), FieldSpec::constant(mat1(0.0)));
    const auto e2 = simulate(ode, 20, 3, 2.0, 6);
    CHECK(restart_flow(e2, 10, ode, constant_policy(0)).states == e2.states);

    CHECK_THROWS_AS(restart_flow(ens, 65, gbm, constant_policy(0)), InputError);
    PathEnsemble orphan = ens;
    orphan.noise.reset();
    CHECK_THROWS_AS(restart_flow(orphan, 3, gbm, constant_policy(0)), InputError);
}

TEST_CASE("simulation is deterministic in the seed") {
    const auto op = gheat_problem();
    const auto a = simulate(op, 16, 100, 0.3, 8);
    const auto b = simulate(op, 16, 100, 0.3, 8);
    CHECK(a.states == b.states);
    const auto c = simulate(op, 16, 100, 0.3, 9);
    CHECK(a.states != c.states);
}

TEST_CASE("strong order: additive noise is exact on coupled paths") {
    const auto res = estimate_strong_order(heat_problem(), constant_policy(0), vec1(0.0), 8, 4, 2000, 1);
    CHECK(res.exact);
    CHECK(res.rate >= 0.8);
}

TEST_CASE("strong order: Ornstein-Uhlenbeck with additive noise is close to 1") {
    const auto op = scalar_op(linear_field(-1.0), FieldSpec::constant(mat1(1.0)));
    const auto res = estimate_strong_order(op, constant_policy(0), vec1(1.0), 8, 4, 4000, 2);
    CHECK_FALSE(res.exact);
    CHECK(res.rate >= 0.8);
}

TEST_CASE("strong order: deterministic x' = -x has order 1") {
    const auto op = scalar_op(linear_field(-1.0), FieldSpec::constant(mat1(0.0)));
    const auto res = estimate_strong_order(op, constant_policy(0), vec1(1.0), 8, 4, 10, 3);
    CHECK(res.rate == doctest::Approx(1.0).epsilon(0.2));
}

TEST_CASE("strong order: geometric noise sigma(x) = x / 2") {
    const auto op = scalar_op(FieldSpec::constant(vec1(0.0)), linear_field(0.5), 0.5);
    const auto res = estimate_strong_order(op, constant_policy(0), vec1(1.0), 8, 4, 4000, 4);
    CHECK(res.rate >= 0.45);
    REQUIRE(res.errors.size() == 4);
    CHECK(res.errors.front() > res.errors.back());
    CHECK_THROWS_AS(estimate_strong_order(op, constant_policy(0), vec1(1.0), 8, 1, 100, 4), InputError);
}

TEST_CASE("stability in the initial data") {
    const auto op = scalar_op(FieldSpec::named("sin_state", 1, 1), linear_field(0.5), 1.0);
    const double c1 = initial_data_stability(op, constant_policy(0), TimeGrid(0.0, 1.0, 32), vec1(0.5), vec1(0.6), 4000, 7);
    const double c2 = initial_data_stability(op, constant_policy(0), TimeGrid(0.0, 1.0, 64), vec1(0.5), vec1(0.6), 4000, 7);
    CHECK(std::isfinite(c1));
    CHECK(c1 >= 1.0);  // sup over k includes k = 0
    CHECK(std::abs(c1 - c2) <= 0.2 * c2);
    // Gronwall-type bound for Lipschitz constant 1 over T = 1
    CHECK(c2 <= std::exp(2.0 * (2.0 * 1.0 + 1.0)));
}

TEST_CASE("first exit stopping freezes paths") {
    const auto ens = simulate(heat_problem(), 50, 400, 0.0, 10);
    const auto stopped = stop_at_first_exit(ens, vec1(-2.0), vec1(2.0));
    std::size_t exits = 0;
    for (std::size_t p = 0; p < ens.paths; ++p) {
        const std::size_t tau = stopped.stop_steps[p];
        if (std::abs(ens.state(p, tau)[0]) > 2.0) ++exits;
        for (std::size_t k = 0; k <= 50; ++k) {
            const double x = stopped.state(p, k)[0];
            if (k <= tau) {
                CHECK(x == ens.state(p, k)[0]);
                if (k < tau) CHECK(std::abs(x) <= 2.0);
            } else {
                CHECK(x == stopped.state(p, tau)[0]);
                CHECK(stopped.increment(p, k - 1).norm() == 0.0);
            }
        }
    }
    CHECK(exits > 0);
    CHECK(exits < ens.paths);
}

TEST_CASE("ensemble CSV layout") {
    const auto ens = simulate(gheat_problem(), 2, 2, 0.0, 11);
    std::ostringstream out;
    write_ensemble_csv(out, ens);
    const std::string s = out.str();
    CHECK(s.rfind("path,step,time,x_1,control_index\r\n", 0) == 0);
    std::size_t rows = 0;
    for (char ch : s) rows += ch == '\n';
    CHECK(rows == 1 + 2 * 3);
    CHECK(s.find(",-1\r\n") != std::string::npos);
}

TEST_CASE("least squares slope") {
    const std::vector<double> x{0.0, 1.0, 2.0, 3.0};
    const std::vector<double> y{1.0, 3.0, 5.0, 7.0};
    CHECK(least_squares_slope(x, y) == doctest::Approx(2.0));
    CHECK_THROWS_AS(least_squares_slope(std::vector<double>{1.0}, std::vector<double>{1.0}), InputError);
}
