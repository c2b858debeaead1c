#include "doctest.h"

#include "support.hpp"

#include "nlfk/bsde.hpp"
#include "nlfk/errors.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

using namespace nlfk;
using namespace nlfk::testing;

namespace {

PathEnsemble brownian(double x0, std::size_t steps, std::size_t paths, std::uint64_t seed) {
    const TimeGrid grid(0.0, 1.0, steps);
    auto noise = std::make_shared<const NoiseStore>(seed, paths, steps, 1, grid.dt());
    return simulate_forward(constant_policy(0), heat_problem(), grid, {vec1(x0)}, noise);
}

std::vector<double> terminal_states(const PathEnsemble& e) {
    std::vector<double> xi(e.paths);
    for (std::size_t p = 0; p < e.paths; ++p) xi[p] = e.state(p, e.steps())[0];
    return xi;
}

PathDriver simple(std::function<double(double y, const Vector& z)> f) {
    return [f = std::move(f)](std::size_t, std::size_t, double, const Vector&, double y, const Vector& z) {
        return f(y, z);
    };
}

const PathDriver zero_driver = simple([](double, const Vector&) { return 0.0; });

}  // namespace

TEST_CASE("martingale terminal") {
    const auto e = brownian(2.0, 20, 20000, 1);
    const auto sol = solve_bsde_lsmc(e, terminal_states(e), zero_driver);
    CHECK(std::abs(sol.y0_estimate - 2.0) <= 3.0 * std::max(sol.y0_stderr, 1.0 / std::sqrt(20000.0)));
}

TEST_CASE("linear discount on a constant terminal") {
    const auto e = brownian(0.0, 50, 2000, 2);
    const std::vector<double> xi(e.paths, 1.0);
    const auto sol = solve_bsde_lsmc(e, xi, simple([](double y, const Vector&) { return -0.1 * y; }));
    // two Picard passes approximate the implicit step y_k = y_{k+1} / (1 + 0.1 dt)
    CHECK(sol.y0_estimate == doctest::Approx(std::pow(1.0 + 0.1 / 50, -50)).epsilon(1e-6));
    CHECK(std::abs(sol.y0_estimate - std::exp(-0.1)) <= 3.0 * sol.y0_stderr + 0.1 / 50);
}

TEST_CASE("driver f = z with terminal X_T") {
    const auto e = brownian(0.5, 20, 20000, 3);
    const auto sol = solve_bsde_lsmc(e, terminal_states(e), simple([](double, const Vector& z) { return z(0); }));
    CHECK(sol.y0_estimate == doctest::Approx(1.5).epsilon(0.02));
    double zbar = 0.0;
    for (std::size_t p = 0; p < e.paths; ++p) zbar += sol.z(p, 5)[0];
    CHECK(zbar / static_cast<double>(e.paths) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("terminal exactness and finiteness") {
    const auto e = brownian(0.0, 10, 3000, 4);
    std::vector<double> xi = terminal_states(e);
    for (double& v : xi) v = std::sin(3.0 * v) + v * v;
    const auto sol = solve_bsde_lsmc(e, xi, simple([](double y, const Vector& z) { return -0.2 * y + 0.3 * z(0); }));
    for (std::size_t p = 0; p < e.paths; ++p) {
        CHECK(sol.y(p, 10) == xi[p]);
        CHECK(sol.z(p, 10)[0] == 0.0);
        for (std::size_t k = 0; k < 10; ++k) CHECK(std::isfinite(sol.y(p, k)));
    }
}

TEST_CASE("mean preservation with a zero driver") {
    const auto e = brownian(0.0, 12, 5000, 5);
    std::vector<double> xi = terminal_states(e);
    for (double& v : xi) v = std::exp(0.5 * v);
    const auto sol = solve_bsde_lsmc(e, xi, zero_driver);
    const double mean = std::accumulate(xi.begin(), xi.end(), 0.0) / static_cast<double>(xi.size());
    CHECK(sol.y0_estimate == doctest::Approx(mean).epsilon(1e-10));
}

TEST_CASE("stability in a constant shift of the terminal") {
    const auto e = brownian(0.0, 16, 4000, 6);
    auto xi = terminal_states(e);
    auto shifted = xi;
    for (double& v : shifted) v += 0.25;
    const auto a = solve_bsde_lsmc(e, xi, zero_driver);
    const auto b = solve_bsde_lsmc(e, shifted, zero_driver);
    CHECK(b.y0_estimate - a.y0_estimate == doctest::Approx(0.25).epsilon(1e-10));

    // y-dependent driver: fitted constant settles under refinement
    const auto f = simple([](double y, const Vector& z) { return -0.1 * y + 0.2 * z(0); });
    double c[2];
    for (int i = 0; i < 2; ++i) {
        const auto ei = brownian(0.0, i == 0 ? 16 : 32, 4000, 7);
        auto x1 = terminal_states(ei);
        auto x2 = x1;
        for (double& v : x2) v += 0.25;
        c[i] = std::abs(solve_bsde_lsmc(ei, x2, f).y0_estimate - solve_bsde_lsmc(ei, x1, f).y0_estimate) / 0.25;
    }
    CHECK(c[0] <= 1.0);
    CHECK(std::abs(c[0] - c[1]) <= 0.05 * c[1]);
}

TEST_CASE("Picard depth on the discounted problem") {
    const auto op = discount_problem();
    const TimeGrid grid(0.0, op.horizon, 20);
    auto noise = std::make_shared<const NoiseStore>(8, 20000, 20, 1, grid.dt());
    const auto e = simulate_forward(constant_policy(0), op, grid, {vec1(1.0)}, noise);
    std::vector<double> xi(e.paths);
    for (std::size_t p = 0; p < e.paths; ++p) xi[p] = op.terminal(e.state_vector(p, 20));
    BsdeOptions two, four;
    four.picard_iters = 4;
    const auto a = solve_bsde_lsmc(e, xi, controlled_driver(op, e), two);
    const auto b = solve_bsde_lsmc(e, xi, controlled_driver(op, e), four);
    CHECK(std::abs(a.y0_estimate - b.y0_estimate) < a.y0_stderr);
    CHECK(b.picard_residual <= a.picard_residual + 1e-15);
}

TEST_CASE("comparison of shifted terminals") {
    const auto e = brownian(0.0, 10, 4000, 9);
    const auto xi = terminal_states(e);
    auto up = xi;
    for (double& v : up) v += 1.0;
    const auto s1 = solve_bsde_lsmc(e, xi, zero_driver);
    const auto s2 = solve_bsde_lsmc(e, up, zero_driver);
    const auto r = check_bsde_comparison(s1, s2, 1e-9);
    CHECK(r.ordered);
    CHECK(r.worst_margin == doctest::Approx(-1.0).epsilon(1e-8));

    const auto same = check_bsde_comparison(s1, s1, 0.0);
    CHECK(same.ordered);
    CHECK(same.worst_margin == 0.0);

    const auto reversed = check_bsde_comparison(s2, s1, 1e-9);
    CHECK_FALSE(reversed.ordered);

    const auto other = solve_bsde_lsmc(brownian(0.0, 5, 4000, 9), xi, zero_driver);
    CHECK_THROWS_AS(check_bsde_comparison(s1, other, 0.0), InputError);
}

TEST_CASE("zero-noise backward ODE") {
    const TimeGrid g4(0.0, 1.0, 10000);
    const auto flat = solve_bsde_zero_noise(2.5, [](double, double) { return 0.0; }, TimeGrid(0.0, 1.0, 7));
    for (double v : flat) CHECK(v == 2.5);

    const auto disc = solve_bsde_zero_noise(1.0, [](double, double y) { return -0.1 * y; }, g4);
    CHECK(disc.size() == 10001);
    CHECK(std::abs(disc.front() - std::exp(-0.1)) <= 1e-5);

    const auto unit = solve_bsde_zero_noise(0.0, [](double, double) { return 1.0; }, TimeGrid(0.0, 1.0, 13));
    CHECK(std::abs(unit.front() - 1.0) <= 1e-12);

    CHECK_THROWS_AS(solve_bsde_zero_noise(1.0, [](double, double) { return std::nan(""); }, TimeGrid(0.0, 1.0, 3)),
                    NumericError);
}

TEST_CASE("strict zero-noise comparison") {
    const TimeGrid g(0.0, 1.0, 1000);
    const auto lo = solve_bsde_zero_noise(1.0, [](double t, double y) { return -0.1 * y + t; }, g);
    const auto hi = solve_bsde_zero_noise(1.0, [](double t, double y) { return -0.1 * y + t + 0.01; }, g);
    CHECK(lo.front() < hi.front());
    for (std::size_t k = 0; k + 1 < lo.size(); ++k) CHECK(lo[k] < hi[k]);
    CHECK(lo.back() == hi.back());
}

TEST_CASE("stopped BSDE stays constant after the exit") {
    const auto e = brownian(0.0, 50, 20000, 10);
    const auto stopped = stop_at_first_exit(e, vec1(-1.0), vec1(1.0));
    const auto xi = terminal_states(stopped);  // frozen, so X_tau for exited paths
    const auto sol = solve_bsde_lsmc(stopped, xi, stopped_driver(zero_driver, stopped.stop_steps));
    const auto r = check_stopped_bsde(sol, stopped.stop_steps, 5e-2);
    CHECK(r.ok);
    CHECK(r.worst_y_deviation <= 5e-2);

    const std::vector<std::size_t> never(e.paths, 50);
    CHECK(check_stopped_bsde(solve_bsde_lsmc(e, terminal_states(e), zero_driver), never, 0.0).ok);

    const std::vector<std::size_t> at_start(e.paths, 0);
    const auto frozen = stop_at_first_exit(e, vec1(1.0), vec1(1.0));  // x0 = 0 is already outside
    REQUIRE(frozen.stop_steps == at_start);
    const std::vector<double> c(e.paths, 3.0);
    const auto flat = solve_bsde_lsmc(frozen, c, stopped_driver(zero_driver, at_start));
    const auto fr = check_stopped_bsde(flat, at_start, 1e-9);
    CHECK(fr.ok);
    CHECK(flat.y0_estimate == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("stopped driver vanishes from the stopping step") {
    const auto d = stopped_driver(simple([](double, const Vector&) { return 1.0; }), {3, 0});
    const Vector x = vec1(0.0), z = vec1(0.0);
    CHECK(d(0, 2, 0.0, x, 0.0, z) == 1.0);
    CHECK(d(0, 3, 0.0, x, 0.0, z) == 0.0);
    CHECK(d(1, 0, 0.0, x, 0.0, z) == 0.0);
}

TEST_CASE("regression") {
    RegressionBasis basis;
    CHECK(basis.exponents(1).size() == 4);
    CHECK(basis.exponents(2).size() == 10);
    RegressionBasis tensor{RegressionBasis::Kind::tensor, 2};
    CHECK(tensor.exponents(2).size() == 9);
    CHECK(basis.exponents(0).size() == 1);

    // a cubic is reproduced exactly
    Matrix s(30, 1), r(30, 1);
    for (int i = 0; i < 30; ++i) {
        s(i, 0) = -1.0 + i / 15.0;
        r(i, 0) = 1.0 - 2.0 * s(i, 0) + std::pow(s(i, 0), 3);
    }
    CHECK((regress(s, r, basis) - r).cwiseAbs().maxCoeff() <= 1e-10);

    Matrix few(3, 1), resp(3, 1);
    few << 0.0, 1.0, 2.0;
    resp << 1.0, 2.0, 3.0;
    CHECK_THROWS_AS(regress(few, resp, basis), SolverError);
}

TEST_CASE("non-finite values are reported") {
    const auto e = brownian(0.0, 5, 500, 11);
    auto xi = terminal_states(e);
    CHECK_THROWS_AS(solve_bsde_lsmc(e, xi, simple([](double, const Vector&) { return std::nan(""); })), NumericError);
    xi[3] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(solve_bsde_lsmc(e, xi, zero_driver), InputError);
}

TEST_CASE("BSDE CSV layout") {
    const auto e = brownian(0.0, 2, 2, 12);
    const std::vector<double> xi(2, 1.0);
    RegressionBasis constant{RegressionBasis::Kind::total_degree, 0};
    const auto sol = solve_bsde_lsmc(e, xi, zero_driver, BsdeOptions{constant, 2});
    std::ostringstream out;
    write_bsde_csv(out, sol);
    CHECK(out.str().rfind("path,step,Y,Z_1\r\n", 0) == 0);
}
