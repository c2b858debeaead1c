#include "doctest.h"

#include "support.hpp"

#include "nlfk/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

using namespace nlfk;
using namespace nlfk::testing;

TEST_CASE("eval_generator reduces to its individual terms") {
    const Vector zero = vec1(0.0);
    const auto heat = constant_control(vec1(0.0), mat1(1.0));
    CHECK(eval_generator(heat, DriverSpec::zero(), 0.0, zero, 0.0, vec1(0.0), mat1(2.0)) == doctest::Approx(1.0));

    const auto transport = constant_control(vec1(1.0), mat1(0.0));
    CHECK(eval_generator(transport, DriverSpec::zero(), 0.0, zero, 0.0, vec1(3.0), mat1(0.0)) == doctest::Approx(3.0));

    CHECK(eval_generator(heat, DriverSpec::linear_in_y(-0.1), 0.0, zero, 5.0, vec1(0.0), mat1(0.0)) ==
          doctest::Approx(-0.5));
}

TEST_CASE("eval_generator passes z = sigma^T p to the driver") {
    const auto c = constant_control(vec1(0.0), mat1(2.0));
    const auto f = DriverSpec::linear_in_z(vec1(0.5));
    // z = 2 * 3 = 6, f = 3
    CHECK(eval_generator(c, f, 0.0, vec1(0.0), 0.0, vec1(3.0), mat1(0.0)) == doctest::Approx(3.0));
}

TEST_CASE("eval_F takes the max with ties to the smallest index") {
    const auto single = heat_problem();
    auto r = eval_F(single, 0.0, vec1(0.0), 0.0, vec1(0.0), mat1(2.0));
    CHECK(r.value == doctest::Approx(1.0));
    CHECK(r.argmax == 0);

    const auto g = gheat_problem();
    r = eval_F(g, 0.0, vec1(0.0), 0.0, vec1(0.0), mat1(-1.0));
    CHECK(r.value == doctest::Approx(-0.5));
    CHECK(r.argmax == 0);
    r = eval_F(g, 0.0, vec1(0.0), 0.0, vec1(0.0), mat1(1.0));
    CHECK(r.value == doctest::Approx(2.0));
    CHECK(r.argmax == 1);

    // S = 0: both generators vanish, the first one wins
    r = eval_F(g, 0.0, vec1(0.0), 0.0, vec1(0.0), mat1(0.0));
    CHECK(r.value == 0.0);
    CHECK(r.argmax == 0);
}

TEST_CASE("eval_generator rejects malformed input") {
    const auto op = planar_family();
    const Vector x = Vector::Zero(2);
    const Vector p = Vector::Zero(2);
    Matrix S = Matrix::Identity(2, 2);
    CHECK_THROWS_AS(eval_generator(op.controls[0], op.driver, 0.0, vec1(0.0), 0.0, p, S), InputError);
    CHECK_THROWS_AS(eval_generator(op.controls[0], op.driver, 0.0, x, 0.0, vec1(0.0), S), InputError);
    CHECK_THROWS_AS(eval_generator(op.controls[0], op.driver, 0.0, x, 0.0, p, Matrix::Identity(3, 3)), InputError);
    S(0, 1) = 1.0;
    CHECK_THROWS_AS(eval_generator(op.controls[0], op.driver, 0.0, x, 0.0, p, S), InputError);
    CHECK_THROWS_AS(eval_generator(op.controls[0], op.driver, 0.0, x, std::numeric_limits<double>::quiet_NaN(), p,
                                   Matrix::Identity(2, 2)),
                    NumericError);
}

TEST_CASE("operator validation") {
    OperatorSpec op = heat_problem();
    op.controls.clear();
    CHECK_THROWS_AS(op.validate(), InputError);

    op = planar_family();
    op.controls.push_back(constant_control(vec1(0.0), mat1(1.0)));
    CHECK_THROWS_AS(op.validate(), InputError);

    op = heat_problem();
    op.horizon = 0.0;
    CHECK_THROWS_AS(op.validate(), InputError);
}

TEST_CASE("registry lookups") {
    CHECK_THROWS_AS(lookup_terminal("no_such_terminal"), InputError);
    CHECK_THROWS_AS(TerminalSpec::named("no_such_terminal"), InputError);
    CHECK_THROWS_AS(FieldSpec::named("no_such_field", 1, 1), InputError);
    CHECK(lookup_terminal("square_norm")(vec1(3.0)) == 9.0);

    register_terminal("test_cube", [](const Vector& x) { return x(0) * x(0) * x(0); });
    CHECK(TerminalSpec::named("test_cube", 2.0, 1.0)(vec1(2.0)) == doctest::Approx(17.0));
    const auto names = registered_terminals();
    CHECK(std::find(names.begin(), names.end(), "test_cube") != names.end());
}

TEST_CASE("validate_assumptions: constant family with a linear driver has no violations") {
    auto op = discount_problem();
    op.terminal.lipschitz_bound = 1.0;
    op.terminal.growth_bound = 1.0;
    const auto rep = validate_assumptions(op, 2000, 7);
    CHECK(rep.violation_count() == 0);
    REQUIRE(rep.find("driver_monotonicity") != nullptr);
    CHECK(rep.find("driver_monotonicity")->observed == doctest::Approx(-0.1));
    CHECK(rep.min_diffusion_eigenvalue == doctest::Approx(1.0));
}

TEST_CASE("validate_assumptions flags y^2 declared monotone with mu = 0") {
    auto op = heat_problem();
    op.driver = DriverSpec::named("y_squared", 0.0, 0.0);
    op.terminal = TerminalSpec::named("first");
    op.terminal.lipschitz_bound = 1.0;
    op.terminal.growth_bound = 1.0;
    const auto rep = validate_assumptions(op, 500, 1);
    const auto* mono = rep.find("driver_monotonicity");
    REQUIRE(mono != nullptr);
    CHECK(mono->violated);
    CHECK_FALSE(mono->witness.empty());
    CHECK(rep.violation_count() == 1);
}

TEST_CASE("validate_assumptions accepts an affine drift declared with the operator norm of A") {
    Matrix A(2, 2);
    A << 1.0, 2.0, -0.5, 0.3;
    // independent oracle: sqrt of the largest eigenvalue of A^T A
    Eigen::SelfAdjointEigenSolver<Matrix> es(A.transpose() * A);
    const double op_norm = std::sqrt(es.eigenvalues().maxCoeff());

    OperatorSpec op;
    op.state_dim = op.noise_dim = 2;
    op.controls.push_back(
        CoefficientField{FieldSpec::affine_drift(A, Vector::Constant(2, 1.0)), FieldSpec::constant(Matrix::Identity(2, 2)),
                         op_norm});
    op.terminal = TerminalSpec::named("first");
    op.terminal.lipschitz_bound = 1.0;
    op.terminal.growth_bound = 1.0;
    CHECK(op.controls[0].drift.affine_lipschitz() == doctest::Approx(op_norm).epsilon(1e-12));
    CHECK(validate_assumptions(op, 3000, 5).violation_count() == 0);

    op.controls[0].lipschitz_bound = 0.9 * op_norm;
    const auto rep = validate_assumptions(op, 3000, 5);
    CHECK(rep.find("control[0].drift_lipschitz")->violated);
}

TEST_CASE("validate_assumptions flags an overstated ellipticity constant") {
    auto op = gheat_problem();
    op.terminal.lipschitz_bound = 6.0;
    op.terminal.growth_bound = 3.0;
    op.ellipticity_lambda = 0.5;
    CHECK(validate_assumptions(op, 200, 2).violation_count() == 0);
    op.ellipticity_lambda = 0.6;
    CHECK(validate_assumptions(op, 200, 2).find("ellipticity")->violated);
}

TEST_CASE("validate_assumptions is deterministic in the seed") {
    const auto op = planar_family();
    const auto a = validate_assumptions(op, 300, 9);
    const auto b = validate_assumptions(op, 300, 9);
    REQUIRE(a.checks.size() == b.checks.size());
    for (std::size_t i = 0; i < a.checks.size(); ++i) CHECK(a.checks[i].observed == b.checks[i].observed);
}

TEST_CASE("F is convex in S") {
    for (const auto& op : {gheat_problem(), planar_family()}) {
        SampleStream rng(42, 1);
        const std::size_t n = op.state_dim;
        for (int s = 0; s < 500; ++s) {
            Vector x(static_cast<Eigen::Index>(n)), p(static_cast<Eigen::Index>(n));
            for (auto& v : x) v = rng.uniform(-2, 2);
            for (auto& v : p) v = rng.uniform(-2, 2);
            const double y = rng.uniform(-2, 2);
            const double t = rng.uniform(0, 1);
            const Matrix S1 = random_symmetric(rng, n), S2 = random_symmetric(rng, n);
            const double d = rng.uniform();
            const double mix = eval_F(op, t, x, y, p, d * S1 + (1 - d) * S2).value;
            const double chord = d * eval_F(op, t, x, y, p, S1).value + (1 - d) * eval_F(op, t, x, y, p, S2).value;
            CHECK(mix <= chord + 1e-12 * std::max(1.0, std::abs(chord)));
        }
    }
}

TEST_CASE("F is uniformly elliptic with lambda from the sampled diffusion eigenvalues") {
    for (const auto& op : {gheat_problem(), planar_family()}) {
        // the generator carries 1/2 <sigma sigma^T, S>
        const double lambda = 0.5 * sampled_min_diffusion_eigenvalue(op, 512, 4);
        CHECK(lambda > 0.0);
        SampleStream rng(43, 2);
        const std::size_t n = op.state_dim;
        for (int s = 0; s < 500; ++s) {
            Vector x(static_cast<Eigen::Index>(n)), p(static_cast<Eigen::Index>(n));
            for (auto& v : x) v = rng.uniform(-2, 2);
            for (auto& v : p) v = rng.uniform(-2, 2);
            const Matrix S = random_symmetric(rng, n), P = random_psd_unit(rng, n);
            const double gain = eval_F(op, 0.3, x, 0.1, p, S + P).value - eval_F(op, 0.3, x, 0.1, p, S).value;
            CHECK(gain >= lambda - 1e-12);
        }
    }
}

TEST_CASE("F dominates every generator with equality at the argmax") {
    const auto op = planar_family();
    SampleStream rng(44, 3);
    for (int s = 0; s < 300; ++s) {
        Vector x(2), p(2);
        for (auto& v : x) v = rng.uniform(-2, 2);
        for (auto& v : p) v = rng.uniform(-2, 2);
        const Matrix S = random_symmetric(rng, 2);
        const auto env = eval_F(op, 0.5, x, 0.2, p, S);
        for (std::size_t j = 0; j < op.controls.size(); ++j) {
            const double g = eval_generator(op.controls[j], op.driver, 0.5, x, 0.2, p, S);
            CHECK(env.value >= g);
            if (j == env.argmax) CHECK(env.value == g);
        }
    }
}

TEST_CASE("a duplicate control never changes F") {
    const auto op = planar_family();
    auto dup = op;
    dup.controls.push_back(op.controls[1]);
    dup.controls.insert(dup.controls.begin(), op.controls[0]);
    SampleStream rng(45, 4);
    for (int s = 0; s < 300; ++s) {
        Vector x(2), p(2);
        for (auto& v : x) v = rng.uniform(-2, 2);
        for (auto& v : p) v = rng.uniform(-2, 2);
        const Matrix S = random_symmetric(rng, 2);
        CHECK(eval_F(dup, 0.1, x, -0.4, p, S).value == eval_F(op, 0.1, x, -0.4, p, S).value);
    }
}

TEST_CASE("comparison structure of F holds for Lipschitz families") {
    const auto rep = check_comparison_structure(planar_family(), 2000, 11);
    CHECK(rep.ok());
    CHECK(rep.accepted_pairs > 0);
    CHECK(check_comparison_structure(discount_problem(), 500, 11).ok());
}

TEST_CASE("comparison structure flags a driver that increases in y beyond mu") {
    auto op = heat_problem();
    op.driver = DriverSpec::named("y_squared", 0.0, 0.0);
    CHECK(check_comparison_structure(op, 500, 12).worst_monotonicity_excess > 0.0);
}
