#pragma once

#include "nlfk/model.hpp"
#include "nlfk/problems.hpp"
#include "nlfk/rng.hpp"

#include <cstdint>

namespace nlfk::testing {

inline Vector vec1(double v) { return Vector::Constant(1, v); }
inline Matrix mat1(double v) { return Matrix::Constant(1, 1, v); }

inline CoefficientField constant_control(const Vector& b, const Matrix& sigma) {
    return CoefficientField{FieldSpec::constant(b), FieldSpec::constant(sigma), 0.0};
}

inline Matrix random_symmetric(SampleStream& rng, std::size_t n, double scale = 3.0) {
    const auto k = static_cast<Eigen::Index>(n);
    Matrix a(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) a(i, j) = rng.uniform(-scale, scale);
    return 0.5 * (a + a.transpose());
}

/// Positive semidefinite with unit Frobenius norm.
inline Matrix random_psd_unit(SampleStream& rng, std::size_t n) {
    const auto k = static_cast<Eigen::Index>(n);
    Matrix g(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j) g(i, j) = rng.normal();
    Matrix s = g * g.transpose();
    return s / s.norm();
}

/// Two-dimensional family with state-dependent, non-commuting diffusions.
inline OperatorSpec planar_family() {
    OperatorSpec op;
    op.state_dim = 2;
    op.noise_dim = 2;
    op.horizon = 1.0;
    Matrix A(2, 2);
    A << -0.5, 0.2, 0.1, -0.3;
    Matrix s1(2, 2), s2(2, 2);
    s1 << 1.0, 0.0, 0.3, 0.8;
    s2 << 1.5, -0.2, 0.0, 1.1;
    op.controls.push_back(
        CoefficientField{FieldSpec::affine_drift(A, Vector::Zero(2)), FieldSpec::constant(s1), 1.0});
    op.controls.push_back(CoefficientField{FieldSpec::constant(Vector::Constant(2, 0.2)), FieldSpec::constant(s2), 0.0});
    op.driver = DriverSpec::affine(0.1, -0.2, Vector::Constant(2, 0.3));
    op.terminal = TerminalSpec::named("norm");
    op.terminal.lipschitz_bound = 1.0;
    op.terminal.growth_bound = 1.0;
    op.ellipticity_lambda = 0.5 * sampled_min_diffusion_eigenvalue(op, 256, 3);
    return op;
}

}  // namespace nlfk::testing
