#include "nlfk/quadrature.hpp"

#include "nlfk/errors.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace nlfk {

GaussHermiteRule gauss_hermite(std::size_t n) {
    if (n < 1) throw InputError("gauss_hermite: need at least one node");
    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite recurrence
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 1; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        J(ii, ii - 1) = J(ii - 1, ii) = std::sqrt(static_cast<double>(i));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    GaussHermiteRule rule;
    for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        rule.nodes.push_back(es.eigenvalues()(ii));
        const double v0 = es.eigenvectors()(0, ii);
        rule.weights.push_back(v0 * v0);
    }
    // exact symmetry: average mirrored pairs
    for (std::size_t i = 0; i < n / 2; ++i) {
        const std::size_t j = n - 1 - i;
        const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = rule.weights[j] = w;
    }
    if (n % 2) rule.nodes[n / 2] = 0.0;
    return rule;
}

TensorRule gauss_hermite_tensor(std::size_t n, std::size_t dims) {
    if (dims < 1) throw InputError("gauss_hermite_tensor: need dims >= 1");
    const auto base = gauss_hermite(n);
    TensorRule rule;
    rule.dims = dims;
    std::size_t total = 1;
    for (std::size_t d = 0; d < dims; ++d) total *= n;
    for (std::size_t q = 0; q < total; ++q) {
        std::size_t r = q;
        double w = 1.0;
        for (std::size_t d = 0; d < dims; ++d) {
            const std::size_t i = r % n;
            r /= n;
            rule.points.push_back(base.nodes[i]);
            w *= base.weights[i];
        }
        rule.weights.push_back(w);
    }
    return rule;
}

}  // namespace nlfk
