#pragma once

#include <cstddef>
#include <vector>

namespace nlfk {

/// Gauss-Hermite rule for the standard normal: sum_q w_q h(x_q) ~ E h(xi),
/// exact for polynomials of degree <= 2n - 1. Weights sum to one.
struct GaussHermiteRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

GaussHermiteRule gauss_hermite(std::size_t n);

/// Tensor product of the 1-d rule over `dims` axes; points are row-major
/// (point q occupies points[q * dims .. q * dims + dims)).
struct TensorRule {
    std::size_t dims = 0;
    std::vector<double> points;
    std::vector<double> weights;
    std::size_t size() const { return weights.size(); }
};

TensorRule gauss_hermite_tensor(std::size_t n, std::size_t dims);

}  // namespace nlfk
