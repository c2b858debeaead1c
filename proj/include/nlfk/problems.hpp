#pragma once

#include "nlfk/model.hpp"

#include <string>
#include <vector>

namespace nlfk {

/// Volatility-uncertain scalar problem with controls (b = 0, sigma = s_j),
/// driver f and terminal g on [0, T].
OperatorSpec scalar_volatility_problem(const std::vector<double>& sigmas, DriverSpec driver, TerminalSpec terminal,
                                       double horizon = 1.0);

/// du/dt + u_xx / 2 = 0, g = x^2: u(t, x) = x^2 + T - t.
OperatorSpec heat_problem(double horizon = 1.0);

/// du/dt + sup_{s in {1, 2}} s^2 u_xx / 2 = 0 with g = x^2 (convex) or g = -x^2.
OperatorSpec gheat_problem(bool convex = true, double horizon = 1.0);

/// du/dt + u_xx / 2 - 0.1 u = 0, g = x: u(t, x) = exp(-0.1 (T - t)) x.
OperatorSpec discount_problem(double horizon = 1.0);

/// The three-problem battery: heat, convex G-heat, discount.
std::vector<std::pair<std::string, OperatorSpec>> standard_battery();

}  // namespace nlfk
