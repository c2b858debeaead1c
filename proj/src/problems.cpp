#include "nlfk/problems.hpp"

#include "nlfk/errors.hpp"

namespace nlfk {

OperatorSpec scalar_volatility_problem(const std::vector<double>& sigmas, DriverSpec driver, TerminalSpec terminal,
                                       double horizon) {
    if (sigmas.empty()) throw InputError("scalar problem: need at least one volatility");
    OperatorSpec op;
    double smin = sigmas.front();
    for (double s : sigmas) {
        op.controls.push_back(CoefficientField{FieldSpec::constant(Matrix::Zero(1, 1)),
                                               FieldSpec::constant(Matrix::Constant(1, 1, s)), 0.0});
        smin = std::min(smin, std::abs(s));
    }
    op.driver = std::move(driver);
    op.terminal = std::move(terminal);
    op.horizon = horizon;
    op.state_dim = 1;
    op.noise_dim = 1;
    op.ellipticity_lambda = 0.5 * smin * smin;
    return op;
}

OperatorSpec heat_problem(double horizon) {
    auto g = TerminalSpec::named("square_norm");
    return scalar_volatility_problem({1.0}, DriverSpec::zero(), g, horizon);
}

OperatorSpec gheat_problem(bool convex, double horizon) {
    auto g = TerminalSpec::named("square_norm", convex ? 1.0 : -1.0);
    return scalar_volatility_problem({1.0, 2.0}, DriverSpec::zero(), g, horizon);
}

OperatorSpec discount_problem(double horizon) {
    auto g = TerminalSpec::named("first");
    return scalar_volatility_problem({1.0}, DriverSpec::linear_in_y(-0.1), g, horizon);
}

std::vector<std::pair<std::string, OperatorSpec>> standard_battery() {
    return {{"heat", heat_problem()}, {"gheat", gheat_problem()}, {"discount", discount_problem()}};
}

}  // namespace nlfk
