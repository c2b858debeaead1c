#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace nlfk {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using FieldFn = std::function<Matrix(double t, const Vector& x)>;

/// A coefficient (t, x) -> rows x cols matrix. Drift fields are N x 1,
/// diffusion fields N x M.
class FieldSpec {
public:
    enum class Kind { constant, affine, named };

    FieldSpec() = default;

    static FieldSpec constant(Matrix value);
    /// value(x) = offset + sum_l x_l * slopes[l]; one slope per state axis.
    static FieldSpec affine(Matrix offset, std::vector<Matrix> slopes);
    /// Drift convenience: b(x) = A x + c.
    static FieldSpec affine_drift(const Matrix& A, const Vector& c);
    /// Resolved from the builtin field registry; throws InputError on unknown names.
    static FieldSpec named(const std::string& name, std::size_t rows, std::size_t cols);

    Matrix operator()(double t, const Vector& x) const;

    Kind kind() const noexcept { return kind_; }
    const std::string& name() const noexcept { return name_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool is_constant() const noexcept { return kind_ == Kind::constant; }
    /// Exact Lipschitz constant (Frobenius) of an affine field; 0 for constants.
    double affine_lipschitz() const;

    const Matrix& offset() const noexcept { return offset_; }
    const std::vector<Matrix>& slopes() const noexcept { return slopes_; }

private:
    Kind kind_ = Kind::constant;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Matrix offset_;
    std::vector<Matrix> slopes_;
    std::string name_;
    FieldFn fn_;
};

/// One admissible pair (b, sigma).
struct CoefficientField {
    FieldSpec drift;
    FieldSpec diffusion;
    double lipschitz_bound = 0.0;

    Vector b(double t, const Vector& x) const { return drift(t, x).col(0); }
    Matrix sigma(double t, const Vector& x) const { return diffusion(t, x); }
};

struct DriverArgs {
    double t;
    const Vector& x;
    const Vector& b;
    const Matrix& sigma;
    double y;
    const Vector& z;
};

using DriverFn = std::function<double(const DriverArgs&)>;

/// The BSDE driver f(t, x, b, sigma, y, z).
class DriverSpec {
public:
    enum class Form { zero, linear_in_y, linear_in_z, affine, named };

    DriverSpec() = default;

    static DriverSpec zero();
    /// f = rate * y
    static DriverSpec linear_in_y(double rate);
    /// f = lambda . z
    static DriverSpec linear_in_z(Vector lambda);
    /// f = offset + rate * y + lambda . z
    static DriverSpec affine(double offset, double rate, Vector lambda);
    static DriverSpec named(const std::string& name, double lipschitz_z, double monotonicity_mu);

    double operator()(const DriverArgs& args) const;

    Form form() const noexcept { return form_; }
    const std::string& name() const noexcept { return name_; }
    bool depends_on_y() const noexcept;
    bool depends_on_z() const noexcept;

    double lipschitz_z = 0.0;
    double monotonicity_mu = 0.0;

    double offset() const noexcept { return offset_; }
    double rate() const noexcept { return rate_; }
    const Vector& lambda_z() const noexcept { return lambda_z_; }

private:
    Form form_ = Form::zero;
    double offset_ = 0.0;
    double rate_ = 0.0;
    Vector lambda_z_;
    std::string name_;
    DriverFn fn_;
};

using TerminalFn = std::function<double(const Vector& x)>;

/// g(x) = scale * h(x) + shift with h from the terminal registry.
class TerminalSpec {
public:
    TerminalSpec() = default;

    static TerminalSpec named(const std::string& name, double scale = 1.0, double shift = 0.0);
    /// Arbitrary callable, for tests and two-stage solves.
    static TerminalSpec custom(std::string label, TerminalFn fn);

    double operator()(const Vector& x) const { return scale_ * fn_(x) + shift_; }

    const std::string& name() const noexcept { return name_; }
    double scale() const noexcept { return scale_; }
    double shift() const noexcept { return shift_; }
    TerminalSpec shifted(double c) const;

    double lipschitz_bound = 0.0;
    double growth_bound = 0.0;

private:
    std::string name_;
    double scale_ = 1.0;
    double shift_ = 0.0;
    TerminalFn fn_;
};

struct OperatorSpec {
    std::vector<CoefficientField> controls;
    DriverSpec driver;
    TerminalSpec terminal;
    double horizon = 1.0;
    std::size_t state_dim = 1;
    std::size_t noise_dim = 1;
    /// F(S + P) - F(S) >= lambda |P| for P >= 0, i.e. lambda <= min eig(sigma sigma^T) / 2.
    double ellipticity_lambda = 0.0;

    /// Throws InputError when dimensions or the control list are inconsistent.
    void validate() const;
};

// Builtin registry. Lookups throw InputError on unknown names.
FieldFn lookup_field(const std::string& name);
DriverFn lookup_driver(const std::string& name);
TerminalFn lookup_terminal(const std::string& name);
std::vector<std::string> registered_fields();
std::vector<std::string> registered_drivers();
std::vector<std::string> registered_terminals();
/// Extension hooks; registration is expected at startup, before any solve.
void register_field(const std::string& name, FieldFn fn);
void register_driver(const std::string& name, DriverFn fn);
void register_terminal(const std::string& name, TerminalFn fn);

/// 1/2 <sigma sigma^T, S> + p^T b + f(t, x, b, sigma, y, sigma^T p)
double eval_generator(const CoefficientField& ctrl, const DriverSpec& driver, double t, const Vector& x,
                      double y, const Vector& p, const Matrix& S);

struct EnvelopeValue {
    double value;
    std::size_t argmax;
};

/// Sup-envelope operator over the finite control family. Ties resolve to
/// the smallest control index.
EnvelopeValue eval_F(const OperatorSpec& op, double t, const Vector& x, double y, const Vector& p,
                     const Matrix& S);

struct BoundCheck {
    std::string name;
    double declared = 0.0;
    double observed = 0.0;  // worst observed ratio / value
    bool violated = false;
    bool certified = true;  // false for report-only moduli
    std::string witness;
};

struct AssumptionReport {
    std::vector<BoundCheck> checks;
    double min_diffusion_eigenvalue = 0.0;

    std::size_t violation_count() const;
    const BoundCheck* find(const std::string& name) const;
};

struct SamplingBox {
    double radius = 3.0;      // |x_i| <= radius
    double y_radius = 5.0;    // |y| <= y_radius
    double z_radius = 5.0;    // |z_i| <= z_radius
};

/// Falsification-by-sampling of the structural assumptions on the datum.
AssumptionReport validate_assumptions(const OperatorSpec& op, std::size_t sample_count, std::uint64_t seed,
                                      const SamplingBox& box = {});

/// Smallest eigenvalue of sigma sigma^T over a seeded sweep of the box and
/// all controls.
double sampled_min_diffusion_eigenvalue(const OperatorSpec& op, std::size_t sample_count, std::uint64_t seed,
                                        const SamplingBox& box = {});

struct ComparisonStructureReport {
    double worst_monotonicity_excess = 0.0;  // max of (G(r)-G(r'))(r-r') - mu|r-r'|^2
    double worst_second_order_excess = 0.0;  // max of <ss^T(x),S> - <ss^T(y),S'> - 3 a l^2 |x-y|^2
    std::size_t accepted_pairs = 0;
    bool ok() const { return worst_monotonicity_excess <= 1e-10 && worst_second_order_excess <= 1e-10; }
};

/// Samples the structural comparison conditions on F: monotonicity in the
/// zeroth-order argument and the doubled-variables matrix bound.
ComparisonStructureReport check_comparison_structure(const OperatorSpec& op, std::size_t sample_count,
                                                     std::uint64_t seed, const SamplingBox& box = {});

}  // namespace nlfk
