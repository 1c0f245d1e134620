#pragma once

#include "dnd/types.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace dnd {

// Parameters of the bundled test problems.
struct Rotation41 {
    double b = -4.0;
    double sigma = 8.0;
    double epsilon = 8.0;
    friend bool operator==(const Rotation41&, const Rotation41&) = default;
};

struct GinzburgLandau46 {
    double a = 1.0;
    double b = 1.0;
    double sigma = 2.0;
    friend bool operator==(const GinzburgLandau46&, const GinzburgLandau46&) = default;
};

struct NonlinearRot47 {
    double a = 6.0;
    double b = 3.0;
    friend bool operator==(const NonlinearRot47&, const NonlinearRot47&) = default;
};

/// nonlinear_rot47 with a = 6, b = 3 and constant vectors added to both diffusions.
struct Shifted48 {
    friend bool operator==(const Shifted48&, const Shifted48&) = default;
};

using TestProblemId = std::variant<Rotation41, GinzburgLandau46, NonlinearRot47, Shifted48>;

std::string problem_name(const TestProblemId& id);

/**
 * Autonomous Ito SDE  dX = b(X) dt + sum_k sigma^k(X) dW^k  in R^d driven by m
 * independent Wiener processes.
 *
 * Implementations are immutable after construction; every method is a pure
 * function of its arguments and may be called concurrently. Diffusion indices
 * are zero-based.
 */
class SdeModel {
public:
    SdeModel(int dim, int noise_count);
    virtual ~SdeModel() = default;

    int dim() const noexcept { return dim_; }
    int noise_count() const noexcept { return noise_count_; }

    virtual std::string name() const = 0;

    virtual Vector drift(const Vector& x) const = 0;
    virtual Vector diffusion(int k, const Vector& x) const = 0;

    /// True when drift_jacobian / diffusion_jacobian are available everywhere.
    virtual bool has_jacobian() const { return false; }
    virtual Matrix drift_jacobian(const Vector& x) const;
    virtual Matrix diffusion_jacobian(int k, const Vector& x) const;

    // Jacobians at the origin. Defaults evaluate the full Jacobian at 0.
    virtual Matrix drift_jacobian_at_zero() const;
    virtual Matrix diffusion_jacobian_at_zero(int k) const;

    /// Closed-form b(eta z)/eta and sigma^k(eta z)/eta, valid for eta >= 0 and |z| = 1.
    virtual bool has_normalized_forms() const { return false; }
    virtual Vector normalized_drift_form(double eta, const Vector& z) const;
    virtual Vector normalized_diffusion_form(int k, double eta, const Vector& z) const;

    /// Second directional derivatives D^2 f(0)[z, z]; enables the first-order
    /// Taylor term of the normalized coefficients near eta = 0.
    virtual bool has_second_derivatives() const { return false; }
    virtual Vector drift_second_directional(const Vector& z) const;
    virtual Vector diffusion_second_directional(int k, const Vector& z) const;

    /// Drift is x -> Bx for a constant matrix B (drift_jacobian_at_zero()).
    virtual bool linear_drift() const { return false; }

    /// b(0) = sigma^1(0) = ... = sigma^m(0) = 0, checked to 1e-14.
    virtual bool equilibrium_at_zero() const;

    /// Scale of the state used by the eta = 0 switching rule.
    virtual double eta_scale() const { return 0.0; }

    virtual std::optional<TestProblemId> problem() const { return std::nullopt; }

    /// Plain-double access for d = m = 1 models. When true, scalar_drift and
    /// scalar_diffusion agree with drift and diffusion.
    virtual bool has_scalar_form() const { return false; }
    /// b(x), and b'(x) through `slope` when non-null.
    virtual double scalar_drift(double x, double* slope = nullptr) const;
    virtual double scalar_diffusion(double x) const;

private:
    int dim_;
    int noise_count_;
};

using ModelPtr = std::shared_ptr<const SdeModel>;

/// dX = B X dt + sum_k sigma_k X dW^k.
class BilinearModel : public SdeModel {
public:
    BilinearModel(Matrix drift_matrix, std::vector<Matrix> diffusion_matrices);

    std::string name() const override { return "bilinear"; }

    const Matrix& drift_matrix() const noexcept { return drift_; }
    const Matrix& diffusion_matrix(int k) const { return diffusions_.at(static_cast<std::size_t>(k)); }
    const std::vector<Matrix>& diffusion_matrices() const noexcept { return diffusions_; }

    Vector drift(const Vector& x) const override { return drift_ * x; }
    Vector diffusion(int k, const Vector& x) const override {
        return diffusions_[static_cast<std::size_t>(k)] * x;
    }

    bool has_jacobian() const override { return true; }
    Matrix drift_jacobian(const Vector&) const override { return drift_; }
    Matrix diffusion_jacobian(int k, const Vector&) const override {
        return diffusions_[static_cast<std::size_t>(k)];
    }

    bool has_normalized_forms() const override { return true; }
    Vector normalized_drift_form(double, const Vector& z) const override { return drift_ * z; }
    Vector normalized_diffusion_form(int k, double, const Vector& z) const override {
        return diffusions_[static_cast<std::size_t>(k)] * z;
    }

    bool has_second_derivatives() const override { return true; }
    Vector drift_second_directional(const Vector& z) const override;
    Vector diffusion_second_directional(int k, const Vector& z) const override;

    bool linear_drift() const override { return true; }
    bool equilibrium_at_zero() const override { return true; }

private:
    Matrix drift_;
    std::vector<Matrix> diffusions_;
};

/// Model assembled from callables; anything left empty is reported as unavailable.
class FunctionModel : public SdeModel {
public:
    struct Spec {
        int dim = 1;
        int noise_count = 1;
        std::string name = "custom";
        std::function<Vector(const Vector&)> drift;
        std::function<Vector(int, const Vector&)> diffusion;
        std::function<Matrix(const Vector&)> drift_jacobian;
        std::function<Matrix(int, const Vector&)> diffusion_jacobian;
        std::optional<Matrix> drift_jacobian_at_zero;
        std::vector<Matrix> diffusion_jacobians_at_zero;
        std::function<Vector(double, const Vector&)> normalized_drift;
        std::function<Vector(int, double, const Vector&)> normalized_diffusion;
        std::function<Vector(const Vector&)> drift_second_directional;
        std::function<Vector(int, const Vector&)> diffusion_second_directional;
        bool linear_drift = false;
    };

    explicit FunctionModel(Spec spec);

    std::string name() const override { return spec_.name; }
    Vector drift(const Vector& x) const override { return spec_.drift(x); }
    Vector diffusion(int k, const Vector& x) const override { return spec_.diffusion(k, x); }

    bool has_jacobian() const override;
    Matrix drift_jacobian(const Vector& x) const override;
    Matrix diffusion_jacobian(int k, const Vector& x) const override;
    Matrix drift_jacobian_at_zero() const override;
    Matrix diffusion_jacobian_at_zero(int k) const override;

    bool has_normalized_forms() const override;
    Vector normalized_drift_form(double eta, const Vector& z) const override;
    Vector normalized_diffusion_form(int k, double eta, const Vector& z) const override;

    bool has_second_derivatives() const override;
    Vector drift_second_directional(const Vector& z) const override;
    Vector diffusion_second_directional(int k, const Vector& z) const override;

    bool linear_drift() const override { return spec_.linear_drift; }

private:
    Spec spec_;
};

/**
 * The R^{d+1} system with equilibrium at 0 obtained by appending the constant
 * component V = alpha:  f(x, v) = (b(x) - b(0) + b(0) v / alpha, 0), and the
 * same construction for every diffusion.
 */
class AugmentedModel : public SdeModel {
public:
    AugmentedModel(ModelPtr base, double alpha);

    std::string name() const override { return base_->name() + "+augmented"; }
    const SdeModel& base() const noexcept { return *base_; }
    double alpha() const noexcept { return alpha_; }

    Vector drift(const Vector& xv) const override;
    Vector diffusion(int k, const Vector& xv) const override;
    Matrix drift_jacobian_at_zero() const override;
    Matrix diffusion_jacobian_at_zero(int k) const override;
    bool equilibrium_at_zero() const override { return true; }

private:
    Vector lift(const Vector& fx, const Vector& f0, double v) const;

    ModelPtr base_;
    double alpha_;
    Vector drift0_;
    std::vector<Vector> diffusion0_;
};

/// Scalar test functional phi: R^d -> R of one coordinate.
class Functional {
public:
    Functional() = default;
    Functional(std::string kind, int coordinate, std::function<double(double)> fn)
        : kind_(std::move(kind)), coordinate_(coordinate), fn_(std::move(fn)) {}

    double operator()(const Vector& x) const { return fn_(x(coordinate_)); }

    const std::string& kind() const noexcept { return kind_; }
    /// Zero-based coordinate index.
    int coordinate() const noexcept { return coordinate_; }
    /// e.g. "log1p_sq[1]" with a one-based coordinate.
    std::string label() const;

private:
    std::string kind_;
    int coordinate_ = 0;
    std::function<double(double)> fn_;
};

/// log(1 + x_i^2)
Functional log1p_sq(int coordinate);
/// arctan(1 + x_i^2)
Functional atan1p_sq(int coordinate);

/// Register an additional functional kind usable from experiment plans.
void register_functional(const std::string& kind, std::function<double(double)> fn);
/// Look up a functional kind; throws ParameterError if unknown.
Functional make_functional(const std::string& kind, int coordinate);
std::vector<std::string> functional_kinds();

}  // namespace dnd
