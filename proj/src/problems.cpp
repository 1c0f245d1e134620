#include "dnd/problems.hpp"

#include "dnd/dnd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dnd {

namespace {

Matrix rotation_generator() {
    Matrix j(2, 2);
    j << 0.0, -1.0, 1.0, 0.0;
    return j;
}

class Rotation41Model final : public BilinearModel {
public:
    explicit Rotation41Model(const Rotation41& p)
        : BilinearModel(p.b * Matrix::Identity(2, 2),
                        {p.sigma * Matrix::Identity(2, 2), p.epsilon * rotation_generator()}),
          params_(p) {}

    std::string name() const override { return "rotation41"; }
    std::optional<TestProblemId> problem() const override { return params_; }
    const Rotation41& params() const noexcept { return params_; }

private:
    Rotation41 params_;
};

/// dX = (a X - b X^3) dt + sigma X dW.
class GinzburgLandauModel final : public SdeModel {
public:
    explicit GinzburgLandauModel(const GinzburgLandau46& p) : SdeModel(1, 1), p_(p) {}

    std::string name() const override { return "ginzburg_landau46"; }
    std::optional<TestProblemId> problem() const override { return p_; }

    Vector drift(const Vector& x) const override {
        const double v = x(0);
        return Vector::Constant(1, p_.a * v - p_.b * v * v * v);
    }
    Vector diffusion(int, const Vector& x) const override { return Vector::Constant(1, p_.sigma * x(0)); }

    bool has_jacobian() const override { return true; }
    Matrix drift_jacobian(const Vector& x) const override {
        return Matrix::Constant(1, 1, p_.a - 3.0 * p_.b * x(0) * x(0));
    }
    Matrix diffusion_jacobian(int, const Vector&) const override { return Matrix::Constant(1, 1, p_.sigma); }

    bool has_normalized_forms() const override { return true; }
    Vector normalized_drift_form(double eta, const Vector& z) const override {
        return Vector::Constant(1, (p_.a - p_.b * eta * eta) * z(0));
    }
    Vector normalized_diffusion_form(int, double, const Vector& z) const override {
        return Vector::Constant(1, p_.sigma * z(0));
    }

    bool equilibrium_at_zero() const override { return true; }

    bool has_scalar_form() const override { return true; }
    double scalar_drift(double x, double* slope) const override {
        if (slope) *slope = p_.a - 3.0 * p_.b * x * x;
        return p_.a * x - p_.b * x * x * x;
    }
    double scalar_diffusion(double x) const override { return p_.sigma * x; }

private:
    GinzburgLandau46 p_;
};

/**
 * Driftless 2-d system
 *   sigma^1(x) = a sqrt(2 + cos x1) x + c1,
 *   sigma^2(x) = b sqrt(2 + sin x2) (-x2, x1) + c2,
 * with constant shifts c1, c2 (zero for the equilibrium variant).
 */
class NonlinearRotationModel final : public SdeModel {
public:
    NonlinearRotationModel(double a, double b, Vector c1, Vector c2, std::optional<TestProblemId> id)
        : SdeModel(2, 2), a_(a), b_(b), c1_(std::move(c1)), c2_(std::move(c2)), id_(std::move(id)),
          equilibrium_(c1_.isZero(0.0) && c2_.isZero(0.0)) {}

    std::string name() const override { return id_ ? problem_name(*id_) : "nonlinear_rotation"; }
    std::optional<TestProblemId> problem() const override { return id_; }

    Vector drift(const Vector&) const override { return Vector::Zero(2); }

    Vector diffusion(int k, const Vector& x) const override {
        if (k == 0) return a_ * std::sqrt(2.0 + std::cos(x(0))) * x + c1_;
        return b_ * std::sqrt(2.0 + std::sin(x(1))) * make_vector({-x(1), x(0)}) + c2_;
    }

    bool has_jacobian() const override { return true; }
    Matrix drift_jacobian(const Vector&) const override { return Matrix::Zero(2, 2); }

    Matrix diffusion_jacobian(int k, const Vector& x) const override {
        Matrix j(2, 2);
        if (k == 0) {
            const double r = std::sqrt(2.0 + std::cos(x(0)));
            const double dr = -std::sin(x(0)) / (2.0 * r);
            j << a_ * r + a_ * dr * x(0), 0.0, a_ * dr * x(1), a_ * r;
        } else {
            const double r = std::sqrt(2.0 + std::sin(x(1)));
            const double dr = std::cos(x(1)) / (2.0 * r);
            j << 0.0, -b_ * r - b_ * dr * x(1), b_ * r, b_ * dr * x(0);
        }
        return j;
    }

    // b(eta z)/eta and sigma^k(eta z)/eta; the shifted variant has no limit at eta = 0.
    bool has_normalized_forms() const override { return true; }
    Vector normalized_drift_form(double, const Vector&) const override { return Vector::Zero(2); }
    Vector normalized_diffusion_form(int k, double eta, const Vector& z) const override {
        Vector out = k == 0 ? Vector(a_ * std::sqrt(2.0 + std::cos(eta * z(0))) * z)
                            : Vector(b_ * std::sqrt(2.0 + std::sin(eta * z(1))) * make_vector({-z(1), z(0)}));
        if (!equilibrium_) out += (k == 0 ? c1_ : c2_) / eta;
        return out;
    }

    bool equilibrium_at_zero() const override { return equilibrium_; }

private:
    double a_;
    double b_;
    Vector c1_;
    Vector c2_;
    std::optional<TestProblemId> id_;
    bool equilibrium_;
};

void require_finite_params(std::initializer_list<double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) throw ParameterError("test problem parameters must be finite");
    }
}

struct Builder {
    ModelPtr operator()(const Rotation41& p) const {
        require_finite_params({p.b, p.sigma, p.epsilon});
        return std::make_shared<Rotation41Model>(p);
    }
    ModelPtr operator()(const GinzburgLandau46& p) const {
        require_finite_params({p.a, p.b, p.sigma});
        if (!(p.b > 0.0) || !(p.sigma > 0.0)) {
            throw ParameterError("Ginzburg-Landau problem needs b > 0 and sigma > 0");
        }
        return std::make_shared<GinzburgLandauModel>(p);
    }
    ModelPtr operator()(const NonlinearRot47& p) const {
        require_finite_params({p.a, p.b});
        return std::make_shared<NonlinearRotationModel>(p.a, p.b, Vector::Zero(2), Vector::Zero(2), p);
    }
    ModelPtr operator()(const Shifted48& p) const {
        return std::make_shared<NonlinearRotationModel>(6.0, 3.0, make_vector({2.0, 0.5}),
                                                        make_vector({1.0, -1.0}), p);
    }
};

}  // namespace

ModelPtr make_test_problem(const TestProblemId& id) { return std::visit(Builder{}, id); }

std::optional<Rotation41> rotation41_params(const SdeModel& model) {
    const auto id = model.problem();
    if (!id) return std::nullopt;
    if (const auto* p = std::get_if<Rotation41>(&*id)) return *p;
    return std::nullopt;
}

Vector exact_rotation41(const Rotation41& p, const Vector& x0, double t, double w1, double w2) {
    const double growth =
        std::exp((p.b - 0.5 * p.sigma * p.sigma + 0.5 * p.epsilon * p.epsilon) * t + p.sigma * w1);
    const double angle = p.epsilon * w2;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return make_vector({growth * (c * x0(0) - s * x0(1)), growth * (s * x0(0) + c * x0(1))});
}

std::vector<Vector> exact_rotation41_path(const SdeModel& model, const Vector& x0, std::span<const double> times,
                                          std::span<const double> w1, std::span<const double> w2) {
    const auto p = rotation41_params(model);
    if (!p) throw UnsupportedModelError("exact pathwise solution is available for rotation41 only");
    if (x0.size() != 2) throw PreconditionError("rotation41 initial state must be two-dimensional");
    if (w1.size() != times.size() || w2.size() != times.size()) {
        throw PreconditionError("Brownian values must match the time grid");
    }
    std::vector<Vector> out;
    out.reserve(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) out.push_back(exact_rotation41(*p, x0, times[i], w1[i], w2[i]));
    return out;
}

StabilityMargin stability_margin(const SdeModel& model, std::size_t n_probe, NoiseStream& stream) {
    if (n_probe < 1) throw ParameterError("at least one probe required");
    if (!model.equilibrium_at_zero()) {
        throw UnsupportedModelError("stability margin needs an equilibrium at the origin");
    }
    constexpr double kLogMin = -4.0;
    constexpr double kLogMax = 3.0;
    const int d = model.dim();

    double sup = -std::numeric_limits<double>::infinity();
    bool unstable_ok = true;
    for (std::size_t i = 0; i < n_probe; ++i) {
        Vector z(d);
        do {
            for (int j = 0; j < d; ++j) z(j) = stream.next_gaussian();
        } while (z.norm() == 0.0);
        z /= z.norm();
        const double frac = n_probe == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n_probe - 1);
        const double eta = std::pow(10.0, kLogMin + (kLogMax - kLogMin) * frac);

        const Vector bbar = normalized_drift(model, eta, z);
        double radial = z.dot(bbar);
        double squares = 0.0;
        for (int k = 0; k < model.noise_count(); ++k) {
            const Vector s = normalized_diffusion(model, k, eta, z);
            const double sk = z.dot(s);
            radial += 0.5 * s.squaredNorm();
            squares += sk * sk;
        }
        if (!std::isfinite(radial) || !std::isfinite(squares)) {
            throw EvaluationError("non-finite coefficient while probing stability");
        }
        sup = std::max(sup, radial - squares);
        if (radial - (1.0 + kInstabilityTheta) * squares < 0.0) unstable_ok = false;
    }
    return StabilityMargin{-sup, unstable_ok, n_probe};
}

}  // namespace dnd
