#include "dnd/dnd.hpp"

#include <cmath>
#include <limits>

namespace dnd {

namespace {

void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) throw EvaluationError(std::string("non-finite ") + what);
}

void require_noise(const SdeModel& model, std::span<const double> dW) {
    if (static_cast<int>(dW.size()) != model.noise_count()) {
        throw PreconditionError("expected " + std::to_string(model.noise_count()) + " noise increments, got " +
                                std::to_string(dW.size()));
    }
}

}  // namespace

DndState DndState::from_point(const Vector& x) {
    const double scale = x.lpNorm<Eigen::Infinity>();
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw PreconditionError("norm/direction split needs a finite nonzero state");
    }
    const Vector w = x / scale;
    const double wn = w.norm();
    return DndState{scale * wn, w / wn};
}

double eta_switch(const SdeModel& model) { return kEtaSwitch * (1.0 + model.eta_scale()); }

Vector normalized_drift(const SdeModel& model, double eta, const Vector& z) {
    Vector out;
    if (model.has_normalized_forms()) {
        out = model.normalized_drift_form(eta, z);
    } else if (eta >= eta_switch(model)) {
        out = model.drift(eta * z) / eta;
    } else {
        out = model.drift_jacobian_at_zero() * z;
        if (model.has_second_derivatives()) out += (0.5 * eta) * model.drift_second_directional(z);
    }
    require_finite(out, "normalized drift");
    return out;
}

Vector normalized_diffusion(const SdeModel& model, int k, double eta, const Vector& z) {
    Vector out;
    if (model.has_normalized_forms()) {
        out = model.normalized_diffusion_form(k, eta, z);
    } else if (eta >= eta_switch(model)) {
        out = model.diffusion(k, eta * z) / eta;
    } else {
        out = model.diffusion_jacobian_at_zero(k) * z;
        if (model.has_second_derivatives()) out += (0.5 * eta) * model.diffusion_second_directional(k, z);
    }
    require_finite(out, "normalized diffusion");
    return out;
}

double taylor_coefficient(const std::function<double(const Vector&)>& f, int order, const Vector& z,
                          std::optional<double> directional) {
    if (order < 0) throw ParameterError("derivative order must be nonnegative");
    const int n = order + 1;
    double dn = 0.0;
    if (directional) {
        dn = *directional;
    } else {
        // n-th central difference of t -> f(t z), one Richardson step (O(h^4)).
        auto central = [&](double h) {
            double acc = 0.0;
            double binom = 1.0;
            for (int j = 0; j <= n; ++j) {
                const double t = (0.5 * n - j) * h;
                acc += ((j % 2 == 0) ? binom : -binom) * f(t * z);
                binom = binom * (n - j) / (j + 1);
            }
            return acc / std::pow(h, n);
        };
        const double h = 4.0 * std::pow(std::numeric_limits<double>::epsilon(), 1.0 / (n + 4));
        dn = (4.0 * central(0.5 * h) - central(h)) / 3.0;
    }
    if (!std::isfinite(dn)) throw EvaluationError("directional derivative is not finite");
    return dn / n;
}

Vector psi(const SdeModel& model, double eta, const Vector& z) {
    Vector out = Vector::Zero(z.size());
    for (int k = 0; k < model.noise_count(); ++k) {
        const Vector s = normalized_diffusion(model, k, eta, z);
        const double sk = z.dot(s);
        out += (1.5 * sk * sk - 0.5 * s.squaredNorm()) * z - sk * s;
    }
    return out;
}

double mu(const SdeModel& model, double eta, const Vector& z) {
    double out = z.dot(normalized_drift(model, eta, z));
    for (int k = 0; k < model.noise_count(); ++k) {
        const Vector s = normalized_diffusion(model, k, eta, z);
        const double sk = z.dot(s);
        out += 0.5 * s.squaredNorm() - sk * sk;
    }
    return out;
}

double stability_bracket(const SdeModel& model, double eta, const Vector& z) { return mu(model, eta, z); }

namespace {

// Projection onto the unit sphere with the round-off safeguards.
void project(DndStepDetail& out, const Vector& z) {
    out.zbar_norm_sq = out.zbar.squaredNorm();
    const double norm = std::sqrt(out.zbar_norm_sq);
    if ((out.zbar.array() == 0.0).all()) {
        out.next.zhat = z;
        out.safeguard = Safeguard::KeptDirection;
    } else if (norm < kDegenerateNorm) {
        const Vector w = out.zbar / out.zbar.lpNorm<Eigen::Infinity>();
        out.next.zhat = w / w.norm();
        out.safeguard = Safeguard::Preconditioned;
    } else {
        out.next.zhat = out.zbar / norm;
        out.safeguard = Safeguard::None;
    }
}

}  // namespace

DndStepDetail dnd_step_detail(const SdeModel& model, const DndState& state, double dt,
                              std::span<const double> dW) {
    require_noise(model, dW);
    const Vector& z = state.zhat;
    const double eta = state.eta;

    const Vector bbar = normalized_drift(model, eta, z);
    const double zb = z.dot(bbar);

    double rate = zb;
    double noise_exponent = 0.0;
    Vector psi_sum = Vector::Zero(z.size());
    Vector noise_dir = Vector::Zero(z.size());
    for (int k = 0; k < model.noise_count(); ++k) {
        const Vector s = normalized_diffusion(model, k, eta, z);
        const double sk = z.dot(s);
        const double qk = s.squaredNorm();
        rate += 0.5 * qk - sk * sk;
        psi_sum += (1.5 * sk * sk - 0.5 * qk) * z - sk * s;
        noise_dir += (s - sk * z) * dW[static_cast<std::size_t>(k)];
        noise_exponent += sk * dW[static_cast<std::size_t>(k)];
    }

    DndStepDetail out;
    out.next.eta = eta * std::exp(rate * dt + noise_exponent);
    out.zbar = z + (bbar - zb * z + psi_sum) * dt + noise_dir;
    if (!std::isfinite(out.next.eta) || !out.zbar.allFinite()) {
        throw EvaluationError("non-finite norm/direction update");
    }
    project(out, z);
    return out;
}

DndState dnd_step(const SdeModel& model, const DndState& state, double dt, std::span<const double> dW) {
    return dnd_step_detail(model, state, dt, dW).next;
}

DndStepDetail dnd_bilinear_step_detail(const Matrix& drift, std::span<const Matrix> sigmas, const DndState& state,
                                       double dt, std::span<const double> dW) {
    if (dW.size() != sigmas.size()) throw PreconditionError("one increment per diffusion matrix expected");
    const Vector& z = state.zhat;
    const auto d = z.size();
    const Matrix identity = Matrix::Identity(d, d);

    const double zbz = z.dot(drift * z);
    double rate = zbz;
    double noise_exponent = 0.0;
    // Scalar terms act as multiples of the identity.
    Matrix bn = drift - zbz * identity;
    Vector noise_dir = Vector::Zero(d);
    for (std::size_t k = 0; k < sigmas.size(); ++k) {
        const Vector sz = sigmas[k] * z;
        const double sk = z.dot(sz);
        const double qk = sz.squaredNorm();
        bn += (1.5 * sk * sk - 0.5 * qk) * identity - sk * sigmas[k];
        rate += 0.5 * qk - sk * sk;
        noise_dir += (sigmas[k] - sk * identity) * z * dW[k];
        noise_exponent += sk * dW[k];
    }

    DndStepDetail out;
    out.next.eta = state.eta * std::exp(rate * dt + noise_exponent);
    out.zbar = z + bn * z * dt + noise_dir;
    if (!std::isfinite(out.next.eta) || !out.zbar.allFinite()) {
        throw EvaluationError("non-finite norm/direction update");
    }
    project(out, z);
    return out;
}

DndState dnd_bilinear_step(const Matrix& drift, std::span<const Matrix> sigmas, const DndState& state, double dt,
                           std::span<const double> dW) {
    return dnd_bilinear_step_detail(drift, sigmas, state, dt, dW).next;
}

double dnd_scalar_step(const SdeModel& model, double x, double dt, std::span<const double> dW) {
    if (model.dim() != 1) throw PreconditionError("scalar step needs a one-dimensional model");
    require_noise(model, dW);
    Vector z(1);
    z(0) = std::signbit(x) ? -1.0 : 1.0;
    const double eta = std::abs(x);

    const double z0 = z(0);
    double rate = z0 * normalized_drift(model, eta, z)(0);
    double noise_exponent = 0.0;
    for (int k = 0; k < model.noise_count(); ++k) {
        const double s = z0 * normalized_diffusion(model, k, eta, z)(0);
        rate += -0.5 * s * s;
        noise_exponent += s * dW[static_cast<std::size_t>(k)];
    }
    const double out = x * std::exp(rate * dt + noise_exponent);
    if (!std::isfinite(out)) throw EvaluationError("non-finite scalar update");
    return out;
}

double alpha_default(const SdeModel& model) {
    const Vector zero = Vector::Zero(model.dim());
    double largest = model.drift(zero).lpNorm<Eigen::Infinity>();
    for (int k = 0; k < model.noise_count(); ++k) {
        largest = std::max(largest, model.diffusion(k, zero).lpNorm<Eigen::Infinity>());
    }
    if (largest <= 1e-14) return 0.0;
    return largest / 2.0;
}

GeneralStepper::GeneralStepper(ModelPtr model, double alpha) : model_(std::move(model)), alpha_(alpha) {
    if (alpha_ == 0.0) {
        if (!model_->equilibrium_at_zero()) {
            throw PreconditionError("alpha = 0 requires an equilibrium at the origin");
        }
    } else {
        augmented_.emplace(model_, alpha_);
    }
}

DndState GeneralStepper::augmented_state(const Vector& x) const {
    const auto d = x.size();
    Vector xv(d + 1);
    xv.head(d) = x;
    xv(d) = alpha_;
    return DndState::from_point(xv);
}

Vector GeneralStepper::step(const Vector& x, double dt, std::span<const double> dW, DndStepDetail* detail) const {
    if (!augmented_) {
        DndStepDetail out = dnd_step_detail(*model_, DndState::from_point(x), dt, dW);
        Vector next = out.next.point();
        if (detail) *detail = std::move(out);
        return next;
    }
    DndStepDetail out = dnd_step_detail(*augmented_, augmented_state(x), dt, dW);
    Vector next = out.next.eta * out.next.zhat.head(x.size());
    if (detail) *detail = std::move(out);
    return next;
}

double GeneralStepper::vbar(const Vector& x, double dt, std::span<const double> dW) const {
    if (!augmented_) throw PreconditionError("vbar is defined for alpha != 0 only");
    const DndState s = augmented_state(x);
    const double ratio = alpha_ / s.eta;
    const double ub = s.zhat.dot(normalized_drift(*augmented_, s.eta, s.zhat));
    double correction = 0.0;
    double noise = 0.0;
    for (int k = 0; k < augmented_->noise_count(); ++k) {
        const Vector g = normalized_diffusion(*augmented_, k, s.eta, s.zhat);
        const double uk = s.zhat.dot(g);
        correction += 1.5 * uk * uk - 0.5 * g.squaredNorm();
        noise += uk * dW[static_cast<std::size_t>(k)];
    }
    return ratio - ratio * ub * dt + ratio * dt * correction - ratio * noise;
}

Vector dnd_general_step(const SdeModel& model, const Vector& x, double alpha, double dt,
                        std::span<const double> dW) {
    // Non-owning handle; the stepper does not outlive this call.
    const ModelPtr handle(&model, [](const SdeModel*) {});
    return GeneralStepper(handle, alpha).step(x, dt, dW);
}

}  // namespace dnd
