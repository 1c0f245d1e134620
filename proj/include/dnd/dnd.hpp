#pragma once

#include "dnd/model.hpp"

#include <functional>
#include <optional>
#include <span>

namespace dnd {

/// Norm estimate and unit direction of the current state; X = eta * zhat.
struct DndState {
    double eta = 0.0;
    Vector zhat;

    static DndState from_point(const Vector& x);
    Vector point() const { return eta * zhat; }
};

inline constexpr double kEtaSwitch = 1e-6;
/// Below this norm of the raw direction update the infinity-norm rescaling kicks in.
inline constexpr double kDegenerateNorm = 1e-8;

/// eta below which b(eta z)/eta is replaced by its Taylor expansion at 0.
double eta_switch(const SdeModel& model);

/// b(eta z)/eta, extended by Jb(0) z at eta = 0.
Vector normalized_drift(const SdeModel& model, double eta, const Vector& z);
/// sigma^k(eta z)/eta, extended by Jsigma^k(0) z at eta = 0.
Vector normalized_diffusion(const SdeModel& model, int k, double eta, const Vector& z);

/**
 * Derivative of order `order` at eta = 0 of eta -> f(eta z)/eta for a scalar
 * f with f(0) = 0. Equals D_z^{order+1} f(0) / (order + 1).
 *
 * `directional` may supply D_z^{order+1} f(0) directly; otherwise it is
 * estimated by Richardson-extrapolated central differences along z.
 */
double taylor_coefficient(const std::function<double(const Vector&)>& f, int order,
                          const Vector& z, std::optional<double> directional = std::nullopt);

/// Ito correction of the direction dynamics.
Vector psi(const SdeModel& model, double eta, const Vector& z);

/// Exponent rate of the norm update.
double mu(const SdeModel& model, double eta, const Vector& z);

enum class Safeguard { None, Preconditioned, KeptDirection };

struct DndStepDetail {
    DndState next;
    Vector zbar;              // direction before projection onto the sphere
    double zbar_norm_sq = 0;  // |zbar|^2 as computed before projection
    Safeguard safeguard = Safeguard::None;
};

/// One step of the direction-and-norm scheme for models with equilibrium at 0.
DndStepDetail dnd_step_detail(const SdeModel& model, const DndState& state, double dt,
                              std::span<const double> dW);
DndState dnd_step(const SdeModel& model, const DndState& state, double dt, std::span<const double> dW);

/// Matrix form of dnd_step for dX = B X dt + sum_k sigma_k X dW^k.
DndStepDetail dnd_bilinear_step_detail(const Matrix& drift, std::span<const Matrix> sigmas, const DndState& state,
                                       double dt, std::span<const double> dW);
DndState dnd_bilinear_step(const Matrix& drift, std::span<const Matrix> sigmas, const DndState& state,
                           double dt, std::span<const double> dW);

/// Exponential update for d = 1; keeps the sign of x.
double dnd_scalar_step(const SdeModel& model, double x, double dt, std::span<const double> dW);

/// max(|b(0)|_inf, |sigma^k(0)|_inf) / 2, or 0 when the origin is an equilibrium.
double alpha_default(const SdeModel& model);

/**
 * Norm/direction step for arbitrary models, carried on the augmented
 * R^{d+1} system with constant last component alpha. Reuses one augmented
 * model across steps.
 */
class GeneralStepper {
public:
    GeneralStepper(ModelPtr model, double alpha);

    double alpha() const noexcept { return alpha_; }
    const SdeModel& model() const noexcept { return *model_; }

    /// Returns the next state. `detail`, if given, receives the augmented step.
    Vector step(const Vector& x, double dt, std::span<const double> dW, DndStepDetail* detail = nullptr) const;

    /// eta_aug = sqrt(|x|^2 + alpha^2) and the augmented unit vector (x, alpha)/eta_aug.
    DndState augmented_state(const Vector& x) const;

    /// Closed-form last component of the unprojected augmented direction update.
    double vbar(const Vector& x, double dt, std::span<const double> dW) const;

private:
    ModelPtr model_;
    double alpha_;
    std::optional<AugmentedModel> augmented_;
};

Vector dnd_general_step(const SdeModel& model, const Vector& x, double alpha, double dt,
                        std::span<const double> dW);

/// Bracket of the exponential-stability condition at x = eta z (equal to mu).
double stability_bracket(const SdeModel& model, double eta, const Vector& z);

}  // namespace dnd
