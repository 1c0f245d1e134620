#pragma once

#include "dnd/model.hpp"

#include <span>
#include <string>

namespace dnd {

enum class SchemeKind { Dnd, EulerMaruyama, BackwardEuler, Balanced, SRock, TamedEuler, Exact };

struct NewtonOptions {
    double tol = 1e-12;
    int max_iter = 50;
    friend bool operator==(const NewtonOptions&, const NewtonOptions&) = default;
};

struct SchemeId {
    SchemeKind kind = SchemeKind::Dnd;
    NewtonOptions newton{};
    int srock_stages = 3;
    double srock_damping = 2.2;

    /// Throws ParameterError when options leave their documented ranges.
    void validate() const;

    friend bool operator==(const SchemeId&, const SchemeId&) = default;
};

std::string to_string(SchemeKind kind);
SchemeKind parse_scheme_kind(const std::string& text);

/// x + b(x) dt + sum_k sigma^k(x) dW^k
Vector euler_maruyama_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW);

/**
 * Drift-implicit Euler: solves y = x + b(y) dt + sum_k sigma^k(x) dW^k by
 * Newton iteration from the Euler-Maruyama predictor, or by one linear solve
 * when the drift is linear. Converged when the residual is <= tol (1 + |y|).
 */
Vector backward_euler_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW,
                           const NewtonOptions& options = {});

/// backward_euler_step on plain doubles; needs model.has_scalar_form().
double backward_euler_scalar(const SdeModel& model, double x, double dt, double dW, const NewtonOptions& options = {});

/// Symmetric positive semidefinite square root of J^T J, eigenvalues clamped at 0.
Matrix gram_sqrt(const Matrix& j);

/**
 * Balanced implicit step with weights C = -J_b(x) dt / 2 + sum_k sqrt(J_k^T J_k) |dW^k|:
 * solves (I + C) y = x + b(x) dt + sum_k sigma^k(x) dW^k + C x.
 */
Vector balanced_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW);

struct ChebyshevStages {
    int stages = 3;
    double y0 = 0.0;
    double y1 = 0.0;
    std::vector<double> t;  // T_j(y0), j = 0..s

    static ChebyshevStages make(int stages, double damping);
    /// Stability polynomial R(p) = T_s(y0 + y1 p) / T_s(y0) of the drift recursion.
    double stability(double p) const;
    /// Length of the real stability interval [-l_s, 0].
    double stability_length() const { return (1.0 + y0) / y1; }
};

/// Damped Chebyshev (S-ROCK) step: drift stages, then sigma^k(K_s) dW^k.
Vector srock_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW,
                  const ChebyshevStages& stages);
Vector srock_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW, int s = 3,
                  double damping = 2.2);

/// x + b(x) dt / (1 + |b(x)| dt) + sum_k sigma^k(x) dW^k with the Euclidean norm of b.
Vector tamed_euler_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW);

}  // namespace dnd
