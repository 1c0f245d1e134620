#include "dnd/baselines.hpp"

#include <cmath>

namespace dnd {

namespace {

void require_noise(const SdeModel& model, std::span<const double> dW) {
    if (static_cast<int>(dW.size()) != model.noise_count()) {
        throw PreconditionError("expected " + std::to_string(model.noise_count()) + " noise increments");
    }
}

Vector finite_or_throw(Vector y, const char* scheme) {
    if (!y.allFinite()) throw EvaluationError(std::string(scheme) + " produced a non-finite state");
    return y;
}

void add_noise(const SdeModel& model, const Vector& at, std::span<const double> dW, Vector& y) {
    for (int k = 0; k < model.noise_count(); ++k) y += model.diffusion(k, at) * dW[static_cast<std::size_t>(k)];
}

}  // namespace

void SchemeId::validate() const {
    if (!(newton.tol > 0.0)) throw ParameterError("Newton tolerance must be positive");
    if (newton.max_iter < 1) throw ParameterError("Newton iteration limit must be positive");
    if (srock_stages < 2) throw ParameterError("S-ROCK needs at least 2 stages");
    if (!(srock_damping >= 0.0)) throw ParameterError("S-ROCK damping must be nonnegative");
}

std::string to_string(SchemeKind kind) {
    switch (kind) {
        case SchemeKind::Dnd: return "dnd";
        case SchemeKind::EulerMaruyama: return "euler_maruyama";
        case SchemeKind::BackwardEuler: return "backward_euler";
        case SchemeKind::Balanced: return "balanced";
        case SchemeKind::SRock: return "srock";
        case SchemeKind::TamedEuler: return "tamed_euler";
        case SchemeKind::Exact: return "exact";
    }
    return "dnd";
}

SchemeKind parse_scheme_kind(const std::string& text) {
    for (auto kind : {SchemeKind::Dnd, SchemeKind::EulerMaruyama, SchemeKind::BackwardEuler, SchemeKind::Balanced,
                      SchemeKind::SRock, SchemeKind::TamedEuler, SchemeKind::Exact}) {
        if (to_string(kind) == text) return kind;
    }
    if (text == "srock3") return SchemeKind::SRock;
    throw ParameterError("unknown scheme '" + text + "'");
}

Vector euler_maruyama_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW) {
    require_noise(model, dW);
    Vector y = x + model.drift(x) * dt;
    add_noise(model, x, dW, y);
    return finite_or_throw(std::move(y), "Euler-Maruyama");
}

double backward_euler_scalar(const SdeModel& model, double x, double dt, double dW, const NewtonOptions& options) {
    const double rhs = x + model.scalar_diffusion(x) * dW;
    double y = rhs + model.scalar_drift(x) * dt;
    double residual = 0.0;
    for (int it = 0; it <= options.max_iter; ++it) {
        double slope = 0.0;
        const double g = y - model.scalar_drift(y, &slope) * dt - rhs;
        residual = std::abs(g);
        if (!std::isfinite(residual)) break;
        if (residual <= options.tol * (1.0 + std::abs(y))) return y;
        if (it == options.max_iter) break;
        const double denom = 1.0 - slope * dt;
        if (denom == 0.0) throw SolverError("singular Newton derivative in backward Euler", residual);
        y -= g / denom;
    }
    throw SolverError("backward Euler Newton iteration did not converge", residual);
}

Vector backward_euler_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW,
                           const NewtonOptions& options) {
    require_noise(model, dW);
    if (model.has_scalar_form() && !model.linear_drift()) {
        return Vector::Constant(1, backward_euler_scalar(model, x(0), dt, dW[0], options));
    }
    Vector rhs = x;
    add_noise(model, x, dW, rhs);
    const auto d = x.size();

    if (model.linear_drift()) {
        const Matrix a = Matrix::Identity(d, d) - dt * model.drift_jacobian_at_zero();
        const auto lu = a.fullPivLu();
        if (!lu.isInvertible()) throw SolverError("singular backward Euler matrix", 0.0);
        return finite_or_throw(lu.solve(rhs), "backward Euler");
    }
    if (!model.has_jacobian()) throw UnsupportedModelError(model.name() + ": backward Euler needs a Jacobian");

    Vector y = rhs + model.drift(x) * dt;
    double residual = 0.0;
    for (int it = 0; it <= options.max_iter; ++it) {
        const Vector g = y - model.drift(y) * dt - rhs;
        residual = g.norm();
        if (!std::isfinite(residual)) break;
        if (residual <= options.tol * (1.0 + y.norm())) return y;
        if (it == options.max_iter) break;
        const Matrix jac = Matrix::Identity(d, d) - dt * model.drift_jacobian(y);
        const auto lu = jac.fullPivLu();
        if (!lu.isInvertible()) throw SolverError("singular Newton matrix in backward Euler", residual);
        y -= lu.solve(g);
    }
    throw SolverError("backward Euler Newton iteration did not converge", residual);
}

Matrix gram_sqrt(const Matrix& j) {
    const Matrix gram = j.transpose() * j;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    const Vector roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

Vector balanced_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW) {
    require_noise(model, dW);
    if (!model.has_jacobian()) throw UnsupportedModelError(model.name() + ": balanced scheme needs Jacobians");
    const auto d = x.size();

    Matrix c = -0.5 * dt * model.drift_jacobian(x);
    for (int k = 0; k < model.noise_count(); ++k) {
        c += gram_sqrt(model.diffusion_jacobian(k, x)) * std::abs(dW[static_cast<std::size_t>(k)]);
    }
    Vector rhs = x + model.drift(x) * dt;
    add_noise(model, x, dW, rhs);
    rhs += c * x;

    if (d == 1) {
        const double denom = 1.0 + c(0, 0);
        if (denom == 0.0) throw SolverError("singular balanced-scheme matrix", 0.0);
        return finite_or_throw(rhs / denom, "balanced scheme");
    }
    const auto lu = (Matrix::Identity(d, d) + c).fullPivLu();
    if (!lu.isInvertible()) throw SolverError("singular balanced-scheme matrix", 0.0);
    return finite_or_throw(lu.solve(rhs), "balanced scheme");
}

ChebyshevStages ChebyshevStages::make(int stages, double damping) {
    if (stages < 2) throw ParameterError("S-ROCK needs at least 2 stages");
    ChebyshevStages out;
    out.stages = stages;
    out.y0 = 1.0 + damping / (static_cast<double>(stages) * stages);
    out.t.assign(static_cast<std::size_t>(stages) + 1, 0.0);
    // T_j and T'_j by their three-term recurrences.
    double dprev = 0.0;
    double dcur = 1.0;
    out.t[0] = 1.0;
    out.t[1] = out.y0;
    for (int j = 2; j <= stages; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        out.t[ju] = 2.0 * out.y0 * out.t[ju - 1] - out.t[ju - 2];
        const double dnext = 2.0 * out.t[ju - 1] + 2.0 * out.y0 * dcur - dprev;
        dprev = dcur;
        dcur = dnext;
    }
    out.y1 = out.t[static_cast<std::size_t>(stages)] / dcur;
    return out;
}

double ChebyshevStages::stability(double p) const {
    const double w = y0 + y1 * p;
    double prev = 1.0;
    double cur = w;
    for (int j = 2; j <= stages; ++j) {
        const double next = 2.0 * w * cur - prev;
        prev = cur;
        cur = next;
    }
    return cur / t[static_cast<std::size_t>(stages)];
}

Vector srock_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW,
                  const ChebyshevStages& cs) {
    require_noise(model, dW);
    Vector k_prev = x;
    Vector k_cur = x + model.drift(x) * (dt * cs.y1 / cs.y0);
    for (int j = 2; j <= cs.stages; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const double ratio = cs.t[ju - 1] / cs.t[ju];
        // mu_j K_{j-1} + nu_j K_{j-2} written around K_{j-1}, since mu_j + nu_j = 1.
        const double nu = -cs.t[ju - 2] / cs.t[ju];
        Vector k_next = k_cur + nu * (k_prev - k_cur) + model.drift(k_cur) * (2.0 * dt * cs.y1 * ratio);
        k_prev = std::move(k_cur);
        k_cur = std::move(k_next);
    }
    Vector y = k_cur;
    add_noise(model, k_cur, dW, y);
    return finite_or_throw(std::move(y), "S-ROCK");
}

Vector srock_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW, int s,
                  double damping) {
    return srock_step(model, x, dt, dW, ChebyshevStages::make(s, damping));
}

Vector tamed_euler_step(const SdeModel& model, const Vector& x, double dt, std::span<const double> dW) {
    require_noise(model, dW);
    const Vector b = model.drift(x);
    Vector y = x + b * (dt / (1.0 + b.norm() * dt));
    add_noise(model, x, dW, y);
    return finite_or_throw(std::move(y), "tamed Euler");
}

}  // namespace dnd
