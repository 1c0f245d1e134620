#pragma once

#include "dnd/model.hpp"
#include "dnd/noise.hpp"

#include <span>
#include <vector>

namespace dnd {

/// Builds one of the bundled test problems; throws ParameterError on invalid parameters.
ModelPtr make_test_problem(const TestProblemId& id);

/// Rotation41 parameters when `model` is that problem, nullopt otherwise.
std::optional<Rotation41> rotation41_params(const SdeModel& model);

/**
 * Exact solution of the commuting bilinear rotation problem,
 *   X_t = exp((b - sigma^2/2 + eps^2/2) t) exp(sigma W1_t) R(eps W2_t) x0,
 * at each grid time given Brownian values w1, w2 at the same times.
 */
std::vector<Vector> exact_rotation41_path(const SdeModel& model, const Vector& x0, std::span<const double> times,
                                          std::span<const double> w1, std::span<const double> w2);

/// Single-time form of exact_rotation41_path.
Vector exact_rotation41(const Rotation41& p, const Vector& x0, double t, double w1, double w2);

struct StabilityMargin {
    /// Sampled lower bound of the supremum defining -lambda, negated.
    double lambda_hat = 0.0;
    /// The instability bracket with theta = 0.01 was >= 0 at every probe.
    bool instability_theta_ok = false;
    std::size_t probes = 0;
};

inline constexpr double kInstabilityTheta = 0.01;

/**
 * Probes the stability bracket at random unit directions and log-spaced radii
 * in [1e-4, 1e3]. The result bounds the supremum from one side only.
 */
StabilityMargin stability_margin(const SdeModel& model, std::size_t n_probe, NoiseStream& stream);

}  // namespace dnd
