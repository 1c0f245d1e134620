#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dnd {

// Largest state dimension handled without heap allocation. The augmented route works in
// d+1 dimensions, so the effective limit for user models is kMaxDim - 1.
inline constexpr int kMaxDim = 8;

using Vector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline Vector make_vector(std::initializer_list<double> values) {
    Vector v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v(i++) = x;
    return v;
}

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Model or option parameters outside their documented domain.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// A coefficient or functional produced a non-finite value.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// Implicit solve failed (Newton divergence, singular matrix).
class SolverError : public Error {
public:
    SolverError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// Operation requested on a model family that does not support it.
class UnsupportedModelError : public Error {
public:
    using Error::Error;
};

/// Violated precondition of a numerical operation.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Failure inside a time step, tagged with the step index and the state it started from.
class StepError : public Error {
public:
    StepError(const std::string& what, std::size_t step, double eta, Vector z)
        : Error(what), step_(step), eta_(eta), z_(std::move(z)) {}
    std::size_t step() const noexcept { return step_; }
    double eta() const noexcept { return eta_; }
    const Vector& direction() const noexcept { return z_; }

private:
    std::size_t step_;
    double eta_;
    Vector z_;
};

/// An estimator is undefined for the data at hand (relative error of a
/// reference indistinguishable from 0, logarithm of a zero norm, ...).
class UndefinedEstimateError : public Error {
public:
    using Error::Error;
};

/// Experiment plan could not be parsed or validated.
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, std::string key = {}, int line = 0)
        : Error(what), key_(std::move(key)), line_(line) {}
    const std::string& key() const noexcept { return key_; }
    int line() const noexcept { return line_; }

private:
    std::string key_;
    int line_;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace dnd
