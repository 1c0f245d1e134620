#pragma once

#include "dnd/baselines.hpp"
#include "dnd/dnd.hpp"
#include "dnd/model.hpp"
#include "dnd/noise.hpp"
#include "dnd/problems.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dnd {

/// Grid step of the observed functional: max(dt, 1/16).
double observation_step(double dt);

/// T / dt; throws PreconditionError unless T is an exact positive multiple of dt in floating point.
std::size_t step_count(double T, double dt);

struct SafeguardCounters {
    std::uint64_t preconditioned = 0;
    std::uint64_t kept_direction = 0;

    SafeguardCounters& operator+=(const SafeguardCounters& other) {
        preconditioned += other.preconditioned;
        kept_direction += other.kept_direction;
        return *this;
    }
    friend bool operator==(const SafeguardCounters&, const SafeguardCounters&) = default;
};

/// How the direction-and-norm scheme is carried out for a model.
enum class DndRoute {
    Scalar,       // d = 1 exponential update
    Bilinear,     // matrix form for linear coefficients
    Equilibrium,  // generic form, origin is an equilibrium
    Augmented,    // generic form on the (d+1)-dimensional augmented system
};

std::string to_string(DndRoute route);

/**
 * Iterates one scheme from x0. DND variants carry (eta, zhat) internally and
 * only form eta * zhat when the state is requested. The exact scheme needs
 * the rotation41 model and evaluates the closed-form solution from the
 * cumulative noise it has been fed.
 */
class PathStepper {
public:
    /// `alpha` selects the augmented DND route when nonzero; unset means alpha_default.
    PathStepper(const SchemeId& scheme, ModelPtr model, const Vector& x0, std::optional<double> alpha = {});

    /// Advances one step; throws dnd::Error on failure (state is then unspecified).
    void step(double dt, std::span<const double> dW);

    Vector state() const;
    /// eta for DND routes (augmented: |x|), |x| otherwise.
    double norm() const;
    std::size_t steps() const noexcept { return steps_; }
    double time() const noexcept { return time_; }

    const SchemeId& scheme() const noexcept { return scheme_; }
    const SdeModel& model() const noexcept { return *model_; }
    std::optional<DndRoute> route() const noexcept { return route_; }
    /// Norm and direction of the DND state (scalar route: |x| and sign).
    /// For the augmented route this is the (d+1)-dimensional state.
    const DndState& dnd_state() const noexcept { return dnd_; }
    Safeguard last_safeguard() const noexcept { return last_safeguard_; }
    const SafeguardCounters& safeguards() const noexcept { return counters_; }
    /// Running sums of the increments fed so far, one per noise.
    std::span<const double> cumulative_noise() const noexcept { return cumulative_; }
    double alpha() const noexcept { return alpha_; }

private:
    void count(Safeguard s);

    SchemeId scheme_;
    ModelPtr model_;
    Vector x0_;
    Vector x_;
    DndState dnd_;
    double scalar_x_ = 0.0;
    bool scalar_implicit_ = false;  // backward Euler on plain doubles
    double alpha_ = 0.0;
    std::optional<DndRoute> route_;
    std::optional<GeneralStepper> general_;
    std::optional<ChebyshevStages> chebyshev_;
    std::optional<Rotation41> exact_params_;
    const BilinearModel* bilinear_ = nullptr;
    std::vector<double> cumulative_;
    std::size_t steps_ = 0;
    double time_ = 0.0;
    Safeguard last_safeguard_ = Safeguard::None;
    SafeguardCounters counters_;
};

struct Observation {
    double t = 0.0;
    double value = 0.0;
};

enum class PathStatus { Ok, Failed };

struct PathResult {
    /// phi(X) at 0, h, 2h, ... and at T.
    std::vector<Observation> observations;
    /// Closed-form values on the same times when coupling with the exact solution.
    std::vector<Observation> exact_observations;
    Vector terminal;
    double initial_norm = 0.0;
    double terminal_norm = 0.0;
    std::size_t steps = 0;
    SafeguardCounters safeguards;
    PathStatus status = PathStatus::Ok;
    std::string failure;
    std::size_t failed_step = 0;

    bool ok() const noexcept { return status == PathStatus::Ok; }
};

struct PathOptions {
    std::optional<double> alpha;
    /// Observation spacing; 0 selects observation_step(dt). Must be a multiple of dt.
    double obs_step = 0.0;
    /// Also evaluate the closed-form solution from the same increments (rotation41 only).
    bool couple_exact = false;
    /// Called after every successful step.
    std::function<void(const PathStepper&)> on_step;
};

/**
 * Runs `scheme` from x0 over T / dt steps with increments from `stream` and
 * records phi on the observation grid. Step failures and non-finite states
 * mark the path failed instead of throwing.
 */
PathResult simulate_path(const SchemeId& scheme, ModelPtr model, const Vector& x0, double dt, double T,
                         NoiseStream& stream, const Functional& phi, const PathOptions& options = {});

/// Streaming mean and variance (Welford), mergeable in a fixed order.
struct RunningStats {
    std::uint64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) noexcept {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }
    void merge(const RunningStats& other) noexcept;
    /// Unbiased sample variance; 0 for fewer than two values.
    double variance() const noexcept { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
    /// 99% half-width of the mean; 0 for fewer than two values.
    double ci99() const noexcept;
};

/// 2.576 * sqrt(var / n). Requires n >= 2.
double confidence_interval(double mean, double var, std::uint64_t n);

inline constexpr double kZ99 = 2.576;

/// Paths per reduction unit. Results depend on it, never on the worker count.
inline constexpr std::uint64_t kChunkPaths = 1024;

struct BatchConfig {
    SchemeId scheme;
    ModelPtr model;
    Vector x0;
    double dt = 0.0;
    double T = 0.0;
    Functional phi;
    NoiseSpec noise;
    std::uint64_t samples = 0;
    unsigned workers = 1;
    std::optional<double> alpha;
    double obs_step = 0.0;
    bool couple_exact = false;
};

struct BatchResult {
    std::vector<double> times;
    std::vector<RunningStats> scheme;
    /// Closed-form statistics from the same increments, filled when coupled.
    std::vector<RunningStats> exact;
    std::uint64_t samples = 0;
    std::uint64_t failed_paths = 0;
    SafeguardCounters safeguards;
    std::string first_failure;
};

/// Monte Carlo over path indices 0..samples-1; bitwise independent of `workers`.
BatchResult run_batch(const BatchConfig& config);

/**
 * Reduces `count` items in chunks of kChunkPaths on `workers` threads.
 * `process(acc, begin, end)` fills a fresh accumulator per chunk and chunks
 * are merged into the total strictly in index order.
 */
template <class Acc>
Acc chunked_reduce(std::uint64_t count, unsigned workers, const std::function<Acc()>& make,
                   const std::function<void(Acc&, std::uint64_t, std::uint64_t)>& process,
                   const std::function<void(Acc&, Acc&&)>& merge);

struct ReferenceRecipe {
    SchemeKind kind = SchemeKind::BackwardEuler;
    double dt = 0x1.0p-11;
    NoiseLaw law = NoiseLaw::TwoPoint;
    std::uint64_t samples = 1000000;
    NewtonOptions newton{};
    friend bool operator==(const ReferenceRecipe&, const ReferenceRecipe&) = default;
};

/// Reference values of E phi(X_t) on an observation grid.
struct ReferenceValues {
    std::vector<double> times;
    double obs_step = 0.0;
    std::vector<RunningStats> stats;
    std::string method;
    std::uint64_t failed_paths = 0;

    /// Index of grid time t; throws PreconditionError when t is not on the grid.
    std::size_t index_of(double t) const;
    double value(double t) const { return stats[index_of(t)].mean; }
    double ci(double t) const { return stats[index_of(t)].ci99(); }
};

/// Statistics of a coupled exact evaluation packaged as reference values.
ReferenceValues reference_from_exact(const BatchResult& coupled);

/**
 * Reference for E phi(X_t) on the grid with spacing obs_step: the exact
 * sampler for rotation41 (Gaussian increments at spacing obs_step), otherwise
 * `recipe` run with seed-derived independent streams.
 */
ReferenceValues reference_solution(ModelPtr model, const Vector& x0, double T, const Functional& phi,
                                   double obs_step, const ReferenceRecipe& recipe, std::uint64_t seed,
                                   unsigned workers = 1);

struct ErrorEstimate {
    double value = 0.0;
    double ci = 0.0;
    std::uint64_t failed_paths = 0;
};

/// max over the scheme grid of |E phi(X_t) - E phi(Y_t)|; CI is the max of summed half-widths.
ErrorEstimate weak_error_abs(const BatchResult& scheme, const ReferenceValues& reference);

/**
 * |E phi(X_T) - E phi(Y_T)| / |E phi(X_T)| at the terminal time. Throws
 * UndefinedEstimateError unless |E phi(X_T)| > 10 times its CI half-width.
 */
ErrorEstimate weak_error_rel(const BatchResult& scheme, const ReferenceValues& reference);

/// Same relative error for plain numbers.
ErrorEstimate relative_error(double estimate, double estimate_ci, double reference, double reference_ci);

/**
 * sup_n E(|X_{T_n} - Y_n|^2 / |X_{T_n}|^2) against the closed-form solution
 * driven by the same Gaussian increments. CI belongs to the maximizing n.
 */
ErrorEstimate strong_error_rel(const SchemeId& scheme, ModelPtr model, const Vector& x0, double dt, double T,
                               std::uint64_t samples, const NoiseSpec& spec, unsigned workers = 1,
                               std::optional<double> alpha = {});

/// (1 / t) log(norm_t / norm_0). Throws UndefinedEstimateError for nonpositive norms or t.
double lyapunov_estimate(double initial_norm, double terminal_norm, double t);
double lyapunov_estimate(const PathResult& path, double T);

/// Least-squares slope of log(error) against log(delta).
double observed_order(std::span<const std::pair<double, double>> pairs);

struct ErrorRow {
    std::string scheme;
    double delta = 0.0;
    double T = 0.0;
    std::string functional;
    double estimate = 0.0;
    double ci99 = 0.0;
    std::optional<double> eps_a;
    std::optional<double> eps_r;
    std::optional<double> eps_hat;
    std::uint64_t samples = 0;
    std::uint64_t failed_paths = 0;
    std::uint64_t seed = 0;
};

struct ErrorTable {
    std::vector<ErrorRow> rows;

    static const char* header();
    std::string to_csv() const;
};

/// %.17g, enough to round-trip any double.
std::string format_number(double value);

}  // namespace dnd

#include "dnd/montecarlo_impl.hpp"
