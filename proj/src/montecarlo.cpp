#include "dnd/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace dnd {

namespace {

constexpr double kGridTolerance = 1e-9;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Seed of the reference streams; independent of the scheme streams for the same seed.
std::uint64_t reference_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x7265666572656E63ull); }

// Grids must hit every observation time exactly, so divisibility is checked without tolerance.
std::size_t steps_per_observation(double h, double dt) {
    const double k = std::round(h / dt);
    if (k < 1.0 || std::fmod(h, dt) != 0.0) {
        throw PreconditionError("observation spacing must be a positive multiple of the step size");
    }
    return static_cast<std::size_t>(k);
}

std::vector<double> observation_times(std::size_t n_steps, std::size_t every, double dt) {
    std::vector<double> times;
    for (std::size_t n = 0; n <= n_steps; n += every) times.push_back(static_cast<double>(n) * dt);
    if (n_steps % every != 0) times.push_back(static_cast<double>(n_steps) * dt);
    return times;
}

Rotation41 require_rotation41(const SdeModel& model) {
    const auto p = rotation41_params(model);
    if (!p) throw UnsupportedModelError(model.name() + ": no pathwise exact solution available");
    return *p;
}

}  // namespace

double observation_step(double dt) { return std::max(dt, 1.0 / 16.0); }

std::size_t step_count(double T, double dt) {
    if (!(dt > 0.0) || !(T > 0.0) || !std::isfinite(T) || !std::isfinite(dt)) {
        throw PreconditionError("T and the step size must be positive");
    }
    const double n = std::round(T / dt);
    if (n < 1.0 || std::fmod(T, dt) != 0.0) {
        throw PreconditionError("T must be an exact integer multiple of the step size");
    }
    return static_cast<std::size_t>(n);
}

std::string to_string(DndRoute route) {
    switch (route) {
        case DndRoute::Scalar: return "scalar";
        case DndRoute::Bilinear: return "bilinear";
        case DndRoute::Equilibrium: return "equilibrium";
        case DndRoute::Augmented: return "augmented";
    }
    return "equilibrium";
}

PathStepper::PathStepper(const SchemeId& scheme, ModelPtr model, const Vector& x0, std::optional<double> alpha)
    : scheme_(scheme), model_(std::move(model)), x0_(x0), x_(x0),
      cumulative_(static_cast<std::size_t>(model_->noise_count()), 0.0) {
    scheme_.validate();
    if (x0.size() != model_->dim()) throw PreconditionError("initial state has the wrong dimension");
    if (!x0.allFinite()) throw PreconditionError("initial state must be finite");

    switch (scheme_.kind) {
        case SchemeKind::Dnd: {
            alpha_ = alpha ? *alpha : alpha_default(*model_);
            if (!std::isfinite(alpha_)) throw ParameterError("alpha must be finite");
            if (alpha_ != 0.0) {
                route_ = DndRoute::Augmented;
                general_.emplace(model_, alpha_);
                dnd_ = general_->augmented_state(x0);
                break;
            }
            if (!model_->equilibrium_at_zero()) {
                throw PreconditionError(model_->name() + ": alpha = 0 requires an equilibrium at the origin");
            }
            if (x0.isZero(0.0)) {
                // The zero solution of an equilibrium model; the splitting is undefined there.
                route_ = DndRoute::Equilibrium;
                dnd_ = DndState{0.0, Vector::Zero(x0.size())};
                break;
            }
            dnd_ = DndState::from_point(x0);
            if (model_->dim() == 1) {
                route_ = DndRoute::Scalar;
                scalar_x_ = x0(0);
            } else if ((bilinear_ = dynamic_cast<const BilinearModel*>(model_.get())) != nullptr) {
                route_ = DndRoute::Bilinear;
            } else {
                route_ = DndRoute::Equilibrium;
            }
            break;
        }
        case SchemeKind::BackwardEuler:
            if (model_->has_scalar_form() && !model_->linear_drift()) {
                scalar_implicit_ = true;
                scalar_x_ = x0(0);
            }
            break;
        case SchemeKind::SRock:
            chebyshev_ = ChebyshevStages::make(scheme_.srock_stages, scheme_.srock_damping);
            break;
        case SchemeKind::Exact:
            exact_params_ = require_rotation41(*model_);
            break;
        default:
            break;
    }
}

void PathStepper::count(Safeguard s) {
    last_safeguard_ = s;
    if (s == Safeguard::Preconditioned) ++counters_.preconditioned;
    if (s == Safeguard::KeptDirection) ++counters_.kept_direction;
}

void PathStepper::step(double dt, std::span<const double> dW) {
    if (static_cast<int>(dW.size()) != model_->noise_count()) {
        throw PreconditionError("expected one increment per noise");
    }
    switch (scheme_.kind) {
        case SchemeKind::Dnd:
            switch (*route_) {
                case DndRoute::Scalar: {
                    scalar_x_ = dnd_scalar_step(*model_, scalar_x_, dt, dW);
                    dnd_.eta = std::abs(scalar_x_);
                    // An underflow to 0 stays on the equilibrium and keeps the sign bit.
                    dnd_.zhat(0) = std::signbit(scalar_x_) ? -1.0 : 1.0;
                    count(Safeguard::None);
                    break;
                }
                case DndRoute::Bilinear: {
                    auto detail = dnd_bilinear_step_detail(bilinear_->drift_matrix(), bilinear_->diffusion_matrices(),
                                                           dnd_, dt, dW);
                    dnd_ = std::move(detail.next);
                    count(detail.safeguard);
                    break;
                }
                case DndRoute::Equilibrium: {
                    if (dnd_.eta == 0.0) break;
                    auto detail = dnd_step_detail(*model_, dnd_, dt, dW);
                    dnd_ = std::move(detail.next);
                    count(detail.safeguard);
                    break;
                }
                case DndRoute::Augmented: {
                    DndStepDetail detail;
                    x_ = general_->step(x_, dt, dW, &detail);
                    dnd_ = std::move(detail.next);
                    count(detail.safeguard);
                    break;
                }
            }
            break;
        case SchemeKind::EulerMaruyama: x_ = euler_maruyama_step(*model_, x_, dt, dW); break;
        case SchemeKind::BackwardEuler:
            if (scalar_implicit_) {
                scalar_x_ = backward_euler_scalar(*model_, scalar_x_, dt, dW[0], scheme_.newton);
            } else {
                x_ = backward_euler_step(*model_, x_, dt, dW, scheme_.newton);
            }
            break;
        case SchemeKind::Balanced: x_ = balanced_step(*model_, x_, dt, dW); break;
        case SchemeKind::SRock: x_ = srock_step(*model_, x_, dt, dW, *chebyshev_); break;
        case SchemeKind::TamedEuler: x_ = tamed_euler_step(*model_, x_, dt, dW); break;
        case SchemeKind::Exact: break;
    }
    for (std::size_t k = 0; k < dW.size(); ++k) cumulative_[k] += dW[k];
    ++steps_;
    time_ = static_cast<double>(steps_) * dt;
    if (scheme_.kind == SchemeKind::Exact) {
        x_ = exact_rotation41(*exact_params_, x0_, time_, cumulative_[0], cumulative_[1]);
        if (!x_.allFinite()) throw EvaluationError("non-finite exact solution");
    }
}

Vector PathStepper::state() const {
    if (scalar_implicit_) return Vector::Constant(1, scalar_x_);
    if (!route_) return x_;
    switch (*route_) {
        case DndRoute::Scalar: return Vector::Constant(1, scalar_x_);
        case DndRoute::Bilinear:
        case DndRoute::Equilibrium: return dnd_.point();
        case DndRoute::Augmented: return x_;
    }
    return x_;
}

double PathStepper::norm() const {
    if (scalar_implicit_) return std::abs(scalar_x_);
    if (!route_) return x_.norm();
    switch (*route_) {
        case DndRoute::Scalar:
        case DndRoute::Bilinear:
        case DndRoute::Equilibrium: return dnd_.eta;
        case DndRoute::Augmented: return x_.norm();
    }
    return x_.norm();
}

PathResult simulate_path(const SchemeId& scheme, ModelPtr model, const Vector& x0, double dt, double T,
                         NoiseStream& stream, const Functional& phi, const PathOptions& options) {
    const std::size_t n_steps = step_count(T, dt);
    const double h = options.obs_step > 0.0 ? options.obs_step : observation_step(dt);
    const std::size_t every = steps_per_observation(h, dt);
    std::optional<Rotation41> exact;
    if (options.couple_exact) exact = require_rotation41(*model);

    PathStepper stepper(scheme, model, x0, options.alpha);
    const auto m = static_cast<std::size_t>(model->noise_count());
    std::vector<double> dW(m, 0.0);
    std::vector<double> cumulative(m, 0.0);

    PathResult out;
    out.initial_norm = stepper.norm();
    out.observations.reserve(n_steps / every + 2);
    if (exact) out.exact_observations.reserve(n_steps / every + 2);

    auto fail = [&](std::size_t n, const std::string& why) {
        out.status = PathStatus::Failed;
        out.failure = why;
        out.failed_step = n;
    };
    auto observe = [&](std::size_t n) {
        const double t = static_cast<double>(n) * dt;
        if (exact) {
            out.exact_observations.push_back({t, phi(exact_rotation41(*exact, x0, t, cumulative[0], cumulative[1]))});
        }
        if (!out.ok()) return;
        const double value = phi(stepper.state());
        if (!std::isfinite(value)) {
            fail(n, "non-finite functional value");
            return;
        }
        out.observations.push_back({t, value});
    };

    observe(0);
    for (std::size_t n = 1; n <= n_steps; ++n) {
        stream.increments(dt, dW);
        for (std::size_t k = 0; k < m; ++k) cumulative[k] += dW[k];
        if (out.ok()) {
            try {
                stepper.step(dt, dW);
                if (options.on_step) options.on_step(stepper);
            } catch (const Error& e) {
                fail(n, e.what());
            }
        }
        // A failed path keeps drawing only to finish the coupled exact values.
        if (!out.ok() && !exact) break;
        if (n % every == 0 || n == n_steps) observe(n);
    }

    out.steps = stepper.steps();
    out.safeguards = stepper.safeguards();
    if (out.ok()) {
        out.terminal = stepper.state();
        out.terminal_norm = stepper.norm();
        if (!out.terminal.allFinite() || !std::isfinite(out.terminal_norm)) fail(n_steps, "non-finite terminal state");
    }
    return out;
}

void RunningStats::merge(const RunningStats& other) noexcept {
    if (other.n == 0) return;
    if (n == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n);
    const double nb = static_cast<double>(other.n);
    const double total = na + nb;
    const double delta = other.mean - mean;
    mean += delta * (nb / total);
    m2 += other.m2 + delta * delta * (na * nb / total);
    n += other.n;
}

double RunningStats::ci99() const noexcept {
    if (n < 2) return 0.0;
    return kZ99 * std::sqrt(variance() / static_cast<double>(n));
}

double confidence_interval(double /*mean*/, double var, std::uint64_t n) {
    if (n < 2) throw PreconditionError("confidence interval needs at least two samples");
    if (!(var >= 0.0)) throw PreconditionError("variance must be nonnegative");
    return kZ99 * std::sqrt(var / static_cast<double>(n));
}

namespace {

struct BatchAcc {
    std::vector<RunningStats> scheme;
    std::vector<RunningStats> exact;
    std::uint64_t failed = 0;
    SafeguardCounters safeguards;
    std::string first_failure;
};

}  // namespace

BatchResult run_batch(const BatchConfig& config) {
    if (!config.model) throw PreconditionError("batch needs a model");
    if (config.samples < 1) throw PreconditionError("at least one sample required");
    const std::size_t n_steps = step_count(config.T, config.dt);
    const double h = config.obs_step > 0.0 ? config.obs_step : observation_step(config.dt);
    const std::size_t every = steps_per_observation(h, config.dt);
    const std::vector<double> times = observation_times(n_steps, every, config.dt);
    if (config.couple_exact) require_rotation41(*config.model);
    // Surface configuration errors before any worker starts.
    PathStepper(config.scheme, config.model, config.x0, config.alpha);

    PathOptions options;
    options.alpha = config.alpha;
    options.obs_step = h;
    options.couple_exact = config.couple_exact;

    const std::function<BatchAcc()> make = [&] {
        BatchAcc acc;
        acc.scheme.resize(times.size());
        if (config.couple_exact) acc.exact.resize(times.size());
        return acc;
    };
    const std::function<void(BatchAcc&, std::uint64_t, std::uint64_t)> process =
        [&](BatchAcc& acc, std::uint64_t begin, std::uint64_t end) {
            for (std::uint64_t i = begin; i < end; ++i) {
                NoiseStream stream = substream(config.noise, i);
                const PathResult path =
                    simulate_path(config.scheme, config.model, config.x0, config.dt, config.T, stream, config.phi,
                                  options);
                acc.safeguards += path.safeguards;
                for (std::size_t j = 0; j < path.exact_observations.size(); ++j) {
                    acc.exact[j].add(path.exact_observations[j].value);
                }
                if (!path.ok()) {
                    if (acc.failed == 0) {
                        acc.first_failure = "path " + std::to_string(i) + ", step " +
                                            std::to_string(path.failed_step) + ": " + path.failure;
                    }
                    ++acc.failed;
                    continue;
                }
                for (std::size_t j = 0; j < path.observations.size(); ++j) {
                    acc.scheme[j].add(path.observations[j].value);
                }
            }
        };
    const std::function<void(BatchAcc&, BatchAcc&&)> merge = [](BatchAcc& total, BatchAcc&& part) {
        for (std::size_t j = 0; j < total.scheme.size(); ++j) total.scheme[j].merge(part.scheme[j]);
        for (std::size_t j = 0; j < total.exact.size(); ++j) total.exact[j].merge(part.exact[j]);
        if (total.failed == 0 && part.failed > 0) total.first_failure = std::move(part.first_failure);
        total.failed += part.failed;
        total.safeguards += part.safeguards;
    };

    BatchAcc acc = chunked_reduce<BatchAcc>(config.samples, config.workers, make, process, merge);
    BatchResult out;
    out.times = times;
    out.scheme = std::move(acc.scheme);
    out.exact = std::move(acc.exact);
    out.samples = config.samples;
    out.failed_paths = acc.failed;
    out.safeguards = acc.safeguards;
    out.first_failure = std::move(acc.first_failure);
    return out;
}

std::size_t ReferenceValues::index_of(double t) const {
    const auto it = std::lower_bound(times.begin(), times.end(), t - kGridTolerance * std::max(1.0, std::abs(t)));
    if (it == times.end() || std::abs(*it - t) > kGridTolerance * std::max(1.0, std::abs(t))) {
        throw PreconditionError("time " + format_number(t) + " is not on the reference grid");
    }
    return static_cast<std::size_t>(it - times.begin());
}

ReferenceValues reference_from_exact(const BatchResult& coupled) {
    if (coupled.exact.size() != coupled.times.size()) {
        throw PreconditionError("batch was not coupled with the exact solution");
    }
    ReferenceValues out;
    out.times = coupled.times;
    out.obs_step = coupled.times.size() > 1 ? coupled.times[1] - coupled.times[0] : 0.0;
    out.stats = coupled.exact;
    out.method = "exact (common increments)";
    return out;
}

ReferenceValues reference_solution(ModelPtr model, const Vector& x0, double T, const Functional& phi,
                                   double obs_step, const ReferenceRecipe& recipe, std::uint64_t seed,
                                   unsigned workers) {
    if (T == 0.0) {
        ReferenceValues out;
        out.times = {0.0};
        out.obs_step = obs_step;
        const double value = phi(x0);
        if (!std::isfinite(value)) throw EvaluationError("non-finite functional value at x0");
        out.stats.assign(1, RunningStats{recipe.samples, value, 0.0});
        out.method = "initial value";
        return out;
    }
    BatchConfig config;
    config.model = model;
    config.x0 = x0;
    config.T = T;
    config.phi = phi;
    config.samples = recipe.samples;
    config.workers = workers;
    config.obs_step = obs_step;

    ReferenceValues out;
    if (rotation41_params(*model)) {
        config.scheme.kind = SchemeKind::Exact;
        config.dt = obs_step;
        config.noise = NoiseSpec{NoiseLaw::Gaussian, reference_seed(seed)};
        out.method = "exact";
    } else {
        config.scheme.kind = recipe.kind;
        config.scheme.newton = recipe.newton;
        config.dt = recipe.dt;
        config.noise = NoiseSpec{recipe.law, reference_seed(seed)};
        out.method = to_string(recipe.kind) + " dt=" + format_number(recipe.dt) + " " + to_string(recipe.law);
    }
    const BatchResult batch = run_batch(config);
    out.times = batch.times;
    out.obs_step = obs_step;
    out.stats = batch.scheme;
    out.failed_paths = batch.failed_paths;
    if (batch.failed_paths == batch.samples) {
        throw UndefinedEstimateError("every reference path failed: " + batch.first_failure);
    }
    return out;
}

ErrorEstimate weak_error_abs(const BatchResult& scheme, const ReferenceValues& reference) {
    if (scheme.times.empty() || scheme.scheme.front().n == 0) {
        throw UndefinedEstimateError("no successful scheme paths");
    }
    ErrorEstimate out;
    out.failed_paths = scheme.failed_paths;
    for (std::size_t i = 0; i < scheme.times.size(); ++i) {
        const auto& ref = reference.stats[reference.index_of(scheme.times[i])];
        out.value = std::max(out.value, std::abs(scheme.scheme[i].mean - ref.mean));
        out.ci = std::max(out.ci, scheme.scheme[i].ci99() + ref.ci99());
    }
    return out;
}

ErrorEstimate relative_error(double estimate, double estimate_ci, double reference, double reference_ci) {
    const double magnitude = std::abs(reference);
    if (!(magnitude > 10.0 * reference_ci)) {
        throw UndefinedEstimateError("reference value is not resolved beyond 10 times its confidence interval");
    }
    ErrorEstimate out;
    out.value = std::abs(estimate - reference) / magnitude;
    // First-order propagation of both half-widths.
    out.ci = (estimate_ci + reference_ci * (1.0 + out.value)) / magnitude;
    return out;
}

ErrorEstimate weak_error_rel(const BatchResult& scheme, const ReferenceValues& reference) {
    if (scheme.times.empty() || scheme.scheme.back().n == 0) {
        throw UndefinedEstimateError("no successful scheme paths");
    }
    const auto& s = scheme.scheme.back();
    const auto& r = reference.stats[reference.index_of(scheme.times.back())];
    ErrorEstimate out = relative_error(s.mean, s.ci99(), r.mean, r.ci99());
    out.failed_paths = scheme.failed_paths;
    return out;
}

namespace {

struct StrongAcc {
    std::vector<RunningStats> per_step;
    std::uint64_t failed = 0;
};

}  // namespace

ErrorEstimate strong_error_rel(const SchemeId& scheme, ModelPtr model, const Vector& x0, double dt, double T,
                               std::uint64_t samples, const NoiseSpec& spec, unsigned workers,
                               std::optional<double> alpha) {
    const Rotation41 p = require_rotation41(*model);
    if (spec.law != NoiseLaw::Gaussian) {
        throw PreconditionError("strong errors need Gaussian increments");
    }
    if (samples < 1) throw PreconditionError("at least one sample required");
    const std::size_t n_steps = step_count(T, dt);
    PathStepper(scheme, model, x0, alpha);

    const std::function<StrongAcc()> make = [&] {
        StrongAcc acc;
        acc.per_step.resize(n_steps + 1);
        return acc;
    };
    const std::function<void(StrongAcc&, std::uint64_t, std::uint64_t)> process =
        [&](StrongAcc& acc, std::uint64_t begin, std::uint64_t end) {
            std::vector<double> dW(static_cast<std::size_t>(model->noise_count()));
            std::vector<double> errors(n_steps + 1);
            for (std::uint64_t i = begin; i < end; ++i) {
                NoiseStream stream = substream(spec, i);
                PathStepper stepper(scheme, model, x0, alpha);
                errors[0] = 0.0;
                bool ok = true;
                for (std::size_t n = 1; n <= n_steps && ok; ++n) {
                    stream.increments(dt, dW);
                    try {
                        stepper.step(dt, dW);
                    } catch (const Error&) {
                        ok = false;
                        break;
                    }
                    const auto w = stepper.cumulative_noise();
                    const Vector x = exact_rotation41(p, x0, static_cast<double>(n) * dt, w[0], w[1]);
                    errors[n] = (x - stepper.state()).squaredNorm() / x.squaredNorm();
                    ok = std::isfinite(errors[n]);
                }
                if (!ok) {
                    ++acc.failed;
                    continue;
                }
                for (std::size_t n = 0; n <= n_steps; ++n) acc.per_step[n].add(errors[n]);
            }
        };
    const std::function<void(StrongAcc&, StrongAcc&&)> merge = [](StrongAcc& total, StrongAcc&& part) {
        for (std::size_t n = 0; n < total.per_step.size(); ++n) total.per_step[n].merge(part.per_step[n]);
        total.failed += part.failed;
    };

    const StrongAcc acc = chunked_reduce<StrongAcc>(samples, workers, make, process, merge);
    if (acc.per_step.front().n == 0) throw UndefinedEstimateError("every path failed");
    ErrorEstimate out;
    out.failed_paths = acc.failed;
    for (const auto& s : acc.per_step) {
        if (s.mean > out.value) {
            out.value = s.mean;
            out.ci = s.ci99();
        }
    }
    return out;
}

double lyapunov_estimate(double initial_norm, double terminal_norm, double t) {
    if (!(initial_norm > 0.0) || !(terminal_norm > 0.0)) {
        throw UndefinedEstimateError("Lyapunov estimate needs positive norms");
    }
    if (!(t > 0.0)) throw UndefinedEstimateError("Lyapunov estimate needs a positive horizon");
    return std::log(terminal_norm / initial_norm) / t;
}

double lyapunov_estimate(const PathResult& path, double T) {
    if (!path.ok()) throw UndefinedEstimateError("path failed: " + path.failure);
    return lyapunov_estimate(path.initial_norm, path.terminal_norm, T);
}

double observed_order(std::span<const std::pair<double, double>> pairs) {
    if (pairs.size() < 3) throw PreconditionError("observed order needs at least three points");
    double sx = 0.0;
    double sy = 0.0;
    for (const auto& [delta, error] : pairs) {
        if (!(delta > 0.0) || !(error > 0.0)) throw PreconditionError("step sizes and errors must be positive");
        sx += std::log(delta);
        sy += std::log(error);
    }
    const double n = static_cast<double>(pairs.size());
    const double mx = sx / n;
    const double my = sy / n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (const auto& [delta, error] : pairs) {
        const double dx = std::log(delta) - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(error) - my);
    }
    if (sxx == 0.0) throw PreconditionError("observed order needs distinct step sizes");
    return sxy / sxx;
}

std::string format_number(double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

const char* ErrorTable::header() {
    return "scheme,delta,T,functional,estimate,ci99,eps_a,eps_r,eps_hat,samples,failed_paths,seed";
}

std::string ErrorTable::to_csv() const {
    auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
    std::ostringstream out;
    out << header() << '\n';
    for (const auto& r : rows) {
        out << r.scheme << ',' << format_number(r.delta) << ',' << format_number(r.T) << ',' << r.functional << ','
            << format_number(r.estimate) << ',' << format_number(r.ci99) << ',' << opt(r.eps_a) << ','
            << opt(r.eps_r) << ',' << opt(r.eps_hat) << ',' << r.samples << ',' << r.failed_paths << ',' << r.seed
            << '\n';
    }
    return out.str();
}

}  // namespace dnd
