#pragma once

#include "dnd/baselines.hpp"
#include "dnd/montecarlo.hpp"
#include "dnd/noise.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace dnd {

/// dX = B X dt + sum_k sigma_k X dW^k given by its matrices.
struct BilinearSpec {
    Matrix drift;
    std::vector<Matrix> diffusions;

    friend bool operator==(const BilinearSpec& a, const BilinearSpec& b);
};

using ModelSpec = std::variant<Rotation41, GinzburgLandau46, NonlinearRot47, Shifted48, BilinearSpec>;

ModelPtr make_model(const ModelSpec& spec);
std::string model_name(const ModelSpec& spec);

enum class PlanMode { WeakAbs, WeakRel, Strong, StabilityTrace };

std::string to_string(PlanMode mode);
PlanMode parse_plan_mode(const std::string& text);

/**
 * One experiment: every scheme in `schemes` at every step size in `deltas`.
 *
 * Config grammar (sections [model], [run], [noise]; '#' starts a comment):
 *
 *   [model]
 *   name = rotation41 | ginzburg_landau46 | nonlinear_rot47 | shifted48 | bilinear
 *   b, sigma, epsilon         rotation41 parameters (-4, 8, 8)
 *   a, b, sigma               ginzburg_landau46 parameters (1, 1, 2)
 *   a, b                      nonlinear_rot47 parameters (6, 3)
 *   drift = d*d numbers       bilinear drift matrix, row-major
 *   sigma1, sigma2, ...       bilinear diffusion matrices, row-major
 *   x0 = comma list           required
 *
 *   [run]
 *   T                         required
 *   deltas = comma list       required; entries like 0.25, 1/16 or 2^-5
 *   schemes = comma list      dnd, euler_maruyama, backward_euler, balanced, srock, tamed_euler
 *   samples                   100000
 *   mode                      weak_abs | weak_rel | strong | stability_trace (weak_abs)
 *   functional                log1p_sq | atan1p_sq (log1p_sq)
 *   coordinate                one-based (1)
 *   alpha                     default | real (default)
 *   output                    output directory (out)
 *   newton_tol, newton_max_iter          1e-12, 50
 *   srock_stages, srock_damping          3, 2.2
 *   reference_samples         same as samples
 *   reference_delta           2^-11
 *   reference_law             two_point
 *
 *   [noise]
 *   law                       uniform_sqrt3 for ginzburg_landau46, gaussian otherwise
 *   seed                      0
 */
struct ExperimentPlan {
    ModelSpec model = Rotation41{};
    Vector x0;
    double T = 0.0;
    std::vector<double> deltas;
    std::vector<SchemeKind> schemes;
    NewtonOptions newton{};
    int srock_stages = 3;
    double srock_damping = 2.2;
    NoiseSpec noise{};
    std::uint64_t samples = 100000;
    std::string functional = "log1p_sq";
    /// Zero-based.
    int coordinate = 0;
    PlanMode mode = PlanMode::WeakAbs;
    std::optional<double> alpha;
    std::string output = "out";
    std::optional<std::uint64_t> reference_samples;
    double reference_delta = 0x1.0p-11;
    NoiseLaw reference_law = NoiseLaw::TwoPoint;

    SchemeId scheme_id(SchemeKind kind) const;
    ReferenceRecipe reference_recipe() const;
    Functional phi() const;

    friend bool operator==(const ExperimentPlan& a, const ExperimentPlan& b);
};

/// Default increment law for a model and mode.
NoiseLaw default_noise_law(const ModelSpec& model, PlanMode mode);

/// Parses and validates; ConfigError names the key and line at fault.
ExperimentPlan parse_plan(const std::string& text);

/// Renders every field explicitly; parse_plan(render_plan(p)) == p.
std::string render_plan(const ExperimentPlan& plan);

/// Throws ConfigError when the plan breaks an invariant.
void validate_plan(const ExperimentPlan& plan);

/// alpha actually used by the DND scheme: the explicit value or alpha_default.
double resolved_alpha(const ExperimentPlan& plan);

/// Parses 0.25, 1/16, 2^-5 and ordinary floating literals.
double parse_real(const std::string& text);

struct SeriesRow {
    std::string scheme;
    double delta = 0.0;
    double t = 0.0;
    double mean = 0.0;
    double ci99 = 0.0;
};

struct ExperimentResult {
    ErrorTable table;
    std::vector<SeriesRow> series;
    /// (scheme, delta) pairs in which every path failed.
    std::vector<std::string> all_failed;
    std::vector<std::string> warnings;
};

inline constexpr const char* kSeriesHeader = "scheme,delta,t,mean_functional,ci99";

std::string series_csv(const std::vector<SeriesRow>& rows);

/// Runs the plan without touching the file system.
ExperimentResult execute_plan(const ExperimentPlan& plan, unsigned workers = 1);

/// Runs the plan and writes errors.csv (and series.csv for stability_trace) under plan.output.
ExperimentResult run_experiment(const ExperimentPlan& plan, unsigned workers = 1);

}  // namespace dnd
