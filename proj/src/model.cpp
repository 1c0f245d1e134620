#include "dnd/model.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace dnd {

namespace {

struct ProblemNamer {
    std::string operator()(const Rotation41&) const { return "rotation41"; }
    std::string operator()(const GinzburgLandau46&) const { return "ginzburg_landau46"; }
    std::string operator()(const NonlinearRot47&) const { return "nonlinear_rot47"; }
    std::string operator()(const Shifted48&) const { return "shifted48"; }
};

UnsupportedModelError missing(const SdeModel& model, const char* what) {
    return UnsupportedModelError(model.name() + ": " + what + " not available");
}

}  // namespace

std::string problem_name(const TestProblemId& id) { return std::visit(ProblemNamer{}, id); }

SdeModel::SdeModel(int dim, int noise_count) : dim_(dim), noise_count_(noise_count) {
    if (dim < 1 || dim >= kMaxDim) {
        throw ParameterError("state dimension must lie in [1, " + std::to_string(kMaxDim - 1) + "]");
    }
    if (noise_count < 1) throw ParameterError("noise count must be positive");
}

Matrix SdeModel::drift_jacobian(const Vector&) const { throw missing(*this, "drift Jacobian"); }

Matrix SdeModel::diffusion_jacobian(int, const Vector&) const {
    throw missing(*this, "diffusion Jacobian");
}

double SdeModel::scalar_drift(double, double*) const { throw missing(*this, "scalar form"); }

double SdeModel::scalar_diffusion(double) const { throw missing(*this, "scalar form"); }

Matrix SdeModel::drift_jacobian_at_zero() const {
    if (!has_jacobian()) throw missing(*this, "drift Jacobian at 0");
    return drift_jacobian(Vector::Zero(dim_));
}

Matrix SdeModel::diffusion_jacobian_at_zero(int k) const {
    if (!has_jacobian()) throw missing(*this, "diffusion Jacobian at 0");
    return diffusion_jacobian(k, Vector::Zero(dim_));
}

Vector SdeModel::normalized_drift_form(double, const Vector&) const {
    throw missing(*this, "closed-form normalized drift");
}

Vector SdeModel::normalized_diffusion_form(int, double, const Vector&) const {
    throw missing(*this, "closed-form normalized diffusion");
}

Vector SdeModel::drift_second_directional(const Vector&) const {
    throw missing(*this, "second derivatives");
}

Vector SdeModel::diffusion_second_directional(int, const Vector&) const {
    throw missing(*this, "second derivatives");
}

bool SdeModel::equilibrium_at_zero() const {
    const Vector zero = Vector::Zero(dim_);
    if (drift(zero).lpNorm<Eigen::Infinity>() > 1e-14) return false;
    for (int k = 0; k < noise_count_; ++k) {
        if (diffusion(k, zero).lpNorm<Eigen::Infinity>() > 1e-14) return false;
    }
    return true;
}

BilinearModel::BilinearModel(Matrix drift_matrix, std::vector<Matrix> diffusion_matrices)
    : SdeModel(static_cast<int>(drift_matrix.rows()), static_cast<int>(diffusion_matrices.size())),
      drift_(std::move(drift_matrix)),
      diffusions_(std::move(diffusion_matrices)) {
    if (drift_.rows() != drift_.cols()) throw ParameterError("drift matrix must be square");
    for (const auto& s : diffusions_) {
        if (s.rows() != drift_.rows() || s.cols() != drift_.cols()) {
            throw ParameterError("diffusion matrices must match the drift matrix shape");
        }
        if (!s.allFinite()) throw ParameterError("diffusion matrix has non-finite entries");
    }
    if (!drift_.allFinite()) throw ParameterError("drift matrix has non-finite entries");
}

Vector BilinearModel::drift_second_directional(const Vector& z) const {
    return Vector::Zero(z.size());
}

Vector BilinearModel::diffusion_second_directional(int, const Vector& z) const {
    return Vector::Zero(z.size());
}

FunctionModel::FunctionModel(Spec spec)
    : SdeModel(spec.dim, spec.noise_count), spec_(std::move(spec)) {
    if (!spec_.drift || !spec_.diffusion) {
        throw ParameterError("function model needs drift and diffusion callables");
    }
}

bool FunctionModel::has_jacobian() const {
    return static_cast<bool>(spec_.drift_jacobian) && static_cast<bool>(spec_.diffusion_jacobian);
}

Matrix FunctionModel::drift_jacobian(const Vector& x) const {
    if (!spec_.drift_jacobian) return SdeModel::drift_jacobian(x);
    return spec_.drift_jacobian(x);
}

Matrix FunctionModel::diffusion_jacobian(int k, const Vector& x) const {
    if (!spec_.diffusion_jacobian) return SdeModel::diffusion_jacobian(k, x);
    return spec_.diffusion_jacobian(k, x);
}

Matrix FunctionModel::drift_jacobian_at_zero() const {
    if (spec_.drift_jacobian_at_zero) return *spec_.drift_jacobian_at_zero;
    if (spec_.drift_jacobian) return spec_.drift_jacobian(Vector::Zero(dim()));
    return SdeModel::drift_jacobian_at_zero();
}

Matrix FunctionModel::diffusion_jacobian_at_zero(int k) const {
    if (static_cast<std::size_t>(k) < spec_.diffusion_jacobians_at_zero.size()) {
        return spec_.diffusion_jacobians_at_zero[static_cast<std::size_t>(k)];
    }
    if (spec_.diffusion_jacobian) return spec_.diffusion_jacobian(k, Vector::Zero(dim()));
    return SdeModel::diffusion_jacobian_at_zero(k);
}

bool FunctionModel::has_normalized_forms() const {
    return static_cast<bool>(spec_.normalized_drift) && static_cast<bool>(spec_.normalized_diffusion);
}

Vector FunctionModel::normalized_drift_form(double eta, const Vector& z) const {
    if (!spec_.normalized_drift) return SdeModel::normalized_drift_form(eta, z);
    return spec_.normalized_drift(eta, z);
}

Vector FunctionModel::normalized_diffusion_form(int k, double eta, const Vector& z) const {
    if (!spec_.normalized_diffusion) return SdeModel::normalized_diffusion_form(k, eta, z);
    return spec_.normalized_diffusion(k, eta, z);
}

bool FunctionModel::has_second_derivatives() const {
    return static_cast<bool>(spec_.drift_second_directional) &&
           static_cast<bool>(spec_.diffusion_second_directional);
}

Vector FunctionModel::drift_second_directional(const Vector& z) const {
    if (!spec_.drift_second_directional) return SdeModel::drift_second_directional(z);
    return spec_.drift_second_directional(z);
}

Vector FunctionModel::diffusion_second_directional(int k, const Vector& z) const {
    if (!spec_.diffusion_second_directional) return SdeModel::diffusion_second_directional(k, z);
    return spec_.diffusion_second_directional(k, z);
}

AugmentedModel::AugmentedModel(ModelPtr base, double alpha)
    : SdeModel(base->dim() + 1, base->noise_count()), base_(std::move(base)), alpha_(alpha) {
    if (alpha_ == 0.0 || !std::isfinite(alpha_)) {
        throw ParameterError("augmented system needs a finite nonzero alpha");
    }
    const Vector zero = Vector::Zero(base_->dim());
    drift0_ = base_->drift(zero);
    for (int k = 0; k < base_->noise_count(); ++k) diffusion0_.push_back(base_->diffusion(k, zero));
}

Vector AugmentedModel::lift(const Vector& fx, const Vector& f0, double v) const {
    const int d = base_->dim();
    Vector out(d + 1);
    out.head(d) = fx - f0 + f0 * (v / alpha_);
    out(d) = 0.0;
    return out;
}

Vector AugmentedModel::drift(const Vector& xv) const {
    const int d = base_->dim();
    return lift(base_->drift(xv.head(d)), drift0_, xv(d));
}

Vector AugmentedModel::diffusion(int k, const Vector& xv) const {
    const int d = base_->dim();
    return lift(base_->diffusion(k, xv.head(d)), diffusion0_[static_cast<std::size_t>(k)], xv(d));
}

Matrix AugmentedModel::drift_jacobian_at_zero() const {
    const int d = base_->dim();
    Matrix j = Matrix::Zero(d + 1, d + 1);
    j.topLeftCorner(d, d) = base_->drift_jacobian_at_zero();
    j.col(d).head(d) = drift0_ / alpha_;
    return j;
}

Matrix AugmentedModel::diffusion_jacobian_at_zero(int k) const {
    const int d = base_->dim();
    Matrix j = Matrix::Zero(d + 1, d + 1);
    j.topLeftCorner(d, d) = base_->diffusion_jacobian_at_zero(k);
    j.col(d).head(d) = diffusion0_[static_cast<std::size_t>(k)] / alpha_;
    return j;
}

// ---------------------------------------------------------------------------
// Functionals

namespace {

struct FunctionalRegistry {
    std::mutex mutex;
    std::map<std::string, std::function<double(double)>> kinds{
        {"log1p_sq", [](double x) { return std::log1p(x * x); }},
        {"atan1p_sq", [](double x) { return std::atan(1.0 + x * x); }},
    };
};

FunctionalRegistry& registry() {
    static FunctionalRegistry instance;
    return instance;
}

}  // namespace

std::string Functional::label() const { return kind_ + "[" + std::to_string(coordinate_ + 1) + "]"; }

Functional log1p_sq(int coordinate) { return make_functional("log1p_sq", coordinate); }

Functional atan1p_sq(int coordinate) { return make_functional("atan1p_sq", coordinate); }

void register_functional(const std::string& kind, std::function<double(double)> fn) {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    r.kinds[kind] = std::move(fn);
}

Functional make_functional(const std::string& kind, int coordinate) {
    if (coordinate < 0) throw ParameterError("functional coordinate must be nonnegative");
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    auto it = r.kinds.find(kind);
    if (it == r.kinds.end()) throw ParameterError("unknown functional '" + kind + "'");
    return Functional(kind, coordinate, it->second);
}

std::vector<std::string> functional_kinds() {
    auto& r = registry();
    std::lock_guard lock(r.mutex);
    std::vector<std::string> out;
    for (const auto& [name, fn] : r.kinds) out.push_back(name);
    return out;
}

}  // namespace dnd
