#include "dnd/plan.hpp"

#include "dnd/problems.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace dnd {

bool operator==(const BilinearSpec& a, const BilinearSpec& b) {
    auto same = [](const Matrix& x, const Matrix& y) {
        return x.rows() == y.rows() && x.cols() == y.cols() && (x.array() == y.array()).all();
    };
    if (!same(a.drift, b.drift) || a.diffusions.size() != b.diffusions.size()) return false;
    for (std::size_t k = 0; k < a.diffusions.size(); ++k) {
        if (!same(a.diffusions[k], b.diffusions[k])) return false;
    }
    return true;
}

bool operator==(const ExperimentPlan& a, const ExperimentPlan& b) {
    const bool same_x0 = a.x0.size() == b.x0.size() && (a.x0.array() == b.x0.array()).all();
    return a.model == b.model && same_x0 && a.T == b.T && a.deltas == b.deltas && a.schemes == b.schemes &&
           a.newton == b.newton && a.srock_stages == b.srock_stages && a.srock_damping == b.srock_damping &&
           a.noise == b.noise && a.samples == b.samples && a.functional == b.functional &&
           a.coordinate == b.coordinate && a.mode == b.mode && a.alpha == b.alpha && a.output == b.output &&
           a.reference_samples == b.reference_samples && a.reference_delta == b.reference_delta &&
           a.reference_law == b.reference_law;
}

namespace {

struct ModelFactory {
    ModelPtr operator()(const BilinearSpec& s) const {
        return std::make_shared<BilinearModel>(s.drift, s.diffusions);
    }
    template <class P>
    ModelPtr operator()(const P& p) const {
        return make_test_problem(p);
    }
};

struct NameOf {
    std::string operator()(const BilinearSpec&) const { return "bilinear"; }
    template <class P>
    std::string operator()(const P& p) const {
        return problem_name(p);
    }
};

}  // namespace

ModelPtr make_model(const ModelSpec& spec) { return std::visit(ModelFactory{}, spec); }

std::string model_name(const ModelSpec& spec) { return std::visit(NameOf{}, spec); }

std::string to_string(PlanMode mode) {
    switch (mode) {
        case PlanMode::WeakAbs: return "weak_abs";
        case PlanMode::WeakRel: return "weak_rel";
        case PlanMode::Strong: return "strong";
        case PlanMode::StabilityTrace: return "stability_trace";
    }
    return "weak_abs";
}

PlanMode parse_plan_mode(const std::string& text) {
    for (auto mode : {PlanMode::WeakAbs, PlanMode::WeakRel, PlanMode::Strong, PlanMode::StabilityTrace}) {
        if (to_string(mode) == text) return mode;
    }
    throw ParameterError("unknown mode '" + text + "'");
}

SchemeId ExperimentPlan::scheme_id(SchemeKind kind) const {
    SchemeId id;
    id.kind = kind;
    id.newton = newton;
    id.srock_stages = srock_stages;
    id.srock_damping = srock_damping;
    return id;
}

ReferenceRecipe ExperimentPlan::reference_recipe() const {
    ReferenceRecipe r;
    r.dt = reference_delta;
    r.law = reference_law;
    r.samples = reference_samples.value_or(samples);
    r.newton = newton;
    return r;
}

Functional ExperimentPlan::phi() const { return make_functional(functional, coordinate); }

NoiseLaw default_noise_law(const ModelSpec& model, PlanMode mode) {
    if (mode != PlanMode::Strong && std::holds_alternative<GinzburgLandau46>(model)) return NoiseLaw::UniformSqrt3;
    return NoiseLaw::Gaussian;
}

double parse_real(const std::string& raw) {
    std::string text;
    for (char c : raw) {
        if (!std::isspace(static_cast<unsigned char>(c))) text.push_back(c);
    }
    auto plain = [&](const std::string& s) {
        if (s.empty()) throw ParameterError("empty number");
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            throw ParameterError("not a number: '" + raw + "'");
        }
        if (used != s.size()) throw ParameterError("not a number: '" + raw + "'");
        return v;
    };
    if (const auto slash = text.find('/'); slash != std::string::npos) {
        const double den = plain(text.substr(slash + 1));
        if (den == 0.0) throw ParameterError("zero denominator in '" + raw + "'");
        return plain(text.substr(0, slash)) / den;
    }
    if (const auto caret = text.find('^'); caret != std::string::npos) {
        return std::pow(plain(text.substr(0, caret)), plain(text.substr(caret + 1)));
    }
    return plain(text);
}

namespace {

struct Entry {
    std::string value;
    int line = 0;
    bool used = false;
};

using Section = std::map<std::string, Entry>;

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(trim(item));
    return out;
}

class Reader {
public:
    explicit Reader(const std::string& text) {
        std::istringstream in(text);
        std::string raw;
        int line = 0;
        Section* current = nullptr;
        while (std::getline(in, raw)) {
            ++line;
            if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
            const std::string s = trim(raw);
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.back() != ']') throw ConfigError("malformed section header", s, line);
                const std::string name = trim(s.substr(1, s.size() - 2));
                if (name != "model" && name != "run" && name != "noise") {
                    throw ConfigError("unknown section [" + name + "] at line " + std::to_string(line), name, line);
                }
                if (sections_.count(name)) {
                    throw ConfigError("section [" + name + "] repeated at line " + std::to_string(line), name, line);
                }
                current = &sections_[name];
                section_lines_[name] = line;
                continue;
            }
            const auto eq = s.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("expected key = value at line " + std::to_string(line), s, line);
            }
            const std::string key = trim(s.substr(0, eq));
            if (!current) {
                throw ConfigError("key '" + key + "' outside of a section at line " + std::to_string(line), key, line);
            }
            if (key.empty()) throw ConfigError("empty key at line " + std::to_string(line), key, line);
            if (current->count(key)) {
                throw ConfigError("key '" + key + "' repeated at line " + std::to_string(line), key, line);
            }
            (*current)[key] = Entry{trim(s.substr(eq + 1)), line, false};
        }
    }

    Entry* find(const std::string& section, const std::string& key) {
        auto it = sections_.find(section);
        if (it == sections_.end()) return nullptr;
        auto jt = it->second.find(key);
        if (jt == it->second.end()) return nullptr;
        jt->second.used = true;
        return &jt->second;
    }

    const Entry& require(const std::string& section, const std::string& key) {
        if (Entry* e = find(section, key)) return *e;
        throw ConfigError("missing required key '" + key + "' in [" + section + "]", key, 0);
    }

    template <class F>
    auto convert(const std::string& key, const Entry& e, F&& f) -> decltype(f(e.value)) {
        try {
            return f(e.value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& ex) {
            throw ConfigError("invalid value for '" + key + "' at line " + std::to_string(e.line) + ": " + ex.what(),
                              key, e.line);
        }
    }

    double real(const std::string& section, const std::string& key, double fallback) {
        const Entry* e = find(section, key);
        return e ? convert(key, *e, parse_real) : fallback;
    }

    std::uint64_t count(const std::string& section, const std::string& key, std::uint64_t fallback) {
        const Entry* e = find(section, key);
        return e ? convert(key, *e, parse_count) : fallback;
    }

    std::optional<std::string> text(const std::string& section, const std::string& key) {
        const Entry* e = find(section, key);
        if (!e) return std::nullopt;
        return e->value;
    }

    std::vector<double> reals(const std::string& key, const Entry& e) {
        return convert(key, e, [](const std::string& v) {
            std::vector<double> out;
            for (const auto& item : split_list(v)) out.push_back(parse_real(item));
            return out;
        });
    }

    /// Keys never looked up are unknown for this plan.
    void reject_unused() const {
        for (const auto& [section, entries] : sections_) {
            for (const auto& [key, entry] : entries) {
                if (!entry.used) {
                    throw ConfigError("unknown key '" + key + "' in [" + section + "] at line " +
                                          std::to_string(entry.line),
                                      key, entry.line);
                }
            }
        }
    }

    static std::uint64_t parse_count(const std::string& v) {
        const bool digits = !v.empty() && std::all_of(v.begin(), v.end(), [](char c) {
            return std::isdigit(static_cast<unsigned char>(c)) != 0;
        });
        if (digits) return std::stoull(v);
        const double x = parse_real(v);
        if (!(x >= 0.0) || x != std::floor(x) || x > 9.0e15) throw ParameterError("expected a nonnegative integer");
        return static_cast<std::uint64_t>(x);
    }

private:
    std::map<std::string, Section> sections_;
    std::map<std::string, int> section_lines_;
};

Matrix square_matrix(const std::vector<double>& values, const std::string& key, int line) {
    const auto d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(values.size()))));
    if (d < 1 || static_cast<std::size_t>(d * d) != values.size()) {
        throw ConfigError("'" + key + "' needs d*d entries", key, line);
    }
    Matrix m(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) m(i, j) = values[static_cast<std::size_t>(i * d + j)];
    }
    return m;
}

ModelSpec read_model(Reader& r) {
    const Entry& name_entry = r.require("model", "name");
    const std::string& name = name_entry.value;
    if (name == "rotation41") {
        Rotation41 p;
        p.b = r.real("model", "b", p.b);
        p.sigma = r.real("model", "sigma", p.sigma);
        p.epsilon = r.real("model", "epsilon", p.epsilon);
        return p;
    }
    if (name == "ginzburg_landau46") {
        GinzburgLandau46 p;
        p.a = r.real("model", "a", p.a);
        p.b = r.real("model", "b", p.b);
        p.sigma = r.real("model", "sigma", p.sigma);
        return p;
    }
    if (name == "nonlinear_rot47") {
        NonlinearRot47 p;
        p.a = r.real("model", "a", p.a);
        p.b = r.real("model", "b", p.b);
        return p;
    }
    if (name == "shifted48") return Shifted48{};
    if (name == "bilinear") {
        BilinearSpec s;
        const Entry& drift = r.require("model", "drift");
        s.drift = square_matrix(r.reals("drift", drift), "drift", drift.line);
        for (int k = 1;; ++k) {
            const std::string key = "sigma" + std::to_string(k);
            const Entry* e = r.find("model", key);
            if (!e) break;
            Matrix m = square_matrix(r.reals(key, *e), key, e->line);
            if (m.rows() != s.drift.rows()) throw ConfigError("'" + key + "' must match the drift size", key, e->line);
            s.diffusions.push_back(std::move(m));
        }
        if (s.diffusions.empty()) throw ConfigError("bilinear model needs sigma1", "sigma1", name_entry.line);
        if (s.drift.rows() >= kMaxDim) throw ConfigError("bilinear model dimension too large", "drift", drift.line);
        return s;
    }
    throw ConfigError("unknown model '" + name + "' at line " + std::to_string(name_entry.line), "name",
                      name_entry.line);
}

template <class F>
auto as_config(const std::string& key, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid '") + key + "': " + e.what(), key);
    }
}

int model_dim(const ModelSpec& spec) {
    if (const auto* s = std::get_if<BilinearSpec>(&spec)) return static_cast<int>(s->drift.rows());
    if (std::holds_alternative<GinzburgLandau46>(spec)) return 1;
    return 2;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
    return out;
}

std::string join_numbers(const double* data, std::size_t n) {
    std::vector<std::string> items;
    for (std::size_t i = 0; i < n; ++i) items.push_back(format_number(data[i]));
    return join(items);
}

std::string matrix_text(const Matrix& m) {
    std::vector<double> values;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) values.push_back(m(i, j));
    }
    return join_numbers(values.data(), values.size());
}

}  // namespace

ExperimentPlan parse_plan(const std::string& text) {
    Reader r(text);
    ExperimentPlan plan;
    plan.model = read_model(r);
    {
        const Entry& e = r.require("model", "x0");
        const auto v = r.reals("x0", e);
        plan.x0.resize(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) plan.x0(static_cast<Eigen::Index>(i)) = v[i];
    }

    {
        const Entry& e = r.require("run", "T");
        plan.T = r.convert("T", e, parse_real);
    }
    plan.deltas = r.reals("deltas", r.require("run", "deltas"));
    {
        const Entry& e = r.require("run", "schemes");
        plan.schemes = r.convert("schemes", e, [](const std::string& v) {
            std::vector<SchemeKind> out;
            for (const auto& item : split_list(v)) out.push_back(parse_scheme_kind(item));
            return out;
        });
    }
    plan.samples = r.count("run", "samples", plan.samples);
    if (auto v = r.text("run", "mode")) plan.mode = as_config("mode", [&] { return parse_plan_mode(*v); });
    if (auto v = r.text("run", "functional")) plan.functional = *v;
    plan.coordinate = static_cast<int>(r.count("run", "coordinate", 1)) - 1;
    if (auto v = r.text("run", "alpha"); v && *v != "default") {
        plan.alpha = as_config("alpha", [&] { return parse_real(*v); });
    }
    if (auto v = r.text("run", "output")) plan.output = *v;
    plan.newton.tol = r.real("run", "newton_tol", plan.newton.tol);
    plan.newton.max_iter = static_cast<int>(r.count("run", "newton_max_iter", 50));
    plan.srock_stages = static_cast<int>(r.count("run", "srock_stages", 3));
    plan.srock_damping = r.real("run", "srock_damping", plan.srock_damping);
    if (r.find("run", "reference_samples")) plan.reference_samples = r.count("run", "reference_samples", 0);
    plan.reference_delta = r.real("run", "reference_delta", plan.reference_delta);
    if (auto v = r.text("run", "reference_law")) {
        plan.reference_law = as_config("reference_law", [&] { return parse_noise_law(*v); });
    }

    plan.noise.law = default_noise_law(plan.model, plan.mode);
    if (auto v = r.text("noise", "law")) plan.noise.law = as_config("law", [&] { return parse_noise_law(*v); });
    plan.noise.seed = r.count("noise", "seed", 0);

    r.reject_unused();
    validate_plan(plan);
    return plan;
}

std::string render_plan(const ExperimentPlan& plan) {
    std::ostringstream out;
    out << "[model]\nname = " << model_name(plan.model) << '\n';
    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, Rotation41>) {
                out << "b = " << format_number(p.b) << "\nsigma = " << format_number(p.sigma)
                    << "\nepsilon = " << format_number(p.epsilon) << '\n';
            } else if constexpr (std::is_same_v<P, GinzburgLandau46>) {
                out << "a = " << format_number(p.a) << "\nb = " << format_number(p.b)
                    << "\nsigma = " << format_number(p.sigma) << '\n';
            } else if constexpr (std::is_same_v<P, NonlinearRot47>) {
                out << "a = " << format_number(p.a) << "\nb = " << format_number(p.b) << '\n';
            } else if constexpr (std::is_same_v<P, BilinearSpec>) {
                out << "drift = " << matrix_text(p.drift) << '\n';
                for (std::size_t k = 0; k < p.diffusions.size(); ++k) {
                    out << "sigma" << k + 1 << " = " << matrix_text(p.diffusions[k]) << '\n';
                }
            }
        },
        plan.model);
    out << "x0 = " << join_numbers(plan.x0.data(), static_cast<std::size_t>(plan.x0.size())) << "\n\n";

    std::vector<std::string> schemes;
    for (auto s : plan.schemes) schemes.push_back(to_string(s));
    out << "[run]\nT = " << format_number(plan.T) << '\n'
        << "deltas = " << join_numbers(plan.deltas.data(), plan.deltas.size()) << '\n'
        << "schemes = " << join(schemes) << '\n'
        << "samples = " << plan.samples << '\n'
        << "mode = " << to_string(plan.mode) << '\n'
        << "functional = " << plan.functional << '\n'
        << "coordinate = " << plan.coordinate + 1 << '\n'
        << "alpha = " << (plan.alpha ? format_number(*plan.alpha) : std::string("default")) << '\n'
        << "output = " << plan.output << '\n'
        << "newton_tol = " << format_number(plan.newton.tol) << '\n'
        << "newton_max_iter = " << plan.newton.max_iter << '\n'
        << "srock_stages = " << plan.srock_stages << '\n'
        << "srock_damping = " << format_number(plan.srock_damping) << '\n';
    if (plan.reference_samples) out << "reference_samples = " << *plan.reference_samples << '\n';
    out << "reference_delta = " << format_number(plan.reference_delta) << '\n'
        << "reference_law = " << to_string(plan.reference_law) << "\n\n";

    out << "[noise]\nlaw = " << to_string(plan.noise.law) << "\nseed = " << plan.noise.seed << '\n';
    return out.str();
}

void validate_plan(const ExperimentPlan& plan) {
    const ModelPtr model = as_config("name", [&] { return make_model(plan.model); });
    if (plan.x0.size() != model_dim(plan.model)) {
        throw ConfigError("x0 must have " + std::to_string(model_dim(plan.model)) + " entries", "x0");
    }
    if (!plan.x0.allFinite()) throw ConfigError("x0 must be finite", "x0");
    if (!(plan.T > 0.0) || !std::isfinite(plan.T)) throw ConfigError("T must be positive", "T");
    if (plan.deltas.empty()) throw ConfigError("deltas must not be empty", "deltas");
    for (double delta : plan.deltas) {
        as_config("deltas", [&] { return step_count(plan.T, delta); });
    }
    if (plan.schemes.empty()) throw ConfigError("schemes must not be empty", "schemes");
    for (auto kind : plan.schemes) {
        if (kind == SchemeKind::Exact && !std::holds_alternative<Rotation41>(plan.model)) {
            throw ConfigError("the exact scheme is available for rotation41 only", "schemes");
        }
    }
    if (plan.samples < 1) throw ConfigError("samples must be at least 1", "samples");
    as_config("functional", [&] { return make_functional(plan.functional, 0); });
    if (plan.coordinate < 0 || plan.coordinate >= model_dim(plan.model)) {
        throw ConfigError("coordinate out of range", "coordinate");
    }
    as_config("newton_tol", [&] {
        plan.scheme_id(SchemeKind::Dnd).validate();
        return 0;
    });
    if (plan.alpha) {
        if (!std::isfinite(*plan.alpha)) throw ConfigError("alpha must be finite", "alpha");
        if (*plan.alpha == 0.0 && !model->equilibrium_at_zero()) {
            throw ConfigError("alpha = 0 needs an equilibrium at the origin", "alpha");
        }
    }
    if (plan.mode == PlanMode::Strong) {
        if (!std::holds_alternative<Rotation41>(plan.model)) {
            throw ConfigError("strong mode needs the rotation41 model", "mode");
        }
        if (plan.noise.law != NoiseLaw::Gaussian) throw ConfigError("strong mode needs Gaussian noise", "law");
    } else if (!std::holds_alternative<Rotation41>(plan.model)) {
        if (plan.reference_samples && *plan.reference_samples < 1) {
            throw ConfigError("reference_samples must be at least 1", "reference_samples");
        }
        for (double delta : plan.deltas) {
            as_config("reference_delta", [&] { return step_count(observation_step(delta), plan.reference_delta); });
        }
    }
}

double resolved_alpha(const ExperimentPlan& plan) {
    if (plan.alpha) return *plan.alpha;
    return alpha_default(*make_model(plan.model));
}

std::string series_csv(const std::vector<SeriesRow>& rows) {
    std::ostringstream out;
    out << kSeriesHeader << '\n';
    for (const auto& r : rows) {
        out << r.scheme << ',' << format_number(r.delta) << ',' << format_number(r.t) << ','
            << format_number(r.mean) << ',' << format_number(r.ci99) << '\n';
    }
    return out.str();
}

namespace {

void append_series(std::vector<SeriesRow>& out, const std::string& scheme, double delta,
                   const std::vector<double>& times, const std::vector<RunningStats>& stats) {
    for (std::size_t i = 0; i < times.size(); ++i) {
        out.push_back({scheme, delta, times[i], stats[i].mean, stats[i].ci99()});
    }
}

}  // namespace

ExperimentResult execute_plan(const ExperimentPlan& plan, unsigned workers) {
    validate_plan(plan);
    const ModelPtr model = make_model(plan.model);
    ExperimentResult result;

    if (plan.mode == PlanMode::Strong) {
        for (auto kind : plan.schemes) {
            for (double delta : plan.deltas) {
                ErrorRow row;
                row.scheme = to_string(kind);
                row.delta = delta;
                row.T = plan.T;
                row.functional = "relative_squared_error";
                row.samples = plan.samples;
                row.seed = plan.noise.seed;
                try {
                    const ErrorEstimate e = strong_error_rel(plan.scheme_id(kind), model, plan.x0, delta, plan.T,
                                                             plan.samples, plan.noise, workers, plan.alpha);
                    row.estimate = e.value;
                    row.ci99 = e.ci;
                    row.eps_hat = e.value;
                    row.failed_paths = e.failed_paths;
                } catch (const UndefinedEstimateError& e) {
                    row.estimate = row.ci99 = std::nan("");
                    row.failed_paths = plan.samples;
                    result.all_failed.push_back(row.scheme + " delta=" + format_number(delta));
                }
                result.table.rows.push_back(std::move(row));
            }
        }
        return result;
    }

    const Functional phi = plan.phi();
    const bool coupled = std::holds_alternative<Rotation41>(plan.model) && plan.noise.law == NoiseLaw::Gaussian;
    std::optional<ReferenceValues> shared_reference;
    if (!coupled) {
        double h = observation_step(plan.deltas.front());
        for (double delta : plan.deltas) h = std::min(h, observation_step(delta));
        shared_reference =
            reference_solution(model, plan.x0, plan.T, phi, h, plan.reference_recipe(), plan.noise.seed, workers);
        if (shared_reference->failed_paths > 0) {
            result.warnings.push_back("reference: " + std::to_string(shared_reference->failed_paths) +
                                      " failed paths excluded");
        }
        if (plan.mode == PlanMode::StabilityTrace) {
            append_series(result.series, "reference", plan.reference_delta, shared_reference->times,
                          shared_reference->stats);
        }
    }

    std::vector<bool> exact_series_done(plan.deltas.size(), false);
    for (auto kind : plan.schemes) {
        for (std::size_t di = 0; di < plan.deltas.size(); ++di) {
            const double delta = plan.deltas[di];
            BatchConfig config;
            config.scheme = plan.scheme_id(kind);
            config.model = model;
            config.x0 = plan.x0;
            config.dt = delta;
            config.T = plan.T;
            config.phi = phi;
            config.noise = plan.noise;
            config.samples = plan.samples;
            config.workers = workers;
            config.alpha = plan.alpha;
            config.couple_exact = coupled;
            const BatchResult batch = run_batch(config);

            ErrorRow row;
            row.scheme = to_string(kind);
            row.delta = delta;
            row.T = plan.T;
            row.functional = phi.label();
            row.samples = plan.samples;
            row.failed_paths = batch.failed_paths;
            row.seed = plan.noise.seed;
            const std::string tag = row.scheme + " delta=" + format_number(delta);
            if (batch.failed_paths > 0) {
                result.warnings.push_back(tag + ": " + std::to_string(batch.failed_paths) + " of " +
                                          std::to_string(batch.samples) + " paths failed (" + batch.first_failure +
                                          ")");
            }

            const ReferenceValues reference = coupled ? reference_from_exact(batch) : *shared_reference;
            if (coupled && plan.mode == PlanMode::StabilityTrace && !exact_series_done[di]) {
                append_series(result.series, "exact", delta, reference.times, reference.stats);
                exact_series_done[di] = true;
            }
            if (batch.failed_paths == batch.samples) {
                row.estimate = row.ci99 = std::nan("");
                result.all_failed.push_back(tag);
                result.table.rows.push_back(std::move(row));
                continue;
            }
            row.estimate = batch.scheme.back().mean;
            row.ci99 = batch.scheme.back().ci99();
            if (plan.mode == PlanMode::WeakRel) {
                try {
                    row.eps_r = weak_error_rel(batch, reference).value;
                } catch (const UndefinedEstimateError& e) {
                    result.warnings.push_back(tag + ": relative error undefined (" + e.what() + ")");
                }
            } else {
                row.eps_a = weak_error_abs(batch, reference).value;
            }
            if (plan.mode == PlanMode::StabilityTrace) {
                append_series(result.series, row.scheme, delta, batch.times, batch.scheme);
            }
            result.table.rows.push_back(std::move(row));
        }
    }
    return result;
}

ExperimentResult run_experiment(const ExperimentPlan& plan, unsigned workers) {
    ExperimentResult result = execute_plan(plan, workers);
    const std::filesystem::path dir(plan.output);
    std::filesystem::create_directories(dir);
    auto write = [](const std::filesystem::path& path, const std::string& content) {
        std::ofstream out(path, std::ios::binary);
        out << content;
        if (!out) throw Error("cannot write " + path.string());
    };
    write(dir / "errors.csv", result.table.to_csv());
    if (plan.mode == PlanMode::StabilityTrace) write(dir / "series.csv", series_csv(result.series));
    return result;
}

}  // namespace dnd
