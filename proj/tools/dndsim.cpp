// Command-line experiment runner.

#include "dnd/dnd.hpp"
#include "dnd/plan.hpp"
#include "dnd/problems.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

dnd::ExperimentPlan load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw dnd::ConfigError("cannot open plan file " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return dnd::parse_plan(buffer.str());
}

void list_models() {
    const std::vector<dnd::ModelSpec> models{dnd::Rotation41{}, dnd::GinzburgLandau46{}, dnd::NonlinearRot47{},
                                             dnd::Shifted48{}};
    for (const auto& spec : models) {
        const auto model = dnd::make_model(spec);
        std::cout << dnd::model_name(spec) << "  d=" << model->dim() << " m=" << model->noise_count()
                  << " equilibrium_at_zero=" << (model->equilibrium_at_zero() ? "yes" : "no")
                  << " alpha_default=" << dnd::format_number(dnd::alpha_default(*model)) << '\n';
    }
    std::cout << "bilinear  d, m from [model] drift/sigma1.. matrices\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Direction-and-norm SDE experiments"};
    app.require_subcommand(1);

    std::string plan_path;
    std::optional<std::uint64_t> samples;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    unsigned workers = 1;

    auto* run = app.add_subcommand("run", "Run a plan and write errors.csv / series.csv");
    run->add_option("plan", plan_path, "Plan file")->required();
    run->add_option("--samples", samples, "Override the sample count");
    run->add_option("--seed", seed, "Override the noise seed");
    run->add_option("--out", out_dir, "Override the output directory");
    run->add_option("--workers", workers, "Worker threads")->check(CLI::Range(1u, 1024u));

    auto* validate = app.add_subcommand("validate", "Parse and validate a plan");
    validate->add_option("plan", plan_path, "Plan file")->required();

    auto* models = app.add_subcommand("list-models", "List the bundled models");

    CLI11_PARSE(app, argc, argv);

    try {
        if (models->parsed()) {
            list_models();
            return 0;
        }
        dnd::ExperimentPlan plan = load(plan_path);
        if (validate->parsed()) {
            std::cout << dnd::render_plan(plan);
            return 0;
        }
        if (samples) plan.samples = *samples;
        if (seed) plan.noise.seed = *seed;
        if (out_dir) plan.output = *out_dir;
        dnd::validate_plan(plan);

        const auto result = dnd::run_experiment(plan, workers);
        for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
        std::cout << result.table.to_csv();
        if (!result.all_failed.empty()) {
            for (const auto& tag : result.all_failed) std::cerr << "error: every path failed for " << tag << '\n';
            return 3;
        }
        return 0;
    } catch (const dnd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const dnd::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
