// ctmass: phantom | fit | predict | evaluate
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ctmass/error.hpp"
#include "ctmass/phantom.hpp"
#include "ctmass/pipeline.hpp"

namespace fs = std::filesystem;
using namespace ctmass;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::vector<SubjectEntry> subjects_from(const std::vector<std::string>& volumes)
{
    std::vector<SubjectEntry> out;
    for (const auto& v : volumes) {
        fs::path p(v);
        std::string id = p.filename().string();
        for (const char* ext : {".nii", ".img", ".hdr"})
            if (id.size() > std::strlen(ext) && id.ends_with(ext))
                id.resize(id.size() - std::strlen(ext));
        out.push_back({id, p});
    }
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Region weight estimation from CT volumes by multi-atlas segmentation"};
    app.require_subcommand(1);
    int jobs = 1;
    std::optional<std::uint64_t> seed;

    auto* phantom = app.add_subcommand("phantom", "Write a synthetic phantom cohort");
    int n = 40, m = 3;
    double magnitude = PhantomSpec{}.deformation_magnitude;
    std::string phantom_out;
    phantom->add_option("-n,--subjects", n, "Number of subjects")->check(CLI::PositiveNumber);
    phantom->add_option("-m,--atlases", m, "Number of atlases")->check(CLI::PositiveNumber);
    phantom->add_option("--magnitude", magnitude, "Deformation magnitude in mm");
    phantom->add_option("--seed", seed, "Master seed")->required();
    phantom->add_option("--out", phantom_out, "Output directory")->required();

    auto* fit_cmd = app.add_subcommand("fit", "Segment, extract features and select models");
    std::string config_path, fit_out;
    fit_cmd->add_option("--config", config_path, "Run configuration JSON")->required()->check(CLI::ExistingFile);
    fit_cmd->add_option("--out", fit_out, "Output directory (overrides the config)");
    fit_cmd->add_option("--seed", seed, "Master seed (overrides the config)");
    fit_cmd->add_option("--jobs", jobs, "Concurrent tasks")->check(CLI::PositiveNumber);

    auto* predict_cmd = app.add_subcommand("predict", "Predict region weights for new volumes");
    std::string bundle, predict_out, kind_name, predict_config;
    std::vector<std::string> volumes;
    predict_cmd->add_option("--bundle", bundle, "bundle.json written by fit")->required();
    predict_cmd->add_option("--kind", kind_name, "Regressor kind (default: best in fit)");
    predict_cmd->add_option("--config", predict_config,
                            "JSON with a subjects list [{id, volume}]")->check(CLI::ExistingFile);
    predict_cmd->add_option("--out", predict_out, "Predictions CSV")->required();
    predict_cmd->add_option("--jobs", jobs, "Concurrent tasks")->check(CLI::PositiveNumber);
    predict_cmd->add_option("volumes", volumes, "NIfTI volumes");

    auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against measured weights");
    std::string predictions, truth, eval_out;
    std::vector<std::string> compare;
    eval_cmd->add_option("--predictions", predictions, "Predictions CSV")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--truth", truth, "CSV of id, weight")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--compare", compare, "Other prediction CSVs to test against");
    eval_cmd->add_option("--out", eval_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*phantom) {
            PhantomSpec spec;
            spec.deformation_magnitude = magnitude;
            const auto cohort = generate_cohort(n, m, *seed, spec);
            write_cohort(cohort, phantom_out, *seed);
            std::cout << "wrote " << m << " atlases and " << n << " subjects to " << phantom_out << '\n';
        } else if (*fit_cmd) {
            auto config = RunConfig::from_json_file(config_path);
            if (seed)
                config.seed = seed;
            if (!fit_out.empty())
                config.out = fit_out;
            const auto summary = run_fit(config, jobs, &std::cerr);
            std::cout << "results written to " << config.out.string() << '\n';
            if (summary.best_kind)
                std::cout << "best kind: " << to_string(*summary.best_kind) << '\n';
        } else if (*predict_cmd) {
            auto subjects = subjects_from(volumes);
            if (!predict_config.empty()) {
                const auto c = RunConfig::from_json_file(predict_config);
                subjects.insert(subjects.end(), c.subjects.begin(), c.subjects.end());
            }
            std::optional<RegressorKind> kind;
            if (!kind_name.empty())
                kind = parse_kind(kind_name);
            write_predictions_csv(run_predict(bundle, subjects, kind, jobs), predict_out);
        } else if (*eval_cmd) {
            std::vector<fs::path> others(compare.begin(), compare.end());
            const auto m = run_evaluate(predictions, truth, others, eval_out);
            std::printf("n=%zu r2=%.4f rmse=%.4f g mean=%.4f g\n", m.n, m.r2, m.rmse, m.mean_target);
        }
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
    return kOk;
}
