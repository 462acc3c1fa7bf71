#pragma once

// Batch orchestration behind the command line: run configuration, the
// results table over feature sources and regressor kinds, and the fit,
// predict and evaluate commands.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ctmass/features.hpp"
#include "ctmass/registration.hpp"
#include "ctmass/regress.hpp"
#include "ctmass/selection.hpp"
#include "ctmass/stats.hpp"

namespace ctmass {

struct AtlasPaths {
    std::filesystem::path volume;
    std::filesystem::path mask;
};

struct SubjectEntry {
    std::string id;
    std::filesystem::path volume;
};

// One JSON document. Relative paths resolve against the document's
// directory. Seeds inside the registration and cv sections are ignored:
// every stage seed derives from the master seed (see StageSeeds).
struct RunConfig {
    std::vector<AtlasPaths> atlases;
    std::vector<SubjectEntry> subjects;
    std::filesystem::path weights_csv;
    HistogramSpec histogram;
    RegistrationConfig registration;
    CVProtocol cv;
    AnnealingSchedule annealing;
    std::vector<RegressorKind> kinds{std::begin(kAllKinds), std::end(kAllKinds)};
    std::filesystem::path out;
    std::optional<std::uint64_t> seed;

    static RunConfig from_json_file(const std::filesystem::path& path);
    // Throws ArgumentError when the seed is missing or a path does not exist.
    void validate() const;
};

// registration = derive_seed(master, {tag("registration")}), likewise "cv"
// and "selection".
struct StageSeeds {
    std::uint64_t registration;
    std::uint64_t cv;
    std::uint64_t selection;
};
StageSeeds stage_seeds(std::uint64_t master);

// Two-column CSV with a header: id, value.
std::vector<std::pair<std::string, double>> read_id_value_csv(const std::filesystem::path& path);

// Column groups of the feature matrix: "atlas1".."atlasM", "mean" and
// "multi-atlas" (every column).
struct FeatureSource {
    std::string name;
    std::vector<int> columns;
};
std::vector<FeatureSource> feature_sources(int atlases, const HistogramSpec& spec = {});

struct TableCell {
    std::string source;
    RegressorKind kind = RegressorKind::linear;
    bool feature_selection = false;
    SelectionResult result;
};

struct TableOptions {
    std::vector<RegressorKind> kinds{std::begin(kAllKinds), std::end(kAllKinds)};
    AnnealingSchedule schedule;
    CVProtocol protocol;
    std::uint64_t selection_seed = 0;
    int jobs = 1;
    std::vector<std::string> sources; // empty: all
    bool without_selection = true;
    bool with_selection = true;
};

// Cell (source, kind, fs) anneals with seed
// derive_seed(selection_seed, {tag(source), tag(kind), fs}).
std::vector<TableCell> compute_results_table(const FeatureMatrix& matrix, int atlases,
                                             const HistogramSpec& histogram,
                                             const TableOptions& options);

const TableCell* find_cell(const std::vector<TableCell>& cells, const std::string& source,
                           RegressorKind kind, bool feature_selection);

// Plain-text rendering: one block without and one with feature selection,
// rows are sources and columns are kinds, cells "mean ± std".
std::string render_results_table(const std::vector<TableCell>& cells,
                                 const std::vector<std::string>& sources,
                                 const std::vector<RegressorKind>& kinds);

struct FitSummary {
    std::vector<TableCell> cells;
    std::optional<RegressorKind> best_kind;
};

// Segmentation, features, the results table, comparisons and final models
// fit on every subject. Writes into config.out (or `out` when non-empty).
FitSummary run_fit(const RunConfig& config, int jobs, std::ostream* log = nullptr);

struct Prediction {
    std::string id;
    double grams = 0.0;
};

// Segments each volume with the bundle's atlases and applies the model of
// `kind` (the bundle's best kind when empty).
std::vector<Prediction> run_predict(const std::filesystem::path& bundle,
                                    const std::vector<SubjectEntry>& subjects,
                                    const std::optional<RegressorKind>& kind, int jobs);

void write_predictions_csv(const std::vector<Prediction>& p, const std::filesystem::path& path);

struct Metrics {
    std::size_t n = 0;
    double r2 = 0.0;
    double rmse = 0.0;
    double mean_target = 0.0;
};

Metrics compute_metrics(std::span<const double> y, std::span<const double> yhat);

// Matches predictions to truth by id (throws ArgumentError on any mismatch),
// writes metrics.json, residuals.csv and, when comparison sets are given,
// comparisons.csv with Wilcoxon tests on squared residuals.
Metrics run_evaluate(const std::filesystem::path& predictions, const std::filesystem::path& truth,
                     const std::vector<std::filesystem::path>& compare,
                     const std::filesystem::path& out);

} // namespace ctmass
