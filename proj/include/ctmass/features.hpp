#pragma once

// Region descriptors for an ensemble of masks over one scan.
//
// Each region contributes a block of 6 + H values:
//   count, total HU, mean HU, std HU, skewness, excess kurtosis, hist_0..hist_{H-1}
// and a scan with M atlas masks yields M such blocks followed by the block
// of the majority-vote mean mask, (6 + H) * (M + 1) values in all.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ctmass/registration.hpp"
#include "ctmass/volume.hpp"

namespace ctmass {

struct HistogramSpec {
    double lo = 0.0;
    double hi = 200.0;
    double bin_width = 10.0;

    // Throws ArgumentError unless hi > lo and the width divides the range.
    void validate() const;
    int bins() const;
};

inline constexpr int kMomentFeatures = 6;

struct RegionFeatures {
    double voxel_count = 0.0;
    double total_hu = 0.0;
    double mean_hu = 0.0;
    double std_hu = 0.0;
    double skewness = 0.0;
    double kurtosis = 0.0; // excess
    std::vector<double> histogram;

    // Block layout used in the feature vector.
    std::vector<double> flatten() const;
};

// Population moments over every in-mask voxel; the histogram counts voxels
// with lo <= HU < hi in half-open bins. An empty mask gives all zeros.
RegionFeatures extract_region_features(const Volume& volume, const Mask& mask,
                                       const HistogramSpec& spec = {});

// Voxelwise majority vote: mean weight >= 0.5.
Mask mean_mask(std::span<const Mask> masks);

int feature_count(int atlases, const HistogramSpec& spec = {});

// atlas1_count, atlas1_total_hu, ..., atlas1_hist_00, ..., mean_count, ...
std::vector<std::string> feature_names(int atlases, const HistogramSpec& spec = {});

std::vector<double> assemble_features(const Volume& volume, std::span<const Mask> masks,
                                      const HistogramSpec& spec = {});

struct FeatureMatrix {
    std::vector<std::string> column_names;
    std::vector<std::string> row_ids;
    std::vector<std::vector<double>> rows;
    std::vector<double> targets; // grams; empty at predict time

    std::size_t row_count() const { return rows.size(); }
    std::size_t column_count() const { return column_names.size(); }
    // Throws ArgumentError on ragged rows, duplicate names or a target
    // count that matches neither zero nor the row count.
    void validate() const;
};

// CSV: header "id,<names...>[,weight_g]", one line per row, values printed
// with 17 significant digits.
void write_feature_csv(const FeatureMatrix& matrix, const std::filesystem::path& path);
FeatureMatrix read_feature_csv(const std::filesystem::path& path);

struct TrainingSetOptions {
    HistogramSpec histogram;
    RegistrationConfig registration;
    int jobs = 1;
};

struct TrainingSet {
    FeatureMatrix matrix;
    std::vector<Segmentation> segmentations; // per scan, for QC
};

// Segments every scan with every atlas and assembles one row per scan.
// Scan i registers with seed derive_seed(registration.seed, {i}).
TrainingSet assemble_training_set(std::span<const Volume> scans, std::span<const Atlas> atlases,
                                  std::span<const double> weights,
                                  std::span<const std::string> ids,
                                  const TrainingSetOptions& options);

} // namespace ctmass
