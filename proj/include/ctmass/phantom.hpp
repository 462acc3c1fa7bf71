#pragma once

// Synthetic CT phantoms with known region masks, weights and deformations.
//
// A phantom is an ellipsoidal body in air holding a paired muscle region
// (the target), rod-like bones, and a lateral "distractor" lobe with the
// same radiodensity as the muscle that touches it but is not part of the
// target. The true weight integrates a hidden affine density map over the
// target mask; the dissected weight adds a multiplicative truncation bias
// and additive noise on top.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctmass/bspline.hpp"
#include "ctmass/registration.hpp"
#include "ctmass/volume.hpp"

namespace ctmass {

struct TissueHU {
    double mean = 0.0;
    double sd = 0.0;
};

struct PhantomSpec {
    Index3 dims{64, 64, 96};
    Vec3 spacing{2.0, 2.0, 2.0};
    TissueHU body{40.0, 15.0};
    TissueHU muscle{60.0, 10.0};
    TissueHU bone{800.0, 50.0};
    // Planted deformations: control displacements ~ N(0, magnitude^2) on a
    // grid of deformation_grid_spacing mm.
    double deformation_magnitude = 4.0;
    double deformation_grid_spacing = 32.0;
    // Anatomy scale per axis (1 = nominal size).
    Vec3 scale{1.0, 1.0, 1.0};
    double bias_lo = 0.95;
    double bias_hi = 0.99;
    double dissection_noise_sd = 2.0; // grams

    Geometry geometry() const;
    // Throws ArgumentError if the magnitude can fold the field or a
    // distribution is not finite.
    void validate() const;
};

struct PhantomTruth {
    Mask true_mask;
    Mask distractor_mask;
    double true_weight_g = 0.0;
    double dissected_weight_g = 0.0;
    double bias_factor = 1.0;
    double noise_g = 0.0;
    BSplineTransform deformation; // maps phantom space to nominal pose
};

struct Phantom {
    Volume volume;
    PhantomTruth truth;
};

// Hidden radiodensity-to-mass map, g/cm^3.
inline double hidden_density(double hu) { return 1.0 + hu / 1000.0; }

// Sum over mask voxels of hidden_density(HU) * voxel volume, in grams.
double integrate_weight(const Volume& volume, const Mask& mask);

// Nominal-pose phantom (identity deformation).
Phantom generate_base(const PhantomSpec& spec, std::uint64_t seed);

// Resamples a phantom through a random smooth field and recomputes the
// true and dissected weights on the warped mask.
Phantom deform(const Volume& volume, const PhantomTruth& truth, std::uint64_t seed,
               double magnitude, double grid_spacing = 32.0);

// Random control field used for planted deformations.
BSplineTransform random_deformation(const Geometry& geometry, double magnitude,
                                    double grid_spacing, std::uint64_t seed);

struct Cohort {
    std::vector<Atlas> atlases;
    std::vector<PhantomTruth> atlas_truths;
    std::vector<Volume> subjects;
    std::vector<PhantomTruth> subject_truths;
    std::vector<double> dissected_weights() const;
};

// m_atlases nominal-pose phantoms with exact masks, and n subjects with
// per-axis size jitter in [0.9, 1.1] and planted deformations.
Cohort generate_cohort(int n, int m_atlases, std::uint64_t seed, const PhantomSpec& spec = {});

// Directory layout: atlases/atlas_NN.nii + atlas_NN_mask.nii,
// subjects/subject_NNN.nii, weights.csv (id, dissected_weight_g),
// truth.json plus truth/subject_NNN_mask.nii, and config.json ready for
// `ctmass fit`.
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir, std::uint64_t seed);

std::string subject_id(std::size_t index);

} // namespace ctmass
