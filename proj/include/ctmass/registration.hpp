#pragma once

// Deformable atlas-to-scan registration: cubic B-spline free-form
// deformation driven by Parzen-window mutual information, optimized by
// stochastic gradient ascent over a multi-resolution pyramid, plus the
// mask propagation that turns a registered atlas into a segmentation.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ctmass/bspline.hpp"
#include "ctmass/volume.hpp"

namespace ctmass {

struct RegistrationConfig {
    int levels = 3;
    int max_iterations_per_level = 200;
    int mi_bins = 32;
    int samples_per_iteration = 2048;
    double final_grid_spacing = 16.0; // mm
    // Step size a / (A + t)^alpha, in units of the level's smallest voxel
    // spacing per iteration; t is the adaptive time.
    double sgd_a = 1.0;
    double sgd_A = 50.0;
    double sgd_alpha = 0.602;
    double mask_threshold = 0.5;
    double air_threshold = kAirHU; // center-of-mass weighting
    std::uint64_t seed = 0;

    // Throws ArgumentError on non-positive counts or levels < 1.
    void validate() const;
};

struct SimilarityReport {
    double mi_initial = 0.0; // nats, after center-of-mass alignment
    double mi_final = 0.0;
    std::vector<int> iterations_used; // per level, coarse to fine
};

struct RegistrationResult {
    BSplineTransform transform;
    SimilarityReport report;
};

// Parzen-window MI estimate in nats. The fixed axis uses hard binning, the
// moving axis a cubic B-spline window. Intensities are rescaled to the bin
// range using the min/max of the sampled values on each side.
double mutual_information(const Volume& fixed, const Volume& moving,
                          const BSplineTransform& transform, int bins,
                          std::span<const Vec3> sample_points);

// For each target voxel center x: sample_trilinear(moving, T(x)).
Volume warp_volume(const BSplineTransform& transform, const Volume& moving,
                   const Geometry& target, double fill = kAirHU);

// Fractional trilinear warp of a binary mask, thresholded back to binary.
Mask warp_mask(const BSplineTransform& transform, const Mask& mask, const Geometry& target,
               double threshold = 0.5);

// Translation com(moving) - com(fixed), in mm.
Vec3 initial_align(const Volume& fixed, const Volume& moving, double threshold = kAirHU);

// Transform maps fixed-space points into moving space.
RegistrationResult register_images(const Volume& fixed, const Volume& moving,
                                   const RegistrationConfig& config);

struct Atlas {
    Volume volume;
    Mask mask;
};

struct Segmentation {
    std::vector<Mask> masks;             // one per atlas, atlas order
    std::vector<SimilarityReport> reports;
};

// Registers every atlas onto `target` and propagates its mask. Atlas i uses
// the registration seed derive_seed(config.seed, {i}). Up to `jobs` atlases
// run concurrently; output order is atlas order regardless.
Segmentation segment_by_atlases(const Volume& target, std::span<const Atlas> atlases,
                                const RegistrationConfig& config, int jobs = 1);

} // namespace ctmass
