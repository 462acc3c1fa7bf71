#pragma once

// Volumetric data model: Hounsfield-valued scalar grids with physical
// geometry, region masks over them, and the resampling primitives used by
// registration and the phantom generator.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ctmass {

using Vec3 = std::array<double, 3>;
using Index3 = std::array<std::int64_t, 3>;

inline constexpr double kAirHU = -1000.0;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }

// Voxel grid placement. Voxel (i,j,k) has its center at
// origin + (i*spacing[0], j*spacing[1], k*spacing[2]) in world millimetres.
struct Geometry {
    Index3 dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    // Throws ArgumentError unless dims >= 1 and spacing > 0 on every axis.
    void validate() const;

    std::size_t voxel_count() const
    {
        return static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
    }
    std::size_t linear_index(std::int64_t i, std::int64_t j, std::int64_t k) const
    {
        return static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k));
    }
    Index3 voxel_of(std::size_t linear) const;
    Vec3 world(std::int64_t i, std::int64_t j, std::int64_t k) const
    {
        return {origin[0] + i * spacing[0], origin[1] + j * spacing[1], origin[2] + k * spacing[2]};
    }
    Vec3 world(std::size_t linear) const
    {
        const auto v = voxel_of(linear);
        return world(v[0], v[1], v[2]);
    }
    // Continuous voxel coordinate of a world point.
    Vec3 continuous_index(const Vec3& p) const
    {
        return {(p[0] - origin[0]) / spacing[0], (p[1] - origin[1]) / spacing[1],
                (p[2] - origin[2]) / spacing[2]};
    }
    Vec3 extent() const
    {
        return {dims[0] * spacing[0], dims[1] * spacing[1], dims[2] * spacing[2]};
    }
    double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }

    bool operator==(const Geometry&) const = default;
};

// Scalar field in Hounsfield units. Immutable in spirit: operations return
// new volumes, and the accessors below are the only mutation path, used
// while constructing one.
class Volume {
public:
    Volume() = default;
    Volume(Geometry geometry, float fill = 0.0f);
    Volume(Geometry geometry, std::vector<float> values);

    const Geometry& geometry() const { return geometry_; }
    std::span<const float> values() const { return values_; }
    std::span<float> values() { return values_; }
    std::size_t size() const { return values_.size(); }

    float at(std::int64_t i, std::int64_t j, std::int64_t k) const
    {
        return values_[geometry_.linear_index(i, j, k)];
    }
    float& at(std::int64_t i, std::int64_t j, std::int64_t k)
    {
        return values_[geometry_.linear_index(i, j, k)];
    }
    float operator[](std::size_t n) const { return values_[n]; }
    float& operator[](std::size_t n) { return values_[n]; }

private:
    Geometry geometry_;
    std::vector<float> values_;
};

// Region membership over a geometry. Weights lie in [0,1]; a binary mask
// holds only 0 and 1.
class Mask {
public:
    Mask() = default;
    explicit Mask(Geometry geometry);
    Mask(Geometry geometry, std::vector<float> weights);

    const Geometry& geometry() const { return geometry_; }
    std::span<const float> weights() const { return weights_; }
    std::size_t size() const { return weights_.size(); }
    bool binary() const { return binary_; }
    bool contains(std::size_t n) const { return weights_[n] >= 0.5f; }

    void set(std::size_t n, bool inside)
    {
        weights_[n] = inside ? 1.0f : 0.0f;
    }
    std::size_t count() const;

    // Threshold fractional weights: w >= threshold becomes 1.
    Mask thresholded(float threshold = 0.5f) const;

private:
    Geometry geometry_;
    std::vector<float> weights_;
    bool binary_ = true;
};

double dice(const Mask& a, const Mask& b);

// Intensity-weighted centroid with weights max(HU - threshold, 0).
Vec3 center_of_mass(const Volume& volume, double threshold = kAirHU);

// Trilinear interpolation between the eight surrounding voxel centers;
// points outside the voxel-center hull return `fill`.
double sample_trilinear(const Volume& volume, const Vec3& point, double fill = kAirHU);

// Same, also returning the spatial gradient (HU/mm) of the interpolant.
// Outside the hull the gradient is zero.
double sample_trilinear_gradient(const Volume& volume, const Vec3& point, Vec3& gradient,
                                 double fill = kAirHU);

// Gaussian smoothing with sigma = 0.5*factor voxels followed by decimation.
Volume downsample(const Volume& volume, int factor);

} // namespace ctmass
