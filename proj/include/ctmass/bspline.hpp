#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "ctmass/volume.hpp"

namespace ctmass {

// Uniform cubic B-spline basis values for the four control points that
// support a point with fractional offset t in [0,1) within its cell.
inline std::array<double, 4> cubic_bspline_weights(double t)
{
    const double t2 = t * t, t3 = t2 * t;
    const double s = 1.0 - t;
    return {s * s * s / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0};
}

// Centered cubic B-spline kernel and its derivative (support (-2,2)).
inline double cubic_bspline(double x)
{
    const double a = x < 0 ? -x : x;
    if (a < 1.0)
        return (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0;
    if (a < 2.0) {
        const double b = 2.0 - a;
        return b * b * b / 6.0;
    }
    return 0.0;
}

inline double cubic_bspline_derivative(double x)
{
    const double a = x < 0 ? -x : x;
    const double sign = x < 0 ? -1.0 : 1.0;
    if (a < 1.0)
        return sign * (-12.0 * a + 9.0 * a * a) / 6.0;
    if (a < 2.0) {
        const double b = 2.0 - a;
        return -sign * 0.5 * b * b;
    }
    return 0.0;
}

// The 4x4x4 control-point neighbourhood supporting one point.
struct BSplineSupport {
    Index3 base{};                                 // first control index per axis
    std::array<std::array<double, 4>, 3> weights{}; // per-axis basis values
    bool inside = false;                           // all 64 points exist in the grid
};

// Cubic B-spline free-form deformation. Maps fixed-space points to moving
// space: T(x) = x + sum_c B(x) d_c over the 64 supporting control points.
// Control point (i,j,k) sits at grid_origin + (i,j,k) * grid_spacing.
class BSplineTransform {
public:
    BSplineTransform() = default;

    // Zero field whose grid covers `domain` with at least one extra control
    // point beyond the cubic support on every side.
    static BSplineTransform covering(const Geometry& domain, double grid_spacing_mm);

    BSplineTransform(const Geometry& domain, const Vec3& grid_origin, const Vec3& grid_spacing,
                     const Index3& grid_dims, std::vector<double> displacements);

    const Geometry& domain() const { return domain_; }
    const Vec3& grid_origin() const { return grid_origin_; }
    const Vec3& grid_spacing() const { return grid_spacing_; }
    const Index3& grid_dims() const { return grid_dims_; }
    std::size_t control_point_count() const
    {
        return static_cast<std::size_t>(grid_dims_[0] * grid_dims_[1] * grid_dims_[2]);
    }
    // Flat layout: 3*control_index + axis.
    const std::vector<double>& displacements() const { return displacements_; }
    std::vector<double>& displacements() { return displacements_; }

    std::size_t control_index(std::int64_t i, std::int64_t j, std::int64_t k) const
    {
        return static_cast<std::size_t>(i + grid_dims_[0] * (j + grid_dims_[1] * k));
    }
    Vec3 control_point_position(std::int64_t i, std::int64_t j, std::int64_t k) const
    {
        return {grid_origin_[0] + i * grid_spacing_[0], grid_origin_[1] + j * grid_spacing_[1],
                grid_origin_[2] + k * grid_spacing_[2]};
    }

    void set_constant(const Vec3& d);

    BSplineSupport support(const Vec3& point) const;
    Vec3 displacement(const Vec3& point) const;
    Vec3 displacement(const BSplineSupport& s) const;

    // Same spline on a grid of half the spacing (exact dyadic refinement).
    BSplineTransform refined() const;

    // Throws ArgumentError on inconsistent sizes or non-finite values.
    void validate() const;

    bool operator==(const BSplineTransform&) const = default;

private:
    Geometry domain_;
    Vec3 grid_origin_{};
    Vec3 grid_spacing_{1.0, 1.0, 1.0};
    Index3 grid_dims_{0, 0, 0};
    std::vector<double> displacements_;
};

// Identity outside the grid support.
Vec3 transform_point(const BSplineTransform& transform, const Vec3& point);

} // namespace ctmass
