#include "ctmass/bspline.hpp"

#include <algorithm>
#include <cmath>

#include "ctmass/error.hpp"

namespace ctmass {

BSplineTransform BSplineTransform::covering(const Geometry& domain, double grid_spacing_mm)
{
    domain.validate();
    if (!(grid_spacing_mm > 0.0))
        throw ArgumentError("bspline: grid spacing must be positive");
    Vec3 origin, spacing;
    Index3 dims;
    for (int a = 0; a < 3; ++a) {
        // Voxel centers span [origin, origin + (n-1)*spacing].
        const double span = (domain.dims[a] - 1) * domain.spacing[a];
        spacing[a] = grid_spacing_mm;
        origin[a] = domain.origin[a] - grid_spacing_mm;
        dims[a] = static_cast<std::int64_t>(std::ceil(span / grid_spacing_mm)) + 4;
    }
    const auto n = static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
    return BSplineTransform(domain, origin, spacing, dims, std::vector<double>(3 * n, 0.0));
}

BSplineTransform::BSplineTransform(const Geometry& domain, const Vec3& grid_origin,
                                   const Vec3& grid_spacing, const Index3& grid_dims,
                                   std::vector<double> displacements)
    : domain_(domain), grid_origin_(grid_origin), grid_spacing_(grid_spacing),
      grid_dims_(grid_dims), displacements_(std::move(displacements))
{
    validate();
}

void BSplineTransform::validate() const
{
    domain_.validate();
    for (int a = 0; a < 3; ++a) {
        if (grid_dims_[a] < 4)
            throw ArgumentError("bspline: each grid axis needs at least 4 control points");
        if (!(grid_spacing_[a] > 0.0))
            throw ArgumentError("bspline: grid spacing must be positive");
    }
    if (displacements_.size() != 3 * control_point_count())
        throw ArgumentError("bspline: displacement array length must be 3 * control points");
    for (double d : displacements_)
        if (!std::isfinite(d))
            throw ArgumentError("bspline: non-finite displacement");
}

void BSplineTransform::set_constant(const Vec3& d)
{
    for (std::size_t c = 0; c < control_point_count(); ++c)
        for (int a = 0; a < 3; ++a)
            displacements_[3 * c + a] = d[a];
}

BSplineSupport BSplineTransform::support(const Vec3& point) const
{
    BSplineSupport s;
    for (int a = 0; a < 3; ++a) {
        const double u = (point[a] - grid_origin_[a]) / grid_spacing_[a];
        const double cell = std::floor(u);
        s.base[a] = static_cast<std::int64_t>(cell) - 1;
        if (!std::isfinite(u) || s.base[a] < 0 || s.base[a] + 3 >= grid_dims_[a])
            return s;
        s.weights[a] = cubic_bspline_weights(u - cell);
    }
    s.inside = true;
    return s;
}

Vec3 BSplineTransform::displacement(const BSplineSupport& s) const
{
    Vec3 d{0.0, 0.0, 0.0};
    if (!s.inside)
        return d;
    const std::int64_t sx = grid_dims_[0];
    const std::int64_t sxy = grid_dims_[0] * grid_dims_[1];
    for (int c = 0; c < 4; ++c) {
        const double wz = s.weights[2][c];
        for (int b = 0; b < 4; ++b) {
            const double wyz = wz * s.weights[1][b];
            const std::int64_t row = s.base[0] + sx * (s.base[1] + b) + sxy * (s.base[2] + c);
            const double* p = displacements_.data() + 3 * row;
            for (int a = 0; a < 4; ++a) {
                const double w = wyz * s.weights[0][a];
                d[0] += w * p[3 * a];
                d[1] += w * p[3 * a + 1];
                d[2] += w * p[3 * a + 2];
            }
        }
    }
    return d;
}

Vec3 BSplineTransform::displacement(const Vec3& point) const
{
    return displacement(support(point));
}

namespace {

// One-dimensional dyadic refinement along `axis` of a field with three
// values per node. Out-of-range neighbours replicate the edge;
// those nodes lie outside the support of any domain point.
std::vector<double> refine_axis(const std::vector<double>& in, const Index3& dims, int axis,
                                Index3& out_dims)
{
    out_dims = dims;
    out_dims[axis] = 2 * dims[axis] - 1;
    const auto n_out = static_cast<std::size_t>(out_dims[0] * out_dims[1] * out_dims[2]);
    std::vector<double> out(3 * n_out);
    auto in_index = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
        return static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k));
    };
    for (std::int64_t k = 0; k < out_dims[2]; ++k)
        for (std::int64_t j = 0; j < out_dims[1]; ++j)
            for (std::int64_t i = 0; i < out_dims[0]; ++i) {
                std::array<std::int64_t, 3> idx{i, j, k};
                const std::int64_t f = idx[axis];
                const std::int64_t n = dims[axis];
                auto coarse = [&](std::int64_t c) {
                    auto q = idx;
                    q[axis] = std::clamp<std::int64_t>(c, 0, n - 1);
                    return in_index(q[0], q[1], q[2]);
                };
                const auto o = static_cast<std::size_t>(i + out_dims[0] * (j + out_dims[1] * k));
                for (int a = 0; a < 3; ++a) {
                    double v;
                    if (f % 2 == 0) {
                        const std::int64_t c = f / 2;
                        v = (in[3 * coarse(c - 1) + a] + 6.0 * in[3 * coarse(c) + a] +
                             in[3 * coarse(c + 1) + a]) /
                            8.0;
                    } else {
                        const std::int64_t c = f / 2;
                        v = 0.5 * (in[3 * coarse(c) + a] + in[3 * coarse(c + 1) + a]);
                    }
                    out[3 * o + a] = v;
                }
            }
    return out;
}

} // namespace

BSplineTransform BSplineTransform::refined() const
{
    std::vector<double> data = displacements_;
    Index3 dims = grid_dims_;
    for (int axis = 0; axis < 3; ++axis) {
        Index3 next;
        data = refine_axis(data, dims, axis, next);
        dims = next;
    }
    Vec3 spacing{grid_spacing_[0] / 2, grid_spacing_[1] / 2, grid_spacing_[2] / 2};
    return BSplineTransform(domain_, grid_origin_, spacing, dims, std::move(data));
}

Vec3 transform_point(const BSplineTransform& transform, const Vec3& point)
{
    return point + transform.displacement(point);
}

} // namespace ctmass
