#include "ctmass/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ctmass/error.hpp"

namespace ctmass {

void Geometry::validate() const
{
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1) {
            std::ostringstream msg;
            msg << "geometry: dims[" << a << "] = " << dims[a] << " must be >= 1";
            throw ArgumentError(msg.str());
        }
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            std::ostringstream msg;
            msg << "geometry: spacing[" << a << "] = " << spacing[a] << " must be > 0";
            throw ArgumentError(msg.str());
        }
        if (!std::isfinite(origin[a]))
            throw ArgumentError("geometry: origin must be finite");
    }
}

Index3 Geometry::voxel_of(std::size_t linear) const
{
    const auto n = static_cast<std::int64_t>(linear);
    const std::int64_t i = n % dims[0];
    const std::int64_t j = (n / dims[0]) % dims[1];
    const std::int64_t k = n / (dims[0] * dims[1]);
    return {i, j, k};
}

Volume::Volume(Geometry geometry, float fill) : geometry_(geometry)
{
    geometry_.validate();
    values_.assign(geometry_.voxel_count(), fill);
}

Volume::Volume(Geometry geometry, std::vector<float> values)
    : geometry_(geometry), values_(std::move(values))
{
    geometry_.validate();
    if (values_.size() != geometry_.voxel_count())
        throw ArgumentError("volume: value count " + std::to_string(values_.size()) +
                            " does not match geometry voxel count " +
                            std::to_string(geometry_.voxel_count()));
    for (float v : values_)
        if (!std::isfinite(v))
            throw ArgumentError("volume: non-finite voxel value");
}

Mask::Mask(Geometry geometry) : geometry_(geometry)
{
    geometry_.validate();
    weights_.assign(geometry_.voxel_count(), 0.0f);
}

Mask::Mask(Geometry geometry, std::vector<float> weights)
    : geometry_(geometry), weights_(std::move(weights))
{
    geometry_.validate();
    if (weights_.size() != geometry_.voxel_count())
        throw ArgumentError("mask: weight count does not match geometry voxel count");
    binary_ = true;
    for (float w : weights_) {
        if (!(w >= 0.0f && w <= 1.0f))
            throw ArgumentError("mask: weights must lie in [0,1]");
        if (w != 0.0f && w != 1.0f)
            binary_ = false;
    }
}

std::size_t Mask::count() const
{
    return static_cast<std::size_t>(
        std::count_if(weights_.begin(), weights_.end(), [](float w) { return w >= 0.5f; }));
}

Mask Mask::thresholded(float threshold) const
{
    std::vector<float> out(weights_.size());
    std::transform(weights_.begin(), weights_.end(), out.begin(),
                   [threshold](float w) { return w >= threshold ? 1.0f : 0.0f; });
    return Mask(geometry_, std::move(out));
}

double dice(const Mask& a, const Mask& b)
{
    if (!(a.geometry() == b.geometry()))
        throw ArgumentError("dice: mask geometries differ");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t n = 0; n < a.size(); ++n) {
        const bool ia = a.contains(n), ib = b.contains(n);
        na += ia;
        nb += ib;
        both += ia && ib;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Vec3 center_of_mass(const Volume& volume, double threshold)
{
    const auto& g = volume.geometry();
    double total = 0.0;
    Vec3 acc{0.0, 0.0, 0.0};
    std::size_t n = 0;
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i, ++n) {
                const double w = static_cast<double>(volume[n]) - threshold;
                if (w <= 0.0)
                    continue;
                total += w;
                acc[0] += w * static_cast<double>(i);
                acc[1] += w * static_cast<double>(j);
                acc[2] += w * static_cast<double>(k);
            }
    if (total <= 0.0) {
        std::ostringstream msg;
        msg << "center_of_mass: no voxel above threshold " << threshold << " HU";
        throw DegenerateInputError(msg.str());
    }
    return {g.origin[0] + g.spacing[0] * acc[0] / total, g.origin[1] + g.spacing[1] * acc[1] / total,
            g.origin[2] + g.spacing[2] * acc[2] / total};
}

namespace {

// Lower cell corner and fractional offset along one axis. Returns false when
// u lies outside [0, n-1].
inline bool cell(double u, std::int64_t n, std::int64_t& i0, double& t)
{
    if (!(u >= 0.0) || u > static_cast<double>(n - 1))
        return false;
    if (n == 1) {
        i0 = 0;
        t = 0.0;
        return true;
    }
    i0 = std::min(static_cast<std::int64_t>(u), n - 2);
    t = u - static_cast<double>(i0);
    return true;
}

} // namespace

double sample_trilinear(const Volume& volume, const Vec3& point, double fill)
{
    const auto& g = volume.geometry();
    const Vec3 u = g.continuous_index(point);
    std::int64_t i0, j0, k0;
    double tx, ty, tz;
    if (!cell(u[0], g.dims[0], i0, tx) || !cell(u[1], g.dims[1], j0, ty) ||
        !cell(u[2], g.dims[2], k0, tz))
        return fill;
    const std::int64_t di = g.dims[0] > 1 ? 1 : 0;
    const std::int64_t dj = g.dims[1] > 1 ? g.dims[0] : 0;
    const std::int64_t dk = g.dims[2] > 1 ? g.dims[0] * g.dims[1] : 0;
    const std::size_t base = g.linear_index(i0, j0, k0);
    const auto v = volume.values();
    const double c000 = v[base], c100 = v[base + di];
    const double c010 = v[base + dj], c110 = v[base + dj + di];
    const double c001 = v[base + dk], c101 = v[base + dk + di];
    const double c011 = v[base + dk + dj], c111 = v[base + dk + dj + di];
    const double c00 = c000 + tx * (c100 - c000);
    const double c10 = c010 + tx * (c110 - c010);
    const double c01 = c001 + tx * (c101 - c001);
    const double c11 = c011 + tx * (c111 - c011);
    const double c0 = c00 + ty * (c10 - c00);
    const double c1 = c01 + ty * (c11 - c01);
    return c0 + tz * (c1 - c0);
}

double sample_trilinear_gradient(const Volume& volume, const Vec3& point, Vec3& gradient,
                                 double fill)
{
    const auto& g = volume.geometry();
    const Vec3 u = g.continuous_index(point);
    std::int64_t i0, j0, k0;
    double tx, ty, tz;
    if (!cell(u[0], g.dims[0], i0, tx) || !cell(u[1], g.dims[1], j0, ty) ||
        !cell(u[2], g.dims[2], k0, tz)) {
        gradient = {0.0, 0.0, 0.0};
        return fill;
    }
    const std::int64_t di = g.dims[0] > 1 ? 1 : 0;
    const std::int64_t dj = g.dims[1] > 1 ? g.dims[0] : 0;
    const std::int64_t dk = g.dims[2] > 1 ? g.dims[0] * g.dims[1] : 0;
    const std::size_t base = g.linear_index(i0, j0, k0);
    const auto v = volume.values();
    const double c000 = v[base], c100 = v[base + di];
    const double c010 = v[base + dj], c110 = v[base + dj + di];
    const double c001 = v[base + dk], c101 = v[base + dk + di];
    const double c011 = v[base + dk + dj], c111 = v[base + dk + dj + di];

    const double c00 = c000 + tx * (c100 - c000);
    const double c10 = c010 + tx * (c110 - c010);
    const double c01 = c001 + tx * (c101 - c001);
    const double c11 = c011 + tx * (c111 - c011);
    const double c0 = c00 + ty * (c10 - c00);
    const double c1 = c01 + ty * (c11 - c01);

    // d/dtx
    const double d00 = c100 - c000, d10 = c110 - c010, d01 = c101 - c001, d11 = c111 - c011;
    const double dx0 = d00 + ty * (d10 - d00);
    const double dx1 = d01 + ty * (d11 - d01);
    const double dtx = dx0 + tz * (dx1 - dx0);
    // d/dty
    const double dty = (c10 - c00) + tz * ((c11 - c01) - (c10 - c00));
    // d/dtz
    const double dtz = c1 - c0;

    gradient = {g.dims[0] > 1 ? dtx / g.spacing[0] : 0.0, g.dims[1] > 1 ? dty / g.spacing[1] : 0.0,
                g.dims[2] > 1 ? dtz / g.spacing[2] : 0.0};
    return c0 + tz * (c1 - c0);
}

namespace {

std::vector<double> gaussian_kernel(double sigma)
{
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& w : k)
        w /= sum;
    return k;
}

// Separable convolution along one axis with edge replication.
void convolve_axis(std::vector<double>& data, const Index3& dims, int axis,
                   const std::vector<double>& kernel)
{
    const int radius = static_cast<int>(kernel.size() / 2);
    const std::int64_t n = dims[axis];
    const std::int64_t stride = axis == 0 ? 1 : (axis == 1 ? dims[0] : dims[0] * dims[1]);
    std::vector<double> line(static_cast<std::size_t>(n));
    const std::int64_t total = dims[0] * dims[1] * dims[2];
    for (std::int64_t start = 0; start < total; ++start) {
        // Visit each line once: start must have coordinate 0 along axis.
        if ((start / stride) % n != 0)
            continue;
        for (std::int64_t t = 0; t < n; ++t)
            line[t] = data[start + t * stride];
        for (std::int64_t t = 0; t < n; ++t) {
            double acc = 0.0;
            for (int r = -radius; r <= radius; ++r) {
                const std::int64_t s = std::clamp<std::int64_t>(t + r, 0, n - 1);
                acc += kernel[r + radius] * line[s];
            }
            data[start + t * stride] = acc;
        }
    }
}

} // namespace

Volume downsample(const Volume& volume, int factor)
{
    if (factor < 1)
        throw ArgumentError("downsample: factor must be >= 1, got " + std::to_string(factor));
    if (factor == 1)
        return volume;
    const auto& g = volume.geometry();
    std::vector<double> data(volume.values().begin(), volume.values().end());
    const auto kernel = gaussian_kernel(0.5 * factor);
    for (int axis = 0; axis < 3; ++axis)
        if (g.dims[axis] > 1)
            convolve_axis(data, g.dims, axis, kernel);

    Geometry out;
    for (int a = 0; a < 3; ++a) {
        out.dims[a] = (g.dims[a] - 1) / factor + 1;
        out.spacing[a] = g.spacing[a] * factor;
        out.origin[a] = g.origin[a];
    }
    std::vector<float> values(out.voxel_count());
    std::size_t n = 0;
    for (std::int64_t k = 0; k < out.dims[2]; ++k)
        for (std::int64_t j = 0; j < out.dims[1]; ++j)
            for (std::int64_t i = 0; i < out.dims[0]; ++i)
                values[n++] = static_cast<float>(
                    data[g.linear_index(i * factor, j * factor, k * factor)]);
    return Volume(out, std::move(values));
}

} // namespace ctmass
