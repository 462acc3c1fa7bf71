#include "ctmass/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ctmass/error.hpp"
#include "ctmass/parallel.hpp"
#include "ctmass/rng.hpp"

namespace ctmass {

void RegistrationConfig::validate() const
{
    if (levels < 1)
        throw ArgumentError("registration: levels must be >= 1");
    if (max_iterations_per_level < 1 || samples_per_iteration < 1)
        throw ArgumentError("registration: iteration and sample counts must be positive");
    if (mi_bins < 2)
        throw ArgumentError("registration: mi_bins must be >= 2");
    if (!(final_grid_spacing > 0.0))
        throw ArgumentError("registration: final_grid_spacing must be positive");
    if (!(sgd_a > 0.0) || !(sgd_A > 0.0) || !(sgd_alpha > 0.0))
        throw ArgumentError("registration: invalid step-size schedule");
    if (!(mask_threshold > 0.0 && mask_threshold < 1.0))
        throw ArgumentError("registration: mask_threshold must lie in (0,1)");
}

namespace {

struct IntensityRange {
    double lo = 0.0;
    double hi = 0.0;
};

// Joint histogram with hard fixed bins and a cubic B-spline Parzen window
// on the moving axis. The moving axis is padded by one bin per side so the
// window support of any in-range value fits.
class ParzenJointHistogram {
public:
    ParzenJointHistogram(int bins, IntensityRange fixed, IntensityRange moving)
        : bins_(bins), cols_(bins + 2), fixed_(fixed), moving_(moving),
          joint_(static_cast<std::size_t>(bins) * (bins + 2), 0.0)
    {
        if (!(fixed.hi > fixed.lo))
            throw DegenerateInputError("mutual_information: fixed intensity range is degenerate");
        if (!(moving.hi > moving.lo))
            throw DegenerateInputError("mutual_information: moving intensity range is degenerate");
        fixed_scale_ = (bins - 1) / (fixed.hi - fixed.lo);
        moving_scale_ = (bins - 1) / (moving.hi - moving.lo);
    }

    int fixed_bin(double f) const
    {
        const double u = (f - fixed_.lo) * fixed_scale_;
        return std::clamp(static_cast<int>(std::lround(u)), 0, bins_ - 1);
    }
    double moving_coordinate(double m) const
    {
        return std::clamp((m - moving_.lo) * moving_scale_, 0.0, static_cast<double>(bins_ - 1));
    }
    double moving_scale() const { return moving_scale_; }

    void add(int fb, double um)
    {
        const int j0 = static_cast<int>(std::floor(um)) - 1;
        double* row = joint_.data() + static_cast<std::size_t>(fb) * cols_;
        for (int j = j0; j < j0 + 4; ++j) {
            const double w = cubic_bspline(static_cast<double>(j) - um);
            if (w > 0.0)
                row[j + 1] += w;
        }
        ++count_;
    }

    // Normalizes to probabilities and fills the marginals. Call once.
    void finalize()
    {
        const double n = static_cast<double>(count_);
        fixed_marginal_.assign(bins_, 0.0);
        moving_marginal_.assign(cols_, 0.0);
        for (int f = 0; f < bins_; ++f)
            for (int j = 0; j < cols_; ++j) {
                auto& p = joint_[static_cast<std::size_t>(f) * cols_ + j];
                p /= n;
                fixed_marginal_[f] += p;
                moving_marginal_[j] += p;
            }
    }

    double mutual_information() const
    {
        double mi = 0.0;
        for (int f = 0; f < bins_; ++f)
            for (int j = 0; j < cols_; ++j) {
                const double p = joint_[static_cast<std::size_t>(f) * cols_ + j];
                if (p > 0.0)
                    mi += p * std::log(p / (fixed_marginal_[f] * moving_marginal_[j]));
            }
        return mi;
    }

    // d MI / d um for one sample with fixed bin fb at moving coordinate um.
    double coordinate_derivative(int fb, double um) const
    {
        const int j0 = static_cast<int>(std::floor(um)) - 1;
        const double* row = joint_.data() + static_cast<std::size_t>(fb) * cols_;
        double g = 0.0;
        for (int j = j0; j < j0 + 4; ++j) {
            const double p = row[j + 1];
            if (p <= 0.0)
                continue;
            // d/dum of beta(j - um) is -beta'(j - um).
            g -= cubic_bspline_derivative(static_cast<double>(j) - um) *
                 std::log(p / moving_marginal_[j + 1]);
        }
        return g / static_cast<double>(count_);
    }

private:
    int bins_;
    int cols_;
    IntensityRange fixed_;
    IntensityRange moving_;
    double fixed_scale_ = 1.0;
    double moving_scale_ = 1.0;
    std::vector<double> joint_;
    std::vector<double> fixed_marginal_;
    std::vector<double> moving_marginal_;
    std::size_t count_ = 0;
};

IntensityRange range_of(std::span<const float> values)
{
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return {static_cast<double>(*lo), static_cast<double>(*hi)};
}

IntensityRange range_of(const std::vector<double>& values)
{
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return {*lo, *hi};
}

// MI over an explicit sample set with explicit rescaling ranges.
double evaluate_mi(const Volume& fixed, const Volume& moving, const BSplineTransform& transform,
                   int bins, std::span<const Vec3> points, IntensityRange fixed_range,
                   IntensityRange moving_range, double fill)
{
    ParzenJointHistogram hist(bins, fixed_range, moving_range);
    for (const auto& x : points) {
        const double f = sample_trilinear(fixed, x, fill);
        const double m = sample_trilinear(moving, transform_point(transform, x), fill);
        hist.add(hist.fixed_bin(f), hist.moving_coordinate(m));
    }
    hist.finalize();
    return hist.mutual_information();
}

std::vector<Vec3> draw_voxel_centers(const Geometry& g, std::size_t count, Rng& rng)
{
    std::vector<Vec3> points(count);
    const auto n = static_cast<std::uint64_t>(g.voxel_count());
    for (auto& p : points)
        p = g.world(static_cast<std::size_t>(rng.index(n)));
    return points;
}

struct SampleState {
    int fixed_bin = 0;
    double moving_coordinate = 0.0;
    Vec3 moving_gradient{};
    BSplineSupport support;
};

// Gradient of the sampled MI with respect to every displacement component.
// Returns the MI value of the sample set.
double mi_gradient(const Volume& fixed, const Volume& moving, const BSplineTransform& transform,
                   int bins, std::span<const Vec3> points, IntensityRange fixed_range,
                   IntensityRange moving_range, double fill, std::vector<SampleState>& state,
                   std::vector<double>& gradient)
{
    ParzenJointHistogram hist(bins, fixed_range, moving_range);
    state.resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        auto& s = state[i];
        const Vec3& x = points[i];
        s.support = transform.support(x);
        const Vec3 y = x + transform.displacement(s.support);
        const double f = sample_trilinear(fixed, x, fill);
        const double m = sample_trilinear_gradient(moving, y, s.moving_gradient, fill);
        s.fixed_bin = hist.fixed_bin(f);
        s.moving_coordinate = hist.moving_coordinate(m);
        hist.add(s.fixed_bin, s.moving_coordinate);
    }
    hist.finalize();

    gradient.assign(transform.displacements().size(), 0.0);
    const auto& dims = transform.grid_dims();
    const std::int64_t sx = dims[0], sxy = dims[0] * dims[1];
    for (const auto& s : state) {
        if (!s.support.inside)
            continue;
        const double c = hist.coordinate_derivative(s.fixed_bin, s.moving_coordinate) *
                         hist.moving_scale();
        if (c == 0.0)
            continue;
        const Vec3 gm = c * s.moving_gradient;
        if (gm[0] == 0.0 && gm[1] == 0.0 && gm[2] == 0.0)
            continue;
        for (int kz = 0; kz < 4; ++kz)
            for (int ky = 0; ky < 4; ++ky) {
                const double wyz = s.support.weights[2][kz] * s.support.weights[1][ky];
                const std::int64_t row =
                    s.support.base[0] + sx * (s.support.base[1] + ky) + sxy * (s.support.base[2] + kz);
                double* g = gradient.data() + 3 * row;
                for (int kx = 0; kx < 4; ++kx) {
                    const double w = wyz * s.support.weights[0][kx];
                    g[3 * kx] += w * gm[0];
                    g[3 * kx + 1] += w * gm[1];
                    g[3 * kx + 2] += w * gm[2];
                }
            }
    }
    return hist.mutual_information();
}

// Sigmoid governing the adaptive time update: positive when successive
// gradients disagree (slow down), negative when they agree (speed up).
double adaptive_time_increment(double x)
{
    constexpr double fmax = 1.0, fmin = -0.8, omega = 0.1;
    return fmin + (fmax - fmin) / (1.0 - (fmax / fmin) * std::exp(-x / omega));
}

} // namespace

double mutual_information(const Volume& fixed, const Volume& moving,
                          const BSplineTransform& transform, int bins,
                          std::span<const Vec3> sample_points)
{
    if (bins < 2)
        throw ArgumentError("mutual_information: bins must be >= 2");
    if (sample_points.empty())
        throw ArgumentError("mutual_information: no sample points");
    std::vector<double> f(sample_points.size()), m(sample_points.size());
    for (std::size_t i = 0; i < sample_points.size(); ++i) {
        f[i] = sample_trilinear(fixed, sample_points[i]);
        m[i] = sample_trilinear(moving, transform_point(transform, sample_points[i]));
    }
    ParzenJointHistogram hist(bins, range_of(f), range_of(m));
    for (std::size_t i = 0; i < f.size(); ++i)
        hist.add(hist.fixed_bin(f[i]), hist.moving_coordinate(m[i]));
    hist.finalize();
    return hist.mutual_information();
}

Volume warp_volume(const BSplineTransform& transform, const Volume& moving,
                   const Geometry& target, double fill)
{
    target.validate();
    std::vector<float> out(target.voxel_count());
    std::size_t n = 0;
    for (std::int64_t k = 0; k < target.dims[2]; ++k)
        for (std::int64_t j = 0; j < target.dims[1]; ++j)
            for (std::int64_t i = 0; i < target.dims[0]; ++i)
                out[n++] = static_cast<float>(
                    sample_trilinear(moving, transform_point(transform, target.world(i, j, k)), fill));
    return Volume(target, std::move(out));
}

Mask warp_mask(const BSplineTransform& transform, const Mask& mask, const Geometry& target,
               double threshold)
{
    if (!mask.binary())
        throw ArgumentError("warp_mask: input mask must be binary");
    std::vector<float> w(mask.weights().begin(), mask.weights().end());
    const Volume field(mask.geometry(), std::move(w));
    const Volume warped = warp_volume(transform, field, target, 0.0);
    std::vector<float> out(warped.size());
    for (std::size_t n = 0; n < out.size(); ++n)
        out[n] = warped[n] >= threshold ? 1.0f : 0.0f;
    return Mask(target, std::move(out));
}

Vec3 initial_align(const Volume& fixed, const Volume& moving, double threshold)
{
    return center_of_mass(moving, threshold) - center_of_mass(fixed, threshold);
}

RegistrationResult register_images(const Volume& fixed, const Volume& moving,
                                   const RegistrationConfig& config)
{
    config.validate();
    const auto& fg = fixed.geometry();
    const double max_spacing = std::max({fg.spacing[0], fg.spacing[1], fg.spacing[2]});
    if (!(config.final_grid_spacing > max_spacing))
        throw ArgumentError("registration: final_grid_spacing must exceed the fixed voxel spacing");

    const double fill = kAirHU;
    const IntensityRange fixed_range = range_of(fixed.values());
    IntensityRange moving_range = range_of(moving.values());
    moving_range.lo = std::min(moving_range.lo, fill);
    moving_range.hi = std::max(moving_range.hi, fill);
    if (!(fixed_range.hi > fixed_range.lo) || !(moving_range.hi > moving_range.lo))
        throw DegenerateInputError("registration: constant-intensity input volume");

    const Vec3 translation = initial_align(fixed, moving, config.air_threshold);
    const double coarse_spacing = config.final_grid_spacing * std::ldexp(1.0, config.levels - 1);
    BSplineTransform transform = BSplineTransform::covering(fg, coarse_spacing);
    transform.set_constant(translation);
    BSplineTransform initial = transform;

    RegistrationResult result;
    std::vector<SampleState> state;
    std::vector<double> gradient, previous;
    const auto samples = static_cast<std::size_t>(config.samples_per_iteration);

    for (int level = 0; level < config.levels; ++level) {
        if (level > 0) {
            transform = transform.refined();
            initial = initial.refined();
        }
        const int factor = 1 << (config.levels - 1 - level);
        const Volume level_fixed = downsample(fixed, factor);
        const Volume level_moving = downsample(moving, factor);
        const auto& lg = level_fixed.geometry();
        const double step_unit = std::min({lg.spacing[0], lg.spacing[1], lg.spacing[2]});

        Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(level)}));
        Rng holdout_rng(derive_seed(config.seed, {static_cast<std::uint64_t>(level), tag("holdout")}));
        const auto holdout = draw_voxel_centers(lg, samples, holdout_rng);
        auto holdout_mi = [&](const BSplineTransform& t) {
            return evaluate_mi(level_fixed, level_moving, t, config.mi_bins, holdout, fixed_range,
                               moving_range, fill);
        };

        double best_mi = holdout_mi(transform);
        std::vector<double> best = transform.displacements();
        double time = 0.0;
        previous.clear();
        int used = 0;
        for (int it = 0; it < config.max_iterations_per_level; ++it) {
            const auto points = draw_voxel_centers(lg, samples, rng);
            mi_gradient(level_fixed, level_moving, transform, config.mi_bins, points, fixed_range,
                        moving_range, fill, state, gradient);
            double max_norm = 0.0;
            for (std::size_t c = 0; c + 2 < gradient.size(); c += 3) {
                const double n2 = gradient[c] * gradient[c] + gradient[c + 1] * gradient[c + 1] +
                                  gradient[c + 2] * gradient[c + 2];
                max_norm = std::max(max_norm, n2);
            }
            max_norm = std::sqrt(max_norm);
            if (!std::isfinite(max_norm)) {
                std::ostringstream msg;
                msg << "registration: non-finite MI gradient at level " << level << ", iteration "
                    << it;
                throw NumericalError(msg.str());
            }
            ++used;
            if (max_norm == 0.0)
                continue;
            for (auto& g : gradient)
                g /= max_norm;

            if (!previous.empty()) {
                double dot = 0.0, n0 = 0.0, n1 = 0.0;
                for (std::size_t i = 0; i < gradient.size(); ++i) {
                    dot += gradient[i] * previous[i];
                    n0 += gradient[i] * gradient[i];
                    n1 += previous[i] * previous[i];
                }
                const double cosine = dot / std::sqrt(n0 * n1);
                time = std::max(0.0, time + adaptive_time_increment(-cosine));
            }
            const double step =
                step_unit * config.sgd_a / std::pow(config.sgd_A + time, config.sgd_alpha);
            auto& d = transform.displacements();
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] += step * gradient[i];
            previous = gradient;

            const double mi = holdout_mi(transform);
            if (mi > best_mi) {
                best_mi = mi;
                best = d;
            }
        }
        transform.displacements() = best;
        result.report.iterations_used.push_back(used);
    }

    // Held-out check at full resolution: never return worse than the
    // center-of-mass start.
    Rng final_rng(derive_seed(config.seed, {tag("final")}));
    const auto holdout = draw_voxel_centers(fg, samples, final_rng);
    const double mi_start = evaluate_mi(fixed, moving, initial, config.mi_bins, holdout,
                                        fixed_range, moving_range, fill);
    const double mi_end = evaluate_mi(fixed, moving, transform, config.mi_bins, holdout,
                                      fixed_range, moving_range, fill);
    result.report.mi_initial = mi_start;
    if (mi_end >= mi_start) {
        result.transform = std::move(transform);
        result.report.mi_final = mi_end;
    } else {
        result.transform = std::move(initial);
        result.report.mi_final = mi_start;
    }
    return result;
}

Segmentation segment_by_atlases(const Volume& target, std::span<const Atlas> atlases,
                                const RegistrationConfig& config, int jobs)
{
    if (atlases.empty())
        throw ArgumentError("segment_by_atlases: at least one atlas is required");
    for (std::size_t i = 0; i < atlases.size(); ++i) {
        const auto& a = atlases[i];
        if (!a.mask.binary())
            throw ArgumentError("segment_by_atlases: atlas " + std::to_string(i) +
                                " mask is not binary");
        if (!(a.mask.geometry() == a.volume.geometry()))
            throw ArgumentError("segment_by_atlases: atlas " + std::to_string(i) +
                                " mask geometry differs from its volume");
    }
    Segmentation out;
    out.masks.resize(atlases.size());
    out.reports.resize(atlases.size());
    parallel_for(atlases.size(), jobs, [&](std::size_t i) {
        try {
            RegistrationConfig cfg = config;
            cfg.seed = derive_seed(config.seed, {static_cast<std::uint64_t>(i)});
            auto reg = register_images(target, atlases[i].volume, cfg);
            out.masks[i] = warp_mask(reg.transform, atlases[i].mask, target.geometry(),
                                     config.mask_threshold);
            out.reports[i] = reg.report;
        } catch (const Error&) {
            rethrow_with_context("atlas " + std::to_string(i) + ": ");
        }
    });
    return out;
}

} // namespace ctmass
