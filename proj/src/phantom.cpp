#include "ctmass/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ctmass/error.hpp"
#include "ctmass/nifti.hpp"
#include "ctmass/rng.hpp"
#include "json.hpp"

namespace ctmass {

Geometry PhantomSpec::geometry() const
{
    Geometry g;
    g.dims = dims;
    g.spacing = spacing;
    // Centered on the world origin.
    for (int a = 0; a < 3; ++a)
        g.origin[a] = -0.5 * (dims[a] - 1) * spacing[a];
    return g;
}

void PhantomSpec::validate() const
{
    geometry().validate();
    const double min_spacing = std::min({spacing[0], spacing[1], spacing[2]});
    const double grid_ratio = deformation_grid_spacing / min_spacing;
    if (!(deformation_magnitude >= 0.0) || !(deformation_magnitude < min_spacing * grid_ratio / 2.0))
        throw ArgumentError("phantom: deformation magnitude must be in [0, grid spacing / 2)");
    for (const auto& t : {body, muscle, bone})
        if (!std::isfinite(t.mean) || !std::isfinite(t.sd) || t.sd < 0.0)
            throw ArgumentError("phantom: tissue distributions must be finite with sd >= 0");
    for (double s : scale)
        if (!(s > 0.0) || !std::isfinite(s))
            throw ArgumentError("phantom: scale must be positive");
    if (!(bias_lo <= bias_hi) || !(bias_lo > 0.0) || !(dissection_noise_sd >= 0.0))
        throw ArgumentError("phantom: invalid dissection bias");
}

namespace {

enum class Tissue : std::uint8_t { air, body, distractor, muscle, bone };

struct Ellipsoid {
    Vec3 center;
    Vec3 semi;
    bool contains(const Vec3& p) const
    {
        double s = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double d = (p[a] - center[a]) / semi[a];
            s += d * d;
        }
        return s < 1.0;
    }
};

// Cylinder along z.
struct Rod {
    double x, y, radius, half_length;
    bool contains(const Vec3& p) const
    {
        const double dx = p[0] - x, dy = p[1] - y;
        return dx * dx + dy * dy < radius * radius && std::abs(p[2]) < half_length;
    }
};

// Nominal anatomy in millimetres relative to the volume center; y is dorsal.
class Anatomy {
public:
    explicit Anatomy(const Vec3& s)
    {
        auto sc = [&](double x, double y, double z) { return Vec3{x * s[0], y * s[1], z * s[2]}; };
        body_ = {sc(0, 0, 0), sc(52, 44, 80)};
        muscle_[0] = {sc(-18, 14, 0), sc(16, 14, 60)};
        muscle_[1] = {sc(18, 14, 0), sc(16, 14, 60)};
        distractor_[0] = {sc(-38, 6, 0), sc(10, 10, 40)};
        distractor_[1] = {sc(38, 6, 0), sc(10, 10, 40)};
        rods_[0] = {0.0, 8.0 * s[1], 6.0 * std::min(s[0], s[1]), 70.0 * s[2]};
        rods_[1] = {-24.0 * s[0], -18.0 * s[1], 4.0 * std::min(s[0], s[1]), 45.0 * s[2]};
        rods_[2] = {24.0 * s[0], -18.0 * s[1], 4.0 * std::min(s[0], s[1]), 45.0 * s[2]};
    }

    Tissue classify(const Vec3& p) const
    {
        if (!body_.contains(p))
            return Tissue::air;
        for (const auto& r : rods_)
            if (r.contains(p))
                return Tissue::bone;
        if (muscle_[0].contains(p) || muscle_[1].contains(p))
            return Tissue::muscle;
        if (distractor_[0].contains(p) || distractor_[1].contains(p))
            return Tissue::distractor;
        return Tissue::body;
    }

    bool in_muscle_ellipsoids(const Vec3& p) const
    {
        return muscle_[0].contains(p) || muscle_[1].contains(p);
    }
    bool in_body(const Vec3& p) const { return body_.contains(p); }

private:
    Ellipsoid body_;
    Ellipsoid muscle_[2];
    Ellipsoid distractor_[2];
    Rod rods_[3];
};

double draw_hu(const PhantomSpec& spec, Tissue t, Rng& rng)
{
    switch (t) {
    case Tissue::air:
        return kAirHU;
    case Tissue::body:
        return rng.normal(spec.body.mean, spec.body.sd);
    case Tissue::muscle:
    case Tissue::distractor:
        return rng.normal(spec.muscle.mean, spec.muscle.sd);
    case Tissue::bone:
        return rng.normal(spec.bone.mean, spec.bone.sd);
    }
    return kAirHU;
}

void draw_dissection(const PhantomSpec& spec, Rng& rng, PhantomTruth& truth)
{
    truth.bias_factor = spec.bias_lo == spec.bias_hi ? spec.bias_lo
                                                      : rng.uniform(spec.bias_lo, spec.bias_hi);
    truth.noise_g = spec.dissection_noise_sd > 0.0 ? rng.normal(0.0, spec.dissection_noise_sd) : 0.0;
    truth.dissected_weight_g = truth.true_weight_g * truth.bias_factor + truth.noise_g;
}

// Renders the phantom with voxel x showing anatomy at deformation(x).
Phantom render(const PhantomSpec& spec, std::uint64_t seed, BSplineTransform deformation)
{
    spec.validate();
    const Geometry g = spec.geometry();
    const Anatomy anatomy(spec.scale);
    Rng rng(seed);

    std::vector<float> values(g.voxel_count());
    Mask mask(g), distractor(g);
    std::size_t n = 0;
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i, ++n) {
                const Vec3 p = transform_point(deformation, g.world(i, j, k));
                const Tissue t = anatomy.classify(p);
                if (anatomy.in_muscle_ellipsoids(p) && !anatomy.in_body(p))
                    throw ArgumentError("phantom: target region escapes the body");
                values[n] = static_cast<float>(draw_hu(spec, t, rng));
                if (t == Tissue::muscle)
                    mask.set(n, true);
                else if (t == Tissue::distractor)
                    distractor.set(n, true);
            }

    Phantom out{Volume(g, std::move(values)), {}};
    out.truth.true_mask = std::move(mask);
    out.truth.distractor_mask = std::move(distractor);
    out.truth.deformation = std::move(deformation);
    out.truth.true_weight_g = integrate_weight(out.volume, out.truth.true_mask);
    draw_dissection(spec, rng, out.truth);
    return out;
}

} // namespace

double integrate_weight(const Volume& volume, const Mask& mask)
{
    if (!(volume.geometry() == mask.geometry()))
        throw ArgumentError("integrate_weight: geometry mismatch");
    const double voxel_cm3 = volume.geometry().voxel_volume_mm3() / 1000.0;
    double grams = 0.0;
    for (std::size_t n = 0; n < volume.size(); ++n)
        if (mask.contains(n))
            grams += hidden_density(volume[n]) * voxel_cm3;
    return grams;
}

BSplineTransform random_deformation(const Geometry& geometry, double magnitude,
                                    double grid_spacing, std::uint64_t seed)
{
    auto t = BSplineTransform::covering(geometry, grid_spacing);
    if (magnitude > 0.0) {
        Rng rng(seed);
        for (auto& d : t.displacements())
            d = rng.normal(0.0, magnitude);
    }
    return t;
}

Phantom generate_base(const PhantomSpec& spec, std::uint64_t seed)
{
    spec.validate();
    return render(spec, seed, BSplineTransform::covering(spec.geometry(), spec.deformation_grid_spacing));
}

Phantom deform(const Volume& volume, const PhantomTruth& truth, std::uint64_t seed,
               double magnitude, double grid_spacing)
{
    const Geometry& g = volume.geometry();
    const double min_spacing = std::min({g.spacing[0], g.spacing[1], g.spacing[2]});
    if (!(magnitude >= 0.0) || !(magnitude < min_spacing * (grid_spacing / min_spacing) / 2.0))
        throw ArgumentError("deform: magnitude must be in [0, grid spacing / 2)");
    Phantom out;
    out.truth = truth;
    if (magnitude == 0.0) {
        out.volume = volume;
        return out;
    }
    auto field = random_deformation(g, magnitude, grid_spacing, seed);
    out.volume = warp_volume(field, volume, g, kAirHU);
    out.truth.true_mask = warp_mask(field, truth.true_mask, g);
    if (truth.distractor_mask.size() == g.voxel_count())
        out.truth.distractor_mask = warp_mask(field, truth.distractor_mask, g);
    out.truth.deformation = std::move(field);
    out.truth.true_weight_g = integrate_weight(out.volume, out.truth.true_mask);
    out.truth.dissected_weight_g = out.truth.true_weight_g * truth.bias_factor + truth.noise_g;
    return out;
}

std::vector<double> Cohort::dissected_weights() const
{
    std::vector<double> w;
    w.reserve(subject_truths.size());
    for (const auto& t : subject_truths)
        w.push_back(t.dissected_weight_g);
    return w;
}

Cohort generate_cohort(int n, int m_atlases, std::uint64_t seed, const PhantomSpec& spec)
{
    if (n < 2 || m_atlases < 1)
        throw ArgumentError("generate_cohort: need n >= 2 subjects and m >= 1 atlases");
    spec.validate();
    Cohort c;
    auto jittered = [&](Rng& rng) {
        PhantomSpec s = spec;
        for (int a = 0; a < 3; ++a)
            s.scale[a] = spec.scale[a] * rng.uniform(0.9, 1.1);
        return s;
    };
    for (int i = 0; i < m_atlases; ++i) {
        Rng rng(derive_seed(seed, {tag("atlas"), static_cast<std::uint64_t>(i)}));
        const PhantomSpec s = jittered(rng);
        auto p = render(s, rng.next(),
                        BSplineTransform::covering(s.geometry(), s.deformation_grid_spacing));
        c.atlases.push_back({p.volume, p.truth.true_mask});
        c.atlas_truths.push_back(std::move(p.truth));
    }
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, {tag("subject"), static_cast<std::uint64_t>(i)}));
        const PhantomSpec s = jittered(rng);
        auto field = random_deformation(s.geometry(), s.deformation_magnitude,
                                        s.deformation_grid_spacing, rng.next());
        auto p = render(s, rng.next(), std::move(field));
        c.subjects.push_back(std::move(p.volume));
        c.subject_truths.push_back(std::move(p.truth));
    }
    return c;
}

std::string subject_id(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "subject_%03zu", index);
    return buf;
}

namespace {

std::string atlas_name(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "atlas_%02zu", index);
    return buf;
}

} // namespace

void write_cohort(const Cohort& cohort, const std::filesystem::path& dir, std::uint64_t seed)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir / "atlases");
    fs::create_directories(dir / "subjects");
    fs::create_directories(dir / "truth");

    nlohmann::json config;
    config["seed"] = seed;
    config["weights_csv"] = "weights.csv";
    for (std::size_t i = 0; i < cohort.atlases.size(); ++i) {
        const auto name = atlas_name(i);
        save_nifti(cohort.atlases[i].volume, dir / "atlases" / (name + ".nii"));
        save_mask(cohort.atlases[i].mask, dir / "atlases" / (name + "_mask.nii"));
        config["atlases"].push_back({{"volume", "atlases/" + name + ".nii"},
                                     {"mask", "atlases/" + name + "_mask.nii"}});
    }

    std::ofstream weights(dir / "weights.csv");
    if (!weights)
        throw IoError("cannot write " + (dir / "weights.csv").string());
    weights << "id,dissected_weight_g\n";
    weights.precision(17);
    nlohmann::json truth;
    for (std::size_t i = 0; i < cohort.subjects.size(); ++i) {
        const auto id = subject_id(i);
        const auto& t = cohort.subject_truths[i];
        save_nifti(cohort.subjects[i], dir / "subjects" / (id + ".nii"));
        save_mask(t.true_mask, dir / "truth" / (id + "_mask.nii"));
        weights << id << ',' << t.dissected_weight_g << '\n';
        config["subjects"].push_back({{"id", id}, {"volume", "subjects/" + id + ".nii"}});
        truth["subjects"].push_back({{"id", id},
                                     {"true_weight_g", t.true_weight_g},
                                     {"dissected_weight_g", t.dissected_weight_g},
                                     {"bias_factor", t.bias_factor},
                                     {"noise_g", t.noise_g},
                                     {"mask", "truth/" + id + "_mask.nii"}});
    }
    for (std::size_t i = 0; i < cohort.atlas_truths.size(); ++i)
        truth["atlases"].push_back({{"true_weight_g", cohort.atlas_truths[i].true_weight_g}});

    std::ofstream(dir / "truth.json") << truth.dump(2) << '\n';
    std::ofstream(dir / "config.json") << config.dump(2) << '\n';
}

} // namespace ctmass
