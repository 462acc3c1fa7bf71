#include <algorithm>
#include <cmath>
#include <string>

#include "doctest.h"
#include "helpers.hpp"

#include "ctmass/error.hpp"
#include "ctmass/phantom.hpp"
#include "ctmass/registration.hpp"

using namespace ctmass;

namespace {

PhantomSpec small_spec()
{
    PhantomSpec s;
    s.dims = {32, 32, 48};
    s.spacing = {4.0, 4.0, 4.0};
    return s;
}

RegistrationConfig quick_config(std::uint64_t seed)
{
    RegistrationConfig c;
    c.max_iterations_per_level = 100;
    c.samples_per_iteration = 1024;
    c.seed = seed;
    return c;
}

std::vector<Vec3> all_centers(const Geometry& g)
{
    std::vector<Vec3> p(g.voxel_count());
    for (std::size_t n = 0; n < p.size(); ++n)
        p[n] = g.world(n);
    return p;
}

BSplineTransform shift(const Geometry& g, const Vec3& d)
{
    auto t = BSplineTransform::covering(g, 16.0);
    t.set_constant(d);
    return t;
}

} // namespace

TEST_CASE("mutual information")
{
    SUBCASE("two-level checkerboard against itself, 2 bins")
    {
        Geometry g;
        g.dims = {4, 4, 4};
        Volume v(g);
        for (std::int64_t k = 0; k < 4; ++k)
            for (std::int64_t j = 0; j < 4; ++j)
                for (std::int64_t i = 0; i < 4; ++i)
                    v.at(i, j, k) = (i + j + k) % 2 ? 100.0f : 0.0f;
        const auto pts = all_centers(g);
        const double mi = mutual_information(v, v, BSplineTransform::covering(g, 8.0), 2, pts);

        // Each fixed level puts its moving mass through the cubic window
        // (1/6, 2/3, 1/6) centered on its own bin, over four padded columns.
        const double joint[2][4] = {{1.0 / 12, 1.0 / 3, 1.0 / 12, 0.0},
                                    {0.0, 1.0 / 12, 1.0 / 3, 1.0 / 12}};
        double expect = 0.0;
        for (int f = 0; f < 2; ++f)
            for (int m = 0; m < 4; ++m) {
                const double pm = joint[0][m] + joint[1][m];
                if (joint[f][m] > 0)
                    expect += joint[f][m] * std::log(joint[f][m] / (0.5 * pm));
            }
        CHECK(mi == doctest::Approx(expect).epsilon(1e-9));
        CHECK(mi < std::log(2.0));
    }
    SUBCASE("independent noise is near zero")
    {
        Rng rng(31);
        Geometry g;
        g.dims = {25, 20, 20};
        Volume a(g), b(g);
        for (auto& x : a.values())
            x = static_cast<float>(rng.uniform(-1000, 1000));
        for (auto& x : b.values())
            x = static_cast<float>(rng.uniform(-1000, 1000));
        const auto pts = all_centers(g);
        const double mi = mutual_information(a, b, BSplineTransform::covering(g, 8.0), 32, pts);
        CHECK(mi >= 0.0);
        CHECK(mi < 0.1);
    }
    SUBCASE("self beats randomly permuted copies")
    {
        const auto base = generate_base(small_spec(), 5);
        const auto& g = base.volume.geometry();
        const auto id = BSplineTransform::covering(g, 16.0);
        Rng rng(6);
        std::vector<Vec3> pts(4000);
        for (auto& p : pts)
            p = g.world(static_cast<std::size_t>(rng.index(g.voxel_count())));
        const double self = mutual_information(base.volume, base.volume, id, 32, pts);
        for (int t = 0; t < 20; ++t) {
            std::vector<float> vals(base.volume.values().begin(), base.volume.values().end());
            rng.shuffle(vals.begin(), vals.end());
            const Volume perm(g, std::move(vals));
            CHECK(self >= mutual_information(base.volume, perm, id, 32, pts));
        }
    }
    SUBCASE("flat intensities are degenerate")
    {
        Geometry g;
        g.dims = {4, 4, 4};
        const Volume flat(g, 5.0f);
        Rng rng(7);
        const Volume noisy = testing::random_volume(rng, {4, 4, 4});
        const auto pts = all_centers(g);
        const auto id = BSplineTransform::covering(g, 8.0);
        CHECK_THROWS_AS(mutual_information(flat, noisy, id, 8, pts), DegenerateInputError);
        CHECK_THROWS_AS(mutual_information(noisy, flat, id, 8, pts), DegenerateInputError);
    }
}

TEST_CASE("warping")
{
    Rng rng(41);
    const Volume v = testing::random_volume(rng, {10, 9, 8});
    const auto& g = v.geometry();
    SUBCASE("identity")
    {
        const Volume w = warp_volume(BSplineTransform::covering(g, 8.0), v, g);
        CHECK(std::equal(w.values().begin(), w.values().end(), v.values().begin()));
    }
    SUBCASE("one voxel translation")
    {
        const Volume w = warp_volume(shift(g, {g.spacing[0], 0.0, 0.0}), v, g);
        for (std::int64_t k = 0; k < 8; ++k)
            for (std::int64_t j = 0; j < 9; ++j)
                for (std::int64_t i = 0; i < 8; ++i)
                    CHECK(w.at(i, j, k) == doctest::Approx(v.at(i + 1, j, k)).epsilon(1e-5));
    }
    SUBCASE("constant volume stays constant")
    {
        const Volume c(g, 77.0f);
        auto t = BSplineTransform::covering(g, 8.0);
        for (auto& d : t.displacements())
            d = rng.normal(0.0, 0.3);
        const Volume w = warp_volume(t, c, g);
        const double tol = 1e-4;
        std::size_t interior = 0;
        for (std::int64_t k = 2; k < 6; ++k)
            for (std::int64_t j = 2; j < 7; ++j)
                for (std::int64_t i = 2; i < 8; ++i, ++interior)
                    CHECK(std::abs(w.at(i, j, k) - 77.0) < tol);
        CHECK(interior > 0);
    }
    SUBCASE("masks shift by whole voxels")
    {
        Mask m(g);
        for (std::size_t n = 0; n < m.size(); ++n)
            if (rng.coin())
                m.set(n, true);
        CHECK(warp_mask(BSplineTransform::covering(g, 8.0), m, g).weights().size() == m.size());
        const Mask same = warp_mask(BSplineTransform::covering(g, 8.0), m, g);
        CHECK(std::equal(same.weights().begin(), same.weights().end(), m.weights().begin()));
        const Mask w = warp_mask(shift(g, {0.0, 2 * g.spacing[1], 0.0}), m, g);
        for (std::int64_t k = 0; k < 8; ++k)
            for (std::int64_t j = 0; j < 6; ++j)
                for (std::int64_t i = 0; i < 10; ++i)
                    CHECK(w.contains(g.linear_index(i, j, k)) == m.contains(g.linear_index(i, j + 2, k)));
        const Mask empty(g);
        CHECK(warp_mask(shift(g, {1.3, 0.2, -0.7}), empty, g).count() == 0);
        CHECK_THROWS_AS(warp_mask(shift(g, {}), Mask(g, std::vector<float>(m.size(), 0.5f)), g),
                        ArgumentError);
    }
}

TEST_CASE("center of mass alignment")
{
    Geometry g;
    g.dims = {30, 20, 20};
    g.spacing = {2.0, 2.0, 2.0};
    Volume a(g, -1000.0f), b(g, -1000.0f);
    for (std::int64_t k = 6; k < 12; ++k)
        for (std::int64_t j = 5; j < 14; ++j)
            for (std::int64_t i = 4; i < 12; ++i) {
                const float hu = static_cast<float>(10 * (i + j));
                a.at(i, j, k) = hu;
                b.at(i + 5, j, k) = hu;
            }
    CHECK(initial_align(a, a) == Vec3{0.0, 0.0, 0.0});
    const Vec3 t = initial_align(a, b);
    CHECK(std::abs(t[0] - 10.0) <= 1.0);
    CHECK(std::abs(t[1]) <= 1.0);
    CHECK(std::abs(t[2]) <= 1.0);

    // Different shapes sharing a centroid.
    Volume cube(g, -1000.0f), bar(g, -1000.0f);
    for (std::int64_t k = 8; k < 12; ++k)
        for (std::int64_t j = 8; j < 12; ++j)
            for (std::int64_t i = 13; i < 17; ++i)
                cube.at(i, j, k) = 0.0f;
    for (std::int64_t i = 5; i < 25; ++i)
        bar.at(i, 9, 9) = bar.at(i, 10, 10) = bar.at(i, 9, 10) = bar.at(i, 10, 9) = 0.0f;
    const Vec3 z = initial_align(cube, bar);
    for (double c : z)
        CHECK(std::abs(c) < 1e-9);
}

TEST_CASE("registration")
{
    const auto base = generate_base(small_spec(), 17);
    const auto& g = base.volume.geometry();

    SUBCASE("a volume registers onto itself")
    {
        const auto r = register_images(base.volume, base.volume, quick_config(1));
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < base.volume.size(); ++i)
            if (base.volume[i] > -500.0f) {
                const Vec3 d = r.transform.displacement(g.world(i));
                sum += std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
                ++n;
            }
        CHECK(sum / static_cast<double>(n) <= 0.5 * g.spacing[0]);
        CHECK(r.report.iterations_used.size() == 3);
    }
    SUBCASE("planted deformation is recovered")
    {
        const auto target = deform(base.volume, base.truth, 99, 4.0);
        const auto r = register_images(target.volume, base.volume, quick_config(2));
        const Mask seg = warp_mask(r.transform, base.truth.true_mask, g);
        const double before = dice(base.truth.true_mask, target.truth.true_mask);
        const double after = dice(seg, target.truth.true_mask);
        MESSAGE("dice before " << before << " after " << after);
        CHECK(after >= 0.90);
        CHECK(r.report.mi_final >= r.report.mi_initial);
    }
    SUBCASE("fixed seed gives an identical transform")
    {
        const auto target = deform(base.volume, base.truth, 7, 4.0);
        auto cfg = quick_config(3);
        cfg.max_iterations_per_level = 20;
        const auto a = register_images(target.volume, base.volume, cfg);
        const auto b = register_images(target.volume, base.volume, cfg);
        CHECK(a.transform == b.transform);
        CHECK(a.report.mi_final == b.report.mi_final);
    }
    SUBCASE("invalid settings")
    {
        auto cfg = quick_config(0);
        cfg.levels = 0;
        CHECK_THROWS_AS(register_images(base.volume, base.volume, cfg), ArgumentError);
        cfg = quick_config(0);
        cfg.final_grid_spacing = 2.0;
        CHECK_THROWS_AS(register_images(base.volume, base.volume, cfg), ArgumentError);
        CHECK_THROWS_AS(register_images(Volume(g, 0.0f), base.volume, quick_config(0)),
                        DegenerateInputError);
    }
}

TEST_CASE("multi-atlas segmentation")
{
    const auto spec = small_spec();
    const auto base = generate_base(spec, 23);
    auto cfg = quick_config(4);
    cfg.max_iterations_per_level = 30;
    const Atlas self{base.volume, base.truth.true_mask};

    SUBCASE("one atlas identical to the target")
    {
        const auto seg = segment_by_atlases(base.volume, std::span(&self, 1), cfg);
        REQUIRE(seg.masks.size() == 1);
        CHECK(dice(seg.masks[0], base.truth.true_mask) >= 0.99);
    }
    SUBCASE("order and count follow the atlas list")
    {
        std::vector<Atlas> atlases;
        for (std::uint64_t s = 0; s < 3; ++s) {
            const auto p = generate_base(spec, 100 + s);
            atlases.push_back({p.volume, p.truth.true_mask});
        }
        atlases.push_back(self);
        const auto seg = segment_by_atlases(base.volume, atlases, cfg, 2);
        REQUIRE(seg.masks.size() == 4);
        CHECK(seg.reports.size() == 4);
        CHECK(dice(seg.masks[3], base.truth.true_mask) >= 0.99);
        const auto serial = segment_by_atlases(base.volume, atlases, cfg, 1);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(std::equal(seg.masks[i].weights().begin(), seg.masks[i].weights().end(),
                             serial.masks[i].weights().begin()));
    }
    SUBCASE("a failing atlas is named")
    {
        std::vector<Atlas> atlases{self, {Volume(base.volume.geometry(), -1000.0f), base.truth.true_mask}};
        try {
            segment_by_atlases(base.volume, atlases, cfg);
            FAIL("expected an error");
        } catch (const DegenerateInputError& e) {
            CHECK(std::string(e.what()).find("atlas 1") != std::string::npos);
        }
        CHECK_THROWS_AS(segment_by_atlases(base.volume, std::span<const Atlas>(), cfg), ArgumentError);
    }
}
