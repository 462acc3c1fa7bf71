#include <algorithm>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"

#include "ctmass/error.hpp"
#include "ctmass/nifti.hpp"
#include "ctmass/phantom.hpp"
#include "json.hpp"

using namespace ctmass;

namespace {

PhantomSpec small_spec()
{
    PhantomSpec s;
    s.dims = {32, 32, 48};
    s.spacing = {4.0, 4.0, 4.0};
    return s;
}

double brute_force_grams(const Volume& v, const Mask& m)
{
    const auto& g = v.geometry();
    double sum = 0.0;
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                const auto n = g.linear_index(i, j, k);
                if (m.weights()[n] >= 0.5f)
                    sum += (1.0 + v.at(i, j, k) / 1000.0) * g.spacing[0] * g.spacing[1] * g.spacing[2];
            }
    return sum / 1000.0;
}

} // namespace

TEST_CASE("base phantom")
{
    const auto p = generate_base(small_spec(), 3);
    const auto& t = p.truth;
    CHECK(t.true_mask.count() > 0);
    CHECK(t.distractor_mask.count() > 0);
    CHECK(dice(t.true_mask, t.distractor_mask) == 0.0);
    CHECK(t.true_weight_g == doctest::Approx(brute_force_grams(p.volume, t.true_mask)).epsilon(1e-9));
    CHECK(t.bias_factor >= 0.95);
    CHECK(t.bias_factor <= 0.99);
    CHECK(t.dissected_weight_g == doctest::Approx(t.true_weight_g * t.bias_factor + t.noise_g));

    double muscle = 0.0, distractor = 0.0;
    for (std::size_t n = 0; n < p.volume.size(); ++n) {
        muscle += t.true_mask.contains(n) ? p.volume[n] : 0.0;
        distractor += t.distractor_mask.contains(n) ? p.volume[n] : 0.0;
    }
    muscle /= static_cast<double>(t.true_mask.count());
    distractor /= static_cast<double>(t.distractor_mask.count());
    CHECK(std::abs(muscle - distractor) < 5.0);
    CHECK(p.volume[0] == kAirHU);
}

TEST_CASE("noise-free dissection equals the true weight")
{
    auto s = small_spec();
    s.bias_lo = s.bias_hi = 1.0;
    s.dissection_noise_sd = 0.0;
    const auto p = generate_base(s, 4);
    CHECK(p.truth.dissected_weight_g == p.truth.true_weight_g);
}

TEST_CASE("deformation")
{
    const auto p = generate_base(small_spec(), 5);
    SUBCASE("magnitude zero is the identity")
    {
        const auto d = deform(p.volume, p.truth, 1, 0.0);
        CHECK(std::equal(d.volume.values().begin(), d.volume.values().end(), p.volume.values().begin()));
        CHECK(dice(d.truth.true_mask, p.truth.true_mask) == 1.0);
    }
    SUBCASE("default magnitude keeps the region volume within 10%")
    {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto d = deform(p.volume, p.truth, seed, PhantomSpec{}.deformation_magnitude);
            const double before = static_cast<double>(p.truth.true_mask.count());
            const double after = static_cast<double>(d.truth.true_mask.count());
            CHECK(std::abs(after - before) <= 0.1 * before);
            CHECK(d.truth.true_weight_g ==
                  doctest::Approx(brute_force_grams(d.volume, d.truth.true_mask)).epsilon(1e-9));
        }
    }
    SUBCASE("folding magnitudes are rejected")
    {
        CHECK_THROWS_AS(deform(p.volume, p.truth, 1, 16.0), ArgumentError);
        auto s = small_spec();
        s.deformation_magnitude = 20.0;
        CHECK_THROWS_AS(s.validate(), ArgumentError);
    }
}

TEST_CASE("cohort")
{
    const auto spec = small_spec();
    const auto a = generate_cohort(40, 3, 9, spec);
    CHECK(a.atlases.size() == 3);
    CHECK(a.subjects.size() == 40);
    const auto w = a.dissected_weights();
    const auto [lo, hi] = std::minmax_element(w.begin(), w.end());
    double mean = 0.0;
    for (double x : w)
        mean += x / static_cast<double>(w.size());
    CHECK((*hi - *lo) / mean >= 0.2);

    const auto b = generate_cohort(40, 3, 9, spec);
    CHECK(b.dissected_weights() == w);
    for (std::size_t i = 0; i < 40; i += 13)
        CHECK(std::equal(a.subjects[i].values().begin(), a.subjects[i].values().end(),
                         b.subjects[i].values().begin()));
    CHECK(generate_cohort(40, 3, 10, spec).dissected_weights() != w);
    CHECK_THROWS_AS(generate_cohort(1, 1, 0, spec), ArgumentError);
}

TEST_CASE("cohort on disk")
{
    const auto dir = testing::scratch_dir("phantom_cohort");
    const auto c = generate_cohort(3, 2, 4, small_spec());
    write_cohort(c, dir, 4);
    CHECK(subject_id(7) == "subject_007");
    CHECK(std::filesystem::exists(dir / "atlases" / "atlas_01_mask.nii"));
    const Volume v = load_nifti(dir / "subjects" / "subject_002.nii");
    CHECK(std::equal(v.values().begin(), v.values().end(), c.subjects[2].values().begin()));

    const auto config = nlohmann::json::parse(std::ifstream(dir / "config.json"));
    CHECK(config["seed"] == 4);
    CHECK(config["atlases"].size() == 2);
    CHECK(config["subjects"].size() == 3);

    std::ifstream weights(dir / "weights.csv");
    std::string line;
    std::getline(weights, line);
    CHECK(line == "id,dissected_weight_g");
    int rows = 0;
    while (std::getline(weights, line))
        ++rows;
    CHECK(rows == 3);
}
