#include <cstring>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"

#include "ctmass/error.hpp"
#include "ctmass/nifti.hpp"

using namespace ctmass;
namespace fs = std::filesystem;

namespace {

// Hand-assembled NIfTI-1 header from the published field offsets.
struct RawHeader {
    std::vector<char> bytes = std::vector<char>(352, 0);

    template <class T>
    void put(std::size_t off, T v) { std::memcpy(bytes.data() + off, &v, sizeof v); }

    RawHeader(short nx, short ny, short nz, short datatype, const char* magic = "n+1")
    {
        put<int>(0, 348);
        put<short>(40, 3);
        put<short>(42, nx);
        put<short>(44, ny);
        put<short>(46, nz);
        for (int a = 4; a < 8; ++a)
            put<short>(40 + 2 * a, 1);
        put<short>(70, datatype);
        put<short>(72, datatype == 4 ? 16 : 32);
        put<float>(76, 1.0f);
        put<float>(80, 1.0f);
        put<float>(84, 1.0f);
        put<float>(88, 1.0f);
        put<float>(108, 352.0f);
        put<float>(112, 1.0f);
        std::memcpy(bytes.data() + 344, magic, 4);
    }

    template <class T>
    void append(const std::vector<T>& data)
    {
        const auto* p = reinterpret_cast<const char*>(data.data());
        bytes.insert(bytes.end(), p, p + data.size() * sizeof(T));
    }

    void write(const fs::path& path) const
    {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
};

} // namespace

TEST_CASE("round trip preserves geometry and float values bit for bit")
{
    const auto dir = testing::scratch_dir("nifti_roundtrip");
    Rng rng(21);
    const Volume v = testing::random_volume(rng, {7, 5, 3});
    save_nifti(v, dir / "v.nii");
    const Volume r = load_nifti(dir / "v.nii");
    CHECK(r.geometry().dims == v.geometry().dims);
    for (int a = 0; a < 3; ++a) {
        CHECK(r.geometry().spacing[a] == static_cast<float>(v.geometry().spacing[a]));
        CHECK(r.geometry().origin[a] == static_cast<float>(v.geometry().origin[a]));
    }
    CHECK(std::memcmp(r.values().data(), v.values().data(), v.size() * sizeof(float)) == 0);
    CHECK(fs::file_size(dir / "v.nii") == 352 + 4 * v.size());
}

TEST_CASE("a single voxel file is 356 bytes")
{
    const auto dir = testing::scratch_dir("nifti_one");
    Geometry g;
    save_nifti(Volume(g, 12.5f), dir / "one.nii");
    CHECK(fs::file_size(dir / "one.nii") == 356);
    CHECK(load_nifti(dir / "one.nii")[0] == 12.5f);
}

TEST_CASE("int16 payload with scaling")
{
    const auto dir = testing::scratch_dir("nifti_int16");
    RawHeader h(2, 1, 1, 4);
    h.put<float>(112, 2.0f);
    h.put<float>(116, -1000.0f);
    h.append(std::vector<short>{500, -12});
    h.write(dir / "s.nii");
    const Volume v = load_nifti(dir / "s.nii");
    CHECK(v[0] == 0.0f);
    CHECK(v[1] == -1024.0f);
}

TEST_CASE("zero slope means unscaled")
{
    const auto dir = testing::scratch_dir("nifti_slope0");
    RawHeader h(1, 1, 1, 4);
    h.put<float>(112, 0.0f);
    h.append(std::vector<short>{37});
    h.write(dir / "s.nii");
    CHECK(load_nifti(dir / "s.nii")[0] == 37.0f);
}

TEST_CASE("two-file pair")
{
    const auto dir = testing::scratch_dir("nifti_pair");
    RawHeader h(3, 1, 1, 16, "ni1");
    h.put<float>(108, 0.0f);
    h.bytes.resize(348);
    h.write(dir / "p.hdr");
    const std::vector<float> data{1.0f, 2.0f, 3.0f};
    std::ofstream(dir / "p.img", std::ios::binary)
        .write(reinterpret_cast<const char*>(data.data()), 12);
    const Volume v = load_nifti(dir / "p.hdr");
    CHECK(v.geometry().dims == Index3{3, 1, 1});
    CHECK(v[2] == 3.0f);
}

TEST_CASE("malformed and unsupported files")
{
    const auto dir = testing::scratch_dir("nifti_bad");
    SUBCASE("big-endian header size")
    {
        RawHeader h(1, 1, 1, 16);
        h.put<int>(0, 0x5C010000);
        h.append(std::vector<float>{0.0f});
        h.write(dir / "be.nii");
        CHECK_THROWS_AS(load_nifti(dir / "be.nii"), FormatError);
    }
    SUBCASE("short file")
    {
        std::ofstream(dir / "short.nii") << "abc";
        CHECK_THROWS_AS(load_nifti(dir / "short.nii"), FormatError);
    }
    SUBCASE("bad magic")
    {
        RawHeader h(1, 1, 1, 16, "xyz");
        h.append(std::vector<float>{0.0f});
        h.write(dir / "m.nii");
        CHECK_THROWS_AS(load_nifti(dir / "m.nii"), FormatError);
    }
    SUBCASE("truncated payload")
    {
        RawHeader h(4, 4, 1, 16);
        h.append(std::vector<float>(15, 0.0f));
        h.write(dir / "t.nii");
        CHECK_THROWS_AS(load_nifti(dir / "t.nii"), FormatError);
    }
    SUBCASE("float64 datatype")
    {
        RawHeader h(1, 1, 1, 64);
        h.append(std::vector<double>{0.0});
        h.write(dir / "d.nii");
        CHECK_THROWS_AS(load_nifti(dir / "d.nii"), UnsupportedError);
    }
    SUBCASE("four dimensions")
    {
        RawHeader h(1, 1, 1, 16);
        h.put<short>(40, 4);
        h.put<short>(48, 2);
        h.append(std::vector<float>{0.0f, 0.0f});
        h.write(dir / "4d.nii");
        CHECK_THROWS_AS(load_nifti(dir / "4d.nii"), UnsupportedError);
    }
    SUBCASE("zero dimension")
    {
        RawHeader h(0, 1, 1, 16);
        h.write(dir / "z.nii");
        CHECK_THROWS_AS(load_nifti(dir / "z.nii"), FormatError);
    }
    SUBCASE("missing file")
    {
        CHECK_THROWS_AS(load_nifti(dir / "nope.nii"), IoError);
    }
}

TEST_CASE("masks round trip and reject out of range weights")
{
    const auto dir = testing::scratch_dir("nifti_mask");
    Geometry g;
    g.dims = {3, 2, 1};
    Mask m(g);
    m.set(1, true);
    m.set(4, true);
    save_mask(m, dir / "m.nii");
    const Mask r = load_mask(dir / "m.nii");
    CHECK(r.count() == 2);
    CHECK(r.contains(4));
    save_nifti(Volume(g, 2.0f), dir / "bad.nii");
    CHECK_THROWS_AS(load_mask(dir / "bad.nii"), FormatError);
}
