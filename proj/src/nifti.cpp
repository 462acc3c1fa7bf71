#include "ctmass/nifti.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "ctmass/error.hpp"

namespace ctmass {

static_assert(std::endian::native == std::endian::little,
              "NIfTI I/O assumes a little-endian host");

namespace {

// Header field offsets (bytes).
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffQoffset = 268;
constexpr std::size_t kOffMagic = 344;

template <class T>
T read_field(const std::vector<char>& buf, std::size_t offset)
{
    T value;
    std::memcpy(&value, buf.data() + offset, sizeof(T));
    return value;
}

template <class T>
void write_field(std::array<char, kNiftiVoxOffset>& buf, std::size_t offset, T value)
{
    std::memcpy(buf.data() + offset, &value, sizeof(T));
}

std::vector<char> read_all(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace

Volume load_nifti(const std::filesystem::path& path)
{
    const auto buf = read_all(path);
    const std::string where = path.string() + ": ";
    if (buf.size() < static_cast<std::size_t>(kNiftiHeaderSize))
        throw FormatError(where + "file shorter than a NIfTI-1 header");
    const auto sizeof_hdr = read_field<std::int32_t>(buf, 0);
    if (sizeof_hdr != kNiftiHeaderSize)
        throw FormatError(where + "header size field is " + std::to_string(sizeof_hdr) +
                          ", expected 348 (little-endian NIfTI-1)");
    const bool single = std::memcmp(buf.data() + kOffMagic, "n+1\0", 4) == 0;
    const bool pair = std::memcmp(buf.data() + kOffMagic, "ni1\0", 4) == 0;
    if (!single && !pair)
        throw FormatError(where + "bad NIfTI-1 magic");

    const auto ndim = read_field<std::int16_t>(buf, kOffDim);
    if (ndim < 1 || ndim > 7)
        throw FormatError(where + "dim[0] = " + std::to_string(ndim) + " out of range");
    Geometry g;
    for (int a = 0; a < 3; ++a) {
        const auto d = a < ndim ? read_field<std::int16_t>(buf, kOffDim + 2 * (a + 1)) : 1;
        g.dims[a] = d;
        const auto px = read_field<float>(buf, kOffPixdim + 4 * (a + 1));
        g.spacing[a] = px;
    }
    for (int a = 3; a < ndim; ++a)
        if (read_field<std::int16_t>(buf, kOffDim + 2 * (a + 1)) > 1)
            throw UnsupportedError(where + "volumes with more than 3 dimensions are not supported");
    if (read_field<std::int16_t>(buf, kOffQformCode) > 0)
        for (int a = 0; a < 3; ++a)
            g.origin[a] = read_field<float>(buf, kOffQoffset + 4 * a);
    try {
        g.validate();
    } catch (const ArgumentError& e) {
        throw FormatError(where + e.what());
    }

    const auto datatype = read_field<std::int16_t>(buf, kOffDatatype);
    std::size_t bytes_per_voxel = 0;
    if (datatype == kNiftiInt16)
        bytes_per_voxel = 2;
    else if (datatype == kNiftiFloat32)
        bytes_per_voxel = 4;
    else
        throw UnsupportedError(where + "unsupported datatype code " + std::to_string(datatype));

    // "ni1" headers keep the payload in a sibling .img file.
    const auto vox_offset = static_cast<std::size_t>(read_field<float>(buf, kOffVoxOffset));
    std::vector<char> image_file;
    if (pair)
        image_file = read_all(std::filesystem::path(path).replace_extension(".img"));
    else if (vox_offset < static_cast<std::size_t>(kNiftiHeaderSize))
        throw FormatError(where + "vox_offset inside the header");
    const auto& data = pair ? image_file : buf;
    const std::size_t count = g.voxel_count();
    if (data.size() < vox_offset + count * bytes_per_voxel)
        throw FormatError(where + "payload truncated");

    double slope = read_field<float>(buf, kOffSclSlope);
    double inter = read_field<float>(buf, kOffSclInter);
    if (slope == 0.0 || !std::isfinite(slope))
        slope = 1.0;
    if (!std::isfinite(inter))
        inter = 0.0;
    const bool identity = slope == 1.0 && inter == 0.0;

    std::vector<float> values(count);
    const char* payload = data.data() + vox_offset;
    for (std::size_t n = 0; n < count; ++n) {
        double raw;
        if (datatype == kNiftiInt16) {
            std::int16_t v;
            std::memcpy(&v, payload + 2 * n, 2);
            raw = v;
        } else {
            float v;
            std::memcpy(&v, payload + 4 * n, 4);
            if (identity) {
                values[n] = v;
                continue;
            }
            raw = v;
        }
        values[n] = static_cast<float>(slope * raw + inter);
    }
    return Volume(g, std::move(values));
}

void save_nifti(const Volume& volume, const std::filesystem::path& path)
{
    const auto& g = volume.geometry();
    g.validate();
    if (volume.size() == 0 || volume.size() != g.voxel_count())
        throw ArgumentError("save_nifti: volume has no voxels");
    for (int a = 0; a < 3; ++a)
        if (g.dims[a] > 32767)
            throw UnsupportedError("save_nifti: dimension exceeds int16 range");

    std::array<char, kNiftiVoxOffset> header{};
    write_field<std::int32_t>(header, 0, kNiftiHeaderSize);
    write_field<std::int16_t>(header, kOffDim, 3);
    for (int a = 0; a < 3; ++a)
        write_field<std::int16_t>(header, kOffDim + 2 * (a + 1), static_cast<std::int16_t>(g.dims[a]));
    for (int a = 4; a < 8; ++a)
        write_field<std::int16_t>(header, kOffDim + 2 * a, 1);
    write_field<std::int16_t>(header, kOffDatatype, kNiftiFloat32);
    write_field<std::int16_t>(header, kOffBitpix, 32);
    write_field<float>(header, kOffPixdim, 1.0f); // qfac
    for (int a = 0; a < 3; ++a)
        write_field<float>(header, kOffPixdim + 4 * (a + 1), static_cast<float>(g.spacing[a]));
    write_field<float>(header, kOffVoxOffset, static_cast<float>(kNiftiVoxOffset));
    write_field<float>(header, kOffSclSlope, 1.0f);
    write_field<float>(header, kOffSclInter, 0.0f);
    header[kOffXyztUnits] = 2; // millimetres
    write_field<std::int16_t>(header, kOffQformCode, 1);
    for (int a = 0; a < 3; ++a)
        write_field<float>(header, kOffQoffset + 4 * a, static_cast<float>(g.origin[a]));
    std::memcpy(header.data() + kOffMagic, "n+1\0", 4);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    out.write(header.data(), header.size());
    const auto values = volume.values();
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!out)
        throw IoError("write failed: " + path.string());
}

Mask load_mask(const std::filesystem::path& path)
{
    const Volume v = load_nifti(path);
    std::vector<float> w(v.values().begin(), v.values().end());
    try {
        return Mask(v.geometry(), std::move(w));
    } catch (const ArgumentError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void save_mask(const Mask& mask, const std::filesystem::path& path)
{
    std::vector<float> w(mask.weights().begin(), mask.weights().end());
    save_nifti(Volume(mask.geometry(), std::move(w)), path);
}

} // namespace ctmass
