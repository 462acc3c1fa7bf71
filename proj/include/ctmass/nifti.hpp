#pragma once

// Single-file NIfTI-1 subset: little-endian, uncompressed, int16 or float32
// payload. Spacing comes from pixdim; the origin is carried in the qform
// offset with an identity rotation. Orientation quaternions and sform
// matrices are not interpreted.

#include <filesystem>

#include "ctmass/volume.hpp"

namespace ctmass {

inline constexpr int kNiftiHeaderSize = 348;
inline constexpr int kNiftiVoxOffset = 352;
inline constexpr short kNiftiInt16 = 4;
inline constexpr short kNiftiFloat32 = 16;

Volume load_nifti(const std::filesystem::path& path);

// Writes float32 with slope 1 / intercept 0 and vox_offset 352.
void save_nifti(const Volume& volume, const std::filesystem::path& path);

// Masks are stored as float32 volumes holding their weights.
Mask load_mask(const std::filesystem::path& path);
void save_mask(const Mask& mask, const std::filesystem::path& path);

} // namespace ctmass
