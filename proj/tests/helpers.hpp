#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ctmass/rng.hpp"
#include "ctmass/volume.hpp"

namespace testing {

// Fresh scratch directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("ctmass_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline ctmass::Volume random_volume(ctmass::Rng& rng, ctmass::Index3 dims, double lo = -1000.0,
                                    double hi = 1000.0)
{
    ctmass::Geometry g;
    g.dims = dims;
    g.spacing = {rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0)};
    g.origin = {rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50)};
    ctmass::Volume v(g);
    for (auto& x : v.values())
        x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

} // namespace testing
