#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dgs/poisson.hpp"

namespace dgs {

/// Flat float32 volume: 64-byte header ("DGSVOL01", int32 dims[3],
/// uint32 channels, float64 origin[3], float64 cell, 8 reserved bytes)
/// followed by channel-interleaved values with x varying fastest.
struct VolumeFile {
  Vec3 origin = Vec3::Zero();
  double cell = 1.0;
  GridDims dims{0, 0, 0};
  std::uint32_t channels = 1;
  std::vector<float> data;
};

void write_volume(const VolumeFile& vol, const std::filesystem::path& path);
VolumeFile read_volume(const std::filesystem::path& path);

void save_indicator(const IndicatorGrid& grid, const std::filesystem::path& path);
IndicatorGrid load_indicator(const std::filesystem::path& path);

}  // namespace dgs
