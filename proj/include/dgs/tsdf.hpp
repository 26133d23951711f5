#pragma once

#include <filesystem>
#include <vector>

#include "dgs/poisson.hpp"
#include "dgs/raster.hpp"

namespace dgs {

/// Cell-centered TSDF. Distances are stored in units of the truncation
/// distance and are positive in front of the surface.
struct TsdfVolume {
  Vec3 origin = Vec3::Zero();
  double cell = 1.0;
  GridDims dims{0, 0, 0};
  double truncation = 4.0;
  std::vector<double> sdf;
  std::vector<double> weight;
  std::vector<Vec3> color;

  TsdfVolume() = default;
  /// `truncation` <= 0 selects 4 cells.
  TsdfVolume(const Vec3& origin, double cell, const GridDims& dims, double truncation = 0.0);

  std::size_t size() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  Vec3 voxel_center(int i, int j, int k) const {
    return origin + cell * Vec3(i + 0.5, j + 0.5, k + 0.5);
  }
};

/// Fuses one depth map. `depth` holds depth in channel 0 and, when it has a
/// second channel, validity in channel 1; zero depth is invalid otherwise.
/// Only pixels with mask > 0.5 contribute. `color` (3 channels) is optional.
void integrate_depth(TsdfVolume& vol, const RasterImage& depth, const RasterImage& mask,
                     const Camera& camera, const RasterImage* color = nullptr);

struct ProxyOptions {
  double min_weight = 2.0;
  bool largest_component = true;
};

/// Zero crossings between face-adjacent voxels, with sdf-gradient normals and
/// interpolated colors.
OrientedPointSet extract_proxy_points(const TsdfVolume& vol, const ProxyOptions& opts = {});

/// Container with 5 channels: sdf, weight, r, g, b. The truncation distance
/// is not stored; loading assumes 4 cells unless given.
void save_tsdf(const TsdfVolume& vol, const std::filesystem::path& path);
TsdfVolume load_tsdf(const std::filesystem::path& path, double truncation = 0.0);

}  // namespace dgs
