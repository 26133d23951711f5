#pragma once

#include <span>

#include "dgs/raster.hpp"
#include "dgs/types.hpp"

namespace dgs {

/// Symmetric mean of squared nearest-neighbor distances (units of length^2).
double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b);

inline constexpr double kPsnrIdentical = 99.0;

/// 10 log10(1 / MSE) over all channels; kPsnrIdentical for equal images.
double psnr(const RasterImage& a, const RasterImage& b);

}  // namespace dgs
