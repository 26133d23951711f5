#include "dgs/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dgs/kdtree.hpp"

namespace dgs {
namespace {

double mean_nn2(std::span<const Vec3> from, const KdTree& to) {
  std::vector<double> d(from.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(from.size()); ++i)
    d[i] = to.nearest(from[i]).dist2;
  double s = 0.0;
  for (double v : d) s += v;
  return s / static_cast<double>(from.size());
}

}  // namespace

double chamfer_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw ConfigError("chamfer_distance: empty point set");
  const KdTree ta(std::vector<Vec3>(a.begin(), a.end()));
  const KdTree tb(std::vector<Vec3>(b.begin(), b.end()));
  return mean_nn2(a, tb) + mean_nn2(b, ta);
}

double psnr(const RasterImage& a, const RasterImage& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels)
    throw ConfigError("psnr: image sizes differ");
  if (a.values.empty()) throw ConfigError("psnr: empty image");
  double se = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.values.size());
  if (mse == 0.0) return kPsnrIdentical;
  return std::min(kPsnrIdentical, 10.0 * std::log10(1.0 / mse));
}

}  // namespace dgs
