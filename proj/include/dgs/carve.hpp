#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "dgs/poisson.hpp"
#include "dgs/raster.hpp"

namespace dgs {

struct CarveConfig {
  double unce_weight = 1e-4;
  double step = 1e4;  // opacity learning rate, applied to unce_weight * gradient
  double cull_threshold = 0.05;
  int cull_every = 100;
  int max_iters = 3000;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless every field is positive and the cull
  /// threshold lies below `initial_opacity`.
  void validate(double initial_opacity = kInitialOpacity) const;

  static constexpr double kInitialOpacity = 0.1;
};

/// Isotropic kernels of scale c (3 / 4 pi)^(1/3) and opacity 0.1, one per point.
std::vector<GaussianKernel> isometric_init(std::span<const Vec3> points, double cell);

/// Maps an RGB color to the SH DC coefficient that renders it.
Vec3 rgb_to_dc(const Vec3& rgb);

/// Gaussian-weighted DC interpolation from the k nearest colored proxy points,
/// h = mean neighbor distance. Higher degrees are zero.
std::vector<ShColor> interpolate_interior_sh(std::span<const Vec3> interior,
                                             const OrientedPointSet& proxy, std::size_t k = 15);

/// Mean over pixels of -(1 - M) log(1 - A), with A clamped to 1 - 1e-7.
double unce_loss(const RasterImage& silhouette, const RasterImage& mask);

/// Gradient of unce_loss with respect to each kernel's opacity.
std::vector<double> unce_gradient_opacity(std::span<const GaussianKernel> kernels,
                                          const Camera& camera, const RasterImage& mask,
                                          const RasterOptions& opts = {});

struct CarveView {
  Camera camera;
  RasterImage mask;  // empty (0 x 0) marks a view without a valid mask
};

struct CarveResult {
  std::vector<GaussianKernel> kernels;
  int iterations = 0;         // iterations that used a valid view
  int skipped = 0;            // iterations drawn on views without a mask
  std::vector<double> validation_loss;  // at start and after every cull
};

/// Multi-view opacity carving. Writes "iteration,view,loss,kernels" rows to
/// `log` when given. Throws NumericalError when every kernel is culled.
CarveResult carve(std::vector<GaussianKernel> kernels, std::span<const CarveView> views,
                  const CarveConfig& cfg = {}, std::ostream* log = nullptr);

/// Sum of unce_loss over the views that carry a mask.
double validation_unce(std::span<const GaussianKernel> kernels, std::span<const CarveView> views);

}  // namespace dgs
