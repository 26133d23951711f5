#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "dgs/types.hpp"

namespace dgs {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

/// Row-major interleaved image.
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> values;

  RasterImage() = default;
  RasterImage(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c), values(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c = 0) {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

struct RasterOptions {
  double near_plane = 1e-4;
  double cov_floor = 0.3;           // px^2 added to the 2D covariance diagonal
  double min_transmittance = 1e-4;  // stop blending once T drops below
  double cutoff_mahalanobis2 = 9.0; // footprint radius (3 sigma)
  int tile = 16;
};

struct Projection {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Identity();
  double depth = 0.0;
  bool behind = false;  // center at or behind the near plane; kernel is skipped
};

/// 2D mean, regularized 2D covariance J W Sigma W^T J^T + floor*I, and view depth.
Projection project_kernel(const GaussianKernel& kernel, const Camera& camera,
                          const RasterOptions& opts = {});

/// Projected, depth-sorted, tile-binned kernels for one camera. Kernels are
/// visited per pixel front to back; equal depths keep index order.
class RasterPlan {
 public:
  RasterPlan(std::span<const GaussianKernel> kernels, const Camera& camera,
             const RasterOptions& opts = {});

  int width() const { return width_; }
  int height() const { return height_; }
  const RasterOptions& options() const { return opts_; }
  std::size_t tile_count() const { return tiles_.size(); }
  int tiles_x() const { return tiles_x_; }

  /// Calls fn(kernel_index, alpha, weight) for each contributing kernel of
  /// pixel (x, y) in blending order, where alpha = opacity * weight. Stops
  /// after the contribution that pushes transmittance below the threshold.
  template <class Fn>
  void visit_pixel(int x, int y, Fn&& fn) const {
    const auto& list = tiles_[static_cast<std::size_t>(y / opts_.tile) * tiles_x_ + x / opts_.tile];
    double t = 1.0;
    const Vec2 p(x, y);
    for (const std::uint32_t slot : list) {
      const Splat& s = splats_[slot];
      const Vec2 d = p - s.mean;
      const double m2 = d.dot(s.conic * d);
      if (m2 > opts_.cutoff_mahalanobis2) continue;
      const double w = std::exp(-0.5 * m2);
      const double alpha = s.opacity * w;
      fn(s.index, alpha, w);
      t *= 1.0 - alpha;
      if (t < opts_.min_transmittance) break;
    }
  }

  /// Tile rectangle in pixels: [x0, x1) x [y0, y1).
  void tile_bounds(std::size_t tile, int& x0, int& y0, int& x1, int& y1) const;

 private:
  struct Splat {
    std::size_t index;
    Vec2 mean;
    Mat2 conic;
    double opacity;
    double depth;
  };
  RasterOptions opts_;
  int width_ = 0, height_ = 0, tiles_x_ = 0, tiles_y_ = 0;
  std::vector<Splat> splats_;
  std::vector<std::vector<std::uint32_t>> tiles_;
};

/// Front-to-back alpha blending of a per-kernel quantity (kernels x channels,
/// row-major).
RasterImage blend_quantity(std::span<const GaussianKernel> kernels, const Camera& camera,
                           std::span<const double> quantity, int channels,
                           const RasterOptions& opts = {});

/// Accumulated opacity 1 - prod(1 - alpha_i).
RasterImage render_opacity_silhouette(std::span<const GaussianKernel> kernels, const Camera& camera,
                                      const RasterOptions& opts = {});

/// View-dependent color from degree-3 SH (+0.5 offset, clamped at 0),
/// composited over `background`.
RasterImage render_color(std::span<const GaussianKernel> kernels, const Camera& camera,
                         const Vec3& background = Vec3::Zero(), const RasterOptions& opts = {});

/// Two channels: depth (0 where invalid) and validity (0/1). Depth is
/// d(p) / (-n(p) . K^-1 p') from blended per-kernel plane distances and
/// camera-frame normals, each normal flipped to face the camera. Pixels with
/// accumulated opacity < 0.5 or |n . K^-1 p'| < 1e-8 are invalid.
/// `normals` defaults to the shortest scale axis of each kernel.
RasterImage render_unbiased_depth(std::span<const GaussianKernel> kernels, const Camera& camera,
                                  std::span<const Vec3> normals = {},
                                  const RasterOptions& opts = {});

/// 1 where the listed kernels alone accumulate any opacity, else 0.
RasterImage render_projected_mask(std::span<const GaussianKernel> kernels,
                                  std::span<const std::size_t> object_ids, const Camera& camera,
                                  const RasterOptions& opts = {});

/// Square max filter with an odd side length.
RasterImage dilate_mask(const RasterImage& mask, int kernel_size);

}  // namespace dgs
