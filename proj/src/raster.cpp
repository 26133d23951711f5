#include "dgs/raster.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "dgs/sh.hpp"
#include "dgs/splat_ops.hpp"

namespace dgs {

Projection project_kernel(const GaussianKernel& kernel, const Camera& camera,
                          const RasterOptions& opts) {
  Projection out;
  const Vec3 t = camera.to_camera(kernel.center);
  out.depth = t.z();
  if (!(t.z() > opts.near_plane)) {
    out.behind = true;
    return out;
  }
  const Mat3& k = camera.intrinsics;
  const Vec3 kt = k * t;
  out.mean = Vec2(kt.x() / t.z(), kt.y() / t.z());
  // Perspective Jacobian of (u, v) with respect to the camera-frame point.
  const double iz = 1.0 / t.z(), iz2 = iz * iz;
  Eigen::Matrix<double, 2, 3> j;
  j << k(0, 0) * iz, k(0, 1) * iz, -(k(0, 0) * t.x() + k(0, 1) * t.y()) * iz2,
       0.0, k(1, 1) * iz, -k(1, 1) * t.y() * iz2;
  const Eigen::Matrix<double, 2, 3> jw = j * camera.rotation;
  out.cov = jw * kernel.covariance() * jw.transpose();
  out.cov(0, 0) += opts.cov_floor;
  out.cov(1, 1) += opts.cov_floor;
  return out;
}

RasterPlan::RasterPlan(std::span<const GaussianKernel> kernels, const Camera& camera,
                       const RasterOptions& opts)
    : opts_(opts), width_(camera.width), height_(camera.height) {
  if (opts_.tile <= 0) throw ConfigError("raster: tile size must be positive");
  tiles_x_ = (width_ + opts_.tile - 1) / opts_.tile;
  tiles_y_ = (height_ + opts_.tile - 1) / opts_.tile;
  tiles_.resize(static_cast<std::size_t>(tiles_x_) * tiles_y_);

  std::vector<Splat> splats(kernels.size());
  std::vector<char> keep(kernels.size(), 0);
  std::vector<std::array<int, 4>> rect(kernels.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(kernels.size()); ++i) {
    const GaussianKernel& g = kernels[i];
    if (!(g.opacity > 0.0)) continue;
    const Projection p = project_kernel(g, camera, opts_);
    if (p.behind) continue;
    const double det = p.cov.determinant();
    if (!(det > 0.0)) continue;
    const double mid = 0.5 * (p.cov(0, 0) + p.cov(1, 1));
    const double lmax = mid + std::sqrt(std::max(0.1, mid * mid - det));
    const double radius = std::sqrt(opts_.cutoff_mahalanobis2 * lmax);
    const double x0 = std::floor(p.mean.x() - radius), x1 = std::ceil(p.mean.x() + radius);
    const double y0 = std::floor(p.mean.y() - radius), y1 = std::ceil(p.mean.y() + radius);
    if (x1 < 0 || y1 < 0 || x0 >= width_ || y0 >= height_) continue;
    const int tx0 = std::max(0, static_cast<int>(x0) / opts_.tile);
    const int ty0 = std::max(0, static_cast<int>(y0) / opts_.tile);
    const int tx1 = std::min(tiles_x_ - 1, static_cast<int>(std::min<double>(x1, width_ - 1)) / opts_.tile);
    const int ty1 = std::min(tiles_y_ - 1, static_cast<int>(std::min<double>(y1, height_ - 1)) / opts_.tile);
    splats[i] = {static_cast<std::size_t>(i), p.mean, p.cov.inverse(), g.opacity, p.depth};
    rect[i] = {tx0, ty0, tx1, ty1};
    keep[i] = 1;
  }

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < kernels.size(); ++i)
    if (keep[i]) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return splats[a].depth < splats[b].depth;
  });
  splats_.reserve(order.size());
  for (std::size_t i : order) {
    const auto slot = static_cast<std::uint32_t>(splats_.size());
    splats_.push_back(splats[i]);
    const auto& r = rect[i];
    for (int ty = r[1]; ty <= r[3]; ++ty)
      for (int tx = r[0]; tx <= r[2]; ++tx)
        tiles_[static_cast<std::size_t>(ty) * tiles_x_ + tx].push_back(slot);
  }
}

void RasterPlan::tile_bounds(std::size_t tile, int& x0, int& y0, int& x1, int& y1) const {
  const int tx = static_cast<int>(tile) % tiles_x_;
  const int ty = static_cast<int>(tile) / tiles_x_;
  x0 = tx * opts_.tile;
  y0 = ty * opts_.tile;
  x1 = std::min(width_, x0 + opts_.tile);
  y1 = std::min(height_, y0 + opts_.tile);
}

namespace {

/// Blends `channels` per-kernel values; the extra last channel holds A(p).
RasterImage blend_with_alpha(std::span<const GaussianKernel> kernels, const Camera& camera,
                             std::span<const double> quantity, int channels,
                             const RasterOptions& opts) {
  if (channels < 0) throw ConfigError("blend: negative channel count");
  if (quantity.size() != kernels.size() * static_cast<std::size_t>(channels))
    throw ConfigError("blend: quantity size does not match kernels x channels");
  const RasterPlan plan(kernels, camera, opts);
  RasterImage img(camera.width, camera.height, channels + 1);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t tile = 0; tile < static_cast<std::ptrdiff_t>(plan.tile_count()); ++tile) {
    int x0, y0, x1, y1;
    plan.tile_bounds(static_cast<std::size_t>(tile), x0, y0, x1, y1);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        double* px = &img.at(x, y, 0);
        double t = 1.0;
        plan.visit_pixel(x, y, [&](std::size_t idx, double alpha, double) {
          const double w = alpha * t;
          const double* q = quantity.data() + idx * channels;
          for (int c = 0; c < channels; ++c) px[c] += w * q[c];
          t *= 1.0 - alpha;
        });
        px[channels] = 1.0 - t;
      }
    }
  }
  return img;
}

RasterImage take_channels(const RasterImage& src, int first, int count) {
  RasterImage out(src.width, src.height, count);
  for (std::size_t p = 0; p < src.pixel_count(); ++p)
    for (int c = 0; c < count; ++c) out.values[p * count + c] = src.values[p * src.channels + first + c];
  return out;
}

}  // namespace

RasterImage blend_quantity(std::span<const GaussianKernel> kernels, const Camera& camera,
                           std::span<const double> quantity, int channels,
                           const RasterOptions& opts) {
  return take_channels(blend_with_alpha(kernels, camera, quantity, channels, opts), 0, channels);
}

RasterImage render_opacity_silhouette(std::span<const GaussianKernel> kernels, const Camera& camera,
                                      const RasterOptions& opts) {
  return blend_with_alpha(kernels, camera, {}, 0, opts);
}

RasterImage render_color(std::span<const GaussianKernel> kernels, const Camera& camera,
                         const Vec3& background, const RasterOptions& opts) {
  std::vector<double> rgb(kernels.size() * 3);
  const Vec3 eye = camera.center();
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    Vec3 dir = kernels[i].center - eye;
    const double n = dir.norm();
    dir = n > 0.0 ? Vec3(dir / n) : Vec3::UnitZ();
    for (int c = 0; c < 3; ++c) rgb[i * 3 + c] = std::max(0.0, eval_sh(kernels[i].sh[c], dir) + 0.5);
  }
  const RasterImage full = blend_with_alpha(kernels, camera, rgb, 3, opts);
  RasterImage out(camera.width, camera.height, 3);
  for (std::size_t p = 0; p < full.pixel_count(); ++p) {
    const double t = 1.0 - full.values[p * 4 + 3];
    for (int c = 0; c < 3; ++c) out.values[p * 3 + c] = full.values[p * 4 + c] + t * background[c];
  }
  return out;
}

RasterImage render_unbiased_depth(std::span<const GaussianKernel> kernels, const Camera& camera,
                                  std::span<const Vec3> normals, const RasterOptions& opts) {
  if (!normals.empty() && normals.size() != kernels.size())
    throw ConfigError("render_unbiased_depth: normals do not match kernels");
  const Vec3 eye = camera.center();
  std::vector<double> q(kernels.size() * 4);
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    Vec3 n = normals.empty() ? flatten_normal_candidates(kernels[i]).first : normals[i];
    const Vec3 offset = kernels[i].center - eye;
    if (n.dot(offset) > 0.0) n = -n;
    const Vec3 nc = camera.rotation * n;
    q[i * 4 + 0] = nc.x();
    q[i * 4 + 1] = nc.y();
    q[i * 4 + 2] = nc.z();
    q[i * 4 + 3] = std::abs(n.dot(offset));
  }
  const RasterImage full = blend_with_alpha(kernels, camera, q, 4, opts);
  const Mat3 kinv = camera.intrinsics.inverse();
  RasterImage out(camera.width, camera.height, 2);
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const double* px = full.values.data() + (static_cast<std::size_t>(y) * camera.width + x) * 5;
      if (px[4] < 0.5) continue;
      const Vec3 ray = kinv * Vec3(x, y, 1.0);
      const double denom = -(px[0] * ray.x() + px[1] * ray.y() + px[2] * ray.z());
      if (std::abs(denom) < 1e-8) continue;
      const double depth = px[3] / denom;
      if (!(depth > 0.0)) continue;
      out.at(x, y, 0) = depth;
      out.at(x, y, 1) = 1.0;
    }
  }
  return out;
}

RasterImage render_projected_mask(std::span<const GaussianKernel> kernels,
                                  std::span<const std::size_t> object_ids, const Camera& camera,
                                  const RasterOptions& opts) {
  std::vector<GaussianKernel> subset;
  subset.reserve(object_ids.size());
  for (std::size_t id : object_ids) {
    if (id >= kernels.size()) throw ConfigError("render_projected_mask: id out of range");
    subset.push_back(kernels[id]);
  }
  RasterImage a = render_opacity_silhouette(subset, camera, opts);
  for (double& v : a.values) v = v > 0.0 ? 1.0 : 0.0;
  return a;
}

RasterImage dilate_mask(const RasterImage& mask, int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ConfigError("dilate_mask: kernel size must be odd, got " + std::to_string(kernel_size));
  const int r = kernel_size / 2;
  RasterImage tmp(mask.width, mask.height, mask.channels);
  RasterImage out(mask.width, mask.height, mask.channels);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      for (int c = 0; c < mask.channels; ++c) {
        double m = mask.at(x, y, c);
        for (int dx = std::max(0, x - r); dx <= std::min(mask.width - 1, x + r); ++dx)
          m = std::max(m, mask.at(dx, y, c));
        tmp.at(x, y, c) = m;
      }
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      for (int c = 0; c < mask.channels; ++c) {
        double m = tmp.at(x, y, c);
        for (int dy = std::max(0, y - r); dy <= std::min(mask.height - 1, y + r); ++dy)
          m = std::max(m, tmp.at(x, dy, c));
        out.at(x, y, c) = m;
      }
  return out;
}

}  // namespace dgs
