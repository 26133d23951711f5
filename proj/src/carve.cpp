#include "dgs/carve.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "dgs/kdtree.hpp"
#include "dgs/sh.hpp"

namespace dgs {

namespace {
constexpr double kMaxAlpha = 1.0 - 1e-7;
}

void CarveConfig::validate(double initial_opacity) const {
  if (!(unce_weight > 0.0)) throw ConfigError("carve.unce_weight must be positive");
  if (!(step > 0.0)) throw ConfigError("carve.step must be positive");
  if (!(cull_threshold > 0.0)) throw ConfigError("carve.cull_threshold must be positive");
  if (cull_every <= 0) throw ConfigError("carve.cull_every must be positive");
  if (max_iters <= 0) throw ConfigError("carve.max_iters must be positive");
  if (!(cull_threshold < initial_opacity))
    throw ConfigError("carve.cull_threshold must be below the initial opacity");
}

std::vector<GaussianKernel> isometric_init(std::span<const Vec3> points, double cell) {
  if (!(cell > 0.0)) throw ConfigError("isometric_init: cell size must be positive");
  const double s = cell * std::cbrt(3.0 / (4.0 * std::numbers::pi));
  std::vector<GaussianKernel> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[i].center = points[i];
    out[i].scales = Vec3::Constant(s);
    out[i].opacity = CarveConfig::kInitialOpacity;
  }
  return out;
}

Vec3 rgb_to_dc(const Vec3& rgb) { return (rgb - Vec3::Constant(0.5)) / kShC0; }

std::vector<ShColor> interpolate_interior_sh(std::span<const Vec3> interior,
                                             const OrientedPointSet& proxy, std::size_t k) {
  if (proxy.positions.empty()) throw ConfigError("interpolate_interior_sh: empty proxy set");
  if (proxy.colors.size() != proxy.positions.size())
    throw ConfigError("interpolate_interior_sh: proxy points carry no colors");
  if (k == 0) throw ConfigError("interpolate_interior_sh: k must be positive");
  const KdTree tree(proxy.positions);
  std::vector<ShColor> out(interior.size(), ShColor{});
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(interior.size()); ++i) {
    const auto nn = tree.knn(interior[i], std::min(k, proxy.size()));
    double h = 0.0;
    for (const auto& n : nn) h += std::sqrt(n.dist2);
    h /= static_cast<double>(nn.size());
    Vec3 acc = Vec3::Zero();
    double wsum = 0.0;
    for (const auto& n : nn) {
      const double w = h > 0.0 ? std::exp(-n.dist2 / (2.0 * h * h)) : 1.0;
      acc += w * proxy.colors[n.index];
      wsum += w;
    }
    const Vec3 dc = rgb_to_dc(acc / wsum);
    for (int c = 0; c < 3; ++c) out[i][c][0] = dc[c];
  }
  return out;
}

double unce_loss(const RasterImage& silhouette, const RasterImage& mask) {
  if (silhouette.width != mask.width || silhouette.height != mask.height)
    throw ConfigError("unce_loss: silhouette and mask sizes differ");
  const std::size_t n = silhouette.pixel_count();
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double m = mask.values[p * mask.channels];
    const double a = std::min(silhouette.values[p * silhouette.channels], kMaxAlpha);
    sum += -(1.0 - m) * std::log1p(-a);
  }
  return sum / static_cast<double>(n);
}

std::vector<double> unce_gradient_opacity(std::span<const GaussianKernel> kernels,
                                          const Camera& camera, const RasterImage& mask,
                                          const RasterOptions& opts) {
  if (mask.width != camera.width || mask.height != camera.height)
    throw ConfigError("unce_gradient_opacity: mask size does not match camera");
  const RasterPlan plan(kernels, camera, opts);
  const double inv_n = 1.0 / static_cast<double>(mask.pixel_count());
  std::vector<std::vector<std::pair<std::size_t, double>>> per_tile(plan.tile_count());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t tile = 0; tile < static_cast<std::ptrdiff_t>(plan.tile_count()); ++tile) {
    int x0, y0, x1, y1;
    plan.tile_bounds(static_cast<std::size_t>(tile), x0, y0, x1, y1);
    auto& out = per_tile[static_cast<std::size_t>(tile)];
    std::vector<std::size_t> idx;
    std::vector<double> alpha, weight, prefix;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const double m = mask.at(x, y, 0);
        if (m >= 1.0) continue;
        idx.clear();
        alpha.clear();
        weight.clear();
        plan.visit_pixel(x, y, [&](std::size_t i, double a, double w) {
          idx.push_back(i);
          alpha.push_back(a);
          weight.push_back(w);
        });
        if (idx.empty()) continue;
        // prefix[i] = prod_{j<i} (1 - alpha_j); suffix accumulated backwards.
        prefix.assign(idx.size() + 1, 1.0);
        for (std::size_t i = 0; i < idx.size(); ++i) prefix[i + 1] = prefix[i] * (1.0 - alpha[i]);
        const double a_total = 1.0 - prefix.back();
        if (a_total > kMaxAlpha) continue;  // clamped: loss is flat here
        const double scale = (1.0 - m) / (1.0 - a_total) * inv_n;
        double suffix = 1.0;
        for (std::size_t i = idx.size(); i-- > 0;) {
          out.emplace_back(idx[i], scale * weight[i] * prefix[i] * suffix);
          suffix *= 1.0 - alpha[i];
        }
      }
  }
  std::vector<double> grad(kernels.size(), 0.0);
  for (const auto& tile : per_tile)
    for (const auto& [i, g] : tile) grad[i] += g;
  return grad;
}

double validation_unce(std::span<const GaussianKernel> kernels, std::span<const CarveView> views) {
  double total = 0.0;
  for (const auto& v : views) {
    if (v.mask.pixel_count() == 0) continue;
    total += unce_loss(render_opacity_silhouette(kernels, v.camera), v.mask);
  }
  return total;
}

CarveResult carve(std::vector<GaussianKernel> kernels, std::span<const CarveView> views,
                  const CarveConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (views.size() < 3) throw ConfigError("carve: need at least 3 views");
  for (std::size_t v = 0; v < views.size(); ++v) {
    const auto& view = views[v];
    if (view.mask.pixel_count() != 0 &&
        (view.mask.width != view.camera.width || view.mask.height != view.camera.height))
      throw ConfigError("carve: mask of view " + std::to_string(v) + " does not match its camera");
  }
  CarveResult res;
  res.validation_loss.push_back(validation_unce(kernels, views));
  if (log) *log << "iteration,view,loss,kernels\n";
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, views.size() - 1);
  const double lr = cfg.step * cfg.unce_weight;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const std::size_t v = pick(rng);
    const CarveView& view = views[v];
    if (view.mask.pixel_count() == 0) {
      ++res.skipped;
    } else {
      ++res.iterations;
      const std::vector<double> g = unce_gradient_opacity(kernels, view.camera, view.mask);
      for (std::size_t i = 0; i < kernels.size(); ++i)
        kernels[i].opacity = std::clamp(kernels[i].opacity - lr * g[i], 0.0, 1.0);
      if (log) {
        const double loss = unce_loss(render_opacity_silhouette(kernels, view.camera), view.mask);
        *log << it << "," << v << "," << loss << "," << kernels.size() << "\n";
      }
    }
    if (it % cfg.cull_every == 0) {
      std::erase_if(kernels, [&](const GaussianKernel& g) { return g.opacity <= cfg.cull_threshold; });
      if (kernels.empty()) throw NumericalError("carve: every kernel was culled");
      res.validation_loss.push_back(validation_unce(kernels, views));
      if (res.validation_loss.back() == 0.0) break;  // gradients vanish from here on
    }
  }
  res.kernels = std::move(kernels);
  return res;
}

}  // namespace dgs
