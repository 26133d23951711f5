#include "dgs/splat_ops.hpp"

#include <algorithm>
#include <string>

#include "dgs/kdtree.hpp"

namespace dgs {

std::vector<Vec3> centers_of(std::span<const GaussianKernel> kernels) {
  std::vector<Vec3> out;
  out.reserve(kernels.size());
  for (const auto& k : kernels) out.push_back(k.center);
  return out;
}

SplitResult split_object(std::span<const GaussianKernel> kernels, int click_label) {
  const bool present = std::any_of(kernels.begin(), kernels.end(),
                                   [&](const GaussianKernel& k) { return k.label == click_label; });
  if (!present) throw ConfigError("unknown label " + std::to_string(click_label));
  SplitResult r;
  for (const auto& k : kernels) (k.label == click_label ? r.object : r.scene).push_back(k);
  return r;
}

double median_nn_spacing(std::span<const Vec3> points) {
  if (points.size() < 2) return 0.0;
  const KdTree tree(std::vector<Vec3>(points.begin(), points.end()));
  std::vector<double> d;
  d.reserve(points.size());
  for (const auto& p : points) {
    const auto nn = tree.knn(p, 2);
    d.push_back(std::sqrt(nn.back().dist2));
  }
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid;
}

std::vector<GaussianKernel> knn_residual_cleanup(std::span<const GaussianKernel> scene,
                                                 std::span<const GaussianKernel> object,
                                                 const CleanupOptions& opts) {
  if (opts.k < 1) throw ConfigError("knn cleanup: k must be >= 1");
  if (object.empty()) return {scene.begin(), scene.end()};
  const auto obj_centers = centers_of(object);
  const double radius = opts.radius.value_or(2.0 * median_nn_spacing(obj_centers));
  const KdTree tree(obj_centers);
  std::vector<GaussianKernel> kept;
  kept.reserve(scene.size());
  for (const auto& s : scene) {
    const auto nn = tree.knn(s.center, opts.k);
    const bool near = std::any_of(nn.begin(), nn.end(),
                                  [&](const Neighbor& n) { return n.dist2 <= radius * radius; });
    if (!near) kept.push_back(s);
  }
  return kept;
}

std::vector<int> transfer_labels(std::span<const Vec3> points,
                                 std::span<const GaussianKernel> labeled) {
  if (labeled.empty()) throw ConfigError("transfer_labels: no labeled kernels");
  const KdTree tree(centers_of(labeled));
  std::vector<int> out(points.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(points.size()); ++i)
    out[i] = labeled[tree.nearest(points[i]).index].label;
  return out;
}

std::pair<Vec3, Vec3> flatten_normal_candidates(const GaussianKernel& kernel) {
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (kernel.scales[a] < kernel.scales[axis]) axis = a;
  const Vec3 n = kernel.rotation_matrix().col(axis).normalized();
  return {n, -n};
}

std::vector<Vec3> disambiguate_normals(std::span<const GaussianKernel> kernels,
                                       std::span<const Camera> cameras) {
  if (cameras.empty()) throw ConfigError("disambiguate_normals: at least one camera required");
  std::vector<Vec3> centers;
  for (const auto& c : cameras) centers.push_back(c.center());
  std::vector<Vec3> out(kernels.size());
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const Vec3 n = flatten_normal_candidates(kernels[i]).first;
    int plus = 0, minus = 0;
    for (const auto& c : centers) {
      const double d = n.dot(kernels[i].center - c);
      if (d < 0.0) ++plus;
      else if (d > 0.0) ++minus;
    }
    bool take_plus = plus > minus;
    if (plus == minus) take_plus = n.dot(kernels[i].center - centers.front()) <= 0.0;
    out[i] = take_plus ? n : Vec3(-n);
  }
  return out;
}

}  // namespace dgs
