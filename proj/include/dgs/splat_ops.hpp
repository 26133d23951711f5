#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dgs/types.hpp"

namespace dgs {

std::vector<Vec3> centers_of(std::span<const GaussianKernel> kernels);

struct SplitResult {
  std::vector<GaussianKernel> object;
  std::vector<GaussianKernel> scene;
};

/// Partitions kernels by segmentation label; order is preserved in both
/// halves. Throws ConfigError("unknown label ...") when no kernel carries
/// `click_label`.
SplitResult split_object(std::span<const GaussianKernel> kernels, int click_label);

struct CleanupOptions {
  std::size_t k = 8;
  /// Defaults to twice the median nearest-neighbor spacing of the object.
  std::optional<double> radius;
};

/// Median distance from each point to its nearest other point (0 for < 2 points).
double median_nn_spacing(std::span<const Vec3> points);

/// Drops scene kernels that sit within `radius` of any of their k nearest
/// object centers.
std::vector<GaussianKernel> knn_residual_cleanup(std::span<const GaussianKernel> scene,
                                                 std::span<const GaussianKernel> object,
                                                 const CleanupOptions& opts = {});

/// Label of the nearest kernel for every point; equidistant kernels resolve
/// to the lowest index.
std::vector<int> transfer_labels(std::span<const Vec3> points,
                                 std::span<const GaussianKernel> labeled);

/// The ± rotation-frame column of the smallest scale. Equal scales pick the
/// lowest axis.
std::pair<Vec3, Vec3> flatten_normal_candidates(const GaussianKernel& kernel);

/// Orients each kernel's shortest axis by majority vote over the cameras: a
/// camera votes for the candidate pointing back toward it. Vote ties pick the
/// candidate facing the first camera.
std::vector<Vec3> disambiguate_normals(std::span<const GaussianKernel> kernels,
                                       std::span<const Camera> cameras);

}  // namespace dgs
