#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dgs/types.hpp"

namespace dgs {

using GridDims = std::array<int, 3>;

/// Uniform cell-centered scalar grid. Cell (i, j, k) covers
/// origin + [i, i+1) * cell along x (likewise y, z); values are stored with
/// x varying fastest.
struct IndicatorGrid {
  Vec3 origin = Vec3::Zero();
  double cell = 1.0;
  GridDims dims{0, 0, 0};
  std::vector<double> values;

  IndicatorGrid() = default;
  IndicatorGrid(const Vec3& origin_, double cell_, const GridDims& dims_, double fill = 0.0);

  std::size_t size() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  double& at(int i, int j, int k) { return values[index(i, j, k)]; }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  bool inside(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  }
  Vec3 cell_center(int i, int j, int k) const {
    return origin + cell * Vec3(i + 0.5, j + 0.5, k + 0.5);
  }
  Vec3 extent_max() const { return origin + cell * Vec3(dims[0], dims[1], dims[2]); }

  /// Trilinear interpolation between cell centers; cells outside the grid
  /// read as 0.
  double sample(const Vec3& p) const;
  /// Central-difference gradient in world units (one-sided at the border).
  Vec3 gradient(int i, int j, int k) const;
};

struct OrientedPointSet {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
  std::vector<double> areas;  // optional; estimated from local density when empty
  std::vector<Vec3> colors;   // optional payload carried by proxy points

  std::size_t size() const { return positions.size(); }
  /// Throws ConfigError on length mismatch or non-unit normals.
  void validate() const;
};

struct PoissonOptions {
  double screen_weight = 4.0;
  double tolerance = 1e-6;  // relative residual
  int max_iterations = 2000;
  std::size_t density_neighbors = 8;
};

struct PoissonStats {
  int iterations = 0;
  double relative_residual = 0.0;
};

/// Screened Poisson indicator of an oriented sample set on a dims grid that
/// covers the sample bounding box grown by `padding` (a fraction of the
/// largest extent) on every side. Normalized so boundary cells average 0 and
/// samples average 0.5 for outward normals; the scale keeps the sign of the
/// raw solve, so inward normals invert inside and outside.
IndicatorGrid build_indicator(const OrientedPointSet& points, const GridDims& dims,
                              double padding = 0.25, const PoissonOptions& opts = {},
                              PoissonStats* stats = nullptr);

/// Same solve on a caller-provided frame.
IndicatorGrid build_indicator_in(const OrientedPointSet& points, const Vec3& origin, double cell,
                                 const GridDims& dims, const PoissonOptions& opts = {},
                                 PoissonStats* stats = nullptr);

/// Resamples `source` onto the frame of `target` (values of `target` are
/// ignored). Throws ConfigError if the frames do not overlap.
IndicatorGrid remap_grid(const IndicatorGrid& source, const IndicatorGrid& target);

struct CurvatureResult {
  std::vector<double> mean_curvature;
  std::vector<char> rank_deficient;
};

/// Quadric-fit mean curvature over the k nearest neighbors in the local PCA
/// frame. Positive for convex surfaces when `normals` point outward; without
/// normals the PCA normal is oriented so its largest component is positive.
CurvatureResult mean_curvature(std::span<const Vec3> points, std::size_t k = 16,
                               std::span<const Vec3> normals = {});

struct ConflictOptions {
  std::optional<double> tau;  // default: 3 x median |H| over non-intersection cells
  int iterations = 10;
  std::size_t curvature_neighbors = 16;
  int connectivity = 6;  // 6 or 26
};

struct ConflictReport {
  double tau = 0.0;
  std::size_t scene_cells_lowered = 0;
  std::size_t object_cells_lowered = 0;
  std::size_t remaining_conflicts = 0;
};

/// Scene-priority repair of a co-registered (scene, object) indicator pair.
/// Only ever lowers values, to 0.49.
std::pair<IndicatorGrid, IndicatorGrid> resolve_conflicts(const IndicatorGrid& scene,
                                                          const IndicatorGrid& object,
                                                          const ConflictOptions& opts = {},
                                                          ConflictReport* report = nullptr);

/// Object-interior cells whose own cell or a neighbor is scene-interior.
std::size_t count_conflicts(const IndicatorGrid& scene, const IndicatorGrid& object,
                            int connectivity = 6);

/// World-space centers of all cells with X > 0.5.
std::vector<Vec3> extract_interior_points(const IndicatorGrid& grid);

}  // namespace dgs
