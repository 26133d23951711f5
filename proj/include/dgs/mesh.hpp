#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dgs/poisson.hpp"
#include "dgs/types.hpp"

namespace dgs {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> normals;  // per triangle, filled by update_normals()

  void update_normals();
  double area() const;
  /// V - E + F over referenced vertices.
  long euler_characteristic() const;
  /// True when every undirected edge is shared by exactly two triangles.
  bool is_closed() const;
  /// Throws ConfigError on out-of-range indices.
  void validate() const;
};

/// Isosurface of the cell-centered grid; cells beyond the border read as 0,
/// so a field that is inside at the border still yields a closed surface.
/// Triangles wind counter-clockwise around -grad X.
TriangleMesh marching_cubes(const IndicatorGrid& grid, double iso = 0.5);

/// Triangles whose centroid lies in the bounding box of `points` scaled by
/// `scale` about its center. Unused vertices are dropped.
TriangleMesh crop_mesh_patch(const TriangleMesh& mesh, std::span<const Vec3> points,
                             double scale = 1.2);

struct BoundKernels {
  std::vector<GaussianKernel> kernels;
  std::size_t skipped = 0;  // degenerate triangles
};

inline constexpr double kFlatScale = 1e-8;

/// One flat kernel per triangle: centered at the centroid, first axis along
/// the triangle normal with scale kFlatScale, second toward the second vertex.
/// SH is zero and opacity 1.
BoundKernels mesh_to_gaussians(const TriangleMesh& mesh);

void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_stl(const std::filesystem::path& path);
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_obj(const std::filesystem::path& path);

}  // namespace dgs
