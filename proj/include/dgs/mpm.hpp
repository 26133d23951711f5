#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dgs/types.hpp"

namespace dgs {

enum class MaterialModel { FixedCorotated, DruckerPrager };

struct Material {
  MaterialModel model = MaterialModel::FixedCorotated;
  double youngs = 3e6;
  double poisson = 0.3;
  double density = 1000.0;
  double friction_deg = 25.0;  // Drucker-Prager only

  double mu() const { return youngs / (2.0 * (1.0 + poisson)); }
  double lambda() const { return youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson)); }
  /// Throws ConfigError unless E > 0, 0 <= nu < 0.5, density > 0 and the
  /// friction angle lies in (0, 90) degrees.
  void validate() const;
};

struct Particle {
  Vec3 x = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double mass = 1.0;
  double volume = 1.0;
  Mat3 F = Mat3::Identity();
  Mat3 C = Mat3::Zero();
  int material = 0;
  std::int64_t kernel = -1;  // bound Gaussian, -1 if none

  /// Throws ConfigError for non-positive mass or volume.
  void validate() const;
};

/// Nodes sit at origin + h * (i, j, k), x varying fastest.
struct MpmGrid {
  Vec3 origin = Vec3::Zero();
  double h = 1.0;
  std::array<int, 3> dims{0, 0, 0};
  std::vector<double> mass;
  std::vector<Vec3> momentum;
  std::vector<Vec3> velocity;
  std::vector<char> sticky;

  MpmGrid() = default;
  MpmGrid(const Vec3& origin, double h, const std::array<int, 3>& dims);

  std::size_t size() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
  }
  Vec3 node(int i, int j, int k) const { return origin + h * Vec3(i, j, k); }
  void clear();
};

inline constexpr int kBoundaryBand = 2;

/// Particle-to-grid transfer. Particles whose stencil leaves the grid are
/// clamped to the border stencil; the number of such particles is returned.
std::size_t p2g(std::span<const Particle> particles, std::span<const Material> materials,
                MpmGrid& grid, double dt);

/// Forward Euler on the grid with sticky and domain-boundary nodes zeroed.
void grid_update(MpmGrid& grid, double dt, const Vec3& gravity, bool boundaries = true);

/// Grid-to-particle transfer, advection, deformation update and plasticity.
/// Throws NumericalError on a non-finite particle velocity.
void g2p(std::span<Particle> particles, std::span<const Material> materials, const MpmGrid& grid,
         double dt);

/// Rotation factor of the polar decomposition F = R S (det F > 0).
Mat3 polar_rotation(const Mat3& F);

double fixed_corotated_energy(const Mat3& F, double mu, double lambda);
Mat3 fixed_corotated_pk1(const Mat3& F, double mu, double lambda);

/// Hencky (log-strain) energy used with Drucker-Prager plasticity.
double hencky_energy(const Mat3& F, double mu, double lambda);
Mat3 hencky_pk1(const Mat3& F, double mu, double lambda);

/// Cohesionless sand projection of F onto the Drucker-Prager cone in
/// log-strain space.
Mat3 drucker_prager_return_map(const Mat3& F, double friction_deg, double mu, double lambda);
/// Yield function value of an elastic F (<= 0 inside the cone).
double drucker_prager_yield(const Mat3& F, double friction_deg, double mu, double lambda);

/// Marks every node whose dual cell holds at least one point. Returns the
/// number of newly marked nodes.
std::size_t mark_sticky_nodes(MpmGrid& grid, std::span<const Vec3> points);

struct ImpulseRegion {
  enum class Shape { Sphere, Box } shape = Shape::Sphere;
  Vec3 center = Vec3::Zero();
  double radius = 0.0;                  // sphere
  Vec3 half_extent = Vec3::Zero();      // box
  bool contains(const Vec3& p) const;
};

/// Adds dv to the velocity of every particle inside the region; returns the count.
std::size_t apply_impulse(std::span<Particle> particles, const ImpulseRegion& region,
                          const Vec3& dv);

/// Moves rest-state kernels with their particles: center from x, covariance
/// F Sigma F^T refactored so axes keep their identity where possible, SH
/// rotated by the polar rotation of F.
std::vector<GaussianKernel> advect_gaussians(std::span<const GaussianKernel> rest,
                                             std::span<const Particle> particles);

struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;  // normal . x = offset on the plane
  Vec3 centroid = Vec3::Zero();
  std::size_t inliers = 0;
  double signed_distance(const Vec3& p) const { return normal.dot(p) - offset; }
};

/// Best 3-point hypothesis by inlier count, refined by least squares on its
/// inliers, with the normal pointing toward the side holding fewer points.
Plane ransac_plane(std::span<const Vec3> points, int iterations, double inlier_tol,
                   std::uint64_t seed = 0);

/// Smallest rotation taking `n` to +z (180 degrees about x for n = -z).
Mat3 rotation_to_z(const Vec3& n);

/// Rotates kernels (centers about the plane centroid, frames and SH) and
/// cameras so the plane normal becomes +z.
SplatScene gravity_align(const SplatScene& scene, const Plane& plane);

struct MpmState {
  MpmGrid grid;
  std::vector<Particle> particles;
  std::vector<Material> materials;
  Vec3 gravity = Vec3::Zero();
  bool boundaries = true;
  std::size_t clamped = 0;  // running count of out-of-margin stencils
  std::uint64_t steps = 0;
};

/// Largest dt allowed by the CFL bound 0.3 h / max(|v| + sqrt(E / rho)).
double max_stable_dt(const MpmState& state);

/// One P2G / grid / G2P cycle. Throws NumericalError when dt breaks the CFL bound.
void step(MpmState& state, double dt);

struct MpmDiagnostics {
  double mass = 0.0;
  Vec3 momentum = Vec3::Zero();
  double kinetic = 0.0;
  double max_penetration = 0.0;  // below `floor_z`, in world units
};

MpmDiagnostics diagnose(const MpmState& state, std::optional<double> floor_z = std::nullopt);

}  // namespace dgs
