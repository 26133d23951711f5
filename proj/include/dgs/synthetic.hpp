#pragma once

#include <filesystem>
#include <vector>

#include "dgs/types.hpp"

namespace dgs {

/// Sphere resting in a slab. Scene kernels (label 0) cover the slab surface
/// except the footprint hidden by the sphere; object kernels (label 1) cover
/// the sphere above the slab top. All kernels are flat discs whose shortest
/// axis is the surface normal.
struct SphereOnSlab {
  Vec3 sphere_center = Vec3(0.0, 0.0, 0.45);
  double sphere_radius = 0.5;
  double slab_half_width = 1.5;
  double slab_top = 0.0;
  double slab_bottom = -0.3;
  double sphere_spacing = 0.035;
  double top_spacing = 0.05;
  double side_spacing = 0.1;
  double opacity = 0.95;
  Vec3 sphere_rgb = Vec3(0.85, 0.25, 0.2);
  Vec3 slab_rgb = Vec3(0.55, 0.55, 0.5);

  int views = 20;
  int image_size = 96;
  double focal = 110.0;
  double camera_distance = 3.6;

  SplatScene make_scene() const;
  std::vector<Camera> make_cameras() const;
  /// Points on the sphere surface above the slab top, roughly `spacing` apart.
  std::vector<Vec3> surface_samples(double spacing) const;
};

/// Writes scene.ply, cameras.json and config.json (a reduced-cost pipeline
/// configuration with an impulse of dv at frame 0) into `dir`. Returns the
/// config path.
std::filesystem::path write_sphere_on_slab_case(const std::filesystem::path& dir,
                                                const SphereOnSlab& s = {},
                                                const Vec3& dv = Vec3(1.0, 0.0, 0.0));

}  // namespace dgs
