#include "dgs/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "dgs/carve.hpp"
#include "dgs/config.hpp"
#include "dgs/ply.hpp"

namespace dgs {
namespace {

GaussianKernel disc(const Vec3& center, const Vec3& normal, double spacing, double opacity,
                    const Vec3& rgb, int label) {
  GaussianKernel k;
  k.center = center;
  k.opacity = opacity;
  k.rotation = Quat::FromTwoVectors(Vec3::UnitZ(), normal.normalized());
  k.rotation.normalize();
  const double s = 0.6 * spacing;
  k.scales = Vec3(s, s, 0.05 * s);
  const Vec3 dc = rgb_to_dc(rgb);
  for (int c = 0; c < kShChannels; ++c) k.sh[c][0] = dc[c];
  k.label = label;
  return k;
}

// Fibonacci lattice on the full sphere.
std::vector<Vec3> fibonacci_sphere(const Vec3& center, double radius, double spacing) {
  const double area = 4.0 * std::numbers::pi * radius * radius;
  const int n = std::max(16, static_cast<int>(std::lround(area / (spacing * spacing))));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    pts.push_back(center + radius * Vec3(r * std::cos(phi), r * std::sin(phi), z));
  }
  return pts;
}

// Grid samples on the rectangle origin + [0, a] u + [0, b] v, inset by half a step.
template <class Fn>
void face_grid(const Vec3& origin, const Vec3& u, double a, const Vec3& v, double b, double spacing,
               Fn&& emit) {
  const int nu = std::max(1, static_cast<int>(std::lround(a / spacing)));
  const int nv = std::max(1, static_cast<int>(std::lround(b / spacing)));
  for (int j = 0; j < nv; ++j)
    for (int i = 0; i < nu; ++i)
      emit(origin + (i + 0.5) * (a / nu) * u + (j + 0.5) * (b / nv) * v);
}

}  // namespace

std::vector<Vec3> SphereOnSlab::surface_samples(double spacing) const {
  std::vector<Vec3> out;
  for (const Vec3& p : fibonacci_sphere(sphere_center, sphere_radius, spacing))
    if (p.z() > slab_top) out.push_back(p);
  return out;
}

SplatScene SphereOnSlab::make_scene() const {
  SplatScene scene;
  const double w = slab_half_width;
  const double dz = sphere_center.z() - slab_top;
  const double footprint2 =
      dz < sphere_radius ? sphere_radius * sphere_radius - dz * dz : -1.0;

  auto add_scene = [&](const Vec3& p, const Vec3& n, double spacing) {
    scene.kernels.push_back(disc(p, n, spacing, opacity, slab_rgb, 0));
  };
  face_grid(Vec3(-w, -w, slab_top), Vec3::UnitX(), 2 * w, Vec3::UnitY(), 2 * w, top_spacing,
            [&](const Vec3& p) {
              const Vec3 d = p - sphere_center;
              if (d.x() * d.x() + d.y() * d.y() < footprint2) return;
              add_scene(p, Vec3::UnitZ(), top_spacing);
            });
  const double h = slab_top - slab_bottom;
  face_grid(Vec3(-w, -w, slab_bottom), Vec3::UnitX(), 2 * w, Vec3::UnitY(), 2 * w, side_spacing,
            [&](const Vec3& p) { add_scene(p, -Vec3::UnitZ(), side_spacing); });
  face_grid(Vec3(-w, -w, slab_bottom), Vec3::UnitX(), 2 * w, Vec3::UnitZ(), h, side_spacing,
            [&](const Vec3& p) { add_scene(p, -Vec3::UnitY(), side_spacing); });
  face_grid(Vec3(-w, w, slab_bottom), Vec3::UnitX(), 2 * w, Vec3::UnitZ(), h, side_spacing,
            [&](const Vec3& p) { add_scene(p, Vec3::UnitY(), side_spacing); });
  face_grid(Vec3(-w, -w, slab_bottom), Vec3::UnitY(), 2 * w, Vec3::UnitZ(), h, side_spacing,
            [&](const Vec3& p) { add_scene(p, -Vec3::UnitX(), side_spacing); });
  face_grid(Vec3(w, -w, slab_bottom), Vec3::UnitY(), 2 * w, Vec3::UnitZ(), h, side_spacing,
            [&](const Vec3& p) { add_scene(p, Vec3::UnitX(), side_spacing); });

  for (const Vec3& p : surface_samples(sphere_spacing))
    scene.kernels.push_back(
        disc(p, p - sphere_center, sphere_spacing, opacity, sphere_rgb, 1));

  scene.cameras = make_cameras();
  return scene;
}

std::vector<Camera> SphereOnSlab::make_cameras() const {
  std::vector<Camera> cams;
  const Vec3 target(sphere_center.x(), sphere_center.y(), 0.5 * (slab_top + sphere_center.z()));
  for (int i = 0; i < views; ++i) {
    const double az = 2.0 * std::numbers::pi * i / views;
    const double el = (i % 2 == 0 ? 25.0 : 50.0) * std::numbers::pi / 180.0;
    const Vec3 eye = target + camera_distance * Vec3(std::cos(el) * std::cos(az),
                                                     std::cos(el) * std::sin(az), std::sin(el));
    cams.push_back(Camera::look_at(eye, target, Vec3::UnitZ(), focal, image_size, image_size));
  }
  return cams;
}

std::filesystem::path write_sphere_on_slab_case(const std::filesystem::path& dir,
                                                const SphereOnSlab& s, const Vec3& dv) {
  std::filesystem::create_directories(dir);
  const SplatScene scene = s.make_scene();
  save_ply(scene, dir / "scene.ply");
  save_cameras(scene.cameras, dir / "cameras.json");

  using nlohmann::json;
  json cfg;
  cfg["input"] = {{"splats", "scene.ply"}, {"cameras", "cameras.json"}, {"object_label", 1}};
  cfg["output_dir"] = "out";
  cfg["seed"] = 0;
  cfg["poisson"] = {{"scene_dims", 64}, {"object_dims", 48}, {"padding", 0.25}};
  cfg["tsdf"] = {{"resolution", 64}, {"truncation_cells", 4.0}, {"min_weight", 2.0}};
  cfg["crop_scale"] = 1.2;
  cfg["carve"] = {{"max_iters", 300}, {"cull_every", 50}};
  cfg["materials"] = json::array(
      {{{"name", "bear_collisions"}, {"model", "fixed_corotated"}, {"E", 3e6}, {"nu", 0.3},
        {"density", 1000.0}}});
  cfg["simulation"] = {{"frames", 4},        {"frame_dt", 1.0 / 24.0},
                       {"dt", 4e-4},         {"gravity", {0.0, 0.0, -9.8}},
                       {"align_gravity", true}, {"domain_margin", 0.5}};
  cfg["impulses"] = json::array(
      {{{"frame", 0}, {"region", "all"}, {"dv", {dv.x(), dv.y(), dv.z()}}}});
  cfg["render"] = {{"cameras", {0}}, {"background", {0.0, 0.0, 0.0}}};

  const std::filesystem::path path = dir / "config.json";
  std::ofstream out(path);
  if (!out) throw ConfigError("synth: cannot write " + path.string());
  out << cfg.dump(2) << '\n';
  return path;
}

}  // namespace dgs
