#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cmath>
#include <numbers>
#include <optional>

#include "dgs/kdtree.hpp"
#include "dgs/tsdf.hpp"
#include "test_util.hpp"

using namespace dgs;

namespace {

struct Views {
  std::vector<Camera> cameras;
  std::vector<RasterImage> depth, mask, color;
};

// Ray-cast depth of an analytic surface; `hit` returns the ray parameter for
// directions with unit camera-z, which is the depth itself.
Views cast(const std::vector<Camera>& cams,
           const std::function<std::optional<double>(const Vec3&, const Vec3&)>& hit,
           const Vec3& rgb = Vec3(0.2, 0.4, 0.6)) {
  Views v;
  v.cameras = cams;
  for (const Camera& c : cams) {
    RasterImage d(c.width, c.height, 2), m(c.width, c.height, 1), col(c.width, c.height, 3);
    for (int y = 0; y < c.height; ++y)
      for (int x = 0; x < c.width; ++x) {
        const auto t = hit(c.center(), c.ray_direction(x, y));
        if (!t) continue;
        d.at(x, y, 0) = *t;
        d.at(x, y, 1) = 1.0;
        m.at(x, y) = 1.0;
        for (int ch = 0; ch < 3; ++ch) col.at(x, y, ch) = rgb[ch];
      }
    v.depth.push_back(std::move(d));
    v.mask.push_back(std::move(m));
    v.color.push_back(std::move(col));
  }
  return v;
}

std::optional<double> hit_sphere(const Vec3& o, const Vec3& dir, double r) {
  const double a = dir.squaredNorm(), b = 2 * o.dot(dir), c = o.squaredNorm() - r * r;
  const double disc = b * b - 4 * a * c;
  if (disc < 0) return std::nullopt;
  const double t = (-b - std::sqrt(disc)) / (2 * a);
  if (t <= 0) return std::nullopt;
  return t;
}

std::vector<Camera> orbit(int n, double dist, int size, double focal) {
  std::vector<Camera> cams;
  for (int i = 0; i < n; ++i) {
    const double az = 2 * std::numbers::pi * i / n;
    const double el = (i % 2 ? 1 : -1) * (0.25 + 0.35 * (i % 3) / 2.0);
    const Vec3 eye = dist * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    cams.push_back(Camera::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), focal, size, size));
  }
  return cams;
}

TsdfVolume sphere_volume(int res) {
  const double cell = 3.0 / res;
  return TsdfVolume(Vec3::Constant(-1.5), cell, {res, res, res});
}

double radial_rms(const OrientedPointSet& p) {
  double s = 0.0;
  for (const Vec3& x : p.positions) s += std::pow(x.norm() - 1.0, 2);
  return std::sqrt(s / p.size());
}

// Two-sided RMS against the unit sphere: accuracy of the points plus
// completeness of the sphere as seen from them.
double surface_rms(const OrientedPointSet& p) {
  const KdTree tree(p.positions);
  double s = 0.0;
  const int n = 4000;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n, r = std::sqrt(1.0 - z * z);
    const Vec3 q(r * std::cos(golden * i), r * std::sin(golden * i), z);
    s += tree.nearest(q).dist2;
  }
  const double acc = radial_rms(p);
  return std::sqrt(0.5 * (acc * acc + s / n));
}

// Camera on +z looking down at the plane z = z0.
Views plane_views(double z0, int n_views = 1) {
  std::vector<Camera> cams;
  for (int i = 0; i < n_views; ++i)
    cams.push_back(Camera::look_at(Vec3(0.02 * i, 0, 3), Vec3(0.02 * i, 0, 0), Vec3::UnitY(), 80, 64, 64));
  return cast(cams, [&](const Vec3& o, const Vec3& d) -> std::optional<double> {
    if (d.z() >= 0) return std::nullopt;
    const double t = (z0 - o.z()) / d.z();
    const Vec3 p = o + t * d;
    if (std::abs(p.x()) > 0.9 || std::abs(p.y()) > 0.9) return std::nullopt;
    // Depth along the optical axis (-z) equals the height difference.
    return o.z() - z0;
  });
}

}  // namespace

TEST_CASE("volume construction checks") {
  CHECK_THROWS_AS(TsdfVolume(Vec3::Zero(), 0.0, {4, 4, 4}), ConfigError);
  CHECK_THROWS_AS(TsdfVolume(Vec3::Zero(), 0.1, {0, 4, 4}), ConfigError);
  CHECK_THROWS_AS(TsdfVolume(Vec3::Zero(), 0.1, {4, 4, 4}, 0.05), ConfigError);
  const TsdfVolume v(Vec3::Zero(), 0.1, {4, 4, 4});
  CHECK(v.truncation == doctest::Approx(0.4));
  CHECK(v.size() == 64);
}

TEST_CASE("empty mask leaves the volume unchanged") {
  const Views v = plane_views(0.0);
  TsdfVolume vol(Vec3::Constant(-1.0), 0.05, {40, 40, 40});
  const TsdfVolume before = vol;
  const RasterImage none(64, 64, 1, 0.0);
  integrate_depth(vol, v.depth[0], none, v.cameras[0], &v.color[0]);
  CHECK(vol.sdf == before.sdf);
  CHECK(vol.weight == before.weight);
  CHECK(extract_proxy_points(vol).size() == 0);
}

TEST_CASE("camera behind the volume is a no-op") {
  const Views v = plane_views(0.0);
  TsdfVolume vol(Vec3(-1, -1, 4), 0.05, {40, 40, 10});
  integrate_depth(vol, v.depth[0], v.mask[0], v.cameras[0]);
  for (double w : vol.weight) CHECK(w == 0.0);
}

TEST_CASE("plane fusion") {
  const double z0 = 0.013;
  const Views v = plane_views(z0, 3);
  TsdfVolume vol(Vec3::Constant(-1.0), 0.05, {40, 40, 40});
  for (int i = 0; i < 3; ++i) integrate_depth(vol, v.depth[i], v.mask[i], v.cameras[i], &v.color[i]);
  const TsdfVolume fresh(Vec3::Constant(-1.0), 0.05, {40, 40, 40});
  for (std::size_t c = 0; c < vol.size(); ++c) {
    CHECK(std::abs(vol.sdf[c]) <= 1.0);
    if (vol.weight[c] == 0.0) CHECK(vol.sdf[c] == fresh.sdf[c]);
  }
  const OrientedPointSet p = extract_proxy_points(vol);
  REQUIRE(p.size() > 500);
  CHECK(p.colors.size() == p.size());
  const double cos2 = std::cos(2.0 * std::numbers::pi / 180.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(std::abs(p.positions[i].z() - z0) <= 0.5 * vol.cell);
    CHECK(p.normals[i].dot(Vec3::UnitZ()) >= cos2);
    CHECK((p.colors[i] - Vec3(0.2, 0.4, 0.6)).norm() < 1e-9);
  }
}

TEST_CASE("repeated integration is idempotent in sdf") {
  const Views v = plane_views(0.1);
  TsdfVolume once(Vec3::Constant(-1.0), 0.05, {40, 40, 40});
  integrate_depth(once, v.depth[0], v.mask[0], v.cameras[0]);
  TsdfVolume many = once;
  for (int n = 1; n < 4; ++n) {
    integrate_depth(many, v.depth[0], v.mask[0], v.cameras[0]);
    for (std::size_t c = 0; c < once.size(); ++c) {
      CHECK(many.sdf[c] == doctest::Approx(once.sdf[c]).epsilon(1e-12));
      CHECK(many.weight[c] == (n + 1) * once.weight[c]);
    }
  }
}

TEST_CASE("depth without a validity channel uses zero as invalid") {
  const Views v = plane_views(0.0);
  RasterImage single(64, 64, 1);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) single.at(x, y) = v.depth[0].at(x, y, 0);
  TsdfVolume a(Vec3::Constant(-1.0), 0.05, {40, 40, 40}), b = a;
  integrate_depth(a, v.depth[0], RasterImage(64, 64, 1, 1.0), v.cameras[0]);
  integrate_depth(b, single, RasterImage(64, 64, 1, 1.0), v.cameras[0]);
  CHECK(a.sdf == b.sdf);
  CHECK(a.weight == b.weight);
  CHECK_THROWS_AS(integrate_depth(a, RasterImage(32, 32, 1), v.mask[0], v.cameras[0]), ConfigError);
}

TEST_CASE("sphere from 20 orbiting views") {
  const auto t0 = std::chrono::steady_clock::now();
  const Views v = cast(orbit(20, 4.0, 128, 120), [](const Vec3& o, const Vec3& d) { return hit_sphere(o, d, 1.0); });
  TsdfVolume vol = sphere_volume(64);
  for (std::size_t i = 0; i < v.cameras.size(); ++i)
    integrate_depth(vol, v.depth[i], v.mask[i], v.cameras[i], &v.color[i]);
  const OrientedPointSet p = extract_proxy_points(vol);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  REQUIRE(p.size() > 1000);
  const double rms = radial_rms(p);
  MESSAGE("sphere proxy RMS in voxels: " << rms / vol.cell << ", " << secs << " s");
  CHECK(rms < vol.cell);
  CHECK(secs < 100.0);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p.normals[i].dot(p.positions[i].normalized()) > 0.9);
}

TEST_CASE("more views do not worsen the surface") {
  const Views v = cast(orbit(20, 4.0, 96, 90), [](const Vec3& o, const Vec3& d) { return hit_sphere(o, d, 1.0); });
  TsdfVolume vol = sphere_volume(48);
  ProxyOptions any;
  any.min_weight = 1.0;
  double prev = 1e9;
  std::size_t prev_count = 0;
  std::size_t added = 0;
  for (int target : {1, 5, 10, 20}) {
    for (; added < static_cast<std::size_t>(target); ++added)
      integrate_depth(vol, v.depth[added], v.mask[added], v.cameras[added]);
    const OrientedPointSet p = extract_proxy_points(vol, any);
    const double rms = surface_rms(p);
    CHECK(rms <= prev * 1.1);
    CHECK(p.size() >= prev_count);
    prev = rms;
    prev_count = p.size();
  }
}

TEST_CASE("weight threshold and component filtering") {
  const Views v = cast(orbit(4, 4.0, 64, 60), [](const Vec3& o, const Vec3& d) { return hit_sphere(o, d, 1.0); });
  TsdfVolume vol = sphere_volume(32);
  integrate_depth(vol, v.depth[0], v.mask[0], v.cameras[0]);
  CHECK(extract_proxy_points(vol).size() == 0);  // single view: every weight is 1
  ProxyOptions one;
  one.min_weight = 1.0;
  CHECK(extract_proxy_points(vol, one).size() > 0);

  // A far speck survives only without largest-component filtering.
  TsdfVolume two = sphere_volume(32);
  for (int i = 0; i < 4; ++i) integrate_depth(two, v.depth[i], v.mask[i], v.cameras[i]);
  const std::size_t base = extract_proxy_points(two).size();
  for (int dz = 0; dz < 2; ++dz) {
    two.sdf[two.index(1, 1, 1 + dz)] = 0.5 - dz;
    two.weight[two.index(1, 1, 1 + dz)] = 5.0;
  }
  CHECK(extract_proxy_points(two).size() == base);
  ProxyOptions all;
  all.largest_component = false;
  CHECK(extract_proxy_points(two, all).size() > base);
}

TEST_CASE("tsdf container round trip") {
  testutil::TempDir dir("tsdf");
  const Views v = plane_views(0.0);
  TsdfVolume vol(Vec3(-1.0, -1.0, -0.5), 0.05, {40, 40, 20});
  integrate_depth(vol, v.depth[0], v.mask[0], v.cameras[0], &v.color[0]);
  save_tsdf(vol, dir / "t.vol");
  const TsdfVolume back = load_tsdf(dir / "t.vol");
  CHECK(back.dims == vol.dims);
  CHECK(back.cell == vol.cell);
  CHECK(back.truncation == doctest::Approx(vol.truncation));
  CHECK(back.origin.isApprox(vol.origin));
  for (std::size_t c = 0; c < vol.size(); ++c) {
    CHECK(back.sdf[c] == doctest::Approx(vol.sdf[c]).epsilon(1e-6));
    CHECK(back.weight[c] == vol.weight[c]);
    CHECK((back.color[c] - vol.color[c]).norm() < 1e-6);
  }
  CHECK(load_tsdf(dir / "t.vol", 0.3).truncation == 0.3);
  CHECK_THROWS_AS(load_tsdf(dir / "missing.vol"), FormatError);
}
