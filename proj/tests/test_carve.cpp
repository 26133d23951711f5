#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <sstream>

#include "dgs/carve.hpp"
#include "dgs/sh.hpp"
#include "test_util.hpp"

using namespace dgs;
using testutil::Rng;

namespace {

constexpr double kC0 = 0.28209479177387814;  // 1 / (2 sqrt(pi))

// Camera at the origin looking down +z.
Camera forward_camera(int w, int h, double f) {
  Camera c;
  c.intrinsics << f, 0, 0.5 * (w - 1), 0, f, 0.5 * (h - 1), 0, 0, 1;
  c.width = w;
  c.height = h;
  return c;
}

// Pixels whose ray meets the ball of radius r at the origin.
RasterImage ball_mask(const Camera& cam, double r) {
  RasterImage m(cam.width, cam.height, 1);
  const Vec3 o = cam.center();
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Vec3 d = cam.ray_direction(x, y).normalized();
      const double b = o.dot(d);
      m.at(x, y) = (o.squaredNorm() - b * b <= r * r) ? 1.0 : 0.0;
    }
  return m;
}

std::vector<CarveView> ring_views(int n, double r, int size = 48) {
  std::vector<CarveView> views;
  for (int i = 0; i < n; ++i) {
    const double az = 2 * std::numbers::pi * i / n, el = (i % 2 ? 0.4 : -0.3);
    const Vec3 eye = 4.0 * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    CarveView v{Camera::look_at(eye, Vec3::Zero(), Vec3::UnitZ(), 50, size, size), {}};
    v.mask = ball_mask(v.camera, r);
    views.push_back(std::move(v));
  }
  return views;
}

double fd_loss(std::vector<GaussianKernel> ks, std::size_t i, double sigma, const Camera& cam,
               const RasterImage& mask) {
  ks[i].opacity = sigma;
  return unce_loss(render_opacity_silhouette(ks, cam), mask);
}

}  // namespace

TEST_CASE("isometric initialization") {
  const std::vector<Vec3> pts{Vec3::Zero(), Vec3(1, 2, 3), Vec3(-1, 0, 4)};
  const auto ks = isometric_init(pts, 1.0);
  REQUIRE(ks.size() == pts.size());
  for (std::size_t i = 0; i < ks.size(); ++i) {
    CHECK(ks[i].scales[0] == doctest::Approx(0.6203504908994).epsilon(1e-12));
    CHECK(ks[i].scales[0] == ks[i].scales[1]);
    CHECK(ks[i].scales[1] == ks[i].scales[2]);
    CHECK(ks[i].opacity == 0.1);
    CHECK(ks[i].center == pts[i]);
    CHECK(ks[i].rotation.coeffs() == Quat::Identity().coeffs());
  }
  // Sphere of that radius has the cell's volume.
  const double s = isometric_init(pts, 0.25)[0].scales[0];
  CHECK(4.0 / 3.0 * std::numbers::pi * s * s * s == doctest::Approx(0.25 * 0.25 * 0.25));
  CHECK(isometric_init(std::vector<Vec3>{}, 1.0).empty());
  CHECK_THROWS_AS(isometric_init(pts, 0.0), ConfigError);
}

TEST_CASE("rgb_to_dc renders back to the color") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Vec3 rgb = rng.vec(0, 1);
    const Vec3 dc = rgb_to_dc(rgb);
    CHECK((kC0 * dc + Vec3::Constant(0.5) - rgb).norm() < 1e-14);
  }
}

TEST_CASE("interior SH interpolation") {
  OrientedPointSet proxy;
  Rng rng(9);
  for (int i = 0; i < 60; ++i) {
    proxy.positions.push_back(rng.dir());
    proxy.normals.push_back(proxy.positions.back());
    proxy.colors.push_back(Vec3(0.8, 0.1, 0.3));
  }
  std::vector<Vec3> interior;
  for (int i = 0; i < 30; ++i) interior.push_back(0.7 * rng.vec());
  const auto sh = interpolate_interior_sh(interior, proxy);
  const Vec3 dc = rgb_to_dc(Vec3(0.8, 0.1, 0.3));
  for (const ShColor& c : sh)
    for (int ch = 0; ch < 3; ++ch) {
      CHECK(c[ch][0] == doctest::Approx(dc[ch]).epsilon(1e-12));
      for (int j = 1; j < 16; ++j) CHECK(c[ch][j] == 0.0);
    }

  // One proxy point at distance d0 << h and fourteen at unit distance.
  OrientedPointSet two;
  const double d0 = 0.01;
  two.positions.push_back(Vec3(d0, 0, 0));
  two.colors.push_back(Vec3(1, 1, 1));
  for (int i = 0; i < 14; ++i) {
    const double a = 2 * std::numbers::pi * i / 14;
    two.positions.push_back(Vec3(0, std::cos(a), std::sin(a)));
    two.colors.push_back(Vec3(0, 0, 0));
  }
  two.normals.assign(two.positions.size(), Vec3::UnitZ());
  const auto one = interpolate_interior_sh(std::vector<Vec3>{Vec3::Zero()}, two);
  const double h = (d0 + 14.0) / 15.0;
  const double w0 = std::exp(-d0 * d0 / (2 * h * h)), w1 = std::exp(-1.0 / (2 * h * h));
  const double share = w0 / (w0 + 14 * w1);
  CHECK(d0 < h / 10);
  CHECK(kC0 * one[0][0][0] + 0.5 == doctest::Approx(share).epsilon(1e-12));

  OrientedPointSet bare = proxy;
  bare.colors.clear();
  CHECK_THROWS_AS(interpolate_interior_sh(interior, bare), ConfigError);
  CHECK_THROWS_AS(interpolate_interior_sh(interior, OrientedPointSet{}), ConfigError);
}

TEST_CASE("unce loss values") {
  RasterImage a(4, 3, 1, 0.3), ones(4, 3, 1, 1.0), zeros(4, 3, 1, 0.0);
  CHECK(unce_loss(a, ones) == 0.0);
  CHECK(unce_loss(RasterImage(4, 3, 1, 0.0), zeros) == 0.0);
  CHECK(unce_loss(RasterImage(1, 1, 1, 0.5), RasterImage(1, 1, 1, 0.0)) ==
        doctest::Approx(0.6931471805599453).epsilon(1e-14));
  CHECK(std::isfinite(unce_loss(RasterImage(1, 1, 1, 1.0), RasterImage(1, 1, 1, 0.0))));
  CHECK(unce_loss(RasterImage(1, 1, 1, 1.0), RasterImage(1, 1, 1, 0.0)) ==
        doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
  CHECK_THROWS_AS(unce_loss(a, RasterImage(3, 3, 1)), ConfigError);
}

TEST_CASE("single-kernel opacity gradient") {
  const Camera cam = forward_camera(1, 1, 10.0);
  GaussianKernel g;
  g.center = Vec3(0, 0, 2);
  g.scales = Vec3::Constant(0.5);
  g.opacity = 0.5;
  const std::vector<GaussianKernel> ks{g};
  const RasterImage neg(1, 1, 1, 0.0);
  CHECK(render_opacity_silhouette(ks, cam).at(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(unce_gradient_opacity(ks, cam, neg)[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(unce_gradient_opacity(ks, cam, RasterImage(1, 1, 1, 1.0))[0] == 0.0);

  // The per-pixel value is averaged over the image.
  const Camera wide = forward_camera(3, 1, 10.0);
  GaussianKernel tiny = g;
  tiny.scales = Vec3::Constant(1e-3);
  const double var = 0.3 + std::pow(10.0 * 1e-3 / 2.0, 2);  // floor plus projected variance, px^2
  const double w_side = std::exp(-0.5 / var);
  const RasterImage neg3(3, 1, 1, 0.0);
  CHECK(unce_gradient_opacity(std::vector<GaussianKernel>{tiny}, wide, neg3)[0] ==
        doctest::Approx((2.0 + 2 * w_side / (1 - 0.5 * w_side)) / 3).epsilon(1e-9));
}

TEST_CASE("opacity gradient matches finite differences") {
  Rng rng(21);
  const Camera cam = forward_camera(32, 32, 30.0);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<GaussianKernel> ks(20);
    for (auto& k : ks) {
      k.center = Vec3(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(2, 4));
      k.scales = Vec3(rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3));
      k.rotation = rng.quat();
      k.opacity = rng.uniform(0.05, 0.6);
    }
    RasterImage mask(32, 32, 1);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) mask.at(x, y) = (x + y < 30) ? 1.0 : 0.0;
    const auto grad = unce_gradient_opacity(ks, cam, mask);
    const double h = 1e-5;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const double fd = (fd_loss(ks, i, ks[i].opacity + h, cam, mask) -
                         fd_loss(ks, i, ks[i].opacity - h, cam, mask)) / (2 * h);
      CHECK(std::abs(grad[i] - fd) <= 1e-5 * std::max(std::abs(fd), 1e-6));
    }
  }
}

TEST_CASE("carve config validation") {
  CarveConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.unce_weight == 1e-4);
  CHECK(c.cull_threshold == 0.05);
  CHECK(c.cull_every == 100);
  CHECK(c.max_iters == 3000);
  c.cull_threshold = 0.2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.step = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.max_iters = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("carve preconditions") {
  auto views = ring_views(2, 1.0);
  const auto ks = isometric_init(std::vector<Vec3>{Vec3::Zero()}, 0.1);
  CHECK_THROWS_AS(carve(ks, views), ConfigError);
  views = ring_views(3, 1.0);
  views[1].mask = RasterImage(5, 5, 1);
  CHECK_THROWS_AS(carve(ks, views), ConfigError);

  // Everything outside the silhouettes culls away.
  const auto far = isometric_init(std::vector<Vec3>{Vec3(0, 0, 1.6)}, 0.3);
  CarveConfig cfg;
  cfg.max_iters = 60;
  cfg.cull_every = 20;
  CHECK_THROWS_AS(carve(far, ring_views(3, 0.3), cfg), NumericalError);
}

TEST_CASE("all-ones masks change nothing") {
  auto views = ring_views(4, 1.0);
  for (auto& v : views) v.mask = RasterImage(v.camera.width, v.camera.height, 1, 1.0);
  Rng rng(4);
  std::vector<Vec3> pts;
  for (int i = 0; i < 200; ++i) pts.push_back(rng.vec(-1.5, 1.5));
  const auto ks = isometric_init(pts, 0.1);
  CarveConfig cfg;
  cfg.max_iters = 40;
  cfg.cull_every = 10;
  const CarveResult r = carve(ks, views, cfg);
  REQUIRE(r.kernels.size() == ks.size());
  for (std::size_t i = 0; i < ks.size(); ++i) CHECK(r.kernels[i].opacity == ks[i].opacity);
  for (double l : r.validation_loss) CHECK(l == 0.0);
  // A zero validation loss ends the loop at the first cull.
  CHECK(r.iterations == 10);
}

TEST_CASE("views without masks are skipped") {
  CarveConfig cfg;
  cfg.max_iters = 60;
  cfg.cull_every = 30;
  auto narrow = ring_views(3, 0.3);
  narrow[0].mask = RasterImage();
  narrow[2].mask = RasterImage();
  const CarveResult r = carve(isometric_init(std::vector<Vec3>{Vec3::Zero()}, 0.2), narrow, cfg);
  CHECK(r.skipped > 0);
  CHECK(r.iterations + r.skipped == 60);
}

TEST_CASE("carving a padded ball") {
  const double radius = 0.8, cell = 0.12;
  std::vector<Vec3> pts;
  for (double x = -1.2; x <= 1.2; x += cell)
    for (double y = -1.2; y <= 1.2; y += cell)
      for (double z = -1.2; z <= 1.2; z += cell)
        if (Vec3(x, y, z).norm() < 1.15) pts.push_back(Vec3(x, y, z));
  const auto ks = isometric_init(pts, cell);
  const double s = ks[0].scales[0];
  const auto views = ring_views(12, radius);
  CarveConfig cfg;
  cfg.max_iters = 400;
  cfg.cull_every = 50;
  cfg.seed = 5;
  std::ostringstream log;
  const CarveResult r = carve(ks, views, cfg, &log);

  // Culling soundness: kernels whose footprint stays inside every silhouette.
  std::size_t deep = 0, deep_kept = 0;
  for (const auto& k : r.kernels)
    if (k.center.norm() + 3 * s < radius) {
      CHECK(k.opacity >= 0.1);
      ++deep_kept;
    }
  for (const auto& k : ks) deep += k.center.norm() + 3 * s < radius;
  CHECK(deep_kept == deep);

  std::size_t outside = 0, outside_kept = 0;
  for (const auto& k : ks) outside += k.center.norm() > radius + 2 * s;
  for (const auto& k : r.kernels) outside_kept += k.center.norm() > radius + 2 * s;
  MESSAGE("outside kept " << outside_kept << " of " << outside);
  CHECK(outside_kept < outside / 2);

  for (std::size_t e = 1; e < r.validation_loss.size(); ++e)
    CHECK(r.validation_loss[e] <= r.validation_loss[e - 1] + 1e-6);
  CHECK(r.validation_loss.back() < r.validation_loss.front());

  std::string header;
  std::istringstream in(log.str());
  std::getline(in, header);
  CHECK(header == "iteration,view,loss,kernels");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  CHECK(rows == r.iterations);

  const CarveResult again = carve(ks, views, cfg);
  REQUIRE(again.kernels.size() == r.kernels.size());
  for (std::size_t i = 0; i < r.kernels.size(); ++i) CHECK(again.kernels[i].opacity == r.kernels[i].opacity);
}
