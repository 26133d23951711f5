#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "dgs/grid_io.hpp"
#include "dgs/mesh.hpp"
#include "dgs/poisson.hpp"
#include "shapes.hpp"
#include "test_util.hpp"

using namespace dgs;
using testutil::Rng;

namespace {

const IndicatorGrid& unit_sphere_field() {
  static const IndicatorGrid g = build_indicator(testutil::sphere_samples(5000), {64, 64, 64});
  return g;
}

std::vector<Vec3> dense_sphere(double r = 1.0, const Vec3& c = Vec3::Zero()) {
  return testutil::sphere_samples(20000, c, r).positions;
}

// Smooth analytic indicator 0.5 - sdf / (4 cell), clamped to [0, 1].
IndicatorGrid analytic(const Vec3& origin, double cell, const GridDims& dims,
                       const std::function<double(const Vec3&)>& sdf) {
  IndicatorGrid g(origin, cell, dims);
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i)
        g.at(i, j, k) = std::clamp(0.5 - sdf(g.cell_center(i, j, k)) / (4 * cell), 0.0, 1.0);
  return g;
}

}  // namespace

TEST_CASE("oriented point set validation") {
  OrientedPointSet s;
  s.positions = {Vec3::Zero()};
  s.normals = {Vec3(2, 0, 0)};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.normals = {};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.normals = {Vec3::UnitX()};
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("sphere indicator classifies and normalizes") {
  const IndicatorGrid& g = unit_sphere_field();
  CHECK(g.dims == GridDims{64, 64, 64});
  CHECK(g.sample(Vec3::Zero()) > 0.5);
  CHECK(g.at(0, 0, 0) < 0.5);
  double boundary = 0.0;
  int nb = 0;
  for (int k = 0; k < 64; ++k)
    for (int j = 0; j < 64; ++j)
      for (int i = 0; i < 64; ++i) {
        CHECK(std::isfinite(g.at(i, j, k)));
        if (i == 0 || j == 0 || k == 0 || i == 63 || j == 63 || k == 63) {
          boundary += g.at(i, j, k);
          ++nb;
          CHECK(g.at(i, j, k) < 0.5);
        }
      }
  CHECK(std::abs(boundary / nb) < 1e-9);
  double sample_mean = 0.0;
  const auto pts = testutil::sphere_samples(5000);
  for (const Vec3& p : pts.positions) sample_mean += g.sample(p);
  CHECK(sample_mean / pts.size() == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("sphere isosurface lies within 1.5 cells") {
  const IndicatorGrid& g = unit_sphere_field();
  const TriangleMesh mesh = marching_cubes(g);
  const double h = testutil::hausdorff(
      mesh, [](const Vec3& p) { return std::abs(p.norm() - 1.0); }, dense_sphere());
  MESSAGE("sphere Hausdorff in cells: " << h / g.cell);
  CHECK(h < 1.5 * g.cell);
}

TEST_CASE("torus isosurface lies within 1.5 cells") {
  const double R = 1.0, r = 0.4;
  const IndicatorGrid g = build_indicator(testutil::torus_samples(160, 64, R, r), {64, 64, 64});
  const TriangleMesh mesh = marching_cubes(g);
  CHECK(mesh.is_closed());
  CHECK(mesh.euler_characteristic() == 0);
  const double h = testutil::hausdorff(
      mesh, [&](const Vec3& p) { return testutil::torus_distance(p, R, r); },
      testutil::torus_samples(400, 160, R, r).positions);
  MESSAGE("torus Hausdorff in cells: " << h / g.cell);
  CHECK(h < 1.5 * g.cell);
}

TEST_CASE("box isosurface lies within 1.5 cells") {
  const Vec3 half(0.8, 0.6, 0.5);
  const IndicatorGrid g = build_indicator(testutil::box_samples(half, 0.02), {64, 64, 64});
  const TriangleMesh mesh = marching_cubes(g);
  CHECK(mesh.is_closed());
  CHECK(mesh.euler_characteristic() == 2);
  const double h = testutil::hausdorff(
      mesh, [&](const Vec3& p) { return testutil::box_distance(p, half); },
      testutil::box_samples(half, 0.01).positions);
  MESSAGE("box Hausdorff in cells: " << h / g.cell);
  CHECK(h < 1.5 * g.cell);
}

TEST_CASE("flipping normals swaps inside and outside") {
  OrientedPointSet s = testutil::sphere_samples(3000);
  for (Vec3& n : s.normals) n = -n;
  const IndicatorGrid g = build_indicator(s, {32, 32, 32});
  CHECK(g.sample(Vec3::Zero()) < 0.5);
}

TEST_CASE("sphere with a cap removed still closes") {
  const double cap = 30.0 * std::numbers::pi / 180.0;
  const auto s = testutil::sphere_samples(5000, Vec3::Zero(), 1.0,
                                          [&](const Vec3& d) { return d.z() < std::cos(cap); });
  const TriangleMesh mesh = marching_cubes(build_indicator(s, {64, 64, 64}));
  CHECK(mesh.is_closed());
  CHECK(mesh.euler_characteristic() == 2);
}

TEST_CASE("build_indicator preconditions") {
  const auto few = testutil::sphere_samples(40);
  CHECK_THROWS_AS(build_indicator(few, {16, 16, 16}), ConfigError);
  CHECK_THROWS_AS(build_indicator(testutil::sphere_samples(100), {4, 16, 16}), ConfigError);
  OrientedPointSet flat;
  for (int i = 0; i < 60; ++i) {
    flat.positions.push_back(Vec3::Zero());
    flat.normals.push_back(Vec3::UnitZ());
  }
  CHECK_THROWS_AS(build_indicator(flat, {16, 16, 16}), ConfigError);
  PoissonOptions tight;
  tight.max_iterations = 1;
  tight.tolerance = 1e-14;
  CHECK_THROWS_AS(build_indicator(testutil::sphere_samples(500), {32, 32, 32}, 0.25, tight),
                  NumericalError);
}

TEST_CASE("solver statistics") {
  PoissonStats st;
  build_indicator(testutil::sphere_samples(2000), {32, 32, 32}, 0.25, {}, &st);
  CHECK(st.iterations > 0);
  CHECK(st.relative_residual < 1e-6);
}

TEST_CASE("remap_grid") {
  const IndicatorGrid& g = unit_sphere_field();
  const IndicatorGrid same = remap_grid(g, g);
  for (std::size_t i = 0; i < g.values.size(); ++i)
    CHECK(std::abs(same.values[i] - g.values[i]) < 1e-12);

  // Linear ramp translated by half a cell.
  IndicatorGrid ramp(Vec3::Zero(), 0.1, {16, 16, 16});
  for (int k = 0; k < 16; ++k)
    for (int j = 0; j < 16; ++j)
      for (int i = 0; i < 16; ++i) {
        const Vec3 c = ramp.cell_center(i, j, k);
        ramp.at(i, j, k) = 2 * c.x() - c.y() + 0.5 * c.z();
      }
  const IndicatorGrid shifted_frame(Vec3::Constant(0.05), 0.1, {14, 14, 14});
  const IndicatorGrid moved = remap_grid(ramp, shifted_frame);
  for (int k = 0; k < 14; ++k)
    for (int j = 0; j < 14; ++j)
      for (int i = 0; i < 14; ++i) {
        const Vec3 c = moved.cell_center(i, j, k);
        CHECK(moved.at(i, j, k) == doctest::Approx(2 * c.x() - c.y() + 0.5 * c.z()).epsilon(1e-12));
      }

  // Volume preserved through a rotated-resolution remap.
  const IndicatorGrid coarse(g.origin + Vec3::Constant(0.013), g.cell * 1.3, {50, 50, 50});
  const IndicatorGrid rg = remap_grid(g, coarse);
  const double v0 = extract_interior_points(g).size() * std::pow(g.cell, 3);
  const double v1 = extract_interior_points(rg).size() * std::pow(rg.cell, 3);
  CHECK(v1 == doctest::Approx(v0).epsilon(0.05));

  // Cells outside the source read 0.
  const IndicatorGrid wide(g.origin - Vec3::Constant(1.0), g.cell, {80, 80, 80});
  CHECK(remap_grid(g, wide).at(0, 0, 0) == 0.0);

  const IndicatorGrid far(Vec3::Constant(100.0), 0.1, {8, 8, 8});
  CHECK_THROWS_AS(remap_grid(g, far), ConfigError);
}

TEST_CASE("mean curvature") {
  Rng rng(31);
  std::vector<Vec3> plane;
  for (int i = 0; i < 400; ++i) plane.push_back(Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0));
  const CurvatureResult pc = mean_curvature(plane);
  for (double h : pc.mean_curvature) CHECK(std::abs(h) < 1e-3);

  auto sphere_h = [](double r) {
    const auto s = testutil::sphere_samples(4000, Vec3::Zero(), r);
    const CurvatureResult c = mean_curvature(s.positions, 16, s.normals);
    double mean = 0.0;
    for (double h : c.mean_curvature) mean += h;
    return mean / c.mean_curvature.size();
  };
  const double h1 = sphere_h(1.0), h2 = sphere_h(2.0);
  CHECK(h1 == doctest::Approx(1.0).epsilon(0.1));
  CHECK(h2 == doctest::Approx(0.5).epsilon(0.1));
  CHECK(h2 / h1 == doctest::Approx(0.5).epsilon(0.1));

  // Collinear neighborhoods are flagged.
  std::vector<Vec3> line;
  for (int i = 0; i < 40; ++i) line.push_back(Vec3(0.1 * i, 0, 0));
  const CurvatureResult lc = mean_curvature(line, 8);
  for (std::size_t i = 0; i < line.size(); ++i) {
    CHECK(lc.rank_deficient[i]);
    CHECK(lc.mean_curvature[i] == 0.0);
  }
  CHECK_THROWS_AS(mean_curvature(std::vector<Vec3>(5, Vec3::Zero()), 16), ConfigError);
}

TEST_CASE("resolve_conflicts leaves disjoint shapes alone") {
  const Vec3 o(-2, -2, -2);
  const double c = 0.1;
  const GridDims d{40, 40, 40};
  const IndicatorGrid a = analytic(o, c, d, [](const Vec3& p) { return (p - Vec3(-0.8, 0, 0)).norm() - 0.5; });
  const IndicatorGrid b = analytic(o, c, d, [](const Vec3& p) { return (p - Vec3(0.8, 0, 0)).norm() - 0.5; });
  ConflictReport rep;
  const auto [s, ob] = resolve_conflicts(a, b, {}, &rep);
  CHECK(s.values == a.values);
  CHECK(ob.values == b.values);
  CHECK(rep.remaining_conflicts == 0);

  const IndicatorGrid empty(o, c, d, 0.2);
  const auto [s2, o2] = resolve_conflicts(a, empty);
  CHECK(s2.values == a.values);
  CHECK(o2.values == empty.values);
}

TEST_CASE("resolve_conflicts on a half-sunk sphere") {
  const auto slab = testutil::box_samples(Vec3(1.2, 1.2, 0.3), 0.03);
  OrientedPointSet scene = slab;
  for (Vec3& p : scene.positions) p.z() -= 0.3;  // top face at z = 0
  const IndicatorGrid xs = build_indicator(scene, {48, 48, 48});
  const IndicatorGrid xo = build_indicator(testutil::sphere_samples(4000, Vec3::Zero(), 0.5), {48, 48, 48});
  const IndicatorGrid xos = remap_grid(xo, xs);
  REQUIRE(count_conflicts(xs, xos) > 0);

  ConflictReport rep;
  const auto [s, o] = resolve_conflicts(xs, xos, {}, &rep);
  CHECK(count_conflicts(s, o) == 0);
  CHECK(rep.remaining_conflicts == 0);
  CHECK(rep.object_cells_lowered > 0);

  // Only lowered, and only to 0.49.
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    CHECK(s.values[i] <= xs.values[i]);
    if (s.values[i] != xs.values[i]) CHECK(s.values[i] == 0.49);
    CHECK(o.values[i] <= xos.values[i]);
    if (o.values[i] != xos.values[i]) CHECK(o.values[i] == 0.49);
  }
  // Object interior sits strictly above the scene interior in every column.
  const GridDims& d = s.dims;
  int object_cells = 0;
  for (int j = 0; j < d[1]; ++j)
    for (int i = 0; i < d[0]; ++i) {
      int top_scene = -1;
      for (int k = 0; k < d[2]; ++k)
        if (s.at(i, j, k) > 0.5) top_scene = k;
      for (int k = 0; k < d[2]; ++k)
        if (o.at(i, j, k) > 0.5) {
          ++object_cells;
          CHECK(k > top_scene);
        }
    }
  CHECK(object_cells > 0);
}

TEST_CASE("resolve_conflicts argument checks") {
  const IndicatorGrid a(Vec3::Zero(), 0.1, {8, 8, 8});
  const IndicatorGrid b(Vec3::Zero(), 0.2, {8, 8, 8});
  CHECK_THROWS_AS(resolve_conflicts(a, b), ConfigError);
  ConflictOptions bad;
  bad.connectivity = 8;
  CHECK_THROWS_AS(resolve_conflicts(a, a, bad), ConfigError);
}

TEST_CASE("extract_interior_points") {
  const IndicatorGrid out(Vec3::Zero(), 0.1, {8, 8, 8}, 0.3);
  CHECK(extract_interior_points(out).empty());

  const IndicatorGrid& g = unit_sphere_field();
  const auto pts = extract_interior_points(g);
  CHECK(pts.size() * std::pow(g.cell, 3) == doctest::Approx(4.0 / 3.0 * std::numbers::pi).epsilon(0.1));
  for (const Vec3& p : pts) CHECK(g.sample(p) > 0.5);
}

TEST_CASE("indicator volume container") {
  testutil::TempDir dir("vol");
  const IndicatorGrid& g = unit_sphere_field();
  save_indicator(g, dir / "g.vol");
  const IndicatorGrid back = load_indicator(dir / "g.vol");
  CHECK(back.dims == g.dims);
  CHECK(back.origin.isApprox(g.origin));
  CHECK(back.cell == g.cell);
  for (std::size_t i = 0; i < g.values.size(); ++i)
    CHECK(back.values[i] == static_cast<double>(static_cast<float>(g.values[i])));
  CHECK(std::filesystem::file_size(dir / "g.vol") == 64 + 4 * g.values.size());

  std::ofstream(dir / "bad.vol") << "NOTAVOLUME";
  CHECK_THROWS_AS(load_indicator(dir / "bad.vol"), FormatError);
}
