#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dgs/carve.hpp"
#include "dgs/config.hpp"
#include "dgs/image_io.hpp"
#include "dgs/metrics.hpp"
#include "dgs/pipeline.hpp"
#include "dgs/ply.hpp"
#include "dgs/splat_ops.hpp"
#include "dgs/synthetic.hpp"
#include "test_util.hpp"

using namespace dgs;
using json = nlohmann::json;
using testutil::read_bytes;
using testutil::Rng;
using testutil::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

template <class Fn>
std::string message_of(Fn&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

bool has(const std::string& text, const std::string& part) {
  return text.find(part) != std::string::npos;
}

const char* kMinimal = R"({
  "input": {"splats": "s.ply", "cameras": "c.json"},
  "materials": [{"name": "m", "model": "fixed_corotated", "E": 1e5, "nu": 0.3, "density": 1000}]
})";

json minimal() { return json::parse(kMinimal); }

PipelineConfig parse(const json& j) { return parse_config(j.dump(), "."); }

std::vector<Camera> ring_cameras(int n, int size = 48) {
  std::vector<Camera> cams;
  for (int i = 0; i < n; ++i) {
    const double a = 2 * M_PI * i / n;
    cams.push_back(Camera::look_at(Vec3(1.5 * std::cos(a), 1.5 * std::sin(a), 0.8), Vec3(0, 0, 0.2),
                                   Vec3::UnitZ(), 60.0, size, size));
  }
  return cams;
}

std::vector<Vec3> lattice(const Vec3& lo, const Vec3& hi, double c,
                          const std::function<bool(const Vec3&)>& keep) {
  std::vector<Vec3> pts;
  for (double z = lo.z(); z <= hi.z() + 1e-9; z += c)
    for (double y = lo.y(); y <= hi.y() + 1e-9; y += c)
      for (double x = lo.x(); x <= hi.x() + 1e-9; x += c)
        if (keep(Vec3(x, y, z))) pts.push_back(Vec3(x, y, z));
  return pts;
}

// A restored output directory without running decouple: a small ball of
// isometric kernels hovering over a flat floor of discs.
struct SimCase {
  TempDir dir{"sim"};
  double cell = 0.05;
  json cfg;

  SimCase() {
    const Vec3 c(0, 0, 0.3);
    std::vector<GaussianKernel> object =
        isometric_init(lattice(c - Vec3::Constant(0.15), c + Vec3::Constant(0.15), cell,
                               [&](const Vec3& p) { return (p - c).norm() <= 0.15; }),
                       cell);
    for (auto& k : object) {
      k.opacity = 0.9;
      k.label = 1;
      const Vec3 dc = rgb_to_dc(Vec3(0.8, 0.2, 0.2));
      for (int ch = 0; ch < 3; ++ch) k.sh[ch][0] = dc[ch];
    }
    std::vector<GaussianKernel> scene =
        isometric_init(lattice(Vec3(-0.6, -0.6, 0), Vec3(0.6, 0.6, 0), cell, [](const Vec3&) { return true; }),
                       cell);
    for (auto& k : scene) {
      k.scales = Vec3(cell, cell, 1e-3);
      k.opacity = 0.95;
    }
    const auto out = dir / "out";
    std::filesystem::create_directories(out);
    save_ply(object, out / outputs::kObject);
    save_ply(scene, out / outputs::kScene);
    write_text(out / outputs::kDecoupleReport, json{{"poisson_cell", cell}}.dump());
    std::vector<GaussianKernel> all = scene;
    all.insert(all.end(), object.begin(), object.end());
    save_ply(all, dir / "splats.ply");
    save_cameras(ring_cameras(4), dir / "cameras.json");

    cfg = {{"input", {{"splats", "splats.ply"}, {"cameras", "cameras.json"}}},
           {"output_dir", "out"},
           {"materials", {{{"name", "jelly"}, {"model", "fixed_corotated"}, {"E", 2e4}, {"nu", 0.3},
                           {"density", 1000}}}},
           {"simulation",
            {{"frames", 4}, {"dt", 2e-3}, {"frame_dt", 1.0 / 24}, {"align_gravity", false},
             {"domain_margin", 0.5}}},
           {"render", {{"cameras", {0}}}}};
  }

  PipelineConfig config() const {
    const auto p = dir / "config.json";
    write_text(p, cfg.dump(2));
    return load_config(p);
  }
  std::filesystem::path out() const { return dir / "out"; }
};

std::vector<std::vector<double>> read_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DGS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config: minimal document takes defaults") {
  const PipelineConfig cfg = parse(minimal());
  CHECK(cfg.input.splats == "s.ply");
  CHECK(cfg.input.object_label == 1);
  CHECK(cfg.poisson.scene_dims == GridDims{64, 64, 64});
  CHECK(cfg.crop_scale == 1.2);
  REQUIRE(cfg.materials.size() == 1);
  CHECK(cfg.sim_material().youngs == 1e5);
  CHECK_NOTHROW(cfg.validate(false));

  json j = minimal();
  j["poisson"] = {{"scene_dims", 32}, {"object_dims", {16, 24, 32}}};
  const PipelineConfig d = parse(j);
  CHECK(d.poisson.scene_dims == GridDims{32, 32, 32});
  CHECK(d.poisson.object_dims == GridDims{16, 24, 32});
}

TEST_CASE("config: malformed fields name their path") {
  auto error = [](const json& j) {
    return message_of([&] {
      const PipelineConfig cfg = parse(j);
      cfg.validate(false);
    });
  };
  json j = minimal();
  j["simulation"] = {{"dtt", 1e-4}};
  CHECK(error(j) == "simulation.dtt: unknown key");

  j = minimal();
  j["simulation"] = {{"dt", "fast"}};
  CHECK(error(j) == "simulation.dt: expected number, got string");

  j = minimal();
  j["materials"][0]["model"] = "rubber";
  CHECK(has(error(j), "materials[0].model: unknown material model 'rubber'"));

  j = minimal();
  j["materials"][0]["nu"] = 0.5;
  CHECK(has(error(j), "materials[0]"));

  j = minimal();
  j["simulation"] = {{"material", "steel"}};
  CHECK(has(error(j), "simulation.material: no material named 'steel'"));

  j = minimal();
  j["poisson"] = {{"scene_dims", {8, 8}}};
  CHECK(has(error(j), "poisson.scene_dims"));

  j = minimal();
  j["tsdf"] = {{"resolution", 4}};
  CHECK(has(error(j), "tsdf.resolution"));

  j = minimal();
  j["impulses"] = {{{"frame", -1}, {"dv", {1, 0, 0}}}};
  CHECK(has(error(j), "impulses[0].frame"));

  j = minimal();
  j["render"] = {{"width", 1280}};
  CHECK(has(error(j), "render.width"));

  j = minimal();
  j["seed"] = -3;
  CHECK(has(error(j), "seed"));

  CHECK(has(message_of([] { parse_config("{not json", "."); }), "config: invalid JSON"));
  CHECK_THROWS_AS(parse_config("{not json", "."), ConfigError);
}

TEST_CASE("config: Bear_collisions material row") {
  json j = minimal();
  j["materials"] = {{{"name", "bear_collisions"}, {"model", "fixed_corotated"}, {"E", 3e6}, {"nu", 0.3}}};
  j["simulation"] = {{"material", "bear_collisions"}};
  const PipelineConfig cfg = parse(j);
  CHECK_NOTHROW(cfg.validate(false));
  const Material& m = cfg.sim_material();
  CHECK(m.model == MaterialModel::FixedCorotated);
  CHECK(m.youngs == 3e6);
  CHECK(m.poisson == 0.3);
}

TEST_CASE("config: dt must satisfy the CFL bound") {
  json j = minimal();
  // sqrt(E / rho) = 10, so the bound at h = 0.01 is 3e-4.
  j["simulation"] = {{"cell_size", 0.01}, {"dt", 5e-4}};
  const std::string msg = message_of([&] { parse(j).validate(false); });
  CHECK(has(msg, "simulation.dt"));
  CHECK(has(msg, "CFL"));
  j["simulation"]["dt"] = 2.5e-4;
  CHECK_NOTHROW(parse(j).validate(false));
  j["simulation"]["dt"] = -1.0;
  CHECK_THROWS_AS(parse(j).validate(false), ConfigError);
}

TEST_CASE("config: files resolve against the config directory") {
  TempDir dir("cfg");
  std::filesystem::create_directories(dir / "sub");
  write_text(dir / "sub" / "config.json", kMinimal);
  const PipelineConfig cfg = load_config(dir / "sub" / "config.json");
  CHECK(cfg.resolve(cfg.input.splats) == dir / "sub" / "s.ply");
  const std::string msg = message_of([&] { cfg.validate(true); });
  CHECK(has(msg, "input.splats"));
  CHECK(has(msg, "s.ply"));

  save_ply(std::vector<GaussianKernel>(1), dir / "sub" / "s.ply");
  save_cameras(ring_cameras(1), dir / "sub" / "c.json");
  CHECK_NOTHROW(cfg.validate(true));
  CHECK_THROWS_AS(load_config(dir / "nope.json"), ConfigError);
}

TEST_CASE("cameras round trip and malformed files") {
  TempDir dir("cams");
  const std::vector<Camera> cams = ring_cameras(3, 32);
  save_cameras(cams, dir / "c.json");
  const std::vector<Camera> back = load_cameras(dir / "c.json");
  REQUIRE(back.size() == cams.size());
  for (std::size_t i = 0; i < cams.size(); ++i) {
    CHECK((back[i].intrinsics - cams[i].intrinsics).norm() < 1e-12);
    CHECK((back[i].rotation - cams[i].rotation).norm() < 1e-12);
    CHECK((back[i].translation - cams[i].translation).norm() < 1e-12);
    CHECK(back[i].width == 32);
  }
  write_text(dir / "bad.json", "[{\"K\": 1}]");
  CHECK_THROWS_AS(load_cameras(dir / "bad.json"), FormatError);
  write_text(dir / "empty.json", "[]");
  CHECK_THROWS_AS(load_cameras(dir / "empty.json"), FormatError);
}

TEST_CASE("chamfer_distance") {
  Rng rng(4);
  std::vector<Vec3> a, b;
  for (int i = 0; i < 200; ++i) a.push_back(rng.vec());
  for (int i = 0; i < 150; ++i) b.push_back(rng.vec());
  CHECK(chamfer_distance(a, a) == 0.0);

  const std::vector<Vec3> o{Vec3::Zero()}, x{Vec3(1, 0, 0)};
  CHECK(chamfer_distance(o, x) == doctest::Approx(2.0));

  // Brute-force oracle.
  auto one_way = [](const std::vector<Vec3>& p, const std::vector<Vec3>& q) {
    double s = 0;
    for (const Vec3& u : p) {
      double best = 1e300;
      for (const Vec3& v : q) best = std::min(best, (u - v).squaredNorm());
      s += best;
    }
    return s / p.size();
  };
  const double cd = chamfer_distance(a, b);
  CHECK(cd == doctest::Approx(one_way(a, b) + one_way(b, a)).epsilon(1e-12));

  const Mat3 r = rng.rotation();
  const Vec3 t = rng.vec(-5, 5);
  std::vector<Vec3> ta, tb;
  for (const Vec3& p : a) ta.push_back(r * p + t);
  for (const Vec3& p : b) tb.push_back(r * p + t);
  CHECK(std::abs(chamfer_distance(ta, tb) - cd) < 1e-10);

  CHECK_THROWS_AS(chamfer_distance(std::vector<Vec3>{}, b), ConfigError);
}

TEST_CASE("psnr") {
  RasterImage a(8, 6, 3, 0.25);
  CHECK(psnr(a, a) == kPsnrIdentical);
  RasterImage b = a;
  for (double& v : b.values) v += 0.1;  // MSE 0.01
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(RasterImage(4, 4, 3, 0.0), RasterImage(4, 4, 3, 1.0)) == doctest::Approx(0.0));
  CHECK_THROWS(psnr(a, RasterImage(8, 5, 3)));
}

TEST_CASE("decouple: absent object label fails before compute") {
  TempDir dir("label");
  const auto cfg_path = write_sphere_on_slab_case(dir.path());
  json j = json::parse(std::ifstream(cfg_path));
  j["input"]["object_label"] = 7;
  write_text(cfg_path, j.dump());
  const PipelineConfig cfg = load_config(cfg_path);
  const std::string msg = message_of([&] { run_decouple(cfg); });
  CHECK(has(msg, "unknown label 7"));
  CHECK(has(msg, "decouple/split"));
  CHECK_FALSE(std::filesystem::exists(cfg.resolve(cfg.output_dir) / outputs::kObject));
}

TEST_CASE("decouple: sphere-on-slab is conflict-free and reproducible") {
  TempDir dir("decouple");
  const auto cfg_path = write_sphere_on_slab_case(dir.path());
  json j = json::parse(std::ifstream(cfg_path));
  j["carve"]["max_iters"] = 20;
  j["carve"]["cull_every"] = 10;
  write_text(cfg_path, j.dump());
  PipelineConfig cfg = load_config(cfg_path);

  const DecoupleReport rep = run_decouple(cfg);
  CHECK(rep.conflict_free);
  CHECK(rep.conflicts.remaining_conflicts == 0);
  CHECK(rep.object_kernels > 0);
  CHECK(rep.restored_object_kernels > 0);
  const auto out = cfg.resolve(cfg.output_dir);
  const json report = json::parse(std::ifstream(out / outputs::kDecoupleReport));
  CHECK(report.at("conflicts").at("conflict_free").get<bool>());

  const auto obj = read_bytes(out / outputs::kObject);
  const auto scn = read_bytes(out / outputs::kScene);
  const auto rpt = read_bytes(out / outputs::kDecoupleReport);
  cfg.output_dir = "out2";
  run_decouple(cfg);
  const auto out2 = cfg.resolve(cfg.output_dir);
  CHECK(read_bytes(out2 / outputs::kObject) == obj);
  CHECK(read_bytes(out2 / outputs::kScene) == scn);
  CHECK(read_bytes(out2 / outputs::kDecoupleReport) == rpt);
}

TEST_CASE("simulate: zero frames writes only frame 0") {
  SimCase sc;
  sc.cfg["simulation"]["frames"] = 0;
  const PipelineConfig cfg = sc.config();
  const SimulateReport rep = run_simulate(cfg);
  CHECK(rep.frames_written == 1);
  CHECK(std::filesystem::exists(frame_path(cfg, 0)));
  CHECK_FALSE(std::filesystem::exists(frame_path(cfg, 1)));
  CHECK(read_csv(sc.out() / outputs::kDiagnostics).size() == 1);
  // Frame 0 is the floor followed by the object, unmoved.
  const auto k = load_ply(frame_path(cfg, 0)).kernels;
  const auto obj = load_ply(sc.out() / outputs::kObject).kernels;
  const auto scn = load_ply(sc.out() / outputs::kScene).kernels;
  REQUIRE(k.size() == obj.size() + scn.size());
  for (std::size_t i = 0; i < obj.size(); ++i)
    CHECK((k[scn.size() + i].center - obj[i].center).norm() < 1e-12);
}

TEST_CASE("simulate: 50-frame elastic drop keeps its mass") {
  SimCase sc;
  sc.cfg["simulation"]["frames"] = 50;
  const PipelineConfig cfg = sc.config();
  const SimulateReport rep = run_simulate(cfg);
  CHECK(rep.frames_written == 51);
  CHECK(rep.sticky_nodes > 0);
  const auto rows = read_csv(sc.out() / outputs::kDiagnostics);
  REQUIRE(rows.size() == 51);
  for (const auto& r : rows) CHECK(r[1] == rows[0][1]);
  CHECK(rows[0][1] == doctest::Approx(rep.particles * std::pow(sc.cell, 3) * 1000.0));
  // It falls and is caught by the floor.
  const auto last = load_ply(frame_path(cfg, 50)).kernels;
  double lowest = 1e9;
  for (std::size_t i = last.size() - rep.particles; i < last.size(); ++i)
    lowest = std::min(lowest, last[i].center.z());
  CHECK(lowest < 0.15 - 0.05);
  CHECK(lowest > -rep.grid_h);
}

TEST_CASE("simulate: impulses act from their frame on") {
  SimCase plain;
  plain.cfg["simulation"]["frames"] = 12;
  plain.cfg["simulation"]["gravity"] = {0, 0, 0};
  SimCase kicked;
  kicked.cfg = plain.cfg;
  kicked.cfg["impulses"] = {{{"frame", 10}, {"dv", {0.5, 0, 0}}, {"region", "all"}}};
  const PipelineConfig a = plain.config(), b = kicked.config();
  run_simulate(a);
  run_simulate(b);
  for (int f = 0; f <= 10; ++f) CHECK(read_bytes(frame_path(a, f)) == read_bytes(frame_path(b, f)));
  CHECK(read_bytes(frame_path(a, 11)) != read_bytes(frame_path(b, 11)));
  const auto rows = read_csv(kicked.out() / outputs::kDiagnostics);
  CHECK(rows[10][2] == doctest::Approx(0.0));
  CHECK(rows[11][2] == doctest::Approx(0.5 * rows[11][1]).epsilon(1e-6));
}

TEST_CASE("simulate: CFL violation at run time is a numerical error") {
  SimCase sc;
  sc.cfg["simulation"]["dt"] = 1.0 / 24;
  sc.cfg["simulation"]["frames"] = 1;
  const PipelineConfig cfg = sc.config();
  const std::string msg = message_of([&] { run_simulate(cfg); });
  CHECK(has(msg, "simulate/frame_1"));
  CHECK_THROWS_AS(run_simulate(cfg), NumericalError);
}

TEST_CASE("render: static camera over a static scene") {
  SimCase sc;
  sc.cfg["simulation"]["frames"] = 3;
  sc.cfg["simulation"]["gravity"] = {0, 0, 0};
  sc.cfg["render"]["background"] = {0.1, 0.2, 0.3};
  const PipelineConfig cfg = sc.config();
  run_simulate(cfg);
  const RenderReport rep = run_render(cfg);
  CHECK(rep.images == 4);
  const auto first = read_bytes(render_path(cfg, 0));
  for (int i = 1; i < 4; ++i) CHECK(read_bytes(render_path(cfg, i)) == first);
  const RasterImage img = read_ppm(render_path(cfg, 0));
  CHECK(img.width == 48);
  // The object is in view, so the image is not plain background.
  bool colored = false;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) colored |= img.at(x, y, 0) > 0.5;
  CHECK(colored);
}

TEST_CASE("render: a camera path of N poses gives N images") {
  SimCase sc;
  sc.cfg["simulation"]["frames"] = 0;
  save_cameras(ring_cameras(5, 40), sc.dir / "path.json");
  sc.cfg["render"] = {{"camera_path", "path.json"}};
  const PipelineConfig cfg = sc.config();
  run_simulate(cfg);
  const RenderReport rep = run_render(cfg);
  CHECK(rep.images == 5);
  for (int i = 0; i < 5; ++i) CHECK(std::filesystem::exists(render_path(cfg, i)));
  CHECK_FALSE(std::filesystem::exists(render_path(cfg, 5)));
  CHECK(read_bytes(render_path(cfg, 0)) != read_bytes(render_path(cfg, 1)));
}

TEST_CASE("render: output resolution follows the config") {
  SimCase sc;
  sc.cfg["simulation"]["frames"] = 0;
  sc.cfg["render"] = {{"cameras", {1}}, {"width", 1280}, {"height", 720}};
  const PipelineConfig cfg = sc.config();
  run_simulate(cfg);
  const RenderReport rep = run_render(cfg);
  CHECK(rep.width == 1280);
  CHECK(rep.height == 720);
  const RasterImage img = read_ppm(render_path(cfg, 0));
  CHECK(img.width == 1280);
  CHECK(img.height == 720);
}

TEST_CASE("render: missing frames and bad camera indices") {
  SimCase sc;
  sc.cfg["simulation"]["frames"] = 2;
  PipelineConfig cfg = sc.config();
  CHECK(has(message_of([&] { run_render(cfg); }), "render/frames: missing frame"));
  run_simulate(cfg);
  cfg.render.camera_indices = {9};
  CHECK_THROWS_AS(run_render(cfg), ConfigError);
}

TEST_CASE("command line exit codes") {
  SimCase sc;
  sc.cfg["simulation"]["frames"] = 1;
  const PipelineConfig cfg = sc.config();
  const std::string config = (sc.dir / "config.json").string();

  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("simulate --config " + (sc.dir / "absent.json").string()) == 2);
  CHECK(run_cli("run --stage simulate --config " + config + " --seed 3 --threads 1 -q") == 0);
  CHECK(std::filesystem::exists(frame_path(cfg, 1)));
  CHECK(run_cli("render -q --config " + config) == 0);
  CHECK(run_cli("eval --image-a " + render_path(cfg, 0).string() + " --image-b " +
                render_path(cfg, 1).string()) == 0);
  CHECK(run_cli("eval") == 2);

  json bad = sc.cfg;
  bad["simulation"]["dtt"] = 1;
  write_text(sc.dir / "bad.json", bad.dump());
  CHECK(run_cli("simulate -q --config " + (sc.dir / "bad.json").string()) == 2);

  json unstable = sc.cfg;
  unstable["simulation"]["dt"] = 1.0 / 24;
  write_text(sc.dir / "unstable.json", unstable.dump());
  CHECK(run_cli("simulate -q --config " + (sc.dir / "unstable.json").string()) == 3);

  CHECK(run_cli("synth --out " + (sc.dir / "synth").string()) == 0);
  CHECK(std::filesystem::exists(sc.dir / "synth" / "config.json"));
  CHECK_NOTHROW(load_config(sc.dir / "synth" / "config.json").validate(true));
}
