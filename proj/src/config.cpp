#include "dgs/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dgs {
namespace {

using json = nlohmann::json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

const char* type_word(const json& j) {
  if (j.is_number_integer() || j.is_number_unsigned()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_boolean()) return "boolean";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

// Object reader that records which keys were consumed so leftovers can be
// reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ConfigError(where() + ": expected an object, got " + type_word(j_));
  }

  std::string where() const { return path_.empty() ? "config" : path_; }
  std::string at(const std::string& key) const { return join(path_, key); }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  const json* find(const std::string& key) {
    used_.insert(key);
    if (!has(key)) return nullptr;
    return &j_.at(key);
  }

  double number(const std::string& key, double def) {
    const json* v = find(key);
    return v ? as_number(*v, at(key)) : def;
  }
  std::optional<double> opt_number(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    return as_number(*v, at(key));
  }
  long long integer(const std::string& key, long long def) {
    const json* v = find(key);
    return v ? as_integer(*v, at(key)) : def;
  }
  bool boolean(const std::string& key, bool def) {
    const json* v = find(key);
    if (!v) return def;
    if (!v->is_boolean()) throw ConfigError(at(key) + ": expected boolean, got " + type_word(*v));
    return v->get<bool>();
  }
  std::string string(const std::string& key, const std::string& def) {
    const json* v = find(key);
    return v ? as_string(*v, at(key)) : def;
  }
  std::optional<std::string> opt_string(const std::string& key) {
    const json* v = find(key);
    if (!v) return std::nullopt;
    return as_string(*v, at(key));
  }
  Vec3 vec3(const std::string& key, const Vec3& def) {
    const json* v = find(key);
    return v ? as_vec3(*v, at(key)) : def;
  }
  GridDims dims(const std::string& key, const GridDims& def) {
    const json* v = find(key);
    if (!v) return def;
    if (v->is_number()) {
      const int n = static_cast<int>(as_integer(*v, at(key)));
      return {n, n, n};
    }
    if (!v->is_array() || v->size() != 3)
      throw ConfigError(at(key) + ": expected an integer or 3 integers");
    GridDims d{};
    for (int a = 0; a < 3; ++a)
      d[a] = static_cast<int>(as_integer((*v)[a], at(key) + "[" + std::to_string(a) + "]"));
    return d;
  }
  Section child(const std::string& key) {
    const json* v = find(key);
    static const json empty = json::object();
    return Section(v ? *v : empty, at(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(at(it.key()) + ": unknown key");
  }

  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + ": expected number, got " + type_word(v));
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(path + ": must be finite");
    return x;
  }
  static long long as_integer(const json& v, const std::string& path) {
    if (v.is_number_integer() || v.is_number_unsigned()) return v.get<long long>();
    if (v.is_number_float()) {
      const double x = v.get<double>();
      if (std::isfinite(x) && x == std::floor(x) && std::abs(x) < 9e15)
        return static_cast<long long>(x);
    }
    throw ConfigError(path + ": expected integer, got " + type_word(v));
  }
  static std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path + ": expected string, got " + type_word(v));
    return v.get<std::string>();
  }
  static Vec3 as_vec3(const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 3) throw ConfigError(path + ": expected 3 numbers");
    return Vec3(as_number(v[0], path + "[0]"), as_number(v[1], path + "[1]"),
                as_number(v[2], path + "[2]"));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

MaterialModel parse_model(const std::string& s, const std::string& path) {
  if (s == "fixed_corotated") return MaterialModel::FixedCorotated;
  if (s == "drucker_prager") return MaterialModel::DruckerPrager;
  throw ConfigError(path + ": unknown material model '" + s +
                    "' (expected fixed_corotated or drucker_prager)");
}

ImpulseConfig parse_impulse(const json& j, const std::string& path) {
  Section s(j, path);
  ImpulseConfig imp;
  imp.frame = static_cast<int>(s.integer("frame", 0));
  imp.dv = s.vec3("dv", Vec3::Zero());
  const json* region = s.find("region");
  if (!region || (region->is_string() && region->get<std::string>() == "all")) {
    imp.whole_object = true;
  } else {
    Section r(*region, s.at("region"));
    imp.whole_object = false;
    const std::string shape = r.string("shape", "sphere");
    imp.region.center = r.vec3("center", Vec3::Zero());
    if (shape == "sphere") {
      imp.region.shape = ImpulseRegion::Shape::Sphere;
      imp.region.radius = r.number("radius", 0.0);
    } else if (shape == "box") {
      imp.region.shape = ImpulseRegion::Shape::Box;
      imp.region.half_extent = r.vec3("half_extent", Vec3::Zero());
    } else {
      throw ConfigError(r.at("shape") + ": unknown shape '" + shape + "' (expected sphere or box)");
    }
    r.finish();
  }
  s.finish();
  return imp;
}

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path + ": " + what);
}

void require_dims(const GridDims& d, const std::string& path) {
  for (int a = 0; a < 3; ++a)
    require(d[a] >= 8 && d[a] <= 1024, path, "each dimension must lie in [8, 1024]");
}

Mat3 as_mat3(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 3) throw FormatError(path + ": expected a 3x3 array");
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    if (!v[r].is_array() || v[r].size() != 3) throw FormatError(path + ": expected a 3x3 array");
    for (int c = 0; c < 3; ++c) {
      if (!v[r][c].is_number()) throw FormatError(path + ": non-numeric entry");
      m(r, c) = v[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace

std::filesystem::path PipelineConfig::resolve(const std::filesystem::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return base_dir / p;
}

const Material& PipelineConfig::sim_material() const {
  if (materials.empty()) throw ConfigError("materials: at least one material is required");
  if (simulation.material.empty()) return materials.front().material;
  for (const auto& m : materials)
    if (m.name == simulation.material) return m.material;
  throw ConfigError("simulation.material: no material named '" + simulation.material + "'");
}

void PipelineConfig::validate(bool check_files) const {
  require(!input.splats.empty(), "input.splats", "required");
  require(!input.cameras.empty(), "input.cameras", "required");
  if (check_files) {
    require(std::filesystem::exists(resolve(input.splats)), "input.splats",
            "file not found: " + resolve(input.splats).string());
    require(std::filesystem::exists(resolve(input.cameras)), "input.cameras",
            "file not found: " + resolve(input.cameras).string());
    if (input.labels)
      require(std::filesystem::exists(resolve(*input.labels)), "input.labels",
              "file not found: " + resolve(*input.labels).string());
    if (render.camera_path)
      require(std::filesystem::exists(resolve(*render.camera_path)), "render.camera_path",
              "file not found: " + resolve(*render.camera_path).string());
  }
  require(!output_dir.empty(), "output_dir", "required");

  require_dims(poisson.scene_dims, "poisson.scene_dims");
  require_dims(poisson.object_dims, "poisson.object_dims");
  require(poisson.padding > 0.0 && poisson.padding < 2.0, "poisson.padding",
          "must lie in (0, 2)");
  require(poisson.solver.screen_weight >= 0.0, "poisson.screen_weight", "must be non-negative");
  require(poisson.solver.tolerance > 0.0 && poisson.solver.tolerance < 1.0, "poisson.tolerance",
          "must lie in (0, 1)");
  require(poisson.solver.max_iterations > 0, "poisson.max_iterations", "must be positive");
  require(!poisson.conflict.tau || *poisson.conflict.tau > 0.0, "poisson.tau", "must be positive");
  require(poisson.conflict.iterations >= 0, "poisson.conflict_iterations",
          "must be non-negative");
  require(poisson.conflict.connectivity == 6 || poisson.conflict.connectivity == 26,
          "poisson.connectivity", "must be 6 or 26");

  require(tsdf.resolution >= 8 && tsdf.resolution <= 1024, "tsdf.resolution",
          "must lie in [8, 1024]");
  require(tsdf.truncation_cells > 1.0, "tsdf.truncation_cells",
          "must exceed 1 (truncation larger than a voxel)");
  require(tsdf.min_weight >= 1.0, "tsdf.min_weight", "must be at least 1");
  require(tsdf.padding >= 0.0, "tsdf.padding", "must be non-negative");

  require(crop_scale > 0.0, "crop_scale", "must be positive");
  require(cleanup_k >= 1, "cleanup.k", "must be at least 1");
  require(!cleanup_radius || *cleanup_radius > 0.0, "cleanup.radius", "must be positive");
  require(mask_dilation >= 1 && mask_dilation % 2 == 1, "mask_dilation", "must be odd and positive");
  try {
    carve.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("carve: ") + e.what());
  }

  require(!materials.empty(), "materials", "at least one material is required");
  for (std::size_t i = 0; i < materials.size(); ++i) {
    const std::string path = "materials[" + std::to_string(i) + "]";
    try {
      materials[i].material.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    }
    for (std::size_t j = 0; j < i; ++j)
      require(materials[j].name != materials[i].name, path + ".name", "duplicate material name");
  }
  const Material& mat = sim_material();

  const SimulationConfig& sim = simulation;
  require(sim.frames >= 0, "simulation.frames", "must be non-negative");
  require(sim.frame_dt > 0.0, "simulation.frame_dt", "must be positive");
  require(sim.dt > 0.0, "simulation.dt", "must be positive");
  require(sim.dt <= sim.frame_dt, "simulation.dt", "must not exceed simulation.frame_dt");
  require(!sim.cell_size || *sim.cell_size > 0.0, "simulation.cell_size", "must be positive");
  if (sim.cell_size) {
    const double bound = 0.3 * *sim.cell_size / std::sqrt(mat.youngs / mat.density);
    if (sim.dt > bound) {
      std::ostringstream msg;
      msg << "simulation.dt: " << sim.dt << " breaks the CFL bound " << bound
          << " for the configured material; use dt <= " << bound;
      throw ConfigError(msg.str());
    }
  }
  require(sim.domain_margin >= 0.0, "simulation.domain_margin", "must be non-negative");
  require(sim.ransac_iterations > 0, "simulation.ransac_iterations", "must be positive");
  require(sim.ransac_tolerance > 0.0, "simulation.ransac_tolerance", "must be positive");

  for (std::size_t i = 0; i < impulses.size(); ++i) {
    const std::string path = "impulses[" + std::to_string(i) + "]";
    const ImpulseConfig& imp = impulses[i];
    require(imp.frame >= 0, path + ".frame", "must be non-negative");
    if (!imp.whole_object) {
      if (imp.region.shape == ImpulseRegion::Shape::Sphere)
        require(imp.region.radius > 0.0, path + ".region.radius", "must be positive");
      else
        require((imp.region.half_extent.array() > 0.0).all(), path + ".region.half_extent",
                "must be positive");
    }
  }

  require(!render.camera_indices.empty() || render.camera_path.has_value(),
          "render.cameras", "at least one camera index is required");
  for (std::size_t i = 0; i < render.camera_indices.size(); ++i)
    require(render.camera_indices[i] >= 0, "render.cameras[" + std::to_string(i) + "]",
            "must be non-negative");
  require((render.background.array() >= 0.0).all() && (render.background.array() <= 1.0).all(),
          "render.background", "components must lie in [0, 1]");
  require(!render.width || (*render.width >= 1 && *render.width <= 8192), "render.width",
          "must lie in [1, 8192]");
  require(!render.height || (*render.height >= 1 && *render.height <= 8192), "render.height",
          "must lie in [1, 8192]");
  require(render.width.has_value() == render.height.has_value(), "render.width",
          "width and height must be given together");
}

PipelineConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }

  PipelineConfig cfg;
  cfg.base_dir = base_dir;
  Section s(root, "");

  {
    Section in = s.child("input");
    cfg.input.splats = in.string("splats", "");
    cfg.input.cameras = in.string("cameras", "");
    if (auto l = in.opt_string("labels")) cfg.input.labels = *l;
    cfg.input.object_label = static_cast<int>(in.integer("object_label", cfg.input.object_label));
    in.finish();
  }
  cfg.output_dir = s.string("output_dir", cfg.output_dir.string());
  {
    const long long seed = s.integer("seed", 0);
    if (seed < 0) throw ConfigError("seed: must be non-negative");
    cfg.seed = static_cast<std::uint64_t>(seed);
  }
  {
    Section p = s.child("poisson");
    cfg.poisson.scene_dims = p.dims("scene_dims", cfg.poisson.scene_dims);
    cfg.poisson.object_dims = p.dims("object_dims", cfg.poisson.object_dims);
    cfg.poisson.padding = p.number("padding", cfg.poisson.padding);
    cfg.poisson.solver.screen_weight = p.number("screen_weight", cfg.poisson.solver.screen_weight);
    cfg.poisson.solver.tolerance = p.number("tolerance", cfg.poisson.solver.tolerance);
    cfg.poisson.solver.max_iterations =
        static_cast<int>(p.integer("max_iterations", cfg.poisson.solver.max_iterations));
    cfg.poisson.conflict.tau = p.opt_number("tau");
    cfg.poisson.conflict.iterations =
        static_cast<int>(p.integer("conflict_iterations", cfg.poisson.conflict.iterations));
    cfg.poisson.conflict.connectivity =
        static_cast<int>(p.integer("connectivity", cfg.poisson.conflict.connectivity));
    p.finish();
  }
  {
    Section t = s.child("tsdf");
    cfg.tsdf.resolution = static_cast<int>(t.integer("resolution", cfg.tsdf.resolution));
    cfg.tsdf.truncation_cells = t.number("truncation_cells", cfg.tsdf.truncation_cells);
    cfg.tsdf.min_weight = t.number("min_weight", cfg.tsdf.min_weight);
    cfg.tsdf.padding = t.number("padding", cfg.tsdf.padding);
    t.finish();
  }
  {
    Section c = s.child("cleanup");
    cfg.cleanup_k = static_cast<int>(c.integer("k", cfg.cleanup_k));
    cfg.cleanup_radius = c.opt_number("radius");
    c.finish();
  }
  cfg.crop_scale = s.number("crop_scale", cfg.crop_scale);
  cfg.mask_dilation = static_cast<int>(s.integer("mask_dilation", cfg.mask_dilation));
  cfg.write_masks = s.boolean("write_masks", cfg.write_masks);
  {
    Section c = s.child("carve");
    cfg.carve.unce_weight = c.number("unce_weight", cfg.carve.unce_weight);
    cfg.carve.step = c.number("step", cfg.carve.step);
    cfg.carve.cull_threshold = c.number("cull_threshold", cfg.carve.cull_threshold);
    cfg.carve.cull_every = static_cast<int>(c.integer("cull_every", cfg.carve.cull_every));
    cfg.carve.max_iters = static_cast<int>(c.integer("max_iters", cfg.carve.max_iters));
    c.finish();
  }
  if (const json* mats = s.find("materials")) {
    if (!mats->is_array()) throw ConfigError("materials: expected an array");
    for (std::size_t i = 0; i < mats->size(); ++i) {
      const std::string path = "materials[" + std::to_string(i) + "]";
      Section m((*mats)[i], path);
      NamedMaterial nm;
      nm.name = m.string("name", "material" + std::to_string(i));
      nm.material.model = parse_model(m.string("model", "fixed_corotated"), m.at("model"));
      nm.material.youngs = m.number("E", nm.material.youngs);
      nm.material.poisson = m.number("nu", nm.material.poisson);
      nm.material.density = m.number("density", nm.material.density);
      nm.material.friction_deg = m.number("friction_deg", nm.material.friction_deg);
      m.finish();
      cfg.materials.push_back(nm);
    }
  } else {
    cfg.materials.push_back({"default", Material{}});
  }
  {
    Section m = s.child("simulation");
    SimulationConfig& sim = cfg.simulation;
    sim.frames = static_cast<int>(m.integer("frames", sim.frames));
    sim.frame_dt = m.number("frame_dt", sim.frame_dt);
    sim.dt = m.number("dt", sim.dt);
    sim.cell_size = m.opt_number("cell_size");
    sim.domain_margin = m.number("domain_margin", sim.domain_margin);
    sim.material = m.string("material", sim.material);
    sim.gravity = m.vec3("gravity", sim.gravity);
    sim.align_gravity = m.boolean("align_gravity", sim.align_gravity);
    sim.ransac_iterations = static_cast<int>(m.integer("ransac_iterations", sim.ransac_iterations));
    sim.ransac_tolerance = m.number("ransac_tolerance", sim.ransac_tolerance);
    m.finish();
  }
  if (const json* imps = s.find("impulses")) {
    if (!imps->is_array()) throw ConfigError("impulses: expected an array");
    for (std::size_t i = 0; i < imps->size(); ++i)
      cfg.impulses.push_back(parse_impulse((*imps)[i], "impulses[" + std::to_string(i) + "]"));
  }
  {
    Section r = s.child("render");
    if (auto p = r.opt_string("camera_path")) cfg.render.camera_path = *p;
    if (const json* cams = r.find("cameras")) {
      if (!cams->is_array()) throw ConfigError("render.cameras: expected an array of indices");
      cfg.render.camera_indices.clear();
      for (std::size_t i = 0; i < cams->size(); ++i)
        cfg.render.camera_indices.push_back(static_cast<int>(
            Section::as_integer((*cams)[i], "render.cameras[" + std::to_string(i) + "]")));
    }
    cfg.render.background = r.vec3("background", cfg.render.background);
    if (r.has("width")) cfg.render.width = static_cast<int>(r.integer("width", 0));
    if (r.has("height")) cfg.render.height = static_cast<int>(r.integer("height", 0));
    r.finish();
  }
  s.finish();
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::filesystem::path base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_config(ss.str(), base);
}

std::vector<Camera> load_cameras(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cameras: cannot open " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("cameras: invalid JSON in " + path.string() + ": " + e.what());
  }
  if (!root.is_array() || root.empty())
    throw FormatError("cameras: expected a non-empty array in " + path.string());
  std::vector<Camera> cams;
  for (std::size_t i = 0; i < root.size(); ++i) {
    const std::string where = "cameras[" + std::to_string(i) + "]";
    const json& c = root[i];
    if (!c.is_object()) throw FormatError(where + ": expected an object");
    for (const char* key : {"K", "R", "t", "width", "height"})
      if (!c.contains(key)) throw FormatError(where + ": missing '" + key + "'");
    Camera cam;
    cam.intrinsics = as_mat3(c["K"], where + ".K");
    cam.rotation = as_mat3(c["R"], where + ".R");
    const json& t = c["t"];
    if (!t.is_array() || t.size() != 3) throw FormatError(where + ".t: expected 3 numbers");
    for (int a = 0; a < 3; ++a) {
      if (!t[a].is_number()) throw FormatError(where + ".t: non-numeric entry");
      cam.translation[a] = t[a].get<double>();
    }
    if (!c["width"].is_number_integer() || !c["height"].is_number_integer())
      throw FormatError(where + ": width and height must be integers");
    cam.width = c["width"].get<int>();
    cam.height = c["height"].get<int>();
    try {
      cam.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    cams.push_back(cam);
  }
  return cams;
}

void save_cameras(const std::vector<Camera>& cameras, const std::filesystem::path& path) {
  json root = json::array();
  for (const Camera& cam : cameras) {
    json c;
    auto mat = [](const Mat3& m) {
      json a = json::array();
      for (int r = 0; r < 3; ++r) a.push_back({m(r, 0), m(r, 1), m(r, 2)});
      return a;
    };
    c["K"] = mat(cam.intrinsics);
    c["R"] = mat(cam.rotation);
    c["t"] = {cam.translation.x(), cam.translation.y(), cam.translation.z()};
    c["width"] = cam.width;
    c["height"] = cam.height;
    root.push_back(c);
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cameras: cannot write " + path.string());
  out << root.dump(2) << '\n';
  if (!out) throw ConfigError("cameras: write failed for " + path.string());
}

}  // namespace dgs
