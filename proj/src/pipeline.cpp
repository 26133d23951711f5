#include "dgs/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "dgs/carve.hpp"
#include "dgs/grid_io.hpp"
#include "dgs/image_io.hpp"
#include "dgs/kdtree.hpp"
#include "dgs/mesh.hpp"
#include "dgs/mpm.hpp"
#include "dgs/ply.hpp"
#include "dgs/poisson.hpp"
#include "dgs/raster.hpp"
#include "dgs/splat_ops.hpp"
#include "dgs/tsdf.hpp"

namespace dgs {
namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

// Runs one pipeline step, prefixing any error with "<stage>/<step>: " while
// keeping its type (and so the CLI exit code).
template <class Fn>
auto step_of(const std::string& stage, const std::string& name, Fn&& fn) -> decltype(fn()) {
  const std::string prefix = stage + "/" + name + ": ";
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const FormatError& e) {
    throw FormatError(prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  }
}

class Timer {
 public:
  void mark(const std::string& name) {
    const auto now = Clock::now();
    seconds_[name] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
  void write(const std::filesystem::path& path) const {
    json j = json::object();
    for (const auto& [k, v] : seconds_) j[k] = v;
    std::ofstream out(path);
    out << j.dump(2) << '\n';
  }
  double total() const {
    double t = 0.0;
    for (const auto& [k, v] : seconds_) t += v;
    return t;
  }

 private:
  Clock::time_point last_ = Clock::now();
  std::map<std::string, double> seconds_;
};

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw ConfigError("write failed for " + path.string());
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

std::pair<Vec3, Vec3> bounds(std::span<const Vec3> pts) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const Vec3& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return {lo, hi};
}

std::string numbered(const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d%s", stem, i, ext);
  return buf;
}

SplatScene load_input(const PipelineConfig& cfg) {
  SplatScene scene = load_ply(cfg.resolve(cfg.input.splats));
  scene.cameras = load_cameras(cfg.resolve(cfg.input.cameras));
  if (cfg.input.labels) {
    const std::vector<int> labels = load_labels(cfg.resolve(*cfg.input.labels));
    if (labels.size() != scene.kernels.size())
      throw ConfigError("input.labels: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(scene.kernels.size()) + " kernels");
    for (std::size_t i = 0; i < labels.size(); ++i) scene.kernels[i].label = labels[i];
  }
  return scene;
}

Camera rescaled(const Camera& cam, int width, int height) {
  Camera out = cam;
  const double sx = static_cast<double>(width) / cam.width;
  const double sy = static_cast<double>(height) / cam.height;
  // Pixel centers sit at integer coordinates, so the principal point maps
  // through (c + 0.5) s - 0.5.
  out.intrinsics(0, 0) *= sx;
  out.intrinsics(0, 1) *= sx;
  out.intrinsics(0, 2) = (cam.intrinsics(0, 2) + 0.5) * sx - 0.5;
  out.intrinsics(1, 1) *= sy;
  out.intrinsics(1, 2) = (cam.intrinsics(1, 2) + 0.5) * sy - 0.5;
  out.width = width;
  out.height = height;
  return out;
}

}  // namespace

std::filesystem::path frame_path(const PipelineConfig& cfg, int frame) {
  return cfg.resolve(cfg.output_dir) / outputs::kFrameDir / numbered("frame", frame, ".ply");
}

std::filesystem::path render_path(const PipelineConfig& cfg, int image) {
  return cfg.resolve(cfg.output_dir) / outputs::kRenderDir / numbered("frame", image, ".ppm");
}

DecoupleReport run_decouple(const PipelineConfig& cfg, std::ostream* log) {
  const std::string S = "decouple";
  step_of(S, "config", [&] { cfg.validate(true); });
  const std::filesystem::path out = cfg.resolve(cfg.output_dir);
  std::filesystem::create_directories(out);
  Timer timer;
  DecoupleReport rep;
  auto note = [&](const std::string& msg) {
    if (log) *log << "decouple: " << msg << '\n';
  };

  SplatScene input = step_of(S, "load", [&] { return load_input(cfg); });
  rep.input_kernels = input.kernels.size();
  SplitResult parts =
      step_of(S, "split", [&] { return split_object(input.kernels, cfg.input.object_label); });
  if (parts.scene.empty())
    throw ConfigError("decouple/split: no scene kernels remain outside label " +
                      std::to_string(cfg.input.object_label));
  rep.object_kernels = parts.object.size();

  std::vector<GaussianKernel> scene_kernels = step_of(S, "cleanup", [&] {
    CleanupOptions opts;
    opts.k = static_cast<std::size_t>(cfg.cleanup_k);
    opts.radius = cfg.cleanup_radius;
    return knn_residual_cleanup(parts.scene, parts.object, opts);
  });
  rep.cleanup_removed = parts.scene.size() - scene_kernels.size();
  rep.scene_kernels = scene_kernels.size();
  timer.mark("split_cleanup");
  note("object " + std::to_string(rep.object_kernels) + ", scene " +
       std::to_string(rep.scene_kernels) + " kernels, " + std::to_string(rep.cleanup_removed) +
       " removed by cleanup");

  // Full cleaned layout: object kernels first, so their ids are 0..|O|-1.
  std::vector<GaussianKernel> layout = parts.object;
  layout.insert(layout.end(), scene_kernels.begin(), scene_kernels.end());
  std::vector<std::size_t> object_ids(parts.object.size());
  for (std::size_t i = 0; i < object_ids.size(); ++i) object_ids[i] = i;

  // Proxy points from masked unbiased depth.
  std::vector<CarveView> views;
  OrientedPointSet proxy = step_of(S, "proxy", [&] {
    const std::vector<Vec3> obj_centers = centers_of(parts.object);
    auto [lo, hi] = bounds(obj_centers);
    const Vec3 ext = hi - lo;
    const double pad = cfg.tsdf.padding * ext.maxCoeff();
    lo -= Vec3::Constant(pad);
    hi += Vec3::Constant(pad);
    const double cell = (hi - lo).maxCoeff() / cfg.tsdf.resolution;
    if (!(cell > 0.0)) throw NumericalError("degenerate object bounding box");
    GridDims dims;
    for (int a = 0; a < 3; ++a)
      dims[a] = std::max(8, static_cast<int>(std::ceil((hi - lo)[a] / cell)));
    TsdfVolume vol(lo, cell, dims, cfg.tsdf.truncation_cells * cell);
    if (cfg.write_masks) std::filesystem::create_directories(out / "masks");
    for (std::size_t v = 0; v < input.cameras.size(); ++v) {
      const Camera& cam = input.cameras[v];
      const RasterImage depth = render_unbiased_depth(layout, cam);
      const RasterImage mask = render_projected_mask(layout, object_ids, cam);
      const RasterImage color = render_color(layout, cam);
      integrate_depth(vol, depth, mask, cam, &color);

      RasterImage gt = render_opacity_silhouette(parts.object, cam);
      for (double& a : gt.values) a = a > 0.5 ? 1.0 : 0.0;
      if (cfg.write_masks) {
        write_pgm(dilate_mask(mask, cfg.mask_dilation),
                  out / "masks" / numbered("inpaint", static_cast<int>(v), ".pgm"));
        write_pgm(gt, out / "masks" / numbered("object", static_cast<int>(v), ".pgm"));
      }
      views.push_back({cam, std::move(gt)});
    }
    ProxyOptions popts;
    popts.min_weight = cfg.tsdf.min_weight;
    OrientedPointSet pts = extract_proxy_points(vol, popts);
    if (pts.size() < 50)
      throw NumericalError("only " + std::to_string(pts.size()) +
                           " proxy points fused; at least 50 are needed");
    return pts;
  });
  rep.proxy_points = proxy.size();
  timer.mark("proxy_tsdf");
  note(std::to_string(rep.proxy_points) + " proxy points");

  // Joint Poisson fields.
  IndicatorGrid scene_field = step_of(S, "poisson_scene", [&] {
    OrientedPointSet pts;
    pts.positions = centers_of(scene_kernels);
    pts.normals = disambiguate_normals(scene_kernels, input.cameras);
    return build_indicator(pts, cfg.poisson.scene_dims, cfg.poisson.padding, cfg.poisson.solver,
                           &rep.scene_solve);
  });
  rep.poisson_cell = scene_field.cell;
  IndicatorGrid object_field = step_of(S, "poisson_object", [&] {
    OrientedPointSet pts = proxy;
    pts.colors.clear();
    return build_indicator(pts, cfg.poisson.object_dims, cfg.poisson.padding, cfg.poisson.solver,
                           &rep.object_solve);
  });
  timer.mark("poisson_solve");
  auto [scene_resolved, object_resolved] = step_of(S, "conflicts", [&] {
    const IndicatorGrid object_in_scene = remap_grid(object_field, scene_field);
    return resolve_conflicts(scene_field, object_in_scene, cfg.poisson.conflict, &rep.conflicts);
  });
  rep.conflict_free =
      count_conflicts(scene_resolved, object_resolved, cfg.poisson.conflict.connectivity) == 0;
  save_indicator(scene_resolved, out / "indicator_scene.vol");
  save_indicator(object_resolved, out / "indicator_object.vol");
  timer.mark("conflicts");
  note("poisson cell " + std::to_string(rep.poisson_cell) + ", conflict-free " +
       (rep.conflict_free ? "yes" : "no"));

  const std::vector<Vec3> interior = extract_interior_points(object_resolved);
  if (interior.empty())
    throw NumericalError("decouple/interior: the object field has no interior cells");
  rep.interior_points = interior.size();

  // Scene patch under the object.
  std::vector<GaussianKernel> patch = step_of(S, "patch", [&] {
    const TriangleMesh mesh = marching_cubes(scene_resolved);
    const TriangleMesh cropped = crop_mesh_patch(mesh, interior, cfg.crop_scale);
    rep.patch_triangles = cropped.triangles.size();
    BoundKernels bound = mesh_to_gaussians(cropped);
    rep.patch_skipped = bound.skipped;
    const KdTree tree(centers_of(scene_kernels));
    for (GaussianKernel& k : bound.kernels) {
      const GaussianKernel& src = scene_kernels[tree.nearest(k.center).index];
      k.sh = src.sh;
      k.label = src.label;
    }
    return std::move(bound.kernels);
  });
  rep.patch_kernels = patch.size();
  write_obj(marching_cubes(object_resolved), out / outputs::kObjectSurface);
  timer.mark("patch");

  // Restored object: isometric kernels on interior and proxy points, carved.
  CarveResult carved = step_of(S, "carve", [&] {
    std::vector<Vec3> points = interior;
    points.insert(points.end(), proxy.positions.begin(), proxy.positions.end());
    std::vector<GaussianKernel> kernels = isometric_init(points, rep.poisson_cell);
    const std::vector<ShColor> sh = interpolate_interior_sh(points, proxy);
    for (std::size_t i = 0; i < kernels.size(); ++i) {
      kernels[i].sh = sh[i];
      kernels[i].label = cfg.input.object_label;
    }
    CarveConfig cc = cfg.carve;
    cc.seed = cfg.seed;
    std::ofstream carve_log(out / "carve_log.csv");
    return carve(std::move(kernels), views, cc, &carve_log);
  });
  rep.carve_iterations = carved.iterations;
  rep.carve_skipped = carved.skipped;
  if (!carved.validation_loss.empty()) {
    rep.carve_loss_start = carved.validation_loss.front();
    rep.carve_loss_end = carved.validation_loss.back();
  }
  timer.mark("carve");

  std::vector<GaussianKernel> restored_scene = scene_kernels;
  restored_scene.insert(restored_scene.end(), patch.begin(), patch.end());
  rep.restored_object_kernels = carved.kernels.size();
  rep.restored_scene_kernels = restored_scene.size();
  step_of(S, "write", [&] {
    save_ply(carved.kernels, out / outputs::kObject);
    save_ply(restored_scene, out / outputs::kScene);
  });

  json j;
  j["input_kernels"] = rep.input_kernels;
  j["object_kernels"] = rep.object_kernels;
  j["scene_kernels"] = rep.scene_kernels;
  j["cleanup_removed"] = rep.cleanup_removed;
  j["proxy_points"] = rep.proxy_points;
  j["poisson_cell"] = rep.poisson_cell;
  j["scene_solve"] = {{"iterations", rep.scene_solve.iterations},
                      {"relative_residual", rep.scene_solve.relative_residual}};
  j["object_solve"] = {{"iterations", rep.object_solve.iterations},
                       {"relative_residual", rep.object_solve.relative_residual}};
  j["conflicts"] = {{"tau", rep.conflicts.tau},
                    {"scene_cells_lowered", rep.conflicts.scene_cells_lowered},
                    {"object_cells_lowered", rep.conflicts.object_cells_lowered},
                    {"remaining", rep.conflicts.remaining_conflicts},
                    {"conflict_free", rep.conflict_free}};
  j["interior_points"] = rep.interior_points;
  j["patch"] = {{"triangles", rep.patch_triangles},
                {"kernels", rep.patch_kernels},
                {"skipped", rep.patch_skipped}};
  j["carve"] = {{"iterations", rep.carve_iterations},
                {"skipped", rep.carve_skipped},
                {"validation_loss_start", rep.carve_loss_start},
                {"validation_loss_end", rep.carve_loss_end}};
  j["restored_object_kernels"] = rep.restored_object_kernels;
  j["restored_scene_kernels"] = rep.restored_scene_kernels;
  write_json(j, out / outputs::kDecoupleReport);
  timer.mark("write");
  timer.write(out / "timings_decouple.json");
  note("restored object " + std::to_string(rep.restored_object_kernels) + ", scene " +
       std::to_string(rep.restored_scene_kernels) + " kernels");
  return rep;
}

SimulateReport run_simulate(const PipelineConfig& cfg, std::ostream* log) {
  const std::string S = "simulate";
  step_of(S, "config", [&] { cfg.validate(true); });
  const std::filesystem::path out = cfg.resolve(cfg.output_dir);
  Timer timer;
  SimulateReport rep;
  auto note = [&](const std::string& msg) {
    if (log) *log << "simulate: " << msg << '\n';
  };
  const Material material = step_of(S, "config", [&] { return cfg.sim_material(); });

  std::vector<GaussianKernel> object, scene;
  std::vector<Camera> cameras;
  double spacing = 0.0;
  step_of(S, "load", [&] {
    for (const char* name : {outputs::kObject, outputs::kScene})
      if (!std::filesystem::exists(out / name))
        throw ConfigError("missing " + (out / name).string() + "; run decouple first");
    object = load_ply(out / outputs::kObject).kernels;
    scene = load_ply(out / outputs::kScene).kernels;
    cameras = load_cameras(cfg.resolve(cfg.input.cameras));
    if (object.empty()) throw ConfigError("restored object is empty");
    const std::filesystem::path rp = out / outputs::kDecoupleReport;
    if (std::filesystem::exists(rp)) {
      std::ifstream in(rp);
      const json j = json::parse(in, nullptr, false);
      if (j.is_object() && j.contains("poisson_cell") && j["poisson_cell"].is_number())
        spacing = j["poisson_cell"].get<double>();
    }
    if (!(spacing > 0.0)) spacing = median_nn_spacing(centers_of(object));
    if (!(spacing > 0.0)) throw NumericalError("cannot infer the particle spacing");
  });
  rep.particle_spacing = spacing;

  std::optional<double> floor_z;
  step_of(S, "align", [&] {
    if (!cfg.simulation.align_gravity || scene.size() < 3) return;
    const std::vector<Vec3> pts = centers_of(scene);
    auto [lo, hi] = bounds(pts);
    const Plane plane = ransac_plane(pts, cfg.simulation.ransac_iterations,
                                     cfg.simulation.ransac_tolerance * (hi - lo).norm(), cfg.seed);
    SplatScene all;
    all.kernels = scene;
    all.kernels.insert(all.kernels.end(), object.begin(), object.end());
    all.cameras = cameras;
    const SplatScene aligned = gravity_align(all, plane);
    scene.assign(aligned.kernels.begin(), aligned.kernels.begin() + scene.size());
    object.assign(aligned.kernels.begin() + scene.size(), aligned.kernels.end());
    cameras = aligned.cameras;
    floor_z = plane.centroid.z();
    rep.plane_normal = plane.normal;
    rep.plane_inliers = plane.inliers;
  });
  save_cameras(cameras, out / outputs::kSimCameras);

  MpmState state;
  step_of(S, "setup", [&] {
    const double h = cfg.simulation.cell_size.value_or(2.0 * spacing);
    const std::vector<Vec3> obj_pts = centers_of(object);
    auto [lo, hi] = bounds(obj_pts);
    const double margin = cfg.simulation.domain_margin * (hi - lo).maxCoeff();
    lo -= Vec3::Constant(margin);
    hi += Vec3::Constant(margin);
    const int pad = kBoundaryBand + 1;
    std::array<int, 3> dims;
    for (int a = 0; a < 3; ++a) {
      dims[a] = static_cast<int>(std::ceil((hi - lo)[a] / h)) + 1 + 2 * pad;
      if (dims[a] > 512)
        throw ConfigError("simulation.cell_size: grid would need " + std::to_string(dims[a]) +
                          " nodes along an axis (limit 512)");
    }
    state.grid = MpmGrid(lo - pad * h * Vec3::Ones(), h, dims);
    state.materials = {material};
    state.gravity = cfg.simulation.gravity;
    state.boundaries = true;
    const double volume = spacing * spacing * spacing;
    state.particles.reserve(object.size());
    for (std::size_t i = 0; i < object.size(); ++i) {
      Particle p;
      p.x = object[i].center;
      p.volume = volume;
      p.mass = volume * material.density;
      p.material = 0;
      p.kernel = static_cast<std::int64_t>(i);
      state.particles.push_back(p);
    }
    rep.sticky_nodes = mark_sticky_nodes(state.grid, centers_of(scene));
    rep.grid_h = h;
    rep.grid_dims = dims;
    rep.particles = state.particles.size();
  });

  const int substeps = std::max(
      1, static_cast<int>(std::ceil(cfg.simulation.frame_dt / cfg.simulation.dt - 1e-9)));
  const double sub_dt = cfg.simulation.frame_dt / substeps;
  rep.substeps_per_frame = substeps;
  rep.substep_dt = sub_dt;
  note(std::to_string(rep.particles) + " particles, grid " + std::to_string(rep.grid_dims[0]) +
       "x" + std::to_string(rep.grid_dims[1]) + "x" + std::to_string(rep.grid_dims[2]) + ", " +
       std::to_string(substeps) + " substeps per frame");

  std::filesystem::create_directories(out / outputs::kFrameDir);
  std::ofstream diag(out / outputs::kDiagnostics);
  diag.precision(17);
  diag << "frame,mass,momentum_x,momentum_y,momentum_z,kinetic,max_penetration\n";
  auto snapshot = [&](int frame) {
    std::vector<GaussianKernel> kernels = scene;
    const std::vector<GaussianKernel> moved = advect_gaussians(object, state.particles);
    kernels.insert(kernels.end(), moved.begin(), moved.end());
    save_ply(kernels, frame_path(cfg, frame));
    const MpmDiagnostics d = diagnose(state, floor_z);
    diag << frame << ',' << d.mass << ',' << d.momentum.x() << ',' << d.momentum.y() << ','
         << d.momentum.z() << ',' << d.kinetic << ',' << d.max_penetration << '\n';
    ++rep.frames_written;
  };
  step_of(S, "frame_0", [&] { snapshot(0); });
  for (int f = 0; f < cfg.simulation.frames; ++f) {
    step_of(S, "frame_" + std::to_string(f + 1), [&] {
      for (const ImpulseConfig& imp : cfg.impulses) {
        if (imp.frame != f) continue;
        if (imp.whole_object)
          for (Particle& p : state.particles) p.v += imp.dv;
        else
          apply_impulse(state.particles, imp.region, imp.dv);
      }
      for (int s = 0; s < substeps; ++s) step(state, sub_dt);
      snapshot(f + 1);
    });
  }
  rep.clamped = state.clamped;
  timer.mark("simulate");

  json j;
  j["particles"] = rep.particles;
  j["particle_spacing"] = rep.particle_spacing;
  j["grid_h"] = rep.grid_h;
  j["grid_dims"] = rep.grid_dims;
  j["substeps_per_frame"] = rep.substeps_per_frame;
  j["substep_dt"] = rep.substep_dt;
  j["sticky_nodes"] = rep.sticky_nodes;
  j["plane_normal"] = vec_json(rep.plane_normal);
  j["plane_inliers"] = rep.plane_inliers;
  j["clamped_stencils"] = rep.clamped;
  j["frames_written"] = rep.frames_written;
  write_json(j, out / outputs::kSimulateReport);
  timer.write(out / "timings_simulate.json");
  note(std::to_string(rep.frames_written) + " frames written");
  return rep;
}

RenderReport run_render(const PipelineConfig& cfg, std::ostream* log) {
  const std::string S = "render";
  step_of(S, "config", [&] { cfg.validate(true); });
  const std::filesystem::path out = cfg.resolve(cfg.output_dir);
  Timer timer;
  RenderReport rep;

  const int frames = cfg.simulation.frames + 1;
  step_of(S, "frames", [&] {
    for (int f = 0; f < frames; ++f)
      if (!std::filesystem::exists(frame_path(cfg, f)))
        throw ConfigError("missing frame " + frame_path(cfg, f).string() +
                          "; run simulate first");
  });

  const std::vector<Camera> poses = step_of(S, "cameras", [&] {
    std::vector<Camera> list;
    if (cfg.render.camera_path) {
      list = load_cameras(cfg.resolve(*cfg.render.camera_path));
    } else {
      const std::filesystem::path sim = out / outputs::kSimCameras;
      const std::vector<Camera> base =
          std::filesystem::exists(sim) ? load_cameras(sim) : load_cameras(cfg.resolve(cfg.input.cameras));
      for (std::size_t i = 0; i < cfg.render.camera_indices.size(); ++i) {
        const int idx = cfg.render.camera_indices[i];
        if (idx >= static_cast<int>(base.size()))
          throw ConfigError("render.cameras[" + std::to_string(i) + "]: index " +
                            std::to_string(idx) + " out of range (" + std::to_string(base.size()) +
                            " cameras)");
        list.push_back(base[static_cast<std::size_t>(idx)]);
      }
    }
    if (list.empty()) throw ConfigError("render.camera_path: no cameras");
    if (cfg.render.width)
      for (Camera& c : list) c = rescaled(c, *cfg.render.width, *cfg.render.height);
    return list;
  });

  std::filesystem::create_directories(out / outputs::kRenderDir);
  const int images = std::max(frames, static_cast<int>(poses.size()));
  int loaded = -1;
  std::vector<GaussianKernel> kernels;
  for (int i = 0; i < images; ++i) {
    const int f = std::min(i, frames - 1);
    const Camera& cam = poses[static_cast<std::size_t>(std::min<int>(i, poses.size() - 1))];
    step_of(S, "image_" + std::to_string(i), [&] {
      if (f != loaded) {
        kernels = load_ply(frame_path(cfg, f)).kernels;
        loaded = f;
      }
      write_ppm(render_color(kernels, cam, cfg.render.background), render_path(cfg, i));
    });
    rep.width = cam.width;
    rep.height = cam.height;
  }
  rep.images = images;
  timer.mark("render");
  write_json({{"images", rep.images}, {"width", rep.width}, {"height", rep.height}},
             out / outputs::kRenderReport);
  timer.write(out / "timings_render.json");
  if (log) *log << "render: " << images << " images\n";
  return rep;
}

}  // namespace dgs
