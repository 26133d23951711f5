#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dgs/carve.hpp"
#include "dgs/mpm.hpp"
#include "dgs/poisson.hpp"

namespace dgs {

struct InputConfig {
  std::filesystem::path splats;
  std::filesystem::path cameras;
  std::optional<std::filesystem::path> labels;  // overrides the PLY label property
  int object_label = 1;
};

struct PoissonStageConfig {
  GridDims scene_dims{64, 64, 64};
  GridDims object_dims{64, 64, 64};
  double padding = 0.25;
  PoissonOptions solver;
  ConflictOptions conflict;
};

struct TsdfStageConfig {
  int resolution = 96;           // voxels along the longest axis of the object box
  double truncation_cells = 4.0;
  double min_weight = 2.0;
  double padding = 0.15;         // fraction of the object extent
};

struct NamedMaterial {
  std::string name;
  Material material;
};

struct ImpulseConfig {
  int frame = 0;
  bool whole_object = true;  // region ignored when true
  ImpulseRegion region;
  Vec3 dv = Vec3::Zero();
};

struct SimulationConfig {
  int frames = 10;
  double frame_dt = 1.0 / 24.0;
  double dt = 1e-4;
  std::optional<double> cell_size;  // default: twice the object kernel spacing
  double domain_margin = 1.0;       // fraction of the object extent on each side
  std::string material;             // name in the material table; default the first row
  Vec3 gravity = Vec3(0.0, 0.0, -9.8);
  bool align_gravity = true;
  int ransac_iterations = 500;
  double ransac_tolerance = 0.01;   // fraction of the scene extent
};

struct RenderConfig {
  std::optional<std::filesystem::path> camera_path;  // default: input cameras
  std::vector<int> camera_indices{0};                 // used without a camera path
  Vec3 background = Vec3::Zero();
  std::optional<int> width;   // rescales intrinsics when set with height
  std::optional<int> height;
};

struct PipelineConfig {
  std::filesystem::path base_dir;  // relative paths resolve against this
  InputConfig input;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  PoissonStageConfig poisson;
  TsdfStageConfig tsdf;
  int cleanup_k = 8;
  std::optional<double> cleanup_radius;  // default: twice the object spacing
  double crop_scale = 1.2;
  int mask_dilation = 21;   // side of the inpainting-mask max filter
  bool write_masks = false; // write dilated inpainting masks per view
  CarveConfig carve;
  std::vector<NamedMaterial> materials;
  SimulationConfig simulation;
  std::vector<ImpulseConfig> impulses;
  RenderConfig render;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  const Material& sim_material() const;
  /// Path-qualified ConfigError for the first invalid field. Input files must
  /// exist when `check_files` is set.
  void validate(bool check_files = true) const;
};

/// Parses a JSON config. Unknown keys and wrongly typed values raise
/// ConfigError naming the offending path (e.g. "simulation.dt").
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const std::string& json_text,
                            const std::filesystem::path& base_dir = ".");

/// Camera list JSON: [{"K": 3x3, "R": 3x3, "t": [3], "width": w, "height": h}].
std::vector<Camera> load_cameras(const std::filesystem::path& path);
void save_cameras(const std::vector<Camera>& cameras, const std::filesystem::path& path);

}  // namespace dgs
