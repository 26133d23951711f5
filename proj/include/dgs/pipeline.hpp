#pragma once

#include <cstddef>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "dgs/config.hpp"

namespace dgs {

struct DecoupleReport {
  std::size_t input_kernels = 0;
  std::size_t object_kernels = 0;
  std::size_t scene_kernels = 0;
  std::size_t cleanup_removed = 0;
  std::size_t proxy_points = 0;
  double poisson_cell = 0.0;
  PoissonStats scene_solve;
  PoissonStats object_solve;
  ConflictReport conflicts;
  bool conflict_free = false;
  std::size_t interior_points = 0;
  std::size_t patch_triangles = 0;
  std::size_t patch_kernels = 0;
  std::size_t patch_skipped = 0;
  int carve_iterations = 0;
  int carve_skipped = 0;
  double carve_loss_start = 0.0;
  double carve_loss_end = 0.0;
  std::size_t restored_object_kernels = 0;
  std::size_t restored_scene_kernels = 0;
};

struct SimulateReport {
  std::size_t particles = 0;
  double particle_spacing = 0.0;
  double grid_h = 0.0;
  GridDims grid_dims{0, 0, 0};
  int substeps_per_frame = 0;
  double substep_dt = 0.0;
  std::size_t sticky_nodes = 0;
  Vec3 plane_normal = Vec3::UnitZ();
  std::size_t plane_inliers = 0;
  std::size_t clamped = 0;
  int frames_written = 0;
};

struct RenderReport {
  int images = 0;
  int width = 0;
  int height = 0;
};

/// Output file names relative to the configured output directory.
namespace outputs {
inline constexpr const char* kObject = "object.ply";
inline constexpr const char* kScene = "scene.ply";
inline constexpr const char* kObjectSurface = "object_surface.obj";
inline constexpr const char* kDecoupleReport = "decouple_report.json";
inline constexpr const char* kSimulateReport = "simulate_report.json";
inline constexpr const char* kRenderReport = "render_report.json";
inline constexpr const char* kDiagnostics = "diagnostics.csv";
inline constexpr const char* kSimCameras = "cameras_sim.json";
inline constexpr const char* kFrameDir = "frames";
inline constexpr const char* kRenderDir = "render";
}  // namespace outputs

std::filesystem::path frame_path(const PipelineConfig& cfg, int frame);
std::filesystem::path render_path(const PipelineConfig& cfg, int image);

/// Split, cleanup, proxy fusion, joint Poisson fields, patch binding and
/// carving. Writes the restored object and scene PLYs, the object surface,
/// a JSON report and stage timings (timings_decouple.json, kept apart so the
/// report stays reproducible). Errors carry a "decouple/<step>:" prefix.
DecoupleReport run_decouple(const PipelineConfig& cfg, std::ostream* log = nullptr);

/// Gravity alignment, sticky marking and the MPM loop. Frame f + 1 is the
/// state after advancing one frame from f; impulses configured at frame f are
/// applied at the start of that advance. Writes frames/frame_NNNN.ply (scene
/// and object kernels) and diagnostics.csv.
SimulateReport run_simulate(const PipelineConfig& cfg, std::ostream* log = nullptr);

/// Color render of every frame. With F frames and N poses, max(F, N) images
/// are written, pairing image i with frame min(i, F - 1) and pose min(i, N - 1).
RenderReport run_render(const PipelineConfig& cfg, std::ostream* log = nullptr);

}  // namespace dgs
