#pragma once

#include <filesystem>
#include <vector>

#include "dgs/types.hpp"

namespace dgs {

/// Reads a binary little-endian splat PLY in the usual training-output
/// layout: logit opacity, log scales, wxyz quaternion, f_dc_* and f_rest_*
/// stored channel-major. An optional integer `label` property is honored.
SplatScene load_ply(const std::filesystem::path& path);

/// Writes the inverse of load_ply. Always emits degree-3 SH and a label
/// property. Encoded floats are chosen so that load/save is a fixed point.
void save_ply(const SplatScene& scene, const std::filesystem::path& path);
void save_ply(const std::vector<GaussianKernel>& kernels, const std::filesystem::path& path);

/// Label sidecars: `.csv` files hold one integer per line, anything else is
/// a flat array of little-endian int32.
std::vector<int> load_labels(const std::filesystem::path& path);
void save_labels(const std::vector<int>& labels, const std::filesystem::path& path);

}  // namespace dgs
