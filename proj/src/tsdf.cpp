#include "dgs/tsdf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dgs/grid_io.hpp"
#include "dgs/kdtree.hpp"

namespace dgs {

TsdfVolume::TsdfVolume(const Vec3& origin_, double cell_, const GridDims& dims_, double truncation_)
    : origin(origin_), cell(cell_), dims(dims_), truncation(truncation_ > 0.0 ? truncation_ : 4.0 * cell_) {
  if (!(cell > 0.0)) throw ConfigError("tsdf: cell size must be positive");
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0) throw ConfigError("tsdf: dims must be positive");
  if (!(truncation > cell)) throw ConfigError("tsdf: truncation must exceed the cell size");
  sdf.assign(size(), 1.0);
  weight.assign(size(), 0.0);
  color.assign(size(), Vec3::Zero());
}

void integrate_depth(TsdfVolume& vol, const RasterImage& depth, const RasterImage& mask,
                     const Camera& camera, const RasterImage* color) {
  if (depth.width != camera.width || depth.height != camera.height || mask.width != camera.width ||
      mask.height != camera.height)
    throw ConfigError("integrate_depth: image size does not match camera");
  if (color && (color->width != camera.width || color->height != camera.height || color->channels < 3))
    throw ConfigError("integrate_depth: color image must be 3-channel and match the camera");
  const Mat3& k = camera.intrinsics;
#pragma omp parallel for schedule(static)
  for (int z = 0; z < vol.dims[2]; ++z)
    for (int y = 0; y < vol.dims[1]; ++y)
      for (int x = 0; x < vol.dims[0]; ++x) {
        const Vec3 pc = camera.to_camera(vol.voxel_center(x, y, z));
        if (!(pc.z() > 0.0)) continue;
        const Vec3 uvw = k * pc;
        const long u = std::lround(uvw.x() / pc.z());
        const long v = std::lround(uvw.y() / pc.z());
        if (u < 0 || v < 0 || u >= camera.width || v >= camera.height) continue;
        const int ui = static_cast<int>(u), vi = static_cast<int>(v);
        if (!(mask.at(ui, vi) > 0.5)) continue;
        const double d = depth.at(ui, vi, 0);
        if (depth.channels > 1 ? !(depth.at(ui, vi, 1) > 0.5) : !(d > 0.0)) continue;
        const double raw = (d - pc.z()) / vol.truncation;
        if (raw < -1.0) continue;
        const double s = std::min(raw, 1.0);
        const std::size_t c = vol.index(x, y, z);
        const double w = vol.weight[c];
        vol.sdf[c] = (vol.sdf[c] * w + s) / (w + 1.0);
        if (color) {
          const Vec3 rgb(color->at(ui, vi, 0), color->at(ui, vi, 1), color->at(ui, vi, 2));
          vol.color[c] = (vol.color[c] * w + rgb) / (w + 1.0);
        }
        vol.weight[c] = w + 1.0;
      }
}

namespace {

Vec3 sdf_gradient(const TsdfVolume& vol, int i, int j, int k) {
  Vec3 g = Vec3::Zero();
  const int idx[3] = {i, j, k};
  for (int a = 0; a < 3; ++a) {
    int lo[3] = {i, j, k}, hi[3] = {i, j, k};
    lo[a] = idx[a] - 1;
    hi[a] = idx[a] + 1;
    auto ok = [&](const int* p) {
      return p[a] >= 0 && p[a] < vol.dims[a] && vol.weight[vol.index(p[0], p[1], p[2])] > 0.0;
    };
    const bool has_lo = ok(lo), has_hi = ok(hi);
    if (!has_lo) lo[a] = idx[a];
    if (!has_hi) hi[a] = idx[a];
    const int span = hi[a] - lo[a];
    if (span > 0)
      g[a] = (vol.sdf[vol.index(hi[0], hi[1], hi[2])] - vol.sdf[vol.index(lo[0], lo[1], lo[2])]) / span;
  }
  return g;
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t x) {
  while (parent[x] != x) x = parent[x] = parent[parent[x]];
  return x;
}

}  // namespace

OrientedPointSet extract_proxy_points(const TsdfVolume& vol, const ProxyOptions& opts) {
  OrientedPointSet out;
  for (int k = 0; k < vol.dims[2]; ++k)
    for (int j = 0; j < vol.dims[1]; ++j)
      for (int i = 0; i < vol.dims[0]; ++i) {
        const std::size_t a = vol.index(i, j, k);
        if (vol.weight[a] < opts.min_weight) continue;
        for (int axis = 0; axis < 3; ++axis) {
          int n[3] = {i, j, k};
          if (++n[axis] >= vol.dims[axis]) continue;
          const std::size_t b = vol.index(n[0], n[1], n[2]);
          if (vol.weight[b] < opts.min_weight) continue;
          const double sa = vol.sdf[a], sb = vol.sdf[b];
          if ((sa >= 0.0) == (sb >= 0.0)) continue;
          const double t = sa / (sa - sb);
          const Vec3 grad = (1.0 - t) * sdf_gradient(vol, i, j, k) + t * sdf_gradient(vol, n[0], n[1], n[2]);
          if (!(grad.norm() > 0.0)) continue;
          out.positions.push_back((1.0 - t) * vol.voxel_center(i, j, k) + t * vol.voxel_center(n[0], n[1], n[2]));
          out.normals.push_back(grad.normalized());
          out.colors.push_back((1.0 - t) * vol.color[a] + t * vol.color[b]);
        }
      }
  if (!opts.largest_component || out.positions.size() < 2) return out;

  const KdTree tree(out.positions);
  std::vector<std::size_t> parent(out.size());
  std::iota(parent.begin(), parent.end(), 0);
  const double r2 = 4.0 * vol.cell * vol.cell;
  for (std::size_t p = 0; p < out.size(); ++p)
    for (const Neighbor& nb : tree.radius(out.positions[p], r2)) {
      const std::size_t ra = find_root(parent, p), rb = find_root(parent, nb.index);
      if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
  std::vector<std::size_t> count(out.size(), 0);
  for (std::size_t p = 0; p < out.size(); ++p) ++count[find_root(parent, p)];
  const std::size_t best =
      static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
  OrientedPointSet kept;
  for (std::size_t p = 0; p < out.size(); ++p)
    if (find_root(parent, p) == best) {
      kept.positions.push_back(out.positions[p]);
      kept.normals.push_back(out.normals[p]);
      kept.colors.push_back(out.colors[p]);
    }
  return kept;
}

void save_tsdf(const TsdfVolume& vol, const std::filesystem::path& path) {
  VolumeFile f;
  f.origin = vol.origin;
  f.cell = vol.cell;
  f.dims = vol.dims;
  f.channels = 5;
  f.data.reserve(vol.size() * 5);
  for (std::size_t c = 0; c < vol.size(); ++c) {
    f.data.push_back(static_cast<float>(vol.sdf[c]));
    f.data.push_back(static_cast<float>(vol.weight[c]));
    for (int ch = 0; ch < 3; ++ch) f.data.push_back(static_cast<float>(vol.color[c][ch]));
  }
  write_volume(f, path);
}

TsdfVolume load_tsdf(const std::filesystem::path& path, double truncation) {
  const VolumeFile f = read_volume(path);
  if (f.channels != 5) throw FormatError("tsdf volume must have 5 channels: " + path.string());
  TsdfVolume vol(f.origin, f.cell, f.dims, truncation);
  for (std::size_t c = 0; c < vol.size(); ++c) {
    vol.sdf[c] = f.data[c * 5];
    vol.weight[c] = f.data[c * 5 + 1];
    vol.color[c] = Vec3(f.data[c * 5 + 2], f.data[c * 5 + 3], f.data[c * 5 + 4]);
  }
  return vol;
}

}  // namespace dgs
