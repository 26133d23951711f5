#include "dgs/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>

#include "mc_table.hpp"

namespace dgs {

void TriangleMesh::update_normals() {
  normals.resize(triangles.size());
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    const auto& f = triangles[t];
    const Vec3 n = (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]);
    const double len = n.norm();
    normals[t] = len > 0.0 ? Vec3(n / len) : Vec3::Zero();
  }
}

double TriangleMesh::area() const {
  double a = 0.0;
  for (const auto& f : triangles)
    a += 0.5 * (vertices[f[1]] - vertices[f[0]]).cross(vertices[f[2]] - vertices[f[0]]).norm();
  return a;
}

namespace {

std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace

long TriangleMesh::euler_characteristic() const {
  std::vector<char> used(vertices.size(), 0);
  std::unordered_map<std::uint64_t, int> edges;
  for (const auto& f : triangles)
    for (int e = 0; e < 3; ++e) {
      used[f[e]] = 1;
      ++edges[edge_key(f[e], f[(e + 1) % 3])];
    }
  const long v = std::count(used.begin(), used.end(), 1);
  return v - static_cast<long>(edges.size()) + static_cast<long>(triangles.size());
}

bool TriangleMesh::is_closed() const {
  std::unordered_map<std::uint64_t, int> edges;
  for (const auto& f : triangles)
    for (int e = 0; e < 3; ++e) ++edges[edge_key(f[e], f[(e + 1) % 3])];
  for (const auto& [k, n] : edges)
    if (n != 2) return false;
  return !triangles.empty();
}

void TriangleMesh::validate() const {
  for (const auto& f : triangles)
    for (int v : f)
      if (v < 0 || static_cast<std::size_t>(v) >= vertices.size())
        throw ConfigError("mesh: triangle index out of range");
}

TriangleMesh marching_cubes(const IndicatorGrid& grid, double iso) {
  // Lattice points are the cell centers, padded by one ring of zeros.
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  auto value = [&](int i, int j, int k) { return grid.inside(i, j, k) ? grid.at(i, j, k) : 0.0; };
  static constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                        {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  static constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                       {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  // Lattice point ids over [-1, n] per axis; an edge is keyed by its lower
  // endpoint and axis.
  const std::int64_t px = nx + 2, py = ny + 2;
  auto point_id = [&](int i, int j, int k) {
    return ((static_cast<std::int64_t>(k) + 1) * py + (j + 1)) * px + (i + 1);
  };

  struct Slab {
    std::vector<std::int64_t> edges;  // 3 per triangle
  };
  std::vector<Slab> slabs(static_cast<std::size_t>(nz + 1));
#pragma omp parallel for schedule(dynamic)
  for (int k = -1; k < nz; ++k) {
    Slab& slab = slabs[static_cast<std::size_t>(k + 1)];
    for (int j = -1; j < ny; ++j)
      for (int i = -1; i < nx; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (value(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]) < iso) cube |= 1 << c;
        if (cube == 0 || cube == 255) continue;
        const signed char* row = detail::kTriTable[cube];
        for (int t = 0; row[t] != -1; t += 3) {
          // Table winding already faces the low-value side (-grad X).
          for (int e : {row[t], row[t + 1], row[t + 2]}) {
            const int* a = kCorner[kEdge[e][0]];
            const int* b = kCorner[kEdge[e][1]];
            const int lo[3] = {i + std::min(a[0], b[0]), j + std::min(a[1], b[1]),
                               k + std::min(a[2], b[2])};
            const int axis = a[0] != b[0] ? 0 : (a[1] != b[1] ? 1 : 2);
            slab.edges.push_back(point_id(lo[0], lo[1], lo[2]) * 3 + axis);
          }
        }
      }
  }

  TriangleMesh mesh;
  std::unordered_map<std::int64_t, int> vertex_of;
  for (const Slab& slab : slabs) {
    for (std::size_t t = 0; t < slab.edges.size(); t += 3) {
      std::array<int, 3> tri{};
      for (int v = 0; v < 3; ++v) {
        const std::int64_t key = slab.edges[t + v];
        auto [it, fresh] = vertex_of.try_emplace(key, static_cast<int>(mesh.vertices.size()));
        if (fresh) {
          const int axis = static_cast<int>(key % 3);
          std::int64_t p = key / 3;
          const int i = static_cast<int>(p % px) - 1;
          p /= px;
          const int j = static_cast<int>(p % py) - 1;
          const int k = static_cast<int>(p / py) - 1;
          int b[3] = {i, j, k};
          b[axis] += 1;
          const double va = value(i, j, k), vb = value(b[0], b[1], b[2]);
          double s = (iso - va) / (vb - va);
          // Keep vertices off lattice points so welded triangles never collapse.
          s = std::clamp(s, 1e-4, 1.0 - 1e-4);
          const Vec3 pa = grid.cell_center(i, j, k);
          const Vec3 pb = grid.cell_center(b[0], b[1], b[2]);
          mesh.vertices.push_back(pa + s * (pb - pa));
        }
        tri[v] = it->second;
      }
      const Vec3& a = mesh.vertices[tri[0]];
      if (0.5 * (mesh.vertices[tri[1]] - a).cross(mesh.vertices[tri[2]] - a).norm() < 1e-12) continue;
      mesh.triangles.push_back(tri);
    }
  }
  mesh.update_normals();
  return mesh;
}

TriangleMesh crop_mesh_patch(const TriangleMesh& mesh, std::span<const Vec3> points, double scale) {
  if (points.empty()) throw ConfigError("crop_mesh_patch: empty point set");
  if (!(scale >= 0.0)) throw ConfigError("crop_mesh_patch: scale must be non-negative");
  Vec3 lo = points.front(), hi = lo;
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 c = 0.5 * (lo + hi), half = 0.5 * scale * (hi - lo);
  TriangleMesh out;
  std::vector<int> remap(mesh.vertices.size(), -1);
  for (const auto& f : mesh.triangles) {
    const Vec3 centroid = (mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0;
    if (((centroid - c).cwiseAbs() - half).maxCoeff() > 0.0) continue;
    std::array<int, 3> g{};
    for (int v = 0; v < 3; ++v) {
      if (remap[f[v]] < 0) {
        remap[f[v]] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[f[v]]);
      }
      g[v] = remap[f[v]];
    }
    out.triangles.push_back(g);
  }
  out.update_normals();
  return out;
}

BoundKernels mesh_to_gaussians(const TriangleMesh& mesh) {
  mesh.validate();
  BoundKernels out;
  out.kernels.reserve(mesh.triangles.size());
  for (const auto& f : mesh.triangles) {
    const Vec3 &v1 = mesh.vertices[f[0]], &v2 = mesh.vertices[f[1]], &v3 = mesh.vertices[f[2]];
    const Vec3 k = (v1 + v2 + v3) / 3.0;
    const Vec3 n = (v2 - v1).cross(v3 - v1);
    const Vec3 d2 = v2 - k;
    if (n.norm() < 1e-12 || d2.norm() == 0.0) {
      ++out.skipped;
      continue;
    }
    const Vec3 r1 = n.normalized();
    const Vec3 r2 = d2.normalized();
    const Vec3 d3 = v3 - k;
    Vec3 r3 = d3 - r1.dot(d3) * r1 - r2.dot(d3) * r2;
    if (r3.norm() < 1e-15) {
      ++out.skipped;
      continue;
    }
    r3.normalize();
    Mat3 r;
    r.col(0) = r1;
    r.col(1) = r2;
    r.col(2) = r3;
    if (r.determinant() < 0.0) r.col(2) = -r3;
    GaussianKernel g;
    g.center = k;
    g.rotation = Quat(r).normalized();
    g.scales = Vec3(kFlatScale, d2.norm(), std::abs(r.col(2).dot(d3)));
    g.opacity = 1.0;
    out.kernels.push_back(g);
  }
  return out;
}

void write_stl(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write mesh: " + path.string());
  char header[80] = "dgs binary stl";
  out.write(header, 80);
  const auto count = static_cast<std::uint32_t>(mesh.triangles.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto& f : mesh.triangles) {
    const Vec3 n = (mesh.vertices[f[1]] - mesh.vertices[f[0]])
                       .cross(mesh.vertices[f[2]] - mesh.vertices[f[0]])
                       .normalized();
    float rec[12];
    for (int a = 0; a < 3; ++a) rec[a] = static_cast<float>(n[a]);
    for (int v = 0; v < 3; ++v)
      for (int a = 0; a < 3; ++a) rec[3 + v * 3 + a] = static_cast<float>(mesh.vertices[f[v]][a]);
    out.write(reinterpret_cast<const char*>(rec), sizeof rec);
    const std::uint16_t attr = 0;
    out.write(reinterpret_cast<const char*>(&attr), 2);
  }
}

TriangleMesh read_stl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open mesh: " + path.string());
  char header[80];
  std::uint32_t count = 0;
  in.read(header, 80);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in) throw FormatError("truncated STL header: " + path.string());
  TriangleMesh mesh;
  std::map<std::array<float, 3>, int> weld;
  for (std::uint32_t t = 0; t < count; ++t) {
    float rec[12];
    std::uint16_t attr;
    in.read(reinterpret_cast<char*>(rec), sizeof rec);
    in.read(reinterpret_cast<char*>(&attr), 2);
    if (!in) throw FormatError("truncated STL at triangle " + std::to_string(t));
    std::array<int, 3> f{};
    for (int v = 0; v < 3; ++v) {
      const std::array<float, 3> p{rec[3 + v * 3], rec[4 + v * 3], rec[5 + v * 3]};
      auto [it, fresh] = weld.try_emplace(p, static_cast<int>(mesh.vertices.size()));
      if (fresh) mesh.vertices.emplace_back(p[0], p[1], p[2]);
      f[v] = it->second;
    }
    mesh.triangles.push_back(f);
  }
  mesh.update_normals();
  return mesh;
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write mesh: " + path.string());
  out.precision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& f : mesh.triangles)
    out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
}

TriangleMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open mesh: " + path.string());
  TriangleMesh mesh;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z())) throw FormatError("bad OBJ vertex at line " + std::to_string(lineno));
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> ids;
      std::string tok;
      while (ls >> tok) {
        const int id = std::stoi(tok.substr(0, tok.find('/')));
        ids.push_back(id > 0 ? id - 1 : static_cast<int>(mesh.vertices.size()) + id);
      }
      if (ids.size() < 3) throw FormatError("bad OBJ face at line " + std::to_string(lineno));
      for (std::size_t t = 1; t + 1 < ids.size(); ++t) mesh.triangles.push_back({ids[0], ids[t], ids[t + 1]});
    }
  }
  mesh.validate();
  mesh.update_normals();
  return mesh;
}

}  // namespace dgs
