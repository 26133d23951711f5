#include "dgs/poisson.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dgs/kdtree.hpp"

namespace dgs {

IndicatorGrid::IndicatorGrid(const Vec3& origin_, double cell_, const GridDims& dims_, double fill)
    : origin(origin_), cell(cell_), dims(dims_) {
  values.assign(size(), fill);
}

double IndicatorGrid::sample(const Vec3& p) const {
  const Vec3 g = (p - origin) / cell - Vec3::Constant(0.5);
  const int i0 = static_cast<int>(std::floor(g.x()));
  const int j0 = static_cast<int>(std::floor(g.y()));
  const int k0 = static_cast<int>(std::floor(g.z()));
  const double fx = g.x() - i0, fy = g.y() - j0, fz = g.z() - k0;
  double v = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
    const int i = i0 + di, j = j0 + dj, k = k0 + dk;
    if (!inside(i, j, k)) continue;
    const double w = (di ? fx : 1.0 - fx) * (dj ? fy : 1.0 - fy) * (dk ? fz : 1.0 - fz);
    v += w * at(i, j, k);
  }
  return v;
}

Vec3 IndicatorGrid::gradient(int i, int j, int k) const {
  Vec3 g;
  const int idx[3] = {i, j, k};
  for (int a = 0; a < 3; ++a) {
    int lo[3] = {i, j, k}, hi[3] = {i, j, k};
    lo[a] = std::max(0, idx[a] - 1);
    hi[a] = std::min(dims[a] - 1, idx[a] + 1);
    const double span = (hi[a] - lo[a]) * cell;
    g[a] = span > 0.0 ? (at(hi[0], hi[1], hi[2]) - at(lo[0], lo[1], lo[2])) / span : 0.0;
  }
  return g;
}

void OrientedPointSet::validate() const {
  if (normals.size() != positions.size())
    throw ConfigError("oriented points: normals/positions length mismatch");
  if (!areas.empty() && areas.size() != positions.size())
    throw ConfigError("oriented points: areas/positions length mismatch");
  for (std::size_t i = 0; i < normals.size(); ++i)
    if (std::abs(normals[i].norm() - 1.0) > 1e-6)
      throw ConfigError("oriented points: normal " + std::to_string(i) + " is not unit length");
}

namespace {

/// Order-independent (thread-count independent) sum of products.
double dot(const std::vector<double>& a, const std::vector<double>& b) {
  constexpr std::size_t kChunk = 4096;
  const std::size_t chunks = (a.size() + kChunk - 1) / kChunk;
  std::vector<double> partial(chunks, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(chunks); ++c) {
    const std::size_t end = std::min(a.size(), (c + 1) * kChunk);
    double s = 0.0;
    for (std::size_t i = c * kChunk; i < end; ++i) s += a[i] * b[i];
    partial[c] = s;
  }
  double s = 0.0;
  for (double p : partial) s += p;
  return s;
}

/// One level of the (-laplacian * scale + diag) operator with zero ghosts.
struct Level {
  GridDims n;
  double lap_scale = 1.0;
  std::vector<double> diag;  // screening term
  std::vector<double> x, b, r;

  std::size_t size() const { return static_cast<std::size_t>(n[0]) * n[1] * n[2]; }
  std::size_t id(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * n[1] + j) * n[0] + i;
  }
  double neighbors(const std::vector<double>& u, int i, int j, int k) const {
    const std::size_t c = id(i, j, k);
    const std::size_t sy = n[0], sz = static_cast<std::size_t>(n[0]) * n[1];
    double s = 0.0;
    if (i > 0) s += u[c - 1];
    if (i + 1 < n[0]) s += u[c + 1];
    if (j > 0) s += u[c - sy];
    if (j + 1 < n[1]) s += u[c + sy];
    if (k > 0) s += u[c - sz];
    if (k + 1 < n[2]) s += u[c + sz];
    return s;
  }

  void apply(const std::vector<double>& u, std::vector<double>& out) const {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < n[2]; ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i) {
          const std::size_t c = id(i, j, k);
          out[c] = lap_scale * (6.0 * u[c] - neighbors(u, i, j, k)) + diag[c] * u[c];
        }
  }

  void residual() {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < n[2]; ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i) {
          const std::size_t c = id(i, j, k);
          r[c] = b[c] - (lap_scale * (6.0 * x[c] - neighbors(x, i, j, k)) + diag[c] * x[c]);
        }
  }

  /// Gauss-Seidel over one color ((i + j + k) % 2 == parity).
  void relax_color(int parity) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < n[2]; ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = (j + k + parity) & 1; i < n[0]; i += 2) {
          const std::size_t c = id(i, j, k);
          x[c] = (b[c] + lap_scale * neighbors(x, i, j, k)) / (6.0 * lap_scale + diag[c]);
        }
  }
};

/// Symmetric V-cycle: red-black GS forward before, reversed after.
class Multigrid {
 public:
  Multigrid(const GridDims& dims, std::vector<double> diag) {
    Level fine;
    fine.n = dims;
    fine.diag = std::move(diag);
    levels_.push_back(std::move(fine));
    while (true) {
      const Level& f = levels_.back();
      const bool even = f.n[0] % 2 == 0 && f.n[1] % 2 == 0 && f.n[2] % 2 == 0;
      if (!even || std::min({f.n[0], f.n[1], f.n[2]}) < 8) break;
      Level c;
      c.n = {f.n[0] / 2, f.n[1] / 2, f.n[2] / 2};
      c.lap_scale = f.lap_scale * 0.25;
      c.diag.assign(c.size(), 0.0);
      for (int k = 0; k < c.n[2]; ++k)
        for (int j = 0; j < c.n[1]; ++j)
          for (int i = 0; i < c.n[0]; ++i) {
            double s = 0.0;
            for (int d = 0; d < 8; ++d)
              s += f.diag[f.id(2 * i + (d & 1), 2 * j + ((d >> 1) & 1), 2 * k + ((d >> 2) & 1))];
            c.diag[c.id(i, j, k)] = s / 8.0;
          }
      levels_.push_back(std::move(c));
    }
    for (auto& l : levels_) {
      l.x.assign(l.size(), 0.0);
      l.b.assign(l.size(), 0.0);
      l.r.assign(l.size(), 0.0);
    }
  }

  void precondition(const std::vector<double>& r, std::vector<double>& z) {
    levels_[0].b = r;
    vcycle(0);
    z = levels_[0].x;
  }

 private:
  static constexpr int kSmooth = 2;
  static constexpr int kCoarseSweeps = 30;

  void vcycle(std::size_t l) {
    Level& lv = levels_[l];
    std::fill(lv.x.begin(), lv.x.end(), 0.0);
    if (l + 1 == levels_.size()) {
      for (int s = 0; s < kCoarseSweeps; ++s) {
        lv.relax_color(0);
        lv.relax_color(1);
        lv.relax_color(1);
        lv.relax_color(0);
      }
      return;
    }
    for (int s = 0; s < kSmooth; ++s) {
      lv.relax_color(0);
      lv.relax_color(1);
    }
    lv.residual();
    Level& c = levels_[l + 1];
    restrict_to(lv, c);
    vcycle(l + 1);
    prolong_add(c, lv);
    for (int s = 0; s < kSmooth; ++s) {
      lv.relax_color(1);
      lv.relax_color(0);
    }
  }

  // Cell-centered trilinear prolongation P and restriction R = P^T / 8.
  static void restrict_to(const Level& f, Level& c) {
    static constexpr double w[4] = {0.25, 0.75, 0.75, 0.25};
#pragma omp parallel for schedule(static)
    for (int k = 0; k < c.n[2]; ++k)
      for (int j = 0; j < c.n[1]; ++j)
        for (int i = 0; i < c.n[0]; ++i) {
          double s = 0.0;
          for (int dk = 0; dk < 4; ++dk) {
            const int fk = 2 * k - 1 + dk;
            if (fk < 0 || fk >= f.n[2]) continue;
            for (int dj = 0; dj < 4; ++dj) {
              const int fj = 2 * j - 1 + dj;
              if (fj < 0 || fj >= f.n[1]) continue;
              for (int di = 0; di < 4; ++di) {
                const int fi = 2 * i - 1 + di;
                if (fi < 0 || fi >= f.n[0]) continue;
                s += w[di] * w[dj] * w[dk] * f.r[f.id(fi, fj, fk)];
              }
            }
          }
          c.b[c.id(i, j, k)] = s / 8.0;
        }
  }

  static void prolong_add(const Level& c, Level& f) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < f.n[2]; ++k)
      for (int j = 0; j < f.n[1]; ++j)
        for (int i = 0; i < f.n[0]; ++i) {
          const int ci[2] = {i / 2, i / 2 + ((i & 1) ? 1 : -1)};
          const int cj[2] = {j / 2, j / 2 + ((j & 1) ? 1 : -1)};
          const int ck[2] = {k / 2, k / 2 + ((k & 1) ? 1 : -1)};
          double s = 0.0;
          for (int a = 0; a < 2; ++a) {
            if (ck[a] < 0 || ck[a] >= c.n[2]) continue;
            const double wk = a ? 0.25 : 0.75;
            for (int b = 0; b < 2; ++b) {
              if (cj[b] < 0 || cj[b] >= c.n[1]) continue;
              const double wj = b ? 0.25 : 0.75;
              for (int d = 0; d < 2; ++d) {
                if (ci[d] < 0 || ci[d] >= c.n[0]) continue;
                s += (d ? 0.25 : 0.75) * wj * wk * c.x[c.id(ci[d], cj[b], ck[a])];
              }
            }
          }
          f.x[f.id(i, j, k)] += s;
        }
  }

  std::vector<Level> levels_;
};

std::vector<double> estimate_areas(const std::vector<Vec3>& pts, std::size_t k) {
  const KdTree tree(pts);
  std::vector<double> a(pts.size());
  const std::size_t kk = std::min(k, pts.size() - 1);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(pts.size()); ++i) {
    const auto nn = tree.knn(pts[i], kk + 1);
    a[i] = std::numbers::pi * nn.back().dist2 / static_cast<double>(kk);
  }
  return a;
}

}  // namespace

IndicatorGrid build_indicator_in(const OrientedPointSet& points, const Vec3& origin, double cell,
                                 const GridDims& dims, const PoissonOptions& opts,
                                 PoissonStats* stats) {
  points.validate();
  if (points.size() < 50) throw ConfigError("build_indicator: need at least 50 points");
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 8) throw ConfigError("build_indicator: grid dims must be >= 8 per axis");
  if (!(cell > 0.0)) throw ConfigError("build_indicator: cell size must be positive");

  IndicatorGrid grid(origin, cell, dims);
  const int nx = dims[0], ny = dims[1], nz = dims[2];
  const std::vector<double> areas =
      points.areas.empty() ? estimate_areas(points.positions, opts.density_neighbors) : points.areas;

  // Face-centered target gradient G = -n * area (grid units) and lumped
  // sample density on cell centers.
  const std::size_t fx_size = static_cast<std::size_t>(nx + 1) * ny * nz;
  const std::size_t fy_size = static_cast<std::size_t>(nx) * (ny + 1) * nz;
  const std::size_t fz_size = static_cast<std::size_t>(nx) * ny * (nz + 1);
  std::vector<double> gx(fx_size, 0.0), gy(fy_size, 0.0), gz(fz_size, 0.0);
  std::vector<double> density(grid.size(), 0.0);
  auto fid = [](int i, int j, int k, int sx, int sy) {
    return (static_cast<std::size_t>(k) * sy + j) * sx + i;
  };
  auto splat = [&](std::vector<double>& f, const Vec3& q, int sx, int sy, int sz, double v) {
    const int i0 = static_cast<int>(std::floor(q.x()));
    const int j0 = static_cast<int>(std::floor(q.y()));
    const int k0 = static_cast<int>(std::floor(q.z()));
    const double tx = q.x() - i0, ty = q.y() - j0, tz = q.z() - k0;
    for (int c = 0; c < 8; ++c) {
      const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
      const int i = i0 + di, j = j0 + dj, k = k0 + dk;
      if (i < 0 || j < 0 || k < 0 || i >= sx || j >= sy || k >= sz) continue;
      f[fid(i, j, k, sx, sy)] +=
          v * (di ? tx : 1.0 - tx) * (dj ? ty : 1.0 - ty) * (dk ? tz : 1.0 - tz);
    }
  };
  const double inv_c2 = 1.0 / (cell * cell);
  for (std::size_t s = 0; s < points.size(); ++s) {
    const Vec3 q = (points.positions[s] - origin) / cell;
    const Vec3 g = -points.normals[s] * areas[s] * inv_c2;
    splat(gx, Vec3(q.x(), q.y() - 0.5, q.z() - 0.5), nx + 1, ny, nz, g.x());
    splat(gy, Vec3(q.x() - 0.5, q.y(), q.z() - 0.5), nx, ny + 1, nz, g.y());
    splat(gz, Vec3(q.x() - 0.5, q.y() - 0.5, q.z()), nx, ny, nz + 1, g.z());
    splat(density, q - Vec3::Constant(0.5), nx, ny, nz, areas[s] * inv_c2);
  }

  std::vector<double> diag(grid.size()), rhs(grid.size());
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const std::size_t c = grid.index(i, j, k);
        const double div = gx[fid(i + 1, j, k, nx + 1, ny)] - gx[fid(i, j, k, nx + 1, ny)] +
                           gy[fid(i, j + 1, k, nx, ny + 1)] - gy[fid(i, j, k, nx, ny + 1)] +
                           gz[fid(i, j, k + 1, nx, ny)] - gz[fid(i, j, k, nx, ny)];
        diag[c] = opts.screen_weight * density[c];
        rhs[c] = -div + 0.5 * diag[c];
      }

  Multigrid mg(dims, diag);
  Level op;
  op.n = dims;
  op.diag = diag;

  std::vector<double>& x = grid.values;
  std::vector<double> r = rhs, z(grid.size()), p(grid.size()), ap(grid.size());
  const double bnorm = std::sqrt(dot(rhs, rhs));
  double rel = 0.0;
  int it = 0;
  if (bnorm > 0.0) {
    mg.precondition(r, z);
    p = z;
    double rz = dot(r, z);
    for (; it < opts.max_iterations; ++it) {
      op.apply(p, ap);
      const double alpha = rz / dot(p, ap);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(x.size()); ++c) {
        x[c] += alpha * p[c];
        r[c] -= alpha * ap[c];
      }
      rel = std::sqrt(dot(r, r)) / bnorm;
      if (!std::isfinite(rel)) throw NumericalError("poisson: CG diverged (non-finite residual)");
      if (rel < opts.tolerance) {
        ++it;
        break;
      }
      mg.precondition(r, z);
      const double rz_new = dot(r, z);
      const double beta = rz_new / rz;
      rz = rz_new;
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(x.size()); ++c)
        p[c] = z[c] + beta * p[c];
    }
    if (rel >= opts.tolerance)
      throw NumericalError("poisson: CG did not converge, relative residual " + std::to_string(rel));
  }
  if (stats) *stats = {it, rel};

  // Affine normalization: boundary mean -> 0, sample mean -> +-0.5.
  double boundary = 0.0;
  std::size_t nb = 0;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        if (i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1) {
          boundary += grid.at(i, j, k);
          ++nb;
        }
  boundary /= static_cast<double>(nb);
  double at_samples = 0.0;
  for (const auto& pt : points.positions) at_samples += grid.sample(pt);
  at_samples /= static_cast<double>(points.size());
  const double spread = std::abs(at_samples - boundary);
  if (!(spread > 0.0)) throw NumericalError("poisson: indicator is flat, cannot normalize");
  const double scale = 0.5 / spread;
  for (double& v : grid.values) v = (v - boundary) * scale;
  return grid;
}

IndicatorGrid build_indicator(const OrientedPointSet& points, const GridDims& dims, double padding,
                              const PoissonOptions& opts, PoissonStats* stats) {
  if (points.positions.empty()) throw ConfigError("build_indicator: no points");
  Vec3 lo = points.positions.front(), hi = lo;
  for (const auto& p : points.positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 ext = hi - lo;
  const double largest = ext.maxCoeff();
  if (!(largest > 0.0) || !std::isfinite(largest))
    throw ConfigError("build_indicator: degenerate bounding box");
  const double pad = padding * largest;
  double cell = 0.0;
  for (int a = 0; a < 3; ++a) cell = std::max(cell, (ext[a] + 2.0 * pad) / dims[a]);
  const Vec3 center = 0.5 * (lo + hi);
  const Vec3 origin = center - 0.5 * cell * Vec3(dims[0], dims[1], dims[2]);
  return build_indicator_in(points, origin, cell, dims, opts, stats);
}

IndicatorGrid remap_grid(const IndicatorGrid& source, const IndicatorGrid& target) {
  const Vec3 lo = source.origin.cwiseMax(target.origin);
  const Vec3 hi = source.extent_max().cwiseMin(target.extent_max());
  if ((hi - lo).minCoeff() <= 0.0) throw ConfigError("remap_grid: frames do not overlap");
  IndicatorGrid out(target.origin, target.cell, target.dims);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < out.dims[2]; ++k)
    for (int j = 0; j < out.dims[1]; ++j)
      for (int i = 0; i < out.dims[0]; ++i) out.at(i, j, k) = source.sample(out.cell_center(i, j, k));
  return out;
}

CurvatureResult mean_curvature(std::span<const Vec3> points, std::size_t k,
                               std::span<const Vec3> normals) {
  if (points.size() < k + 1)
    throw ConfigError("mean_curvature: need at least k+1 points");
  if (!normals.empty() && normals.size() != points.size())
    throw ConfigError("mean_curvature: normals do not match points");
  const KdTree tree(std::vector<Vec3>(points.begin(), points.end()));
  CurvatureResult out;
  out.mean_curvature.assign(points.size(), 0.0);
  out.rank_deficient.assign(points.size(), 0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(points.size()); ++pi) {
    const Vec3& p = points[pi];
    const auto nn = tree.knn(p, k + 1);
    Vec3 mean = Vec3::Zero();
    for (const auto& n : nn) mean += points[n.index];
    mean /= static_cast<double>(nn.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& n : nn) {
      const Vec3 d = points[n.index] - mean;
      cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 nrm = es.eigenvectors().col(0);
    const Vec3 t1 = es.eigenvectors().col(2);
    if (!normals.empty()) {
      if (nrm.dot(normals[pi]) < 0.0) nrm = -nrm;
    } else {
      int a;
      nrm.cwiseAbs().maxCoeff(&a);
      if (nrm[a] < 0.0) nrm = -nrm;
    }
    const Vec3 t2 = nrm.cross(t1);
    Eigen::MatrixXd m(nn.size(), 6);
    Eigen::VectorXd rhs(nn.size());
    for (std::size_t r = 0; r < nn.size(); ++r) {
      const Vec3 d = points[nn[r].index] - p;
      const double u = d.dot(t1), v = d.dot(t2);
      m.row(r) << u * u, u * v, v * v, u, v, 1.0;
      rhs[r] = d.dot(nrm);
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
    if (qr.rank() < 6) {
      out.rank_deficient[pi] = 1;
      continue;
    }
    const Eigen::VectorXd c = qr.solve(rhs);
    const double fxx = 2.0 * c[0], fxy = c[1], fyy = 2.0 * c[2], fx = c[3], fy = c[4];
    const double g = 1.0 + fx * fx + fy * fy;
    out.mean_curvature[pi] =
        -((1.0 + fy * fy) * fxx - 2.0 * fx * fy * fxy + (1.0 + fx * fx) * fyy) /
        (2.0 * std::pow(g, 1.5));
  }
  return out;
}

namespace {

template <class Fn>
void for_neighbors(const IndicatorGrid& g, int i, int j, int k, int connectivity, Fn&& fn) {
  for (int dk = -1; dk <= 1; ++dk)
    for (int dj = -1; dj <= 1; ++dj)
      for (int di = -1; di <= 1; ++di) {
        const int manhattan = std::abs(di) + std::abs(dj) + std::abs(dk);
        if (connectivity == 6 && manhattan > 1) continue;
        if (g.inside(i + di, j + dj, k + dk)) fn(g.index(i + di, j + dj, k + dk));
      }
}

void check_coregistered(const IndicatorGrid& a, const IndicatorGrid& b) {
  if (a.dims != b.dims || (a.origin - b.origin).norm() > 1e-9 * std::max(1.0, a.cell) ||
      std::abs(a.cell - b.cell) > 1e-12 * a.cell)
    throw ConfigError("indicator grids are not co-registered");
}

}  // namespace

std::size_t count_conflicts(const IndicatorGrid& scene, const IndicatorGrid& object,
                            int connectivity) {
  check_coregistered(scene, object);
  std::size_t n = 0;
  for (int k = 0; k < scene.dims[2]; ++k)
    for (int j = 0; j < scene.dims[1]; ++j)
      for (int i = 0; i < scene.dims[0]; ++i) {
        if (!(object.at(i, j, k) > 0.5)) continue;
        bool hit = false;
        for_neighbors(scene, i, j, k, connectivity,
                      [&](std::size_t c) { hit = hit || scene.values[c] > 0.5; });
        n += hit;
      }
  return n;
}

std::pair<IndicatorGrid, IndicatorGrid> resolve_conflicts(const IndicatorGrid& scene,
                                                          const IndicatorGrid& object,
                                                          const ConflictOptions& opts,
                                                          ConflictReport* report) {
  check_coregistered(scene, object);
  if (opts.connectivity != 6 && opts.connectivity != 26)
    throw ConfigError("resolve_conflicts: connectivity must be 6 or 26");
  IndicatorGrid xs = scene, xo = object;
  ConflictReport rep;
  std::optional<double> tau = opts.tau;

  for (int iter = 0; iter < opts.iterations; ++iter) {
    std::vector<std::size_t> cells;
    std::vector<Vec3> pts, nrms;
    std::vector<char> intersect;
    for (int k = 0; k < xs.dims[2]; ++k)
      for (int j = 0; j < xs.dims[1]; ++j)
        for (int i = 0; i < xs.dims[0]; ++i) {
          const double v = xs.at(i, j, k);
          if (!(v > 0.5 && v < 0.6)) continue;
          const double o = xo.at(i, j, k);
          if (o == 0.5) continue;
          cells.push_back(xs.index(i, j, k));
          pts.push_back(xs.cell_center(i, j, k));
          const Vec3 g = -xs.gradient(i, j, k);
          nrms.push_back(g.norm() > 0.0 ? Vec3(g.normalized()) : Vec3::UnitZ());
          intersect.push_back(o > 0.5);
        }
    const std::size_t n_int = static_cast<std::size_t>(std::count(intersect.begin(), intersect.end(), 1));
    if (n_int == 0 || n_int == pts.size() || pts.size() < opts.curvature_neighbors + 1) break;

    const CurvatureResult h = mean_curvature(pts, opts.curvature_neighbors, nrms);
    std::vector<Vec3> clear_pts;
    std::vector<double> clear_h;
    for (std::size_t s = 0; s < pts.size(); ++s)
      if (!intersect[s]) {
        clear_pts.push_back(pts[s]);
        clear_h.push_back(h.mean_curvature[s]);
      }
    if (!tau) {
      std::vector<double> mags;
      for (double v : clear_h) mags.push_back(std::abs(v));
      auto mid = mags.begin() + static_cast<std::ptrdiff_t>(mags.size() / 2);
      std::nth_element(mags.begin(), mid, mags.end());
      tau = 3.0 * *mid;
    }
    const KdTree clear_tree(clear_pts);
    std::size_t lowered = 0;
    for (std::size_t s = 0; s < pts.size(); ++s) {
      if (!intersect[s]) continue;
      const Neighbor nb = clear_tree.nearest(pts[s]);
      if (std::abs(h.mean_curvature[s] - clear_h[nb.index]) > *tau) {
        xs.values[cells[s]] = 0.49;
        ++lowered;
      }
    }
    rep.scene_cells_lowered += lowered;
    if (lowered == 0) break;  // later sweeps would see identical input
  }
  rep.tau = tau.value_or(0.0);

  // Object cells touching scene interior are ceded to the scene.
  std::vector<std::size_t> drop;
  for (int k = 0; k < xo.dims[2]; ++k)
    for (int j = 0; j < xo.dims[1]; ++j)
      for (int i = 0; i < xo.dims[0]; ++i) {
        if (!(xo.at(i, j, k) > 0.5)) continue;
        bool hit = false;
        for_neighbors(xs, i, j, k, opts.connectivity,
                      [&](std::size_t c) { hit = hit || xs.values[c] > 0.5; });
        if (hit) drop.push_back(xo.index(i, j, k));
      }
  for (std::size_t c : drop) xo.values[c] = 0.49;
  rep.object_cells_lowered = drop.size();
  rep.remaining_conflicts = count_conflicts(xs, xo, opts.connectivity);
  if (report) *report = rep;
  return {std::move(xs), std::move(xo)};
}

std::vector<Vec3> extract_interior_points(const IndicatorGrid& grid) {
  std::vector<Vec3> out;
  for (int k = 0; k < grid.dims[2]; ++k)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int i = 0; i < grid.dims[0]; ++i)
        if (grid.at(i, j, k) > 0.5) out.push_back(grid.cell_center(i, j, k));
  return out;
}

}  // namespace dgs
