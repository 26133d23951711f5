#include "dgs/mpm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include <Eigen/SVD>

#include "dgs/sh.hpp"

namespace dgs {

void Material::validate() const {
  if (!(youngs > 0.0)) throw ConfigError("material: Young's modulus must be positive");
  if (!(poisson >= 0.0 && poisson < 0.5)) throw ConfigError("material: Poisson ratio must lie in [0, 0.5)");
  if (!(density > 0.0)) throw ConfigError("material: density must be positive");
  if (!(friction_deg > 0.0 && friction_deg < 90.0))
    throw ConfigError("material: friction angle must lie in (0, 90) degrees");
}

void Particle::validate() const {
  if (!(mass > 0.0)) throw ConfigError("particle: mass must be positive");
  if (!(volume > 0.0)) throw ConfigError("particle: volume must be positive");
}

MpmGrid::MpmGrid(const Vec3& origin_, double h_, const std::array<int, 3>& dims_)
    : origin(origin_), h(h_), dims(dims_) {
  if (!(h > 0.0)) throw ConfigError("mpm grid: spacing must be positive");
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 2 * kBoundaryBand + 3) throw ConfigError("mpm grid: dims too small");
  mass.assign(size(), 0.0);
  momentum.assign(size(), Vec3::Zero());
  velocity.assign(size(), Vec3::Zero());
  sticky.assign(size(), 0);
}

void MpmGrid::clear() {
  std::fill(mass.begin(), mass.end(), 0.0);
  std::fill(momentum.begin(), momentum.end(), Vec3::Zero());
  std::fill(velocity.begin(), velocity.end(), Vec3::Zero());
}

namespace {

/// Quadratic B-spline stencil of one particle.
struct Stencil {
  int base[3];
  double w[3][3];  // [axis][node]
  Vec3 fx;         // particle position relative to base, in cells
  bool clamped = false;

  Stencil(const MpmGrid& g, const Vec3& x) {
    const Vec3 q = (x - g.origin) / g.h;
    for (int a = 0; a < 3; ++a) {
      int b = static_cast<int>(std::floor(q[a] - 0.5));
      if (b < 0 || b > g.dims[a] - 3) {
        clamped = true;
        b = std::clamp(b, 0, g.dims[a] - 3);
      }
      base[a] = b;
      const double f = std::clamp(q[a] - b, 0.5, 1.5);
      fx[a] = q[a] - b;
      w[a][0] = 0.5 * (1.5 - f) * (1.5 - f);
      w[a][1] = 0.75 - (f - 1.0) * (f - 1.0);
      w[a][2] = 0.5 * (f - 0.5) * (f - 0.5);
    }
  }
};

constexpr int kSlab = 4;  // slab thickness in base-z cells, > stencil width

}  // namespace

namespace {

Mat3 cofactor(const Mat3& F) {
  Mat3 c;
  c.col(0) = F.col(1).cross(F.col(2));
  c.col(1) = F.col(2).cross(F.col(0));
  c.col(2) = F.col(0).cross(F.col(1));
  return c;
}

}  // namespace

Mat3 polar_rotation(const Mat3& F) {
  // Scaled Newton iteration X <- (g X + X^-T / g) / 2, with X^-T = cof(X) / det(X).
  Mat3 x = F;
  for (int it = 0; it < 30; ++it) {
    const Mat3 cof = cofactor(x);
    const double det = x.col(0).dot(cof.col(0));
    const Mat3 inv_t = cof / det;
    const double g = std::sqrt(std::sqrt(inv_t.squaredNorm() / x.squaredNorm()));
    const Mat3 next = 0.5 * (g * x + inv_t / g);
    const double change = (next - x).squaredNorm();
    x = next;
    if (change < 1e-20) break;  // quadratic convergence: next error ~ change^2
  }
  return x;
}

double fixed_corotated_energy(const Mat3& F, double mu, double lambda) {
  const double j = F.determinant();
  return mu * (F - polar_rotation(F)).squaredNorm() + 0.5 * lambda * (j - 1.0) * (j - 1.0);
}

Mat3 fixed_corotated_pk1(const Mat3& F, double mu, double lambda) {
  const double j = F.determinant();
  if (!(j > 0.0)) throw NumericalError("fixed corotated: det(F) must be positive");
  const Mat3 r = polar_rotation(F);
  // J F^-T is the cofactor matrix, which stays well defined near J = 0.
  return 2.0 * mu * (F - r) + lambda * (j - 1.0) * cofactor(F);
}

namespace {

struct Svd3 {
  Mat3 u, v;
  Vec3 sigma;
};

Svd3 svd3(const Mat3& F) {
  const Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Svd3 out{svd.matrixU(), svd.matrixV(), svd.singularValues()};
  // Proper rotations; the sign lands on the smallest singular value.
  if (out.u.determinant() < 0.0) {
    out.u.col(2) *= -1.0;
    out.sigma[2] *= -1.0;
  }
  if (out.v.determinant() < 0.0) {
    out.v.col(2) *= -1.0;
    out.sigma[2] *= -1.0;
  }
  return out;
}

double dp_alpha(double friction_deg) {
  const double s = std::sin(friction_deg * std::numbers::pi / 180.0);
  return std::sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s);
}

}  // namespace

double hencky_energy(const Mat3& F, double mu, double lambda) {
  const Svd3 d = svd3(F);
  if (d.sigma.minCoeff() <= 0.0) throw NumericalError("hencky: det(F) must be positive");
  const Vec3 e = d.sigma.array().log();
  return mu * e.squaredNorm() + 0.5 * lambda * e.sum() * e.sum();
}

Mat3 hencky_pk1(const Mat3& F, double mu, double lambda) {
  const Svd3 d = svd3(F);
  if (d.sigma.minCoeff() <= 0.0) throw NumericalError("hencky: det(F) must be positive");
  const Vec3 e = d.sigma.array().log();
  const double tr = e.sum();
  Vec3 p;
  for (int a = 0; a < 3; ++a) p[a] = (2.0 * mu * e[a] + lambda * tr) / d.sigma[a];
  return d.u * p.asDiagonal() * d.v.transpose();
}

double drucker_prager_yield(const Mat3& F, double friction_deg, double mu, double lambda) {
  const Svd3 d = svd3(F);
  if (d.sigma.minCoeff() <= 0.0) throw NumericalError("drucker-prager: det(F) must be positive");
  const Vec3 e = d.sigma.array().log();
  const double tr = e.sum();
  const Vec3 dev = e - Vec3::Constant(tr / 3.0);
  return dev.norm() + (3.0 * lambda + 2.0 * mu) / (2.0 * mu) * tr * dp_alpha(friction_deg);
}

Mat3 drucker_prager_return_map(const Mat3& F, double friction_deg, double mu, double lambda) {
  const Svd3 d = svd3(F);
  if (d.sigma.minCoeff() <= 0.0) throw NumericalError("drucker-prager: det(F) must be positive");
  const Vec3 e = d.sigma.array().log();
  const double tr = e.sum();
  if (tr >= 0.0) return d.u * d.v.transpose();  // tension: collapse to the cone tip
  const Vec3 dev = e - Vec3::Constant(tr / 3.0);
  const double dev_norm = dev.norm();
  const double dgamma = dev_norm + (3.0 * lambda + 2.0 * mu) / (2.0 * mu) * tr * dp_alpha(friction_deg);
  if (dgamma <= 0.0 || dev_norm == 0.0) return F;
  const Vec3 h = e - dgamma / dev_norm * dev;
  return d.u * Vec3(h.array().exp()).asDiagonal() * d.v.transpose();
}

std::size_t p2g(std::span<const Particle> particles, std::span<const Material> materials,
                MpmGrid& grid, double dt) {
  grid.clear();
  const double inv_dx2 = 4.0 / (grid.h * grid.h);
  const int slabs = (grid.dims[2] + kSlab - 1) / kSlab;
  std::vector<std::vector<std::uint32_t>> bins(static_cast<std::size_t>(slabs));
  std::vector<Stencil> st;
  st.reserve(particles.size());
  std::size_t clamped = 0;
  for (std::size_t p = 0; p < particles.size(); ++p) {
    st.emplace_back(grid, particles[p].x);
    clamped += st.back().clamped;
    bins[static_cast<std::size_t>(st.back().base[2] / kSlab)].push_back(static_cast<std::uint32_t>(p));
  }
  // Stress-affine matrices are independent per particle.
  for (std::size_t p = 0; p < particles.size(); ++p) {
    const Particle& q = particles[p];
    if (q.material < 0 || static_cast<std::size_t>(q.material) >= materials.size())
      throw ConfigError("p2g: particle " + std::to_string(p) + " has no material");
  }
  std::vector<Mat3> affine(particles.size());
  std::ptrdiff_t inverted = -1;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(particles.size()); ++p) {
    const Particle& q = particles[p];
    if (!(q.F.determinant() > 0.0)) {
#pragma omp critical
      inverted = std::max(inverted, p);
      continue;
    }
    const Material& m = materials[q.material];
    const Mat3 pk1 = m.model == MaterialModel::FixedCorotated
                         ? fixed_corotated_pk1(q.F, m.mu(), m.lambda())
                         : hencky_pk1(q.F, m.mu(), m.lambda());
    affine[p] = -dt * q.volume * inv_dx2 * pk1 * q.F.transpose() + q.mass * q.C;
  }
  if (inverted >= 0)
    throw NumericalError("p2g: inverted deformation gradient at particle " + std::to_string(inverted));
  // Even slabs, then odd slabs: writes within a phase never overlap and each
  // node sees contributions in a fixed order.
  for (int phase = 0; phase < 2; ++phase) {
#pragma omp parallel for schedule(dynamic)
    for (int s = phase; s < slabs; s += 2) {
      for (const std::uint32_t p : bins[static_cast<std::size_t>(s)]) {
        const Particle& q = particles[p];
        const Stencil& w = st[p];
        const Vec3 mv = q.mass * q.v;
        const Mat3& a = affine[p];
        for (int k = 0; k < 3; ++k) {
          const double dz = (k - w.fx.z()) * grid.h;
          for (int j = 0; j < 3; ++j) {
            const double dy = (j - w.fx.y()) * grid.h;
            const double wjk = w.w[1][j] * w.w[2][k];
            // Momentum is linear in dx along the row: base + dx * a.col(0).
            const Vec3 row = mv + a.col(1) * dy + a.col(2) * dz;
            std::size_t n = grid.index(w.base[0], w.base[1] + j, w.base[2] + k);
            for (int i = 0; i < 3; ++i, ++n) {
              const double wt = w.w[0][i] * wjk;
              const double dx = (i - w.fx.x()) * grid.h;
              grid.momentum[n] += wt * (row + a.col(0) * dx);
              grid.mass[n] += wt * q.mass;
            }
          }
        }
      }
    }
  }
  return clamped;
}

void grid_update(MpmGrid& grid, double dt, const Vec3& gravity, bool boundaries) {
#pragma omp parallel for schedule(static)
  for (int k = 0; k < grid.dims[2]; ++k)
    for (int j = 0; j < grid.dims[1]; ++j)
      for (int i = 0; i < grid.dims[0]; ++i) {
        const std::size_t n = grid.index(i, j, k);
        if (!(grid.mass[n] > 0.0)) {
          grid.velocity[n].setZero();
          continue;
        }
        Vec3 v = grid.momentum[n] / grid.mass[n] + dt * gravity;
        const bool band = i < kBoundaryBand || j < kBoundaryBand || k < kBoundaryBand ||
                          i >= grid.dims[0] - kBoundaryBand || j >= grid.dims[1] - kBoundaryBand ||
                          k >= grid.dims[2] - kBoundaryBand;
        if (grid.sticky[n] || (boundaries && band)) v.setZero();
        grid.velocity[n] = v;
      }
}

void g2p(std::span<Particle> particles, std::span<const Material> materials, const MpmGrid& grid,
         double dt) {
  const double inv_dx2 = 4.0 / (grid.h * grid.h);
  std::ptrdiff_t bad = -1;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(particles.size()); ++p) {
    Particle& q = particles[p];
    const Stencil w(grid, q.x);
    Vec3 v = Vec3::Zero();
    Mat3 c = Mat3::Zero();
    for (int k = 0; k < 3; ++k) {
      const double dz = (k - w.fx.z()) * grid.h;
      for (int j = 0; j < 3; ++j) {
        const double dy = (j - w.fx.y()) * grid.h;
        const double wjk = w.w[1][j] * w.w[2][k];
        std::size_t n = grid.index(w.base[0], w.base[1] + j, w.base[2] + k);
        for (int i = 0; i < 3; ++i, ++n) {
          const double wt = w.w[0][i] * wjk;
          const double dx = (i - w.fx.x()) * grid.h;
          const Vec3 wv = wt * grid.velocity[n];
          v += wv;
          c.col(0) += wv * dx;
          c.col(1) += wv * dy;
          c.col(2) += wv * dz;
        }
      }
    }
    c *= inv_dx2;
    if (!v.allFinite()) {
#pragma omp critical
      bad = std::max(bad, p);
      continue;
    }
    q.v = v;
    q.C = c;
    q.x += dt * v;
    q.F = (Mat3::Identity() + dt * c) * q.F;
    const Material& m = materials[q.material];
    if (!(q.F.determinant() > 0.0)) {
#pragma omp critical
      bad = std::max(bad, p);
      continue;
    }
    if (m.model == MaterialModel::DruckerPrager)
      q.F = drucker_prager_return_map(q.F, m.friction_deg, m.mu(), m.lambda());
  }
  if (bad >= 0) throw NumericalError("g2p: non-finite velocity or inverted F at particle " + std::to_string(bad));
}

std::size_t mark_sticky_nodes(MpmGrid& grid, std::span<const Vec3> points) {
  std::size_t fresh = 0;
  for (const Vec3& p : points) {
    const Vec3 q = (p - grid.origin) / grid.h;
    const int i = static_cast<int>(std::floor(q.x() + 0.5));
    const int j = static_cast<int>(std::floor(q.y() + 0.5));
    const int k = static_cast<int>(std::floor(q.z() + 0.5));
    if (i < 0 || j < 0 || k < 0 || i >= grid.dims[0] || j >= grid.dims[1] || k >= grid.dims[2]) continue;
    char& s = grid.sticky[grid.index(i, j, k)];
    fresh += !s;
    s = 1;
  }
  return fresh;
}

bool ImpulseRegion::contains(const Vec3& p) const {
  if (shape == Shape::Sphere) return (p - center).norm() <= radius;
  return ((p - center).cwiseAbs() - half_extent).maxCoeff() <= 0.0;
}

std::size_t apply_impulse(std::span<Particle> particles, const ImpulseRegion& region, const Vec3& dv) {
  std::size_t n = 0;
  for (Particle& p : particles)
    if (region.contains(p.x)) {
      p.v += dv;
      ++n;
    }
  return n;
}

std::vector<GaussianKernel> advect_gaussians(std::span<const GaussianKernel> rest,
                                             std::span<const Particle> particles) {
  std::vector<GaussianKernel> out(rest.begin(), rest.end());
  for (std::size_t p = 0; p < particles.size(); ++p) {
    const Particle& q = particles[p];
    if (q.kernel < 0) continue;
    if (static_cast<std::size_t>(q.kernel) >= rest.size())
      throw ConfigError("advect_gaussians: particle bound to a missing kernel");
    if (!q.F.allFinite()) throw NumericalError("advect_gaussians: non-finite deformation gradient");
    const GaussianKernel& k0 = rest[q.kernel];
    GaussianKernel& k = out[q.kernel];
    k.center = q.x;
    const Mat3 r0 = k0.rotation_matrix();
    const Mat3 m = q.F * r0 * k0.scales.asDiagonal();
    const Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Mat3& u = svd.matrixU();
    const Mat3& v = svd.matrixV();
    // Give each original axis the singular direction it contributes most to.
    int owner[3] = {-1, -1, -1};
    bool taken[3] = {false, false, false};
    for (int pass = 0; pass < 3; ++pass) {
      double best = -1.0;
      int ba = 0, bj = 0;
      for (int a = 0; a < 3; ++a)
        for (int j = 0; j < 3; ++j)
          if (owner[a] < 0 && !taken[j] && std::abs(v(a, j)) > best) {
            best = std::abs(v(a, j));
            ba = a;
            bj = j;
          }
      owner[ba] = bj;
      taken[bj] = true;
    }
    Mat3 r;
    Vec3 s;
    for (int a = 0; a < 3; ++a) {
      const double sign = v(a, owner[a]) < 0.0 ? -1.0 : 1.0;
      r.col(a) = sign * u.col(owner[a]);
      s[a] = svd.singularValues()[owner[a]];
    }
    if (r.determinant() < 0.0) {
      int smallest;
      s.minCoeff(&smallest);
      r.col(smallest) *= -1.0;
    }
    k.rotation = Quat(r).normalized();
    k.scales = s;
    k.sh = rotate_sh(k0.sh, polar_rotation(q.F));
  }
  return out;
}

Plane ransac_plane(std::span<const Vec3> points, int iterations, double inlier_tol, std::uint64_t seed) {
  if (points.size() < 3) throw ConfigError("ransac_plane: need at least 3 points");
  if (iterations <= 0 || !(inlier_tol > 0.0)) throw ConfigError("ransac_plane: bad parameters");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, points.size() - 1);
  Vec3 best_n = Vec3::UnitZ();
  double best_d = 0.0;
  std::size_t best_count = 0;
  int degenerate = 0;
  for (int it = 0; it < iterations;) {
    const Vec3 &a = points[pick(rng)], &b = points[pick(rng)], &c = points[pick(rng)];
    const Vec3 n = (b - a).cross(c - a);
    if (n.norm() < 1e-12) {
      if (++degenerate > 100 * iterations) throw ConfigError("ransac_plane: points are collinear");
      continue;
    }
    ++it;
    const Vec3 nn = n.normalized();
    const double d = nn.dot(a);
    std::size_t count = 0;
    for (const Vec3& p : points) count += std::abs(nn.dot(p) - d) <= inlier_tol;
    if (count > best_count) {
      best_count = count;
      best_n = nn;
      best_d = d;
    }
  }
  // Least-squares refinement on the inliers.
  Vec3 centroid = Vec3::Zero();
  std::vector<Vec3> in;
  for (const Vec3& p : points)
    if (std::abs(best_n.dot(p) - best_d) <= inlier_tol) in.push_back(p);
  for (const Vec3& p : in) centroid += p;
  centroid /= static_cast<double>(in.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : in) cov += (p - centroid) * (p - centroid).transpose();
  Plane plane;
  plane.normal = best_n;
  if (in.size() >= 3) {
    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    plane.normal = es.eigenvectors().col(0).normalized();
  }
  plane.centroid = centroid;
  plane.offset = plane.normal.dot(centroid);
  std::size_t above = 0, below = 0;
  for (const Vec3& p : points) {
    const double s = plane.signed_distance(p);
    above += s > inlier_tol;
    below += s < -inlier_tol;
  }
  if (above > below) {
    plane.normal = -plane.normal;
    plane.offset = -plane.offset;
  }
  plane.inliers = in.size();
  return plane;
}

Mat3 rotation_to_z(const Vec3& n) {
  const Vec3 a = n.normalized();
  const Vec3 z = Vec3::UnitZ();
  const double c = a.dot(z);
  if (c < -1.0 + 1e-15) return Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitX()).toRotationMatrix();
  return Quat::FromTwoVectors(a, z).toRotationMatrix();
}

SplatScene gravity_align(const SplatScene& scene, const Plane& plane) {
  const Mat3 rg = rotation_to_z(plane.normal);
  const Vec3 p0 = plane.centroid;
  SplatScene out = scene;
  const ShBlockRotation blocks = sh_block_rotation(rg);
  const Quat qg(rg);
  for (GaussianKernel& k : out.kernels) {
    k.center = rg * (k.center - p0) + p0;
    k.rotation = (qg * k.rotation).normalized();
    for (auto& ch : k.sh) blocks.apply(ch);
  }
  for (Camera& cam : out.cameras) {
    const Mat3 r = cam.rotation * rg.transpose();
    cam.translation = cam.translation + cam.rotation * p0 - r * p0;
    cam.rotation = r;
  }
  out.up_axis = Vec3::UnitZ();
  return out;
}

double max_stable_dt(const MpmState& state) {
  double speed = 0.0;
  for (const Particle& p : state.particles) {
    const Material& m = state.materials.at(static_cast<std::size_t>(p.material));
    const double rho = p.mass / p.volume;
    speed = std::max(speed, p.v.norm() + std::sqrt(m.youngs / rho));
  }
  return speed > 0.0 ? 0.3 * state.grid.h / speed : std::numeric_limits<double>::infinity();
}

void step(MpmState& state, double dt) {
  if (!(dt >= 0.0)) throw ConfigError("step: dt must be non-negative");
  const double limit = max_stable_dt(state);
  if (dt > limit)
    throw NumericalError("CFL violated: dt = " + std::to_string(dt) + " exceeds the stable limit " +
                         std::to_string(limit) + "; reduce dt");
  state.clamped += p2g(state.particles, state.materials, state.grid, dt);
  grid_update(state.grid, dt, state.gravity, state.boundaries);
  g2p(state.particles, state.materials, state.grid, dt);
  ++state.steps;
}

MpmDiagnostics diagnose(const MpmState& state, std::optional<double> floor_z) {
  MpmDiagnostics d;
  for (const Particle& p : state.particles) {
    d.mass += p.mass;
    d.momentum += p.mass * p.v;
    d.kinetic += 0.5 * p.mass * p.v.squaredNorm();
    if (floor_z) d.max_penetration = std::max(d.max_penetration, *floor_z - p.x.z());
  }
  return d;
}

}  // namespace dgs
