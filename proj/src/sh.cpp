#include "dgs/sh.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

namespace dgs {
namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
constexpr double kC3[7] = {-0.5900435899266435, 2.890611442640554,  -0.4570457994644658,
                           0.3731763325901154,  -0.4570457994644658, 1.445305721320277,
                           -0.5900435899266435};

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

using CMat = Eigen::MatrixXcd;

/// Rows: real basis (m + l), columns: complex basis (m' + l).
/// Y^real_m = sum_m' U(m, m') Y^complex_m' with the Condon-Shortley phase on
/// the complex side.
CMat real_from_complex(int l) {
  const int n = 2 * l + 1;
  CMat u = CMat::Zero(n, n);
  const double s = 1.0 / std::numbers::sqrt2;
  const std::complex<double> i(0.0, 1.0);
  u(l, l) = 1.0;
  for (int m = 1; m <= l; ++m) {
    const double sign = (m % 2 == 0) ? 1.0 : -1.0;
    u(l + m, l - m) = s;
    u(l + m, l + m) = sign * s;
    u(l - m, l - m) = i * s;
    u(l - m, l + m) = -i * sign * s;
  }
  return u;
}

const CMat& basis_change(int l) {
  static const CMat table[4] = {real_from_complex(0), real_from_complex(1), real_from_complex(2),
                                real_from_complex(3)};
  return table[l];
}

template <int N>
Eigen::Matrix<double, N, N> real_block(int l, const EulerZYZ& e) {
  constexpr int n = N;
  const Eigen::MatrixXd d = wigner_small_d(l, e.beta);
  CMat dc(n, n);
  for (int a = 0; a < n; ++a) {
    const int mp = a - l;
    for (int b = 0; b < n; ++b) {
      const int m = b - l;
      dc(a, b) = std::polar(1.0, -mp * e.alpha) * d(a, b) * std::polar(1.0, -m * e.gamma);
    }
  }
  const CMat& u = basis_change(l);
  const CMat real = u.conjugate() * dc * u.transpose();
  Eigen::Matrix<double, N, N> out = real.real();
  // Splatting basis = diag((-1)^m) * orthonormal real basis.
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (((a - l) + (b - l)) % 2 != 0) out(a, b) = -out(a, b);
  return out;
}

}  // namespace

double eval_sh(const ShCoeffs& c, const Vec3& dir) {
  if (std::abs(dir.norm() - 1.0) > 1e-9) throw ConfigError("eval_sh: direction is not unit length");
  const double x = dir.x(), y = dir.y(), z = dir.z();
  const double xx = x * x, yy = y * y, zz = z * z;
  double r = kShC0 * c[0];
  r += -kC1 * y * c[1] + kC1 * z * c[2] - kC1 * x * c[3];
  r += kC2[0] * x * y * c[4] + kC2[1] * y * z * c[5] + kC2[2] * (2.0 * zz - xx - yy) * c[6] +
       kC2[3] * x * z * c[7] + kC2[4] * (xx - yy) * c[8];
  r += kC3[0] * y * (3.0 * xx - yy) * c[9] + kC3[1] * x * y * z * c[10] +
       kC3[2] * y * (4.0 * zz - xx - yy) * c[11] + kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * c[12] +
       kC3[4] * x * (4.0 * zz - xx - yy) * c[13] + kC3[5] * z * (xx - yy) * c[14] +
       kC3[6] * x * (xx - 3.0 * yy) * c[15];
  return r;
}

Eigen::MatrixXd wigner_small_d(int l, double beta) {
  if (l < 0 || l > 3) throw ConfigError("wigner_small_d: degree " + std::to_string(l) + " out of range");
  const int n = 2 * l + 1;
  const double c = std::cos(0.5 * beta), s = std::sin(0.5 * beta);
  Eigen::MatrixXd d(n, n);
  for (int mp = -l; mp <= l; ++mp) {
    for (int m = -l; m <= l; ++m) {
      const double pre = std::sqrt(factorial(l + mp) * factorial(l - mp) * factorial(l + m) *
                                   factorial(l - m));
      double sum = 0.0;
      for (int k = std::max(0, m - mp); k <= std::min(l + m, l - mp); ++k) {
        const double sign = ((mp - m + k) % 2 == 0) ? 1.0 : -1.0;
        const double den = factorial(l + m - k) * factorial(k) * factorial(mp - m + k) * factorial(l - mp - k);
        sum += sign / den * std::pow(c, 2 * l + m - mp - 2 * k) * std::pow(s, mp - m + 2 * k);
      }
      d(mp + l, m + l) = pre * sum;
    }
  }
  return d;
}

EulerZYZ rotation_to_euler_zyz(const Mat3& r) {
  if (!r.allFinite() || std::abs(r.determinant() - 1.0) > 1e-6 ||
      (r.transpose() * r - Mat3::Identity()).norm() > 1e-6)
    throw ConfigError("rotation_to_euler_zyz: input is not a rotation");
  constexpr double kGimbal = 1e-12;
  EulerZYZ e;
  const double sb = std::hypot(r(0, 2), r(1, 2));
  e.beta = std::atan2(sb, r(2, 2));
  const bool gimbal = sb < kGimbal;
  if (r(2, 2) >= 0.0) {
    // Upper-left block carries (1 + cos b) * rot(alpha + gamma).
    const double sum = std::atan2(r(1, 0) - r(0, 1), r(0, 0) + r(1, 1));
    e.alpha = gimbal ? sum : std::atan2(r(1, 2), r(0, 2));
    e.gamma = gimbal ? 0.0 : sum - e.alpha;
  } else {
    // (cos b - 1) * rot(alpha - gamma).
    const double diff = std::atan2(-(r(1, 0) + r(0, 1)), -(r(0, 0) - r(1, 1)));
    e.alpha = gimbal ? diff : std::atan2(r(1, 2), r(0, 2));
    e.gamma = gimbal ? 0.0 : e.alpha - diff;
  }
  return e;
}

Mat3 euler_zyz_to_rotation(const EulerZYZ& e) {
  using Eigen::AngleAxisd;
  return (AngleAxisd(e.alpha, Vec3::UnitZ()) * AngleAxisd(e.beta, Vec3::UnitY()) *
          AngleAxisd(e.gamma, Vec3::UnitZ()))
      .toRotationMatrix();
}

Eigen::MatrixXd ShBlockRotation::block(int l) const {
  switch (l) {
    case 0: return l0;
    case 1: return l1;
    case 2: return l2;
    case 3: return l3;
    default: throw ConfigError("ShBlockRotation: degree out of range");
  }
}

void ShBlockRotation::apply(ShCoeffs& c) const {
  Eigen::Map<Eigen::Matrix<double, 3, 1>> b1(c.data() + 1);
  Eigen::Map<Eigen::Matrix<double, 5, 1>> b2(c.data() + 4);
  Eigen::Map<Eigen::Matrix<double, 7, 1>> b3(c.data() + 9);
  c[0] *= l0(0, 0);
  b1 = (l1 * b1).eval();
  b2 = (l2 * b2).eval();
  b3 = (l3 * b3).eval();
}

ShBlockRotation sh_block_rotation(const Mat3& r) {
  const EulerZYZ e = rotation_to_euler_zyz(r);
  ShBlockRotation out;
  out.l1 = real_block<3>(1, e);
  out.l2 = real_block<5>(2, e);
  out.l3 = real_block<7>(3, e);
  return out;
}

ShCoeffs rotate_sh(const ShCoeffs& coeffs, const Mat3& r) {
  ShCoeffs out = coeffs;
  sh_block_rotation(r).apply(out);
  return out;
}

ShColor rotate_sh(const ShColor& coeffs, const Mat3& r) {
  const ShBlockRotation blocks = sh_block_rotation(r);
  ShColor out = coeffs;
  for (auto& ch : out) blocks.apply(ch);
  return out;
}

}  // namespace dgs
