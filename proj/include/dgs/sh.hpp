#pragma once

#include <Eigen/Dense>

#include "dgs/types.hpp"

namespace dgs {

// Real spherical harmonics up to degree 3 in the splatting convention:
// coefficient index l*l + l + m, basis functions carrying a (-1)^m factor
// relative to the orthonormal real SH (so Y_1 = (-c1 y, c1 z, -c1 x)).

inline constexpr double kShC0 = 0.28209479177387814;

/// Sum of c_{l,m} Y_{l,m}(dir). Throws ConfigError for |dir| != 1 ± 1e-9.
double eval_sh(const ShCoeffs& coeffs, const Vec3& dir);

/// Wigner small-d matrix d^l(beta), rows/cols indexed by m' + l, m + l.
Eigen::MatrixXd wigner_small_d(int l, double beta);

struct EulerZYZ {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

/// R = Rz(alpha) Ry(beta) Rz(gamma). When sin(beta) vanishes gamma is set to 0.
EulerZYZ rotation_to_euler_zyz(const Mat3& r);
Mat3 euler_zyz_to_rotation(const EulerZYZ& e);

/// Per-degree orthogonal blocks acting on coefficient vectors.
struct ShBlockRotation {
  Eigen::Matrix<double, 1, 1> l0 = Eigen::Matrix<double, 1, 1>::Identity();
  Eigen::Matrix3d l1 = Eigen::Matrix3d::Identity();
  Eigen::Matrix<double, 5, 5> l2 = Eigen::Matrix<double, 5, 5>::Identity();
  Eigen::Matrix<double, 7, 7> l3 = Eigen::Matrix<double, 7, 7>::Identity();

  Eigen::MatrixXd block(int l) const;
  void apply(ShCoeffs& coeffs) const;
};

/// Blocks such that eval_sh(rotated, R d) == eval_sh(original, d).
ShBlockRotation sh_block_rotation(const Mat3& r);

ShCoeffs rotate_sh(const ShCoeffs& coeffs, const Mat3& r);
ShColor rotate_sh(const ShColor& coeffs, const Mat3& r);

}  // namespace dgs
