#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dgs {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr int kShCoeffs = 16;  // degrees 0..3
inline constexpr int kShChannels = 3;

/// Per-channel real SH coefficients, degree-major (index l*l + l + m).
using ShCoeffs = std::array<double, kShCoeffs>;
using ShColor = std::array<ShCoeffs, kShChannels>;

/// Malformed input files (PLY headers, raster/volume containers, JSON).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments or configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Solver divergence, NaNs, CFL violations and other numerical failures.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One Gaussian splat.
///
/// Covariance is factored as R S S^T R^T with R from `rotation` and
/// S = diag(scales).
struct GaussianKernel {
  Vec3 center = Vec3::Zero();
  double opacity = 1.0;
  Quat rotation = Quat::Identity();
  Vec3 scales = Vec3::Ones();
  ShColor sh{};
  int label = 0;

  Mat3 rotation_matrix() const { return rotation.toRotationMatrix(); }
  Mat3 covariance() const {
    const Mat3 r = rotation_matrix();
    return r * scales.cwiseAbs2().asDiagonal() * r.transpose();
  }
};

/// Pinhole camera. The pose maps world points into the camera frame:
/// x_cam = rotation * x_world + translation. Pixel (i, j) has its center at
/// image coordinates (i, j).
struct Camera {
  Mat3 intrinsics = Mat3::Identity();
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  int width = 0;
  int height = 0;

  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  /// World-space direction through the pixel coordinate (u, v); not normalized.
  Vec3 ray_direction(double u, double v) const {
    return rotation.transpose() * (intrinsics.inverse() * Vec3(u, v, 1.0));
  }

  /// Looks from `eye` toward `target`; +y image axis points along -up.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                        double focal, int width, int height);

  /// Throws ConfigError when K is not upper-triangular with positive focals
  /// or the rotation is not orthonormal.
  void validate() const;
};

struct SplatScene {
  std::vector<GaussianKernel> kernels;
  std::vector<Camera> cameras;
  std::optional<Vec3> up_axis;
};

inline Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                              double focal, int width, int height) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-12) x = z.unitOrthogonal();
  x.normalize();
  const Vec3 y = z.cross(x);
  Camera cam;
  cam.rotation.row(0) = x.transpose();
  cam.rotation.row(1) = y.transpose();
  cam.rotation.row(2) = z.transpose();
  cam.translation = -cam.rotation * eye;
  cam.intrinsics << focal, 0.0, 0.5 * (width - 1), 0.0, focal, 0.5 * (height - 1), 0.0, 0.0, 1.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

inline void Camera::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("camera: non-positive image size");
  if (intrinsics(1, 0) != 0.0 || intrinsics(2, 0) != 0.0 || intrinsics(2, 1) != 0.0 ||
      intrinsics(2, 2) != 1.0)
    throw ConfigError("camera: intrinsics must be upper-triangular with K[2][2] = 1");
  if (!(intrinsics(0, 0) > 0.0) || !(intrinsics(1, 1) > 0.0))
    throw ConfigError("camera: focal lengths must be positive");
  if ((rotation * rotation.transpose() - Mat3::Identity()).norm() > 1e-6 ||
      rotation.determinant() < 0.0)
    throw ConfigError("camera: pose rotation is not orthonormal");
}

}  // namespace dgs
