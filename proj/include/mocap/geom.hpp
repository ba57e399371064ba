#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <json.hpp>

#include "mocap/errors.hpp"
#include "mocap/frames.hpp"

namespace mocap::geom {

using Rot6D = Eigen::Matrix<double, 6, 1>;

inline constexpr double kMinDepth = 0.05;  // meters

bool is_rotation(const Mat3& r, double tol = 1e-9);

Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);

// Nearest rotation in Frobenius norm.
Mat3 project_to_rotation(const Mat3& m);

// First two columns of `r`, stacked column-major.
Rot6D rot_to_6d(const Mat3& r);

// Gram-Schmidt on the two stored columns; the third is their cross product.
template <typename S>
Mat3T<S> rot_from_6d(const Eigen::Matrix<S, 6, 1>& d) {
  using std::sqrt;
  const Vec3T<S> a = d.template head<3>();
  const Vec3T<S> b = d.template tail<3>();
  const S na = sqrt(a.dot(a));
  if (!(scalar_value(na) >= 1e-8)) throw DegenerateInput("rot_from_6d: first column has near-zero norm");
  const Vec3T<S> e1 = a / na;
  const Vec3T<S> u = b - e1 * e1.dot(b);
  const S nu = sqrt(u.dot(u));
  if (!(scalar_value(nu) >= 1e-8)) throw DegenerateInput("rot_from_6d: columns are parallel");
  const Vec3T<S> e2 = u / nu;
  Mat3T<S> r;
  r.col(0) = e1;
  r.col(1) = e2;
  r.col(2) = e1.cross(e2);
  return r;
}

inline Mat3 rot_from_6d(const Rot6D& d) { return rot_from_6d<double>(d); }

template <typename S>
Mat3T<S> skew(const Vec3T<S>& w) {
  Mat3T<S> k;
  k << S(0.0), -w(2), w(1), w(2), S(0.0), -w(0), -w(1), w(0), S(0.0);
  return k;
}

// Rodrigues formula; series expansion near zero keeps derivatives finite.
template <typename S>
Mat3T<S> exp_so3(const Vec3T<S>& w) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S theta2 = w.dot(w);
  const Mat3T<S> k = skew<S>(w);
  Mat3T<S> r = Mat3T<S>::Identity();
  if (scalar_value(theta2) < 1e-16) {
    r += k + (k * k) * S(0.5);
    return r;
  }
  const S theta = sqrt(theta2);
  const S a = sin(theta) / theta;
  const S b = (S(1.0) - cos(theta)) / theta2;
  r += k * a + (k * k) * b;
  return r;
}

Vec3 log_so3(const Mat3& r);

// Rotation angle of a^T b, in radians.
double geodesic(const Mat3& a, const Mat3& b);

template <typename S>
Eigen::Matrix<S, 2, 1> project_z1(const Vec3T<S>& p) {
  if (!(scalar_value(p(2)) > kMinDepth)) throw BehindCamera("project_z1: point is behind the camera");
  return Eigen::Matrix<S, 2, 1>(p(0) / p(2), p(1) / p(2));
}

struct FrameTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  FrameTransform operator*(const FrameTransform& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
  FrameTransform inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

struct Intrinsics {
  double fx = 1000.0;
  double fy = 1000.0;
  double cx = 640.0;
  double cy = 360.0;
};

struct Calibration {
  Mat3 imu_to_camera = Mat3::Identity();
  Intrinsics intrinsics;

  nlohmann::json to_json() const;
  static Calibration from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Calibration load(const std::filesystem::path& path);
};

ImuFrame imu_to_root(const ImuFrame& frame_global);
ImuFrame imu_to_camera(const ImuFrame& frame_global, const Calibration& calib);

// Orthogonal Procrustes over the sensors of a single reference-pose frame.
Calibration calibrate_tpose(const ImuFrame& tpose_imu, std::span<const Mat3> known_orientations_camera,
                            const Intrinsics& intrinsics = {}, double max_residual_deg = 10.0);

std::vector<Vec2> normalize_keypoints(std::span<const Vec2> pixels, const Intrinsics& k);
std::vector<Vec2> denormalize_keypoints(std::span<const Vec2> normalized, const Intrinsics& k);
KeypointFrame to_normalized(const KeypointFrame& kps, const Intrinsics& k);
KeypointFrame to_pixels(const KeypointFrame& kps, const Intrinsics& k);

struct RootNormalized {
  VecX values;           // 2(J'-1) offsets, root (x, y), J' confidences
  Vec2 root;             // root position the offsets are relative to
  bool root_valid = true;
};

// `last_root` is used when the root keypoint has zero confidence; without it
// the frame's own (unreliable) root position is used and root_valid is false.
RootNormalized root_normalize(const KeypointFrame& kps, int root_index,
                              const std::optional<Vec2>& last_root = std::nullopt);

}  // namespace mocap::geom
