#include "mocap/geom.hpp"

#include <algorithm>
#include <fstream>
#include <numbers>

#include <Eigen/SVD>

namespace mocap::geom {

bool is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

Mat3 rot_x(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double angle) { return Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix(); }

Mat3 project_to_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

Rot6D rot_to_6d(const Mat3& r) {
  Rot6D d;
  d.head<3>() = r.col(0);
  d.tail<3>() = r.col(1);
  return d;
}

Vec3 log_so3(const Mat3& r) {
  Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

double geodesic(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  const double c = std::clamp((rel.trace() - 1.0) * 0.5, -1.0, 1.0);
  const Vec3 s(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * s.norm(), c);
}

nlohmann::json Calibration::to_json() const {
  std::vector<double> rows;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rows.push_back(imu_to_camera(r, c));
  return {{"imu_to_camera", rows},
          {"fx", intrinsics.fx},
          {"fy", intrinsics.fy},
          {"cx", intrinsics.cx},
          {"cy", intrinsics.cy}};
}

Calibration Calibration::from_json(const nlohmann::json& j) {
  Calibration c;
  const auto rows = j.at("imu_to_camera").get<std::vector<double>>();
  if (rows.size() != 9) throw FormatError("calibration: imu_to_camera needs 9 values");
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) c.imu_to_camera(r, col) = rows[static_cast<std::size_t>(3 * r + col)];
  if (!is_rotation(c.imu_to_camera, 1e-6)) throw FormatError("calibration: imu_to_camera is not a rotation");
  c.intrinsics.fx = j.at("fx").get<double>();
  c.intrinsics.fy = j.at("fy").get<double>();
  c.intrinsics.cx = j.at("cx").get<double>();
  c.intrinsics.cy = j.at("cy").get<double>();
  return c;
}

void Calibration::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

Calibration Calibration::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingCheckpoint("cannot read calibration " + path.string());
  return from_json(nlohmann::json::parse(in));
}

ImuFrame imu_to_root(const ImuFrame& frame_global) {
  const Mat3 inv = frame_global.root_orientation().transpose();
  ImuFrame out;
  out.frame = CoordFrame::Root;
  for (std::size_t i = 0; i < kSensorCount; ++i) {
    out.orientation[i] = inv * frame_global.orientation[i];
    out.acceleration[i] = inv * frame_global.acceleration[i];
  }
  out.orientation[kRootSensor] = Mat3::Identity();
  return out;
}

ImuFrame imu_to_camera(const ImuFrame& frame_global, const Calibration& calib) {
  ImuFrame out;
  out.frame = CoordFrame::Camera;
  for (std::size_t i = 0; i < kSensorCount; ++i) {
    out.orientation[i] = calib.imu_to_camera * frame_global.orientation[i];
    out.acceleration[i] = calib.imu_to_camera * frame_global.acceleration[i];
  }
  return out;
}

Calibration calibrate_tpose(const ImuFrame& tpose_imu, std::span<const Mat3> known_orientations_camera,
                            const Intrinsics& intrinsics, double max_residual_deg) {
  if (known_orientations_camera.size() != kSensorCount)
    throw DimensionMismatch("calibrate_tpose: expected one reference orientation per sensor");
  // argmin_Q sum ||Q R_i - C_i||_F^2  =  polar factor of sum C_i R_i^T
  Mat3 m = Mat3::Zero();
  for (std::size_t i = 0; i < kSensorCount; ++i)
    m += known_orientations_camera[i] * tpose_imu.orientation[i].transpose();
  Calibration calib;
  calib.imu_to_camera = project_to_rotation(m);
  calib.intrinsics = intrinsics;

  const double limit = max_residual_deg * std::numbers::pi / 180.0;
  for (std::size_t i = 0; i < kSensorCount; ++i) {
    const double err = geodesic(calib.imu_to_camera * tpose_imu.orientation[i], known_orientations_camera[i]);
    if (err > limit)
      throw CalibrationFailure("calibrate_tpose: sensor " + std::to_string(i) + " residual " +
                               std::to_string(err * 180.0 / std::numbers::pi) + " deg");
  }
  return calib;
}

std::vector<Vec2> normalize_keypoints(std::span<const Vec2> pixels, const Intrinsics& k) {
  std::vector<Vec2> out;
  out.reserve(pixels.size());
  for (const Vec2& p : pixels) out.emplace_back((p.x() - k.cx) / k.fx, (p.y() - k.cy) / k.fy);
  return out;
}

std::vector<Vec2> denormalize_keypoints(std::span<const Vec2> normalized, const Intrinsics& k) {
  std::vector<Vec2> out;
  out.reserve(normalized.size());
  for (const Vec2& p : normalized) out.emplace_back(p.x() * k.fx + k.cx, p.y() * k.fy + k.cy);
  return out;
}

KeypointFrame to_normalized(const KeypointFrame& kps, const Intrinsics& k) {
  if (kps.units == KeypointUnits::Normalized) return kps;
  KeypointFrame out = kps;
  out.points = normalize_keypoints(kps.points, k);
  out.units = KeypointUnits::Normalized;
  return out;
}

KeypointFrame to_pixels(const KeypointFrame& kps, const Intrinsics& k) {
  if (kps.units == KeypointUnits::Pixels) return kps;
  KeypointFrame out = kps;
  out.points = denormalize_keypoints(kps.points, k);
  out.units = KeypointUnits::Pixels;
  return out;
}

RootNormalized root_normalize(const KeypointFrame& kps, int root_index, const std::optional<Vec2>& last_root) {
  const int n = static_cast<int>(kps.points.size());
  if (root_index < 0 || root_index >= n) throw DimensionMismatch("root_normalize: root index out of range");
  if (kps.confidence.size() != kps.points.size())
    throw DimensionMismatch("root_normalize: points and confidences differ in length");

  RootNormalized out;
  out.values = VecX::Zero(3 * n);
  const auto ri = static_cast<std::size_t>(root_index);
  if (kps.confidence[ri] > 0.0) {
    out.root = kps.points[ri];
  } else if (last_root) {
    out.root = *last_root;
    out.root_valid = false;
  } else {
    out.root = kps.points[ri];
    out.root_valid = false;
  }

  int slot = 0;
  for (int j = 0; j < n; ++j) {
    if (j == root_index) continue;
    out.values.segment<2>(2 * slot) = kps.points[static_cast<std::size_t>(j)] - out.root;
    ++slot;
  }
  out.values.segment<2>(2 * (n - 1)) = out.root;
  for (int j = 0; j < n; ++j) out.values(2 * n + j) = std::clamp(kps.confidence[static_cast<std::size_t>(j)], 0.0, 1.0);
  return out;
}

}  // namespace mocap::geom
