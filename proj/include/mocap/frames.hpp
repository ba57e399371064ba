#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace mocap {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;

inline double scalar_value(double x) { return x; }

template <typename S>
using Vec3T = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Mat3T = Eigen::Matrix<S, 3, 3>;

// Sensor slots, in the order the flattened measurement vector uses.
enum class Sensor : int { LeftForearm = 0, RightForearm, LeftLowerLeg, RightLowerLeg, Head, Pelvis };

inline constexpr int kSensorCount = 6;
inline constexpr int kRootSensor = static_cast<int>(Sensor::Pelvis);
inline constexpr int kImuFeatureSize = (3 + 9) * kSensorCount;  // 72

enum class CoordFrame { Global, Camera, Root };

// Orientations map sensor axes into `frame`; accelerations are expressed in
// `frame` (m/s^2, gravity included as synthesized).
struct ImuFrame {
  std::array<Mat3, kSensorCount> orientation;
  std::array<Vec3, kSensorCount> acceleration;
  CoordFrame frame = CoordFrame::Global;

  ImuFrame() {
    orientation.fill(Mat3::Identity());
    acceleration.fill(Vec3::Zero());
  }

  const Mat3& root_orientation() const { return orientation[kRootSensor]; }

  // [a_larm..a_root, R_larm..R_root], rotations row-major.
  VecX flatten() const {
    VecX x(kImuFeatureSize);
    for (int i = 0; i < kSensorCount; ++i) x.segment<3>(3 * i) = acceleration[static_cast<std::size_t>(i)];
    for (int i = 0; i < kSensorCount; ++i) {
      const Mat3& r = orientation[static_cast<std::size_t>(i)];
      for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col) x(3 * kSensorCount + 9 * i + 3 * row + col) = r(row, col);
    }
    return x;
  }

  static ImuFrame unflatten(const VecX& x, CoordFrame frame) {
    ImuFrame f;
    f.frame = frame;
    for (int i = 0; i < kSensorCount; ++i) f.acceleration[static_cast<std::size_t>(i)] = x.segment<3>(3 * i);
    for (int i = 0; i < kSensorCount; ++i)
      for (int row = 0; row < 3; ++row)
        for (int col = 0; col < 3; ++col)
          f.orientation[static_cast<std::size_t>(i)](row, col) = x(3 * kSensorCount + 9 * i + 3 * row + col);
    return f;
  }
};

enum class KeypointUnits { Normalized, Pixels };

// J' detections. Normalized units are points on the Z=1 plane.
struct KeypointFrame {
  std::vector<Vec2> points;
  std::vector<double> confidence;
  KeypointUnits units = KeypointUnits::Normalized;

  std::size_t size() const { return points.size(); }

  // Arithmetic mean over all keypoints; an empty frame counts as 0.
  double mean_confidence() const {
    if (confidence.empty()) return 0.0;
    double s = 0.0;
    for (double c : confidence) s += c;
    return s / static_cast<double>(confidence.size());
  }

  bool operator==(const KeypointFrame&) const = default;
};

}  // namespace mocap
