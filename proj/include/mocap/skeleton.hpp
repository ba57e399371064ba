#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocap/frames.hpp"

namespace mocap::skeleton {

// Joint indices of the default 24-joint body.
namespace smpl {
enum Joint : int {
  Pelvis = 0, LHip, RHip, Spine1, LKnee, RKnee, Spine2, LAnkle, RAnkle, Spine3, LFoot, RFoot,
  Neck, LCollar, RCollar, Head, LShoulder, RShoulder, LElbow, RElbow, LWrist, RWrist, LHand, RHand
};
inline constexpr int kJointCount = 24;
}  // namespace smpl

// Penalized bending: `sign * (axis . axis_angle)` > 0 means hyperextension.
struct Hinge {
  int joint = 0;
  Vec3 axis = Vec3::UnitX();
  double sign = 1.0;
};

enum class FootSide { Left, Right };

struct KinematicTree {
  std::vector<std::string> names;
  std::vector<int> parents;  // parents[0] == -1; parents[j] < j otherwise
  std::vector<Vec3> offsets; // parent-relative rest offsets, meters
  std::array<int, kSensorCount> mounts{};  // indexed by Sensor
  int left_foot = 0;
  int right_foot = 0;
  std::vector<Hinge> hinges;

  int joint_count() const { return static_cast<int>(parents.size()); }
  int mount(Sensor s) const { return mounts[static_cast<std::size_t>(s)]; }
  int foot(FootSide side) const { return side == FootSide::Left ? left_foot : right_foot; }

  // Throws FormatError unless parents form a single tree rooted at joint 0
  // listed in topological order and all named indices are valid joints.
  void validate() const;

  static KinematicTree smpl_mean();

  nlohmann::json to_json() const;
  static KinematicTree from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static KinematicTree load(const std::filesystem::path& path);
};

// Local joint rotations; entry 0 is the root orientation in the pose's frame.
using Pose = std::vector<Mat3>;

struct JointPositions {
  std::vector<Vec3> points;
  CoordFrame frame = CoordFrame::Root;
  bool root_relative = true;

  VecX flatten() const;
  static JointPositions unflatten(const VecX& x, CoordFrame frame, bool root_relative = true);
};

Pose identity_pose(const KinematicTree& tree);

// Standing with arms hanging (shoulders rotated down). Falls back to the
// identity pose on trees that are not the default body.
Pose neutral_pose(const KinematicTree& tree);

template <typename S>
std::vector<Mat3T<S>> global_rotations_t(const KinematicTree& tree, const std::vector<Mat3T<S>>& pose) {
  std::vector<Mat3T<S>> g(pose.size());
  g[0] = pose[0];
  for (std::size_t j = 1; j < pose.size(); ++j) g[j] = g[static_cast<std::size_t>(tree.parents[j])] * pose[j];
  return g;
}

template <typename S>
std::vector<Vec3T<S>> positions_from_globals_t(const KinematicTree& tree, const std::vector<Mat3T<S>>& globals,
                                               const Vec3T<S>& root_translation) {
  std::vector<Vec3T<S>> p(globals.size());
  p[0] = root_translation;
  for (std::size_t j = 1; j < globals.size(); ++j) {
    const auto parent = static_cast<std::size_t>(tree.parents[j]);
    p[j] = p[parent] + globals[parent] * tree.offsets[j].template cast<S>();
  }
  return p;
}

template <typename S>
std::vector<Vec3T<S>> forward_kinematics_t(const KinematicTree& tree, const std::vector<Mat3T<S>>& pose,
                                           const Vec3T<S>& root_translation) {
  return positions_from_globals_t<S>(tree, global_rotations_t<S>(tree, pose), root_translation);
}

std::vector<Mat3> global_rotations(const KinematicTree& tree, const Pose& pose);

JointPositions forward_kinematics(const KinematicTree& tree, const Pose& pose,
                                  const Vec3& root_translation = Vec3::Zero(), CoordFrame frame = CoordFrame::Root);

Vec3 supporting_foot(const KinematicTree& tree, const JointPositions& positions, FootSide side);

// Finite difference of the root-relative supporting-foot position.
Vec3 foot_velocity(const KinematicTree& tree, const Pose& pose_k, const Pose& pose_km1, FootSide side, double dt);

}  // namespace mocap::skeleton
