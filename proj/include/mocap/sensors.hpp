#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocap/frames.hpp"
#include "mocap/geom.hpp"
#include "mocap/skeleton.hpp"

namespace mocap::sensors {

inline const Vec3 kGravity(0.0, -9.8, 0.0);

struct MotionSequence {
  double frame_rate = 30.0;
  std::vector<skeleton::Pose> poses;  // root entry is the global root orientation
  std::vector<Vec3> translations;     // global root positions, meters
  std::string label;
  int hold_start = -1;  // first frame of a static hold, when the generator made one

  std::size_t frame_count() const { return poses.size(); }
  double dt() const { return 1.0 / frame_rate; }

  // Throws FormatError on fewer than 3 frames, mismatched lengths, or a
  // non-positive frame rate.
  void validate(const skeleton::KinematicTree& tree) const;
};

// Global-to-camera extrinsics plus intrinsics; the rotation is what the
// calibration step recovers.
struct CameraRig {
  geom::FrameTransform world_to_camera;
  geom::Intrinsics intrinsics;

  geom::Calibration calibration() const { return {world_to_camera.rotation, intrinsics}; }
  // Height of the camera center above the y = 0 ground plane.
  double height() const { return world_to_camera.inverse().translation.y(); }

  // Camera at `position` looking at `target`, image y pointing down.
  static CameraRig look_at(const Vec3& position, const Vec3& target, const geom::Intrinsics& k = {});
};

struct SensorStreams {
  std::vector<ImuFrame> imu;                // global frame
  std::vector<KeypointFrame> keypoints;     // Z=1 plane
  std::vector<std::uint8_t> out_of_view;    // 1 where the subject is scripted out of view

  std::size_t frame_count() const { return imu.size(); }
};

struct OcclusionWindow {
  int begin = 0;  // inclusive frame
  int end = 0;    // exclusive frame
  std::vector<int> keypoints;  // empty means every keypoint
  double max_confidence = 0.3;
};

struct FrameWindow {
  int begin = 0;
  int end = 0;
};

struct ScenarioScript {
  std::vector<OcclusionWindow> occlusions;
  std::vector<FrameWindow> out_of_view;
  double keypoint_noise_px = 0.0;
  double orientation_jitter_deg = 0.0;
  double accel_bias_drift = 0.0;  // m/s^2 per sqrt(s), random walk intensity

  bool empty() const {
    return occlusions.empty() && out_of_view.empty() && keypoint_noise_px == 0.0 &&
           orientation_jitter_deg == 0.0 && accel_bias_drift == 0.0;
  }
  void validate(std::size_t frame_count) const;

  nlohmann::json to_json() const;
  static ScenarioScript from_json(const nlohmann::json& j);
};

// Keypoint i observes joint correspondence[i].
using Correspondence = std::vector<int>;
Correspondence identity_correspondence(const skeleton::KinematicTree& tree);
int root_keypoint(const Correspondence& correspondence);

std::vector<ImuFrame> synthesize_imus(const MotionSequence& motion, const skeleton::KinematicTree& tree);

std::vector<KeypointFrame> synthesize_keypoints(const MotionSequence& motion, const skeleton::KinematicTree& tree,
                                                const CameraRig& rig, const Correspondence& correspondence);

// Projects camera-frame joints; keypoints behind the camera get confidence 0
// and keep the previous position (or the origin without one).
KeypointFrame project_joints(const std::vector<Vec3>& joints_camera, const Correspondence& correspondence,
                             const KeypointFrame* previous = nullptr);

SensorStreams synthesize_streams(const MotionSequence& motion, const skeleton::KinematicTree& tree,
                                 const CameraRig& rig, const Correspondence& correspondence);

SensorStreams apply_scenario(const SensorStreams& streams, const ScenarioScript& script, std::uint64_t seed,
                             const geom::Intrinsics& intrinsics, double frame_rate);

// Ground truth derived from a motion for a given camera.
struct GroundTruth {
  std::vector<Vec3> translation_camera;           // root position in the camera frame
  std::vector<std::vector<Vec3>> joints_root;     // root-relative joints, root frame
  std::vector<std::vector<Vec3>> joints_camera;   // root-relative joints, camera frame
  std::vector<skeleton::Pose> pose_root;          // local rotations, root entry identity
  std::vector<skeleton::Pose> pose_camera;        // local rotations, root entry in camera frame
  std::vector<std::array<double, 2>> contact;     // left, right foot labels in {0, 1}
  std::vector<Vec3> velocity_root;                // root velocity in the root frame, m/s
  std::vector<Vec3> velocity_camera;              // root velocity in the camera frame, m/s
};

GroundTruth ground_truth(const MotionSequence& motion, const skeleton::KinematicTree& tree, const CameraRig& rig);

enum class MotionKind { Walk, Turn, Squat, Bend, Sit, ArmRaise, Jump, Stand };
std::string to_string(MotionKind kind);

struct MotionParams {
  double duration_s = 6.0;
  double frame_rate = 30.0;
  Vec3 start = Vec3::Zero();  // ground position under the pelvis at frame 0 (y ignored)
  double heading = 0.0;       // radians about +y
};

MotionSequence generate_motion(MotionKind kind, const skeleton::KinematicTree& tree, std::uint64_t seed,
                               const MotionParams& params = {});

struct AmbiguousPair {
  MotionSequence bend;
  MotionSequence sit;
  int divergence_frame = 0;  // first frame where the poses differ
  int hold_frame = 0;        // first frame of the shared static hold
};

// Bend-forward and sit-down motions that share a standing prefix and whose
// sensor orientations agree on every frame; once both holds are static the
// synthesized measurements coincide.
AmbiguousPair make_ambiguous_pair(const skeleton::KinematicTree& tree, std::uint64_t seed, double stand_s = 1.0,
                                  double transition_s = 1.5, double hold_s = 5.0, const MotionParams& params = {});

std::vector<MotionSequence> generate_procedural_motions(int count, std::uint64_t seed,
                                                        const skeleton::KinematicTree& tree = skeleton::KinematicTree::smpl_mean());

// Dataset directory: motion.json, imu.bin, kp.bin (pixels), scenario.json,
// camera.json.
struct Dataset {
  MotionSequence motion;
  SensorStreams streams;
  ScenarioScript scenario;
  CameraRig rig;
};

void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

nlohmann::json motion_to_json(const MotionSequence& motion);
MotionSequence motion_from_json(const nlohmann::json& j);

}  // namespace mocap::sensors
