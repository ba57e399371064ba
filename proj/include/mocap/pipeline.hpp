#pragma once

#include <array>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocap/estimator.hpp"
#include "mocap/refine.hpp"

namespace mocap::pipeline {

enum class PoseFeedbackMode {
  Transition,  // on an unreliable-to-reliable transition plus a K-frame refresh
  Continuous,  // every reliable frame
};

struct PipelineConfig {
  bool pose_feedback = true;
  bool translation_feedback = true;
  bool refine = true;
  bool camera_only = false;  // single camera-frame branch (camera-only variant nets)
  PoseFeedbackMode pose_feedback_mode = PoseFeedbackMode::Transition;
  int refresh_frames = 30;  // K
  refine::RefineWeights weights;
  int refine_iterations = 1;

  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults; throws FormatError on bad values.
  static PipelineConfig from_json(const nlohmann::json& j);
};

struct FrameInput {
  ImuFrame imu;                             // global frame
  std::optional<KeypointFrame> keypoints;   // absent: nothing detected this frame
  double timestamp = 0.0;
};

struct Diagnostics {
  bool pose_feedback = false;
  bool translation_feedback = false;
  bool foot_branch = false;
  bool root_keypoint_valid = true;
  bool refined = false;
  bool refine_line_search_failed = false;
  double refine_energy_before = 0.0;
  double refine_energy_after = 0.0;
  Vec3 refine_translation_delta = Vec3::Zero();  // refined minus filtered translation
  std::vector<int> rotation_fallback_joints;
  std::vector<std::string> flags;
};

struct MotionEstimate {
  int frame = 0;
  double timestamp = 0.0;
  skeleton::Pose pose_camera;               // theta_c
  skeleton::Pose pose_root;                 // theta_r; root entry is the residual R_rc^T theta_c[0]
  Vec3 translation = Vec3::Zero();          // t_c
  skeleton::JointPositions joints;          // fused p_r (root frame, root-relative)
  skeleton::JointPositions joints_camera;   // FK(theta_c), root-relative, camera frame
  skeleton::JointPositions joints_root_branch;    // p_r^e
  skeleton::JointPositions joints_camera_branch;  // p_c^e
  Vec3 velocity = Vec3::Zero();             // v_c
  Vec3 translation_estimate = Vec3::Zero(); // t_c^e
  double sigma_mean = 0.0;
  double weight = 0.0;
  std::array<double, 2> contact{0.0, 0.0};
  Diagnostics diagnostics;

  nlohmann::json to_json() const;
};

inline constexpr std::size_t kSigmaHistory = 300;

// Everything a step reads and writes; copying it snapshots the pipeline.
struct PipelineState {
  std::array<nn::HiddenState, estimator::kAllNets.size()> hidden;
  std::optional<Vec3> translation;           // filtered t_c, before refinement
  skeleton::Pose last_decoded;               // previous 6D decoding, the fallback for degenerate joints
  std::optional<std::array<Vec3, 2>> feet;  // root-relative feet, camera orientation
  std::optional<KeypointFrame> last_keypoints;
  std::optional<Vec2> last_root;
  bool reliable = false;
  int frames_since_pose_feedback = 0;
  int frame = 0;
  int pose_feedback_count = 0;
  int translation_feedback_count = 0;
  estimator::GravityState gravity;
  std::vector<double> sigma_history;  // most recent kSigmaHistory frames

  bool operator==(const PipelineState&) const = default;
};

class Pipeline {
 public:
  // `camera_height` enables the floor clamp; throws MissingCheckpoint when
  // the bundle lacks a net the configuration needs.
  Pipeline(const estimator::Bundle& bundle, const geom::Calibration& calibration, PipelineConfig config = {},
           std::optional<double> camera_height = std::nullopt);

  MotionEstimate step(const FrameInput& input);

  const PipelineState& state() const { return state_; }
  void set_state(const PipelineState& s) { state_ = s; }
  void reset();

  const PipelineConfig& config() const { return config_; }
  const estimator::Bundle& bundle() const { return *bundle_; }
  const geom::Calibration& calibration() const { return calib_; }

 private:
  const nn::RecurrentNet& net(estimator::NetId id) const { return bundle_->net(id); }
  VecX run(estimator::NetId id, const VecX& input);
  void feedback_pose(const skeleton::JointPositions& p_camera, const Mat3& r_rc, double sigma_mean, Diagnostics& d);
  void feedback_translation(const skeleton::Pose& pose_camera, const Vec3& t_c, double sigma_mean, const VecX& x_c,
                            Diagnostics& d);

  const estimator::Bundle* bundle_;
  geom::Calibration calib_;
  PipelineConfig config_;
  std::optional<double> camera_height_;
  skeleton::Pose rest_pose_;
  PipelineState state_;
};

struct StreamSummary {
  int frames = 0;
  double mean_step_ms = 0.0;
  double max_step_ms = 0.0;
  double p95_step_ms = 0.0;
  int pose_feedback_count = 0;
  int translation_feedback_count = 0;
};

using Sink = std::function<void(const MotionEstimate&)>;

// Folds step over the inputs, timing each step.
StreamSummary run_stream(Pipeline& pipeline, const std::vector<FrameInput>& inputs, const Sink& sink = {});

// Frame inputs from synthesized streams; out-of-view frames carry no keypoints.
std::vector<FrameInput> frame_inputs(const sensors::SensorStreams& streams, double frame_rate);

// One JSON object per line.
void write_json_lines(std::ostream& out, const std::vector<MotionEstimate>& estimates);

}  // namespace mocap::pipeline
