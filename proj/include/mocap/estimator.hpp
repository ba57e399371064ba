#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocap/frames.hpp"
#include "mocap/geom.hpp"
#include "mocap/nn/gru.hpp"
#include "mocap/nn/train.hpp"
#include "mocap/sensors.hpp"
#include "mocap/skeleton.hpp"

namespace mocap::estimator {

using nn::MatX;

// Fusion constants and filter parameters stored in fusion.json.
struct FusionParams {
  double lower_bound = 0.7;         // below: IMU-only joints, translation feedback
  double upper_bound = 0.8;         // at or above: camera joints, pose feedback
  double contact_threshold = 0.7;   // s >= threshold selects the foot branch
  double gain = 0.05;               // alpha = gain * sigma_mean
  bool damp_velocity = true;        // (1 - alpha) factor on the velocity term
  double gravity_rate = 0.3;        // m/s^2
  double gravity_terminal = 1.0;    // m/s
  Vec3 initial_translation = Vec3(0.0, 0.0, 3.0);
  double frame_rate = 30.0;

  void validate() const;
  nlohmann::json to_json() const;
  static FusionParams from_json(const nlohmann::json& j);
};

enum class NetId { P1, P2, P3, T1, T2, T3, P3Camera, T1Camera, T2Camera };
inline constexpr std::array<NetId, 9> kAllNets{NetId::P1, NetId::P2, NetId::P3, NetId::T1, NetId::T2,
                                               NetId::T3, NetId::P3Camera, NetId::T1Camera, NetId::T2Camera};
std::string to_string(NetId id);
NetId net_from_string(const std::string& name);  // throws FormatError

struct NetShape {
  int input = 0;
  int output = 0;
};
NetShape net_shape(NetId id, int joints, int keypoints);

struct NetSizes {
  int hidden = 64;
  int layers = 2;
  std::vector<int> initializer_widths{128};
};

struct Bundle {
  skeleton::KinematicTree tree = skeleton::KinematicTree::smpl_mean();
  sensors::Correspondence correspondence = sensors::identity_correspondence(tree);
  FusionParams fusion;
  std::array<nn::RecurrentNet, kAllNets.size()> nets;
  nn::InitializerNet p1_init;
  nlohmann::json extra = nlohmann::json::object();  // other modules' settings kept in fusion.json

  nn::RecurrentNet& net(NetId id) { return nets[static_cast<std::size_t>(id)]; }
  const nn::RecurrentNet& net(NetId id) const { return nets[static_cast<std::size_t>(id)]; }
  bool has(NetId id) const { return net(id).parameter_count() > 0; }
  int joints() const { return tree.joint_count(); }
  int keypoints() const { return static_cast<int>(correspondence.size()); }

  // Fresh networks of the configured sizes with seeded weights.
  static Bundle create(const skeleton::KinematicTree& tree, const sensors::Correspondence& correspondence,
                       const NetSizes& sizes, std::uint64_t seed, bool camera_only_variants = true);

  // Directory with one .bin per net, skeleton.json and fusion.json.
  void save(const std::filesystem::path& dir) const;
  // Throws MissingCheckpoint when fusion.json or a core net is absent.
  static Bundle load(const std::filesystem::path& dir);
};

// ---- input features ---------------------------------------------------------

VecX concat(const VecX& a, const VecX& b);

// [x_c, root-normalized keypoints]
VecX camera_pose_input(const VecX& x_c, const geom::RootNormalized& kps);
// [x_c, keypoint positions, confidences]
VecX camera_translation_input(const VecX& x_c, const KeypointFrame& kps);

// ---- fusion rules -----------------------------------------------------------

double branch_weight(double sigma_mean, const FusionParams& params);

struct FusedJoints {
  skeleton::JointPositions joints;  // root frame, root-relative
  double weight = 0.0;              // camera-branch weight
};

FusedJoints fuse_joints(const skeleton::JointPositions& p_root, const skeleton::JointPositions& p_camera,
                        const Mat3& root_orientation_camera, double sigma_mean, const FusionParams& params = {});

struct RotationEstimate {
  skeleton::Pose pose;
  std::vector<int> fallback_joints;  // joints whose 6D output was degenerate
};

// Per-joint 6D decoding; degenerate joints reuse `previous` (or identity).
RotationEstimate rotations_from_6d(const VecX& phi, const skeleton::Pose* previous);
VecX rotations_to_6d(const skeleton::Pose& pose);

struct VelocityChoice {
  Vec3 velocity;
  bool foot_branch = false;
  skeleton::FootSide support = skeleton::FootSide::Left;
};

// `contact` holds left/right probabilities. Contact (max >= threshold) gives
// -v_foot of the more probable foot (left on ties); otherwise v_estimated.
VelocityChoice select_velocity(const std::array<double, 2>& contact, const Vec3& v_estimated,
                               const std::array<Vec3, 2>& v_foot, double threshold = 0.7);

Vec3 complementary_fuse(const Vec3& t_prev, const Vec3& v_c, const Vec3& t_estimated, double sigma_mean, double dt,
                        const FusionParams& params = {});

struct GravityState {
  double speed = 0.0;  // accumulated downward speed, m/s

  bool operator==(const GravityState&) const = default;
};

// Applies the accumulated downward velocity while both feet are off the
// ground. `down` is the unit gravity direction in the output frame.
Vec3 apply_gravity_velocity(const Vec3& t, double max_contact, double dt, const Vec3& down, GravityState& state,
                            const FusionParams& params = {});

// Smallest shift of `t` along `up` that keeps every joint t + joints[j] on
// or above the ground plane {p : up . p + height = 0}.
Vec3 clamp_to_floor(const Vec3& t, const std::vector<Vec3>& joints_relative, const Vec3& up, double height);

// ---- losses -----------------------------------------------------------------

// lambda_rot * ||phi - phi_gt||^2 + lambda_pos * ||FK(phi) - p_gt||^2 per
// frame, averaged over frames. Targets stack [phi_gt (6J); p_gt (3J)].
class RotationLoss : public nn::SequenceLoss {
 public:
  RotationLoss(skeleton::KinematicTree tree, double lambda_rot = 1.0, double lambda_pos = 100.0)
      : tree_(std::move(tree)), lambda_rot_(lambda_rot), lambda_pos_(lambda_pos) {}
  double evaluate(const MatX& outputs, const MatX& targets, MatX* grad) const override;

  struct Terms {
    double rot = 0.0;
    double pos = 0.0;
  };
  Terms terms(const VecX& phi, const VecX& phi_gt, const VecX& p_gt) const;

 private:
  skeleton::KinematicTree tree_;
  double lambda_rot_;
  double lambda_pos_;
};

std::unique_ptr<nn::SequenceLoss> make_loss(NetId id, const Bundle& bundle);

// ---- training data ----------------------------------------------------------

// A motion with its camera, degraded streams, and ground truth.
struct SequenceData {
  sensors::MotionSequence motion;
  sensors::CameraRig rig;
  sensors::SensorStreams streams;
  sensors::GroundTruth truth;
};

struct AugmentConfig {
  double keypoint_noise_px = 2.0;
  double orientation_jitter_deg = 1.0;
  double occlusion_probability = 0.3;     // per sequence: a partial occlusion window
  double out_of_view_probability = 0.3;   // per sequence, used for the pose nets only
  double joint_noise_m = 0.025;           // noise on joint inputs of the rotation nets
};

// Camera placed 3-6 m from the trajectory centroid at a random azimuth.
sensors::CameraRig random_rig(const sensors::MotionSequence& motion, std::uint64_t seed);

SequenceData prepare_sequence(const sensors::MotionSequence& motion, const skeleton::KinematicTree& tree,
                              const sensors::CameraRig& rig, const sensors::Correspondence& correspondence,
                              const sensors::ScenarioScript& scenario, std::uint64_t seed);

// Visible streams with light noise for the translation nets, and a second
// variant with occlusion/out-of-view windows for the pose nets.
struct TrainingCorpus {
  std::vector<SequenceData> clean;     // keypoint noise only
  std::vector<SequenceData> degraded;  // plus occlusion and out-of-view windows
};

TrainingCorpus make_corpus(const std::vector<sensors::MotionSequence>& motions, const Bundle& bundle,
                           const AugmentConfig& augment, std::uint64_t seed);

struct ChunkConfig {
  int length = 64;
  int stride = 32;
};

std::vector<nn::TrainSample> build_samples(NetId id, const TrainingCorpus& corpus, const Bundle& bundle,
                                           const ChunkConfig& chunks, const AugmentConfig& augment,
                                           std::uint64_t seed);

// Sets input/output standardization of the net (and the P1 initializer)
// from the samples.
void fit_normalization(NetId id, Bundle& bundle, const std::vector<nn::TrainSample>& samples);

struct NetTrainResult {
  NetId id;
  nn::TrainReport report;
  double seconds = 0.0;
  int samples = 0;
};

struct BundleTrainConfig {
  nn::TrainConfig train;
  ChunkConfig chunks;
  AugmentConfig augment;
  std::vector<NetId> nets{kAllNets.begin(), kAllNets.end()};
  std::uint64_t seed = 7;
};

using Logger = std::function<void(const std::string&)>;

std::vector<NetTrainResult> train_bundle(Bundle& bundle, const TrainingCorpus& corpus, const BundleTrainConfig& config,
                                         const Logger& log = {});

}  // namespace mocap::estimator
