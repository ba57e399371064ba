#include "mocap/sensors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include "mocap/errors.hpp"

namespace mocap::sensors {

using skeleton::KinematicTree;
using skeleton::Pose;

void MotionSequence::validate(const KinematicTree& tree) const {
  if (!(frame_rate > 0.0)) throw FormatError("motion: frame rate must be positive");
  if (poses.size() < 3) throw FormatError("motion: at least 3 frames are required");
  if (translations.size() != poses.size()) throw FormatError("motion: poses and translations differ in length");
  for (const Pose& p : poses)
    if (static_cast<int>(p.size()) != tree.joint_count()) throw FormatError("motion: pose size does not match tree");
}

CameraRig CameraRig::look_at(const Vec3& position, const Vec3& target, const geom::Intrinsics& k) {
  const Vec3 z = (target - position).normalized();
  Vec3 x = z.cross(Vec3::UnitY());
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);  // points toward -Y (down) for a level camera
  CameraRig rig;
  rig.world_to_camera.rotation.row(0) = x.transpose();
  rig.world_to_camera.rotation.row(1) = y.transpose();
  rig.world_to_camera.rotation.row(2) = z.transpose();
  rig.world_to_camera.translation = -(rig.world_to_camera.rotation * position);
  rig.intrinsics = k;
  return rig;
}

void ScenarioScript::validate(std::size_t frame_count) const {
  const int n = static_cast<int>(frame_count);
  auto check = [n](int b, int e) {
    if (b < 0 || e < b || e > n) throw FormatError("scenario: window outside the sequence");
  };
  for (const auto& w : occlusions) {
    check(w.begin, w.end);
    if (w.max_confidence < 0.0 || w.max_confidence > 1.0) throw FormatError("scenario: occlusion level outside [0,1]");
  }
  for (const auto& w : out_of_view) check(w.begin, w.end);
  if (keypoint_noise_px < 0.0 || orientation_jitter_deg < 0.0 || accel_bias_drift < 0.0)
    throw FormatError("scenario: noise parameters must be non-negative");
}

nlohmann::json ScenarioScript::to_json() const {
  nlohmann::json j;
  j["occlusions"] = nlohmann::json::array();
  for (const auto& w : occlusions)
    j["occlusions"].push_back(
        {{"begin", w.begin}, {"end", w.end}, {"keypoints", w.keypoints}, {"max_confidence", w.max_confidence}});
  j["out_of_view"] = nlohmann::json::array();
  for (const auto& w : out_of_view) j["out_of_view"].push_back({{"begin", w.begin}, {"end", w.end}});
  j["keypoint_noise_px"] = keypoint_noise_px;
  j["orientation_jitter_deg"] = orientation_jitter_deg;
  j["accel_bias_drift"] = accel_bias_drift;
  return j;
}

ScenarioScript ScenarioScript::from_json(const nlohmann::json& j) {
  ScenarioScript s;
  if (j.contains("occlusions"))
    for (const auto& w : j.at("occlusions"))
      s.occlusions.push_back({w.at("begin").get<int>(), w.at("end").get<int>(),
                              w.value("keypoints", std::vector<int>{}), w.value("max_confidence", 0.3)});
  if (j.contains("out_of_view"))
    for (const auto& w : j.at("out_of_view")) s.out_of_view.push_back({w.at("begin").get<int>(), w.at("end").get<int>()});
  s.keypoint_noise_px = j.value("keypoint_noise_px", 0.0);
  s.orientation_jitter_deg = j.value("orientation_jitter_deg", 0.0);
  s.accel_bias_drift = j.value("accel_bias_drift", 0.0);
  return s;
}

Correspondence identity_correspondence(const KinematicTree& tree) {
  Correspondence c(static_cast<std::size_t>(tree.joint_count()));
  for (int j = 0; j < tree.joint_count(); ++j) c[static_cast<std::size_t>(j)] = j;
  return c;
}

int root_keypoint(const Correspondence& correspondence) {
  const auto it = std::find(correspondence.begin(), correspondence.end(), 0);
  if (it == correspondence.end()) throw FormatError("correspondence does not observe the root joint");
  return static_cast<int>(it - correspondence.begin());
}

std::vector<ImuFrame> synthesize_imus(const MotionSequence& motion, const KinematicTree& tree) {
  motion.validate(tree);
  const std::size_t n = motion.frame_count();
  const double inv_dt2 = motion.frame_rate * motion.frame_rate;

  std::vector<std::array<Vec3, kSensorCount>> mount_pos(n);
  std::vector<ImuFrame> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto globals = skeleton::global_rotations(tree, motion.poses[k]);
    const auto pos = skeleton::positions_from_globals_t<double>(tree, globals, motion.translations[k]);
    for (std::size_t s = 0; s < kSensorCount; ++s) {
      const auto m = static_cast<std::size_t>(tree.mounts[s]);
      out[k].orientation[s] = globals[m];
      mount_pos[k][s] = pos[m];
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    // one-sided second differences at the ends reuse the nearest interior stencil
    const std::size_t c = std::clamp<std::size_t>(k, 1, n - 2);
    for (std::size_t s = 0; s < kSensorCount; ++s) {
      const Vec3 acc = (mount_pos[c + 1][s] - 2.0 * mount_pos[c][s] + mount_pos[c - 1][s]) * inv_dt2;
      out[k].acceleration[s] = acc + kGravity;
    }
  }
  return out;
}

KeypointFrame project_joints(const std::vector<Vec3>& joints_camera, const Correspondence& correspondence,
                             const KeypointFrame* previous) {
  KeypointFrame kf;
  kf.units = KeypointUnits::Normalized;
  kf.points.resize(correspondence.size(), Vec2::Zero());
  kf.confidence.resize(correspondence.size(), 0.0);
  for (std::size_t i = 0; i < correspondence.size(); ++i) {
    const Vec3& p = joints_camera.at(static_cast<std::size_t>(correspondence[i]));
    if (p.z() > geom::kMinDepth) {
      kf.points[i] = geom::project_z1<double>(p);
      kf.confidence[i] = 1.0;
    } else if (previous != nullptr && i < previous->points.size()) {
      kf.points[i] = previous->points[i];
    }
  }
  return kf;
}

std::vector<KeypointFrame> synthesize_keypoints(const MotionSequence& motion, const KinematicTree& tree,
                                                const CameraRig& rig, const Correspondence& correspondence) {
  motion.validate(tree);
  std::vector<KeypointFrame> out;
  out.reserve(motion.frame_count());
  for (std::size_t k = 0; k < motion.frame_count(); ++k) {
    auto joints = skeleton::forward_kinematics_t<double>(tree, motion.poses[k], motion.translations[k]);
    for (Vec3& p : joints) p = rig.world_to_camera.apply(p);
    out.push_back(project_joints(joints, correspondence, out.empty() ? nullptr : &out.back()));
  }
  return out;
}

SensorStreams synthesize_streams(const MotionSequence& motion, const KinematicTree& tree, const CameraRig& rig,
                                 const Correspondence& correspondence) {
  SensorStreams s;
  s.imu = synthesize_imus(motion, tree);
  s.keypoints = synthesize_keypoints(motion, tree, rig, correspondence);
  s.out_of_view.assign(motion.frame_count(), 0);
  return s;
}

SensorStreams apply_scenario(const SensorStreams& streams, const ScenarioScript& script, std::uint64_t seed,
                             const geom::Intrinsics& intrinsics, double frame_rate) {
  script.validate(streams.frame_count());
  SensorStreams out = streams;
  if (script.empty()) return out;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = out.frame_count();

  if (script.keypoint_noise_px > 0.0) {
    for (auto& kf : out.keypoints)
      for (auto& p : kf.points) {
        p.x() += gauss(rng) * script.keypoint_noise_px / intrinsics.fx;
        p.y() += gauss(rng) * script.keypoint_noise_px / intrinsics.fy;
      }
  }

  for (const auto& w : script.occlusions)
    for (int k = w.begin; k < w.end; ++k) {
      auto& conf = out.keypoints[static_cast<std::size_t>(k)].confidence;
      if (w.keypoints.empty()) {
        for (double& c : conf) c = std::min(c, w.max_confidence);
      } else {
        for (int i : w.keypoints) conf.at(static_cast<std::size_t>(i)) = std::min(conf.at(static_cast<std::size_t>(i)), w.max_confidence);
      }
    }

  for (const auto& w : script.out_of_view) {
    for (int k = w.begin; k < w.end; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      auto& kf = out.keypoints[uk];
      if (k > 0) kf.points = out.keypoints[uk - 1].points;  // frozen at the last seen detection
      std::fill(kf.confidence.begin(), kf.confidence.end(), 0.0);
      out.out_of_view[uk] = 1;
    }
  }

  if (script.orientation_jitter_deg > 0.0) {
    const double max_angle = script.orientation_jitter_deg * std::numbers::pi / 180.0;
    for (auto& f : out.imu)
      for (auto& r : f.orientation) {
        Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
        if (axis.norm() < 1e-12) axis = Vec3::UnitX();
        const double angle = unit(rng) * max_angle;
        r = geom::exp_so3<double>(axis.normalized() * angle) * r;
      }
  }

  if (script.accel_bias_drift > 0.0) {
    const double step = script.accel_bias_drift * std::sqrt(1.0 / frame_rate);
    std::array<Vec3, kSensorCount> bias;
    bias.fill(Vec3::Zero());
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t s = 0; s < kSensorCount; ++s) {
        bias[s] += step * Vec3(gauss(rng), gauss(rng), gauss(rng));
        out.imu[k].acceleration[s] += bias[s];
      }
  }
  return out;
}

GroundTruth ground_truth(const MotionSequence& motion, const KinematicTree& tree, const CameraRig& rig) {
  motion.validate(tree);
  const std::size_t n = motion.frame_count();
  const Mat3& rc = rig.world_to_camera.rotation;
  GroundTruth gt;
  std::vector<std::array<Vec3, 2>> feet(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Pose& pose = motion.poses[k];
    const Mat3 root = pose[0];
    gt.translation_camera.push_back(rig.world_to_camera.apply(motion.translations[k]));

    Pose pr = pose;
    pr[0] = Mat3::Identity();
    auto jr = skeleton::forward_kinematics_t<double>(tree, pr, Vec3::Zero());
    std::vector<Vec3> jc;
    jc.reserve(jr.size());
    for (const Vec3& p : jr) jc.push_back(rc * root * p);
    Pose pc = pose;
    pc[0] = rc * root;

    feet[k] = {root * jr[static_cast<std::size_t>(tree.left_foot)] + motion.translations[k],
               root * jr[static_cast<std::size_t>(tree.right_foot)] + motion.translations[k]};
    gt.joints_root.push_back(std::move(jr));
    gt.joints_camera.push_back(std::move(jc));
    gt.pose_root.push_back(std::move(pr));
    gt.pose_camera.push_back(std::move(pc));
  }
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = k == 0 ? 0 : k - 1;
    const std::size_t b = k == 0 ? 1 : k;
    const Vec3 v = (motion.translations[b] - motion.translations[a]) * motion.frame_rate;
    gt.velocity_root.push_back(motion.poses[k][0].transpose() * v);
    gt.velocity_camera.push_back(rc * v);
    std::array<double, 2> c{};
    for (std::size_t f = 0; f < 2; ++f) {
      const double speed = (feet[b][f] - feet[a][f]).norm() * motion.frame_rate;
      c[f] = (feet[k][f].y() < 0.1 && speed < 0.35) ? 1.0 : 0.0;
    }
    gt.contact.push_back(c);
  }
  return gt;
}

std::string to_string(MotionKind kind) {
  switch (kind) {
    case MotionKind::Walk: return "walk";
    case MotionKind::Turn: return "turn";
    case MotionKind::Squat: return "squat";
    case MotionKind::Bend: return "bend";
    case MotionKind::Sit: return "sit";
    case MotionKind::ArmRaise: return "arm_raise";
    case MotionKind::Jump: return "jump";
    case MotionKind::Stand: return "stand";
  }
  return "unknown";
}

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// Joint angles (radians) of the procedural body. Flexion angles are
// positive in the anatomical direction.
struct BodyAngles {
  double heading = 0.0;
  double pelvis_twist = 0.0;
  double pelvis_roll = 0.0;
  double hip_l = 0.0, hip_r = 0.0;
  double hip_abd_l = 0.0, hip_abd_r = 0.0;
  double knee_l = 0.0, knee_r = 0.0;
  double spine = 0.0;
  double spine_twist = 0.0;
  double spine_side = 0.0;
  double head_pitch = 0.0;
  double head_yaw = 0.0;
  bool level_head_and_arms = false;  // neck and collars undo the spine flexion
  double shoulder_flex_l = 0.0, shoulder_flex_r = 0.0;
  double shoulder_abd_l = 0.0, shoulder_abd_r = 0.0;
  double elbow_l = 0.0, elbow_r = 0.0;
};

Pose compose(const KinematicTree& tree, const BodyAngles& a) {
  using namespace skeleton::smpl;
  using geom::rot_x;
  using geom::rot_y;
  using geom::rot_z;
  Pose p = skeleton::identity_pose(tree);
  p[Pelvis] = rot_y(a.heading) * rot_y(a.pelvis_twist) * rot_z(a.pelvis_roll);
  p[LHip] = rot_z(a.hip_abd_l) * rot_x(-a.hip_l);
  p[RHip] = rot_z(-a.hip_abd_r) * rot_x(-a.hip_r);
  p[LKnee] = rot_x(a.knee_l);
  p[RKnee] = rot_x(a.knee_r);
  p[Spine1] = rot_y(a.spine_twist / 3.0) * rot_z(a.spine_side / 2.0) * rot_x(0.4 * a.spine);
  p[Spine2] = rot_y(a.spine_twist / 3.0) * rot_z(a.spine_side / 2.0) * rot_x(0.3 * a.spine);
  p[Spine3] = rot_y(a.spine_twist / 3.0) * rot_x(0.3 * a.spine);
  if (a.level_head_and_arms) {
    const Mat3 undo = (p[Spine1] * p[Spine2] * p[Spine3]).transpose();
    p[Neck] = undo;
    p[LCollar] = undo;
    p[RCollar] = undo;
  }
  p[Neck] = p[Neck] * rot_y(a.head_yaw) * rot_x(a.head_pitch);
  const double hang = 80.0 * kDeg;
  p[LShoulder] = rot_x(-a.shoulder_flex_l) * rot_z(-(hang - a.shoulder_abd_l));
  p[RShoulder] = rot_x(-a.shoulder_flex_r) * rot_z(hang - a.shoulder_abd_r);
  p[LElbow] = rot_y(-a.elbow_l);
  p[RElbow] = rot_y(a.elbow_r);
  return p;
}

// Root translations that keep the lower foot on the ground and pin it
// horizontally while it supports the body. `lift` raises the body above the
// supporting foot (ballistic phases) and `glide` adds free horizontal motion
// while lifted.
std::vector<Vec3> pin_feet(const KinematicTree& tree, const std::vector<Pose>& poses, const Vec3& start,
                           const std::vector<double>& lift, const std::vector<Vec3>& glide) {
  const std::size_t n = poses.size();
  std::vector<std::array<Vec3, 2>> feet(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto pos = skeleton::forward_kinematics_t<double>(tree, poses[k], Vec3::Zero());
    feet[k] = {pos[static_cast<std::size_t>(tree.left_foot)], pos[static_cast<std::size_t>(tree.right_foot)]};
  }
  auto ground = [&](std::size_t k) { return -std::min(feet[k][0].y(), feet[k][1].y()); };
  std::vector<Vec3> t(n);
  t[0] = Vec3(start.x(), ground(0) + lift[0], start.z());
  for (std::size_t k = 1; k < n; ++k) {
    Vec3 next = t[k - 1];
    if (lift[k] > 0.0 || lift[k - 1] > 0.0) {
      next += glide[k];
    } else {
      const std::size_t s = feet[k - 1][0].y() <= feet[k - 1][1].y() ? 0 : 1;
      next += feet[k - 1][s] - feet[k][s];
    }
    next.y() = ground(k) + lift[k];
    t[k] = next;
  }
  return t;
}

class Gen {
 public:
  Gen(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

 private:
  std::mt19937_64 rng_;
};

MotionSequence finish(const KinematicTree& tree, std::vector<Pose> poses, const MotionParams& params,
                      std::vector<double> lift, std::vector<Vec3> glide, std::string label) {
  MotionSequence m;
  m.frame_rate = params.frame_rate;
  const std::size_t n = poses.size();
  if (lift.empty()) lift.assign(n, 0.0);
  if (glide.empty()) glide.assign(n, Vec3::Zero());
  m.translations = pin_feet(tree, poses, params.start, lift, glide);
  m.poses = std::move(poses);
  m.label = std::move(label);
  return m;
}

int frames_for(const MotionParams& params) {
  return std::max(3, static_cast<int>(std::lround(params.duration_s * params.frame_rate)));
}

MotionSequence make_walk(const KinematicTree& tree, Gen& g, const MotionParams& params) {
  const int n = frames_for(params);
  const double freq = g.uniform(0.8, 1.1);
  const double hip_amp = g.uniform(18.0, 30.0) * kDeg;
  const double knee_amp = g.uniform(35.0, 55.0) * kDeg;
  const double arm_amp = g.uniform(10.0, 25.0) * kDeg;
  const double turn_rate = (g.coin(0.5) ? 0.0 : g.uniform(-30.0, 30.0)) * kDeg;
  const double phase0 = g.uniform(0.0, 2.0 * std::numbers::pi);
  const double ramp = 0.6;
  const double duration = n / params.frame_rate;
  std::vector<Pose> poses;
  for (int k = 0; k < n; ++k) {
    const double t = k / params.frame_rate;
    const double r = smoothstep(t / ramp) * smoothstep((duration - t) / ramp);
    const double ph = 2.0 * std::numbers::pi * freq * t + phase0;
    BodyAngles a;
    a.heading = params.heading + turn_rate * t;
    a.pelvis_twist = r * 4.0 * kDeg * std::sin(ph);
    a.hip_l = r * hip_amp * std::sin(ph);
    a.hip_r = -r * hip_amp * std::sin(ph);
    a.knee_l = 5.0 * kDeg + r * knee_amp * std::pow(std::max(0.0, std::cos(ph)), 1.5);
    a.knee_r = 5.0 * kDeg + r * knee_amp * std::pow(std::max(0.0, -std::cos(ph)), 1.5);
    a.spine_twist = -r * 5.0 * kDeg * std::sin(ph);
    a.spine = 4.0 * kDeg;
    a.shoulder_flex_l = -r * arm_amp * std::sin(ph);
    a.shoulder_flex_r = r * arm_amp * std::sin(ph);
    a.elbow_l = 12.0 * kDeg + r * 0.5 * arm_amp * std::max(0.0, -std::sin(ph));
    a.elbow_r = 12.0 * kDeg + r * 0.5 * arm_amp * std::max(0.0, std::sin(ph));
    poses.push_back(compose(tree, a));
  }
  return finish(tree, std::move(poses), params, {}, {}, "walk");
}

MotionSequence make_turn(const KinematicTree& tree, Gen& g, const MotionParams& params) {
  const int n = frames_for(params);
  const double rate = (g.coin() ? 1.0 : -1.0) * g.uniform(50.0, 90.0) * kDeg;
  const double step_freq = g.uniform(1.2, 1.8);
  const double duration = n / params.frame_rate;
  std::vector<Pose> poses;
  for (int k = 0; k < n; ++k) {
    const double t = k / params.frame_rate;
    const double r = smoothstep(t / 0.5) * smoothstep((duration - t) / 0.5);
    const double ph = 2.0 * std::numbers::pi * step_freq * t;
    BodyAngles a;
    a.heading = params.heading + rate * (t - 0.25 * (1.0 - r));
    a.hip_l = r * 10.0 * kDeg * std::max(0.0, std::sin(ph));
    a.hip_r = r * 10.0 * kDeg * std::max(0.0, -std::sin(ph));
    a.knee_l = 2.0 * a.hip_l;
    a.knee_r = 2.0 * a.hip_r;
    a.elbow_l = a.elbow_r = 15.0 * kDeg;
    a.head_yaw = r * 0.2 * rate / std::abs(rate);
    poses.push_back(compose(tree, a));
  }
  return finish(tree, std::move(poses), params, {}, {}, "turn");
}

MotionSequence make_squat(const KinematicTree& tree, Gen& g, const MotionParams& params) {
  const int n = frames_for(params);
  const double reps = std::floor(g.uniform(1.5, 3.5));
  const double depth = g.uniform(0.6, 1.0);
  const double duration = n / params.frame_rate;
  const double arms = g.uniform(40.0, 90.0) * kDeg;
  std::vector<Pose> poses;
  for (int k = 0; k < n; ++k) {
    const double t = k / params.frame_rate;
    const double s = depth * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * reps * t / duration));
    BodyAngles a;
    a.heading = params.heading;
    a.hip_l = a.hip_r = 85.0 * kDeg * s;
    a.knee_l = a.knee_r = 105.0 * kDeg * s;
    a.spine = 30.0 * kDeg * s;
    a.shoulder_flex_l = a.shoulder_flex_r = arms * s;
    a.elbow_l = a.elbow_r = 10.0 * kDeg;
    poses.push_back(compose(tree, a));
  }
  return finish(tree, std::move(poses), params, {}, {}, "squat");
}

// Shared timeline of the sit and bend motions.
struct HoldTimeline {
  int stand = 0;
  int transition = 0;
  int hold = 0;
  int rise = 0;  // frames spent returning to standing (0 = stay)

  int total() const { return stand + transition + hold + rise; }
  double level(int k) const {
    if (k < stand) return 0.0;
    if (k < stand + transition) return smoothstep(static_cast<double>(k - stand) / transition);
    if (k < stand + transition + hold || rise == 0) return 1.0;
    return 1.0 - smoothstep(static_cast<double>(k - stand - transition - hold) / rise);
  }
};

BodyAngles sit_angles(double s, double heading) {
  BodyAngles a;
  a.heading = heading;
  a.hip_l = a.hip_r = 90.0 * kDeg * s;
  a.knee_l = a.knee_r = 90.0 * kDeg * s;
  a.elbow_l = a.elbow_r = 10.0 * kDeg;
  return a;
}

BodyAngles bend_angles(double s, double heading, double depth) {
  BodyAngles a;
  a.heading = heading;
  a.spine = depth * s;
  a.level_head_and_arms = true;
  a.elbow_l = a.elbow_r = 10.0 * kDeg;
  return a;
}

MotionSequence make_hold_motion(const KinematicTree& tree, Gen& g, const MotionParams& params, bool bend) {
  const double fps = params.frame_rate;
  HoldTimeline tl;
  tl.stand = static_cast<int>(g.uniform(0.6, 1.2) * fps);
  tl.transition = static_cast<int>(g.uniform(1.0, 1.8) * fps);
  const int n = frames_for(params);
  tl.rise = g.coin(0.5) ? static_cast<int>(g.uniform(1.0, 1.6) * fps) : 0;
  tl.hold = std::max(3, n - tl.stand - tl.transition - tl.rise);
  const double depth = g.uniform(60.0, 85.0) * kDeg;
  std::vector<Pose> poses;
  for (int k = 0; k < tl.total(); ++k) {
    const double s = tl.level(k);
    poses.push_back(compose(tree, bend ? bend_angles(s, params.heading, depth) : sit_angles(s, params.heading)));
  }
  MotionSequence m = finish(tree, std::move(poses), params, {}, {}, bend ? "bend" : "sit");
  m.hold_start = tl.stand + tl.transition;
  return m;
}

MotionSequence make_arm_raise(const KinematicTree& tree, Gen& g, const MotionParams& params) {
  const int n = frames_for(params);
  const double freq = g.uniform(0.25, 0.5);
  const bool sideways = g.coin();
  const double amp = g.uniform(70.0, 150.0) * kDeg;
  const double lag = g.coin() ? 0.0 : std::numbers::pi;
  std::vector<Pose> poses;
  for (int k = 0; k < n; ++k) {
    const double t = k / params.frame_rate;
    const double sl = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * freq * t));
    const double sr = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * freq * t + lag));
    BodyAngles a;
    a.heading = params.heading;
    if (sideways) {
      a.shoulder_abd_l = std::min(amp, 100.0 * kDeg) * sl;
      a.shoulder_abd_r = std::min(amp, 100.0 * kDeg) * sr;
    } else {
      a.shoulder_flex_l = amp * sl;
      a.shoulder_flex_r = amp * sr;
    }
    a.elbow_l = 10.0 * kDeg + 40.0 * kDeg * sl;
    a.elbow_r = 10.0 * kDeg + 40.0 * kDeg * sr;
    a.spine_side = 4.0 * kDeg * (sl - sr);
    poses.push_back(compose(tree, a));
  }
  return finish(tree, std::move(poses), params, {}, {}, "arm_raise");
}

MotionSequence make_jump(const KinematicTree& tree, Gen& g, const MotionParams& params) {
  const double fps = params.frame_rate;
  const int n = frames_for(params);
  const double v0 = g.uniform(1.8, 2.4);
  const double flight = 2.0 * v0 / 9.8;
  const double crouch = 0.45;
  const double cycle = crouch + flight + crouch + g.uniform(0.3, 0.8);
  const Vec3 hdir = geom::rot_y(params.heading) * Vec3::UnitZ();
  const double hspeed = g.coin() ? 0.0 : g.uniform(0.3, 1.0);
  std::vector<Pose> poses;
  std::vector<double> lift(static_cast<std::size_t>(n), 0.0);
  std::vector<Vec3> glide(static_cast<std::size_t>(n), Vec3::Zero());
  for (int k = 0; k < n; ++k) {
    const double t = k / fps - 0.5;  // half a second of standing first
    double bend = 0.0;
    BodyAngles a;
    a.heading = params.heading;
    if (t > 0.0) {
      const double c = std::fmod(t, cycle);
      if (c < crouch) {
        bend = std::sin(std::numbers::pi * c / crouch);
      } else if (c < crouch + flight) {
        const double tau = c - crouch;
        lift[static_cast<std::size_t>(k)] = v0 * tau - 0.5 * 9.8 * tau * tau;
        glide[static_cast<std::size_t>(k)] = hdir * hspeed / fps;
        const double tuck = std::sin(std::numbers::pi * tau / flight);
        a.hip_l = a.hip_r = 25.0 * kDeg * tuck;
        a.knee_l = a.knee_r = 50.0 * kDeg * tuck;
      } else if (c < 2.0 * crouch + flight) {
        bend = std::sin(std::numbers::pi * (c - crouch - flight) / crouch);
      }
    }
    a.hip_l += 45.0 * kDeg * bend;
    a.hip_r += 45.0 * kDeg * bend;
    a.knee_l += 70.0 * kDeg * bend;
    a.knee_r += 70.0 * kDeg * bend;
    a.spine = 20.0 * kDeg * bend;
    a.shoulder_flex_l = a.shoulder_flex_r = 60.0 * kDeg * (lift[static_cast<std::size_t>(k)] > 0.0 ? 1.0 : -0.5 * bend);
    a.elbow_l = a.elbow_r = 15.0 * kDeg;
    poses.push_back(compose(tree, a));
  }
  return finish(tree, std::move(poses), params, std::move(lift), std::move(glide), "jump");
}

MotionSequence make_stand(const KinematicTree& tree, Gen& g, const MotionParams& params) {
  const int n = frames_for(params);
  const double f1 = g.uniform(0.1, 0.3);
  const double f2 = g.uniform(0.2, 0.5);
  const double look = g.uniform(10.0, 30.0) * kDeg;
  std::vector<Pose> poses;
  for (int k = 0; k < n; ++k) {
    const double t = k / params.frame_rate;
    BodyAngles a;
    a.heading = params.heading;
    a.pelvis_roll = 2.0 * kDeg * std::sin(2.0 * std::numbers::pi * f1 * t);
    a.hip_abd_l = -a.pelvis_roll;
    a.hip_abd_r = a.pelvis_roll;
    a.spine = 3.0 * kDeg * std::sin(2.0 * std::numbers::pi * f2 * t);
    a.head_yaw = look * std::sin(2.0 * std::numbers::pi * f2 * 0.5 * t);
    a.elbow_l = 10.0 * kDeg + 20.0 * kDeg * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * f2 * t));
    a.elbow_r = 10.0 * kDeg;
    poses.push_back(compose(tree, a));
  }
  return finish(tree, std::move(poses), params, {}, {}, "stand");
}

void require_default_body(const KinematicTree& tree) {
  if (tree.joint_count() != skeleton::smpl::kJointCount)
    throw DimensionMismatch("procedural motions require the default 24-joint body");
}

}  // namespace

MotionSequence generate_motion(MotionKind kind, const KinematicTree& tree, std::uint64_t seed,
                               const MotionParams& params) {
  require_default_body(tree);
  Gen g(seed);
  switch (kind) {
    case MotionKind::Walk: return make_walk(tree, g, params);
    case MotionKind::Turn: return make_turn(tree, g, params);
    case MotionKind::Squat: return make_squat(tree, g, params);
    case MotionKind::Bend: return make_hold_motion(tree, g, params, true);
    case MotionKind::Sit: return make_hold_motion(tree, g, params, false);
    case MotionKind::ArmRaise: return make_arm_raise(tree, g, params);
    case MotionKind::Jump: return make_jump(tree, g, params);
    case MotionKind::Stand: return make_stand(tree, g, params);
  }
  throw Error("unknown motion kind");
}

AmbiguousPair make_ambiguous_pair(const KinematicTree& tree, std::uint64_t seed, double stand_s,
                                  double transition_s, double hold_s, const MotionParams& params) {
  require_default_body(tree);
  Gen g(seed);
  HoldTimeline tl;
  tl.stand = std::max(1, static_cast<int>(std::lround(stand_s * params.frame_rate)));
  tl.transition = std::max(2, static_cast<int>(std::lround(transition_s * params.frame_rate)));
  tl.hold = std::max(3, static_cast<int>(std::lround(hold_s * params.frame_rate)));
  const double depth = g.uniform(65.0, 85.0) * kDeg;
  std::vector<Pose> bend, sit;
  for (int k = 0; k < tl.total(); ++k) {
    bend.push_back(compose(tree, bend_angles(tl.level(k), params.heading, depth)));
    sit.push_back(compose(tree, sit_angles(tl.level(k), params.heading)));
  }
  AmbiguousPair pair;
  pair.bend = finish(tree, std::move(bend), params, {}, {}, "bend");
  pair.sit = finish(tree, std::move(sit), params, {}, {}, "sit");
  pair.divergence_frame = tl.stand + 1;
  pair.hold_frame = tl.stand + tl.transition;
  pair.bend.hold_start = pair.sit.hold_start = pair.hold_frame;
  return pair;
}

std::vector<MotionSequence> generate_procedural_motions(int count, std::uint64_t seed, const KinematicTree& tree) {
  if (count < 1) throw DegenerateInput("generate_procedural_motions: count must be at least 1");
  require_default_body(tree);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<MotionSequence> out;

  auto random_params = [&](double lo, double hi) {
    MotionParams p;
    p.duration_s = lo + (hi - lo) * unit(rng);
    p.start = Vec3(unit(rng) * 2.0 - 1.0, 0.0, unit(rng) * 2.0 - 1.0);
    p.heading = unit(rng) * 2.0 * std::numbers::pi;
    return p;
  };

  if (count >= 2) {
    MotionParams p = random_params(0.0, 0.0);
    AmbiguousPair pair = make_ambiguous_pair(tree, rng(), 0.5 + unit(rng), 1.0 + 0.8 * unit(rng), 3.0 + 2.0 * unit(rng), p);
    out.push_back(std::move(pair.bend));
    out.push_back(std::move(pair.sit));
  }

  // Sitting is far more common than bending, as in large mocap corpora.
  const std::array<std::pair<MotionKind, double>, 8> weights{{{MotionKind::Walk, 0.28},
                                                              {MotionKind::Sit, 0.16},
                                                              {MotionKind::Stand, 0.10},
                                                              {MotionKind::Squat, 0.10},
                                                              {MotionKind::ArmRaise, 0.10},
                                                              {MotionKind::Turn, 0.09},
                                                              {MotionKind::Jump, 0.12},
                                                              {MotionKind::Bend, 0.05}}};
  int i = 0;
  while (static_cast<int>(out.size()) < count) {
    MotionKind kind;
    if (i < static_cast<int>(weights.size())) {
      kind = weights[static_cast<std::size_t>(i)].first;  // one of each first
    } else {
      double u = unit(rng);
      kind = weights.back().first;
      for (const auto& [k, w] : weights) {
        if (u < w) {
          kind = k;
          break;
        }
        u -= w;
      }
    }
    ++i;
    const bool walk = kind == MotionKind::Walk;
    MotionParams p = random_params(walk ? 6.0 : 4.0, walk ? 8.0 : 7.0);
    out.push_back(generate_motion(kind, tree, rng(), p));
  }
  return out;
}

nlohmann::json motion_to_json(const MotionSequence& motion) {
  nlohmann::json poses = nlohmann::json::array();
  for (const Pose& p : motion.poses) {
    nlohmann::json frame = nlohmann::json::array();
    for (const Mat3& r : p) {
      const Vec3 w = geom::log_so3(r);
      frame.push_back({w.x(), w.y(), w.z()});
    }
    poses.push_back(std::move(frame));
  }
  nlohmann::json trans = nlohmann::json::array();
  for (const Vec3& t : motion.translations) trans.push_back({t.x(), t.y(), t.z()});
  nlohmann::json j{{"frame_rate", motion.frame_rate}, {"poses", poses}, {"translations", trans}};
  if (!motion.label.empty()) j["label"] = motion.label;
  if (motion.hold_start >= 0) j["hold_start"] = motion.hold_start;
  return j;
}

MotionSequence motion_from_json(const nlohmann::json& j) {
  auto vec3 = [](const nlohmann::json& v) {
    const auto a = v.get<std::vector<double>>();
    if (a.size() != 3) throw FormatError("motion: expected a 3-vector");
    return Vec3(a[0], a[1], a[2]);
  };
  MotionSequence m;
  m.frame_rate = j.at("frame_rate").get<double>();
  for (const auto& frame : j.at("poses")) {
    Pose p;
    for (const auto& w : frame) p.push_back(geom::exp_so3<double>(vec3(w)));
    m.poses.push_back(std::move(p));
  }
  for (const auto& t : j.at("translations")) m.translations.push_back(vec3(t));
  m.label = j.value("label", std::string{});
  m.hold_start = j.value("hold_start", -1);
  return m;
}

namespace {

void write_floats(const std::filesystem::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (float f : values) {
    auto bits = std::bit_cast<std::uint32_t>(f);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char b[4];
    std::memcpy(b, &bits, 4);
    out.write(b, 4);
  }
}

std::vector<float> read_floats(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0) throw FormatError(path.string() + ": size is not a multiple of 4 bytes");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  write_json(dir / "motion.json", motion_to_json(data.motion));
  write_json(dir / "scenario.json", data.scenario.to_json());
  nlohmann::json cam = data.rig.calibration().to_json();
  const Vec3 t = data.rig.world_to_camera.translation;
  cam["translation"] = {t.x(), t.y(), t.z()};
  write_json(dir / "camera.json", cam);

  std::vector<float> imu;
  for (const ImuFrame& f : data.streams.imu)
    for (std::size_t s = 0; s < kSensorCount; ++s) {
      for (int i = 0; i < 3; ++i) imu.push_back(static_cast<float>(f.acceleration[s](i)));
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) imu.push_back(static_cast<float>(f.orientation[s](r, c)));
    }
  write_floats(dir / "imu.bin", imu);

  std::vector<float> kp;
  for (const KeypointFrame& f : data.streams.keypoints) {
    const KeypointFrame px = geom::to_pixels(f, data.rig.intrinsics);
    for (std::size_t i = 0; i < px.size(); ++i) {
      kp.push_back(static_cast<float>(px.points[i].x()));
      kp.push_back(static_cast<float>(px.points[i].y()));
      kp.push_back(static_cast<float>(px.confidence[i]));
    }
  }
  write_floats(dir / "kp.bin", kp);
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.motion = motion_from_json(read_json(dir / "motion.json"));
  if (std::filesystem::exists(dir / "scenario.json")) d.scenario = ScenarioScript::from_json(read_json(dir / "scenario.json"));
  if (std::filesystem::exists(dir / "camera.json")) {
    const nlohmann::json cam = read_json(dir / "camera.json");
    const geom::Calibration c = geom::Calibration::from_json(cam);
    d.rig.world_to_camera.rotation = c.imu_to_camera;
    d.rig.intrinsics = c.intrinsics;
    if (cam.contains("translation")) {
      const auto t = cam.at("translation").get<std::vector<double>>();
      if (t.size() != 3) throw FormatError("camera.json: translation must be a 3-vector");
      d.rig.world_to_camera.translation = Vec3(t[0], t[1], t[2]);
    }
  } else {
    d.rig = CameraRig::look_at(Vec3(0.0, 1.0, 4.0), Vec3(0.0, 1.0, 0.0));
  }

  const std::size_t n = d.motion.frame_count();
  const std::vector<float> imu = read_floats(dir / "imu.bin");
  constexpr std::size_t per_frame = 12 * kSensorCount;
  if (imu.size() != n * per_frame) throw FormatError("imu.bin: frame count does not match motion.json");
  d.streams.imu.resize(n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t s = 0; s < kSensorCount; ++s) {
      const float* v = imu.data() + k * per_frame + 12 * s;
      for (int i = 0; i < 3; ++i) d.streams.imu[k].acceleration[s](i) = v[i];
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) d.streams.imu[k].orientation[s](r, c) = v[3 + 3 * r + c];
      d.streams.imu[k].orientation[s] = geom::project_to_rotation(d.streams.imu[k].orientation[s]);
    }

  const std::vector<float> kp = read_floats(dir / "kp.bin");
  if (n == 0 || kp.size() % (3 * n) != 0) throw FormatError("kp.bin: size does not match the frame count");
  const std::size_t jp = kp.size() / (3 * n);
  for (std::size_t k = 0; k < n; ++k) {
    KeypointFrame f;
    f.units = KeypointUnits::Pixels;
    for (std::size_t i = 0; i < jp; ++i) {
      const float* v = kp.data() + 3 * (k * jp + i);
      f.points.emplace_back(v[0], v[1]);
      f.confidence.push_back(std::clamp(static_cast<double>(v[2]), 0.0, 1.0));
    }
    d.streams.keypoints.push_back(geom::to_normalized(f, d.rig.intrinsics));
  }
  d.streams.out_of_view.assign(n, 0);
  d.scenario.validate(n);
  for (const auto& w : d.scenario.out_of_view)
    for (int k = w.begin; k < w.end; ++k) d.streams.out_of_view[static_cast<std::size_t>(k)] = 1;
  return d;
}

}  // namespace mocap::sensors
