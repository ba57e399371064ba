#include "mocap/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "mocap/errors.hpp"

namespace mocap::pipeline {

using estimator::NetId;
using skeleton::JointPositions;
using skeleton::Pose;

// ---- configuration ----------------------------------------------------------

void PipelineConfig::validate() const {
  if (refresh_frames < 1) throw FormatError("pipeline: refresh_frames must be >= 1");
  if (refine_iterations < 1) throw FormatError("pipeline: refine_iterations must be >= 1");
  weights.validate();
}

nlohmann::json PipelineConfig::to_json() const {
  return {{"pose_feedback", pose_feedback},
          {"translation_feedback", translation_feedback},
          {"refine", refine},
          {"camera_only", camera_only},
          {"pose_feedback_mode", pose_feedback_mode == PoseFeedbackMode::Transition ? "transition" : "continuous"},
          {"refresh_frames", refresh_frames},
          {"refine_weights", weights.to_json()},
          {"refine_iterations", refine_iterations}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    c.pose_feedback = j.value("pose_feedback", c.pose_feedback);
    c.translation_feedback = j.value("translation_feedback", c.translation_feedback);
    c.refine = j.value("refine", c.refine);
    c.camera_only = j.value("camera_only", c.camera_only);
    c.refresh_frames = j.value("refresh_frames", c.refresh_frames);
    c.refine_iterations = j.value("refine_iterations", c.refine_iterations);
    if (j.contains("pose_feedback_mode")) {
      const auto mode = j.at("pose_feedback_mode").get<std::string>();
      if (mode == "transition") {
        c.pose_feedback_mode = PoseFeedbackMode::Transition;
      } else if (mode == "continuous") {
        c.pose_feedback_mode = PoseFeedbackMode::Continuous;
      } else {
        throw FormatError("pipeline: pose_feedback_mode must be 'transition' or 'continuous'");
      }
    }
    if (j.contains("refine_weights")) c.weights = refine::RefineWeights::from_json(j.at("refine_weights"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("pipeline: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

nlohmann::json pose_json(const Pose& pose) {
  nlohmann::json out = nlohmann::json::array();
  for (const Mat3& r : pose) out.push_back(vec_json(geom::log_so3(r)));
  return out;
}

nlohmann::json points_json(const std::vector<Vec3>& points) {
  nlohmann::json out = nlohmann::json::array();
  for (const Vec3& p : points) out.push_back(vec_json(p));
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

nlohmann::json MotionEstimate::to_json() const {
  const auto& d = diagnostics;
  nlohmann::json j = {{"frame", frame},
                      {"timestamp", timestamp},
                      {"translation", vec_json(translation)},
                      {"pose_camera", pose_json(pose_camera)},
                      {"joints_camera", points_json(joints_camera.points)},
                      {"sigma_mean", sigma_mean},
                      {"weight", weight},
                      {"contact", {contact[0], contact[1]}},
                      {"velocity", vec_json(velocity)},
                      {"diagnostics",
                       {{"pose_feedback", d.pose_feedback},
                        {"translation_feedback", d.translation_feedback},
                        {"foot_branch", d.foot_branch},
                        {"root_keypoint_valid", d.root_keypoint_valid},
                        {"refined", d.refined},
                        {"refine_line_search_failed", d.refine_line_search_failed},
                        {"refine_energy", {d.refine_energy_before, d.refine_energy_after}},
                        {"rotation_fallback_joints", d.rotation_fallback_joints},
                        {"flags", d.flags}}}};
  return j;
}

// ---- pipeline ---------------------------------------------------------------

Pipeline::Pipeline(const estimator::Bundle& bundle, const geom::Calibration& calibration, PipelineConfig config,
                   std::optional<double> camera_height)
    : bundle_(&bundle), calib_(calibration), config_(std::move(config)), camera_height_(camera_height) {
  config_.validate();
  const std::vector<NetId> needed = config_.camera_only
                                        ? std::vector<NetId>{NetId::P2, NetId::P3Camera, NetId::T1Camera,
                                                             NetId::T2Camera, NetId::T3}
                                        : std::vector<NetId>{NetId::P1, NetId::P2, NetId::P3,
                                                             NetId::T1, NetId::T2, NetId::T3};
  for (NetId id : needed)
    if (!bundle.has(id)) throw MissingCheckpoint("bundle has no " + estimator::to_string(id) + " net");
  if (!config_.camera_only && bundle.p1_init.parameter_count() == 0)
    throw MissingCheckpoint("bundle has no P1 initializer");
  rest_pose_ = skeleton::neutral_pose(bundle.tree);
  reset();
}

void Pipeline::reset() {
  state_ = PipelineState{};
  for (NetId id : estimator::kAllNets)
    if (bundle_->has(id)) state_.hidden[static_cast<std::size_t>(id)] = net(id).zero_hidden();
  state_.last_decoded = skeleton::identity_pose(bundle_->tree);
}

VecX Pipeline::run(NetId id, const VecX& input) {
  auto& h = state_.hidden[static_cast<std::size_t>(id)];
  auto [out, next] = net(id).forward_step(h, input);
  h = std::move(next);
  return out;
}

void Pipeline::feedback_pose(const JointPositions& p_camera, const Mat3& r_rc, double sigma_mean, Diagnostics& d) {
  const double upper = bundle_->fusion.upper_bound;
  ++state_.frames_since_pose_feedback;
  const bool reliable = sigma_mean >= upper;
  const bool due = config_.pose_feedback_mode == PoseFeedbackMode::Continuous || !state_.reliable ||
                   state_.frames_since_pose_feedback >= config_.refresh_frames;
  state_.reliable = reliable;
  if (!config_.pose_feedback || !reliable || !due) return;
  const Mat3 back = r_rc.transpose();
  VecX obs(3 * static_cast<Eigen::Index>(p_camera.points.size()));
  for (std::size_t j = 0; j < p_camera.points.size(); ++j)
    obs.segment<3>(static_cast<Eigen::Index>(3 * j)) = back * p_camera.points[j];
  state_.hidden[static_cast<std::size_t>(NetId::P1)] = bundle_->p1_init(obs);
  state_.frames_since_pose_feedback = 0;
  ++state_.pose_feedback_count;
  d.pose_feedback = true;
}

void Pipeline::feedback_translation(const Pose& pose_camera, const Vec3& t_c, double sigma_mean, const VecX& x_c,
                                    Diagnostics& d) {
  if (!config_.translation_feedback || !(sigma_mean < bundle_->fusion.lower_bound)) return;
  const auto joints = skeleton::forward_kinematics_t<double>(bundle_->tree, pose_camera, t_c);
  const KeypointFrame synth = sensors::project_joints(joints, bundle_->correspondence);
  const VecX input = estimator::camera_translation_input(x_c, synth);
  auto& h = state_.hidden[static_cast<std::size_t>(NetId::T3)];
  h = net(NetId::T3).forward_step(h, input).second;
  ++state_.translation_feedback_count;
  d.translation_feedback = true;
}

MotionEstimate Pipeline::step(const FrameInput& input) {
  const estimator::FusionParams& fp = bundle_->fusion;
  const auto& tree = bundle_->tree;
  const double dt = 1.0 / fp.frame_rate;
  const int K = bundle_->keypoints();
  const bool cam = config_.camera_only;

  MotionEstimate est;
  Diagnostics& d = est.diagnostics;
  est.frame = state_.frame;
  est.timestamp = input.timestamp;

  // (1) frames
  const VecX x_r = geom::imu_to_root(input.imu).flatten();
  const VecX x_c = geom::imu_to_camera(input.imu, calib_).flatten();
  const Mat3 r_rc = calib_.imu_to_camera * input.imu.root_orientation();

  // (2) keypoints
  KeypointFrame kps;
  const bool usable = input.keypoints && static_cast<int>(input.keypoints->size()) == K &&
                      input.keypoints->confidence.size() == input.keypoints->points.size();
  if (input.keypoints && !usable) d.flags.push_back("keypoint_count_mismatch");
  if (usable) {
    kps = input.keypoints->units == KeypointUnits::Pixels ? geom::to_normalized(*input.keypoints, calib_.intrinsics)
                                                          : *input.keypoints;
    for (std::size_t i = 0; i < kps.size(); ++i) {
      double& c = kps.confidence[i];
      c = std::isfinite(c) ? std::clamp(c, 0.0, 1.0) : 0.0;
      if (!kps.points[i].allFinite()) {
        kps.points[i] = state_.last_keypoints ? state_.last_keypoints->points[i] : Vec2::Zero();
        c = 0.0;
        d.flags.push_back("non_finite_keypoint");
      }
    }
  } else {
    // nothing detected: positions frozen at the last frame, zero confidence
    kps.units = KeypointUnits::Normalized;
    kps.points = state_.last_keypoints ? state_.last_keypoints->points : std::vector<Vec2>(static_cast<std::size_t>(K), Vec2::Zero());
    kps.confidence.assign(static_cast<std::size_t>(K), 0.0);
    d.flags.push_back("no_keypoints");
  }
  state_.last_keypoints = kps;
  const double sigma = kps.mean_confidence();
  const int root_kp = sensors::root_keypoint(bundle_->correspondence);
  const geom::RootNormalized rn = geom::root_normalize(kps, root_kp, state_.last_root);
  if (kps.confidence[static_cast<std::size_t>(root_kp)] > 0.0) state_.last_root = rn.root;
  d.root_keypoint_valid = rn.root_valid;

  // (3) both joint branches and pose feedback
  const VecX pc_e = run(NetId::P2, estimator::camera_pose_input(x_c, rn));
  est.joints_camera_branch = JointPositions::unflatten(pc_e, CoordFrame::Camera);
  if (!cam) {
    const VecX pr_e = run(NetId::P1, x_r);
    est.joints_root_branch = JointPositions::unflatten(pr_e, CoordFrame::Root);
    feedback_pose(est.joints_camera_branch, r_rc, sigma, d);
  }

  // (4) fusion
  if (cam) {
    est.weight = 1.0;
    est.joints = JointPositions::unflatten(pc_e, CoordFrame::Camera);
  } else {
    auto fused = estimator::fuse_joints(est.joints_root_branch, est.joints_camera_branch, r_rc, sigma, fp);
    est.weight = fused.weight;
    est.joints = std::move(fused.joints);
  }

  // (5) rotations
  Pose pose_root, pose_camera;
  {
    const VecX phi = cam ? run(NetId::P3Camera, estimator::concat(pc_e, x_c))
                         : run(NetId::P3, estimator::concat(est.joints.flatten(), x_r));
    auto rot = estimator::rotations_from_6d(phi, &state_.last_decoded);
    state_.last_decoded = rot.pose;
    d.rotation_fallback_joints = rot.fallback_joints;
    if (!rot.fallback_joints.empty()) d.flags.push_back("rotation_fallback");
    if (cam) {
      pose_camera = rot.pose;
      pose_root = rot.pose;
      pose_root[0] = r_rc.transpose() * pose_camera[0];
    } else {
      pose_root = rot.pose;
      pose_root[0] = Mat3::Identity();
      pose_camera = pose_root;
      pose_camera[0] = r_rc;
    }
  }

  // (6) contact and velocity
  const VecX logits = cam ? run(NetId::T1Camera, x_c) : run(NetId::T1, x_r);
  est.contact = {sigmoid(logits(0)), sigmoid(logits(1))};
  const Vec3 v_est = cam ? Vec3(run(NetId::T2Camera, x_c)) : Vec3(r_rc * run(NetId::T2, x_r));
  const auto fk = skeleton::forward_kinematics_t<double>(tree, pose_camera, Vec3::Zero());
  const std::array<Vec3, 2> feet{fk[static_cast<std::size_t>(tree.left_foot)], fk[static_cast<std::size_t>(tree.right_foot)]};
  std::array<Vec3, 2> v_foot{Vec3::Zero(), Vec3::Zero()};
  if (state_.feet)
    for (std::size_t f = 0; f < 2; ++f) v_foot[f] = (feet[f] - (*state_.feet)[f]) / dt;
  state_.feet = feet;
  const auto choice = estimator::select_velocity(est.contact, v_est, v_foot, fp.contact_threshold);
  est.velocity = choice.velocity;
  d.foot_branch = choice.foot_branch;

  // (7) absolute position; with translation feedback the hidden state of an
  // unreliable frame is advanced by the synthesized input instead
  const VecX t3_in = estimator::camera_translation_input(x_c, kps);
  if (config_.translation_feedback && sigma < fp.lower_bound) {
    est.translation_estimate = net(NetId::T3).forward_step(state_.hidden[static_cast<std::size_t>(NetId::T3)], t3_in).first;
  } else {
    est.translation_estimate = run(NetId::T3, t3_in);
  }

  // (8) translation
  Vec3 t;
  if (!state_.translation) {
    t = sigma >= fp.lower_bound ? est.translation_estimate : fp.initial_translation;
  } else {
    t = estimator::complementary_fuse(*state_.translation, est.velocity, est.translation_estimate, sigma, dt, fp);
  }
  const Vec3 down = calib_.imu_to_camera * Vec3(0.0, -1.0, 0.0);
  t = estimator::apply_gravity_velocity(t, std::max(est.contact[0], est.contact[1]), dt, down, state_.gravity, fp);
  if (camera_height_) t = estimator::clamp_to_floor(t, fk, -down, *camera_height_);

  if (!t.allFinite()) {
    d.flags.push_back("non_finite_translation");
    t = state_.translation ? *state_.translation : fp.initial_translation;
  }
  // the filter carries its own estimate; a per-frame refinement bias fed
  // back through it would settle at bias / alpha
  const Vec3 t_filtered = t;

  // (9) refinement
  if (config_.refine) {
    refine::RefineProblem problem;
    problem.tree = &tree;
    problem.correspondence = bundle_->correspondence;
    problem.initial_pose = pose_camera;
    problem.initial_translation = t;
    problem.keypoints = kps;
    problem.target_joints.reserve(est.joints.points.size());
    for (const Vec3& p : est.joints.points)
      problem.target_joints.push_back((cam ? p : Vec3(r_rc * p)) + t);
    for (int s = 0; s < kSensorCount; ++s)
      problem.imu_orientations[static_cast<std::size_t>(s)] =
          calib_.imu_to_camera * input.imu.orientation[static_cast<std::size_t>(s)];
    problem.rest_pose = rest_pose_;
    nn::LbfgsOptions opts;
    opts.iterations = config_.refine_iterations;
    const auto r = refine::refine(problem, config_.weights, opts);
    d.refined = true;
    d.refine_line_search_failed = r.line_search_failed;
    d.refine_energy_before = r.energy_before;
    d.refine_energy_after = r.energy_after;
    if (r.line_search_failed) d.flags.push_back("refine_line_search_failed");
    pose_camera = r.pose;
    d.refine_translation_delta = r.translation - t;
    t = r.translation;
    pose_root = pose_camera;
    pose_root[0] = r_rc.transpose() * pose_camera[0];
    if (camera_height_) {
      const auto fk_refined = skeleton::forward_kinematics_t<double>(tree, pose_camera, Vec3::Zero());
      t = estimator::clamp_to_floor(t, fk_refined, -down, *camera_height_);
    }
  }
  if (!t.allFinite()) {
    d.flags.push_back("non_finite_refinement");
    t = t_filtered;
  }

  // (10) translation feedback with the final pose and translation
  feedback_translation(pose_camera, t, sigma, x_c, d);

  state_.translation = t_filtered;
  state_.sigma_history.push_back(sigma);
  if (state_.sigma_history.size() > kSigmaHistory) state_.sigma_history.erase(state_.sigma_history.begin());
  ++state_.frame;

  est.pose_camera = std::move(pose_camera);
  est.pose_root = std::move(pose_root);
  est.translation = t;
  est.sigma_mean = sigma;
  est.joints_camera = skeleton::forward_kinematics(tree, est.pose_camera, Vec3::Zero(), CoordFrame::Camera);
  return est;
}

StreamSummary run_stream(Pipeline& pipeline, const std::vector<FrameInput>& inputs, const Sink& sink) {
  StreamSummary s;
  std::vector<double> ms;
  ms.reserve(inputs.size());
  for (const FrameInput& in : inputs) {
    const auto t0 = std::chrono::steady_clock::now();
    MotionEstimate est = pipeline.step(in);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    if (sink) sink(est);
  }
  s.frames = static_cast<int>(inputs.size());
  if (!ms.empty()) {
    double total = 0.0;
    for (double m : ms) total += m;
    s.mean_step_ms = total / static_cast<double>(ms.size());
    s.max_step_ms = *std::max_element(ms.begin(), ms.end());
    std::vector<double> sorted = ms;
    std::sort(sorted.begin(), sorted.end());
    s.p95_step_ms = sorted[static_cast<std::size_t>(0.95 * static_cast<double>(sorted.size() - 1))];
  }
  s.pose_feedback_count = pipeline.state().pose_feedback_count;
  s.translation_feedback_count = pipeline.state().translation_feedback_count;
  return s;
}

std::vector<FrameInput> frame_inputs(const sensors::SensorStreams& streams, double frame_rate) {
  std::vector<FrameInput> out;
  out.reserve(streams.frame_count());
  for (std::size_t k = 0; k < streams.frame_count(); ++k) {
    FrameInput f;
    f.imu = streams.imu[k];
    const bool hidden = k < streams.out_of_view.size() && streams.out_of_view[k];
    if (!hidden && k < streams.keypoints.size()) f.keypoints = streams.keypoints[k];
    f.timestamp = static_cast<double>(k) / frame_rate;
    out.push_back(std::move(f));
  }
  return out;
}

void write_json_lines(std::ostream& out, const std::vector<MotionEstimate>& estimates) {
  for (const MotionEstimate& e : estimates) out << e.to_json().dump() << "\n";
}

}  // namespace mocap::pipeline
