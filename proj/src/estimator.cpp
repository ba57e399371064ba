#include "mocap/estimator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "mocap/errors.hpp"
#include "mocap/nn/autodiff.hpp"

namespace mocap::estimator {

using skeleton::JointPositions;
using skeleton::KinematicTree;
using skeleton::Pose;

// ---- parameters -------------------------------------------------------------

void FusionParams::validate() const {
  if (!(lower_bound >= 0.0 && lower_bound < upper_bound && upper_bound <= 1.0))
    throw FormatError("fusion: bounds must satisfy 0 <= lower < upper <= 1");
  if (!(contact_threshold > 0.0 && contact_threshold < 1.0)) throw FormatError("fusion: contact threshold must be in (0, 1)");
  if (!(gain > 0.0)) throw FormatError("fusion: gain must be positive");
  if (!(gravity_rate >= 0.0 && gravity_terminal >= 0.0)) throw FormatError("fusion: gravity parameters must be >= 0");
  if (!initial_translation.allFinite()) throw FormatError("fusion: initial translation must be finite");
  if (!(frame_rate > 0.0)) throw FormatError("fusion: frame rate must be positive");
}

nlohmann::json FusionParams::to_json() const {
  return {{"lower_bound", lower_bound},
          {"upper_bound", upper_bound},
          {"contact_threshold", contact_threshold},
          {"gain", gain},
          {"damp_velocity", damp_velocity},
          {"gravity_rate", gravity_rate},
          {"gravity_terminal", gravity_terminal},
          {"initial_translation", {initial_translation.x(), initial_translation.y(), initial_translation.z()}},
          {"frame_rate", frame_rate}};
}

FusionParams FusionParams::from_json(const nlohmann::json& j) {
  FusionParams p;
  try {
    p.lower_bound = j.value("lower_bound", p.lower_bound);
    p.upper_bound = j.value("upper_bound", p.upper_bound);
    p.contact_threshold = j.value("contact_threshold", p.contact_threshold);
    p.gain = j.value("gain", p.gain);
    p.damp_velocity = j.value("damp_velocity", p.damp_velocity);
    p.gravity_rate = j.value("gravity_rate", p.gravity_rate);
    p.gravity_terminal = j.value("gravity_terminal", p.gravity_terminal);
    p.frame_rate = j.value("frame_rate", p.frame_rate);
    if (j.contains("initial_translation")) {
      const auto t = j.at("initial_translation").get<std::vector<double>>();
      if (t.size() != 3) throw FormatError("fusion: initial_translation must be a 3-vector");
      p.initial_translation = Vec3(t[0], t[1], t[2]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("fusion: ") + e.what());
  }
  p.validate();
  return p;
}

std::string to_string(NetId id) {
  switch (id) {
    case NetId::P1: return "P1";
    case NetId::P2: return "P2";
    case NetId::P3: return "P3";
    case NetId::T1: return "T1";
    case NetId::T2: return "T2";
    case NetId::T3: return "T3";
    case NetId::P3Camera: return "P3c";
    case NetId::T1Camera: return "T1c";
    case NetId::T2Camera: return "T2c";
  }
  return "?";
}

NetId net_from_string(const std::string& name) {
  for (NetId id : kAllNets)
    if (to_string(id) == name) return id;
  throw FormatError("unknown net '" + name + "'");
}

NetShape net_shape(NetId id, int joints, int keypoints) {
  const int x = kImuFeatureSize;
  switch (id) {
    case NetId::P1: return {x, 3 * joints};
    case NetId::P2: return {x + 3 * keypoints, 3 * joints};
    case NetId::P3:
    case NetId::P3Camera: return {3 * joints + x, 6 * joints};
    case NetId::T1:
    case NetId::T1Camera: return {x, 2};
    case NetId::T2:
    case NetId::T2Camera: return {x, 3};
    case NetId::T3: return {x + 3 * keypoints, 3};
  }
  return {};
}

namespace {

bool is_camera_variant(NetId id) { return id == NetId::P3Camera || id == NetId::T1Camera || id == NetId::T2Camera; }

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingCheckpoint("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

Bundle Bundle::create(const KinematicTree& tree, const sensors::Correspondence& correspondence, const NetSizes& sizes,
                      std::uint64_t seed, bool camera_only_variants) {
  tree.validate();
  Bundle b;
  b.tree = tree;
  b.correspondence = correspondence;
  for (int c : correspondence)
    if (c < 0 || c >= tree.joint_count()) throw FormatError("correspondence index out of range");
  for (NetId id : kAllNets) {
    if (is_camera_variant(id) && !camera_only_variants) continue;
    const NetShape s = net_shape(id, b.joints(), b.keypoints());
    nn::RecurrentNet net(s.input, sizes.hidden, sizes.layers, s.output);
    net.init_parameters(seed * 101 + static_cast<std::uint64_t>(id));
    b.net(id) = std::move(net);
  }
  b.p1_init = nn::InitializerNet(3 * b.joints(), sizes.initializer_widths, sizes.hidden, sizes.layers);
  b.p1_init.init_parameters(seed * 101 + 99);
  return b;
}

void Bundle::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (NetId id : kAllNets)
    if (has(id)) net(id).save(dir / (to_string(id) + ".bin"), {{"net", to_string(id)}});
  p1_init.save(dir / "P1_init.bin", {{"net", "P1_init"}});
  tree.save(dir / "skeleton.json");
  nlohmann::json f = extra;
  f["fusion"] = fusion.to_json();
  f["correspondence"] = correspondence;
  std::ofstream out(dir / "fusion.json");
  if (!out) throw Error("cannot write " + (dir / "fusion.json").string());
  out << f.dump(1) << "\n";
}

Bundle Bundle::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw MissingCheckpoint("bundle directory not found: " + dir.string());
  Bundle b;
  nlohmann::json f = read_json_file(dir / "fusion.json");
  if (std::filesystem::exists(dir / "skeleton.json")) b.tree = KinematicTree::load(dir / "skeleton.json");
  b.fusion = FusionParams::from_json(f.value("fusion", nlohmann::json::object()));
  if (f.contains("correspondence")) {
    b.correspondence = f.at("correspondence").get<std::vector<int>>();
  } else {
    b.correspondence = sensors::identity_correspondence(b.tree);
  }
  f.erase("fusion");
  f.erase("correspondence");
  b.extra = f;
  for (NetId id : kAllNets) {
    const auto path = dir / (to_string(id) + ".bin");
    if (is_camera_variant(id) && !std::filesystem::exists(path)) continue;
    b.net(id) = nn::RecurrentNet::load(path);
    const NetShape s = net_shape(id, b.joints(), b.keypoints());
    if (b.net(id).input_size() != s.input || b.net(id).output_size() != s.output)
      throw FormatError(path.string() + ": dimensions do not match the skeleton and correspondence");
  }
  b.p1_init = nn::InitializerNet::load(dir / "P1_init.bin");
  return b;
}

// ---- features ---------------------------------------------------------------

VecX concat(const VecX& a, const VecX& b) {
  VecX out(a.size() + b.size());
  out << a, b;
  return out;
}

VecX camera_pose_input(const VecX& x_c, const geom::RootNormalized& kps) { return concat(x_c, kps.values); }

VecX camera_translation_input(const VecX& x_c, const KeypointFrame& kps) {
  const auto n = static_cast<Eigen::Index>(kps.size());
  VecX v(x_c.size() + 3 * n);
  v.head(x_c.size()) = x_c;
  for (Eigen::Index i = 0; i < n; ++i) {
    v.segment<2>(x_c.size() + 2 * i) = kps.points[static_cast<std::size_t>(i)];
    v(x_c.size() + 2 * n + i) = kps.confidence[static_cast<std::size_t>(i)];
  }
  return v;
}

// ---- fusion rules -----------------------------------------------------------

double branch_weight(double sigma_mean, const FusionParams& params) {
  const double w = (sigma_mean - params.lower_bound) / (params.upper_bound - params.lower_bound);
  return std::clamp(w, 0.0, 1.0);
}

FusedJoints fuse_joints(const JointPositions& p_root, const JointPositions& p_camera, const Mat3& root_orientation_camera,
                        double sigma_mean, const FusionParams& params) {
  if (p_root.points.size() != p_camera.points.size())
    throw DimensionMismatch("fuse_joints: branch joint counts differ");
  FusedJoints out;
  out.weight = branch_weight(sigma_mean, params);
  out.joints.frame = CoordFrame::Root;
  out.joints.root_relative = true;
  const Mat3 back = root_orientation_camera.transpose();
  out.joints.points.resize(p_root.points.size());
  for (std::size_t j = 0; j < p_root.points.size(); ++j) {
    if (out.weight == 0.0) {
      out.joints.points[j] = p_root.points[j];
    } else if (out.weight == 1.0) {
      out.joints.points[j] = back * p_camera.points[j];
    } else {
      out.joints.points[j] = (1.0 - out.weight) * p_root.points[j] + out.weight * (back * p_camera.points[j]);
    }
  }
  return out;
}

RotationEstimate rotations_from_6d(const VecX& phi, const Pose* previous) {
  if (phi.size() % 6 != 0) throw DimensionMismatch("rotations_from_6d: length must be a multiple of 6");
  const auto J = static_cast<std::size_t>(phi.size() / 6);
  RotationEstimate est;
  est.pose.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    try {
      est.pose[j] = geom::rot_from_6d(geom::Rot6D(phi.segment<6>(static_cast<Eigen::Index>(6 * j))));
    } catch (const DegenerateInput&) {
      est.pose[j] = previous && previous->size() == J ? (*previous)[j] : Mat3::Identity();
      est.fallback_joints.push_back(static_cast<int>(j));
    }
  }
  return est;
}

VecX rotations_to_6d(const Pose& pose) {
  VecX v(6 * static_cast<Eigen::Index>(pose.size()));
  for (std::size_t j = 0; j < pose.size(); ++j) v.segment<6>(static_cast<Eigen::Index>(6 * j)) = geom::rot_to_6d(pose[j]);
  return v;
}

VelocityChoice select_velocity(const std::array<double, 2>& contact, const Vec3& v_estimated,
                               const std::array<Vec3, 2>& v_foot, double threshold) {
  VelocityChoice c;
  c.support = contact[1] > contact[0] ? skeleton::FootSide::Right : skeleton::FootSide::Left;
  const double s = std::max(contact[0], contact[1]);
  if (s >= threshold) {
    c.foot_branch = true;
    c.velocity = -v_foot[c.support == skeleton::FootSide::Left ? 0 : 1];
  } else {
    c.velocity = v_estimated;
  }
  return c;
}

Vec3 complementary_fuse(const Vec3& t_prev, const Vec3& v_c, const Vec3& t_estimated, double sigma_mean, double dt,
                        const FusionParams& params) {
  const double alpha = params.gain * sigma_mean;
  if (alpha == 0.0) return t_prev + v_c * dt;
  const double keep = 1.0 - alpha;
  const double vel = params.damp_velocity ? keep : 1.0;
  return keep * t_prev + vel * v_c * dt + alpha * t_estimated;
}

Vec3 apply_gravity_velocity(const Vec3& t, double max_contact, double dt, const Vec3& down, GravityState& state,
                            const FusionParams& params) {
  if (max_contact >= params.contact_threshold) {
    state.speed = 0.0;
    return t;
  }
  const double before = state.speed;
  state.speed = std::min(state.speed + params.gravity_rate * dt, params.gravity_terminal);
  // trapezoid over the step: exact displacement for constant acceleration
  return t + down * (0.5 * (before + state.speed) * dt);
}

Vec3 clamp_to_floor(const Vec3& t, const std::vector<Vec3>& joints_relative, const Vec3& up, double height) {
  double lowest = std::numeric_limits<double>::infinity();
  for (const Vec3& p : joints_relative) lowest = std::min(lowest, up.dot(t + p) + height);
  if (lowest >= 0.0 || !std::isfinite(lowest)) return t;
  return t - lowest * up;
}

// ---- losses -----------------------------------------------------------------

RotationLoss::Terms RotationLoss::terms(const VecX& phi, const VecX& phi_gt, const VecX& p_gt) const {
  Terms t;
  t.rot = (phi - phi_gt).squaredNorm();
  const RotationEstimate est = rotations_from_6d(phi, nullptr);
  Pose pose = est.pose;
  const auto p = skeleton::forward_kinematics_t<double>(tree_, pose, Vec3::Zero());
  for (std::size_t j = 0; j < p.size(); ++j)
    t.pos += (p[j] - p_gt.segment<3>(static_cast<Eigen::Index>(3 * j))).squaredNorm();
  return t;
}

double RotationLoss::evaluate(const MatX& outputs, const MatX& targets, MatX* grad) const {
  const int J = tree_.joint_count();
  if (outputs.rows() != 6 * J || targets.rows() != 9 * J || outputs.cols() != targets.cols())
    throw DimensionMismatch("RotationLoss: expected 6J outputs and 9J target rows");
  const Eigen::Index T = outputs.cols();
  const double inv = T > 0 ? 1.0 / static_cast<double>(T) : 0.0;
  if (grad) grad->setZero(outputs.rows(), T);
  double total = 0.0;
  nn::Tape tape;
  nn::TapeScope scope(tape);
  using nn::Var;
  for (Eigen::Index c = 0; c < T; ++c) {
    const VecX phi = outputs.col(c);
    const VecX diff = phi - targets.col(c).head(6 * J);
    total += lambda_rot_ * diff.squaredNorm();
    if (grad) grad->col(c) += 2.0 * lambda_rot_ * diff;

    tape.clear();
    std::vector<Var> vars(static_cast<std::size_t>(6 * J));
    for (int i = 0; i < 6 * J; ++i) vars[static_cast<std::size_t>(i)] = Var::variable(phi(i));
    std::vector<Mat3T<Var>> pose(static_cast<std::size_t>(J));
    try {
      for (int j = 0; j < J; ++j) {
        Eigen::Matrix<Var, 6, 1> d;
        for (int i = 0; i < 6; ++i) d(i) = vars[static_cast<std::size_t>(6 * j + i)];
        pose[static_cast<std::size_t>(j)] = geom::rot_from_6d<Var>(d);
      }
    } catch (const DegenerateInput&) {
      continue;  // position term undefined for this frame
    }
    const auto p = skeleton::forward_kinematics_t<Var>(tree_, pose, Vec3T<Var>::Zero());
    Var pos(0.0);
    for (int j = 0; j < J; ++j) {
      const Vec3 target = targets.col(c).segment<3>(6 * J + 3 * j);
      for (int i = 0; i < 3; ++i) {
        const Var e = p[static_cast<std::size_t>(j)](i) - target(i);
        pos += e * e;
      }
    }
    total += lambda_pos_ * pos.value();
    if (grad && pos.id >= 0) {
      const std::vector<double> adj = tape.adjoints(pos.id);
      for (int i = 0; i < 6 * J; ++i)
        (*grad)(i, c) += lambda_pos_ * adj[static_cast<std::size_t>(vars[static_cast<std::size_t>(i)].id)];
    }
  }
  if (grad) *grad *= inv;
  return total * inv;
}

std::unique_ptr<nn::SequenceLoss> make_loss(NetId id, const Bundle& bundle) {
  switch (id) {
    case NetId::P1:
    case NetId::P2:
    case NetId::T3: return std::make_unique<nn::SquaredErrorLoss>();
    case NetId::P3:
    case NetId::P3Camera: return std::make_unique<RotationLoss>(bundle.tree);
    case NetId::T1:
    case NetId::T1Camera: return std::make_unique<nn::BinaryCrossEntropyLoss>();
    case NetId::T2:
    case NetId::T2Camera:
      return std::make_unique<nn::CumulativeVelocityLoss>(std::vector<int>{1, 3, 9, 27}, 1.0 / bundle.fusion.frame_rate);
  }
  throw FormatError("make_loss: unknown net");
}

// ---- training data ----------------------------------------------------------

sensors::CameraRig random_rig(const sensors::MotionSequence& motion, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& t : motion.translations) centroid += t;
  centroid /= static_cast<double>(motion.translations.size());
  double extent = 0.0;
  for (const Vec3& t : motion.translations)
    extent = std::max(extent, Vec2(t.x() - centroid.x(), t.z() - centroid.z()).norm());
  const double distance = extent + 2.5 + 2.0 * unit(rng);
  const double azimuth = 2.0 * std::numbers::pi * unit(rng);
  const double height = 0.8 + 1.0 * unit(rng);
  const Vec3 target(centroid.x(), 0.8 + 0.3 * unit(rng), centroid.z());
  const Vec3 position(centroid.x() + distance * std::sin(azimuth), height, centroid.z() + distance * std::cos(azimuth));
  return sensors::CameraRig::look_at(position, target);
}

SequenceData prepare_sequence(const sensors::MotionSequence& motion, const KinematicTree& tree,
                              const sensors::CameraRig& rig, const sensors::Correspondence& correspondence,
                              const sensors::ScenarioScript& scenario, std::uint64_t seed) {
  SequenceData d;
  d.motion = motion;
  d.rig = rig;
  d.streams = sensors::apply_scenario(sensors::synthesize_streams(motion, tree, rig, correspondence), scenario, seed,
                                      rig.intrinsics, motion.frame_rate);
  d.truth = sensors::ground_truth(motion, tree, rig);
  return d;
}

TrainingCorpus make_corpus(const std::vector<sensors::MotionSequence>& motions, const Bundle& bundle,
                           const AugmentConfig& augment, std::uint64_t seed) {
  TrainingCorpus corpus;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < motions.size(); ++i) {
    const auto& m = motions[i];
    const sensors::CameraRig rig = random_rig(m, seed * 7919 + i);
    sensors::ScenarioScript clean;
    clean.keypoint_noise_px = augment.keypoint_noise_px;
    clean.orientation_jitter_deg = augment.orientation_jitter_deg;

    sensors::ScenarioScript degraded = clean;
    const int n = static_cast<int>(m.frame_count());
    const auto window = [&](int min_len, int max_len) {
      const int len = std::min(n, min_len + static_cast<int>(unit(rng) * (max_len - min_len)));
      const int begin = static_cast<int>(unit(rng) * (n - len));
      return std::pair<int, int>(begin, begin + len);
    };
    if (unit(rng) < augment.occlusion_probability) {
      auto [b, e] = window(20, 60);
      sensors::OcclusionWindow w{b, e, {}, 0.5 * unit(rng)};
      if (unit(rng) < 0.5) {
        for (int k = 0; k < bundle.keypoints(); ++k)
          if (unit(rng) < 0.5) w.keypoints.push_back(k);
        if (w.keypoints.empty()) w.keypoints.push_back(0);
      }
      degraded.occlusions.push_back(w);
    }
    if (unit(rng) < augment.out_of_view_probability) {
      auto [b, e] = window(30, 90);
      degraded.out_of_view.push_back({b, e});
    }
    const std::uint64_t s = seed * 104729 + i;
    corpus.clean.push_back(prepare_sequence(m, bundle.tree, rig, bundle.correspondence, clean, s));
    corpus.degraded.push_back(prepare_sequence(m, bundle.tree, rig, bundle.correspondence, degraded, s + 1));
  }
  return corpus;
}

namespace {

MatX stack_columns(const std::vector<VecX>& cols) {
  if (cols.empty()) return {};
  MatX m(cols[0].size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = cols[i];
  return m;
}

VecX flatten_points(const std::vector<Vec3>& pts) {
  VecX v(3 * static_cast<Eigen::Index>(pts.size()));
  for (std::size_t j = 0; j < pts.size(); ++j) v.segment<3>(static_cast<Eigen::Index>(3 * j)) = pts[j];
  return v;
}

VecX add_noise(VecX v, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return v;
  std::normal_distribution<double> g(0.0, sigma);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += g(rng);
  return v;
}

// Per-frame inputs and targets of one net over one sequence.
std::pair<MatX, MatX> sequence_matrices(NetId id, const SequenceData& seq, const Bundle& bundle,
                                        const AugmentConfig& augment, std::mt19937_64& rng) {
  const std::size_t n = seq.streams.frame_count();
  const geom::Calibration calib = seq.rig.calibration();
  const int root_kp = sensors::root_keypoint(bundle.correspondence);
  std::vector<VecX> in, out;
  std::optional<Vec2> last_root;
  for (std::size_t k = 0; k < n; ++k) {
    const ImuFrame& imu = seq.streams.imu[k];
    const auto& gt = seq.truth;
    switch (id) {
      case NetId::P1:
        in.push_back(geom::imu_to_root(imu).flatten());
        out.push_back(flatten_points(gt.joints_root[k]));
        break;
      case NetId::P2: {
        const KeypointFrame& kf = seq.streams.keypoints[k];
        const geom::RootNormalized rn = geom::root_normalize(kf, root_kp, last_root);
        if (kf.confidence[static_cast<std::size_t>(root_kp)] > 0.0) last_root = rn.root;
        in.push_back(camera_pose_input(geom::imu_to_camera(imu, calib).flatten(), rn));
        out.push_back(flatten_points(gt.joints_camera[k]));
        break;
      }
      case NetId::P3:
        in.push_back(concat(add_noise(flatten_points(gt.joints_root[k]), augment.joint_noise_m, rng),
                            geom::imu_to_root(imu).flatten()));
        out.push_back(concat(rotations_to_6d(gt.pose_root[k]), flatten_points(gt.joints_root[k])));
        break;
      case NetId::P3Camera:
        in.push_back(concat(add_noise(flatten_points(gt.joints_camera[k]), augment.joint_noise_m, rng),
                            geom::imu_to_camera(imu, calib).flatten()));
        out.push_back(concat(rotations_to_6d(gt.pose_camera[k]), flatten_points(gt.joints_camera[k])));
        break;
      case NetId::T1:
      case NetId::T1Camera:
        in.push_back(id == NetId::T1 ? geom::imu_to_root(imu).flatten() : geom::imu_to_camera(imu, calib).flatten());
        out.push_back(Eigen::Vector2d(gt.contact[k][0], gt.contact[k][1]));
        break;
      case NetId::T2:
        in.push_back(geom::imu_to_root(imu).flatten());
        out.push_back(gt.velocity_root[k]);
        break;
      case NetId::T2Camera:
        in.push_back(geom::imu_to_camera(imu, calib).flatten());
        out.push_back(gt.velocity_camera[k]);
        break;
      case NetId::T3:
        in.push_back(camera_translation_input(geom::imu_to_camera(imu, calib).flatten(), seq.streams.keypoints[k]));
        out.push_back(gt.translation_camera[k]);
        break;
    }
  }
  return {stack_columns(in), stack_columns(out)};
}

}  // namespace

std::vector<nn::TrainSample> build_samples(NetId id, const TrainingCorpus& corpus, const Bundle& bundle,
                                           const ChunkConfig& chunks, const AugmentConfig& augment,
                                           std::uint64_t seed) {
  const auto& source = id == NetId::P2 ? corpus.degraded : corpus.clean;
  std::mt19937_64 rng(seed);
  std::vector<nn::TrainSample> samples;
  for (const SequenceData& seq : source) {
    auto [inputs, targets] = sequence_matrices(id, seq, bundle, augment, rng);
    const auto T = inputs.cols();
    std::vector<Eigen::Index> starts;
    Eigen::Index len = chunks.length;
    if (T <= len) {
      if (T > 0) starts.push_back(0);
      len = T;
    } else {
      for (Eigen::Index s = 0; s + len <= T; s += chunks.stride) starts.push_back(s);
    }
    for (Eigen::Index s : starts) {
      nn::TrainSample sample{inputs.middleCols(s, len), targets.middleCols(s, len), {}};
      if (id == NetId::P1)
        sample.observation =
            add_noise(flatten_points(seq.truth.joints_root[static_cast<std::size_t>(s)]), augment.joint_noise_m, rng);
      samples.push_back(std::move(sample));
    }
  }
  return samples;
}

void fit_normalization(NetId id, Bundle& bundle, const std::vector<nn::TrainSample>& samples) {
  if (samples.empty()) throw DegenerateInput("fit_normalization: no samples");
  nn::RecurrentNet& net = bundle.net(id);
  std::vector<MatX> inputs, targets;
  for (const auto& s : samples) {
    inputs.push_back(s.inputs);
    targets.push_back(s.targets);
  }
  net.input_norm = nn::input_standardization(inputs, 1e-2);
  if (id == NetId::P2 || id == NetId::T3) {
    // confidences pass through unscaled so absent detections stay in range
    const int K = bundle.keypoints();
    net.input_norm.shift.tail(K).setZero();
    net.input_norm.scale.tail(K).setOnes();
  }
  if (id == NetId::T1 || id == NetId::T1Camera) {
    net.output_norm = nn::Affine::identity(net.output_size());
  } else if (id == NetId::P3 || id == NetId::P3Camera) {
    std::vector<MatX> phi;
    for (const MatX& t : targets) phi.push_back(t.topRows(net.output_size()));
    net.output_norm = nn::output_standardization(phi, 1e-2);
  } else {
    net.output_norm = nn::output_standardization(targets, 1e-2);
  }
  if (id == NetId::P1) {
    std::vector<MatX> obs;
    for (const auto& s : samples) obs.push_back(s.observation);
    bundle.p1_init.input_norm = nn::input_standardization(obs, 1e-2);
  }
}

std::vector<NetTrainResult> train_bundle(Bundle& bundle, const TrainingCorpus& corpus, const BundleTrainConfig& config,
                                         const Logger& log) {
  std::vector<NetTrainResult> results;
  for (NetId id : config.nets) {
    if (!bundle.has(id)) throw MissingCheckpoint("bundle has no " + to_string(id) + " net to train");
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t seed = config.seed * 131 + static_cast<std::uint64_t>(id);
    const auto samples = build_samples(id, corpus, bundle, config.chunks, config.augment, seed);
    fit_normalization(id, bundle, samples);
    const auto loss = make_loss(id, bundle);
    nn::TrainConfig tc = config.train;
    tc.seed = seed;
    tc.chunk_length = config.chunks.length;
    NetTrainResult r;
    r.id = id;
    r.samples = static_cast<int>(samples.size());
    const auto on_epoch = [&](int epoch, double value) {
      if (log) {
        std::ostringstream os;
        os << to_string(id) << " epoch " << epoch << " loss " << value;
        log(os.str());
      }
    };
    r.report = nn::train(bundle.net(id), id == NetId::P1 ? &bundle.p1_init : nullptr, samples, *loss, tc, on_epoch);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log) {
      std::ostringstream os;
      os << to_string(id) << " trained: " << r.samples << " samples, loss " << r.report.initial_loss << " -> "
         << (r.report.loss_curve.empty() ? r.report.initial_loss : r.report.loss_curve.back()) << " in " << r.seconds
         << " s";
      log(os.str());
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace mocap::estimator
