#include "mocap/skeleton.hpp"

#include <fstream>
#include <numbers>

#include "mocap/errors.hpp"
#include "mocap/geom.hpp"

namespace mocap::skeleton {

namespace {

const char* const kSensorNames[kSensorCount] = {"left_forearm", "right_forearm", "left_lower_leg",
                                                "right_lower_leg", "head", "pelvis"};

}  // namespace

void KinematicTree::validate() const {
  const int n = joint_count();
  if (n < 1) throw FormatError("skeleton: no joints");
  if (static_cast<int>(offsets.size()) != n) throw FormatError("skeleton: offsets and parents differ in length");
  if (!names.empty() && static_cast<int>(names.size()) != n) throw FormatError("skeleton: names and parents differ");
  if (parents[0] != -1) throw FormatError("skeleton: joint 0 must be the root");
  for (int j = 1; j < n; ++j)
    if (parents[static_cast<std::size_t>(j)] < 0 || parents[static_cast<std::size_t>(j)] >= j)
      throw FormatError("skeleton: joint " + std::to_string(j) + " must have a parent with a smaller index");
  auto valid = [n](int j) { return j >= 0 && j < n; };
  for (int m : mounts)
    if (!valid(m)) throw FormatError("skeleton: invalid mount joint");
  if (!valid(left_foot) || !valid(right_foot)) throw FormatError("skeleton: invalid foot joint");
  for (const Hinge& h : hinges)
    if (!valid(h.joint)) throw FormatError("skeleton: invalid hinge joint");
}

KinematicTree KinematicTree::smpl_mean() {
  using namespace smpl;
  KinematicTree t;
  t.names = {"pelvis",  "l_hip",      "r_hip",      "spine1",  "l_knee",  "r_knee",  "spine2",  "l_ankle",
             "r_ankle", "spine3",     "l_foot",     "r_foot",  "neck",    "l_collar", "r_collar", "head",
             "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hand",  "r_hand"};
  t.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  // y up, z forward, x to the subject's left
  t.offsets = {
      {0.0, 0.0, 0.0},          {0.058, -0.082, -0.018}, {-0.060, -0.091, -0.014}, {0.004, 0.124, -0.038},
      {0.043, -0.386, 0.008},   {-0.043, -0.383, -0.005}, {0.005, 0.138, 0.027},   {-0.015, -0.427, -0.037},
      {0.019, -0.420, -0.035},  {-0.001, 0.056, 0.002},  {0.041, -0.060, 0.122},   {-0.035, -0.063, 0.130},
      {-0.013, 0.212, -0.033},  {0.072, 0.114, -0.019},  {-0.083, 0.112, -0.024},  {0.010, 0.089, 0.050},
      {0.123, 0.045, -0.019},   {-0.113, 0.047, -0.008}, {0.255, -0.016, -0.023},  {-0.260, -0.014, -0.031},
      {0.266, 0.009, -0.006},   {-0.269, -0.007, -0.006}, {0.087, -0.009, -0.010}, {-0.089, -0.009, -0.009}};
  t.mounts = {LElbow, RElbow, LKnee, RKnee, Head, Pelvis};
  t.left_foot = LFoot;
  t.right_foot = RFoot;
  t.hinges = {{LKnee, Vec3::UnitX(), -1.0},
              {RKnee, Vec3::UnitX(), -1.0},
              {LElbow, Vec3::UnitY(), 1.0},
              {RElbow, Vec3::UnitY(), -1.0}};
  return t;
}

nlohmann::json KinematicTree::to_json() const {
  nlohmann::json j;
  j["names"] = names;
  j["parents"] = parents;
  nlohmann::json offs = nlohmann::json::array();
  for (const Vec3& o : offsets) offs.push_back({o.x(), o.y(), o.z()});
  j["offsets"] = offs;
  nlohmann::json m;
  for (int i = 0; i < kSensorCount; ++i) m[kSensorNames[i]] = mounts[static_cast<std::size_t>(i)];
  j["mounts"] = m;
  j["feet"] = {{"left", left_foot}, {"right", right_foot}};
  nlohmann::json hs = nlohmann::json::array();
  for (const Hinge& h : hinges)
    hs.push_back({{"joint", h.joint}, {"axis", {h.axis.x(), h.axis.y(), h.axis.z()}}, {"sign", h.sign}});
  j["hinges"] = hs;
  return j;
}

KinematicTree KinematicTree::from_json(const nlohmann::json& j) {
  KinematicTree t;
  t.parents = j.at("parents").get<std::vector<int>>();
  for (const auto& o : j.at("offsets")) {
    const auto v = o.get<std::vector<double>>();
    if (v.size() != 3) throw FormatError("skeleton: offsets must be triples");
    t.offsets.emplace_back(v[0], v[1], v[2]);
  }
  if (j.contains("names")) t.names = j.at("names").get<std::vector<std::string>>();
  const auto& m = j.at("mounts");
  for (int i = 0; i < kSensorCount; ++i) t.mounts[static_cast<std::size_t>(i)] = m.at(kSensorNames[i]).get<int>();
  t.left_foot = j.at("feet").at("left").get<int>();
  t.right_foot = j.at("feet").at("right").get<int>();
  if (j.contains("hinges")) {
    for (const auto& h : j.at("hinges")) {
      const auto a = h.at("axis").get<std::vector<double>>();
      if (a.size() != 3) throw FormatError("skeleton: hinge axis must be a triple");
      t.hinges.push_back({h.at("joint").get<int>(), Vec3(a[0], a[1], a[2]).normalized(), h.at("sign").get<double>()});
    }
  }
  t.validate();
  return t;
}

void KinematicTree::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(2) << "\n";
}

KinematicTree KinematicTree::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read skeleton " + path.string());
  return from_json(nlohmann::json::parse(in));
}

VecX JointPositions::flatten() const {
  VecX x(3 * static_cast<Eigen::Index>(points.size()));
  for (std::size_t j = 0; j < points.size(); ++j) x.segment<3>(3 * static_cast<Eigen::Index>(j)) = points[j];
  return x;
}

JointPositions JointPositions::unflatten(const VecX& x, CoordFrame frame, bool root_relative) {
  JointPositions p;
  p.frame = frame;
  p.root_relative = root_relative;
  for (Eigen::Index j = 0; j < x.size() / 3; ++j) p.points.emplace_back(x.segment<3>(3 * j));
  return p;
}

Pose identity_pose(const KinematicTree& tree) {
  return Pose(static_cast<std::size_t>(tree.joint_count()), Mat3::Identity());
}

Pose neutral_pose(const KinematicTree& tree) {
  Pose pose = identity_pose(tree);
  if (tree.joint_count() != smpl::kJointCount) return pose;
  const double down = 80.0 * std::numbers::pi / 180.0;
  pose[smpl::LShoulder] = geom::rot_z(-down);
  pose[smpl::RShoulder] = geom::rot_z(down);
  return pose;
}

std::vector<Mat3> global_rotations(const KinematicTree& tree, const Pose& pose) {
  if (static_cast<int>(pose.size()) != tree.joint_count())
    throw DimensionMismatch("global_rotations: pose size does not match the tree");
  return global_rotations_t<double>(tree, pose);
}

JointPositions forward_kinematics(const KinematicTree& tree, const Pose& pose, const Vec3& root_translation,
                                  CoordFrame frame) {
  if (static_cast<int>(pose.size()) != tree.joint_count())
    throw DimensionMismatch("forward_kinematics: pose size does not match the tree");
  JointPositions out;
  out.points = forward_kinematics_t<double>(tree, pose, root_translation);
  out.frame = frame;
  out.root_relative = root_translation.isZero(0.0);
  return out;
}

Vec3 supporting_foot(const KinematicTree& tree, const JointPositions& positions, FootSide side) {
  return positions.points.at(static_cast<std::size_t>(tree.foot(side)));
}

Vec3 foot_velocity(const KinematicTree& tree, const Pose& pose_k, const Pose& pose_km1, FootSide side, double dt) {
  if (!(dt > 0.0)) throw DegenerateInput("foot_velocity: dt must be positive");
  const Vec3 now = supporting_foot(tree, forward_kinematics(tree, pose_k), side);
  const Vec3 before = supporting_foot(tree, forward_kinematics(tree, pose_km1), side);
  return (now - before) / dt;
}

}  // namespace mocap::skeleton
