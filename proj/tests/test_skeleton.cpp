#include <doctest.h>

#include <numbers>
#include <random>

#include "fk_oracle.hpp"
#include "mocap/errors.hpp"
#include "mocap/geom.hpp"
#include "mocap/skeleton.hpp"
#include "support.hpp"

using namespace mocap;
using namespace mocap::skeleton;
using mocap::testing::random_rotation;

namespace {

KinematicTree chain(int joints, const Vec3& offset) {
  KinematicTree t;
  for (int j = 0; j < joints; ++j) {
    t.parents.push_back(j - 1);
    t.offsets.push_back(j == 0 ? Vec3::Zero() : offset);
  }
  t.mounts.fill(0);
  return t;
}

Pose random_pose(std::mt19937_64& rng, int n) {
  Pose p;
  for (int j = 0; j < n; ++j) p.push_back(random_rotation(rng));
  return p;
}

}  // namespace

TEST_SUITE("skeleton") {
  TEST_CASE("identity pose accumulates rest offsets") {
    const KinematicTree t = KinematicTree::smpl_mean();
    const auto pos = forward_kinematics(t, identity_pose(t)).points;
    for (int j = 1; j < t.joint_count(); ++j) {
      const auto uj = static_cast<std::size_t>(j);
      CHECK((pos[uj] - pos[static_cast<std::size_t>(t.parents[uj])] - t.offsets[uj]).norm() < 1e-15);
    }
  }

  TEST_CASE("two-bone chain with the root turned about z") {
    const KinematicTree t = chain(3, Vec3(0, 1, 0));
    Pose p = identity_pose(t);
    p[0] = geom::rot_z(std::numbers::pi / 2);
    const auto pos = forward_kinematics(t, p).points;
    CHECK((pos[2] - Vec3(-2, 0, 0)).norm() < 1e-15);
  }

  TEST_CASE("root translation shifts every joint") {
    std::mt19937_64 rng(1);
    const KinematicTree t = KinematicTree::smpl_mean();
    const Pose p = random_pose(rng, t.joint_count());
    const Vec3 shift(0.3, -1.2, 4.0);
    const auto a = forward_kinematics(t, p).points;
    const auto b = forward_kinematics(t, p, shift).points;
    for (std::size_t j = 0; j < a.size(); ++j) CHECK((b[j] - a[j] - shift).norm() < 1e-12);
  }

  TEST_CASE("global rotations compose along the chain") {
    const KinematicTree t = chain(3, Vec3(0, 1, 0));
    Pose p = identity_pose(t);
    p[1] = geom::rot_z(std::numbers::pi / 4);
    p[2] = geom::rot_z(std::numbers::pi / 4);
    const auto g = global_rotations(t, p);
    CHECK((g[2] - geom::rot_z(std::numbers::pi / 2)).norm() < 1e-15);

    Pose q = identity_pose(t);
    q[0] = geom::rot_x(0.4);
    for (const Mat3& r : global_rotations(t, q)) CHECK((r - q[0]).norm() == 0.0);
  }

  TEST_CASE("matches the homogeneous-transform oracle and keeps bone lengths") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = std::uniform_int_distribution<int>(2, 30)(rng);
      const KinematicTree t = mocap::testing::random_tree(rng, n, 6);
      const Pose p = random_pose(rng, n);
      const Vec3 root = mocap::testing::random_vec(rng, 2.0);
      const auto got = forward_kinematics(t, p, root).points;
      const auto want = mocap::testing::fk_homogeneous(t, p, root);
      for (int j = 0; j < n; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        CHECK((got[uj] - want[uj]).norm() < 1e-9);
        if (j > 0) {
          const double len = (got[uj] - got[static_cast<std::size_t>(t.parents[uj])]).norm();
          CHECK(std::abs(len - t.offsets[uj].norm()) < 1e-12);
        }
      }
    }
  }

  TEST_CASE("pre-rotating the root rotates root-relative joints") {
    std::mt19937_64 rng(3);
    const KinematicTree t = KinematicTree::smpl_mean();
    Pose p = random_pose(rng, t.joint_count());
    const Mat3 q = random_rotation(rng);
    const auto a = forward_kinematics(t, p).points;
    p[0] = q * p[0];
    const auto b = forward_kinematics(t, p).points;
    for (std::size_t j = 0; j < a.size(); ++j) CHECK((b[j] - q * a[j]).norm() < 1e-12);
  }

  TEST_CASE("supporting foot and foot velocity") {
    const KinematicTree t = KinematicTree::smpl_mean();
    const Pose p = neutral_pose(t);
    const JointPositions pos = forward_kinematics(t, p);
    CHECK(supporting_foot(t, pos, FootSide::Left) == pos.points[smpl::LFoot]);
    const Vec3 l = supporting_foot(t, pos, FootSide::Left);
    const Vec3 r = supporting_foot(t, pos, FootSide::Right);
    CHECK(l.x() > 0.0);
    CHECK(r.x() < 0.0);

    CHECK(foot_velocity(t, p, p, FootSide::Left, 1.0 / 30).norm() == 0.0);

    // shift the foot by moving its whole chain: a hip rotation about z moves the foot
    Pose q = p;
    q[smpl::LHip] = geom::rot_x(-0.2);
    const Vec3 moved = forward_kinematics(t, q).points[smpl::LFoot] - l;
    const Vec3 v = foot_velocity(t, q, p, FootSide::Left, 1.0 / 30);
    CHECK((v - moved * 30.0).norm() < 1e-12);
    const Vec3 v2 = foot_velocity(t, q, p, FootSide::Left, 2.0 / 30);
    CHECK((v2 * 2.0 - v).norm() < 1e-12);
    CHECK_THROWS_AS(foot_velocity(t, q, p, FootSide::Left, 0.0), DegenerateInput);
  }

  TEST_CASE("tree json round trip and validation") {
    const KinematicTree t = KinematicTree::smpl_mean();
    const KinematicTree u = KinematicTree::from_json(t.to_json());
    CHECK(u.parents == t.parents);
    CHECK(u.mounts == t.mounts);
    CHECK(u.left_foot == t.left_foot);
    CHECK(u.hinges.size() == t.hinges.size());
    for (std::size_t j = 0; j < t.offsets.size(); ++j) CHECK((u.offsets[j] - t.offsets[j]).norm() == 0.0);

    nlohmann::json bad = t.to_json();
    bad["parents"][3] = 7;
    CHECK_THROWS_AS(KinematicTree::from_json(bad), FormatError);
    CHECK_THROWS_AS(forward_kinematics(t, Pose(3, Mat3::Identity())), DimensionMismatch);
  }
}
