#include <doctest.h>

#include <filesystem>
#include <random>

#include "mocap/errors.hpp"
#include "mocap/sensors.hpp"
#include "support.hpp"

using namespace mocap;
using namespace mocap::sensors;
using skeleton::KinematicTree;

namespace {

MotionSequence still(const KinematicTree& t, int frames, const Vec3& at = Vec3(0, 0.95, 0)) {
  MotionSequence m;
  m.poses.assign(static_cast<std::size_t>(frames), skeleton::neutral_pose(t));
  m.translations.assign(static_cast<std::size_t>(frames), at);
  return m;
}

CameraRig default_rig() { return CameraRig::look_at(Vec3(0, 1, 4), Vec3(0, 1, 0)); }

}  // namespace

TEST_SUITE("sensors") {
  TEST_CASE("stationary motion reads gravity only") {
    const KinematicTree t = KinematicTree::smpl_mean();
    const auto imu = synthesize_imus(still(t, 5), t);
    for (const auto& f : imu)
      for (std::size_t s = 0; s < kSensorCount; ++s) {
        CHECK((f.acceleration[s] - kGravity).norm() < 1e-12);
        CHECK((f.orientation[s] - imu[0].orientation[s]).norm() == 0.0);
      }
  }

  TEST_CASE("quadratic root trajectory gives its exact acceleration") {
    const KinematicTree t = KinematicTree::smpl_mean();
    MotionSequence m = still(t, 10);
    for (int k = 0; k < 10; ++k) {
      const double time = k / 30.0;
      m.translations[static_cast<std::size_t>(k)] = Vec3(0, 1, 0.5 * time * time);
    }
    const auto imu = synthesize_imus(m, t);
    for (std::size_t k = 0; k < imu.size(); ++k)
      CHECK((imu[k].acceleration[kRootSensor] - (kGravity + Vec3(0, 0, 1))).norm() < 1e-9);

    for (int k = 0; k < 10; ++k) m.translations[static_cast<std::size_t>(k)] = Vec3(0.1 * k, 1, -0.05 * k);
    for (const auto& f : synthesize_imus(m, t)) CHECK((f.acceleration[kRootSensor] - kGravity).norm() < 1e-9);
  }

  TEST_CASE("rotating the whole motion rotates the measurements") {
    const KinematicTree t = KinematicTree::smpl_mean();
    const MotionSequence m = generate_motion(MotionKind::Walk, t, 7, {.duration_s = 1.0});
    std::mt19937_64 rng(1);
    const Mat3 q = mocap::testing::random_rotation(rng);
    MotionSequence r = m;
    for (std::size_t k = 0; k < r.frame_count(); ++k) {
      r.poses[k][0] = q * r.poses[k][0];
      r.translations[k] = q * r.translations[k];
    }
    const auto a = synthesize_imus(m, t);
    const auto b = synthesize_imus(r, t);
    for (std::size_t k = 0; k < a.size(); ++k)
      for (std::size_t s = 0; s < kSensorCount; ++s) {
        CHECK((b[k].orientation[s] - q * a[k].orientation[s]).norm() < 1e-9);
        CHECK((b[k].acceleration[s] - kGravity - q * (a[k].acceleration[s] - kGravity)).norm() < 1e-6);
      }
    for (const auto& f : a) CHECK((geom::imu_to_root(f).root_orientation() - Mat3::Identity()).norm() == 0.0);
  }

  TEST_CASE("keypoint projection and behind-camera handling") {
    const KeypointFrame f = project_joints({Vec3(0, 0, 3), Vec3(1, 2, 2), Vec3(0, 0, -1)}, {0, 1, 2});
    CHECK(f.points[0].norm() == 0.0);
    CHECK((f.points[1] - Vec2(0.5, 1.0)).norm() == 0.0);
    CHECK(f.confidence == std::vector<double>{1.0, 1.0, 0.0});

    const KinematicTree t = KinematicTree::smpl_mean();
    const MotionSequence m = still(t, 4, Vec3(0, 1, 8));  // behind a camera at z=4 looking toward -z
    const auto kps = synthesize_keypoints(m, t, default_rig(), identity_correspondence(t));
    for (const auto& k : kps) CHECK(k.mean_confidence() == 0.0);

    const MotionSequence v = still(t, 4);
    const auto seen = synthesize_keypoints(v, t, default_rig(), identity_correspondence(t));
    for (const auto& k : seen) CHECK(k.mean_confidence() == 1.0);
  }

  TEST_CASE("scenarios degrade deterministically and never raise confidence") {
    const KinematicTree t = KinematicTree::smpl_mean();
    const MotionSequence m = generate_motion(MotionKind::Walk, t, 3, {.duration_s = 2.0});
    const CameraRig rig = default_rig();
    const SensorStreams clean = synthesize_streams(m, t, rig, identity_correspondence(t));
    const int n = static_cast<int>(clean.frame_count());

    const SensorStreams same = apply_scenario(clean, {}, 1, rig.intrinsics, 30.0);
    for (std::size_t k = 0; k < clean.frame_count(); ++k) {
      CHECK(same.keypoints[k].points == clean.keypoints[k].points);
      CHECK(same.imu[k].flatten() == clean.imu[k].flatten());
    }

    ScenarioScript all;
    all.out_of_view.push_back({0, n});
    const SensorStreams gone = apply_scenario(clean, all, 1, rig.intrinsics, 30.0);
    for (const auto& k : gone.keypoints) CHECK(k.mean_confidence() == 0.0);

    ScenarioScript s;
    s.occlusions.push_back({5, 20, {}, 0.3});
    s.occlusions.push_back({25, 30, {3, 4}, 0.1});
    s.out_of_view.push_back({40, 50});
    s.keypoint_noise_px = 3.0;
    s.orientation_jitter_deg = 2.0;
    s.accel_bias_drift = 0.1;
    const SensorStreams a = apply_scenario(clean, s, 99, rig.intrinsics, 30.0);
    const SensorStreams b = apply_scenario(clean, s, 99, rig.intrinsics, 30.0);
    for (std::size_t k = 0; k < a.frame_count(); ++k) {
      CHECK(a.keypoints[k].points == b.keypoints[k].points);
      CHECK(a.imu[k].flatten() == b.imu[k].flatten());
      for (std::size_t i = 0; i < a.keypoints[k].size(); ++i)
        CHECK(a.keypoints[k].confidence[i] <= clean.keypoints[k].confidence[i]);
      for (std::size_t j = 0; j < kSensorCount; ++j)
        CHECK(geom::geodesic(a.imu[k].orientation[j], clean.imu[k].orientation[j]) <= 2.0 * std::numbers::pi / 180 + 1e-9);
    }
    CHECK(a.keypoints[10].mean_confidence() <= 0.3);
    CHECK(a.keypoints[26].confidence[3] <= 0.1);
    CHECK(a.keypoints[26].confidence[5] == 1.0);
    CHECK(a.keypoints[45].mean_confidence() == 0.0);
    CHECK(a.out_of_view[45] == 1);
    CHECK(a.keypoints[45].points == a.keypoints[39].points);

    ScenarioScript bad;
    bad.out_of_view.push_back({0, n + 1});
    CHECK_THROWS_AS(apply_scenario(clean, bad, 1, rig.intrinsics, 30.0), FormatError);
  }

  TEST_CASE("procedural motions keep the body rigid and on the ground") {
    const KinematicTree t = KinematicTree::smpl_mean();
    CHECK(generate_procedural_motions(1, 5, t).size() == 1);
    const auto motions = generate_procedural_motions(12, 5, t);
    REQUIRE(motions.size() == 12);
    for (const auto& m : motions) {
      m.validate(t);
      double lowest = 1e9;
      for (std::size_t k = 0; k < m.frame_count(); ++k) {
        const auto pos = skeleton::forward_kinematics(t, m.poses[k], m.translations[k]).points;
        for (int j = 1; j < t.joint_count(); ++j) {
          const auto uj = static_cast<std::size_t>(j);
          const double len = (pos[uj] - pos[static_cast<std::size_t>(t.parents[uj])]).norm();
          CHECK(std::abs(len - t.offsets[uj].norm()) < 1e-9);
        }
        const double feet = std::min(pos[static_cast<std::size_t>(t.left_foot)].y(), pos[static_cast<std::size_t>(t.right_foot)].y());
        lowest = std::min(lowest, feet);
        if (m.label != "jump") CHECK(std::abs(feet) < 1e-9);
      }
      CHECK(std::abs(lowest) < 1e-9);
    }
  }

  TEST_CASE("ambiguous pair shares its sensor stream once both holds are static") {
    const KinematicTree t = KinematicTree::smpl_mean();
    const AmbiguousPair p = make_ambiguous_pair(t, 11);
    const auto a = synthesize_imus(p.bend, t);
    const auto b = synthesize_imus(p.sit, t);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      for (std::size_t s = 0; s < kSensorCount; ++s) CHECK((a[k].orientation[s] - b[k].orientation[s]).norm() < 1e-9);
      if (static_cast<int>(k) > p.hold_frame || static_cast<int>(k) < p.divergence_frame - 1)
        CHECK((a[k].flatten() - b[k].flatten()).cwiseAbs().maxCoeff() < 1e-6);
    }
    // the poses themselves differ during the hold
    const auto ja = skeleton::forward_kinematics(t, p.bend.poses.back()).points;
    const auto jb = skeleton::forward_kinematics(t, p.sit.poses.back()).points;
    CHECK((ja[skeleton::smpl::Head] - jb[skeleton::smpl::Head]).norm() > 0.2);
  }

  TEST_CASE("ground truth labels contacts and velocities") {
    const KinematicTree t = KinematicTree::smpl_mean();
    const MotionSequence walk = generate_motion(MotionKind::Walk, t, 2, {.duration_s = 4.0});
    const GroundTruth gt = ground_truth(walk, t, default_rig());
    int any = 0;
    for (const auto& c : gt.contact) any += (c[0] > 0.5 || c[1] > 0.5) ? 1 : 0;
    CHECK(any > static_cast<int>(0.9 * gt.contact.size()));
    const MotionSequence jump = generate_motion(MotionKind::Jump, t, 2, {.duration_s = 3.0});
    const GroundTruth gj = ground_truth(jump, t, default_rig());
    int air = 0;
    for (const auto& c : gj.contact) air += (c[0] < 0.5 && c[1] < 0.5) ? 1 : 0;
    CHECK(air > 5);
    for (std::size_t k = 0; k < gt.pose_camera.size(); ++k)
      CHECK((gt.pose_camera[k][0] - default_rig().world_to_camera.rotation * walk.poses[k][0]).norm() < 1e-12);
  }

  TEST_CASE("dataset round trip") {
    const KinematicTree t = KinematicTree::smpl_mean();
    Dataset d;
    d.motion = generate_motion(MotionKind::Squat, t, 4, {.duration_s = 1.0});
    d.rig = default_rig();
    d.scenario.out_of_view.push_back({5, 9});
    d.streams = apply_scenario(synthesize_streams(d.motion, t, d.rig, identity_correspondence(t)), d.scenario, 1,
                               d.rig.intrinsics, 30.0);
    const auto dir = std::filesystem::temp_directory_path() / "mocap_dataset_test";
    std::filesystem::remove_all(dir);
    write_dataset(dir, d);
    const Dataset e = read_dataset(dir);
    REQUIRE(e.motion.frame_count() == d.motion.frame_count());
    for (std::size_t k = 0; k < e.motion.frame_count(); ++k) {
      for (std::size_t j = 0; j < e.motion.poses[k].size(); ++j)
        CHECK((e.motion.poses[k][j] - d.motion.poses[k][j]).norm() < 1e-9);
      CHECK((e.streams.imu[k].flatten() - d.streams.imu[k].flatten()).cwiseAbs().maxCoeff() < 1e-4);
      for (std::size_t i = 0; i < e.streams.keypoints[k].size(); ++i)
        CHECK((e.streams.keypoints[k].points[i] - d.streams.keypoints[k].points[i]).norm() < 1e-6);
      CHECK(e.streams.out_of_view[k] == d.streams.out_of_view[k]);
    }
    std::filesystem::remove_all(dir);
  }
}
