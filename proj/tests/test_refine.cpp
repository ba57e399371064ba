#include <doctest.h>

#include <random>

#include "gradcheck.hpp"
#include "mocap/errors.hpp"
#include "mocap/refine.hpp"
#include "refine_fixture.hpp"
#include "support.hpp"

using namespace mocap;
using namespace mocap::refine;
using mocap::testing::central_differences;
using mocap::testing::relative_error;

TEST_SUITE("refine") {
  TEST_CASE("data terms vanish at the ground truth") {
    const auto f = testing::truth_fixture(sensors::MotionKind::Walk, 3, 40);
    const VecX x = [&] {
      VecX v = VecX::Zero(variable_count(f.problem));
      v.tail<3>() = f.problem.initial_translation;
      return v;
    }();
    const EnergyTerms e = energy(f.problem, {}, x);
    CHECK(e.keypoints_2d < 1e-24);
    CHECK(e.joints_3d < 1e-24);
    CHECK(e.orientation < 1e-24);
    CHECK(e.dropped_2d == 0);
  }

  TEST_CASE("prior and angle terms vanish in their perfect cases") {
    auto f = testing::truth_fixture(sensors::MotionKind::Stand, 1, 0);
    f.problem.initial_pose = f.problem.rest_pose;
    const EnergyTerms e = energy_at(f.problem, {}, f.problem.rest_pose, f.translation_camera);
    CHECK(e.prior == 0.0);
    CHECK(e.angle == 0.0);
    // a knee bent the natural way costs nothing, hyperextension does
    skeleton::Pose bent = f.problem.rest_pose;
    bent[skeleton::smpl::LKnee] = geom::rot_x(0.8);
    CHECK(energy_at(f.problem, {}, bent, f.translation_camera).angle == 0.0);
    bent[skeleton::smpl::LKnee] = geom::rot_x(-0.3);
    CHECK(energy_at(f.problem, {}, bent, f.translation_camera).angle == doctest::Approx(std::exp(0.3) - 1.0));
  }

  TEST_CASE("Geman-McClure limits") {
    CHECK(geman_mcclure(0.0, 0.3) == 0.0);
    CHECK(geman_mcclure(1e6, 0.3) == doctest::Approx(1.0));
    CHECK(geman_mcclure(0.3, 0.3) == doctest::Approx(0.5));
  }

  TEST_CASE("energy gradient matches central differences") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 4; ++trial) {
      auto f = testing::truth_fixture(sensors::MotionKind::Squat, 2 + trial, 30 + 10 * trial);
      testing::perturb_translation(f, 0.05, rng);
      VecX x(variable_count(f.problem));
      std::normal_distribution<double> g(0.0, 0.1);
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = g(rng);
      x.tail<3>() = f.translation_camera + testing::random_vec(rng, 0.1);
      // hyperextend one knee so the angle term is active
      x.segment<3>(3 * skeleton::smpl::RKnee) = Vec3(-0.4, 0, 0);
      VecX grad;
      energy(f.problem, {}, x, &grad);
      const auto fn = [&](const VecX& v) { return energy(f.problem, {}, v).total; };
      CHECK(relative_error(grad, central_differences(fn, x, 1e-5)) < 1e-3);
    }
  }

  TEST_CASE("E_ori ignores joints without sensors") {
    const auto f = testing::truth_fixture(sensors::MotionKind::ArmRaise, 4, 50);
    skeleton::Pose p = f.pose_camera;
    const double before = energy_at(f.problem, {}, p, f.translation_camera).orientation;
    p[skeleton::smpl::LHand] = geom::rot_y(0.7) * p[skeleton::smpl::LHand];
    p[skeleton::smpl::RWrist] = geom::rot_x(-0.4) * p[skeleton::smpl::RWrist];
    CHECK(energy_at(f.problem, {}, p, f.translation_camera).orientation == doctest::Approx(before).epsilon(1e-12));
    p[skeleton::smpl::LElbow] = geom::rot_y(0.3) * p[skeleton::smpl::LElbow];
    CHECK(energy_at(f.problem, {}, p, f.translation_camera).orientation > before + 1e-3);
  }

  TEST_CASE("refine never increases the energy and fixes a translation offset") {
    std::mt19937_64 rng(21);
    int improved = 0;
    const int trials = 40;
    for (int i = 0; i < trials; ++i) {
      auto f = testing::truth_fixture(sensors::MotionKind::Walk, 10 + i, 20 + i);
      testing::perturb_translation(f, 0.05, rng);
      const RefineResult r = refine::refine(f.problem, {});
      CHECK(r.energy_after <= r.energy_before + 1e-12);
      if ((r.translation - f.translation_camera).norm() < 0.05) ++improved;
    }
    CHECK(improved >= trials * 95 / 100);
  }

  TEST_CASE("consistent initialization stays put") {
    const auto f = testing::truth_fixture(sensors::MotionKind::Stand, 6, 10);
    const RefineResult r = refine::refine(f.problem, {});
    CHECK((r.translation - f.translation_camera).norm() < 1e-3);
    CHECK(r.energy_after <= r.energy_before);
  }

  TEST_CASE("zero confidences make the 2D term inert") {
    std::mt19937_64 rng(5);
    auto f = testing::truth_fixture(sensors::MotionKind::Walk, 7, 33);
    std::fill(f.problem.keypoints.confidence.begin(), f.problem.keypoints.confidence.end(), 0.0);
    // targets at the truth, initialization off by 5 cm
    f.problem.initial_translation = f.translation_camera + Vec3(0.05, 0.0, 0.0);
    const auto e = energy_at(f.problem, {}, f.pose_camera, f.problem.initial_translation);
    CHECK(e.keypoints_2d == 0.0);
    const RefineResult r = refine::refine(f.problem, {});
    CHECK((r.translation - f.translation_camera).norm() < 0.05);
  }

  TEST_CASE("invalid problems are rejected") {
    auto f = testing::truth_fixture(sensors::MotionKind::Stand, 1, 0);
    f.problem.target_joints.pop_back();
    CHECK_THROWS_AS(refine::refine(f.problem, {}), DimensionMismatch);
    RefineWeights w;
    w.prior = -1.0;
    CHECK_THROWS_AS(w.validate(), FormatError);
    CHECK(RefineWeights::from_json(RefineWeights{}.to_json()).angle == 15.2);
  }
}
