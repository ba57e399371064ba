#include <doctest.h>

#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "mocap/errors.hpp"
#include "mocap/estimator.hpp"
#include "support.hpp"

using namespace mocap;
using namespace mocap::estimator;
using mocap::testing::central_differences;
using mocap::testing::relative_error;

namespace {

skeleton::JointPositions points(std::vector<Vec3> p) { return {std::move(p), CoordFrame::Root, true}; }

}  // namespace

TEST_SUITE("estimator") {
  TEST_CASE("fuse_joints follows the clamped weight") {
    std::mt19937_64 rng(3);
    const Mat3 rc = testing::random_rotation(rng);
    std::vector<Vec3> pr, pc;
    for (int j = 0; j < 5; ++j) {
      pr.push_back(testing::random_vec(rng));
      pc.push_back(testing::random_vec(rng));
    }
    const auto low = fuse_joints(points(pr), points(pc), rc, 0.6);
    CHECK(low.weight == 0.0);
    for (int j = 0; j < 5; ++j) CHECK(low.joints.points[j] == pr[j]);

    const auto high = fuse_joints(points(pr), points(pc), rc, 0.9);
    CHECK(high.weight == 1.0);
    const Mat3 back = rc.transpose();
    for (int j = 0; j < 5; ++j) CHECK(high.joints.points[j] == Vec3(back * pc[j]));

    const auto mid = fuse_joints(points(pr), points(pc), rc, 0.75);
    CHECK(mid.weight == doctest::Approx(0.5));
    for (int j = 0; j < 5; ++j)
      CHECK((mid.joints.points[j] - 0.5 * (pr[j] + rc.transpose() * pc[j])).norm() < 1e-12);

    CHECK(branch_weight(0.7, {}) == 0.0);
    CHECK(branch_weight(0.8, {}) == doctest::Approx(1.0));
  }

  TEST_CASE("select_velocity threshold rule") {
    const Vec3 ve(0.1, 0.0, 0.3);
    const std::array<Vec3, 2> vf{Vec3(0.2, 0.0, 0.0), Vec3(-0.4, 0.0, 0.0)};
    auto a = select_velocity({0.5, 0.1}, ve, vf);
    CHECK_FALSE(a.foot_branch);
    CHECK(a.velocity == ve);
    auto b = select_velocity({0.9, 0.2}, ve, vf);
    CHECK(b.foot_branch);
    CHECK(b.velocity == Vec3(-0.2, 0.0, 0.0));
    auto c = select_velocity({0.7, 0.0}, ve, vf);
    CHECK(c.foot_branch);
    auto d = select_velocity({0.1, 0.8}, ve, vf);
    CHECK(d.support == skeleton::FootSide::Right);
    CHECK(d.velocity == Vec3(0.4, 0.0, 0.0));
  }

  TEST_CASE("complementary filter hand example and dead reckoning") {
    const Vec3 t = complementary_fuse(Vec3(0, 0, 3), Vec3(0.3, 0, 0), Vec3(0.1, 0, 3), 1.0, 1.0 / 30.0);
    CHECK(std::abs(t.x() - 0.0145) < 1e-12);
    CHECK(std::abs(t.y()) < 1e-12);
    CHECK(std::abs(t.z() - 3.0) < 1e-12);

    std::mt19937_64 rng(5);
    Vec3 fused(0.1, 0.2, 3.0), dead = fused;
    for (int k = 0; k < 300; ++k) {
      const Vec3 v = testing::random_vec(rng);
      fused = complementary_fuse(fused, v, testing::random_vec(rng, 10.0), 0.0, 1.0 / 30.0);
      dead = dead + v * (1.0 / 30.0);
    }
    CHECK(fused == dead);
  }

  TEST_CASE("complementary filter converges to its fixed point") {
    const Vec3 v(0.3, 0.0, 0.0), te(0.5, 0.1, 2.0);
    const double dt = 1.0 / 30.0, a = 0.05;
    Vec3 t(0, 0, 3);
    for (int k = 0; k < 2000; ++k) t = complementary_fuse(t, v, te, 1.0, dt);
    const Vec3 fixed = ((1 - a) * v * dt + a * te) / a;
    CHECK((t - fixed).norm() < 1e-9);
  }

  TEST_CASE("gravity velocity accumulates and resets") {
    GravityState g;
    const Vec3 down(0, -1, 0);
    Vec3 t(0, 1, 0);
    for (int k = 0; k < 30; ++k) t = apply_gravity_velocity(t, 0.2, 1.0 / 30.0, down, g);
    CHECK(t.y() == doctest::Approx(1.0 - 0.15).epsilon(1e-12));
    const Vec3 held = apply_gravity_velocity(t, 0.95, 1.0 / 30.0, down, g);
    CHECK(held == t);
    CHECK(g.speed == 0.0);
    for (int k = 0; k < 600; ++k) apply_gravity_velocity(t, 0.0, 1.0 / 30.0, down, g);
    CHECK(g.speed == doctest::Approx(1.0));
  }

  TEST_CASE("floor clamp keeps the lowest joint on the plane") {
    const std::vector<Vec3> joints{Vec3(0, 0, 0), Vec3(0, -0.9, 0.1), Vec3(0, 0.5, 0)};
    const Vec3 up(0, 1, 0);
    const Vec3 t = clamp_to_floor(Vec3(0, 0.5, 0), joints, up, 0.0);
    CHECK(t.y() == doctest::Approx(0.9));
    const Vec3 ok = clamp_to_floor(Vec3(0, 1.5, 0), joints, up, 0.0);
    CHECK(ok == Vec3(0, 1.5, 0));
    // camera-frame ground plane: camera 1.2 m above the floor, y axis pointing down
    const Vec3 up_c(0, -1, 0);
    const Vec3 tc = clamp_to_floor(Vec3(0, 0.8, 3), joints, up_c, 1.2);
    for (const Vec3& p : joints) CHECK(up_c.dot(tc + p) + 1.2 >= -1e-12);
  }

  TEST_CASE("6D decoding falls back on degenerate joints") {
    std::mt19937_64 rng(2);
    skeleton::Pose prev{testing::random_rotation(rng), testing::random_rotation(rng)};
    skeleton::Pose pose{testing::random_rotation(rng), testing::random_rotation(rng)};
    VecX phi = rotations_to_6d(pose);
    phi.segment<6>(6).setZero();
    const auto est = rotations_from_6d(phi, &prev);
    CHECK(est.fallback_joints == std::vector<int>{1});
    CHECK(est.pose[1] == prev[1]);
    CHECK((est.pose[0] - pose[0]).norm() < 1e-12);
  }

  TEST_CASE("rotation loss is zero at the target and has exact gradients") {
    const auto tree = skeleton::KinematicTree::smpl_mean();
    const int J = tree.joint_count();
    std::mt19937_64 rng(11);
    const int T = 3;
    MatX targets(9 * J, T), outputs(6 * J, T);
    for (int c = 0; c < T; ++c) {
      skeleton::Pose pose;
      for (int j = 0; j < J; ++j) pose.push_back(testing::random_rotation(rng));
      const VecX phi = rotations_to_6d(pose);
      const auto p = skeleton::forward_kinematics(tree, pose);
      targets.col(c) << phi, p.flatten();
      std::normal_distribution<double> g(0.0, 0.1);
      for (int i = 0; i < 6 * J; ++i) outputs(i, c) = phi(i) + g(rng);
    }
    RotationLoss loss(tree);
    MatX grad;
    CHECK(loss.evaluate(targets.topRows(6 * J), targets, &grad) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(grad.norm() < 1e-9);

    const auto terms = loss.terms(targets.col(0).head(6 * J), targets.col(0).head(6 * J), targets.col(0).tail(3 * J));
    CHECK(terms.rot == 0.0);
    CHECK(terms.pos < 1e-20);

    loss.evaluate(outputs, targets, &grad);
    const VecX flat = Eigen::Map<const VecX>(outputs.data(), outputs.size());
    const auto f = [&](const VecX& x) {
      const MatX o = Eigen::Map<const MatX>(x.data(), outputs.rows(), outputs.cols());
      return loss.evaluate(o, targets, nullptr);
    };
    const VecX numeric = central_differences(f, flat);
    const VecX analytic = Eigen::Map<const VecX>(grad.data(), grad.size());
    CHECK(relative_error(analytic, numeric) < 1e-3);
  }

  TEST_CASE("rotation loss weights positions by 100") {
    const auto tree = skeleton::KinematicTree::smpl_mean();
    const int J = tree.joint_count();
    const VecX phi = rotations_to_6d(skeleton::identity_pose(tree));
    VecX p = skeleton::forward_kinematics(tree, skeleton::identity_pose(tree)).flatten();
    RotationLoss loss(tree);
    VecX p_off = p;
    p_off(3) += 0.001;
    VecX phi_off = phi;
    phi_off(0) += 0.001;
    MatX t1(9 * J, 1), t2(9 * J, 1);
    t1 << phi, p_off;
    t2 << phi_off, p;
    const double pos = loss.evaluate(MatX(phi), t1, nullptr);
    const double rot = loss.evaluate(MatX(phi), t2, nullptr);
    CHECK(pos / rot == doctest::Approx(100.0));
  }

  TEST_CASE("bundle round trip and missing checkpoints") {
    const auto tree = skeleton::KinematicTree::smpl_mean();
    NetSizes sizes;
    sizes.hidden = 8;
    sizes.layers = 1;
    sizes.initializer_widths = {16};
    Bundle b = Bundle::create(tree, sensors::identity_correspondence(tree), sizes, 4);
    b.extra["refine"] = {{"weights", {{"angle", 15.2}}}};
    b.fusion.gain = 0.07;
    const auto dir = std::filesystem::temp_directory_path() / "mocap_bundle_test";
    std::filesystem::remove_all(dir);
    b.save(dir);
    const Bundle c = Bundle::load(dir);
    CHECK(c.fusion.gain == 0.07);
    CHECK(c.extra["refine"]["weights"]["angle"] == 15.2);
    for (NetId id : kAllNets) {
      REQUIRE(c.has(id));
      CHECK(c.net(id).parameter_count() == b.net(id).parameter_count());
      CHECK((c.net(id).parameters() - b.net(id).parameters()).cwiseAbs().maxCoeff() < 1e-6);
    }
    std::filesystem::remove(dir / "T3.bin");
    CHECK_THROWS_AS(Bundle::load(dir), MissingCheckpoint);
    CHECK_THROWS_AS(Bundle::load(dir / "absent"), MissingCheckpoint);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("net shapes") {
    CHECK(net_shape(NetId::P1, 24, 24).input == 72);
    CHECK(net_shape(NetId::P1, 24, 24).output == 72);
    CHECK(net_shape(NetId::P2, 24, 24).input == 144);
    CHECK(net_shape(NetId::P3, 24, 24).input == 144);
    CHECK(net_shape(NetId::P3, 24, 24).output == 144);
    CHECK(net_shape(NetId::T3, 24, 24).input == 144);
    CHECK(net_from_string("T2c") == NetId::T2Camera);
    CHECK_THROWS_AS(net_from_string("X"), FormatError);
  }

  TEST_CASE("training samples line up with the ground truth") {
    const auto tree = skeleton::KinematicTree::smpl_mean();
    NetSizes sizes;
    sizes.hidden = 8;
    sizes.layers = 1;
    Bundle b = Bundle::create(tree, sensors::identity_correspondence(tree), sizes, 1);
    const auto motions = sensors::generate_procedural_motions(2, 3, tree);
    const auto corpus = make_corpus(motions, b, {}, 9);
    REQUIRE(corpus.clean.size() == 2);
    for (NetId id : kAllNets) {
      const auto samples = build_samples(id, corpus, b, {64, 32}, {}, 1);
      REQUIRE_FALSE(samples.empty());
      const NetShape s = net_shape(id, b.joints(), b.keypoints());
      CHECK(samples[0].inputs.rows() == s.input);
      CHECK(samples[0].inputs.cols() == 64);
      CHECK(samples[0].inputs.allFinite());
      CHECK(samples[0].targets.allFinite());
      if (id == NetId::P1) CHECK(samples[0].observation.size() == 3 * b.joints());
      fit_normalization(id, b, samples);
      CHECK(b.net(id).input_norm.scale.allFinite());
    }
    const auto t3 = build_samples(NetId::T3, corpus, b, {64, 32}, {}, 1);
    CHECK((t3[0].targets.col(0) - corpus.clean[0].truth.translation_camera[0]).norm() == 0.0);
  }
}
