#include "mocap/refine.hpp"

#include <cmath>

#include "mocap/errors.hpp"
#include "mocap/geom.hpp"
#include "mocap/nn/autodiff.hpp"

namespace mocap::refine {

using skeleton::Pose;

void RefineWeights::validate() const {
  for (double w : {keypoints_2d, joints_3d, prior, angle, orientation})
    if (!(w >= 0.0)) throw FormatError("refine: weights must be >= 0");
  if (!(rho_scale > 0.0)) throw FormatError("refine: rho_scale must be positive");
}

nlohmann::json RefineWeights::to_json() const {
  return {{"keypoints_2d", keypoints_2d}, {"joints_3d", joints_3d},     {"prior", prior},
          {"angle", angle},               {"orientation", orientation}, {"rho_scale", rho_scale}};
}

RefineWeights RefineWeights::from_json(const nlohmann::json& j) {
  RefineWeights w;
  try {
    w.keypoints_2d = j.value("keypoints_2d", w.keypoints_2d);
    w.joints_3d = j.value("joints_3d", w.joints_3d);
    w.prior = j.value("prior", w.prior);
    w.angle = j.value("angle", w.angle);
    w.orientation = j.value("orientation", w.orientation);
    w.rho_scale = j.value("rho_scale", w.rho_scale);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("refine: ") + e.what());
  }
  w.validate();
  return w;
}

void RefineProblem::validate() const {
  if (!tree) throw FormatError("refine: problem has no skeleton");
  const auto J = static_cast<std::size_t>(tree->joint_count());
  if (initial_pose.size() != J || rest_pose.size() != J) throw DimensionMismatch("refine: pose size does not match the tree");
  if (target_joints.size() != J) throw DimensionMismatch("refine: target joint count does not match the tree");
  if (keypoints.size() != correspondence.size() || keypoints.confidence.size() != correspondence.size())
    throw DimensionMismatch("refine: keypoints do not match the correspondence");
  for (int c : correspondence)
    if (c < 0 || c >= tree->joint_count()) throw FormatError("refine: correspondence index out of range");
  if (!initial_translation.allFinite()) throw FormatError("refine: initial translation is not finite");
}

double geman_mcclure(double e, double scale) { return e * e / (scale * scale + e * e); }

namespace {

template <typename S>
Vec3T<S> log_so3_t(const Mat3T<S>& r) {
  using std::atan2;
  using std::sqrt;
  const Vec3T<S> v(S(0.5) * (r(2, 1) - r(1, 2)), S(0.5) * (r(0, 2) - r(2, 0)), S(0.5) * (r(1, 0) - r(0, 1)));
  const S s2 = v.dot(v);
  const S c = S(0.5) * (r(0, 0) + r(1, 1) + r(2, 2) - S(1.0));
  if (scalar_value(s2) < 1e-16) return v * (S(1.0) + s2 / S(6.0));
  const S s = sqrt(s2);
  return v * (atan2(s, c) / s);
}

template <typename S>
S rotation_angle(const Mat3T<S>& r) {
  using std::atan2;
  using std::sqrt;
  const Vec3T<S> v(S(0.5) * (r(2, 1) - r(1, 2)), S(0.5) * (r(0, 2) - r(2, 0)), S(0.5) * (r(1, 0) - r(0, 1)));
  const S c = S(0.5) * (r(0, 0) + r(1, 1) + r(2, 2) - S(1.0));
  return atan2(sqrt(v.dot(v)), c);
}

struct TermsT {
  double values[5] = {0, 0, 0, 0, 0};
  int dropped = 0;
};

template <typename S>
S energy_t(const RefineProblem& p, const RefineWeights& w, const std::vector<S>& x, TermsT& terms) {
  using std::exp;
  const auto& tree = *p.tree;
  const auto J = static_cast<std::size_t>(tree.joint_count());
  std::vector<Mat3T<S>> pose(J);
  for (std::size_t j = 0; j < J; ++j) {
    const Vec3T<S> d(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
    pose[j] = p.initial_pose[j].template cast<S>() * geom::exp_so3<S>(d);
  }
  const Vec3T<S> t(x[3 * J], x[3 * J + 1], x[3 * J + 2]);
  const auto globals = skeleton::global_rotations_t<S>(tree, pose);
  const auto joints = skeleton::positions_from_globals_t<S>(tree, globals, t);

  S e2d(0.0);
  for (std::size_t i = 0; i < p.correspondence.size(); ++i) {
    const double sigma = p.keypoints.confidence[i];
    if (sigma <= 0.0) continue;
    const Vec3T<S>& q = joints[static_cast<std::size_t>(p.correspondence[i])];
    if (!(scalar_value(q(2)) > geom::kMinDepth)) {
      ++terms.dropped;
      continue;
    }
    const S u = q(0) / q(2) - p.keypoints.points[i].x();
    const S v = q(1) / q(2) - p.keypoints.points[i].y();
    e2d += S(sigma) * (u * u + v * v);
  }

  S e3d(0.0);
  for (std::size_t j = 0; j < J; ++j) {
    const Vec3T<S> d = joints[j] - p.target_joints[j].template cast<S>();
    e3d += d.dot(d);
  }

  S eprior(0.0);
  const double s2 = w.rho_scale * w.rho_scale;
  for (std::size_t j = 1; j < J; ++j) {
    const Mat3T<S> rel = p.rest_pose[j].transpose().template cast<S>() * pose[j];
    const S a = rotation_angle<S>(rel);
    eprior += a * a / (S(s2) + a * a);
  }

  S eangle(0.0);
  for (const skeleton::Hinge& h : tree.hinges) {
    const Vec3T<S> omega = log_so3_t<S>(pose[static_cast<std::size_t>(h.joint)]);
    const S bend = S(h.sign) * omega.dot(h.axis.template cast<S>());
    if (scalar_value(bend) > 0.0) eangle += exp(bend) - S(1.0);
  }

  S eori(0.0);
  for (int s = 0; s < kSensorCount; ++s) {
    const auto m = static_cast<std::size_t>(tree.mounts[static_cast<std::size_t>(s)]);
    const Mat3T<S> d = globals[m] - p.imu_orientations[static_cast<std::size_t>(s)].template cast<S>();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) eori += d(r, c) * d(r, c);
  }

  terms.values[0] = scalar_value(e2d);
  terms.values[1] = scalar_value(e3d);
  terms.values[2] = scalar_value(eprior);
  terms.values[3] = scalar_value(eangle);
  terms.values[4] = scalar_value(eori);
  return S(w.keypoints_2d) * e2d + S(w.joints_3d) * e3d + S(w.prior) * eprior + S(w.angle) * eangle +
         S(w.orientation) * eori;
}

EnergyTerms to_terms(const TermsT& t, double total) {
  EnergyTerms e;
  e.keypoints_2d = t.values[0];
  e.joints_3d = t.values[1];
  e.prior = t.values[2];
  e.angle = t.values[3];
  e.orientation = t.values[4];
  e.total = total;
  e.dropped_2d = t.dropped;
  return e;
}

}  // namespace

int variable_count(const RefineProblem& problem) { return 3 * problem.tree->joint_count() + 3; }

Pose pose_from_variables(const RefineProblem& problem, const VecX& x) {
  const auto J = static_cast<std::size_t>(problem.tree->joint_count());
  Pose pose(J);
  for (std::size_t j = 0; j < J; ++j)
    pose[j] = problem.initial_pose[j] * geom::exp_so3<double>(Vec3(x.segment<3>(static_cast<Eigen::Index>(3 * j))));
  return pose;
}

Vec3 translation_from_variables(const VecX& x) { return x.tail<3>(); }

EnergyTerms energy(const RefineProblem& problem, const RefineWeights& weights, const VecX& x, VecX* grad) {
  if (x.size() != variable_count(problem)) throw DimensionMismatch("refine: variable vector has the wrong size");
  TermsT terms;
  if (!grad) {
    std::vector<double> xs(x.data(), x.data() + x.size());
    const double total = energy_t<double>(problem, weights, xs, terms);
    return to_terms(terms, total);
  }
  nn::Tape tape;
  nn::TapeScope scope(tape);
  std::vector<nn::Var> xs;
  xs.reserve(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) xs.push_back(nn::Var::variable(x(i)));
  const nn::Var total = energy_t<nn::Var>(problem, weights, xs, terms);
  grad->setZero(x.size());
  if (total.id >= 0) {
    const std::vector<double> adj = tape.adjoints(total.id);
    for (Eigen::Index i = 0; i < x.size(); ++i) (*grad)(i) = adj[static_cast<std::size_t>(xs[static_cast<std::size_t>(i)].id)];
  }
  return to_terms(terms, total.value());
}

EnergyTerms energy_at(const RefineProblem& problem, const RefineWeights& weights, const Pose& pose,
                      const Vec3& translation) {
  RefineProblem at = problem;
  at.initial_pose = pose;
  VecX x = VecX::Zero(variable_count(problem));
  x.tail<3>() = translation;
  return energy(at, weights, x, nullptr);
}

RefineResult refine(const RefineProblem& problem, const RefineWeights& weights, const nn::LbfgsOptions& options) {
  problem.validate();
  weights.validate();
  VecX x0 = VecX::Zero(variable_count(problem));
  x0.tail<3>() = problem.initial_translation;
  const nn::Objective f = [&](const VecX& x, VecX& g) { return energy(problem, weights, x, &g).total; };
  const nn::LbfgsResult r = nn::lbfgs_minimize(f, x0, options);
  RefineResult out;
  out.pose = pose_from_variables(problem, r.x);
  out.translation = translation_from_variables(r.x);
  out.energy_before = r.initial_value;
  out.energy_after = r.value;
  out.line_search_failed = r.line_search_failed;
  out.iterations = r.iterations;
  return out;
}

}  // namespace mocap::refine
