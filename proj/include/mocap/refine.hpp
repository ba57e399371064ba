#pragma once

#include <array>
#include <vector>

#include <json.hpp>

#include "mocap/frames.hpp"
#include "mocap/nn/lbfgs.hpp"
#include "mocap/sensors.hpp"
#include "mocap/skeleton.hpp"

namespace mocap::refine {

struct RefineWeights {
  double keypoints_2d = 1.0;
  double joints_3d = 1.0;
  double prior = 0.1;
  double angle = 15.2;
  double orientation = 0.5;
  double rho_scale = 0.3;  // Geman-McClure scale, radians

  void validate() const;  // FormatError on negative weights or a non-positive scale
  nlohmann::json to_json() const;
  static RefineWeights from_json(const nlohmann::json& j);
};

// Camera-frame fitting problem for one frame.
struct RefineProblem {
  const skeleton::KinematicTree* tree = nullptr;
  sensors::Correspondence correspondence;
  skeleton::Pose initial_pose;       // theta_c: local rotations, root in the camera frame
  Vec3 initial_translation = Vec3::Zero();
  KeypointFrame keypoints;           // normalized (Z=1 plane) with confidences
  std::vector<Vec3> target_joints;   // absolute camera-frame joint targets
  std::array<Mat3, kSensorCount> imu_orientations;  // camera frame, indexed by Sensor
  skeleton::Pose rest_pose;          // reference for the pose prior

  void validate() const;  // DimensionMismatch / FormatError
};

// Geman-McClure penalty e^2 / (s^2 + e^2).
double geman_mcclure(double e, double scale);

struct EnergyTerms {
  double keypoints_2d = 0.0;
  double joints_3d = 0.0;
  double prior = 0.0;
  double angle = 0.0;
  double orientation = 0.0;
  double total = 0.0;   // weighted sum
  int dropped_2d = 0;   // keypoints behind the camera
};

// Variables: per joint an axis-angle increment delta_j applied as
// R_j = R_j^0 exp(delta_j), followed by the translation (3 values).
int variable_count(const RefineProblem& problem);
skeleton::Pose pose_from_variables(const RefineProblem& problem, const VecX& x);
Vec3 translation_from_variables(const VecX& x);

// Weighted energy at x; fills the gradient when `grad` is non-null.
EnergyTerms energy(const RefineProblem& problem, const RefineWeights& weights, const VecX& x, VecX* grad = nullptr);

// Terms at an explicit pose and translation.
EnergyTerms energy_at(const RefineProblem& problem, const RefineWeights& weights, const skeleton::Pose& pose,
                      const Vec3& translation);

struct RefineResult {
  skeleton::Pose pose;
  Vec3 translation = Vec3::Zero();
  double energy_before = 0.0;
  double energy_after = 0.0;
  bool line_search_failed = false;
  int iterations = 0;
};

// L-BFGS from the initial pose and translation (1 iteration by default).
RefineResult refine(const RefineProblem& problem, const RefineWeights& weights,
                    const nn::LbfgsOptions& options = {});

}  // namespace mocap::refine
