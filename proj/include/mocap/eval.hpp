#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mocap/estimator.hpp"
#include "mocap/pipeline.hpp"

namespace mocap::eval {

using JointSequence = std::vector<std::vector<Vec3>>;

// Mean per-joint Euclidean error in mm over root-relative joints. Throws
// LengthMismatch on differing frame or joint counts.
double mpjpe(const JointSequence& pred, const JointSequence& gt);
std::vector<double> mpjpe_series(const JointSequence& pred, const JointSequence& gt);

// Similarity transform minimizing sum |s R x + t - y|^2.
struct Similarity {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
};

// Closed-form alignment of `pred` onto `gt`; throws DegenerateFrame when the
// ground truth is collinear or `pred` collapses to a point.
Similarity procrustes(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

struct PaResult {
  double mm = 0.0;
  int skipped = 0;  // degenerate frames left out of the mean
};

// MPJPE after per-frame similarity alignment. Throws DegenerateFrame when
// every frame is degenerate.
PaResult pa_mpjpe(const JointSequence& pred, const JointSequence& gt);

// Mean Euclidean distance in cm; LengthMismatch on differing lengths.
double translation_error(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);
std::vector<double> translation_error_series(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt);

struct MetricsReport {
  double mpjpe_mm = 0.0;
  double pa_mpjpe_mm = 0.0;
  double te_cm = 0.0;
  int frames = 0;
  int pa_skipped = 0;
  std::vector<double> mpjpe_frames;
  std::vector<double> te_frames;
  std::vector<std::string> tags;

  nlohmann::json to_json(bool series = false) const;
};

// Metrics of pipeline output against ground truth on frames [begin, end);
// `end` < 0 means the last frame.
MetricsReport evaluate(const std::vector<pipeline::MotionEstimate>& estimates, const sensors::GroundTruth& truth,
                       int begin = 0, int end = -1);

// ---- scenarios --------------------------------------------------------------

// "visible" (keypoint noise only), "occlusion" (partial occlusion window),
// "out_of_view" (the middle third without keypoints). FormatError otherwise.
sensors::ScenarioScript make_scenario(const std::string& name, std::size_t frames, std::uint64_t seed);
const std::vector<std::string>& scenario_names();

// One evaluation sequence with the frame window an experiment measures.
struct Case {
  estimator::SequenceData data;
  int window_begin = 0;
  int window_end = 0;
};

// Walk with a long out-of-view window.
Case out_of_view_case(const estimator::Bundle& bundle, std::uint64_t seed);
// Lateral walk leaving the view on the right half of the image and
// re-entering further along; the window covers the frames after re-entry.
Case reentry_case(const estimator::Bundle& bundle, std::uint64_t seed, int after_frames = 60);
// Bend continuation of the ambiguous pair: visible through the transition,
// out of view during the static hold (the window).
Case ambiguous_case(const estimator::Bundle& bundle, std::uint64_t seed);

std::vector<pipeline::MotionEstimate> run_case(const estimator::Bundle& bundle, const estimator::SequenceData& data,
                                               const pipeline::PipelineConfig& config,
                                               pipeline::StreamSummary* summary = nullptr);

// ---- ablation ---------------------------------------------------------------

struct AblationConfig {
  std::string name = "full";
  bool dual_coordinate = true;  // off: camera-only variant nets
  bool feedback = true;
  bool optimization = true;

  pipeline::PipelineConfig apply(pipeline::PipelineConfig base) const;
  nlohmann::json to_json() const;
  static AblationConfig from_json(const nlohmann::json& j);
};

// Full pipeline plus one row per disabled component.
std::vector<AblationConfig> default_grid();
std::vector<AblationConfig> grid_from_json(const nlohmann::json& j);

struct AblationOptions {
  std::vector<AblationConfig> configs = default_grid();
  std::vector<std::string> scenarios{"out_of_view"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int sequences_per_seed = 3;
  double duration_s = 8.0;
  pipeline::PipelineConfig base;
  int threads = 0;  // 0: hardware concurrency
};

struct AblationRow {
  std::string scenario;
  std::string config;
  double mpjpe_mean = 0.0, mpjpe_std = 0.0;
  double pa_mpjpe_mean = 0.0, pa_mpjpe_std = 0.0;
  double te_mean = 0.0, te_std = 0.0;
  int frames = 0;
};

struct SequenceRow {
  std::string scenario;
  std::string config;
  std::uint64_t seed = 0;
  int sequence = 0;
  std::string motion;
  MetricsReport metrics;
};

struct AblationTable {
  std::vector<AblationRow> rows;           // seed means and deviations
  std::vector<SequenceRow> sequences;      // per-sequence breakdown

  std::string to_csv() const;
  std::string to_text() const;
  nlohmann::json to_json() const;
};

// Each seed draws its motions, cameras and degraded streams once; every
// config runs on the same streams. Throws MissingCheckpoint when a config
// needs a net the bundle lacks.
AblationTable run_ablation(const estimator::Bundle& bundle, const AblationOptions& options);

}  // namespace mocap::eval
