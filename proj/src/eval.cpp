#include "mocap/eval.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/SVD>

#include "mocap/errors.hpp"

namespace mocap::eval {

using estimator::Bundle;
using estimator::SequenceData;
using pipeline::MotionEstimate;
using pipeline::PipelineConfig;

// ---- metrics ----------------------------------------------------------------

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw LengthMismatch(std::string(what) + ": sequences differ in length");
}

void check_frames(const JointSequence& pred, const JointSequence& gt) {
  check_lengths(pred.size(), gt.size(), "mpjpe");
  for (std::size_t k = 0; k < pred.size(); ++k) check_lengths(pred[k].size(), gt[k].size(), "mpjpe joints");
}

double frame_error(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  if (pred.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) sum += (pred[j] - gt[j]).norm();
  return 1000.0 * sum / static_cast<double>(pred.size());
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

std::vector<double> mpjpe_series(const JointSequence& pred, const JointSequence& gt) {
  check_frames(pred, gt);
  std::vector<double> out;
  out.reserve(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) out.push_back(frame_error(pred[k], gt[k]));
  return out;
}

double mpjpe(const JointSequence& pred, const JointSequence& gt) { return mean(mpjpe_series(pred, gt)); }

Similarity procrustes(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  check_lengths(pred.size(), gt.size(), "procrustes");
  const auto n = static_cast<Eigen::Index>(pred.size());
  if (n < 3) throw DegenerateFrame("procrustes: fewer than 3 points");
  Eigen::Matrix3Xd x(3, n), y(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.col(i) = pred[static_cast<std::size_t>(i)];
    y.col(i) = gt[static_cast<std::size_t>(i)];
  }
  const Vec3 mx = x.rowwise().mean();
  const Vec3 my = y.rowwise().mean();
  x.colwise() -= mx;
  y.colwise() -= my;

  const Eigen::JacobiSVD<Eigen::Matrix3Xd> gt_svd(y);
  const Vec3 sv = gt_svd.singularValues();
  if (!(sv(1) > 1e-9 * std::max(sv(0), 1e-300))) throw DegenerateFrame("procrustes: ground truth is collinear");
  const double var_x = x.squaredNorm() / static_cast<double>(n);
  if (!(var_x > 1e-18)) throw DegenerateFrame("procrustes: prediction collapses to a point");

  const Mat3 cov = y * x.transpose() / static_cast<double>(n);
  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 d(1.0, 1.0, 1.0);
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d(2) = -1.0;
  Similarity s;
  s.rotation = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
  s.scale = svd.singularValues().dot(d) / var_x;
  s.translation = my - s.scale * (s.rotation * mx);
  return s;
}

PaResult pa_mpjpe(const JointSequence& pred, const JointSequence& gt) {
  check_frames(pred, gt);
  PaResult r;
  std::vector<double> errors;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    try {
      const Similarity s = procrustes(pred[k], gt[k]);
      std::vector<Vec3> aligned;
      aligned.reserve(pred[k].size());
      for (const Vec3& p : pred[k]) aligned.push_back(s.apply(p));
      errors.push_back(frame_error(aligned, gt[k]));
    } catch (const DegenerateFrame&) {
      ++r.skipped;
    }
  }
  if (errors.empty() && !pred.empty()) throw DegenerateFrame("pa_mpjpe: every frame is degenerate");
  r.mm = mean(errors);
  return r;
}

std::vector<double> translation_error_series(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  check_lengths(pred.size(), gt.size(), "translation_error");
  std::vector<double> out;
  out.reserve(pred.size());
  for (std::size_t k = 0; k < pred.size(); ++k) out.push_back(100.0 * (pred[k] - gt[k]).norm());
  return out;
}

double translation_error(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
  return mean(translation_error_series(pred, gt));
}

nlohmann::json MetricsReport::to_json(bool series) const {
  nlohmann::json j = {{"mpjpe_mm", mpjpe_mm}, {"pa_mpjpe_mm", pa_mpjpe_mm}, {"te_cm", te_cm},
                      {"frames", frames},     {"pa_skipped", pa_skipped},   {"tags", tags}};
  if (series) {
    j["mpjpe_frames"] = mpjpe_frames;
    j["te_frames"] = te_frames;
  }
  return j;
}

MetricsReport evaluate(const std::vector<MotionEstimate>& estimates, const sensors::GroundTruth& truth, int begin,
                       int end) {
  check_lengths(estimates.size(), truth.translation_camera.size(), "evaluate");
  const int n = static_cast<int>(estimates.size());
  if (end < 0) end = n;
  if (begin < 0 || begin > end || end > n) throw FormatError("evaluate: frame range out of bounds");
  JointSequence pred, gt;
  std::vector<Vec3> pt, gtt;
  for (int k = begin; k < end; ++k) {
    const auto i = static_cast<std::size_t>(k);
    pred.push_back(estimates[i].joints_camera.points);
    gt.push_back(truth.joints_camera[i]);
    pt.push_back(estimates[i].translation);
    gtt.push_back(truth.translation_camera[i]);
  }
  MetricsReport m;
  m.frames = end - begin;
  m.mpjpe_frames = mpjpe_series(pred, gt);
  m.mpjpe_mm = mean(m.mpjpe_frames);
  if (!pred.empty()) {
    const PaResult pa = pa_mpjpe(pred, gt);
    m.pa_mpjpe_mm = pa.mm;
    m.pa_skipped = pa.skipped;
  }
  m.te_frames = translation_error_series(pt, gtt);
  m.te_cm = mean(m.te_frames);
  return m;
}

// ---- scenarios --------------------------------------------------------------

namespace {

sensors::ScenarioScript light_noise() {
  sensors::ScenarioScript s;
  s.keypoint_noise_px = 2.0;
  s.orientation_jitter_deg = 1.0;
  return s;
}

}  // namespace

const std::vector<std::string>& scenario_names() {
  static const std::vector<std::string> names{"visible", "occlusion", "out_of_view"};
  return names;
}

sensors::ScenarioScript make_scenario(const std::string& name, std::size_t frames, std::uint64_t seed) {
  const int n = static_cast<int>(frames);
  sensors::ScenarioScript s = light_noise();
  if (name == "visible") return s;
  if (name == "occlusion") {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int len = n / 3;
    const int begin = static_cast<int>(unit(rng) * (n - len));
    s.occlusions.push_back({begin, begin + len, {}, 0.4});
    return s;
  }
  if (name == "out_of_view") {
    s.out_of_view.push_back({n / 3, 2 * n / 3});
    return s;
  }
  throw FormatError("unknown scenario '" + name + "'");
}

Case out_of_view_case(const Bundle& bundle, std::uint64_t seed) {
  sensors::MotionParams params;
  params.duration_s = 10.0;
  std::mt19937_64 rng(seed);
  params.heading = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  const auto motion = sensors::generate_motion(sensors::MotionKind::Walk, bundle.tree, seed, params);
  const int n = static_cast<int>(motion.frame_count());
  sensors::ScenarioScript script = light_noise();
  script.out_of_view.push_back({n / 5, n - n / 10});
  Case c;
  c.data = estimator::prepare_sequence(motion, bundle.tree, estimator::random_rig(motion, seed * 31 + 7),
                                       bundle.correspondence, script, seed * 17 + 3);
  c.window_begin = 0;
  c.window_end = n;
  return c;
}

Case reentry_case(const Bundle& bundle, std::uint64_t seed, int after_frames) {
  sensors::MotionParams params;
  params.duration_s = 10.0;
  params.heading = std::numbers::pi / 2.0;  // walking along +x
  const auto motion = sensors::generate_motion(sensors::MotionKind::Walk, bundle.tree, seed, params);
  const int n = static_cast<int>(motion.frame_count());
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& t : motion.translations) centroid += t;
  centroid /= static_cast<double>(n);
  // camera on the +z side facing -z, so +x is image right
  const auto rig = sensors::CameraRig::look_at(Vec3(centroid.x(), 1.3, centroid.z() + 5.0),
                                               Vec3(centroid.x(), 0.9, centroid.z()));
  const int exit = n / 4;
  const int reenter = std::min(n - after_frames, exit + n / 3);
  sensors::ScenarioScript script = light_noise();
  script.out_of_view.push_back({exit, reenter});
  Case c;
  c.data = estimator::prepare_sequence(motion, bundle.tree, rig, bundle.correspondence, script, seed * 17 + 5);
  c.window_begin = reenter;
  c.window_end = reenter + after_frames;
  return c;
}

Case ambiguous_case(const Bundle& bundle, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  sensors::MotionParams params;
  params.heading = std::uniform_real_distribution<double>(-0.6, 0.6)(rng);
  const auto pair = sensors::make_ambiguous_pair(bundle.tree, seed, 1.0, 1.5, 5.0, params);
  const int n = static_cast<int>(pair.bend.frame_count());
  const int hidden_from = std::min(n - 1, pair.hold_frame + 5);
  sensors::ScenarioScript script = light_noise();
  script.out_of_view.push_back({hidden_from, n});
  Case c;
  const auto rig = sensors::CameraRig::look_at(Vec3(0.0, 1.2, 3.5), Vec3(0.0, 0.8, 0.0));
  c.data = estimator::prepare_sequence(pair.bend, bundle.tree, rig, bundle.correspondence, script, seed * 17 + 9);
  c.window_begin = hidden_from;
  c.window_end = n;
  return c;
}

std::vector<MotionEstimate> run_case(const Bundle& bundle, const SequenceData& data, const PipelineConfig& config,
                                     pipeline::StreamSummary* summary) {
  pipeline::Pipeline p(bundle, data.rig.calibration(), config, data.rig.height());
  std::vector<MotionEstimate> out;
  out.reserve(data.streams.frame_count());
  const auto s = pipeline::run_stream(p, pipeline::frame_inputs(data.streams, data.motion.frame_rate),
                                      [&](const MotionEstimate& e) { out.push_back(e); });
  if (summary) *summary = s;
  return out;
}

// ---- ablation ---------------------------------------------------------------

PipelineConfig AblationConfig::apply(PipelineConfig base) const {
  base.camera_only = !dual_coordinate;
  base.pose_feedback = feedback;
  base.translation_feedback = feedback;
  base.refine = optimization;
  return base;
}

nlohmann::json AblationConfig::to_json() const {
  return {{"name", name}, {"dual_coordinate", dual_coordinate}, {"feedback", feedback}, {"optimization", optimization}};
}

AblationConfig AblationConfig::from_json(const nlohmann::json& j) {
  AblationConfig c;
  try {
    for (const auto& [key, value] : j.items())
      if (key != "name" && key != "dual_coordinate" && key != "feedback" && key != "optimization")
        throw FormatError("ablation: unknown flag '" + key + "'");
    c.name = j.value("name", c.name);
    c.dual_coordinate = j.value("dual_coordinate", c.dual_coordinate);
    c.feedback = j.value("feedback", c.feedback);
    c.optimization = j.value("optimization", c.optimization);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("ablation: ") + e.what());
  }
  return c;
}

std::vector<AblationConfig> default_grid() {
  return {{"full", true, true, true},
          {"w/o dual coordinate", false, true, true},
          {"w/o feedback", true, false, true},
          {"w/o optimization", true, true, false}};
}

std::vector<AblationConfig> grid_from_json(const nlohmann::json& j) {
  const nlohmann::json& list = j.is_object() && j.contains("configs") ? j.at("configs") : j;
  if (!list.is_array() || list.empty()) throw FormatError("ablation: grid must be a non-empty array");
  std::vector<AblationConfig> out;
  for (const auto& item : list) out.push_back(AblationConfig::from_json(item));
  return out;
}

std::string AblationTable::to_csv() const {
  std::ostringstream o;
  o << std::setprecision(10);
  o << "scenario,config,mpjpe_mm,mpjpe_std,pa_mpjpe_mm,pa_mpjpe_std,te_cm,te_std,frames\n";
  for (const AblationRow& r : rows)
    o << r.scenario << ',' << r.config << ',' << r.mpjpe_mean << ',' << r.mpjpe_std << ',' << r.pa_mpjpe_mean << ','
      << r.pa_mpjpe_std << ',' << r.te_mean << ',' << r.te_std << ',' << r.frames << '\n';
  return o.str();
}

std::string AblationTable::to_text() const {
  std::ostringstream o;
  o << std::left << std::setw(13) << "scenario" << std::setw(22) << "config" << std::right << std::setw(20)
    << "MPJPE (mm)" << std::setw(20) << "PA-MPJPE (mm)" << std::setw(20) << "TE (cm)" << '\n';
  o << std::fixed << std::setprecision(2);
  const auto cell = [](double m, double s) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << m << " +- " << s;
    return c.str();
  };
  for (const AblationRow& r : rows)
    o << std::left << std::setw(13) << r.scenario << std::setw(22) << r.config << std::right << std::setw(20)
      << cell(r.mpjpe_mean, r.mpjpe_std) << std::setw(20) << cell(r.pa_mpjpe_mean, r.pa_mpjpe_std) << std::setw(20)
      << cell(r.te_mean, r.te_std) << '\n';
  return o.str();
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json j = {{"rows", nlohmann::json::array()}, {"sequences", nlohmann::json::array()}};
  for (const AblationRow& r : rows)
    j["rows"].push_back({{"scenario", r.scenario},
                         {"config", r.config},
                         {"mpjpe_mm", r.mpjpe_mean},
                         {"mpjpe_std", r.mpjpe_std},
                         {"pa_mpjpe_mm", r.pa_mpjpe_mean},
                         {"pa_mpjpe_std", r.pa_mpjpe_std},
                         {"te_cm", r.te_mean},
                         {"te_std", r.te_std},
                         {"frames", r.frames}});
  for (const SequenceRow& s : sequences)
    j["sequences"].push_back({{"scenario", s.scenario},
                              {"config", s.config},
                              {"seed", s.seed},
                              {"sequence", s.sequence},
                              {"motion", s.motion},
                              {"metrics", s.metrics.to_json()}});
  return j;
}

AblationTable run_ablation(const Bundle& bundle, const AblationOptions& options) {
  if (options.configs.empty() || options.scenarios.empty() || options.seeds.empty() || options.sequences_per_seed < 1)
    throw FormatError("ablation: empty grid, scenario list, or seed list");
  std::vector<PipelineConfig> configs;
  for (const AblationConfig& a : options.configs) {
    configs.push_back(a.apply(options.base));
    // fail before any work when a net is missing
    pipeline::Pipeline probe(bundle, geom::Calibration{}, configs.back());
  }
  for (const std::string& s : options.scenarios) make_scenario(s, 90, 0);

  struct Job {
    std::size_t scenario, seed;
    int sequence;
    SequenceData data;
  };
  std::vector<Job> jobs;
  for (std::size_t si = 0; si < options.scenarios.size(); ++si) {
    for (std::size_t ki = 0; ki < options.seeds.size(); ++ki) {
      const std::uint64_t seed = options.seeds[ki];
      sensors::MotionParams params;
      params.duration_s = options.duration_s;
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const auto kinds = std::array{sensors::MotionKind::Walk, sensors::MotionKind::Turn, sensors::MotionKind::Squat,
                                    sensors::MotionKind::ArmRaise, sensors::MotionKind::Jump};
      for (int q = 0; q < options.sequences_per_seed; ++q) {
        params.heading = 2.0 * std::numbers::pi * unit(rng);
        const auto kind = kinds[static_cast<std::size_t>(q) % kinds.size()];
        const std::uint64_t s = seed * 1000 + static_cast<std::uint64_t>(q);
        const auto motion = sensors::generate_motion(kind, bundle.tree, s, params);
        const auto script = make_scenario(options.scenarios[si], motion.frame_count(), s);
        jobs.push_back({si, ki, q,
                        estimator::prepare_sequence(motion, bundle.tree, estimator::random_rig(motion, s * 13 + 1),
                                                    bundle.correspondence, script, s * 7 + 2)});
      }
    }
  }

  // results[job][config]
  std::vector<std::vector<MetricsReport>> results(jobs.size(), std::vector<MetricsReport>(configs.size()));
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = options.threads > 0 ? static_cast<std::size_t>(options.threads) : hw;
  std::vector<std::future<void>> running;
  std::size_t next = 0;
  const auto work = [&](std::size_t j) {
    for (std::size_t c = 0; c < configs.size(); ++c) {
      results[j][c] = evaluate(run_case(bundle, jobs[j].data, configs[c]), jobs[j].data.truth);
      results[j][c].tags = {options.scenarios[jobs[j].scenario], jobs[j].data.motion.label};
    }
  };
  while (next < jobs.size() || !running.empty()) {
    while (next < jobs.size() && running.size() < workers) running.push_back(std::async(std::launch::async, work, next++));
    running.front().get();
    running.erase(running.begin());
  }

  AblationTable table;
  for (std::size_t si = 0; si < options.scenarios.size(); ++si) {
    for (std::size_t c = 0; c < configs.size(); ++c) {
      std::vector<double> mp, pa, te;
      int frames = 0;
      for (std::size_t ki = 0; ki < options.seeds.size(); ++ki) {
        // frame-weighted mean over the seed's sequences
        double m = 0.0, p = 0.0, t = 0.0;
        int f = 0;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
          if (jobs[j].scenario != si || jobs[j].seed != ki) continue;
          const MetricsReport& r = results[j][c];
          m += r.mpjpe_mm * r.frames;
          p += r.pa_mpjpe_mm * r.frames;
          t += r.te_cm * r.frames;
          f += r.frames;
          table.sequences.push_back({options.scenarios[si], options.configs[c].name, options.seeds[ki],
                                     jobs[j].sequence, jobs[j].data.motion.label, r});
        }
        frames += f;
        mp.push_back(f ? m / f : 0.0);
        pa.push_back(f ? p / f : 0.0);
        te.push_back(f ? t / f : 0.0);
      }
      table.rows.push_back({options.scenarios[si], options.configs[c].name, mean(mp), stddev(mp), mean(pa),
                            stddev(pa), mean(te), stddev(te), frames});
    }
  }
  return table;
}

}  // namespace mocap::eval
