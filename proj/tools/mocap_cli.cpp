#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mocap/errors.hpp"
#include "mocap/estimator.hpp"
#include "mocap/eval.hpp"
#include "mocap/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mocap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitBadInput = 2;
constexpr int kExitMissingCheckpoint = 3;
constexpr int kExitFailure = 1;

bool g_verbose = false;

void log(const std::string& line) {
  if (g_verbose) std::cerr << line << '\n';
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

nlohmann::json section(const nlohmann::json& config, const char* key) {
  if (!config.contains(key)) return nlohmann::json::object();
  if (!config.at(key).is_object()) throw FormatError(std::string("config: '") + key + "' must be an object");
  return config.at(key);
}

// Writes to `path`, or stdout when it is empty or "-".
void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
}

sensors::ScenarioScript scenario_from_arg(const std::string& arg, std::size_t frames, std::uint64_t seed) {
  if (fs::exists(arg)) return sensors::ScenarioScript::from_json(read_json_file(arg));
  return eval::make_scenario(arg, frames, seed);
}

// ---- train ------------------------------------------------------------------

struct TrainSettings {
  int sequences = 50;
  estimator::NetSizes sizes;
  estimator::BundleTrainConfig config;
  estimator::FusionParams fusion;
};

TrainSettings train_settings(const nlohmann::json& root) {
  TrainSettings s;
  const nlohmann::json t = section(root, "train");
  try {
    s.sequences = t.value("sequences", s.sequences);
    s.config.seed = t.value("seed", s.config.seed);
    s.sizes.hidden = t.value("hidden", s.sizes.hidden);
    s.sizes.layers = t.value("layers", s.sizes.layers);
    s.sizes.initializer_widths = t.value("initializer_widths", s.sizes.initializer_widths);
    auto& tc = s.config.train;
    tc.epochs = t.value("epochs", tc.epochs);
    tc.learning_rate = t.value("learning_rate", tc.learning_rate);
    tc.batch_size = t.value("batch_size", tc.batch_size);
    tc.clip_norm = t.value("clip_norm", tc.clip_norm);
    tc.burn_in = t.value("burn_in", tc.burn_in);
    s.config.chunks.length = t.value("chunk_length", s.config.chunks.length);
    s.config.chunks.stride = t.value("chunk_stride", s.config.chunks.stride);
    tc.chunk_length = s.config.chunks.length;
    auto& a = s.config.augment;
    a.keypoint_noise_px = t.value("keypoint_noise_px", a.keypoint_noise_px);
    a.orientation_jitter_deg = t.value("orientation_jitter_deg", a.orientation_jitter_deg);
    a.occlusion_probability = t.value("occlusion_probability", a.occlusion_probability);
    a.out_of_view_probability = t.value("out_of_view_probability", a.out_of_view_probability);
    a.joint_noise_m = t.value("joint_noise_m", a.joint_noise_m);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config.train: ") + e.what());
  }
  if (s.sequences < 1 || s.sizes.hidden < 1 || s.sizes.layers < 1 || s.config.train.epochs < 0 ||
      s.config.chunks.length < 2 || s.config.chunks.stride < 1)
    throw FormatError("config.train: counts and sizes must be positive");
  if (root.contains("fusion")) s.fusion = estimator::FusionParams::from_json(root.at("fusion"));
  return s;
}

int cmd_train(const nlohmann::json& config, const std::string& net, const std::string& out, const std::string& data) {
  TrainSettings s = train_settings(config);
  estimator::Bundle bundle;
  const auto tree = skeleton::KinematicTree::smpl_mean();
  if (net != "all" && fs::exists(fs::path(out) / "fusion.json")) {
    bundle = estimator::Bundle::load(out);
  } else {
    bundle = estimator::Bundle::create(tree, sensors::identity_correspondence(tree), s.sizes, s.config.seed);
    bundle.fusion = s.fusion;
  }
  if (net != "all") s.config.nets = {estimator::net_from_string(net)};
  {
    nlohmann::json merged = bundle.extra.contains("pipeline") ? bundle.extra.at("pipeline") : nlohmann::json::object();
    const nlohmann::json overrides = section(config, "pipeline");
    for (const auto& [k, v] : overrides.items()) merged[k] = v;
    bundle.extra["pipeline"] = pipeline::PipelineConfig::from_json(merged).to_json();
  }

  std::vector<sensors::MotionSequence> motions;
  if (!data.empty()) {
    for (const auto& entry : fs::directory_iterator(data))
      if (entry.is_directory()) motions.push_back(sensors::read_dataset(entry.path()).motion);
    std::sort(motions.begin(), motions.end(), [](const auto& a, const auto& b) { return a.label < b.label; });
    if (motions.empty()) throw FormatError("no datasets under " + data);
  } else {
    motions = sensors::generate_procedural_motions(s.sequences, s.config.seed, bundle.tree);
  }
  log("corpus: " + std::to_string(motions.size()) + " sequences");
  const auto corpus = estimator::make_corpus(motions, bundle, s.config.augment, s.config.seed);
  const auto results = estimator::train_bundle(bundle, corpus, s.config, log);
  bundle.save(out);
  for (const auto& r : results) {
    const double last = r.report.loss_curve.empty() ? r.report.initial_loss : r.report.loss_curve.back();
    std::cout << estimator::to_string(r.id) << ": loss " << r.report.initial_loss << " -> " << last << " ("
              << r.samples << " samples, " << r.seconds << " s)\n";
  }
  return kExitOk;
}

// ---- run --------------------------------------------------------------------

pipeline::PipelineConfig pipeline_config(const nlohmann::json& config, const estimator::Bundle& bundle) {
  nlohmann::json p = bundle.extra.contains("pipeline") ? bundle.extra.at("pipeline") : nlohmann::json::object();
  const nlohmann::json overrides = section(config, "pipeline");
  for (const auto& [k, v] : overrides.items()) p[k] = v;
  return pipeline::PipelineConfig::from_json(p);
}

int cmd_run(const nlohmann::json& config, const std::string& bundle_dir, const std::string& input,
            const std::string& out, bool no_feedback, bool no_refine, bool camera_only) {
  const auto bundle = estimator::Bundle::load(bundle_dir);
  auto pc = pipeline_config(config, bundle);
  if (no_feedback) pc.pose_feedback = pc.translation_feedback = false;
  if (no_refine) pc.refine = false;
  if (camera_only) pc.camera_only = true;
  const auto data = sensors::read_dataset(input);
  if (data.motion.frame_rate != bundle.fusion.frame_rate)
    log("warning: dataset frame rate differs from the bundle's");
  pipeline::Pipeline p(bundle, data.rig.calibration(), pc, data.rig.height());
  std::ostringstream lines;
  const auto summary = pipeline::run_stream(p, pipeline::frame_inputs(data.streams, data.motion.frame_rate),
                                            [&](const pipeline::MotionEstimate& e) { lines << e.to_json().dump() << '\n'; });
  write_text(out, lines.str());
  log("frames " + std::to_string(summary.frames) + ", mean step " + std::to_string(summary.mean_step_ms) +
      " ms, pose feedback " + std::to_string(summary.pose_feedback_count) + ", translation feedback " +
      std::to_string(summary.translation_feedback_count));
  return kExitOk;
}

// ---- eval -------------------------------------------------------------------

Vec3 vec3_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw FormatError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

int cmd_eval(const std::string& pred_path, const std::string& gt_dir, const std::string& out, bool series) {
  const auto data = sensors::read_dataset(gt_dir);
  const auto tree = skeleton::KinematicTree::smpl_mean();
  const auto truth = sensors::ground_truth(data.motion, tree, data.rig);
  std::ifstream in(pred_path);
  if (!in) throw FormatError("cannot open " + pred_path);
  eval::JointSequence joints;
  std::vector<Vec3> translations;
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      translations.push_back(vec3_from(j.at("translation")));
      std::vector<Vec3> frame;
      for (const auto& p : j.at("joints_camera")) frame.push_back(vec3_from(p));
      joints.push_back(std::move(frame));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(pred_path + ": " + e.what());
  }
  eval::MetricsReport m;
  m.frames = static_cast<int>(joints.size());
  m.mpjpe_frames = eval::mpjpe_series(joints, truth.joints_camera);
  for (double v : m.mpjpe_frames) m.mpjpe_mm += v / std::max<double>(1, m.frames);
  const auto pa = eval::pa_mpjpe(joints, truth.joints_camera);
  m.pa_mpjpe_mm = pa.mm;
  m.pa_skipped = pa.skipped;
  m.te_frames = eval::translation_error_series(translations, truth.translation_camera);
  m.te_cm = eval::translation_error(translations, truth.translation_camera);
  m.tags = {data.motion.label};
  write_text(out, m.to_json(series).dump(2) + "\n");
  return kExitOk;
}

// ---- ablate -----------------------------------------------------------------

std::vector<std::uint64_t> parse_seeds(const std::string& arg) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(arg);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    try {
      if (dash != std::string::npos && dash > 0) {
        const auto a = std::stoull(item.substr(0, dash)), b = std::stoull(item.substr(dash + 1));
        if (b < a) throw FormatError("bad seed range '" + item + "'");
        for (auto s = a; s <= b; ++s) seeds.push_back(s);
      } else {
        seeds.push_back(std::stoull(item));
      }
    } catch (const std::logic_error&) {
      throw FormatError("bad seed '" + item + "'");
    }
  }
  if (seeds.empty()) throw FormatError("no seeds given");
  return seeds;
}

int cmd_ablate(const nlohmann::json& config, const std::string& bundle_dir, const std::string& grid,
               const std::string& seeds, const std::vector<std::string>& scenarios, int sequences, double duration,
               const std::string& csv, const std::string& json_out) {
  const auto bundle = estimator::Bundle::load(bundle_dir);
  eval::AblationOptions o;
  o.base = pipeline_config(config, bundle);
  if (!grid.empty()) o.configs = eval::grid_from_json(read_json_file(grid));
  o.seeds = parse_seeds(seeds);
  if (!scenarios.empty()) o.scenarios = scenarios;
  o.sequences_per_seed = sequences;
  o.duration_s = duration;
  const auto table = eval::run_ablation(bundle, o);
  std::cout << table.to_text();
  if (!csv.empty()) write_text(csv, table.to_csv());
  if (!json_out.empty()) write_text(json_out, table.to_json().dump(2) + "\n");
  return kExitOk;
}

// ---- synth ------------------------------------------------------------------

int cmd_synth(int count, std::uint64_t seed, const std::string& scenario, const std::string& out, double duration) {
  const auto tree = skeleton::KinematicTree::smpl_mean();
  const auto corr = sensors::identity_correspondence(tree);
  auto motions = sensors::generate_procedural_motions(count, seed, tree);
  fs::create_directories(out);
  for (std::size_t i = 0; i < motions.size(); ++i) {
    auto& m = motions[i];
    if (duration > 0.0) {
      const auto n = std::min(m.frame_count(), static_cast<std::size_t>(duration * m.frame_rate));
      if (n >= 3) {
        m.poses.resize(n);
        m.translations.resize(n);
      }
    }
    sensors::Dataset d;
    d.motion = m;
    d.rig = estimator::random_rig(m, seed * 7919 + i);
    d.scenario = scenario_from_arg(scenario, m.frame_count(), seed * 104729 + i);
    d.streams = sensors::apply_scenario(sensors::synthesize_streams(m, tree, d.rig, corr), d.scenario,
                                        seed * 104729 + i, d.rig.intrinsics, m.frame_rate);
    char name[32];
    std::snprintf(name, sizeof name, "seq_%03zu", i);
    sensors::write_dataset(fs::path(out) / name, d);
    log(std::string(name) + ": " + m.label + ", " + std::to_string(m.frame_count()) + " frames");
  }
  std::cout << "wrote " << motions.size() << " sequences to " << out << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual-inertial motion capture: synthesis, training, streaming, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_flag("--verbose,-v", g_verbose, "Log progress to stderr");

  auto* synth = app.add_subcommand("synth", "Generate procedural datasets");
  int count = 10;
  std::uint64_t seed = 1;
  std::string scenario = "visible", synth_out = "data";
  double synth_duration = 0.0;
  synth->add_option("--count", count, "Number of sequences")->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--scenario", scenario, "visible | occlusion | out_of_view | path to a scenario JSON");
  synth->add_option("--out", synth_out, "Output directory");
  synth->add_option("--duration", synth_duration, "Truncate sequences to this many seconds");

  auto* train = app.add_subcommand("train", "Train one net or the whole bundle");
  std::string net = "all", train_out = "bundle", train_data;
  train->add_option("--net", net, "P1 P2 P3 T1 T2 T3 P3c T1c T2c or all");
  train->add_option("--out", train_out, "Bundle directory");
  train->add_option("--data", train_data, "Directory of datasets (default: procedural)");

  auto* run = app.add_subcommand("run", "Stream a dataset through the pipeline");
  std::string bundle_dir = "bundle", input, run_out;
  bool no_feedback = false, no_refine = false, camera_only = false;
  run->add_option("--bundle", bundle_dir, "Bundle directory");
  run->add_option("--input", input, "Dataset directory")->required();
  run->add_option("--out", run_out, "JSON-lines output (default stdout)");
  run->add_flag("--no-feedback", no_feedback, "Disable both hidden-state feedback paths");
  run->add_flag("--no-refine", no_refine, "Skip the refinement stage");
  run->add_flag("--camera-only", camera_only, "Use the camera-frame-only variant nets");

  auto* evalc = app.add_subcommand("eval", "Metrics of a run against a dataset's ground truth");
  std::string pred, gt, eval_out;
  bool series = false;
  evalc->add_option("--pred", pred, "JSON-lines from 'run'")->required();
  evalc->add_option("--gt", gt, "Dataset directory")->required();
  evalc->add_option("--out", eval_out, "Metrics JSON (default stdout)");
  evalc->add_flag("--series", series, "Include per-frame series");

  auto* ablate = app.add_subcommand("ablate", "Ablation table over a config grid");
  std::string grid, seeds = "1-3", csv, ablate_json;
  std::vector<std::string> scenarios;
  int sequences = 3;
  double duration = 8.0;
  ablate->add_option("--bundle", bundle_dir, "Bundle directory");
  ablate->add_option("--grid", grid, "JSON array of {name, dual_coordinate, feedback, optimization}");
  ablate->add_option("--seeds", seeds, "Comma list or ranges, e.g. 1-5,9");
  ablate->add_option("--scenario", scenarios, "Scenario names (repeatable)");
  ablate->add_option("--sequences", sequences, "Sequences per seed")->check(CLI::PositiveNumber);
  ablate->add_option("--duration", duration, "Seconds per sequence")->check(CLI::PositiveNumber);
  ablate->add_option("--csv", csv, "CSV output path");
  ablate->add_option("--json", ablate_json, "JSON output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitBadInput;
  }

  try {
    const nlohmann::json config = config_path.empty() ? nlohmann::json::object() : read_json_file(config_path);
    if (!config.is_object()) throw FormatError("config must be a JSON object");
    if (*synth) return cmd_synth(count, seed, scenario, synth_out, synth_duration);
    if (*train) return cmd_train(config, net, train_out, train_data);
    if (*run) return cmd_run(config, bundle_dir, input, run_out, no_feedback, no_refine, camera_only);
    if (*evalc) return cmd_eval(pred, gt, eval_out, series);
    if (*ablate)
      return cmd_ablate(config, bundle_dir, grid, seeds, scenarios, sequences, duration, csv, ablate_json);
  } catch (const MissingCheckpoint& e) {
    std::cerr << "missing checkpoint: " << e.what() << '\n';
    return kExitMissingCheckpoint;
  } catch (const Error& e) {
    std::cerr << "bad input: " << e.what() << '\n';
    return kExitBadInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "bad input: " << e.what() << '\n';
    return kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
