#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mocap/frames.hpp"

namespace mocap::nn {

using MatX = Eigen::MatrixXd;

// One hidden vector per layer.
struct HiddenState {
  std::vector<VecX> layers;

  bool operator==(const HiddenState& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].size() != o.layers[i].size() || layers[i] != o.layers[i]) return false;
    return true;
  }
  bool all_finite() const {
    for (const VecX& h : layers)
      if (!h.allFinite()) return false;
    return true;
  }
};

// Fixed affine maps around a net: inputs are standardized with
// (x - shift) * scale, outputs are produced as raw * scale + shift.
struct Affine {
  VecX shift;
  VecX scale;

  static Affine identity(int n) { return {VecX::Zero(n), VecX::Ones(n)}; }
};

// Per-step activations kept for back-propagation through time.
struct GruStepCache {
  MatX x;       // layer input
  MatX h_prev;  // hidden before the step
  MatX r, z, n;
  MatX hn;      // W_hn h + b_hn
};

struct GruTrace {
  std::vector<std::vector<GruStepCache>> steps;  // [time][layer]
  std::vector<MatX> top;                         // top-layer hidden per step
};

// Stacked gated recurrent units (PyTorch gate equations, order r, z, n)
// followed by a linear read-out.
class RecurrentNet {
 public:
  RecurrentNet() = default;
  RecurrentNet(int input_size, int hidden_size, int layer_count, int output_size);

  int input_size() const { return input_; }
  int hidden_size() const { return hidden_; }
  int layer_count() const { return layers_; }
  int output_size() const { return output_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  VecX& parameters() { return params_; }
  const VecX& parameters() const { return params_; }

  // Uniform in +-1/sqrt(hidden), deterministic in the seed.
  void init_parameters(std::uint64_t seed);

  Affine input_norm;
  Affine output_norm;

  HiddenState zero_hidden() const;
  void check_hidden(const HiddenState& h) const;  // DimensionMismatch

  std::pair<VecX, HiddenState> forward_step(const HiddenState& hidden, const VecX& input) const;
  std::pair<std::vector<VecX>, HiddenState> forward_sequence(const HiddenState& hidden,
                                                             const std::vector<VecX>& inputs) const;

  // Batched forward: inputs[t] is input x batch, hidden[l] is hidden x batch
  // and is advanced in place. Returns outputs[t] (output x batch) and fills
  // `trace` when given.
  std::vector<MatX> forward_batch(const std::vector<MatX>& inputs, std::vector<MatX>& hidden, GruTrace* trace) const;

  // Accumulates the parameter gradient for d_outputs[t] (gradient of the
  // loss w.r.t. the de-normalized outputs) into `grad` and returns the
  // gradient with respect to each layer's initial hidden state.
  std::vector<MatX> backward_batch(const GruTrace& trace, const std::vector<MatX>& d_outputs, VecX& grad) const;

  nlohmann::json header() const;
  void save(const std::filesystem::path& path, const nlohmann::json& metadata = {}) const;
  static RecurrentNet load(const std::filesystem::path& path);

 private:
  struct Offsets {
    Eigen::Index w_ih, w_hh, b_ih, b_hh;
    int in;
  };
  Offsets layer_offsets(int layer) const;
  Eigen::Index head_offset() const;

  int input_ = 0;
  int hidden_ = 0;
  int layers_ = 0;
  int output_ = 0;
  VecX params_;
};

// Feed-forward map from an observation to a full hidden state of a target
// recurrent net: tanh hidden layers and a tanh output split across layers.
class InitializerNet {
 public:
  InitializerNet() = default;
  InitializerNet(int observation_size, std::vector<int> hidden_widths, int target_hidden, int target_layers);

  int observation_size() const { return sizes_.empty() ? 0 : sizes_.front(); }
  int target_hidden() const { return target_hidden_; }
  int target_layers() const { return target_layers_; }
  Eigen::Index parameter_count() const { return params_.size(); }
  VecX& parameters() { return params_; }
  const VecX& parameters() const { return params_; }
  void init_parameters(std::uint64_t seed);

  Affine input_norm;

  HiddenState operator()(const VecX& observation) const;

  // Batched: observations is observation x batch; returns per-layer hidden
  // x batch and keeps activations in `acts` for backward.
  std::vector<MatX> forward_batch(const MatX& observations, std::vector<MatX>* acts) const;
  void backward_batch(const std::vector<MatX>& acts, const std::vector<MatX>& d_hidden, VecX& grad) const;

  nlohmann::json header() const;
  void save(const std::filesystem::path& path, const nlohmann::json& metadata = {}) const;
  static InitializerNet load(const std::filesystem::path& path);

 private:
  std::vector<int> sizes_;  // observation, hidden widths..., layers*hidden
  int target_hidden_ = 0;
  int target_layers_ = 0;
  VecX params_;
};

// Stateful wrapper used at inference time; the hidden state is the surface
// the feedback mechanism reads and overwrites.
class RecurrentRuntime {
 public:
  RecurrentRuntime() = default;
  explicit RecurrentRuntime(const RecurrentNet* net) : net_(net), hidden_(net->zero_hidden()) {}

  VecX step(const VecX& input);
  const HiddenState& get_hidden() const { return hidden_; }
  void set_hidden(const HiddenState& h);
  void reset() { hidden_ = net_->zero_hidden(); }
  const RecurrentNet& net() const { return *net_; }

 private:
  const RecurrentNet* net_ = nullptr;
  HiddenState hidden_;
};

}  // namespace mocap::nn
