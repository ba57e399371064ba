#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mocap/nn/gru.hpp"

namespace mocap::nn {

// Loss over one sequence. `outputs` and `targets` hold one frame per column.
// Returns the loss and writes d loss / d outputs into `grad` when non-null.
class SequenceLoss {
 public:
  virtual ~SequenceLoss() = default;
  virtual double evaluate(const MatX& outputs, const MatX& targets, MatX* grad) const = 0;
};

// Mean over frames of the squared Euclidean error.
class SquaredErrorLoss : public SequenceLoss {
 public:
  double evaluate(const MatX& outputs, const MatX& targets, MatX* grad) const override;
};

// Outputs are logits; targets are labels in [0, 1]. Mean over frames of the
// summed binary cross-entropy.
class BinaryCrossEntropyLoss : public SequenceLoss {
 public:
  double evaluate(const MatX& outputs, const MatX& targets, MatX* grad) const override;
};

// Velocity loss over cumulative windows: for each window length n, the
// squared norm of the summed error over consecutive n-frame blocks,
// averaged over blocks, summed over window lengths.
class CumulativeVelocityLoss : public SequenceLoss {
 public:
  explicit CumulativeVelocityLoss(std::vector<int> windows = {1, 3, 9, 27}, double dt = 1.0 / 30.0)
      : windows_(std::move(windows)), dt_(dt) {}
  double evaluate(const MatX& outputs, const MatX& targets, MatX* grad) const override;

 private:
  std::vector<int> windows_;
  double dt_;
};

// Loss defined by callables, used by tests.
class FunctionLoss : public SequenceLoss {
 public:
  using Fn = std::function<double(const MatX&, const MatX&, MatX*)>;
  explicit FunctionLoss(Fn fn) : fn_(std::move(fn)) {}
  double evaluate(const MatX& outputs, const MatX& targets, MatX* grad) const override {
    return fn_(outputs, targets, grad);
  }

 private:
  Fn fn_;
};

struct TrainSample {
  MatX inputs;       // input_size x T
  MatX targets;      // target rows x T
  VecX observation;  // initializer observation for the first frame (empty: zero hidden)
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int chunk_length = 64;
  int epochs = 30;
  std::uint64_t seed = 1;
  double clip_norm = 1.0;
  int burn_in = 0;  // leading frames of each sample excluded from the loss
};

struct GradientResult {
  double loss = 0.0;  // summed over samples
  VecX net;
  VecX initializer;
};

// Summed loss and gradients over `samples` (back-propagation through time
// over each full sample). With an initializer, samples start from the
// hidden state it maps their observation to. Throws NonFiniteLoss.
GradientResult gradients(const RecurrentNet& net, const InitializerNet* init, std::span<const TrainSample> samples,
                         const SequenceLoss& loss, int burn_in = 0);

// Mean per-sample loss.
double evaluate_loss(const RecurrentNet& net, const InitializerNet* init, std::span<const TrainSample> samples,
                     const SequenceLoss& loss, int burn_in = 0);

struct TrainReport {
  double initial_loss = 0.0;
  std::vector<double> loss_curve;  // mean loss over the data after each epoch
};

using EpochCallback = std::function<void(int epoch, double loss)>;

// Adam with global gradient-norm clipping and seeded shuffling.
TrainReport train(RecurrentNet& net, InitializerNet* init, const std::vector<TrainSample>& samples,
                  const SequenceLoss& loss, const TrainConfig& config, const EpochCallback& on_epoch = {});

// Cuts each (inputs, targets) sequence into chunks of `length` frames with
// the given stride; the tail shorter than `length` is dropped unless the
// sequence itself is shorter, in which case it is kept whole.
std::vector<TrainSample> make_chunks(const MatX& inputs, const MatX& targets, int length, int stride);

// Per-row statistics over the columns of the given matrices, as the input
// map (x - mean) / std or the output map raw * std + mean. The standard
// deviation is floored at `min_std`.
Affine input_standardization(std::span<const MatX> data, double min_std = 1e-3);
Affine output_standardization(std::span<const MatX> data, double min_std = 1e-3);

}  // namespace mocap::nn
