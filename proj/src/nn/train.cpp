#include "mocap/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "mocap/errors.hpp"

namespace mocap::nn {

double SquaredErrorLoss::evaluate(const MatX& outputs, const MatX& targets, MatX* grad) const {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols())
    throw DimensionMismatch("SquaredErrorLoss: outputs and targets differ in shape");
  const double inv = outputs.cols() > 0 ? 1.0 / static_cast<double>(outputs.cols()) : 0.0;
  const MatX diff = outputs - targets;
  if (grad) *grad = 2.0 * inv * diff;
  return inv * diff.squaredNorm();
}

double BinaryCrossEntropyLoss::evaluate(const MatX& outputs, const MatX& targets, MatX* grad) const {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols())
    throw DimensionMismatch("BinaryCrossEntropyLoss: outputs and targets differ in shape");
  const double inv = outputs.cols() > 0 ? 1.0 / static_cast<double>(outputs.cols()) : 0.0;
  if (grad) grad->resize(outputs.rows(), outputs.cols());
  double total = 0.0;
  for (Eigen::Index c = 0; c < outputs.cols(); ++c)
    for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
      const double x = outputs(r, c);
      const double y = targets(r, c);
      // log(1 + e^x) - y x, evaluated stably
      total += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - y * x;
      if (grad) (*grad)(r, c) = inv * (1.0 / (1.0 + std::exp(-x)) - y);
    }
  return inv * total;
}

double CumulativeVelocityLoss::evaluate(const MatX& outputs, const MatX& targets, MatX* grad) const {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols())
    throw DimensionMismatch("CumulativeVelocityLoss: outputs and targets differ in shape");
  const Eigen::Index T = outputs.cols();
  const MatX diff = (outputs - targets) * dt_;
  if (grad) *grad = MatX::Zero(outputs.rows(), T);
  double total = 0.0;
  for (int n : windows_) {
    const Eigen::Index blocks = T / n;
    if (blocks == 0) continue;
    const double inv = 1.0 / static_cast<double>(blocks);
    for (Eigen::Index b = 0; b < blocks; ++b) {
      const VecX sum = diff.middleCols(b * n, n).rowwise().sum();
      total += inv * sum.squaredNorm();
      if (grad) grad->middleCols(b * n, n).colwise() += 2.0 * inv * dt_ * sum;
    }
  }
  return total;
}

namespace {

struct Group {
  std::vector<std::size_t> members;
};

std::vector<Group> group_by_length(std::span<const TrainSample> samples) {
  std::map<Eigen::Index, std::size_t> slot;
  std::vector<Group> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Eigen::Index len = samples[i].inputs.cols();
    auto it = slot.find(len);
    if (it == slot.end()) {
      slot.emplace(len, groups.size());
      groups.push_back({{i}});
    } else {
      groups[it->second].members.push_back(i);
    }
  }
  return groups;
}

double run_group(const RecurrentNet& net, const InitializerNet* init, std::span<const TrainSample> samples,
                 const Group& g, const SequenceLoss& loss, int burn_in, GradientResult* out) {
  const auto B = static_cast<Eigen::Index>(g.members.size());
  const Eigen::Index T = samples[g.members[0]].inputs.cols();
  const bool use_init = init != nullptr && samples[g.members[0]].observation.size() > 0;

  std::vector<MatX> inputs(static_cast<std::size_t>(T), MatX(net.input_size(), B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const TrainSample& s = samples[g.members[static_cast<std::size_t>(b)]];
    if (s.inputs.rows() != net.input_size()) throw DimensionMismatch("training sample input size");
    if (use_init != (s.observation.size() > 0)) throw DimensionMismatch("samples mix initialized and cold starts");
    for (Eigen::Index t = 0; t < T; ++t) inputs[static_cast<std::size_t>(t)].col(b) = s.inputs.col(t);
  }

  std::vector<MatX> hidden;
  std::vector<MatX> init_acts;
  if (use_init) {
    MatX obs(init->observation_size(), B);
    for (Eigen::Index b = 0; b < B; ++b) obs.col(b) = samples[g.members[static_cast<std::size_t>(b)]].observation;
    hidden = init->forward_batch(obs, out ? &init_acts : nullptr);
  } else {
    hidden.assign(static_cast<std::size_t>(net.layer_count()), MatX::Zero(net.hidden_size(), B));
  }

  GruTrace trace;
  const std::vector<MatX> outputs = net.forward_batch(inputs, hidden, out ? &trace : nullptr);
  const Eigen::Index skip = std::min<Eigen::Index>(burn_in, T);
  std::vector<MatX> d_out;
  if (out) d_out.assign(static_cast<std::size_t>(T), MatX::Zero(net.output_size(), B));

  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const TrainSample& s = samples[g.members[static_cast<std::size_t>(b)]];
    MatX y(net.output_size(), T - skip);
    for (Eigen::Index t = skip; t < T; ++t) y.col(t - skip) = outputs[static_cast<std::size_t>(t)].col(b);
    MatX dy;
    const double l = loss.evaluate(y, s.targets.rightCols(T - skip), out ? &dy : nullptr);
    if (!std::isfinite(l)) throw NonFiniteLoss("non-finite loss on training sample " + std::to_string(g.members[static_cast<std::size_t>(b)]));
    total += l;
    if (out)
      for (Eigen::Index t = skip; t < T; ++t) d_out[static_cast<std::size_t>(t)].col(b) = dy.col(t - skip);
  }
  if (out) {
    const std::vector<MatX> dh0 = net.backward_batch(trace, d_out, out->net);
    if (use_init) init->backward_batch(init_acts, dh0, out->initializer);
  }
  return total;
}

}  // namespace

GradientResult gradients(const RecurrentNet& net, const InitializerNet* init, std::span<const TrainSample> samples,
                         const SequenceLoss& loss, int burn_in) {
  GradientResult r;
  r.net = VecX::Zero(net.parameter_count());
  if (init) r.initializer = VecX::Zero(init->parameter_count());
  for (const Group& g : group_by_length(samples)) r.loss += run_group(net, init, samples, g, loss, burn_in, &r);
  if (!r.net.allFinite() || (init && !r.initializer.allFinite())) throw NonFiniteLoss("non-finite gradient");
  return r;
}

double evaluate_loss(const RecurrentNet& net, const InitializerNet* init, std::span<const TrainSample> samples,
                     const SequenceLoss& loss, int burn_in) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const Group& g : group_by_length(samples)) total += run_group(net, init, samples, g, loss, burn_in, nullptr);
  return total / static_cast<double>(samples.size());
}

TrainReport train(RecurrentNet& net, InitializerNet* init, const std::vector<TrainSample>& samples,
                  const SequenceLoss& loss, const TrainConfig& config, const EpochCallback& on_epoch) {
  if (samples.empty()) throw DegenerateInput("train: empty dataset");
  if (config.batch_size < 1 || config.epochs < 0 || config.learning_rate < 0.0 || config.clip_norm <= 0.0)
    throw DegenerateInput("train: invalid configuration");

  const Eigen::Index n_net = net.parameter_count();
  const Eigen::Index n_init = init ? init->parameter_count() : 0;
  VecX m = VecX::Zero(n_net + n_init);
  VecX v = VecX::Zero(n_net + n_init);
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  TrainReport report;
  report.initial_loss = evaluate_loss(net, init, samples, loss, config.burn_in);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<TrainSample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(samples[order[i]]);
      GradientResult g = gradients(net, init, batch, loss, config.burn_in);
      VecX grad(n_net + n_init);
      grad.head(n_net) = g.net;
      if (init) grad.tail(n_init) = g.initializer;
      grad /= static_cast<double>(batch.size());
      const double norm = grad.norm();
      if (norm > config.clip_norm) grad *= config.clip_norm / norm;

      ++step;
      m = beta1 * m + (1.0 - beta1) * grad;
      v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      const VecX update =
          (config.learning_rate / c1) * (m.array() / ((v.array() / c2).sqrt() + eps)).matrix();
      net.parameters() -= update.head(n_net);
      if (init) init->parameters() -= update.tail(n_init);
    }
    const double l = evaluate_loss(net, init, samples, loss, config.burn_in);
    if (!std::isfinite(l)) throw NonFiniteLoss("training diverged at epoch " + std::to_string(epoch));
    report.loss_curve.push_back(l);
    if (on_epoch) on_epoch(epoch, l);
  }
  return report;
}

std::vector<TrainSample> make_chunks(const MatX& inputs, const MatX& targets, int length, int stride) {
  if (inputs.cols() != targets.cols()) throw DimensionMismatch("make_chunks: inputs and targets differ in length");
  if (length < 1 || stride < 1) throw DegenerateInput("make_chunks: length and stride must be positive");
  std::vector<TrainSample> out;
  const Eigen::Index T = inputs.cols();
  if (T <= length) {
    if (T > 0) out.push_back({inputs, targets, {}});
    return out;
  }
  for (Eigen::Index s = 0; s + length <= T; s += stride)
    out.push_back({inputs.middleCols(s, length), targets.middleCols(s, length), {}});
  return out;
}

namespace {

std::pair<VecX, VecX> moments(std::span<const MatX> data, double min_std) {
  if (data.empty()) throw DegenerateInput("standardization: no data");
  const Eigen::Index rows = data[0].rows();
  VecX sum = VecX::Zero(rows), sq = VecX::Zero(rows);
  double count = 0.0;
  for (const MatX& d : data) {
    if (d.rows() != rows) throw DimensionMismatch("standardization: row counts differ");
    sum += d.rowwise().sum();
    sq += d.array().square().matrix().rowwise().sum();
    count += static_cast<double>(d.cols());
  }
  if (count == 0.0) throw DegenerateInput("standardization: no columns");
  const VecX mean = sum / count;
  const VecX var = (sq / count - mean.cwiseProduct(mean)).cwiseMax(0.0);
  return {mean, var.cwiseSqrt().cwiseMax(min_std)};
}

}  // namespace

Affine input_standardization(std::span<const MatX> data, double min_std) {
  auto [mean, sd] = moments(data, min_std);
  return {mean, sd.cwiseInverse()};
}

Affine output_standardization(std::span<const MatX> data, double min_std) {
  auto [mean, sd] = moments(data, min_std);
  return {mean, sd};
}

}  // namespace mocap::nn
