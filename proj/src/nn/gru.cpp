#include "mocap/nn/gru.hpp"

#include <cmath>
#include <random>

#include "mocap/errors.hpp"
#include "mocap/nn/checkpoint.hpp"

namespace mocap::nn {

namespace {

using CMap = Eigen::Map<const MatX>;
using CVMap = Eigen::Map<const VecX>;
using Map = Eigen::Map<MatX>;
using VMap = Eigen::Map<VecX>;

MatX sigmoid(const MatX& a) { return (1.0 + (-a.array()).exp()).inverse().matrix(); }

void check_affine(const Affine& a, int n, const char* what) {
  if (a.shift.size() != n || a.scale.size() != n) throw DimensionMismatch(std::string(what) + ": normalization size");
}

nlohmann::json affine_sizes(const Affine& a) { return {{"shift", a.shift.size()}, {"scale", a.scale.size()}}; }

void take(const std::vector<double>& values, std::size_t& pos, VecX& out, Eigen::Index n) {
  if (pos + static_cast<std::size_t>(n) > values.size()) throw FormatError("checkpoint payload too short");
  out.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = values[pos++];
}

}  // namespace

RecurrentNet::RecurrentNet(int input_size, int hidden_size, int layer_count, int output_size)
    : input_(input_size), hidden_(hidden_size), layers_(layer_count), output_(output_size) {
  if (input_size < 1 || hidden_size < 1 || layer_count < 1 || output_size < 1)
    throw DimensionMismatch("RecurrentNet: all sizes must be positive");
  Eigen::Index n = 0;
  for (int l = 0; l < layers_; ++l) {
    const int in = l == 0 ? input_ : hidden_;
    n += 3 * hidden_ * in + 3 * hidden_ * hidden_ + 6 * hidden_;
  }
  n += output_ * hidden_ + output_;
  params_ = VecX::Zero(n);
  input_norm = Affine::identity(input_);
  output_norm = Affine::identity(output_);
}

RecurrentNet::Offsets RecurrentNet::layer_offsets(int layer) const {
  Eigen::Index pos = 0;
  for (int l = 0; l < layer; ++l) {
    const int in = l == 0 ? input_ : hidden_;
    pos += 3 * hidden_ * in + 3 * hidden_ * hidden_ + 6 * hidden_;
  }
  const int in = layer == 0 ? input_ : hidden_;
  Offsets o{};
  o.in = in;
  o.w_ih = pos;
  o.w_hh = o.w_ih + 3 * hidden_ * in;
  o.b_ih = o.w_hh + 3 * hidden_ * hidden_;
  o.b_hh = o.b_ih + 3 * hidden_;
  return o;
}

Eigen::Index RecurrentNet::head_offset() const { return layer_offsets(layers_ - 1).b_hh + 3 * hidden_; }

void RecurrentNet::init_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden_));
  std::uniform_real_distribution<double> u(-k, k);
  for (Eigen::Index i = 0; i < params_.size(); ++i) params_(i) = u(rng);
}

HiddenState RecurrentNet::zero_hidden() const {
  HiddenState h;
  h.layers.assign(static_cast<std::size_t>(layers_), VecX::Zero(hidden_));
  return h;
}

void RecurrentNet::check_hidden(const HiddenState& h) const {
  if (static_cast<int>(h.layers.size()) != layers_) throw DimensionMismatch("hidden state has the wrong layer count");
  for (const VecX& v : h.layers)
    if (v.size() != hidden_) throw DimensionMismatch("hidden state has the wrong width");
}

std::vector<MatX> RecurrentNet::forward_batch(const std::vector<MatX>& inputs, std::vector<MatX>& h,
                                              GruTrace* trace) const {
  if (static_cast<int>(h.size()) != layers_) throw DimensionMismatch("forward_batch: hidden layer count");
  check_affine(input_norm, input_, "RecurrentNet input");
  check_affine(output_norm, output_, "RecurrentNet output");
  const Eigen::Index batch = h.empty() ? 0 : h[0].cols();
  const Eigen::Index H = hidden_;
  std::vector<MatX> outputs;
  outputs.reserve(inputs.size());
  if (trace) {
    trace->steps.assign(inputs.size(), std::vector<GruStepCache>(static_cast<std::size_t>(layers_)));
    trace->top.assign(inputs.size(), MatX());
  }
  const Eigen::Index ho = head_offset();
  const CMap w_o(params_.data() + ho, output_, hidden_);
  const CVMap b_o(params_.data() + ho + output_ * hidden_, output_);

  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (inputs[t].rows() != input_ || inputs[t].cols() != batch)
      throw DimensionMismatch("RecurrentNet: input has " + std::to_string(inputs[t].rows()) + " rows, expected " +
                              std::to_string(input_));
    MatX x = ((inputs[t].colwise() - input_norm.shift).array().colwise() * input_norm.scale.array()).matrix();
    for (int l = 0; l < layers_; ++l) {
      const Offsets o = layer_offsets(l);
      const CMap w_ih(params_.data() + o.w_ih, 3 * H, o.in);
      const CMap w_hh(params_.data() + o.w_hh, 3 * H, H);
      const CVMap b_ih(params_.data() + o.b_ih, 3 * H);
      const CVMap b_hh(params_.data() + o.b_hh, 3 * H);
      auto& hl = h[static_cast<std::size_t>(l)];
      MatX ax = w_ih * x;
      ax.colwise() += b_ih;
      MatX ah = w_hh * hl;
      ah.colwise() += b_hh;
      MatX r = sigmoid(ax.topRows(H) + ah.topRows(H));
      MatX z = sigmoid(ax.middleRows(H, H) + ah.middleRows(H, H));
      MatX hn = ah.bottomRows(H);
      MatX n = (ax.bottomRows(H).array() + r.array() * hn.array()).tanh().matrix();
      MatX next = ((1.0 - z.array()) * n.array() + z.array() * hl.array()).matrix();
      if (trace) {
        auto& c = trace->steps[t][static_cast<std::size_t>(l)];
        c.x = std::move(x);
        c.h_prev = hl;
        c.r = std::move(r);
        c.z = std::move(z);
        c.n = std::move(n);
        c.hn = std::move(hn);
      }
      hl = next;
      x = std::move(next);
    }
    MatX y = w_o * x;
    y.colwise() += b_o;
    y = ((y.array().colwise() * output_norm.scale.array()).colwise() + output_norm.shift.array()).matrix();
    if (trace) trace->top[t] = std::move(x);
    outputs.push_back(std::move(y));
  }
  return outputs;
}

std::vector<MatX> RecurrentNet::backward_batch(const GruTrace& trace, const std::vector<MatX>& d_outputs,
                                               VecX& grad) const {
  if (grad.size() != params_.size()) grad = VecX::Zero(params_.size());
  const Eigen::Index H = hidden_;
  const std::size_t T = trace.steps.size();
  if (d_outputs.size() != T) throw DimensionMismatch("backward_batch: gradient length");
  const Eigen::Index batch = T == 0 ? 0 : trace.top[0].cols();

  const Eigen::Index ho = head_offset();
  const CMap w_o(params_.data() + ho, output_, hidden_);
  Map gw_o(grad.data() + ho, output_, hidden_);
  VMap gb_o(grad.data() + ho + output_ * hidden_, output_);

  std::vector<MatX> dh(static_cast<std::size_t>(layers_), MatX::Zero(H, batch));
  for (std::size_t ti = T; ti-- > 0;) {
    const MatX dy = (d_outputs[ti].array().colwise() * output_norm.scale.array()).matrix();
    gw_o.noalias() += dy * trace.top[ti].transpose();
    gb_o += dy.rowwise().sum();
    MatX d_above = w_o.transpose() * dy;
    for (int l = layers_ - 1; l >= 0; --l) {
      const Offsets o = layer_offsets(l);
      const CMap w_ih(params_.data() + o.w_ih, 3 * H, o.in);
      const CMap w_hh(params_.data() + o.w_hh, 3 * H, H);
      Map gw_ih(grad.data() + o.w_ih, 3 * H, o.in);
      Map gw_hh(grad.data() + o.w_hh, 3 * H, H);
      VMap gb_ih(grad.data() + o.b_ih, 3 * H);
      VMap gb_hh(grad.data() + o.b_hh, 3 * H);
      const GruStepCache& c = trace.steps[ti][static_cast<std::size_t>(l)];

      auto& dhl = dh[static_cast<std::size_t>(l)];
      const MatX d = dhl + d_above;
      const auto z = c.z.array();
      const auto n = c.n.array();
      const auto r = c.r.array();
      const MatX dn = (d.array() * (1.0 - z)).matrix();
      const MatX dz = (d.array() * (c.h_prev.array() - n)).matrix();
      const MatX da_n = (dn.array() * (1.0 - n * n)).matrix();
      const MatX da_r = (da_n.array() * c.hn.array() * r * (1.0 - r)).matrix();
      const MatX da_z = (dz.array() * z * (1.0 - z)).matrix();

      MatX dax(3 * H, batch);
      dax << da_r, da_z, da_n;
      MatX dah(3 * H, batch);
      dah << da_r, da_z, (da_n.array() * r).matrix();

      gw_ih.noalias() += dax * c.x.transpose();
      gb_ih += dax.rowwise().sum();
      gw_hh.noalias() += dah * c.h_prev.transpose();
      gb_hh += dah.rowwise().sum();

      dhl = (d.array() * z).matrix();
      dhl.noalias() += w_hh.transpose() * dah;
      d_above = l > 0 ? MatX(w_ih.transpose() * dax) : MatX();
    }
  }
  return dh;
}

std::pair<VecX, HiddenState> RecurrentNet::forward_step(const HiddenState& hidden, const VecX& input) const {
  check_hidden(hidden);
  if (input.size() != input_) throw DimensionMismatch("forward_step: input length " + std::to_string(input.size()) +
                                                      ", expected " + std::to_string(input_));
  std::vector<MatX> h(hidden.layers.begin(), hidden.layers.end());
  const auto out = forward_batch({MatX(input)}, h, nullptr);
  HiddenState next;
  for (const MatX& m : h) next.layers.push_back(m.col(0));
  return {out[0].col(0), next};
}

std::pair<std::vector<VecX>, HiddenState> RecurrentNet::forward_sequence(const HiddenState& hidden,
                                                                         const std::vector<VecX>& inputs) const {
  check_hidden(hidden);
  std::vector<VecX> outputs;
  outputs.reserve(inputs.size());
  HiddenState h = hidden;
  for (const VecX& x : inputs) {
    auto [y, next] = forward_step(h, x);
    outputs.push_back(std::move(y));
    h = std::move(next);
  }
  return {std::move(outputs), std::move(h)};
}

nlohmann::json RecurrentNet::header() const {
  return {{"kind", "gru"},
          {"input_size", input_},
          {"hidden_size", hidden_},
          {"layer_count", layers_},
          {"output_size", output_},
          {"parameter_count", params_.size()},
          {"layout", {"parameters", "input_shift", "input_scale", "output_shift", "output_scale"}},
          {"input_norm", affine_sizes(input_norm)},
          {"output_norm", affine_sizes(output_norm)}};
}

void RecurrentNet::save(const std::filesystem::path& path, const nlohmann::json& metadata) const {
  nlohmann::json h = header();
  h["metadata"] = metadata;
  write_checkpoint(path, h,
                   {params_, input_norm.shift, input_norm.scale, output_norm.shift, output_norm.scale});
}

RecurrentNet RecurrentNet::load(const std::filesystem::path& path) {
  const Checkpoint c = read_checkpoint(path);
  if (c.header.value("kind", std::string{}) != "gru") throw FormatError(path.string() + ": not a recurrent net");
  RecurrentNet net(c.header.at("input_size").get<int>(), c.header.at("hidden_size").get<int>(),
                   c.header.at("layer_count").get<int>(), c.header.at("output_size").get<int>());
  std::size_t pos = 0;
  take(c.values, pos, net.params_, net.params_.size());
  take(c.values, pos, net.input_norm.shift, net.input_);
  take(c.values, pos, net.input_norm.scale, net.input_);
  take(c.values, pos, net.output_norm.shift, net.output_);
  take(c.values, pos, net.output_norm.scale, net.output_);
  return net;
}

InitializerNet::InitializerNet(int observation_size, std::vector<int> hidden_widths, int target_hidden,
                               int target_layers)
    : target_hidden_(target_hidden), target_layers_(target_layers) {
  if (observation_size < 1 || target_hidden < 1 || target_layers < 1)
    throw DimensionMismatch("InitializerNet: sizes must be positive");
  sizes_.push_back(observation_size);
  for (int w : hidden_widths) sizes_.push_back(w);
  sizes_.push_back(target_hidden * target_layers);
  Eigen::Index n = 0;
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) n += sizes_[i + 1] * sizes_[i] + sizes_[i + 1];
  params_ = VecX::Zero(n);
  input_norm = Affine::identity(observation_size);
}

void InitializerNet::init_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    const double k = 1.0 / std::sqrt(static_cast<double>(sizes_[i]));
    std::uniform_real_distribution<double> u(-k, k);
    const Eigen::Index n = sizes_[i + 1] * sizes_[i] + sizes_[i + 1];
    for (Eigen::Index j = 0; j < n; ++j) params_(pos + j) = u(rng);
    pos += n;
  }
}

std::vector<MatX> InitializerNet::forward_batch(const MatX& observations, std::vector<MatX>* acts) const {
  if (observations.rows() != observation_size()) throw DimensionMismatch("InitializerNet: observation length");
  check_affine(input_norm, observation_size(), "InitializerNet input");
  MatX a = ((observations.colwise() - input_norm.shift).array().colwise() * input_norm.scale.array()).matrix();
  if (acts) acts->assign(1, a);
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    const CMap w(params_.data() + pos, sizes_[i + 1], sizes_[i]);
    const CVMap b(params_.data() + pos + sizes_[i + 1] * sizes_[i], sizes_[i + 1]);
    pos += sizes_[i + 1] * sizes_[i] + sizes_[i + 1];
    MatX pre = w * a;
    pre.colwise() += b;
    a = pre.array().tanh().matrix();
    if (acts) acts->push_back(a);
  }
  std::vector<MatX> h;
  for (int l = 0; l < target_layers_; ++l) h.push_back(a.middleRows(l * target_hidden_, target_hidden_));
  return h;
}

void InitializerNet::backward_batch(const std::vector<MatX>& acts, const std::vector<MatX>& d_hidden,
                                    VecX& grad) const {
  if (grad.size() != params_.size()) grad = VecX::Zero(params_.size());
  const Eigen::Index batch = acts.back().cols();
  MatX d(sizes_.back(), batch);
  for (int l = 0; l < target_layers_; ++l) d.middleRows(l * target_hidden_, target_hidden_) = d_hidden[static_cast<std::size_t>(l)];
  std::vector<Eigen::Index> offsets;
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i + 1 < sizes_.size(); ++i) {
    offsets.push_back(pos);
    pos += sizes_[i + 1] * sizes_[i] + sizes_[i + 1];
  }
  for (std::size_t i = sizes_.size() - 1; i-- > 0;) {
    const MatX& out = acts[i + 1];
    const MatX dpre = (d.array() * (1.0 - out.array() * out.array())).matrix();
    const Eigen::Index o = offsets[i];
    Map gw(grad.data() + o, sizes_[i + 1], sizes_[i]);
    VMap gb(grad.data() + o + sizes_[i + 1] * sizes_[i], sizes_[i + 1]);
    gw.noalias() += dpre * acts[i].transpose();
    gb += dpre.rowwise().sum();
    const CMap w(params_.data() + o, sizes_[i + 1], sizes_[i]);
    d = w.transpose() * dpre;
  }
}

HiddenState InitializerNet::operator()(const VecX& observation) const {
  const auto h = forward_batch(MatX(observation), nullptr);
  HiddenState out;
  for (const MatX& m : h) out.layers.push_back(m.col(0));
  return out;
}

nlohmann::json InitializerNet::header() const {
  return {{"kind", "initializer"},
          {"sizes", sizes_},
          {"target_hidden", target_hidden_},
          {"target_layers", target_layers_},
          {"parameter_count", params_.size()},
          {"layout", {"parameters", "input_shift", "input_scale"}}};
}

void InitializerNet::save(const std::filesystem::path& path, const nlohmann::json& metadata) const {
  nlohmann::json h = header();
  h["metadata"] = metadata;
  write_checkpoint(path, h, {params_, input_norm.shift, input_norm.scale});
}

InitializerNet InitializerNet::load(const std::filesystem::path& path) {
  const Checkpoint c = read_checkpoint(path);
  if (c.header.value("kind", std::string{}) != "initializer") throw FormatError(path.string() + ": not an initializer");
  const auto sizes = c.header.at("sizes").get<std::vector<int>>();
  if (sizes.size() < 2) throw FormatError(path.string() + ": bad layer sizes");
  InitializerNet net(sizes.front(), std::vector<int>(sizes.begin() + 1, sizes.end() - 1),
                     c.header.at("target_hidden").get<int>(), c.header.at("target_layers").get<int>());
  if (net.sizes_ != sizes) throw FormatError(path.string() + ": inconsistent sizes");
  std::size_t pos = 0;
  take(c.values, pos, net.params_, net.params_.size());
  take(c.values, pos, net.input_norm.shift, sizes.front());
  take(c.values, pos, net.input_norm.scale, sizes.front());
  return net;
}

VecX RecurrentRuntime::step(const VecX& input) {
  auto [y, next] = net_->forward_step(hidden_, input);
  hidden_ = std::move(next);
  return y;
}

void RecurrentRuntime::set_hidden(const HiddenState& h) {
  net_->check_hidden(h);
  hidden_ = h;
}

}  // namespace mocap::nn
