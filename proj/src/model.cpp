#include "mtnet/model.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "mtnet/error.hpp"

namespace mtnet {

std::vector<std::string> NetConfig::violations() const {
  std::vector<std::string> out;
  if (in_channels < 1) out.emplace_back("in_channels must be >= 1");
  if (base_width < 1) out.emplace_back("base_width must be >= 1");
  if (depth < 1) out.emplace_back("depth must be >= 1");
  if (depth > 16) out.emplace_back("depth must be <= 16");
  if (num_classes < 2) out.emplace_back("num_classes must be >= 2");
  if (seg_channels != 1) out.emplace_back("seg_channels must be 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) out.emplace_back("dropout_p must lie in [0, 1)");
  if (norm_groups < 1) out.emplace_back("norm_groups must be >= 1");
  if (depth >= 1 && depth <= 16) {
    const std::size_t factor = std::size_t{1} << depth;
    if (input_size == 0 || input_size % factor != 0) {
      out.emplace_back("input_size " + std::to_string(input_size) + " must be a positive multiple of 2^depth = " +
                       std::to_string(factor));
    }
  }
  return out;
}

void NetConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::ostringstream os;
  os << "invalid network config:";
  for (const auto& s : v) os << "\n  - " << s;
  throw ConfigError(os.str());
}

namespace {

ConvBlock make_block(std::size_t in, std::size_t out, std::size_t groups) {
  ConvBlock b;
  b.weight = Tensor({out, in, 3, 3}, 0.0, true);
  b.bias = Tensor({out}, 0.0, true);
  b.gamma = Tensor({out}, 1.0, true);
  b.beta = Tensor({out}, 0.0, true);
  b.groups = std::gcd(groups, out);
  return b;
}

Tensor run_block(const ConvBlock& b, const Tensor& x) {
  return relu(group_norm(conv2d(x, b.weight, b.bias, 1, 1), b.groups, b.gamma, b.beta));
}

void push_block(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                const ConvBlock& b) {
  out.emplace_back(prefix + ".conv.weight", b.weight);
  out.emplace_back(prefix + ".conv.bias", b.bias);
  out.emplace_back(prefix + ".norm.gamma", b.gamma);
  out.emplace_back(prefix + ".norm.beta", b.beta);
}

std::size_t block_count(std::size_t in, std::size_t out) { return 9 * in * out + out + 2 * out; }

}  // namespace

MultiTaskNet::MultiTaskNet(NetConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.depth;
  std::size_t in = config_.in_channels;
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t w = config_.stage_width(i);
    encoder_.push_back({make_block(in, w, config_.norm_groups), make_block(w, w, config_.norm_groups)});
    in = w;
  }
  std::size_t prev = config_.stage_width(d - 1);
  for (std::size_t j = 0; j < d; ++j) {
    const std::size_t skip = config_.stage_width(d - 1 - j);
    decoder_.push_back({make_block(prev + skip, skip, config_.norm_groups)});
    prev = skip;
  }
  seg_weight_ = Tensor({config_.seg_channels, config_.base_width, 1, 1}, 0.0, true);
  seg_bias_ = Tensor({config_.seg_channels}, 0.0, true);
  fc_weight_ = Tensor({config_.stage_width(d - 1), config_.num_classes}, 0.0, true);
  fc_bias_ = Tensor({config_.num_classes}, 0.0, true);
}

NetOutput MultiTaskNet::forward(const Tensor& images, bool training, Rng& rng) const {
  const std::size_t s = config_.input_size;
  if (images.ndim() != 4 || images.dim(1) != config_.in_channels || images.dim(2) != s ||
      images.dim(3) != s) {
    throw DimensionError("forward: expected images of shape [N," + std::to_string(config_.in_channels) +
                         "," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                         shape_str(images.shape()));
  }
  std::vector<Tensor> skips;
  Tensor x = images;
  for (const auto& stage : encoder_) {
    x = run_block(stage.conv2, run_block(stage.conv1, x));
    skips.push_back(x);
    x = maxpool2d(x, 2, 2);
  }
  const Tensor features = x;

  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    x = concat_channels(upsample_nearest2d(x, 2), skips[skips.size() - 1 - j]);
    x = run_block(decoder_[j].conv, x);
  }
  NetOutput out;
  out.seg_logits = conv2d(x, seg_weight_, seg_bias_, 1, 0);

  const Tensor pooled = dropout(global_avg_pool(features), config_.dropout_p, training, rng);
  out.cls_logits = linear(pooled, fc_weight_, fc_bias_);
  return out;
}

std::vector<std::pair<std::string, Tensor>> MultiTaskNet::param_groups() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    push_block(out, "encoder." + std::to_string(i) + ".block1", encoder_[i].conv1);
    push_block(out, "encoder." + std::to_string(i) + ".block2", encoder_[i].conv2);
  }
  for (std::size_t j = 0; j < decoder_.size(); ++j) {
    push_block(out, "decoder." + std::to_string(j) + ".block", decoder_[j].conv);
  }
  out.emplace_back("seg_head.out.weight", seg_weight_);
  out.emplace_back("seg_head.out.bias", seg_bias_);
  out.emplace_back("cls_head.fc.weight", fc_weight_);
  out.emplace_back("cls_head.fc.bias", fc_bias_);
  return out;
}

std::vector<Tensor> MultiTaskNet::encoder_params() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : param_groups())
    if (name.starts_with("encoder.")) out.push_back(t);
  return out;
}

std::vector<Tensor> MultiTaskNet::decoder_params() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : param_groups())
    if (name.starts_with("decoder.") || name.starts_with("seg_head.")) out.push_back(t);
  return out;
}

std::vector<Tensor> MultiTaskNet::classifier_params() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : param_groups())
    if (name.starts_with("cls_head.")) out.push_back(t);
  return out;
}

std::size_t MultiTaskNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : param_groups()) n += t.numel();
  return n;
}

MultiTaskNet MultiTaskNet::clone() const {
  MultiTaskNet copy(config_);
  auto src = param_groups();
  auto dst = copy.param_groups();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].second.data();
    std::copy(from.begin(), from.end(), dst[i].second.data().begin());
  }
  return copy;
}

std::size_t expected_parameter_count(const NetConfig& c) {
  c.validate();
  const std::size_t d = c.depth;
  auto w = [&](std::size_t i) { return c.stage_width(std::min(i, d - 1)); };
  std::size_t total = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const std::size_t cin = i == 0 ? c.in_channels : w(i - 1);
    total += block_count(cin, w(i)) + block_count(w(i), w(i));
  }
  for (std::size_t j = 0; j < d; ++j) total += block_count(w(d - j) + w(d - 1 - j), w(d - 1 - j));
  total += c.base_width * c.seg_channels + c.seg_channels;
  total += w(d - 1) * c.num_classes + c.num_classes;
  return total;
}

MultiTaskNet init_params(const NetConfig& config, std::uint64_t seed) {
  MultiTaskNet net(config);
  Rng rng(seed);
  for (auto& [name, t] : net.param_groups()) {
    if (!name.ends_with(".weight")) continue;  // biases 0, gamma 1, beta 0 from construction
    const auto& s = t.shape();
    // conv: fan_in = in * kh * kw; linear [F, K]: fan_in = F
    const std::size_t fan_in = s.size() == 4 ? s[1] * s[2] * s[3] : s[0];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.data()) v = normal(rng);
  }
  return net;
}

}  // namespace mtnet
