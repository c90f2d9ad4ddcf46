#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mtnet/ops.hpp"
#include "mtnet/tensor.hpp"

namespace mtnet {

struct NetConfig {
  std::size_t in_channels = 1;
  std::size_t base_width = 16;
  std::size_t depth = 3;
  std::size_t num_classes = 3;  // benign, malignant, normal
  std::size_t seg_channels = 1;
  double dropout_p = 0.5;
  std::size_t input_size = 64;
  std::size_t norm_groups = 8;

  /// Human-readable violations; empty when the config is usable.
  std::vector<std::string> violations() const;
  /// Throws ConfigError listing every violation.
  void validate() const;

  std::size_t stage_width(std::size_t stage) const { return base_width << stage; }

  bool operator==(const NetConfig&) const = default;
};

/// conv -> group norm -> relu
struct ConvBlock {
  Tensor weight;  // [out, in, 3, 3]
  Tensor bias;    // [out]
  Tensor gamma;   // [out]
  Tensor beta;    // [out]
  std::size_t groups = 1;
};

struct EncoderStage {
  ConvBlock conv1;
  ConvBlock conv2;
};

struct DecoderStage {
  ConvBlock conv;
};

struct NetOutput {
  Tensor seg_logits;  // [N, 1, S, S]
  Tensor cls_logits;  // [N, K]
};

/// Shared encoder with a U-Net style segmentation decoder and a pooled
/// linear classifier. Both heads read the same encoder pass.
class MultiTaskNet {
 public:
  explicit MultiTaskNet(NetConfig config);

  const NetConfig& config() const { return config_; }

  NetOutput forward(const Tensor& images, bool training, Rng& rng) const;

  /// Every trainable tensor once, in a fixed order: encoder stages, decoder
  /// stages, segmentation output conv, classifier.
  std::vector<std::pair<std::string, Tensor>> param_groups() const;

  std::vector<Tensor> encoder_params() const;
  std::vector<Tensor> decoder_params() const;  // decoder stages + seg output conv
  std::vector<Tensor> classifier_params() const;

  std::size_t parameter_count() const;

  /// Deep copy (fresh parameter storage).
  MultiTaskNet clone() const;

 private:
  NetConfig config_;
  std::vector<EncoderStage> encoder_;
  std::vector<DecoderStage> decoder_;
  Tensor seg_weight_;  // [1, base_width, 1, 1]
  Tensor seg_bias_;
  Tensor fc_weight_;  // [bottleneck width, K]
  Tensor fc_bias_;

  friend MultiTaskNet init_params(const NetConfig& config, std::uint64_t seed);
};

/// Closed-form parameter count for a config; must agree with
/// MultiTaskNet::parameter_count().
///
///   block(cin, cout) = 9*cin*cout + cout (conv) + 2*cout (norm)
///   encoder stage i  = block(cin_i, w_i) + block(w_i, w_i),
///                      cin_0 = in_channels, cin_i = w_{i-1}, w_i = base * 2^i
///   decoder stage j  = block(w_{d-j} + w_{d-1-j}, w_{d-1-j}), w_d := w_{d-1}
///   seg output       = base * seg_channels + seg_channels
///   classifier       = w_{d-1} * K + K
std::size_t expected_parameter_count(const NetConfig& config);

/// He-normal conv/linear weights (std = sqrt(2 / fan_in)), zero biases, unit
/// gamma, zero beta. Deterministic in `seed`.
MultiTaskNet init_params(const NetConfig& config, std::uint64_t seed);

/// Binary checkpoint: "MTNET1", config block, then each param_groups() entry
/// as (name, shape, float64 data). All integers and floats little-endian.
void save_checkpoint(const MultiTaskNet& net, const std::filesystem::path& path);
MultiTaskNet load_checkpoint(const std::filesystem::path& path);

}  // namespace mtnet
