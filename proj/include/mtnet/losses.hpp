#pragma once

#include <cstddef>
#include <vector>

#include "mtnet/tensor.hpp"

namespace mtnet {

struct FocalParams {
  double gamma = 2.0;
  std::vector<double> alpha;  // one positive weight per class

  void validate(std::size_t num_classes) const;
};

enum class DiceMode {
  Batch,     // one dice per class over all pixels of the batch
  PerImage,  // dice per image, losses averaged over the batch
};

struct LossWeights {
  double lambda = 0.7;  // weight of the segmentation term
  double eps = 1e-6;    // dice smoothing

  void validate() const;
};

/// Inverse class frequency weights: alpha_c = N / (K * count_c). Classes
/// absent from `labels` get weight 1.
std::vector<double> inverse_frequency_alpha(const std::vector<int>& labels,
                                            std::size_t num_classes);

/// mean_i  -alpha[y_i] * (1 - p_i)^gamma * log(p_i),  p_i = softmax(z_i)[y_i]
/// with p_i clamped to [1e-12, 1] before the log.
Tensor focal_loss(const Tensor& cls_logits, const std::vector<int>& labels,
                  const FocalParams& params);

/// Soft dice loss averaged over foreground and background:
///
///   dice_fg = (2 sum(p*y) + eps) / (sum(p) + sum(y) + eps),  p = sigmoid(z)
///   dice_bg = same with p -> 1-p, y -> 1-y
///   loss    = 1 - (dice_fg + dice_bg) / 2
///
/// The commonly quoted closed form (y + p + 2yp) / (y + p + eps) is not a
/// loss (nonzero at y == p, larger than one); this is the standard soft dice
/// it abbreviates. `masks` must hold only 0 and 1.
Tensor dice_loss(const Tensor& seg_logits, const Tensor& masks, double eps,
                 DiceMode mode = DiceMode::Batch);

/// lambda * seg + (1 - lambda) * cls
Tensor total_loss(const Tensor& seg_loss, const Tensor& cls_loss, const LossWeights& w);

}  // namespace mtnet
