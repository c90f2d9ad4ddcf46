#include "mtnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtnet/error.hpp"
#include "mtnet/ops.hpp"

namespace mtnet {

namespace {

constexpr double kMinProb = 1e-12;

}  // namespace

void FocalParams::validate(std::size_t num_classes) const {
  if (!std::isfinite(gamma) || gamma < 0.0) {
    throw ParameterError("focal gamma must be finite and >= 0");
  }
  if (alpha.size() != num_classes) {
    throw ParameterError("focal alpha has " + std::to_string(alpha.size()) + " entries for " +
                         std::to_string(num_classes) + " classes");
  }
  for (double a : alpha) {
    if (!std::isfinite(a) || a <= 0.0) throw ParameterError("focal alpha entries must be positive and finite");
  }
}

void LossWeights::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ParameterError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ParameterError("dice eps must be positive");
}

std::vector<double> inverse_frequency_alpha(const std::vector<int>& labels,
                                            std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw DataError("label " + std::to_string(y) + " out of range");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  std::vector<double> alpha(num_classes, 1.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] > 0) {
      alpha[c] = static_cast<double>(labels.size()) /
                 (static_cast<double>(num_classes) * static_cast<double>(counts[c]));
    }
  }
  return alpha;
}

Tensor focal_loss(const Tensor& cls_logits, const std::vector<int>& labels,
                  const FocalParams& params) {
  if (cls_logits.ndim() != 2) {
    throw DimensionError("focal_loss: logits must be [N,K], got " + shape_str(cls_logits.shape()));
  }
  const std::size_t n = cls_logits.dim(0), k = cls_logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("focal_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  params.validate(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DataError("focal_loss: label " + std::to_string(labels[i]) + " at index " +
                      std::to_string(i) + " outside [0," + std::to_string(k) + ")");
    }
  }

  const double gamma = params.gamma;
  auto z = cls_logits.data();
  std::vector<double> probs(n * k);
  std::vector<double> pt(n), log_pt(n);
  std::vector<bool> clamped(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - mx - log_denom);
    const std::size_t t = static_cast<std::size_t>(labels[i]);
    double lp = row[t] - mx - log_denom;
    clamped[i] = lp < std::log(kMinProb);
    lp = std::clamp(lp, std::log(kMinProb), 0.0);
    log_pt[i] = lp;
    pt[i] = std::exp(lp);
    total += -params.alpha[t] * std::pow(1.0 - pt[i], gamma) * lp;
  }
  const double inv_n = 1.0 / static_cast<double>(n);

  return Tensor::from_op(
      {1}, {total * inv_n}, OpKind::FocalLoss, {cls_logits},
      [cls_logits, labels, alpha = params.alpha, gamma, probs = std::move(probs),
       pt = std::move(pt), log_pt = std::move(log_pt), clamped = std::move(clamped), n, k,
       inv_n](std::span<const double> go) mutable {
        if (!cls_logits.requires_grad()) return;
        auto g = cls_logits.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) {
          if (clamped[i]) continue;  // p_t pinned at the clamp floor
          const std::size_t t = static_cast<std::size_t>(labels[i]);
          const double p = pt[i];
          const double q = 1.0 - p;
          // dL/dz_j = -alpha * [q^gamma - gamma * p * q^(gamma-1) * log p] * (delta_tj - s_j)
          double curvature = 0.0;
          if (gamma != 0.0 && q > 0.0) curvature = gamma * p * std::pow(q, gamma - 1.0) * log_pt[i];
          const double coeff = -alpha[t] * (std::pow(q, gamma) - curvature) * go[0] * inv_n;
          for (std::size_t j = 0; j < k; ++j) {
            const double delta = j == t ? 1.0 : 0.0;
            g[i * k + j] += coeff * (delta - probs[i * k + j]);
          }
        }
      });
}

namespace {

struct DiceTerms {
  double inter = 0.0;  // sum p*y
  double pred = 0.0;   // sum p
  double truth = 0.0;  // sum y
};

double dice_coeff(const DiceTerms& t, double eps) {
  return (2.0 * t.inter + eps) / (t.pred + t.truth + eps);
}

}  // namespace

Tensor dice_loss(const Tensor& seg_logits, const Tensor& masks, double eps, DiceMode mode) {
  if (seg_logits.shape() != masks.shape()) {
    throw DimensionError("dice_loss: logits " + shape_str(seg_logits.shape()) +
                         " and masks " + shape_str(masks.shape()) + " differ");
  }
  if (!(eps > 0.0)) throw ParameterError("dice_loss: eps must be positive");
  auto y = masks.data();
  for (double v : y) {
    if (v != 0.0 && v != 1.0) throw DataError("dice_loss: mask values must be 0 or 1");
  }
  auto z = seg_logits.data();
  const std::size_t total = seg_logits.numel();
  const std::size_t images = mode == DiceMode::Batch ? 1 : seg_logits.dim(0);
  const std::size_t per = total / images;

  std::vector<double> p(total);
  for (std::size_t i = 0; i < total; ++i) p[i] = 1.0 / (1.0 + std::exp(-z[i]));

  std::vector<DiceTerms> fg(images), bg(images);
  double loss = 0.0;
  for (std::size_t b = 0; b < images; ++b) {
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      fg[b].inter += p[i] * y[i];
      fg[b].pred += p[i];
      fg[b].truth += y[i];
      const double q = 1.0 - p[i], yb = 1.0 - y[i];
      bg[b].inter += q * yb;
      bg[b].pred += q;
      bg[b].truth += yb;
    }
    loss += 1.0 - 0.5 * (dice_coeff(fg[b], eps) + dice_coeff(bg[b], eps));
  }
  const double inv_images = 1.0 / static_cast<double>(images);

  return Tensor::from_op(
      {1}, {loss * inv_images}, OpKind::DiceLoss, {seg_logits},
      [seg_logits, masks, p = std::move(p), fg = std::move(fg), bg = std::move(bg), eps, per,
       images, inv_images](std::span<const double> go) mutable {
        if (!seg_logits.requires_grad()) return;
        auto g = seg_logits.mutable_grad();
        auto y = masks.data();
        for (std::size_t b = 0; b < images; ++b) {
          const double den_f = fg[b].pred + fg[b].truth + eps;
          const double num_f = 2.0 * fg[b].inter + eps;
          const double den_b = bg[b].pred + bg[b].truth + eps;
          const double num_b = 2.0 * bg[b].inter + eps;
          for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
            const double d_fg = (2.0 * y[i] * den_f - num_f) / (den_f * den_f);
            // background term is differentiated w.r.t. q = 1 - p
            const double d_bg = -(2.0 * (1.0 - y[i]) * den_b - num_b) / (den_b * den_b);
            const double dloss_dp = -0.5 * (d_fg + d_bg);
            g[i] += go[0] * inv_images * dloss_dp * p[i] * (1.0 - p[i]);
          }
        }
      });
}

Tensor total_loss(const Tensor& seg_loss, const Tensor& cls_loss, const LossWeights& w) {
  w.validate();
  if (seg_loss.numel() != 1 || cls_loss.numel() != 1) {
    throw DimensionError("total_loss: both terms must be scalars");
  }
  return add(scale(seg_loss, w.lambda), scale(cls_loss, 1.0 - w.lambda));
}

}  // namespace mtnet
