#pragma once

#include <cstddef>
#include <random>

#include "mtnet/tensor.hpp"

namespace mtnet {

using Rng = std::mt19937_64;

// Elementwise arithmetic on equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// Reductions to a one-element tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Cross-correlation of an NCHW input with an OIHW weight plus per-channel
/// bias. The bias tensor may be undefined for a bias-free convolution.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride = 1, std::size_t padding = 0);

/// Non-overlapping max pooling (kernel == stride). Ties go to the first
/// element of the window in row-major order.
Tensor maxpool2d(const Tensor& input, std::size_t kernel = 2, std::size_t stride = 2);

Tensor upsample_nearest2d(const Tensor& input, int factor);

/// input[N,F] * weight[F,K] + bias[K]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);
/// Softmax along `axis` using the max-subtracted form.
Tensor softmax(const Tensor& input, std::size_t axis);

Tensor group_norm(const Tensor& input, std::size_t groups, const Tensor& gamma,
                  const Tensor& beta, double eps = 1e-5);

/// Inverted dropout. Identity when `training` is false or p == 0.
Tensor dropout(const Tensor& input, double p, bool training, Rng& rng);

/// Concatenates NCHW tensors along the channel axis.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& input);

}  // namespace mtnet
