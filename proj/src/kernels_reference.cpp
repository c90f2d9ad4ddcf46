#include "mtnet/kernels.hpp"

namespace mtnet::kernels::reference {

namespace {

// Input coordinate for output position `o` and kernel tap `k`; returns false
// when the tap falls into the zero padding.
inline bool source_index(std::size_t o, std::size_t k, std::size_t stride, std::size_t pad,
                         std::size_t extent, std::size_t& src) {
  const long pos = static_cast<long>(o * stride + k) - static_cast<long>(pad);
  if (pos < 0 || pos >= static_cast<long>(extent)) return false;
  src = static_cast<std::size_t>(pos);
  return true;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                std::size_t sy, sx;
                if (!source_index(y, ky, g.stride, g.padding, g.height, sy)) continue;
                if (!source_index(x, kx, g.stride, g.padding, g.width, sx)) continue;
                acc += weight[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx] *
                       in[((n * g.in_channels + ci) * g.height + sy) * g.width + sx];
              }
          out[((n * g.out_channels + co) * oh + y) * ow + x] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const double go = grad_out[((n * g.out_channels + co) * oh + y) * ow + x];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                std::size_t sy, sx;
                if (!source_index(y, ky, g.stride, g.padding, g.height, sy)) continue;
                if (!source_index(x, kx, g.stride, g.padding, g.width, sx)) continue;
                grad_in[((n * g.in_channels + ci) * g.height + sy) * g.width + sx] +=
                    go * weight[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
              }
        }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const double go = grad_out[((n * g.out_channels + co) * oh + y) * ow + x];
          if (!grad_bias.empty()) grad_bias[co] += go;
          if (grad_weight.empty()) continue;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                std::size_t sy, sx;
                if (!source_index(y, ky, g.stride, g.padding, g.height, sy)) continue;
                if (!source_index(x, kx, g.stride, g.padding, g.width, sx)) continue;
                grad_weight[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx] +=
                    go * in[((n * g.in_channels + ci) * g.height + sy) * g.width + sx];
              }
        }
}

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

}  // namespace mtnet::kernels::reference
