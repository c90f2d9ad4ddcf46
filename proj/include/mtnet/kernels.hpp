#pragma once

// Raw convolution kernels over NCHW float64 buffers.
//
// Two implementations share one interface:
//   mtnet::kernels             im2col + blocked GEMM, OpenMP-parallel
//   mtnet::kernels::reference  direct nested loops, serial
//
// The parallel kernels partition work so that every output element is
// accumulated by exactly one thread in a fixed order; results do not depend
// on the thread count. The reference kernels are kept for tests and for the
// benchmark in bench/.

#include <cstddef>
#include <span>

namespace mtnet::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_height() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
};

// out = conv(in, weight) + bias. `out` is overwritten.
void conv2d_forward(const ConvGeometry& g, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out);

// grad_in += conv_transpose(grad_out, weight)
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in);

// grad_weight += correlate(in, grad_out); grad_bias += sum(grad_out).
// Either output span may be empty to skip it.
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias);

// C[m x n] += A[m x k] * B[k x n], all row-major.
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     const double* b, double* c);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out);

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in);

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias);

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     const double* b, double* c);

}  // namespace reference

}  // namespace mtnet::kernels
