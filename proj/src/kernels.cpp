#include "mtnet/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace mtnet::kernels {

namespace {

constexpr std::size_t kMr = 8;    // rows per register tile
constexpr std::size_t kNr = 16;   // columns per register tile (two 8-wide vectors)
constexpr std::size_t kKc = 256;  // depth block kept hot in cache

using vec8 = double __attribute__((vector_size(64)));

inline vec8 load8(const double* p) {
  vec8 v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

// A block packed as [row panel][p][kMr], rows past m zero-filled.
void pack_a(std::size_t m, std::size_t k, std::size_t p0, std::size_t p1, const double* a,
            double* out) {
  const std::size_t depth = p1 - p0;
  for (std::size_t i0 = 0; i0 < m; i0 += kMr) {
    double* panel = out + (i0 / kMr) * depth * kMr;
    for (std::size_t p = 0; p < depth; ++p)
      for (std::size_t r = 0; r < kMr; ++r)
        panel[p * kMr + r] = i0 + r < m ? a[(i0 + r) * k + p0 + p] : 0.0;
  }
}

// B columns [j0, j0+cols) of rows [p0, p1) packed as [p][kNr], zero-padded.
void pack_b(std::size_t n, std::size_t j0, std::size_t cols, std::size_t p0, std::size_t p1,
            const double* b, double* out) {
  for (std::size_t p = p0; p < p1; ++p) {
    const double* src = b + p * n + j0;
    double* dst = out + (p - p0) * kNr;
    std::size_t j = 0;
    for (; j < cols; ++j) dst[j] = src[j];
    for (; j < kNr; ++j) dst[j] = 0.0;
  }
}

// C tile (rows x cols valid) += Apanel * Bpanel over `depth`.
inline void micro_kernel(std::size_t depth, const double* ap, const double* bp, double* c,
                         std::size_t ldc, std::size_t rows, std::size_t cols) {
  vec8 acc[kMr][2] = {};
  for (std::size_t p = 0; p < depth; ++p) {
    const vec8 b0 = load8(bp + p * kNr);
    const vec8 b1 = load8(bp + p * kNr + 8);
    const double* av = ap + p * kMr;
#pragma GCC unroll 8
    for (std::size_t r = 0; r < kMr; ++r) {
      acc[r][0] += av[r] * b0;
      acc[r][1] += av[r] * b1;
    }
  }
  if (rows == kMr && cols == kNr) {
    for (std::size_t r = 0; r < kMr; ++r) {
      double* crow = c + r * ldc;
      const vec8 c0 = load8(crow) + acc[r][0];
      const vec8 c1 = load8(crow + 8) + acc[r][1];
      std::memcpy(crow, &c0, sizeof(c0));
      std::memcpy(crow + 8, &c1, sizeof(c1));
    }
    return;
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] += acc[r][j / 8][j % 8];
}

void im2col(const ConvGeometry& g, const double* in, double* col) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t rows = g.patch_size();
#pragma omp parallel for schedule(static)
  for (std::size_t row = 0; row < rows; ++row) {
    const std::size_t kx = row % g.kernel_w;
    const std::size_t ky = (row / g.kernel_w) % g.kernel_h;
    const std::size_t ci = row / (g.kernel_w * g.kernel_h);
    const double* plane = in + ci * g.height * g.width;
    double* dst = col + row * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const long sy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.padding);
      double* drow = dst + y * ow;
      if (sy < 0 || sy >= static_cast<long>(g.height)) {
        std::fill(drow, drow + ow, 0.0);
        continue;
      }
      const double* srow = plane + static_cast<std::size_t>(sy) * g.width;
      for (std::size_t x = 0; x < ow; ++x) {
        const long sx = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.padding);
        drow[x] = (sx < 0 || sx >= static_cast<long>(g.width)) ? 0.0 : srow[sx];
      }
    }
  }
}

// Transposed patch matrix: colT[position][patch element].
void im2col_transposed(const ConvGeometry& g, const double* in, double* col_t) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const std::size_t patch = g.patch_size();
#pragma omp parallel for schedule(static)
  for (std::size_t pos = 0; pos < oh * ow; ++pos) {
    const std::size_t y = pos / ow, x = pos % ow;
    double* dst = col_t + pos * patch;
    std::size_t idx = 0;
    for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
      const double* plane = in + ci * g.height * g.width;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        const long sy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.padding);
        const bool row_ok = sy >= 0 && sy < static_cast<long>(g.height);
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++idx) {
          const long sx = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.padding);
          dst[idx] = (row_ok && sx >= 0 && sx < static_cast<long>(g.width))
                         ? plane[static_cast<std::size_t>(sy) * g.width + sx]
                         : 0.0;
        }
      }
    }
  }
}

// grad_in += col2im(dcol); each thread owns whole input planes.
void col2im_accumulate(const ConvGeometry& g, const double* col, double* grad_in) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
#pragma omp parallel for schedule(static)
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    double* plane = grad_in + ci * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const std::size_t row = (ci * g.kernel_h + ky) * g.kernel_w + kx;
        const double* src = col + row * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long sy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.padding);
          if (sy < 0 || sy >= static_cast<long>(g.height)) continue;
          double* drow = plane + static_cast<std::size_t>(sy) * g.width;
          const double* srow = src + y * ow;
          for (std::size_t x = 0; x < ow; ++x) {
            const long sx = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.padding);
            if (sx >= 0 && sx < static_cast<long>(g.width)) drow[sx] += srow[x];
          }
        }
      }
  }
}

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     const double* b, double* c) {
  if (m == 0 || n == 0 || k == 0) return;
  const std::size_t row_panels = (m + kMr - 1) / kMr;
  const std::size_t col_panels = (n + kNr - 1) / kNr;
  std::vector<double> a_pack(row_panels * kMr * std::min(k, kKc));
  // Column panels are split across threads; every C element is owned by one
  // thread and accumulated in ascending depth order.
  for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
    const std::size_t p1 = std::min(k, p0 + kKc);
    const std::size_t depth = p1 - p0;
    pack_a(m, k, p0, p1, a, a_pack.data());
#pragma omp parallel
    {
      std::vector<double> b_pack(depth * kNr);
#pragma omp for schedule(static)
      for (std::size_t jb = 0; jb < col_panels; ++jb) {
        const std::size_t j0 = jb * kNr;
        const std::size_t cols = std::min(kNr, n - j0);
        pack_b(n, j0, cols, p0, p1, b, b_pack.data());
        for (std::size_t ib = 0; ib < row_panels; ++ib) {
          const std::size_t i0 = ib * kMr;
          micro_kernel(depth, a_pack.data() + ib * depth * kMr, b_pack.data(), c + i0 * n + j0, n,
                       std::min(kMr, m - i0), cols);
        }
      }
    }
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> in,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const std::size_t positions = g.out_height() * g.out_width();
  const std::size_t patch = g.patch_size();
  const bool pointwise = is_pointwise(g);
  std::vector<double> col(pointwise ? 0 : patch * positions);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* src = in.data() + n * g.in_channels * g.height * g.width;
    double* dst = out.data() + n * g.out_channels * positions;
    for (std::size_t co = 0; co < g.out_channels; ++co)
      std::fill(dst + co * positions, dst + (co + 1) * positions, bias.empty() ? 0.0 : bias[co]);
    if (!pointwise) im2col(g, src, col.data());
    gemm_accumulate(g.out_channels, positions, patch, weight.data(),
                    pointwise ? src : col.data(), dst);
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> grad_out,
                           std::span<const double> weight, std::span<double> grad_in) {
  const std::size_t positions = g.out_height() * g.out_width();
  const std::size_t patch = g.patch_size();
  std::vector<double> weight_t(patch * g.out_channels);
  for (std::size_t co = 0; co < g.out_channels; ++co)
    for (std::size_t p = 0; p < patch; ++p) weight_t[p * g.out_channels + co] = weight[co * patch + p];

  const bool pointwise = is_pointwise(g);
  std::vector<double> dcol(pointwise ? 0 : patch * positions);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* go = grad_out.data() + n * g.out_channels * positions;
    double* gi = grad_in.data() + n * g.in_channels * g.height * g.width;
    if (pointwise) {
      gemm_accumulate(patch, positions, g.out_channels, weight_t.data(), go, gi);
      continue;
    }
    std::fill(dcol.begin(), dcol.end(), 0.0);
    gemm_accumulate(patch, positions, g.out_channels, weight_t.data(), go, dcol.data());
    col2im_accumulate(g, dcol.data(), gi);
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> grad_out, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const std::size_t positions = g.out_height() * g.out_width();
  const std::size_t patch = g.patch_size();
  if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      double acc = 0.0;
      for (std::size_t n = 0; n < g.batch; ++n) {
        const double* go = grad_out.data() + (n * g.out_channels + co) * positions;
        for (std::size_t p = 0; p < positions; ++p) acc += go[p];
      }
      grad_bias[co] += acc;
    }
  }
  if (grad_weight.empty()) return;
  std::vector<double> col_t(patch * positions);
  for (std::size_t n = 0; n < g.batch; ++n) {
    im2col_transposed(g, in.data() + n * g.in_channels * g.height * g.width, col_t.data());
    gemm_accumulate(g.out_channels, patch, positions,
                    grad_out.data() + n * g.out_channels * positions, col_t.data(),
                    grad_weight.data());
  }
}

}  // namespace mtnet::kernels
