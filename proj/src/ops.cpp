#include "mtnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mtnet/error.hpp"
#include "mtnet/kernels.hpp"

namespace mtnet {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
  }
}

// Adds `grad` into the parent's gradient; skips parents that do not need it.
template <typename Fn>
void with_grad(const Tensor& parent, Fn&& fn) {
  if (parent.requires_grad()) fn(parent.mutable_grad());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::from_op(a.shape(), std::move(out), OpKind::Add, {a, b},
                         [a, b](std::span<const double> go) mutable {
                           accumulate_grad(a, go);
                           accumulate_grad(b, go);
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::from_op(a.shape(), std::move(out), OpKind::Sub, {a, b},
                         [a, b](std::span<const double> go) mutable {
                           accumulate_grad(a, go);
                           with_grad(b, [&](std::span<double> g) {
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go[i];
                           });
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::from_op(a.shape(), std::move(out), OpKind::Mul, {a, b},
                         [a, b](std::span<const double> go) mutable {
                           auto x = a.data(), y = b.data();
                           with_grad(a, [&](std::span<double> g) {
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * y[i];
                           });
                           with_grad(b, [&](std::span<double> g) {
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * x[i];
                           });
                         });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return Tensor::from_op(a.shape(), std::move(out), OpKind::Scale, {a},
                         [a, factor](std::span<const double> go) mutable {
                           with_grad(a, [&](std::span<double> g) {
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * factor;
                           });
                         });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return Tensor::from_op({1}, {acc}, OpKind::Sum, {a}, [a](std::span<const double> go) mutable {
    with_grad(a, [&](std::span<double> g) {
      for (auto& v : g) v += go[0];
    });
  });
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  return Tensor::from_op({1}, {acc * inv}, OpKind::Mean, {a},
                         [a, inv](std::span<const double> go) mutable {
                           with_grad(a, [&](std::span<double> g) {
                             for (auto& v : g) v += go[0] * inv;
                           });
                         });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (input.dim(1) != weight.dim(1)) {
    throw DimensionError("conv2d: input channels of " + shape_str(input.shape()) +
                         " do not match weight " + shape_str(weight.shape()));
  }
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  kernels::ConvGeometry g;
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel_h = weight.dim(2);
  g.kernel_w = weight.dim(3);
  g.stride = stride;
  g.padding = padding;
  if (g.kernel_h > g.height + 2 * padding || g.kernel_w > g.width + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
  }
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.out_channels)) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  std::vector<double> out(g.batch * g.out_channels * g.out_height() * g.out_width());
  kernels::conv2d_forward(g, input.data(), weight.data(),
                          bias.defined() ? bias.data() : std::span<const double>{}, out);

  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::from_op(
      {g.batch, g.out_channels, g.out_height(), g.out_width()}, std::move(out), OpKind::Conv2d,
      std::move(parents), [input, weight, bias, g](std::span<const double> go) mutable {
        with_grad(input, [&](std::span<double> gi) {
          kernels::conv2d_backward_input(g, go, weight.data(), gi);
        });
        const bool need_w = weight.requires_grad();
        const bool need_b = bias.defined() && bias.requires_grad();
        if (need_w || need_b) {
          kernels::conv2d_backward_params(g, input.data(), go,
                                          need_w ? weight.mutable_grad() : std::span<double>{},
                                          need_b ? bias.mutable_grad() : std::span<double>{});
        }
      });
}

Tensor maxpool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
  require_rank(input, 4, "maxpool2d");
  if (kernel != stride || kernel < 1) {
    throw ParameterError("maxpool2d: only kernel == stride is supported (got kernel " +
                         std::to_string(kernel) + ", stride " + std::to_string(stride) + ")");
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % stride != 0 || w % stride != 0) {
    throw DimensionError("maxpool2d: spatial size of " + shape_str(input.shape()) +
                         " not divisible by stride " + std::to_string(stride));
  }
  const std::size_t oh = h / stride, ow = w / stride;
  std::vector<double> out(n * c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  auto x = input.data();
#pragma omp parallel for schedule(static)
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t in_base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = in_base + (y * stride) * w + xo * stride;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t idx = in_base + (y * stride + ky) * w + xo * stride + kx;
            if (x[idx] > x[best]) best = idx;  // strict: first occurrence wins ties
          }
        const std::size_t o = (plane * oh + y) * ow + xo;
        out[o] = x[best];
        argmax[o] = best;
      }
  }
  return Tensor::from_op({n, c, oh, ow}, std::move(out), OpKind::MaxPool2d, {input},
                         [input, argmax = std::move(argmax)](std::span<const double> go) mutable {
                           with_grad(input, [&](std::span<double> g) {
                             for (std::size_t o = 0; o < go.size(); ++o) g[argmax[o]] += go[o];
                           });
                         });
}

Tensor upsample_nearest2d(const Tensor& input, int factor) {
  if (factor < 1) throw ParameterError("upsample_nearest2d: factor must be >= 1");
  require_rank(input, 4, "upsample_nearest2d");
  const std::size_t f = static_cast<std::size_t>(factor);
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h * f, ow = w * f;
  std::vector<double> out(n * c * oh * ow);
  auto x = input.data();
#pragma omp parallel for schedule(static)
  for (std::size_t plane = 0; plane < n * c; ++plane)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo)
        out[(plane * oh + y) * ow + xo] = x[(plane * h + y / f) * w + xo / f];
  return Tensor::from_op(
      {n, c, oh, ow}, std::move(out), OpKind::Upsample2d, {input},
      [input, f, n, c, h, w](std::span<const double> go) mutable {
        with_grad(input, [&](std::span<double> g) {
          const std::size_t oh = h * f, ow = w * f;
#pragma omp parallel for schedule(static)
          for (std::size_t plane = 0; plane < n * c; ++plane)
            for (std::size_t y = 0; y < h; ++y)
              for (std::size_t xi = 0; xi < w; ++xi) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < f; ++dy)
                  for (std::size_t dx = 0; dx < f; ++dx)
                    acc += go[(plane * oh + y * f + dy) * ow + xi * f + dx];
                g[(plane * h + y) * w + xi] += acc;
              }
        });
      });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  if (input.dim(1) != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_str(input.shape()) +
                         " incompatible with weight " + shape_str(weight.shape()));
  }
  const std::size_t n = input.dim(0), f = input.dim(1), k = weight.dim(1);
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != k)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  std::vector<double> out(n * k, 0.0);
  if (bias.defined()) {
    for (std::size_t i = 0; i < n; ++i) std::copy(bias.data().begin(), bias.data().end(), out.begin() + i * k);
  }
  kernels::gemm_accumulate(n, k, f, input.data().data(), weight.data().data(), out.data());

  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return Tensor::from_op(
      {n, k}, std::move(out), OpKind::Linear, std::move(parents),
      [input, weight, bias, n, f, k](std::span<const double> go) mutable {
        auto x = input.data();
        auto w = weight.data();
        with_grad(input, [&](std::span<double> g) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t a = 0; a < f; ++a) {
              double acc = 0.0;
              for (std::size_t b = 0; b < k; ++b) acc += go[i * k + b] * w[a * k + b];
              g[i * f + a] += acc;
            }
        });
        with_grad(weight, [&](std::span<double> g) {
          for (std::size_t a = 0; a < f; ++a)
            for (std::size_t b = 0; b < k; ++b) {
              double acc = 0.0;
              for (std::size_t i = 0; i < n; ++i) acc += x[i * f + a] * go[i * k + b];
              g[a * k + b] += acc;
            }
        });
        if (bias.defined()) {
          with_grad(bias, [&](std::span<double> g) {
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t b = 0; b < k; ++b) g[b] += go[i * k + b];
          });
        }
      });
}

Tensor relu(const Tensor& input) {
  std::vector<double> out(input.numel());
  auto x = input.data();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return Tensor::from_op(input.shape(), std::move(out), OpKind::Relu, {input},
                         [input](std::span<const double> go) mutable {
                           auto x = input.data();
                           with_grad(input, [&](std::span<double> g) {
#pragma omp parallel for schedule(static)
                             for (std::size_t i = 0; i < g.size(); ++i)
                               if (x[i] > 0.0) g[i] += go[i];
                           });
                         });
}

Tensor sigmoid(const Tensor& input) {
  std::vector<double> out(input.numel());
  auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  std::vector<double> saved = out;
  return Tensor::from_op(input.shape(), std::move(out), OpKind::Sigmoid, {input},
                         [input, s = std::move(saved)](std::span<const double> go) mutable {
                           with_grad(input, [&](std::span<double> g) {
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += go[i] * s[i] * (1.0 - s[i]);
                           });
                         });
}

Tensor softmax(const Tensor& input, std::size_t axis) {
  const auto& shape = input.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  std::vector<double> out(input.numel());
  auto x = input.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  std::vector<double> saved = out;
  return Tensor::from_op(
      shape, std::move(out), OpKind::Softmax, {input},
      [input, s = std::move(saved), outer, inner, len](std::span<const double> go) mutable {
        with_grad(input, [&](std::span<double> g) {
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
              const std::size_t base = o * len * inner + in;
              double dot = 0.0;
              for (std::size_t j = 0; j < len; ++j) dot += go[base + j * inner] * s[base + j * inner];
              for (std::size_t j = 0; j < len; ++j) {
                const std::size_t idx = base + j * inner;
                g[idx] += s[idx] * (go[idx] - dot);
              }
            }
        });
      });
}

Tensor group_norm(const Tensor& input, std::size_t groups, const Tensor& gamma,
                  const Tensor& beta, double eps) {
  if (input.ndim() < 2) {
    throw DimensionError("group_norm: expected [N,C,...] input, got " + shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1);
  if (groups == 0 || c % groups != 0) {
    throw ParameterError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                         std::to_string(groups) + " groups");
  }
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("group_norm: affine parameters " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " do not match " + std::to_string(c) +
                         " channels");
  }
  const std::size_t spatial = input.numel() / (n * c);
  const std::size_t per_group = c / groups;
  const std::size_t group_size = per_group * spatial;
  auto x = input.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  std::vector<double> out(input.numel());
  std::vector<double> xhat(input.numel());
  std::vector<double> inv_std(n * groups);
#pragma omp parallel for schedule(static)
  for (std::size_t ng = 0; ng < n * groups; ++ng) {
    const std::size_t base = ng * group_size;  // groups are contiguous in NCHW
    double mu = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) mu += x[base + i];
    mu /= static_cast<double>(group_size);
    double var = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) {
      const double d = x[base + i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(group_size);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[ng] = is;
    const std::size_t g = ng % groups;
    for (std::size_t cc = 0; cc < per_group; ++cc) {
      const std::size_t ch = g * per_group + cc;
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t idx = base + cc * spatial + s;
        const double xh = (x[idx] - mu) * is;
        xhat[idx] = xh;
        out[idx] = gm[ch] * xh + bt[ch];
      }
    }
  }
  return Tensor::from_op(
      input.shape(), std::move(out), OpKind::GroupNorm, {input, gamma, beta},
      [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, groups,
       spatial, per_group, group_size](std::span<const double> go) mutable {
        auto gm = gamma.data();
        with_grad(gamma, [&](std::span<double> gg) {
#pragma omp parallel for schedule(static)
          for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t idx = (i * c + ch) * spatial + s;
                acc += go[idx] * xhat[idx];
              }
            gg[ch] += acc;
          }
        });
        with_grad(beta, [&](std::span<double> gb) {
#pragma omp parallel for schedule(static)
          for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t s = 0; s < spatial; ++s) acc += go[(i * c + ch) * spatial + s];
            gb[ch] += acc;
          }
        });
        with_grad(input, [&](std::span<double> gi) {
          const double m = static_cast<double>(group_size);
#pragma omp parallel for schedule(static)
          for (std::size_t ng = 0; ng < n * groups; ++ng) {
            const std::size_t base = ng * group_size;
            const std::size_t g = ng % groups;
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t cc = 0; cc < per_group; ++cc) {
              const double w = gm[g * per_group + cc];
              for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t idx = base + cc * spatial + s;
                const double d = go[idx] * w;
                sum_d += d;
                sum_dx += d * xhat[idx];
              }
            }
            const double mean_d = sum_d / m, mean_dx = sum_dx / m;
            for (std::size_t cc = 0; cc < per_group; ++cc) {
              const double w = gm[g * per_group + cc];
              for (std::size_t s = 0; s < spatial; ++s) {
                const std::size_t idx = base + cc * spatial + s;
                gi[idx] += inv_std[ng] * (go[idx] * w - mean_d - xhat[idx] * mean_dx);
              }
            }
          }
        });
      });
}

Tensor dropout(const Tensor& input, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return input;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(input.numel());
  for (auto& m : mask) m = uniform(rng) < p ? 0.0 : keep_scale;
  std::vector<double> out(input.numel());
  auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return Tensor::from_op(input.shape(), std::move(out), OpKind::Dropout, {input},
                         [input, mask = std::move(mask)](std::span<const double> go) mutable {
                           with_grad(input, [&](std::span<double> g) {
                             for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * mask[i];
                           });
                         });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DimensionError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t spatial = a.dim(2) * a.dim(3);
  const std::size_t c = ca + cb;
  std::vector<double> out(n * c * spatial);
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(x.begin() + i * ca * spatial, ca * spatial, out.begin() + i * c * spatial);
    std::copy_n(y.begin() + i * cb * spatial, cb * spatial, out.begin() + (i * c + ca) * spatial);
  }
  return Tensor::from_op(
      {n, c, a.dim(2), a.dim(3)}, std::move(out), OpKind::Concat, {a, b},
      [a, b, n, ca, cb, c, spatial](std::span<const double> go) mutable {
        with_grad(a, [&](std::span<double> g) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < ca * spatial; ++j) g[i * ca * spatial + j] += go[i * c * spatial + j];
        });
        with_grad(b, [&](std::span<double> g) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < cb * spatial; ++j)
              g[i * cb * spatial + j] += go[(i * c + ca) * spatial + j];
        });
      });
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global_avg_pool");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t spatial = input.dim(2) * input.dim(3);
  const double inv = 1.0 / static_cast<double>(spatial);
  std::vector<double> out(n * c);
  auto x = input.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double acc = 0.0;
    for (std::size_t s = 0; s < spatial; ++s) acc += x[plane * spatial + s];
    out[plane] = acc * inv;
  }
  return Tensor::from_op({n, c}, std::move(out), OpKind::GlobalAvgPool, {input},
                         [input, spatial, inv](std::span<const double> go) mutable {
                           with_grad(input, [&](std::span<double> g) {
                             for (std::size_t plane = 0; plane < go.size(); ++plane)
                               for (std::size_t s = 0; s < spatial; ++s)
                                 g[plane * spatial + s] += go[plane] * inv;
                           });
                         });
}

}  // namespace mtnet
