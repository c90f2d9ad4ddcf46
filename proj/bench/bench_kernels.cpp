// Reference vs parallel convolution kernels on shapes the network uses.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mtnet/kernels.hpp"

namespace {

namespace k = mtnet::kernels;

struct Buffers {
  k::ConvGeometry g;
  std::vector<double> in, weight, bias, out, grad_in, grad_w, grad_b;
};

Buffers make(std::size_t batch, std::size_t cin, std::size_t cout, std::size_t hw) {
  Buffers b;
  b.g = {batch, cin, hw, hw, cout, 3, 3, 1, 1};
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  auto fill = [&](std::vector<double>& v, std::size_t size) {
    v.resize(size);
    for (auto& x : v) x = n(rng);
  };
  fill(b.in, batch * cin * hw * hw);
  fill(b.weight, cout * cin * 9);
  fill(b.bias, cout);
  b.out.assign(batch * cout * hw * hw, 0.0);
  b.grad_in.assign(b.in.size(), 0.0);
  b.grad_w.assign(b.weight.size(), 0.0);
  b.grad_b.assign(cout, 0.0);
  return b;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  auto b = make(4, state.range(0), state.range(1), state.range(2));
  for (auto _ : state) {
    if constexpr (Parallel) k::conv2d_forward(b.g, b.in, b.weight, b.bias, b.out);
    else k::reference::conv2d_forward(b.g, b.in, b.weight, b.bias, b.out);
    benchmark::DoNotOptimize(b.out.data());
  }
  state.SetItemsProcessed(state.iterations() * b.out.size() * b.g.patch_size());
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  auto b = make(4, state.range(0), state.range(1), state.range(2));
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::conv2d_backward_input(b.g, b.out, b.weight, b.grad_in);
      k::conv2d_backward_params(b.g, b.in, b.out, b.grad_w, b.grad_b);
    } else {
      k::reference::conv2d_backward_input(b.g, b.out, b.weight, b.grad_in);
      k::reference::conv2d_backward_params(b.g, b.in, b.out, b.grad_w, b.grad_b);
    }
    benchmark::DoNotOptimize(b.grad_in.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * b.out.size() * b.g.patch_size());
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const std::size_t n = state.range(0);
  std::vector<double> a(n * n, 1.0), bm(n * n, 0.5), c(n * n, 0.0);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm_accumulate(n, n, n, a.data(), bm.data(), c.data());
    else k::reference::gemm_accumulate(n, n, n, a.data(), bm.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({1, 16, 64})->Args({16, 16, 64})->Args({32, 32, 32})->Args({64, 64, 16});
  b->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Apply(conv_args);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Apply(conv_args);
BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(128)->Arg(256);

BENCHMARK_MAIN();
