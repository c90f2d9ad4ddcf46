#pragma once

// Randomized instances of every differentiable op and loss, shared by the
// unit tests and the acceptance runner.

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "mtnet/losses.hpp"
#include "mtnet/ops.hpp"

namespace mtnet::testing {

struct GradInstance {
  OpFn op;
  std::vector<Tensor> inputs;
};

struct GradCase {
  std::string name;
  std::function<GradInstance(std::mt19937_64&)> make;
};

namespace detail {

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Values away from zero so a +-h probe never crosses the relu kink.
inline Tensor away_from_zero(const Shape& s, std::mt19937_64& rng) {
  Tensor t = random_tensor(s, rng);
  for (auto& v : t.data()) v = v < 0 ? v - 0.05 : v + 0.05;
  return t;
}

// Distinct values spaced 0.05 apart: no pooling ties, no argmax flips.
inline Tensor tie_free(const Shape& s, std::mt19937_64& rng) {
  std::vector<double> v(shape_numel(s));
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (auto& x : v) x = 0.05 * x - 1.0;
  return Tensor(s, std::move(v), true);
}

inline Tensor binary_mask(const Shape& s, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.4);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = b(rng) ? 1.0 : 0.0;
  return Tensor(s, std::move(v));
}

inline std::vector<int> labels(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<int> out(n);
  for (auto& l : out) l = static_cast<int>(pick(rng, 0, k - 1));
  return out;
}

}  // namespace detail

inline std::vector<GradCase> grad_cases() {
  using detail::pick;
  std::vector<GradCase> cases;

  cases.push_back({"add", [](std::mt19937_64& rng) {
                     const Shape s{pick(rng, 1, 3), pick(rng, 1, 4)};
                     return GradInstance{[](const std::vector<Tensor>& x) { return add(x[0], x[1]); },
                                         {random_tensor(s, rng), random_tensor(s, rng)}};
                   }});
  cases.push_back({"sub", [](std::mt19937_64& rng) {
                     const Shape s{pick(rng, 1, 3), pick(rng, 1, 4)};
                     return GradInstance{[](const std::vector<Tensor>& x) { return sub(x[0], x[1]); },
                                         {random_tensor(s, rng), random_tensor(s, rng)}};
                   }});
  cases.push_back({"mul", [](std::mt19937_64& rng) {
                     const Shape s{pick(rng, 1, 3), pick(rng, 1, 4)};
                     return GradInstance{[](const std::vector<Tensor>& x) { return mul(x[0], x[1]); },
                                         {random_tensor(s, rng), random_tensor(s, rng)}};
                   }});
  cases.push_back({"scale", [](std::mt19937_64& rng) {
                     const double f = std::uniform_real_distribution<double>(-2, 2)(rng);
                     return GradInstance{[f](const std::vector<Tensor>& x) { return scale(x[0], f); },
                                         {random_tensor({pick(rng, 1, 5)}, rng)}};
                   }});
  cases.push_back({"sum", [](std::mt19937_64& rng) {
                     return GradInstance{[](const std::vector<Tensor>& x) { return sum(x[0]); },
                                         {random_tensor({pick(rng, 1, 3), pick(rng, 1, 3)}, rng)}};
                   }});
  cases.push_back({"mean", [](std::mt19937_64& rng) {
                     return GradInstance{[](const std::vector<Tensor>& x) { return mean(x[0]); },
                                         {random_tensor({pick(rng, 1, 3), pick(rng, 1, 3)}, rng)}};
                   }});
  cases.push_back({"conv2d", [](std::mt19937_64& rng) {
                     const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3);
                     const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
                     const std::size_t hw = pick(rng, k + 1, 6);
                     return GradInstance{
                         [stride, pad](const std::vector<Tensor>& x) { return conv2d(x[0], x[1], x[2], stride, pad); },
                         {random_tensor({n, cin, hw, hw}, rng), random_tensor({cout, cin, k, k}, rng),
                          random_tensor({cout}, rng)}};
                   }});
  cases.push_back({"maxpool2d", [](std::mt19937_64& rng) {
                     const std::size_t c = pick(rng, 1, 2), hw = 2 * pick(rng, 1, 3);
                     return GradInstance{[](const std::vector<Tensor>& x) { return maxpool2d(x[0], 2, 2); },
                                         {detail::tie_free({pick(rng, 1, 2), c, hw, hw}, rng)}};
                   }});
  cases.push_back({"upsample_nearest2d", [](std::mt19937_64& rng) {
                     const int f = static_cast<int>(pick(rng, 1, 3));
                     return GradInstance{[f](const std::vector<Tensor>& x) { return upsample_nearest2d(x[0], f); },
                                         {random_tensor({1, pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3)}, rng)}};
                   }});
  cases.push_back({"linear", [](std::mt19937_64& rng) {
                     const std::size_t n = pick(rng, 1, 3), f = pick(rng, 1, 4), k = pick(rng, 1, 4);
                     return GradInstance{[](const std::vector<Tensor>& x) { return linear(x[0], x[1], x[2]); },
                                         {random_tensor({n, f}, rng), random_tensor({f, k}, rng),
                                          random_tensor({k}, rng)}};
                   }});
  cases.push_back({"relu", [](std::mt19937_64& rng) {
                     return GradInstance{[](const std::vector<Tensor>& x) { return relu(x[0]); },
                                         {detail::away_from_zero({pick(rng, 1, 3), pick(rng, 1, 5)}, rng)}};
                   }});
  cases.push_back({"sigmoid", [](std::mt19937_64& rng) {
                     return GradInstance{[](const std::vector<Tensor>& x) { return sigmoid(x[0]); },
                                         {random_tensor({pick(rng, 1, 3), pick(rng, 1, 5)}, rng, -4, 4)}};
                   }});
  cases.push_back({"softmax", [](std::mt19937_64& rng) {
                     const std::size_t axis = pick(rng, 0, 1);
                     return GradInstance{[axis](const std::vector<Tensor>& x) { return softmax(x[0], axis); },
                                         {random_tensor({pick(rng, 1, 3), pick(rng, 2, 4)}, rng, -3, 3)}};
                   }});
  cases.push_back({"group_norm", [](std::mt19937_64& rng) {
                     const std::size_t groups = pick(rng, 1, 2), c = groups * pick(rng, 1, 2);
                     return GradInstance{
                         [groups](const std::vector<Tensor>& x) { return group_norm(x[0], groups, x[1], x[2]); },
                         {random_tensor({pick(rng, 1, 2), c, 2, 2}, rng, -2, 2), random_tensor({c}, rng, 0.5, 1.5),
                          random_tensor({c}, rng)}};
                   }});
  cases.push_back({"dropout", [](std::mt19937_64& rng) {
                     const std::uint64_t mask_seed = rng();
                     return GradInstance{[mask_seed](const std::vector<Tensor>& x) {
                                           Rng r(mask_seed);  // same mask on every evaluation
                                           return dropout(x[0], 0.3, true, r);
                                         },
                                         {random_tensor({pick(rng, 1, 3), pick(rng, 2, 6)}, rng)}};
                   }});
  cases.push_back({"concat_channels", [](std::mt19937_64& rng) {
                     const std::size_t n = pick(rng, 1, 2), hw = pick(rng, 1, 3);
                     return GradInstance{[](const std::vector<Tensor>& x) { return concat_channels(x[0], x[1]); },
                                         {random_tensor({n, pick(rng, 1, 2), hw, hw}, rng),
                                          random_tensor({n, pick(rng, 1, 2), hw, hw}, rng)}};
                   }});
  cases.push_back({"global_avg_pool", [](std::mt19937_64& rng) {
                     return GradInstance{[](const std::vector<Tensor>& x) { return global_avg_pool(x[0]); },
                                         {random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), 2}, rng)}};
                   }});
  cases.push_back({"focal_loss", [](std::mt19937_64& rng) {
                     const std::size_t n = pick(rng, 1, 4), k = pick(rng, 2, 4);
                     FocalParams fp;
                     fp.gamma = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
                     for (std::size_t j = 0; j < k; ++j)
                       fp.alpha.push_back(std::uniform_real_distribution<double>(0.2, 2.0)(rng));
                     const auto y = detail::labels(n, k, rng);
                     return GradInstance{[fp, y](const std::vector<Tensor>& x) { return focal_loss(x[0], y, fp); },
                                         {random_tensor({n, k}, rng, -2, 2)}};
                   }});
  cases.push_back({"dice_loss", [](std::mt19937_64& rng) {
                     const DiceMode mode = pick(rng, 0, 1) ? DiceMode::PerImage : DiceMode::Batch;
                     const Shape s{pick(rng, 1, 3), 1, pick(rng, 2, 4), pick(rng, 2, 4)};
                     const Tensor m = detail::binary_mask(s, rng);
                     return GradInstance{[m, mode](const std::vector<Tensor>& x) { return dice_loss(x[0], m, 1e-6, mode); },
                                         {random_tensor(s, rng, -3, 3)}};
                   }});
  cases.push_back({"total_loss", [](std::mt19937_64& rng) {
                     const double lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
                     return GradInstance{[lambda](const std::vector<Tensor>& x) {
                                           return total_loss(x[0], x[1], LossWeights{lambda, 1e-6});
                                         },
                                         {random_tensor({1}, rng, 0, 2), random_tensor({1}, rng, 0, 2)}};
                   }});
  return cases;
}

}  // namespace mtnet::testing
