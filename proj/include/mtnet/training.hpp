#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtnet/data.hpp"
#include "mtnet/losses.hpp"
#include "mtnet/metrics.hpp"
#include "mtnet/model.hpp"

namespace mtnet {

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double lambda = 0.7;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  std::optional<double> focal_gamma;                // default 2
  std::optional<std::vector<double>> focal_alpha;   // default: inverse train frequency
  std::filesystem::path checkpoint_dir;             // empty: no checkpoints
  bool decoupled_weight_decay = true;
  DiceMode dice_mode = DiceMode::Batch;
  double dice_eps = 1e-6;
  double threshold = 0.5;
  bool shuffle = true;

  void validate() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// One Adam update over `params`, then clears their grads. With decoupled
/// decay, p <- p - lr*wd*p precedes the adaptive step; otherwise wd*p is
/// added to the gradient. Missing grads count as zero. Throws
/// DivergenceError naming the first parameter with a non-finite gradient.
void adam_step(const NamedParams& params, AdamState& state, double lr, double weight_decay,
               bool decoupled = true);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double seg_loss = 0.0;
  double cls_loss = 0.0;
  double total_loss = 0.0;
  std::optional<MetricsReport> metrics;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  MetricsReport final_report;           // test split, after the last epoch
  std::optional<MetricsReport> best_report;
  std::size_t best_epoch = 0;
};

/// Evaluates with dropout off and no graph recording.
MetricsReport evaluate(const MultiTaskNet& net, const std::vector<Sample>& samples,
                       const std::vector<std::string>& ids, std::size_t batch_size = 8,
                       double threshold = 0.5);

/// Trains `net` in place on split.train, evaluating on split.test every
/// cfg.eval_every epochs and after the last epoch. Writes best.ckpt (by
/// overall score) and last.ckpt when cfg.checkpoint_dir is set.
TrainResult train(MultiTaskNet& net, const std::vector<Sample>& samples, const DatasetSplit& split,
                  const TrainConfig& cfg);

struct GridCell {
  double lambda = 0.0;
  MetricsReport report;
  std::vector<EpochRecord> history;
};

std::vector<double> default_lambda_grid();  // 0.1, 0.2, ..., 0.9

/// One independent run per lambda, each from init_params(net_config, cfg.seed).
/// Runs may execute concurrently (`jobs` > 1) without changing any result.
/// Cells are returned sorted by lambda.
std::vector<GridCell> grid_search_lambda(const NetConfig& net_config,
                                         const std::vector<Sample>& samples,
                                         const DatasetSplit& split, const TrainConfig& cfg,
                                         const std::vector<double>& lambdas, int jobs = 1);

/// Index of the cell with the highest overall score (first on ties).
std::size_t best_cell(const std::vector<GridCell>& cells);

std::string history_csv(const std::vector<EpochRecord>& history);
std::string grid_csv(const std::vector<GridCell>& cells);

}  // namespace mtnet
