#include "mtnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>

#include "mtnet/error.hpp"

namespace mtnet {

void TrainConfig::validate() const {
  std::vector<std::string> v;
  if (batch_size < 1) v.emplace_back("batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) v.emplace_back("lr must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) v.emplace_back("weight_decay must be >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) v.emplace_back("lambda must lie in [0, 1]");
  if (eval_every < 1) v.emplace_back("eval_every must be >= 1");
  if (!(dice_eps > 0.0)) v.emplace_back("dice_eps must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) v.emplace_back("threshold must lie in (0, 1)");
  if (focal_gamma && (!(*focal_gamma >= 0.0) || !std::isfinite(*focal_gamma))) {
    v.emplace_back("focal gamma must be finite and >= 0");
  }
  if (focal_alpha) {
    for (double a : *focal_alpha)
      if (!(a > 0.0) || !std::isfinite(a)) v.emplace_back("focal alpha entries must be positive");
  }
  if (v.empty()) return;
  std::ostringstream os;
  os << "invalid training config:";
  for (const auto& s : v) os << "\n  - " << s;
  throw ConfigError(os.str());
}

void adam_step(const NamedParams& params, AdamState& state, double lr, double weight_decay,
               bool decoupled) {
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in parameter " + name);
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& [name, p] : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    auto data = p.data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != data.size()) {
      throw DimensionError("adam state does not match parameter " + params[i].first);
    }
    const bool has = p.has_grad();
    auto grad = p.grad();
    for (std::size_t j = 0; j < data.size(); ++j) {
      double g = has ? grad[j] : 0.0;
      if (decoupled) {
        data[j] -= lr * weight_decay * data[j];
      } else {
        g += weight_decay * data[j];
      }
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      data[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    p.zero_grad();
  }
}

MetricsReport evaluate(const MultiTaskNet& net, const std::vector<Sample>& samples,
                       const std::vector<std::string>& ids, std::size_t batch_size,
                       double threshold) {
  NoGradGuard no_grad;
  const auto& cfg = net.config();
  ConfusionMatrix cm(cfg.num_classes);
  PixelCounts pixels;
  Rng unused(0);
  BatchIter it(samples, ids, batch_size, false, 0, 0, cfg.in_channels);
  while (auto batch = it.next()) {
    const NetOutput out = net.forward(batch->images, false, unused);
    const std::size_t k = cfg.num_classes;
    auto logits = out.cls_logits.data();
    for (std::size_t i = 0; i < batch->labels.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (logits[i * k + j] > logits[i * k + best]) best = j;
      cm.add(batch->labels[i], static_cast<int>(best));
    }
    auto z = out.seg_logits.data();
    std::vector<double> pred(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) pred[i] = 1.0 / (1.0 + std::exp(-z[i])) >= threshold ? 1.0 : 0.0;
    const PixelCounts c = count_pixels(Tensor(out.seg_logits.shape(), std::move(pred)), batch->masks);
    pixels.tp += c.tp;
    pixels.fp += c.fp;
    pixels.fn += c.fn;
  }
  MetricsReport r;
  r.n_samples = static_cast<std::size_t>(cm.total());
  if (r.n_samples == 0) throw EvaluationError("evaluate: no samples");
  const auto cls = classify_metrics(cm);
  const auto seg = seg_metrics(pixels);
  r.accuracy = cls.accuracy;
  r.cls_f1_macro = cls.f1_macro;
  r.seg_iou = seg.iou;
  r.seg_dice = seg.dice;
  r.seg_f1 = seg.f1;
  r.overall = overall(r.cls_f1_macro, r.seg_f1);
  return r;
}

namespace {

bool finite(double v) { return std::isfinite(v); }

}  // namespace

TrainResult train(MultiTaskNet& net, const std::vector<Sample>& samples, const DatasetSplit& split,
                  const TrainConfig& cfg) {
  cfg.validate();
  const auto& net_cfg = net.config();
  if (!samples.empty() && samples.front().image.dim(1) != net_cfg.input_size) {
    throw ConfigError("dataset images are " + std::to_string(samples.front().image.dim(1)) +
                      " px but the network expects input_size " + std::to_string(net_cfg.input_size));
  }

  FocalParams focal;
  focal.gamma = cfg.focal_gamma.value_or(2.0);
  if (cfg.focal_alpha) {
    focal.alpha = *cfg.focal_alpha;
  } else {
    std::vector<int> train_labels;
    BatchIter all(samples, split.train, split.train.size() ? split.train.size() : 1, false, 0, 0);
    for (const Sample* s : all.order()) train_labels.push_back(s->label);
    focal.alpha = inverse_frequency_alpha(train_labels, net_cfg.num_classes);
  }
  focal.validate(net_cfg.num_classes);
  const LossWeights weights{cfg.lambda, cfg.dice_eps};

  const NamedParams params = net.param_groups();
  AdamState adam;
  Rng dropout_rng(derive_seed(cfg.seed, 0xd409));
  TrainResult result;

  const bool checkpoints = !cfg.checkpoint_dir.empty();
  if (checkpoints) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.checkpoint_dir, ec);
    if (ec) throw IoError("cannot create checkpoint dir " + cfg.checkpoint_dir.string() + ": " + ec.message());
  }

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    BatchIter it(samples, split.train, cfg.batch_size, cfg.shuffle, cfg.seed, epoch, net_cfg.in_channels);
    double seg_sum = 0.0, cls_sum = 0.0, total_sum = 0.0;
    std::size_t batches = 0;
    while (auto batch = it.next()) {
      const NetOutput out = net.forward(batch->images, true, dropout_rng);
      const Tensor seg = dice_loss(out.seg_logits, batch->masks, cfg.dice_eps, cfg.dice_mode);
      const Tensor cls = focal_loss(out.cls_logits, batch->labels, focal);
      const Tensor total = total_loss(seg, cls, weights);
      if (!finite(total.item())) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches + 1));
      }
      backward(total);
      try {
        adam_step(params, adam, cfg.lr, cfg.weight_decay, cfg.decoupled_weight_decay);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batches + 1));
      }
      seg_sum += seg.item();
      cls_sum += cls.item();
      total_sum += total.item();
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    if (batches) {
      rec.seg_loss = seg_sum / static_cast<double>(batches);
      rec.cls_loss = cls_sum / static_cast<double>(batches);
      rec.total_loss = total_sum / static_cast<double>(batches);
    }
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      rec.metrics = evaluate(net, samples, split.test, cfg.batch_size, cfg.threshold);
      if (!result.best_report || rec.metrics->overall > result.best_report->overall) {
        result.best_report = rec.metrics;
        result.best_epoch = epoch;
        if (checkpoints) save_checkpoint(net, cfg.checkpoint_dir / "best.ckpt");
      }
    }
    result.history.push_back(rec);
  }
  result.final_report = result.history.empty() || !result.history.back().metrics
                            ? evaluate(net, samples, split.test, cfg.batch_size, cfg.threshold)
                            : *result.history.back().metrics;
  if (checkpoints) save_checkpoint(net, cfg.checkpoint_dir / "last.ckpt");
  return result;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 9; ++i) grid.push_back(i / 10.0);
  return grid;
}

std::vector<GridCell> grid_search_lambda(const NetConfig& net_config,
                                         const std::vector<Sample>& samples,
                                         const DatasetSplit& split, const TrainConfig& cfg,
                                         const std::vector<double>& lambdas, int jobs) {
  if (lambdas.empty()) throw ParameterError("grid_search_lambda: empty lambda list");
  for (double l : lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw ParameterError("grid_search_lambda: lambda " + std::to_string(l) + " outside [0, 1]");
  }
  std::vector<double> sorted = lambdas;
  std::sort(sorted.begin(), sorted.end());
  std::vector<GridCell> cells(sorted.size());
  std::vector<std::exception_ptr> errors(sorted.size());

#pragma omp parallel for schedule(dynamic) num_threads(jobs > 0 ? jobs : 1)
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    try {
      TrainConfig run = cfg;
      run.lambda = sorted[i];
      if (!cfg.checkpoint_dir.empty()) {
        char dir[32];
        std::snprintf(dir, sizeof(dir), "lambda_%.2f", sorted[i]);
        run.checkpoint_dir = cfg.checkpoint_dir / dir;
      }
      MultiTaskNet net = init_params(net_config, cfg.seed);
      TrainResult r = train(net, samples, split, run);
      cells[i] = GridCell{sorted[i], r.final_report, std::move(r.history)};
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return cells;
}

std::size_t best_cell(const std::vector<GridCell>& cells) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells.size(); ++i)
    if (cells[i].report.overall > cells[best].report.overall) best = i;
  return best;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,seg_loss,cls_loss,total_loss,accuracy,cls_f1,iou,dice,seg_f1,overall\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << format_double(r.seg_loss) << ',' << format_double(r.cls_loss) << ','
       << format_double(r.total_loss);
    if (r.metrics) {
      const auto& m = *r.metrics;
      os << ',' << format_double(m.accuracy) << ',' << format_double(m.cls_f1_macro) << ','
         << format_double(m.seg_iou) << ',' << format_double(m.seg_dice) << ','
         << format_double(m.seg_f1) << ',' << format_double(m.overall);
    } else {
      os << ",,,,,,";
    }
    os << '\n';
  }
  return os.str();
}

std::string grid_csv(const std::vector<GridCell>& cells) {
  std::ostringstream os;
  os << "lambda,accuracy,cls_f1,iou,dice,seg_f1,overall,n_samples\n";
  for (const auto& c : cells) {
    const auto& m = c.report;
    os << format_double(c.lambda) << ',' << format_double(m.accuracy) << ','
       << format_double(m.cls_f1_macro) << ',' << format_double(m.seg_iou) << ','
       << format_double(m.seg_dice) << ',' << format_double(m.seg_f1) << ','
       << format_double(m.overall) << ',' << m.n_samples << '\n';
  }
  return os.str();
}

}  // namespace mtnet
