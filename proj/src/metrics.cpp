#include "mtnet/metrics.hpp"

#include <cstdio>
#include <string>

#include "mtnet/error.hpp"

namespace mtnet {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : counts_(num_classes, std::vector<std::uint64_t>(num_classes, 0)) {}

ConfusionMatrix::ConfusionMatrix(std::vector<std::vector<std::uint64_t>> counts)
    : counts_(std::move(counts)) {
  for (const auto& row : counts_) {
    if (row.size() != counts_.size()) throw DimensionError("confusion matrix must be square");
  }
}

void ConfusionMatrix::add(int truth, int predicted) {
  const auto k = static_cast<int>(counts_.size());
  if (truth < 0 || truth >= k || predicted < 0 || predicted >= k) {
    throw DataError("confusion matrix entry (" + std::to_string(truth) + "," +
                    std::to_string(predicted) + ") out of range");
  }
  ++counts_[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts_)
    for (auto v : row) t += v;
  return t;
}

ConfusionMatrix ConfusionMatrix::transposed() const {
  ConfusionMatrix t(counts_.size());
  for (std::size_t i = 0; i < counts_.size(); ++i)
    for (std::size_t j = 0; j < counts_.size(); ++j) t.counts_[j][i] = counts_[i][j];
  return t;
}

ClassificationScores classify_metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw EvaluationError("classify_metrics: confusion matrix is empty");
  const std::size_t k = cm.num_classes();
  std::uint64_t trace = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    trace += cm.at(c, c);
    std::uint64_t predicted = 0, actual = 0;
    for (std::size_t j = 0; j < k; ++j) {
      predicted += cm.at(j, c);
      actual += cm.at(c, j);
    }
    const double tp = static_cast<double>(cm.at(c, c));
    const double precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double recall = actual ? tp / static_cast<double>(actual) : 0.0;
    if (precision + recall > 0.0) f1_sum += 2.0 * precision * recall / (precision + recall);
  }
  return {static_cast<double>(trace) / static_cast<double>(total),
          f1_sum / static_cast<double>(k)};
}

PixelCounts count_pixels(const Tensor& pred_masks, const Tensor& gt_masks) {
  if (pred_masks.shape() != gt_masks.shape()) {
    throw DimensionError("seg_metrics: prediction " + shape_str(pred_masks.shape()) +
                         " and ground truth " + shape_str(gt_masks.shape()) + " differ");
  }
  auto p = pred_masks.data(), g = gt_masks.data();
  std::uint64_t tp = 0, fp = 0, fn = 0;
#pragma omp parallel for reduction(+ : tp, fp, fn) schedule(static)
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pv = p[i] != 0.0, gv = g[i] != 0.0;
    tp += pv && gv;
    fp += pv && !gv;
    fn += !pv && gv;
  }
  return {tp, fp, fn};
}

SegmentationScores seg_metrics(const PixelCounts& c) {
  const std::uint64_t uni = c.tp + c.fp + c.fn;
  if (uni == 0) return {1.0, 1.0, 1.0};
  const double tp = static_cast<double>(c.tp);
  const double iou = tp / static_cast<double>(uni);
  const double dice = 2.0 * tp / (2.0 * tp + static_cast<double>(c.fp + c.fn));
  return {iou, dice, dice};
}

SegmentationScores seg_metrics(const Tensor& pred_masks, const Tensor& gt_masks) {
  return seg_metrics(count_pixels(pred_masks, gt_masks));
}

double overall(double cls_f1, double seg_f1) { return 0.5 * (cls_f1 + seg_f1); }

Tensor binarize(const Tensor& probs, double threshold) {
  std::vector<double> out(probs.numel());
  auto p = probs.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p[i] >= threshold ? 1.0 : 0.0;
  return Tensor(probs.shape(), std::move(out));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string metrics_csv_header() {
  return "accuracy,cls_f1,iou,dice,seg_f1,overall,n_samples,lambda,seed,epoch";
}

std::string metrics_csv_row(const MetricsReport& r, double lambda, std::uint64_t seed, int epoch) {
  return format_double(r.accuracy) + "," + format_double(r.cls_f1_macro) + "," +
         format_double(r.seg_iou) + "," + format_double(r.seg_dice) + "," +
         format_double(r.seg_f1) + "," + format_double(r.overall) + "," +
         std::to_string(r.n_samples) + "," + format_double(lambda) + "," + std::to_string(seed) +
         "," + std::to_string(epoch);
}

}  // namespace mtnet
