#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mtnet/tensor.hpp"

namespace mtnet {

/// counts[true][predicted]
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);
  ConfusionMatrix(std::vector<std::vector<std::uint64_t>> counts);

  void add(int truth, int predicted);
  std::size_t num_classes() const { return counts_.size(); }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth][predicted]; }
  std::uint64_t total() const;
  ConfusionMatrix transposed() const;

 private:
  std::vector<std::vector<std::uint64_t>> counts_;
};

struct ClassificationScores {
  double accuracy = 0.0;
  double f1_macro = 0.0;
};

struct SegmentationScores {
  double iou = 0.0;
  double dice = 0.0;
  double f1 = 0.0;
};

struct PixelCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
};

/// Name of the definition used for MetricsReport::overall.
inline constexpr const char* kOverallDefinition = "mean(cls_f1_macro, seg_f1)";

struct MetricsReport {
  double accuracy = 0.0;
  double cls_f1_macro = 0.0;
  double seg_iou = 0.0;
  double seg_dice = 0.0;
  double seg_f1 = 0.0;
  double overall = 0.0;
  std::size_t n_samples = 0;
  std::string overall_definition = kOverallDefinition;

  bool operator==(const MetricsReport&) const = default;
};

/// Accuracy = trace / total; macro F1 over classes, with F1 = 0 for a class
/// whose precision + recall is zero.
ClassificationScores classify_metrics(const ConfusionMatrix& cm);

/// Foreground TP/FP/FN over binary tensors of equal shape.
PixelCounts count_pixels(const Tensor& pred_masks, const Tensor& gt_masks);

/// iou = TP/(TP+FP+FN), dice = f1 = 2TP/(2TP+FP+FN); both 1 when the union
/// is empty.
SegmentationScores seg_metrics(const PixelCounts& counts);
SegmentationScores seg_metrics(const Tensor& pred_masks, const Tensor& gt_masks);

/// Arithmetic mean of the classification and segmentation F1 scores.
double overall(double cls_f1, double seg_f1);

/// Thresholds probabilities (>= threshold -> 1).
Tensor binarize(const Tensor& probs, double threshold = 0.5);

// CSV row: accuracy,cls_f1,iou,dice,seg_f1,overall,n_samples,lambda,seed,epoch
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& r, double lambda, std::uint64_t seed, int epoch);

/// Fixed-format double used in every CSV this project writes.
std::string format_double(double v);

}  // namespace mtnet
