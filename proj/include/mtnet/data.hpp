#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtnet/tensor.hpp"

namespace mtnet {

enum class Label : int { Benign = 0, Malignant = 1, Normal = 2 };

inline constexpr std::size_t kNumLabels = 3;

const char* label_name(int label);
/// Directory / CLI name -> label; nullopt for unknown names.
std::optional<int> label_from_name(const std::string& name);

struct Sample {
  std::string id;
  Tensor image;  // [1, S, S], values in [0, 1]
  Tensor mask;   // [1, S, S], values in {0, 1}
  int label = 0;
};

struct DatasetSplit {
  std::vector<std::string> train;  // sorted ids
  std::vector<std::string> test;   // sorted ids
  std::uint64_t seed = 0;
  double ratio = 0.8;
};

/// splitmix64 of (seed, stream); used to derive independent RNG streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Synthetic ultrasound-like samples. Benign: smooth filled ellipse; malignant:
/// jagged star polygon with a darker core; normal: background only. All over
/// a speckled intensity gradient. Deterministic in (n, size, seed).
std::vector<Sample> generate_synthetic(std::size_t n, std::size_t size, std::uint64_t seed);

struct BusiDataset {
  std::vector<Sample> samples;  // sorted by id
  std::vector<std::string> warnings;
};

/// Reads <root>/{benign,malignant,normal}/X.png with masks X_mask.png,
/// X_mask_1.png, ... Images are resized bilinearly, masks are unioned, resized
/// nearest-neighbour and re-binarized at 0.5.
BusiDataset load_busi_dir(const std::filesystem::path& root, std::size_t size);

/// Writes samples in the layout load_busi_dir reads: 8-bit gray image and an
/// 8-bit {0,255} mask per sample.
void write_busi_dir(const std::vector<Sample>& samples, const std::filesystem::path& root);

/// Stratified split: per class, round(ratio * count) samples (clamped so both
/// parts keep at least one) go to train after a seeded shuffle.
DatasetSplit split(const std::vector<Sample>& samples, double ratio, std::uint64_t seed);

/// FNV-1a over every sample (id, label, pixels, mask).
std::uint64_t dataset_fingerprint(const std::vector<Sample>& samples);
std::string to_hex(std::uint64_t v);

struct Batch {
  Tensor images;  // [B, C, S, S]
  Tensor masks;   // [B, 1, S, S]
  std::vector<int> labels;
  std::vector<std::string> ids;
};

/// Stacks samples into a batch, replicating the gray channel `channels` times.
Batch make_batch(const std::vector<const Sample*>& samples, std::size_t channels = 1);

/// Deterministic mini-batches over a subset of samples. Ids are visited in
/// lexicographic order, or in a shuffle derived from (seed, epoch). The final
/// partial batch is kept.
class BatchIter {
 public:
  BatchIter(const std::vector<Sample>& samples, const std::vector<std::string>& ids,
            std::size_t batch_size, bool shuffle, std::uint64_t seed, std::size_t epoch,
            std::size_t channels = 1);

  std::optional<Batch> next();
  std::size_t num_batches() const;
  const std::vector<const Sample*>& order() const { return order_; }

 private:
  std::vector<const Sample*> order_;
  std::size_t batch_size_;
  std::size_t channels_;
  std::size_t pos_ = 0;
};

}  // namespace mtnet
