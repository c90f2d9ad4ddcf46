#include "mtnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <regex>
#include <set>
#include <unordered_map>

#include "mtnet/error.hpp"
#include "mtnet/image_io.hpp"
#include "mtnet/ops.hpp"

namespace mtnet {

namespace fs = std::filesystem;

const char* label_name(int label) {
  switch (label) {
    case 0: return "benign";
    case 1: return "malignant";
    case 2: return "normal";
    default: return "unknown";
  }
}

std::optional<int> label_from_name(const std::string& name) {
  for (int i = 0; i < static_cast<int>(kNumLabels); ++i)
    if (name == label_name(i)) return i;
  return std::nullopt;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

struct Point {
  double x, y;
};

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

Sample synthesize(std::size_t index, std::size_t size, std::uint64_t seed) {
  Rng rng(derive_seed(seed, index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> normal(0.0, 1.0);

  const int label = static_cast<int>(std::uniform_int_distribution<int>(0, 2)(rng));
  const double s = static_cast<double>(size);

  // smooth background: linear intensity ramp in a random direction
  const double base = uniform(0.40, 0.60);
  const double slope = uniform(-0.15, 0.15);
  const double theta = uniform(0.0, 2.0 * std::numbers::pi);
  std::vector<double> clean(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double u = ((x + 0.5) - s / 2) * std::cos(theta) + ((y + 0.5) - s / 2) * std::sin(theta);
      clean[y * size + x] = base + slope * u / s;
    }

  std::vector<double> mask(size * size, 0.0);
  if (label == static_cast<int>(Label::Benign)) {
    const double a = uniform(0.10, 0.30) * s;
    const double b = uniform(0.10, 0.30) * s;
    const double phi = uniform(0.0, std::numbers::pi);
    const double reach = std::max(a, b) + 1.0;
    const double cx = uniform(reach, s - reach);
    const double cy = uniform(reach, s - reach);
    const double level = uniform(0.18, 0.26);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = dx * std::cos(phi) + dy * std::sin(phi);
        const double v = -dx * std::sin(phi) + dy * std::cos(phi);
        if ((u * u) / (a * a) + (v * v) / (b * b) <= 1.0) {
          mask[y * size + x] = 1.0;
          clean[y * size + x] = level;
        }
      }
  } else if (label == static_cast<int>(Label::Malignant)) {
    const double r0 = uniform(0.10, 0.25) * s;
    const int vertices = std::uniform_int_distribution<int>(12, 20)(rng);
    const double reach = 1.4 * r0 + 1.0;
    const double cx = uniform(reach, s - reach);
    const double cy = uniform(reach, s - reach);
    const double rotation = uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<Point> poly;
    for (int k = 0; k < vertices; ++k) {
      const double ang = rotation + 2.0 * std::numbers::pi * k / vertices;
      const double r = r0 * (1.0 + uniform(-0.4, 0.4));
      poly.push_back({cx + r * std::cos(ang), cy + r * std::sin(ang)});
    }
    const double rim = uniform(0.08, 0.13);
    const double core = uniform(0.0, 0.03);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        if (!inside_polygon(poly, px, py)) continue;
        mask[y * size + x] = 1.0;
        const double dist = std::hypot(px - cx, py - cy);
        clean[y * size + x] = dist < 0.6 * r0 ? core : rim;
      }
  }

  // clamped multiplicative speckle
  std::vector<double> image(size * size);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double speckle = std::max(0.0, 1.0 + 0.25 * normal(rng));
    image[i] = std::clamp(clean[i] * speckle, 0.0, 1.0);
  }

  char id[32];
  std::snprintf(id, sizeof(id), "synth_%05zu", index);
  Sample out;
  out.id = id;
  out.label = label;
  out.image = Tensor({1, size, size}, std::move(image));
  out.mask = Tensor({1, size, size}, std::move(mask));
  return out;
}

}  // namespace

std::vector<Sample> generate_synthetic(std::size_t n, std::size_t size, std::uint64_t seed) {
  if (n < 3) throw ParameterError("generate_synthetic: n must be >= 3, got " + std::to_string(n));
  if (size < 32) throw ParameterError("generate_synthetic: size must be >= 32, got " + std::to_string(size));
  std::vector<Sample> out(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) out[i] = synthesize(i, size, seed);
  return out;
}

namespace {

Tensor to_tensor(const GrayImage& img) {
  return Tensor({1, img.height, img.width}, img.pixels);
}

GrayImage from_tensor(const Tensor& t) {
  const auto& s = t.shape();
  return GrayImage{s[2], s[1], std::vector<double>(t.data().begin(), t.data().end())};
}

bool all_zero(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
}

}  // namespace

BusiDataset load_busi_dir(const fs::path& root, std::size_t size) {
  if (size == 0) throw ParameterError("load_busi_dir: size must be positive");
  static const std::regex mask_re(R"((.*)_mask(_[0-9]+)?)");
  BusiDataset out;
  std::set<std::string> seen;
  for (int label = 0; label < static_cast<int>(kNumLabels); ++label) {
    const fs::path dir = root / label_name(label);
    if (!fs::is_directory(dir)) {
      throw DataError("dataset " + root.string() + " is missing class directory " + label_name(label) + "/");
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::map<std::string, fs::path> images;
    std::map<std::string, std::vector<fs::path>> masks;
    for (const auto& f : files) {
      const std::string stem = f.stem().string();
      std::smatch m;
      if (std::regex_match(stem, m, mask_re)) {
        masks[m[1].str()].push_back(f);
      } else {
        images[stem] = f;
      }
    }
    for (const auto& [stem, paths] : masks) {
      if (!images.contains(stem)) out.warnings.push_back("mask without image: " + paths.front().string());
    }
    for (const auto& [stem, path] : images) {
      if (!seen.insert(stem).second) throw DataError("duplicate sample id " + stem + " in " + dir.string());
      GrayImage img = read_png_gray(path);
      GrayImage mask{img.width, img.height, std::vector<double>(img.width * img.height, 0.0)};
      auto it = masks.find(stem);
      if (it == masks.end()) {
        if (label != static_cast<int>(Label::Normal)) {
          out.warnings.push_back("no mask for " + path.string() + "; using an empty mask");
        }
      } else {
        for (const auto& mp : it->second) {
          GrayImage part = resize_nearest(read_png_gray(mp), img.width, img.height);
          for (std::size_t i = 0; i < part.pixels.size(); ++i)
            if (part.pixels[i] >= 0.5) mask.pixels[i] = 1.0;
        }
      }
      mask = resize_nearest(mask, size, size);
      for (auto& v : mask.pixels) v = v >= 0.5 ? 1.0 : 0.0;

      Sample s;
      s.id = stem;
      s.label = label;
      s.image = to_tensor(resize_bilinear(img, size, size));
      s.mask = to_tensor(mask);
      const bool empty = all_zero(s.mask);
      if (label == static_cast<int>(Label::Normal) && !empty) {
        out.warnings.push_back("normal sample " + stem + " has a non-empty mask");
      } else if (label != static_cast<int>(Label::Normal) && empty && it != masks.end()) {
        out.warnings.push_back("lesion sample " + stem + " has an empty mask");
      }
      out.samples.push_back(std::move(s));
    }
  }
  std::sort(out.samples.begin(), out.samples.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });
  return out;
}

void write_busi_dir(const std::vector<Sample>& samples, const fs::path& root) {
  for (int label = 0; label < static_cast<int>(kNumLabels); ++label) {
    std::error_code ec;
    fs::create_directories(root / label_name(label), ec);
    if (ec) throw IoError("cannot create " + (root / label_name(label)).string() + ": " + ec.message());
  }
  for (const auto& s : samples) {
    const fs::path dir = root / label_name(s.label);
    write_png_gray(dir / (s.id + ".png"), from_tensor(s.image));
    write_png_gray(dir / (s.id + "_mask.png"), from_tensor(s.mask));
  }
}

DatasetSplit split(const std::vector<Sample>& samples, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ParameterError("split: ratio must lie in (0, 1), got " + std::to_string(ratio));
  }
  std::map<int, std::vector<std::string>> by_class;
  for (const auto& s : samples) by_class[s.label].push_back(s.id);
  DatasetSplit out;
  out.seed = seed;
  out.ratio = ratio;
  for (auto& [label, ids] : by_class) {
    if (ids.size() < 2) {
      throw DataError(std::string("split: class ") + label_name(label) + " has " +
                      std::to_string(ids.size()) + " sample(s); at least 2 required");
    }
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, 0x5917 + static_cast<std::uint64_t>(label)));
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto count = static_cast<long>(std::lround(ratio * static_cast<double>(ids.size())));
    const auto n_train = static_cast<std::size_t>(std::clamp(count, 1L, static_cast<long>(ids.size()) - 1));
    out.train.insert(out.train.end(), ids.begin(), ids.begin() + static_cast<long>(n_train));
    out.test.insert(out.test.end(), ids.begin() + static_cast<long>(n_train), ids.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::uint64_t dataset_fingerprint(const std::vector<Sample>& samples) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& s : samples) {
    mix(s.id.data(), s.id.size());
    mix(&s.label, sizeof(s.label));
    mix(s.image.data().data(), s.image.numel() * sizeof(double));
    mix(s.mask.data().data(), s.mask.numel() * sizeof(double));
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Batch make_batch(const std::vector<const Sample*>& samples, std::size_t channels) {
  if (samples.empty()) throw DimensionError("make_batch: empty batch");
  const auto& shape = samples.front()->image.shape();
  const std::size_t h = shape[1], w = shape[2], plane = h * w;
  Batch b;
  std::vector<double> images(samples.size() * channels * plane);
  std::vector<double> masks(samples.size() * plane);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = *samples[i];
    if (s.image.shape() != shape) {
      throw DimensionError("make_batch: sample " + s.id + " has shape " + shape_str(s.image.shape()) +
                           ", expected " + shape_str(shape));
    }
    for (std::size_t c = 0; c < channels; ++c)
      std::copy(s.image.data().begin(), s.image.data().end(), images.begin() + (i * channels + c) * plane);
    std::copy(s.mask.data().begin(), s.mask.data().end(), masks.begin() + i * plane);
    b.labels.push_back(s.label);
    b.ids.push_back(s.id);
  }
  b.images = Tensor({samples.size(), channels, h, w}, std::move(images));
  b.masks = Tensor({samples.size(), 1, h, w}, std::move(masks));
  return b;
}

BatchIter::BatchIter(const std::vector<Sample>& samples, const std::vector<std::string>& ids,
                     std::size_t batch_size, bool shuffle, std::uint64_t seed, std::size_t epoch,
                     std::size_t channels)
    : batch_size_(batch_size), channels_(channels) {
  if (batch_size == 0) throw ParameterError("batch_size must be >= 1");
  std::unordered_map<std::string, const Sample*> index;
  for (const auto& s : samples) index.emplace(s.id, &s);
  std::vector<std::string> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& id : sorted) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("unknown sample id " + id);
    order_.push_back(it->second);
  }
  if (shuffle) {
    Rng rng(derive_seed(seed ^ static_cast<std::uint64_t>(epoch), 0xba7c4));
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::optional<Batch> BatchIter::next() {
  if (pos_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), pos_ + batch_size_);
  std::vector<const Sample*> chunk(order_.begin() + static_cast<long>(pos_), order_.begin() + static_cast<long>(end));
  pos_ = end;
  return make_batch(chunk, channels_);
}

std::size_t BatchIter::num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

}  // namespace mtnet
