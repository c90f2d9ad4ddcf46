#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

#include "mtnet/error.hpp"
#include "mtnet/model.hpp"

// Layout (little-endian):
//   char[6]  "MTNET1"
//   u32 x7   in_channels, base_width, depth, num_classes, seg_channels,
//            input_size, norm_groups
//   f64      dropout_p
//   u32      parameter count P
//   P times: u32 name length, name bytes, u32 rank, u64 dims[rank],
//            f64 data[prod(dims)]

namespace mtnet {

namespace {

constexpr std::string_view kMagic = "MTNET1";

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  const std::string& buffer() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : buf_(std::move(data)), origin_(std::move(origin)) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) {
    if (buf_.size() - pos_ < n) {
      throw CheckpointError("corrupt checkpoint " + origin_ + ": truncated at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const MultiTaskNet& net, const std::filesystem::path& path) {
  const auto& c = net.config();
  Writer w;
  w.bytes(kMagic);
  for (std::size_t v : {c.in_channels, c.base_width, c.depth, c.num_classes, c.seg_channels,
                        c.input_size, c.norm_groups}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.f64(c.dropout_p);
  const auto params = net.param_groups();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

MultiTaskNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  if (r.bytes(kMagic.size()) != kMagic) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": bad magic");
  }
  NetConfig c;
  c.in_channels = r.u32();
  c.base_width = r.u32();
  c.depth = r.u32();
  c.num_classes = r.u32();
  c.seg_channels = r.u32();
  c.input_size = r.u32();
  c.norm_groups = r.u32();
  c.dropout_p = r.f64();
  if (!c.violations().empty()) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": invalid config block");
  }
  MultiTaskNet net(c);
  const auto params = net.param_groups();
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw CheckpointError("corrupt checkpoint " + path.string() + ": expected " +
                          std::to_string(params.size()) + " parameters, found " + std::to_string(count));
  }
  for (const auto& [expected_name, t] : params) {
    const std::string name = r.bytes(r.u32());
    if (name != expected_name) {
      throw CheckpointError("corrupt checkpoint " + path.string() + ": expected parameter " +
                            expected_name + ", found " + name);
    }
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != t.shape()) {
      throw CheckpointError("checkpoint parameter " + name + " has shape " + shape_str(shape) +
                            " but the config implies " + shape_str(t.shape()));
    }
    Tensor dst = t;
    for (auto& v : dst.data()) v = r.f64();
  }
  if (!r.at_end()) throw CheckpointError("corrupt checkpoint " + path.string() + ": trailing bytes");
  return net;
}

}  // namespace mtnet
