#include "mtnet/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mtnet/error.hpp"
#include "mtnet/metrics.hpp"

namespace mtnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key " + key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key " + key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected true/false, got '" + v + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError("config key " + key + ": empty list");
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v[i]);
  }
  return s;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key " + key);
    }
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& values) {
  auto& n = cfg.net;
  auto& t = cfg.train;
  for (const auto& [key, v] : values) {
    if (key == "net.in_channels") n.in_channels = parse_size(key, v);
    else if (key == "net.base_width") n.base_width = parse_size(key, v);
    else if (key == "net.depth") n.depth = parse_size(key, v);
    else if (key == "net.num_classes") n.num_classes = parse_size(key, v);
    else if (key == "net.seg_channels") n.seg_channels = parse_size(key, v);
    else if (key == "net.dropout_p") n.dropout_p = parse_double(key, v);
    else if (key == "net.input_size") n.input_size = parse_size(key, v);
    else if (key == "net.norm_groups") n.norm_groups = parse_size(key, v);
    else if (key == "train.epochs") t.epochs = parse_size(key, v);
    else if (key == "train.batch_size") t.batch_size = parse_size(key, v);
    else if (key == "train.lr") t.lr = parse_double(key, v);
    else if (key == "train.weight_decay") t.weight_decay = parse_double(key, v);
    else if (key == "train.lambda") t.lambda = parse_double(key, v);
    else if (key == "train.seed") t.seed = parse_size(key, v);
    else if (key == "train.eval_every") t.eval_every = parse_size(key, v);
    else if (key == "train.focal_gamma") t.focal_gamma = parse_double(key, v);
    else if (key == "train.focal_alpha") {
      if (v == "auto") t.focal_alpha.reset();
      else t.focal_alpha = parse_list(key, v);
    }
    else if (key == "train.decoupled_weight_decay") t.decoupled_weight_decay = parse_bool(key, v);
    else if (key == "train.dice_mode") {
      if (v == "batch") t.dice_mode = DiceMode::Batch;
      else if (v == "per_image") t.dice_mode = DiceMode::PerImage;
      else throw ConfigError("config key " + key + ": expected batch or per_image, got '" + v + "'");
    }
    else if (key == "train.dice_eps") t.dice_eps = parse_double(key, v);
    else if (key == "train.threshold") t.threshold = parse_double(key, v);
    else if (key == "train.shuffle") t.shuffle = parse_bool(key, v);
    else if (key == "data.split_ratio") cfg.split_ratio = parse_double(key, v);
    else throw ConfigError("unknown config key " + key);
  }
}

std::string config_to_text(const RunConfig& cfg) {
  const auto& n = cfg.net;
  const auto& t = cfg.train;
  std::ostringstream os;
  os << "net.in_channels = " << n.in_channels << '\n'
     << "net.base_width = " << n.base_width << '\n'
     << "net.depth = " << n.depth << '\n'
     << "net.num_classes = " << n.num_classes << '\n'
     << "net.seg_channels = " << n.seg_channels << '\n'
     << "net.dropout_p = " << format_double(n.dropout_p) << '\n'
     << "net.input_size = " << n.input_size << '\n'
     << "net.norm_groups = " << n.norm_groups << '\n'
     << "train.epochs = " << t.epochs << '\n'
     << "train.batch_size = " << t.batch_size << '\n'
     << "train.lr = " << format_double(t.lr) << '\n'
     << "train.weight_decay = " << format_double(t.weight_decay) << '\n'
     << "train.lambda = " << format_double(t.lambda) << '\n'
     << "train.seed = " << t.seed << '\n'
     << "train.eval_every = " << t.eval_every << '\n'
     << "train.focal_gamma = " << format_double(t.focal_gamma.value_or(2.0)) << '\n'
     << "train.focal_alpha = " << (t.focal_alpha ? join(*t.focal_alpha) : std::string("auto")) << '\n'
     << "train.decoupled_weight_decay = " << (t.decoupled_weight_decay ? "true" : "false") << '\n'
     << "train.dice_mode = " << (t.dice_mode == DiceMode::Batch ? "batch" : "per_image") << '\n'
     << "train.dice_eps = " << format_double(t.dice_eps) << '\n'
     << "train.threshold = " << format_double(t.threshold) << '\n'
     << "train.shuffle = " << (t.shuffle ? "true" : "false") << '\n'
     << "data.split_ratio = " << format_double(cfg.split_ratio) << '\n';
  return os.str();
}

}  // namespace mtnet
