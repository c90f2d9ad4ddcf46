#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "mtnet/model.hpp"
#include "mtnet/training.hpp"

namespace mtnet {

/// Everything needed to reproduce a run. Defaults follow the reference
/// recipe: 50 epochs, batch 8, Adam lr 1e-4, weight decay 1e-5, lambda 0.7,
/// 8:2 split.
struct RunConfig {
  NetConfig net;
  TrainConfig train;
  double split_ratio = 0.8;
};

/// Parses "key = value" lines ('#' starts a comment). Throws ConfigError on
/// malformed lines and duplicate keys.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Applies dotted keys (net.depth, train.lr, data.split_ratio, ...) on top of
/// `cfg`. Unknown keys and unparsable values raise ConfigError.
void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& values);

/// Serializes every key, in a fixed order, in the format parse_config_text reads.
std::string config_to_text(const RunConfig& cfg);

}  // namespace mtnet
