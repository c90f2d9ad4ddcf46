#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mtnet/config.hpp"
#include "mtnet/error.hpp"

namespace mtnet {
namespace {

TEST(ConfigText, ParsesCommentsAndWhitespace) {
  const auto kv = parse_config_text("# header\n  train.lr = 0.01  # inline\n\nnet.depth=2\r\n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("train.lr"), "0.01");
  EXPECT_EQ(kv.at("net.depth"), "2");
}

TEST(ConfigText, RejectsMalformedLines) {
  EXPECT_THROW(parse_config_text("train.lr 0.01\n"), ConfigError);
  EXPECT_THROW(parse_config_text(" = 3\n"), ConfigError);
  try {
    parse_config_text("a = 1\nb = 2\na = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(ApplyConfig, DefaultsMatchReferenceRecipe) {
  RunConfig c;
  EXPECT_EQ(c.train.epochs, 50u);
  EXPECT_EQ(c.train.batch_size, 8u);
  EXPECT_EQ(c.train.lr, 1e-4);
  EXPECT_EQ(c.train.weight_decay, 1e-5);
  EXPECT_EQ(c.train.lambda, 0.7);
  EXPECT_EQ(c.split_ratio, 0.8);
}

TEST(ApplyConfig, OverridesAndErrors) {
  RunConfig c;
  apply_config(c, {{"train.lambda", "0.3"}, {"net.base_width", "8"}, {"train.dice_mode", "per_image"},
                   {"train.focal_alpha", "0.2, 0.3,0.5"}, {"train.shuffle", "false"}});
  EXPECT_EQ(c.train.lambda, 0.3);
  EXPECT_EQ(c.net.base_width, 8u);
  EXPECT_EQ(c.train.dice_mode, DiceMode::PerImage);
  EXPECT_EQ(*c.train.focal_alpha, (std::vector<double>{0.2, 0.3, 0.5}));
  EXPECT_FALSE(c.train.shuffle);
  EXPECT_THROW(apply_config(c, {{"train.learning_rate", "1"}}), ConfigError);
  EXPECT_THROW(apply_config(c, {{"train.epochs", "-3"}}), ConfigError);
  EXPECT_THROW(apply_config(c, {{"train.lr", "fast"}}), ConfigError);
  EXPECT_THROW(apply_config(c, {{"train.shuffle", "yes"}}), ConfigError);
}

TEST(ApplyConfig, TextRoundTripIsExact) {
  RunConfig c;
  c.train.lr = 1.0 / 3.0;
  c.train.lambda = 0.1;
  c.train.focal_alpha = std::vector<double>{0.1, 0.7, 0.2};
  c.net.depth = 2;
  c.split_ratio = 0.75;
  const std::string text = config_to_text(c);
  RunConfig back;
  apply_config(back, parse_config_text(text));
  EXPECT_EQ(config_to_text(back), text);
  EXPECT_EQ(back.train.lr, c.train.lr);
  EXPECT_EQ(back.train.focal_alpha, c.train.focal_alpha);
}

TEST(ApplyConfig, MissingFileIsConfigError) {
  EXPECT_THROW(read_config_file("/nonexistent/run.cfg"), ConfigError);
  const auto p = std::filesystem::temp_directory_path() / "mtnet_cfg_test.txt";
  std::ofstream(p) << "train.epochs = 3\n";
  EXPECT_EQ(read_config_file(p).at("train.epochs"), "3");
}

}  // namespace
}  // namespace mtnet
