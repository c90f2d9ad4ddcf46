#include "mtnet/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mtnet/config.hpp"
#include "mtnet/data.hpp"
#include "mtnet/error.hpp"
#include "mtnet/image_io.hpp"
#include "mtnet/metrics.hpp"
#include "mtnet/model.hpp"
#include "mtnet/training.hpp"

namespace mtnet::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

json config_json(const RunConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : parse_config_text(config_to_text(cfg))) j[k] = v;
  return j;
}

RunConfig config_from_json(const json& j) {
  std::map<std::string, std::string> values;
  for (const auto& [k, v] : j.items()) values[k] = v.get<std::string>();
  RunConfig cfg;
  apply_config(cfg, values);
  return cfg;
}

// Settings shared by train / gridsearch / eval.
struct RunOptions {
  std::string data;
  std::string config;
  std::string out;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
};

RunConfig resolve_config(const RunOptions& o) {
  RunConfig cfg;
  if (!o.config.empty()) apply_config(cfg, read_config_file(o.config));
  if (o.lambda) cfg.train.lambda = *o.lambda;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  cfg.net.validate();
  cfg.train.validate();
  if (!(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0)) {
    throw ConfigError("data.split_ratio must lie in (0, 1)");
  }
  return cfg;
}

BusiDataset load_dataset(const std::string& dir, std::size_t size, std::ostream& err) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir);
  BusiDataset ds = load_busi_dir(dir, size);
  for (const auto& w : ds.warnings) err << "warning: " << w << '\n';
  return ds;
}

std::string report_line(const MetricsReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << "accuracy=" << r.accuracy << " cls_f1=" << r.cls_f1_macro
     << " iou=" << r.seg_iou << " dice=" << r.seg_dice << " seg_f1=" << r.seg_f1
     << " overall=" << r.overall;
  return os.str();
}

int cmd_generate(const fs::path& out, std::size_t n, std::size_t size, std::uint64_t seed, bool force,
                 std::ostream& cout, std::ostream& cerr) {
  if (n < 3) throw ParameterError("--n must be >= 3 (one sample per class at minimum), got " + std::to_string(n));
  if (size < 32) throw ParameterError("--size must be >= 32, got " + std::to_string(size));
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) throw ConfigError("output directory " + out.string() + " is not empty (use --force)");
    // only remove what this command writes
    for (int label = 0; label < static_cast<int>(kNumLabels); ++label) fs::remove_all(out / label_name(label));
    fs::remove(out / "manifest.json");
  }
  ensure_dir(out);
  const auto samples = generate_synthetic(n, size, seed);
  write_busi_dir(samples, out);
  const BusiDataset reloaded = load_dataset(out.string(), size, cerr);

  std::array<std::size_t, kNumLabels> counts{};
  for (const auto& s : samples) ++counts[static_cast<std::size_t>(s.label)];
  json m;
  m["tool"] = kToolName;
  m["version"] = kVersion;
  m["command"] = "generate";
  m["n"] = n;
  m["size"] = size;
  m["seed"] = seed;
  m["class_counts"] = {{"benign", counts[0]}, {"malignant", counts[1]}, {"normal", counts[2]}};
  m["dataset_fingerprint"] = to_hex(dataset_fingerprint(reloaded.samples));
  write_text(out / "manifest.json", m.dump(2) + "\n");
  cout << "generated " << n << " samples (benign=" << counts[0] << " malignant=" << counts[1]
       << " normal=" << counts[2] << ") in " << out.string() << '\n';
  return kOk;
}

int run_training(const RunConfig& cfg, const std::string& data_dir, const fs::path& out,
                 std::ostream& cout, std::ostream& cerr, const std::optional<std::string>& expect_fingerprint) {
  const BusiDataset ds = load_dataset(data_dir, cfg.net.input_size, cerr);
  const std::string fingerprint = to_hex(dataset_fingerprint(ds.samples));
  if (expect_fingerprint && *expect_fingerprint != fingerprint) {
    throw DataError("dataset fingerprint " + fingerprint + " does not match manifest " + *expect_fingerprint);
  }
  const DatasetSplit sp = split(ds.samples, cfg.split_ratio, cfg.train.seed);
  ensure_dir(out);

  json manifest;
  manifest["tool"] = kToolName;
  manifest["version"] = kVersion;
  manifest["command"] = "train";
  manifest["data_dir"] = fs::absolute(data_dir).lexically_normal().string();
  manifest["dataset_fingerprint"] = fingerprint;
  manifest["seed"] = cfg.train.seed;
  manifest["config"] = config_json(cfg);
  manifest["started_at"] = utc_now();
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  write_text(out / "resolved_config.txt", config_to_text(cfg));

  TrainConfig tc = cfg.train;
  tc.checkpoint_dir = out;
  MultiTaskNet net = init_params(cfg.net, tc.seed);
  const TrainResult r = train(net, ds.samples, sp, tc);

  write_text(out / "history.csv", history_csv(r.history));
  write_text(out / "metrics.csv", metrics_csv_header() + "\n" +
                                      metrics_csv_row(r.final_report, tc.lambda, tc.seed,
                                                      static_cast<int>(tc.epochs)) + "\n");
  manifest["finished_at"] = utc_now();
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  cout << "trained " << tc.epochs << " epochs (lambda=" << tc.lambda << ", train=" << sp.train.size()
       << ", test=" << sp.test.size() << ")\n"
       << report_line(r.final_report) << '\n';
  return kOk;
}

int cmd_gridsearch(const RunOptions& o, const std::string& lambdas_arg, int jobs, std::ostream& cout,
                   std::ostream& cerr) {
  const RunConfig cfg = resolve_config(o);
  std::vector<double> lambdas = default_lambda_grid();
  if (!lambdas_arg.empty()) {
    lambdas.clear();
    std::stringstream ss(lambdas_arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
      RunConfig probe;
      apply_config(probe, {{"train.lambda", item}});
      lambdas.push_back(probe.train.lambda);
    }
  }
  const BusiDataset ds = load_dataset(o.data, cfg.net.input_size, cerr);
  const DatasetSplit sp = split(ds.samples, cfg.split_ratio, cfg.train.seed);
  const fs::path out = o.out;
  ensure_dir(out);

  json manifest;
  manifest["tool"] = kToolName;
  manifest["version"] = kVersion;
  manifest["command"] = "gridsearch";
  manifest["data_dir"] = fs::absolute(o.data).lexically_normal().string();
  manifest["dataset_fingerprint"] = to_hex(dataset_fingerprint(ds.samples));
  manifest["seed"] = cfg.train.seed;
  manifest["config"] = config_json(cfg);
  manifest["lambdas"] = lambdas;
  manifest["started_at"] = utc_now();
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  TrainConfig tc = cfg.train;
  tc.checkpoint_dir = out;
  const auto cells = grid_search_lambda(cfg.net, ds.samples, sp, tc, lambdas, jobs);
  for (const auto& c : cells) {
    char dir[32];
    std::snprintf(dir, sizeof(dir), "lambda_%.2f", c.lambda);
    write_text(out / dir / "history.csv", history_csv(c.history));
  }
  write_text(out / "grid.csv", grid_csv(cells));

  cout << "lambda  accuracy  cls_f1  iou     dice    seg_f1  overall\n";
  for (const auto& c : cells) {
    const auto& m = c.report;
    cout << std::fixed << std::setprecision(2) << c.lambda << "    " << std::setprecision(4) << m.accuracy
         << "    " << m.cls_f1_macro << "  " << m.seg_iou << "  " << m.seg_dice << "  " << m.seg_f1 << "  "
         << m.overall << '\n';
  }
  const auto& best = cells[best_cell(cells)];
  cout << std::setprecision(2) << "best lambda=" << best.lambda << std::setprecision(4)
       << " overall=" << best.report.overall << '\n';
  return kOk;
}

int cmd_eval(const RunOptions& o, const std::string& checkpoint, std::ostream& cout, std::ostream& cerr) {
  const MultiTaskNet net = load_checkpoint(checkpoint);
  RunConfig cfg;
  if (!o.config.empty()) {
    cfg = resolve_config(o);
    if (!(cfg.net == net.config())) {
      const NetConfig& a = cfg.net;
      const NetConfig& b = net.config();
      throw ConfigError("config/checkpoint mismatch: config expects input [N," + std::to_string(a.in_channels) +
                        "," + std::to_string(a.input_size) + "," + std::to_string(a.input_size) + "] width " +
                        std::to_string(a.base_width) + " depth " + std::to_string(a.depth) + " classes " +
                        std::to_string(a.num_classes) + "; checkpoint has input [N," +
                        std::to_string(b.in_channels) + "," + std::to_string(b.input_size) + "," +
                        std::to_string(b.input_size) + "] width " + std::to_string(b.base_width) + " depth " +
                        std::to_string(b.depth) + " classes " + std::to_string(b.num_classes));
    }
  } else {
    if (o.seed) cfg.train.seed = *o.seed;
    cfg.net = net.config();
  }
  const BusiDataset ds = load_dataset(o.data, net.config().input_size, cerr);
  const DatasetSplit sp = split(ds.samples, cfg.split_ratio, cfg.train.seed);
  const MetricsReport r = evaluate(net, ds.samples, sp.test, cfg.train.batch_size, cfg.train.threshold);
  const fs::path out = o.out;
  ensure_dir(out);
  write_text(out / "metrics.csv",
             metrics_csv_header() + "\n" + metrics_csv_row(r, cfg.train.lambda, cfg.train.seed, -1) + "\n");
  cout << report_line(r) << " n_samples=" << r.n_samples << '\n';
  return kOk;
}

int cmd_predict(const std::string& image_path, const std::string& checkpoint, const fs::path& out,
                double threshold, std::ostream& cout) {
  const MultiTaskNet net = load_checkpoint(checkpoint);
  const auto& c = net.config();
  const GrayImage img = resize_bilinear(read_png_gray(image_path), c.input_size, c.input_size);
  Sample s;
  s.id = fs::path(image_path).stem().string();
  s.image = Tensor({1, c.input_size, c.input_size}, img.pixels);
  s.mask = Tensor({1, c.input_size, c.input_size}, 0.0);
  const Batch batch = make_batch({&s}, c.in_channels);

  NoGradGuard no_grad;
  Rng unused(0);
  const NetOutput o = net.forward(batch.images, false, unused);
  const Tensor probs = softmax(o.cls_logits, 1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < c.num_classes; ++j)
    if (probs.data()[j] > probs.data()[best]) best = j;

  GrayImage mask{c.input_size, c.input_size, std::vector<double>(c.input_size * c.input_size)};
  auto z = o.seg_logits.data();
  for (std::size_t i = 0; i < mask.pixels.size(); ++i)
    mask.pixels[i] = 1.0 / (1.0 + std::exp(-z[i])) >= threshold ? 1.0 : 0.0;

  ensure_dir(out);
  write_png_gray(out / (s.id + "_pred_mask.png"), mask);
  std::ostringstream line;
  line << "label=" << (best < kNumLabels ? label_name(static_cast<int>(best)) : std::to_string(best)) << " probs=";
  line << std::setprecision(10) << std::fixed;
  for (std::size_t j = 0; j < c.num_classes; ++j) line << (j ? "," : "") << probs.data()[j];
  write_text(out / (s.id + "_prediction.txt"), line.str() + "\n");
  cout << line.str() << '\n';
  return kOk;
}

int cmd_replay(const std::string& manifest_path, const fs::path& out, std::ostream& cout, std::ostream& cerr) {
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("cannot read manifest " + manifest_path);
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest " + manifest_path + ": " + e.what());
  }
  if (m.value("command", "") != "train") throw ConfigError("manifest " + manifest_path + " is not a train manifest");
  const RunConfig cfg = config_from_json(m.at("config"));
  cfg.net.validate();
  cfg.train.validate();
  return run_training(cfg, m.at("data_dir").get<std::string>(), out, cout, cerr,
                      m.at("dataset_fingerprint").get<std::string>());
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task segmentation + classification trainer", kToolName};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // generate
  std::string gen_out;
  std::size_t gen_n = 300, gen_size = 64;
  std::uint64_t gen_seed = 0;
  bool gen_force = false;
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset in BUSI layout");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--n", gen_n, "Number of samples")->capture_default_str();
  gen->add_option("--size", gen_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Random seed")->capture_default_str();
  gen->add_flag("--force", gen_force, "Overwrite a non-empty output directory");

  auto add_run_options = [](CLI::App* sub, RunOptions& o, bool need_data) {
    auto* d = sub->add_option("--data", o.data, "Dataset directory (BUSI layout)");
    if (need_data) d->required();
    sub->add_option("--config", o.config, "Config file (key = value)");
    sub->add_option("--out", o.out, "Output directory")->required();
    sub->add_option("--seed", o.seed, "Seed override");
  };

  RunOptions train_opts;
  auto* tr = app.add_subcommand("train", "Train one model");
  add_run_options(tr, train_opts, true);
  tr->add_option("--lambda", train_opts.lambda, "Segmentation loss weight override");
  tr->add_option("--epochs", train_opts.epochs, "Epoch count override");

  RunOptions grid_opts;
  std::string grid_lambdas;
  int grid_jobs = 1;
  auto* gs = app.add_subcommand("gridsearch", "Train one model per lambda and compare");
  add_run_options(gs, grid_opts, true);
  gs->add_option("--lambdas", grid_lambdas, "Comma-separated lambda list (default 0.1,...,0.9)");
  gs->add_option("--jobs", grid_jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  gs->add_option("--epochs", grid_opts.epochs, "Epoch count override");

  RunOptions eval_opts;
  std::string eval_ckpt;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_run_options(ev, eval_opts, true);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();

  std::string pred_image, pred_ckpt, pred_out;
  double pred_threshold = 0.5;
  auto* pr = app.add_subcommand("predict", "Predict mask and class for one image");
  pr->add_option("--image", pred_image, "Input PNG")->required();
  pr->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required();
  pr->add_option("--out", pred_out, "Output directory")->required();
  pr->add_option("--threshold", pred_threshold, "Mask probability threshold")->capture_default_str();

  std::string replay_manifest, replay_out;
  auto* rp = app.add_subcommand("replay", "Re-run a training run from its manifest");
  rp->add_option("--manifest", replay_manifest, "manifest.json of a train run")->required();
  rp->add_option("--out", replay_out, "Output directory")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_generate(gen_out, gen_n, gen_size, gen_seed, gen_force, out, err);
    if (*tr) return run_training(resolve_config(train_opts), train_opts.data, train_opts.out, out, err, std::nullopt);
    if (*gs) return cmd_gridsearch(grid_opts, grid_lambdas, grid_jobs, out, err);
    if (*ev) return cmd_eval(eval_opts, eval_ckpt, out, err);
    if (*pr) return cmd_predict(pred_image, pred_ckpt, pred_out, pred_threshold, out);
    if (*rp) return cmd_replay(replay_manifest, replay_out, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const ParameterError& e) {
    err << "parameter error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const CheckpointError& e) {
    err << "corrupt checkpoint: " << e.what() << '\n';
    return kIo;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const DimensionError& e) {
    err << "shape error: " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsage;
}

}  // namespace mtnet::cli
