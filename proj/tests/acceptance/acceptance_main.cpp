// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Long experiments write their artifacts under --workdir.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grad_cases.hpp"
#include "gradcheck.hpp"
#include "mtnet/cli.hpp"
#include "mtnet/data.hpp"
#include "mtnet/losses.hpp"
#include "mtnet/metrics.hpp"
#include "mtnet/model.hpp"
#include "mtnet/ops.hpp"
#include "mtnet/training.hpp"

namespace fs = std::filesystem;
using namespace mtnet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Desk-scale protocol shared by criteria 6 and 7.
struct DeskScale {
  std::vector<Sample> samples = generate_synthetic(300, 64, 0);
  DatasetSplit split_ = split(samples, 0.8, 0);
  NetConfig net;  // defaults: base 16, depth 3, 64x64
  TrainConfig train_cfg() const {
    TrainConfig t;
    t.epochs = 30;
    t.batch_size = 8;
    t.lambda = 0.7;
    t.eval_every = 5;
    return t;
  }
};

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto cases = testing::grad_cases();
  double worst = 0.0;
  std::string worst_case;
  std::size_t instances = 0;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    std::mt19937_64 rng(5000 + c);
    for (int i = 0; i < 20; ++i) {
      auto inst = cases[c].make(rng);
      const auto rep = testing::gradcheck(inst.op, inst.inputs, rng());
      ++instances;
      if (!(rep.max_rel_error <= worst)) {
        worst = rep.max_rel_error;
        worst_case = cases[c].name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt("%zu ops x 20 instances, max rel err %.3g (%s), %.2f s", cases.size(), worst,
              worst_case.c_str(), secs)};
}

double reference_ce(const std::vector<double>& z, std::size_t k, const std::vector<int>& y) {
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double mx = z[i * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[i * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[i * k + j] - mx);
    total -= z[i * k + y[i]] - mx - std::log(s);
  }
  return total / static_cast<double>(y.size());
}

std::vector<double> random_mask(std::size_t n, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution b(density);
  std::vector<double> v(n);
  for (auto& x : v) x = b(rng) ? 1.0 : 0.0;
  return v;
}

Outcome loss_identities() {
  std::mt19937_64 rng(21);
  double ce_gap = 0.0, swap_gap = 0.0, iou_gap = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 8, k = 2 + rng() % 4;
    const Tensor z = testing::random_tensor({n, k}, rng, -6, 6, false);
    std::vector<int> y(n);
    for (auto& l : y) l = static_cast<int>(rng() % k);
    FocalParams fp;
    fp.gamma = 0.0;
    fp.alpha.assign(k, 1.0);
    const std::vector<double> raw(z.data().begin(), z.data().end());
    ce_gap = std::max(ce_gap, std::abs(focal_loss(z, y, fp).item() - reference_ce(raw, k, y)));

    // swapping foreground and background: logits negate, masks complement
    const Shape s{1 + rng() % 3, 1, 2 + rng() % 8, 2 + rng() % 8};
    const Tensor logits = testing::random_tensor(s, rng, -4, 4, false);
    const auto m = random_mask(shape_numel(s), 0.4, rng);
    std::vector<double> neg(logits.data().begin(), logits.data().end()), inv(m);
    for (auto& v : neg) v = -v;
    for (auto& v : inv) v = 1.0 - v;
    for (DiceMode mode : {DiceMode::Batch, DiceMode::PerImage}) {
      const double a = dice_loss(logits, Tensor(s, m), 1e-6, mode).item();
      const double b = dice_loss(Tensor(s, neg), Tensor(s, inv), 1e-6, mode).item();
      swap_gap = std::max(swap_gap, std::abs(a - b));
    }

    const Shape ms{1, 1, 8, 8};
    const auto p = random_mask(64, 0.3, rng), g = random_mask(64, 0.3, rng);
    const auto sm = seg_metrics(Tensor(ms, p), Tensor(ms, g));
    iou_gap = std::max(iou_gap, std::abs(sm.dice - 2.0 * sm.iou / (1.0 + sm.iou)));
  }
  const Tensor seg({}, std::vector<double>{0.37}), cls({}, std::vector<double>{1.91});
  const bool endpoints = total_loss(seg, cls, {1.0, 1e-6}).item() == 0.37 &&
                         total_loss(seg, cls, {0.0, 1e-6}).item() == 1.91;
  return {ce_gap < 1e-10 && swap_gap < 1e-12 && endpoints && iou_gap < 1e-12,
          fmt("focal(g=0)-CE %.2g, dice swap %.2g, endpoints %s, dice-iou identity %.2g", ce_gap,
              swap_gap, endpoints ? "exact" : "NOT exact", iou_gap)};
}

Outcome hand_oracles() {
  FocalParams fp;
  fp.gamma = 2.0;
  fp.alpha = {0.25, 0.25, 0.25};
  const double rest = std::log(0.05);
  const double focal = focal_loss(Tensor({1, 3}, std::vector<double>{std::log(0.9), rest, rest}), {0}, fp).item();

  // y = [1,1,0,0], hard p = [1,0,0,0]; exact value 1 - (2/3 + 4/5)/2 = 4/15
  const Tensor y({1, 1, 2, 2}, std::vector<double>{1, 1, 0, 0});
  const Tensor z({1, 1, 2, 2}, std::vector<double>{40, -40, -40, -40});
  const double dice = dice_loss(z, y, 1e-6).item();

  const Tensor pm({1, 1, 2, 2}, std::vector<double>{1, 1, 1, 0});
  const Tensor gm({1, 1, 2, 2}, std::vector<double>{0, 1, 1, 1});
  const auto sm = seg_metrics(pm, gm);

  const bool ok = std::abs(focal - 2.634e-4) < 1e-8 && std::abs(dice - 4.0 / 15.0) < 1e-5 &&
                  sm.iou == 0.5 && sm.dice == 2.0 / 3.0;
  return {ok, fmt("focal %.7g (|d| %.2g vs 2.634e-4), dice loss %.7g (|d| %.2g vs 4/15, %.2g vs the "
                  "rounded 0.2667), iou %g, dice %.17g",
                  focal, std::abs(focal - 2.634e-4), dice, std::abs(dice - 4.0 / 15.0),
                  std::abs(dice - 0.2667), sm.iou, sm.dice)};
}

Outcome head_isolation() {
  const auto t0 = Clock::now();
  const NetConfig cfg;
  const auto samples = generate_synthetic(4, cfg.input_size, 11);
  std::vector<const Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  const Batch batch = make_batch(ptrs);
  FocalParams fp;
  fp.alpha.assign(cfg.num_classes, 1.0);

  auto max_abs = [](const std::vector<Tensor>& ts) {
    double m = 0.0;
    for (const auto& t : ts)
      for (double g : t.grad()) m = std::max(m, std::abs(g));
    return m;
  };
  double frozen[2], moving[2];
  for (int i = 0; i < 2; ++i) {
    const double lambda = i == 0 ? 1.0 : 0.0;
    const MultiTaskNet net = init_params(cfg, 1);
    Rng rng(2);
    const NetOutput out = net.forward(batch.images, true, rng);
    const Tensor total = total_loss(dice_loss(out.seg_logits, batch.masks, 1e-6),
                                    focal_loss(out.cls_logits, batch.labels, fp), {lambda, 1e-6});
    backward(total);
    frozen[i] = max_abs(i == 0 ? net.classifier_params() : net.decoder_params());
    moving[i] = max_abs(i == 0 ? net.decoder_params() : net.classifier_params());
  }
  const double secs = seconds_since(t0);
  return {frozen[0] == 0.0 && frozen[1] == 0.0 && moving[0] > 0.0 && moving[1] > 0.0 && secs < 5.0,
          fmt("lambda=1 max|grad cls| %g (decoder %.3g); lambda=0 max|grad decoder| %g (cls %.3g); "
              "%.2f s",
              frozen[0], moving[0], frozen[1], moving[1], secs)};
}

Outcome overfit_oracle() {
  const auto t0 = Clock::now();
  const NetConfig cfg;
  // one sample of each class plus one more lesion
  std::vector<Sample> pool = generate_synthetic(12, 64, 5);
  std::vector<Sample> four;
  std::set<int> seen;
  for (const auto& s : pool)
    if (seen.insert(s.label).second) four.push_back(s);
  for (const auto& s : pool)
    if (four.size() < 4 && s.label != static_cast<int>(Label::Normal) &&
        std::none_of(four.begin(), four.end(), [&](const Sample& f) { return f.id == s.id; }))
      four.push_back(s);
  std::vector<const Sample*> ptrs;
  std::vector<int> labels;
  for (const auto& s : four) {
    ptrs.push_back(&s);
    labels.push_back(s.label);
  }
  const Batch batch = make_batch(ptrs);

  TrainConfig tc;  // lr 1e-4, wd 1e-5, lambda 0.7
  MultiTaskNet net = init_params(cfg, 0);
  FocalParams fp;
  fp.alpha = inverse_frequency_alpha(labels, cfg.num_classes);
  const auto params = net.param_groups();
  AdamState adam;
  Rng rng(derive_seed(0, 0xd409));
  double loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    const NetOutput out = net.forward(batch.images, true, rng);
    const Tensor total = total_loss(dice_loss(out.seg_logits, batch.masks, tc.dice_eps),
                                    focal_loss(out.cls_logits, batch.labels, fp), {tc.lambda, tc.dice_eps});
    loss = total.item();
    backward(total);
    adam_step(params, adam, tc.lr, tc.weight_decay);
  }
  // loss reported at step 200 is the training-mode loss before the last update
  const auto eval = [&] {
    NoGradGuard ng;
    Rng r(0);
    return net.forward(batch.images, false, r);
  }();
  const auto sm = seg_metrics(binarize(sigmoid(eval.seg_logits), 0.5), batch.masks);
  const double secs = seconds_since(t0);
  return {loss < 0.05 && sm.iou > 0.9 && secs < 300.0,
          fmt("loss at step 200 %.4f (need < 0.05), train-mask IoU %.4f (need > 0.9), %.1f s", loss,
              sm.iou, secs)};
}

Outcome desk_scale(const DeskScale& d, const fs::path& dir, GridCell& cell_out) {
  const auto t0 = Clock::now();
  MultiTaskNet net = init_params(d.net, 0);
  TrainConfig tc = d.train_cfg();
  tc.checkpoint_dir = dir;
  const TrainResult r = train(net, d.samples, d.split_, tc);
  const double secs = seconds_since(t0);
  std::ofstream(dir / "history.csv") << history_csv(r.history);
  cell_out = {tc.lambda, r.final_report, r.history};
  const auto& m = r.final_report;
  return {m.seg_dice > 0.80 && m.accuracy > 0.85 && secs < 1800.0,
          fmt("test dice %.4f (need > 0.80), accuracy %.4f (need > 0.85), cls F1 %.4f, %.1f min",
              m.seg_dice, m.accuracy, m.cls_f1_macro, secs / 60.0)};
}

Outcome grid(const DeskScale& d, const fs::path& dir, const GridCell* lambda07) {
  const auto t0 = Clock::now();
  std::vector<double> lambdas;
  for (double l : default_lambda_grid())
    if (!(lambda07 && std::abs(l - 0.7) < 1e-12)) lambdas.push_back(l);
  auto cells = grid_search_lambda(d.net, d.samples, d.split_, d.train_cfg(), lambdas, 1);
  // the 0.7 cell is exactly the criterion 6 run
  if (lambda07) {
    cells.push_back(*lambda07);
    std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.lambda < b.lambda; });
  }
  std::ofstream(dir / "grid.csv") << grid_csv(cells);
  std::cout << "    lambda  accuracy  cls_f1  iou     dice    overall\n";
  double best_f1 = 0.0, best_dice = 0.0;
  for (const auto& c : cells) {
    const auto& m = c.report;
    std::cout << fmt("    %.1f     %.4f    %.4f  %.4f  %.4f  %.4f\n", c.lambda, m.accuracy, m.cls_f1_macro,
                     m.seg_iou, m.seg_dice, m.overall);
    best_f1 = std::max(best_f1, m.cls_f1_macro);
    best_dice = std::max(best_dice, m.seg_dice);
  }
  const double f1_09 = cells.back().report.cls_f1_macro;
  const double dice_01 = cells.front().report.seg_dice;
  const std::size_t b = best_cell(cells);
  return {cells.size() == 9 && f1_09 < best_f1 && dice_01 < best_dice,
          fmt("%zu cells, best overall at lambda %.1f; cls F1 at 0.9 %.4f vs best %.4f; dice at 0.1 "
              "%.4f vs best %.4f; %.1f min",
              cells.size(), cells[b].lambda, f1_09, best_f1, dice_01, best_dice, seconds_since(t0) / 60.0)};
}

Outcome determinism(const fs::path& dir) {
  std::ostringstream sink;
  auto cli = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "mtnet");
    return cli::run(args, sink, sink);
  };
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "net.base_width = 8\nnet.input_size = 32\ntrain.epochs = 3\n"
                                    "train.batch_size = 8\ntrain.lr = 0.001\n";
  const std::string data = (dir / "data").string(), cfg = (dir / "run.cfg").string();
  bool ok = cli({"generate", "--out", data, "--n", "40", "--size", "32", "--seed", "3"}) == 0;
  ok = ok && cli({"train", "--data", data, "--config", cfg, "--out", (dir / "a").string()}) == 0;
  ok = ok && cli({"train", "--data", data, "--config", cfg, "--out", (dir / "b").string()}) == 0;
  if (!ok) return {false, "cli run failed: " + sink.str()};
  const std::string ha = slurp(dir / "a" / "history.csv"), hb = slurp(dir / "b" / "history.csv");
  const bool same_history = !ha.empty() && ha == hb;

  // reload and re-evaluate in process
  const BusiDataset ds = load_busi_dir(data, 32);
  const DatasetSplit sp = split(ds.samples, 0.8, 0);
  MultiTaskNet net = init_params([] {
    NetConfig c;
    c.base_width = 8;
    c.input_size = 32;
    return c;
  }(), 0);
  TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 1e-3;
  tc.checkpoint_dir = dir / "c";
  const TrainResult r = train(net, ds.samples, sp, tc);
  const MetricsReport again = evaluate(load_checkpoint(dir / "c" / "last.ckpt"), ds.samples, sp.test, tc.batch_size);
  const bool same_metrics = again == r.final_report;
  return {same_history && same_metrics,
          fmt("history CSV byte-identical: %s (%zu bytes); checkpoint round-trip metrics identical: %s",
              same_history ? "yes" : "no", ha.size(), same_metrics ? "yes" : "no")};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(909);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Shape s{1 + rng() % 3, 1, 4 + rng() % 30, 4 + rng() % 30};
    const auto p = random_mask(shape_numel(s), 0.35, rng), g = random_mask(shape_numel(s), 0.35, rng);
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      tp += p[i] == 1.0 && g[i] == 1.0;
      fp += p[i] == 1.0 && g[i] == 0.0;
      fn += p[i] == 0.0 && g[i] == 1.0;
    }
    const double u = static_cast<double>(tp + fp + fn);
    const auto m = seg_metrics(Tensor(s, p), Tensor(s, g));
    if (m.iou != (u == 0 ? 1.0 : tp / u) || m.dice != (u == 0 ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn)))
      ++mismatches;
  }
  const auto two = classify_metrics(ConfusionMatrix({{2, 1}, {0, 1}}));
  const auto three = classify_metrics(ConfusionMatrix({{4, 1, 0}, {2, 3, 1}, {0, 0, 5}}));
  const double f1a = (0.8 + 2.0 * 0.5 / 1.5) / 2.0;
  const double f1b = (2.0 * (4.0 / 6.0) * 0.8 / (4.0 / 6.0 + 0.8) + 2.0 * 0.75 * 0.5 / 1.25 +
                      2.0 * (5.0 / 6.0) / (5.0 / 6.0 + 1.0)) / 3.0;
  const bool fixtures = two.accuracy == 0.75 && std::abs(two.f1_macro - f1a) < 1e-15 &&
                        three.accuracy == 0.75 && std::abs(three.f1_macro - f1b) < 1e-15;
  return {mismatches == 0 && fixtures,
          fmt("seg oracle mismatches %d/100; confusion fixtures %s (macro F1 %.4f, %.4f)", mismatches,
              fixtures ? "exact" : "WRONG", two.f1_macro, three.f1_macro)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtnet acceptance criteria"};
  fs::path workdir = fs::temp_directory_path() / "mtnet_acceptance";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Directory for experiment artifacts");
  app.add_option("--only", only, "Run only these criteria (1-9)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  auto selected = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
  int failures = 0;
  auto report = [&](int k, const char* name, const std::function<Outcome()>& fn) {
    if (!selected(k)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << name << "): " << o.detail
              << std::endl;
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "loss identities", loss_identities);
  report(3, "hand oracles", hand_oracles);
  report(4, "head isolation", head_isolation);
  report(5, "overfit oracle", overfit_oracle);

  std::optional<DeskScale> desk;
  std::optional<GridCell> cell07;
  if (selected(6) || selected(7)) desk.emplace();
  report(6, "desk-scale experiment", [&] {
    fs::create_directories(workdir / "desk_scale");
    GridCell c;
    Outcome o = desk_scale(*desk, workdir / "desk_scale", c);
    cell07 = c;
    return o;
  });
  report(7, "lambda grid", [&] {
    fs::create_directories(workdir / "grid");
    return grid(*desk, workdir / "grid", cell07 ? &*cell07 : nullptr);
  });
  report(8, "determinism", [&] { return determinism(workdir / "determinism"); });
  report(9, "metric oracles", metric_oracles);

  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
