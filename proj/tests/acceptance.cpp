// End-to-end acceptance run: prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Usage: acceptance WORK_DIR
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "oracles.hpp"

using namespace conflictnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Runs the CLI with the caller's thread setting removed so child processes use
// every core; stdout goes to log.
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      "env -u CONFLICTNET_THREADS " + std::string(CONFLICTNET_CLI) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text_file(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
    rows.push_back(cols);
  }
  return rows;
}

// Drops the named column; used to compare files whose only varying field is
// wall-clock time.
std::vector<std::vector<std::string>> without_column(std::vector<std::vector<std::string>> rows,
                                                     const std::string& name) {
  if (rows.empty()) return rows;
  const auto it = std::find(rows[0].begin(), rows[0].end(), name);
  if (it == rows[0].end()) return rows;
  const auto idx = static_cast<std::size_t>(it - rows[0].begin());
  for (auto& r : rows)
    if (idx < r.size()) r.erase(r.begin() + static_cast<long>(idx));
  return rows;
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const std::vector<std::string> layers{"dense",       "conv2d",           "maxpool",          "dropout",
                                        "lstm_step",   "bilstm",           "attention_softmax", "attention_linear",
                                        "softmax_ce",  "time_distributed"};
  double worst = 0;
  std::string failed;
  for (const auto& layer : layers) {
    const auto r = run_gradcheck(layer, 0, 10);
    worst = std::max(worst, r.max_rel_err);
    if (!r.passed()) failed += " " + layer + "(" + fmt("%.2e", r.max_rel_err) + ")";
  }
  const double secs = seconds_since(t0);
  const bool ok = failed.empty() && secs < 120.0;
  return {ok, std::to_string(layers.size()) + " layers x 10 seeds, h=" + format_double(kGradCheckStep) +
                  ", max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f", secs) + " s on 1 thread" +
                  (failed.empty() ? "" : "; failing:" + failed)};
}

Outcome model_gradcheck() {
  const auto r = run_gradcheck("model", 0, 3);
  return {r.passed(), "T=3, 8x8x3, 4 LSTM units, 3 seeds: max rel err " + fmt("%.2e", r.max_rel_err) + " over " +
                          std::to_string(r.checked) + " coordinates (" + std::to_string(r.skipped) +
                          " skipped at activation kinks), step " + format_double(kModelGradCheckStep)};
}

Outcome oracle_equivalence() {
  Rng rng(2024);
  double conv = 0, pool = 0, lstm = 0;
  std::size_t confusion_mismatches = 0;
  const int cases = 100;
  for (int rep = 0; rep < cases; ++rep) {
    const std::size_t k = 1 + 2 * rng.below(3), c = 1 + rng.below(8), f = 1 + rng.below(8);
    const std::size_t h = k + rng.below(9 - k), w = k + rng.below(9 - k), b = 1 + rng.below(4);
    const std::size_t stride = 1 + rng.below(2);
    const Padding pad = rng.uniform() < 0.5 ? Padding::same : Padding::valid;
    LayerState s = init_conv2d("c", k, c, f, rng);
    s.param("bias") = random_tensor({f}, rng);
    const Tensor x = random_tensor({b, h, w, c}, rng);
    const Tensor y = conv2d_forward(x, s, stride, pad);
    const Tensor ref = oracles::conv_oracle(x, s.param("kernel"), s.param("bias"), stride, pad);
    conv = std::max(conv, y.shape() == ref.shape() ? max_abs_diff(y, ref) : INFINITY);
  }
  for (int rep = 0; rep < cases; ++rep) {
    const std::size_t win = 1 + rng.below(3), stride = 1 + rng.below(3);
    const std::size_t h = win + rng.below(9 - win), w = win + rng.below(9 - win);
    const Tensor x = random_tensor({1 + rng.below(4), h, w, 1 + rng.below(8)}, rng);
    LayerState s("p");
    const Tensor y = maxpool_forward(x, win, stride, s);
    const Tensor ref = oracles::maxpool_oracle(x, win, stride);
    pool = std::max(pool, y.shape() == ref.shape() ? max_abs_diff(y, ref) : INFINITY);
  }
  for (int rep = 0; rep < cases; ++rep) {
    const std::size_t batch = 1 + rng.below(4), steps = 1 + rng.below(8), in = 1 + rng.below(8),
                      u = 1 + rng.below(8);
    LayerState fw = init_lstm("f", in, u, rng), bw = init_lstm("b", in, u, rng);
    for (auto* s : {&fw, &bw}) s->param("bias") = random_tensor({4 * u}, rng);
    const Tensor x = random_tensor({batch, steps, in}, rng, -2, 2);
    const Tensor y = bilstm_forward(x, fw, bw);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto ref = oracles::bilstm_oracle(oracles::sequence(x, i), fw, bw);
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t j = 0; j < 2 * u; ++j) lstm = std::max(lstm, std::abs(y.at(i, t, j) - ref[t][j]));
    }
  }
  for (int rep = 0; rep < cases; ++rep) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<int> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(2));
      p[i] = static_cast<int>(rng.below(2));
    }
    confusion_mismatches += confusion(y, p).counts != oracles::confusion_oracle(y, p);
  }
  const double tol = 1e-12;
  const bool ok = conv <= tol && pool <= tol && lstm <= tol && confusion_mismatches == 0;
  return {ok, "100 cases each: conv2d " + fmt("%.1e", conv) + ", maxpool " + fmt("%.1e", pool) + ", bilstm " +
                  fmt("%.1e", lstm) + ", confusion mismatches " + std::to_string(confusion_mismatches)};
}

Outcome attention_invariants() {
  Rng rng(77);
  double sum_err = 0, perm_err = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t b = 1 + rng.below(3), t = 1 + rng.below(12), d = 1 + rng.below(8);
    LayerState s = init_attention("a", d, rng);
    s.param("bias")[0] = rng.uniform(-1, 1);
    const Tensor xs = random_tensor({b, t, d}, rng, -3, 3);
    const auto out = attention_forward(xs, s, AttentionNorm::softmax);
    for (std::size_t i = 0; i < b; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < t; ++j) sum += out.weights.at(i, j);
      sum_err = std::max(sum_err, std::abs(sum - 1.0));
    }
    std::vector<std::size_t> perm(t);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor shuffled({b, t, d});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < t; ++j)
        for (std::size_t k = 0; k < d; ++k) shuffled.values()[(i * t + j) * d + k] = xs.at(i, perm[j], k);
    perm_err = std::max(perm_err, max_abs_diff(out.context, attention_forward(shuffled, s).context));
  }
  bool raised = false;
  {
    LayerState s = init_attention("a", 4, rng);
    s.param("weight").fill(0.0);
    try {
      attention_forward(random_tensor({2, 5, 4}, rng), s, AttentionNorm::linear);
    } catch (const DegenerateNormalizationError&) {
      raised = true;
    }
  }
  const bool ok = sum_err <= 1e-9 && perm_err <= 1e-12 && raised;
  return {ok, "softmax weight-sum err " + fmt("%.1e", sum_err) + ", permutation err " + fmt("%.1e", perm_err) +
                  ", linear degenerate sum " + (raised ? "raises" : "does NOT raise")};
}

Outcome desk_learning(const fs::path& work) {
  const fs::path data = work / "desk_data", run = work / "desk_run";
  if (cli("synth --out " + data.string() + " --clips-per-class 200 --frames 15 --size 32x32 --seed 0",
          work / "desk_synth.log") != 0)
    return {false, "synth failed, see " + (work / "desk_synth.log").string()};
  write_text_file(work / "desk.cfg",
                  "seq_len=15\nframe_h=32\nframe_w=32\nbackbone=small-a\nuse_attention=true\n"
                  "min_lr=0.00005\nbatch_size=16\nmax_epochs=30\n");
  const auto t0 = Clock::now();
  const int code = cli("train --data " + data.string() + " --config " + (work / "desk.cfg").string() + " --out " +
                           run.string() + " --seed 0",
                       work / "desk_train.log");
  const double secs = seconds_since(t0);
  if (code != 0) return {false, "train exited " + std::to_string(code) + ", see " + (work / "desk_train.log").string()};
  const auto report = read_csv(run / "report.csv");
  const double acc = std::stod(report[1][5]), f0 = std::stod(report[1][6]), f1 = std::stod(report[1][7]);
  const std::size_t epochs = read_csv(run / "stats.csv").size() - 1;
  const bool ok = acc >= 0.90 && f0 >= 0.85 && f1 >= 0.85 && epochs <= 30 && secs < 900.0;
  return {ok, "test acc " + fmt("%.4f", acc) + ", F1 " + fmt("%.4f", f0) + "/" + fmt("%.4f", f1) + ", " +
                  std::to_string(epochs) + " epochs, " + fmt("%.0f", secs) + " s wall on " +
                  std::to_string(std::thread::hardware_concurrency()) + " core(s)"};
}

Outcome grid_protocol(const fs::path& work) {
  const fs::path data = work / "grid_data";
  if (cli("synth --out " + data.string() + " --clips-per-class 60 --frames 15 --size 32x32 --seed 1",
          work / "grid_synth.log") != 0)
    return {false, "synth failed"};
  std::vector<std::vector<std::vector<std::string>>> tables;
  for (const char* tag : {"grid_a", "grid_b"}) {
    const int code = cli("grid --data " + data.string() + " --out " + (work / tag).string() + " --scale desk --seed 5",
                         work / (std::string(tag) + ".log"));
    if (code != 0) return {false, std::string(tag) + " exited " + std::to_string(code)};
    tables.push_back(read_csv(work / tag / "grid.csv"));
  }
  const auto& rows = tables[0];
  bool structure = rows.size() == 13 && rows[0].size() == 9;
  std::set<std::tuple<std::string, std::string, std::string, std::string>> cells;
  for (std::size_t i = 1; structure && i < rows.size(); ++i) {
    structure = rows[i].size() == 9 && rows[i][5] != "failed";
    if (structure) cells.insert({rows[i][1], rows[i][2], rows[i][3], rows[i][4]});
  }
  std::set<std::string> backbones, pairs;
  for (const auto& [bb, att, lr, bs] : cells) {
    backbones.insert(bb);
    pairs.insert(lr + "/" + bs);
  }
  structure = structure && cells.size() == 12 && backbones.size() == 3 && pairs.size() == 2 &&
              pairs.count("0.000500/128") && pairs.count("0.000050/64");
  const bool same_rows = without_column(tables[0], "seconds") == without_column(tables[1], "seconds");
  bool same_ckpts = true;
  for (int id = 1; id <= 12; ++id) {
    char dir[16];
    std::snprintf(dir, sizeof(dir), "run_%02d", id);
    same_ckpts = same_ckpts && read_text_file(work / "grid_a" / dir / "best.ckpt") ==
                                   read_text_file(work / "grid_b" / dir / "best.ckpt");
  }
  return {structure && same_rows && same_ckpts,
          std::to_string(rows.size() - 1) + " rows, " + std::to_string(cells.size()) + " distinct cells (" +
              std::to_string(backbones.size()) + " backbones x attention x " + std::to_string(pairs.size()) +
              " lr/batch pairs); repeat run " + (same_rows ? "identical" : "DIFFERS") +
              " except the seconds column, checkpoints " + (same_ckpts ? "identical" : "DIFFER")};
}

// Mean seconds per epoch of fixed-length training, best of `repeats`.
double epoch_seconds(const ExperimentData& data, RunConfig cfg, int repeats) {
  double best = INFINITY;
  for (int r = 0; r < repeats; ++r) {
    Rng init = Rng(cfg.train.seed).substream("init");
    const FitResult fr = fit(Model::build(cfg.model, init), data.train, data.val, cfg.train);
    double total = 0;
    for (const auto& e : fr.stats) total += e.seconds;
    best = std::min(best, total / static_cast<double>(fr.stats.size()));
  }
  return best;
}

Outcome timing(const fs::path& work) {
  const fs::path data = work / "timing_data";
  if (cli("synth --out " + data.string() + " --clips-per-class 160 --frames 15 --size 32x32 --seed 2",
          work / "timing_synth.log") != 0)
    return {false, "synth failed"};
  RunConfig cfg = grid_base_config(GridScale::desk);
  cfg.train.max_epochs = 3;
  cfg.train.early_stop_patience = 100;
  const auto splits = split_for_seed(read_manifest(data), 0);
  const auto loaded = ExperimentData::load(splits, cfg.model);

  auto variant = [&](bool attention, std::size_t batch) {
    RunConfig c = cfg;
    c.model.use_attention = attention;
    c.train.batch_size = batch;
    return epoch_seconds(loaded, c, 3);
  };
  const double off = variant(false, 64), on = variant(true, 64);
  const double b64 = on, b128 = variant(true, 128);
  const double rel = std::abs(on - off) / off;
  const bool ok = rel < 0.20 && b64 < b128;
  return {ok, "per-epoch s: attention off " + fmt("%.3f", off) + ", on " + fmt("%.3f", on) + " (" +
                  fmt("%.1f", 100 * rel) + "% diff); batch 64 " + fmt("%.3f", b64) + " vs batch 128 " +
                  fmt("%.3f", b128) + " over " + std::to_string(cfg.train.max_epochs) + " equal epochs"};
}

Outcome reproducibility(const fs::path& work) {
  const fs::path data = work / "grid_data";
  write_text_file(work / "repro.cfg", "frame_h=16\nframe_w=16\nframe_feature_dim=32\nlstm_units=16\ndense_head=16\n"
                                      "max_epochs=4\nbatch_size=16\n");
  for (const char* tag : {"repro_a", "repro_b"})
    if (cli("train --data " + data.string() + " --config " + (work / "repro.cfg").string() + " --out " +
                (work / tag).string() + " --seed 11",
            work / (std::string(tag) + ".log")) != 0)
      return {false, std::string(tag) + " train failed"};
  const auto a = read_csv(work / "repro_a" / "stats.csv"), b = read_csv(work / "repro_b" / "stats.csv");
  const bool raw = read_text_file(work / "repro_a" / "stats.csv") == read_text_file(work / "repro_b" / "stats.csv");
  const bool stats = without_column(a, "seconds") == without_column(b, "seconds");
  const bool ckpt =
      read_text_file(work / "repro_a" / "best.ckpt") == read_text_file(work / "repro_b" / "best.ckpt");
  const bool preds =
      read_text_file(work / "repro_a" / "predictions.csv") == read_text_file(work / "repro_b" / "predictions.csv");
  return {stats && ckpt && preds,
          std::string("stats.csv ") + (stats ? "identical" : "DIFFERS") + " in every column but wall-clock seconds" +
              (raw ? " (byte-identical)" : " (seconds differ, as expected of wall-clock time)") + "; best.ckpt " +
              (ckpt ? "byte-identical" : "DIFFERS") + "; predictions " + (preds ? "identical" : "DIFFER")};
}

Outcome checkpoint_round_trip(const fs::path& work) {
  RunConfig cfg = grid_base_config(GridScale::desk);
  Rng init(9);
  Model m = Model::build(cfg.model, init);
  Rng data_rng(10);
  const Tensor batch =
      random_tensor({4, cfg.model.seq_len, cfg.model.frame_h, cfg.model.frame_w, 3}, data_rng, 0.0, 1.0);
  Rng unused(0);
  const Tensor before = m.forward(batch, false, unused);
  save_model(m, work / "roundtrip.ckpt");
  Model loaded = load_model(work / "roundtrip.ckpt");
  const Tensor after = loaded.forward(batch, false, unused);
  const bool exact = before.shape() == after.shape() &&
                     std::memcmp(before.data(), after.data(), before.size() * sizeof(double)) == 0;
  return {exact, "4-clip batch, " + std::to_string(before.size()) + " outputs " +
                     (exact ? "bit-identical" : "DIFFER (max " + fmt("%.1e", max_abs_diff(before, after)) + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: acceptance WORK_DIR\n";
    return 2;
  }
  // In-process checks run on a single thread; the CLI children do not inherit this.
  ::setenv("CONFLICTNET_THREADS", "1", 1);
  const fs::path work = argv[1];
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"layer gradient suite", gradient_suite},
      {"tiny model end-to-end gradient", model_gradcheck},
      {"oracle equivalence", oracle_equivalence},
      {"attention invariants", attention_invariants},
      {"desk-scale learning", [&] { return desk_learning(work); }},
      {"grid protocol", [&] { return grid_protocol(work); }},
      {"timing", [&] { return timing(work); }},
      {"reproducibility", [&] { return reproducibility(work); }},
      {"checkpoint round-trip", [&] { return checkpoint_round_trip(work); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %zu %-32s %s  %s [%.0f s]\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures ? 1 : 0;
}
