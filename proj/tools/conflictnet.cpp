// conflictnet command-line entry point.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "conflictnet/conflictnet.hpp"

namespace cn = conflictnet;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

void print_config(const std::string& title, const cn::KeyValues& kvs) {
  std::cout << "# " << title << "\n" << cn::format_key_values(kvs) << std::flush;
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw cn::ConfigError("size", "expected HxW, got '" + text + "'");
  return {cn::parse_uint("size", text.substr(0, x)), cn::parse_uint("size", text.substr(x + 1))};
}

std::string predictions_csv(const std::vector<cn::EpochStats>& stats) {
  std::string out = "epoch,split,position,label,prediction\n";
  auto rows = [&out](std::size_t epoch, const char* split, const std::vector<int>& labels, const std::vector<int>& pred) {
    for (std::size_t i = 0; i < labels.size(); ++i)
      out += std::to_string(epoch) + "," + split + "," + std::to_string(i) + "," + std::to_string(labels[i]) + "," +
             std::to_string(pred[i]) + "\n";
  };
  for (const auto& s : stats) {
    rows(s.epoch, "train", s.train_labels, s.train_predictions);
    rows(s.epoch, "val", s.val_labels, s.val_predictions);
  }
  return out;
}

void print_evaluation(const cn::ConfusionMatrix& cm) {
  const auto f1 = cn::f1_per_class(cm);
  std::printf("clips=%zu\naccuracy=%s\nf1_class0=%s\nf1_class1=%s\n", cm.total(), cn::fixed6(cm.accuracy()).c_str(),
              cn::fixed6(f1[0]).c_str(), cn::fixed6(f1[1]).c_str());
  std::cout << cn::confusion_csv(cm) << std::flush;
}

struct SynthArgs {
  std::string out;
  std::size_t clips_per_class = 50;
  std::size_t frames = 15;
  std::string size = "32x32";
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  cn::SynthSpec spec;
  spec.clips_per_class = a.clips_per_class;
  spec.frames = a.frames;
  std::tie(spec.height, spec.width) = parse_size(a.size);
  spec.seed = a.seed;
  spec.validate();
  print_config("synth", {{"out", a.out},
                         {"clips_per_class", std::to_string(spec.clips_per_class)},
                         {"frames", std::to_string(spec.frames)},
                         {"size", std::to_string(spec.height) + "x" + std::to_string(spec.width)},
                         {"seed", std::to_string(spec.seed)}});
  const auto m = cn::generate_synthetic(spec, a.out);
  std::cout << (m.root / "manifest.csv").string() << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data, config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  cn::RunConfig cfg;
  if (!a.config.empty()) cfg.apply(cn::read_text_file(a.config));
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.validate();
  print_config("resolved config", cn::parse_key_values(cfg.to_text()));
  const auto manifest = cn::read_manifest(a.data);
  const auto splits = cn::split_for_seed(manifest, cfg.train.seed);
  const auto data = cn::ExperimentData::load(splits, cfg.model);
  std::printf("clips: train=%zu val=%zu test=%zu\n", data.train.size(), data.val.size(), data.test.size());
  const auto res = cn::run_experiment(cfg, data, 1, a.out);
  cn::write_text_file(fs::path(a.out) / "predictions.csv", predictions_csv(res.fit.stats));
  std::cout << cn::stats_csv(res.fit.stats);
  std::printf("best_epoch=%zu\n", res.fit.best_epoch);
  print_evaluation(res.report.confusion);
  return kOk;
}

struct EvalArgs {
  std::string model, data, split = "all";
  std::optional<std::uint64_t> seed;
};

int cmd_eval(const EvalArgs& a) {
  cn::Model model = cn::load_model(a.model);
  const auto manifest = cn::read_manifest(a.data);
  cn::Manifest subset = manifest;
  if (a.split != "all") {
    if (!a.seed) throw cn::ConfigError("seed", "--split requires the training seed (--seed or CONFLICTNET_SEED)");
    const auto splits = cn::split_for_seed(manifest, *a.seed);
    subset = a.split == "train" ? splits.train : (a.split == "val" ? splits.val : splits.test);
  }
  cn::KeyValues shown = model.config().to_key_values();
  shown.insert(shown.begin(), {{"model", a.model}, {"data", a.data}, {"split", a.split}});
  print_config("resolved config", shown);
  const auto& mc = model.config();
  const cn::ClipStore store(subset, mc.seq_len, mc.frame_h, mc.frame_w);
  const auto ev = cn::evaluate(model, store, 32);
  std::printf("loss=%s\n", cn::fixed6(ev.loss).c_str());
  print_evaluation(cn::confusion(ev.labels, ev.predictions));
  return kOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::string layer;
  std::size_t seeds = 10;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  std::vector<std::string> layers = cn::gradcheck_layers();
  if (!a.layer.empty()) {
    if (std::find(layers.begin(), layers.end(), a.layer) == layers.end())
      throw cn::ConfigError("layer", "unknown layer '" + a.layer + "'");
    layers = {a.layer};
  }
  print_config("gradcheck", {{"seed", std::to_string(a.seed)},
                             {"seeds", std::to_string(a.seeds)},
                             {"layer", a.layer.empty() ? "all" : a.layer},
                             {"step", cn::format_double(cn::kGradCheckStep)},
                             {"model_step", cn::format_double(cn::kModelGradCheckStep)},
                             {"tolerance", cn::format_double(cn::kGradCheckTolerance)}});
  std::printf("%-18s %6s %9s %8s %14s  %-6s %s\n", "layer", "seeds", "checked", "skipped", "max_rel_err", "status",
              "worst");
  bool ok = true;
  for (const auto& layer : layers) {
    const auto r = cn::run_gradcheck(layer, a.seed, a.seeds);
    std::printf("%-18s %6zu %9zu %8zu %14.3e  %-6s %s\n", layer.c_str(), r.seeds, r.checked, r.skipped, r.max_rel_err,
                r.passed() ? "ok" : "FAIL", r.worst.c_str());
    ok = ok && r.passed();
  }
  return ok ? kOk : kNumeric;
}

struct GridArgs {
  std::string data, out, scale = "desk", config;
  std::uint64_t seed = 0;
  std::optional<std::size_t> max_epochs;
};

int cmd_grid(const GridArgs& a) {
  cn::RunConfig base = cn::grid_base_config(cn::parse_grid_scale(a.scale));
  if (!a.config.empty()) base.apply(cn::read_text_file(a.config));
  if (a.max_epochs) base.train.max_epochs = *a.max_epochs;
  base.train.seed = a.seed;
  base.validate();
  cn::KeyValues shown = cn::parse_key_values(base.to_text());
  shown.insert(shown.begin(), {{"scale", a.scale}, {"master_seed", std::to_string(a.seed)}});
  print_config("resolved base config (backbone, use_attention, min_lr, batch_size and seed vary per run)", shown);
  const auto manifest = cn::read_manifest(a.data);
  std::cout << cn::kGridHeader << "\n" << std::flush;
  const auto reports = cn::run_grid(manifest, base, a.seed, a.out,
                                    [](const cn::RunReport& r) { std::cout << cn::report_row(r) << "\n" << std::flush; });
  std::cout << (fs::path(a.out) / "grid.csv").string() << "\n";
  const bool any_failed = std::any_of(reports.begin(), reports.end(), [](const auto& r) { return r.failed(); });
  return any_failed ? kNumeric : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conflictnet: CNN + BiLSTM + attention clip classifier"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a seeded synthetic clip dataset");
  s->add_option("--out", synth.out, "Output dataset directory")->required();
  s->add_option("--clips-per-class", synth.clips_per_class, "Clips per class")->capture_default_str();
  s->add_option("--frames", synth.frames, "Frames per clip (>= 2)")->capture_default_str();
  s->add_option("--size", synth.size, "Frame size HxW")->capture_default_str();
  s->add_option("--seed", synth.seed, "Generator seed")->envname("CONFLICTNET_SEED")->capture_default_str();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Split, train, evaluate and write a run directory");
  t->add_option("--data", train.data, "Dataset directory containing manifest.csv")->required();
  t->add_option("--config", train.config, "key=value config file (model and training keys)");
  t->add_option("--out", train.out, "Run output directory")->required();
  t->add_option("--seed", train.seed, "Run seed (overrides the config file)")->envname("CONFLICTNET_SEED");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--model", eval.model, "Checkpoint file (best.ckpt)")->required();
  e->add_option("--data", eval.data, "Dataset directory containing manifest.csv")->required();
  e->add_option("--split", eval.split, "Subset to evaluate: all, train, val or test")
      ->check(CLI::IsMember({"all", "train", "val", "test"}))
      ->capture_default_str();
  e->add_option("--seed", eval.seed, "Training seed that produced the split")->envname("CONFLICTNET_SEED");

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Check analytic gradients against central differences");
  g->add_option("--seed", gc.seed, "Base seed")->envname("CONFLICTNET_SEED")->capture_default_str();
  g->add_option("--layer", gc.layer, "Only check this layer")->check(CLI::IsMember(cn::gradcheck_layers()));
  g->add_option("--seeds", gc.seeds, "Random cases per layer")->check(CLI::PositiveNumber)->capture_default_str();

  GridArgs grid;
  auto* r = app.add_subcommand("grid", "Run the 12-run backbone x attention x (min_lr, batch_size) grid");
  r->add_option("--data", grid.data, "Dataset directory containing manifest.csv")->required();
  r->add_option("--out", grid.out, "Grid output directory")->required();
  r->add_option("--seed", grid.seed, "Master seed")->envname("CONFLICTNET_SEED")->capture_default_str();
  r->add_option("--scale", grid.scale, "desk or full")->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
  r->add_option("--config", grid.config, "key=value overrides for the base config");
  r->add_option("--max-epochs", grid.max_epochs, "Override max_epochs for every run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train);
    if (*e) return cmd_eval(eval);
    if (*g) return cmd_gradcheck(gc);
    if (*r) return cmd_grid(grid);
  } catch (const cn::ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kUsage;
  } catch (const cn::NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return kNumeric;
  } catch (const cn::DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const cn::CheckpointError& err) {
    std::cerr << "checkpoint error: " << err.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  } catch (const cn::DimensionError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kData;
  }
  return kUsage;
}
