// One train/evaluate/report run, and the 12-run grid over backbone,
// attention, and (min_lr, batch_size).
#pragma once

#include "conflictnet/metrics.hpp"

namespace conflictnet {

/// Decoded train/val/test clips at one model's input resolution.
struct ExperimentData {
  ClipStore train, val, test;

  static ExperimentData load(const DatasetSplits& splits, const ModelConfig& m) {
    for (auto [name, part] : {std::pair{"train", &splits.train}, {"val", &splits.val}, {"test", &splits.test}})
      if (part->empty())
        throw DataError(std::string(name) + " split of " + splits.train.root.string() + " is empty; the dataset has " +
                        std::to_string(splits.train.size() + splits.val.size() + splits.test.size()) +
                        " clips, too few to split");
    return {ClipStore(splits.train, m.seq_len, m.frame_h, m.frame_w),
            ClipStore(splits.val, m.seq_len, m.frame_h, m.frame_w),
            ClipStore(splits.test, m.seq_len, m.frame_h, m.frame_w)};
  }
};

inline const SplitFractions kDefaultSplit{0.8, 0.1, 0.1};

/// Splits a manifest with the run seed's "split" substream.
inline DatasetSplits split_for_seed(const Manifest& m, std::uint64_t seed) {
  return split_dataset(m, kDefaultSplit, Rng(seed).substream("split"));
}

struct ExperimentResult {
  RunReport report;
  FitResult fit;
  Evaluation test;
};

/// Builds the model from cfg (init draws from the seed's "init" substream),
/// fits it, evaluates the best epoch on the test split, and writes stats.csv,
/// best.ckpt, config.txt plus the report files to out_dir when non-empty.
inline ExperimentResult run_experiment(const RunConfig& cfg, const ExperimentData& data, int id,
                                       const std::filesystem::path& out_dir = {}) {
  cfg.validate();
  Rng init = Rng(cfg.train.seed).substream("init");
  Model model = Model::build(cfg.model, init);
  FitResult fr = fit(std::move(model), data.train, data.val, cfg.train);
  Evaluation test = evaluate(fr.model, data.test, cfg.train.batch_size);
  RunReport report = make_report(id, cfg, confusion(test.labels, test.predictions), fr.stats);
  if (!out_dir.empty()) {
    write_run_outputs(out_dir, fr, cfg);
    emit_report(report, out_dir);
  }
  return {std::move(report), std::move(fr), std::move(test)};
}

enum class GridScale { desk, full };

inline GridScale parse_grid_scale(std::string_view s) {
  if (s == "desk") return GridScale::desk;
  if (s == "full") return GridScale::full;
  throw ConfigError("scale", "expected desk or full, got '" + std::string(s) + "'");
}

/// Base configuration shared by every grid cell at the given scale.
inline RunConfig grid_base_config(GridScale scale) {
  RunConfig cfg;
  if (scale == GridScale::desk) {
    cfg.model.frame_h = 16;
    cfg.model.frame_w = 16;
    cfg.model.frame_feature_dim = 32;
    cfg.model.lstm_units = 16;
    cfg.model.dense_head = {16};
    cfg.model.dropout_rates = {0.25, 0.25};
    cfg.train.max_epochs = 6;
    cfg.train.early_stop_patience = 4;
    cfg.train.plateau_patience = 2;
  }
  return cfg;
}

struct GridCell {
  int id;
  Backbone backbone;
  bool attention;
  double min_lr;
  std::size_t batch_size;
};

/// The 12 cells in table order: attention off then on; within each, the
/// (5e-4, 128) pair then (5e-5, 64); within each, small-a, small-b, small-c.
inline std::vector<GridCell> grid_cells() {
  std::vector<GridCell> cells;
  int id = 1;
  for (bool att : {false, true})
    for (auto [lr, bs] : {std::pair{5e-4, std::size_t{128}}, std::pair{5e-5, std::size_t{64}}})
      for (auto bb : {Backbone::small_a, Backbone::small_b, Backbone::small_c}) cells.push_back({id++, bb, att, lr, bs});
  return cells;
}

inline std::uint64_t grid_run_seed(std::uint64_t master_seed, int id) {
  return Rng(master_seed).substream("grid-run", static_cast<std::uint64_t>(id)).next_u64();
}

inline constexpr const char* kGridHeader = kReportHeader;

/// Runs every cell on the same split (derived from master_seed) and writes
/// out_dir/grid.csv plus per-run directories run_01 … run_12. A failing run
/// is recorded in its row and the remaining runs proceed.
inline std::vector<RunReport> run_grid(const Manifest& manifest, const RunConfig& base, std::uint64_t master_seed,
                                       const std::filesystem::path& out_dir,
                                       const std::function<void(const RunReport&)>& on_run = {}) {
  std::filesystem::create_directories(out_dir);
  const auto splits = split_for_seed(manifest, master_seed);
  const auto data = ExperimentData::load(splits, base.model);
  std::vector<RunReport> reports;
  std::string csv = std::string(kGridHeader) + "\n";
  for (const auto& cell : grid_cells()) {
    RunConfig cfg = base;
    cfg.model.backbone = cell.backbone;
    cfg.model.use_attention = cell.attention;
    cfg.train.min_lr = cell.min_lr;
    cfg.train.batch_size = cell.batch_size;
    cfg.train.seed = grid_run_seed(master_seed, cell.id);
    char dir[16];
    std::snprintf(dir, sizeof(dir), "run_%02d", cell.id);
    RunReport report;
    try {
      report = run_experiment(cfg, data, cell.id, out_dir / dir).report;
    } catch (const std::exception& e) {
      report = make_report(cell.id, cfg, ConfusionMatrix{}, {});
      report.error = e.what();
      std::filesystem::create_directories(out_dir / dir);
      write_text_file(out_dir / dir / "error.txt", report.error + "\n");
    }
    csv += report_row(report) + "\n";
    if (on_run) on_run(report);
    reports.push_back(std::move(report));
  }
  write_text_file(out_dir / "grid.csv", csv);
  return reports;
}

}  // namespace conflictnet
