// Confusion matrix, accuracy, per-class F1, and report files.
#pragma once

#include <array>
#include <filesystem>

#include "conflictnet/data/dataset.hpp"
#include "conflictnet/training.hpp"

namespace conflictnet {

/// 2×2 counts; rows are the true class, columns the predicted class.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 2>, 2> counts{};

  std::size_t total() const noexcept { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
  std::size_t correct() const noexcept { return counts[0][0] + counts[1][1]; }
  std::size_t errors() const noexcept { return counts[0][1] + counts[1][0]; }

  double accuracy() const noexcept {
    return total() ? static_cast<double>(correct()) / static_cast<double>(total()) : 0.0;
  }
  double error_rate() const noexcept { return 1.0 - accuracy(); }

  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.size() != pred.size())
    throw DimensionError("confusion: " + std::to_string(truth.size()) + " labels vs " + std::to_string(pred.size()) +
                         " predictions");
  if (truth.empty()) throw DimensionError("confusion: no labels");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if ((truth[i] != 0 && truth[i] != 1) || (pred[i] != 0 && pred[i] != 1))
      throw DataError("confusion: label outside {0,1} at position " + std::to_string(i));
    ++cm.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(pred[i])];
  }
  return cm;
}

/// F1 of each class, 2·TP / (2·TP + FP + FN); 0 when undefined.
inline std::array<double, 2> f1_per_class(const ConfusionMatrix& cm) {
  std::array<double, 2> out{};
  for (std::size_t c = 0; c < 2; ++c) {
    const std::size_t tp = cm.counts[c][c];
    const std::size_t fp = cm.counts[1 - c][c];
    const std::size_t fn = cm.counts[c][1 - c];
    const std::size_t den = 2 * tp + fp + fn;
    out[c] = den == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(den);
  }
  return out;
}

struct RunReport {
  int id = 0;
  std::string model;
  bool use_attention = false;
  double min_lr = 0;
  std::size_t batch_size = 0;
  double accuracy = 0;
  double f1_class0 = 0;
  double f1_class1 = 0;
  ConfusionMatrix confusion;
  double seconds = 0;
  std::vector<EpochStats> epochs;
  std::string error;  // non-empty when the run failed

  bool failed() const noexcept { return !error.empty(); }
};

inline RunReport make_report(int id, const RunConfig& cfg, const ConfusionMatrix& cm, std::vector<EpochStats> epochs) {
  RunReport r;
  r.id = id;
  r.model = to_string(cfg.model.backbone);
  r.use_attention = cfg.model.use_attention;
  r.min_lr = cfg.train.min_lr;
  r.batch_size = cfg.train.batch_size;
  r.confusion = cm;
  r.accuracy = cm.accuracy();
  const auto f1 = f1_per_class(cm);
  r.f1_class0 = f1[0];
  r.f1_class1 = f1[1];
  for (const auto& e : epochs) r.seconds += e.seconds;
  r.epochs = std::move(epochs);
  return r;
}

inline constexpr const char* kReportHeader = "id,model,attention,min_lr,batch_size,accuracy,f1_class0,f1_class1,seconds";

inline std::string report_row(const RunReport& r) {
  std::string row = std::to_string(r.id) + "," + r.model + "," + (r.use_attention ? "Yes" : "No") + "," +
                    fixed6(r.min_lr) + "," + std::to_string(r.batch_size) + ",";
  if (r.failed()) return row + "failed,failed,failed," + fixed6(r.seconds);
  return row + fixed6(r.accuracy) + "," + fixed6(r.f1_class0) + "," + fixed6(r.f1_class1) + "," + fixed6(r.seconds);
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string out = "true\\predicted,nonviolence,violence\n";
  for (int t : {0, 1})
    out += std::string(class_name(t)) + "," + std::to_string(cm.counts[t][0]) + "," + std::to_string(cm.counts[t][1]) + "\n";
  return out;
}

inline std::string timing_csv(const std::vector<EpochStats>& epochs) {
  std::string out = "epoch,seconds,cumulative_seconds\n";
  double total = 0;
  for (const auto& e : epochs) {
    total += e.seconds;
    out += std::to_string(e.epoch) + "," + fixed6(e.seconds) + "," + fixed6(total) + "\n";
  }
  return out;
}

/// Accuracy and loss versus epoch, two panels, one polyline per series.
inline std::string curves_svg(const std::vector<EpochStats>& epochs) {
  constexpr double kPanelW = 400, kPanelH = 300, kMargin = 40;
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  double max_loss = 1e-9;
  for (const auto& e : epochs) max_loss = std::max({max_loss, e.train_loss, e.val_loss});
  const double n = static_cast<double>(std::max<std::size_t>(epochs.size(), 2) - 1);

  auto polyline = [&](double x0, const char* id, const char* color, double ymax, auto get) {
    std::string pts;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const double x = x0 + kMargin + (kPanelW - 2 * kMargin) * static_cast<double>(i) / n;
      const double y = kPanelH - kMargin - (kPanelH - 2 * kMargin) * std::clamp(get(epochs[i]) / ymax, 0.0, 1.0);
      pts += (i ? " " : "") + fmt(x) + "," + fmt(y);
    }
    return std::string("  <polyline id=\"") + id + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
  };
  auto panel = [&](double x0, const char* title) {
    return "  <rect x=\"" + fmt(x0 + kMargin) + "\" y=\"" + fmt(kMargin) + "\" width=\"" + fmt(kPanelW - 2 * kMargin) +
           "\" height=\"" + fmt(kPanelH - 2 * kMargin) + "\" fill=\"none\" stroke=\"#888\"/>\n" + "  <text x=\"" +
           fmt(x0 + kPanelW / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
           title + "</text>\n";
  };

  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
                    "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(2 * kPanelW) + "\" height=\"" +
                    fmt(kPanelH) + "\">\n";
  svg += panel(0, "Accuracy vs epoch");
  svg += panel(kPanelW, "Loss vs epoch");
  if (!epochs.empty()) {
    svg += polyline(0, "train_acc", "#1f77b4", 1.0, [](const EpochStats& e) { return e.train_acc; });
    svg += polyline(0, "val_acc", "#ff7f0e", 1.0, [](const EpochStats& e) { return e.val_acc; });
    svg += polyline(kPanelW, "train_loss", "#1f77b4", max_loss, [](const EpochStats& e) { return e.train_loss; });
    svg += polyline(kPanelW, "val_loss", "#ff7f0e", max_loss, [](const EpochStats& e) { return e.val_loss; });
  }
  svg += "</svg>\n";
  return svg;
}

/// Writes report.csv, confusion.csv, curves.svg and timing.csv into out_dir.
inline void emit_report(const RunReport& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir / "report.csv", std::string(kReportHeader) + "\n" + report_row(r) + "\n");
  write_text_file(out_dir / "confusion.csv", confusion_csv(r.confusion));
  write_text_file(out_dir / "curves.svg", curves_svg(r.epochs));
  write_text_file(out_dir / "timing.csv", timing_csv(r.epochs));
}

}  // namespace conflictnet
