#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <sstream>

#include "test_util.hpp"

using namespace conflictnet;
using testing_util::slurp;
using testing_util::TempDir;

namespace {

ConfusionMatrix from_counts(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  ConfusionMatrix cm;
  cm.counts = {{{a, b}, {c, d}}};
  return cm;
}

// Per-class F1 written out from precision and recall.
double f1_longhand(const ConfusionMatrix& cm, int k) {
  const double tp = static_cast<double>(cm.counts[k][k]);
  const double fp = static_cast<double>(cm.counts[1 - k][k]);
  const double fn = static_cast<double>(cm.counts[k][1 - k]);
  if (tp == 0) return 0.0;
  const double precision = tp / (tp + fp), recall = tp / (tp + fn);
  return 2 * precision * recall / (precision + recall);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, sep);) out.push_back(part);
  return out;
}

std::vector<EpochStats> sample_epochs() {
  std::vector<EpochStats> epochs;
  for (std::size_t e = 1; e <= 4; ++e) {
    EpochStats s;
    s.epoch = e;
    s.train_loss = 1.0 / static_cast<double>(e);
    s.val_loss = 1.2 / static_cast<double>(e);
    s.train_acc = 0.5 + 0.1 * static_cast<double>(e);
    s.val_acc = 0.45 + 0.1 * static_cast<double>(e);
    s.seconds = 0.25 * static_cast<double>(e);
    epochs.push_back(s);
  }
  return epochs;
}

}  // namespace

TEST(Confusion, PerfectPredictionsAreDiagonal) {
  const std::vector<int> y{0, 1, 1, 0, 1};
  const ConfusionMatrix cm = confusion(y, y);
  EXPECT_EQ(cm, from_counts(2, 0, 0, 3));
  EXPECT_EQ(cm.accuracy(), 1.0);
  EXPECT_EQ(f1_per_class(cm), (std::array<double, 2>{1.0, 1.0}));
}

TEST(Confusion, AllZeroPredictions) {
  const ConfusionMatrix cm = confusion({0, 0, 1, 1, 1}, {0, 0, 0, 0, 0});
  EXPECT_EQ(cm, from_counts(2, 0, 3, 0));
  EXPECT_DOUBLE_EQ(cm.accuracy(), 0.4);
  EXPECT_EQ(f1_per_class(cm)[1], 0.0);
}

TEST(Confusion, MatchesBruteForceCount) {
  Rng rng(17);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<int> y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(2));
      p[i] = static_cast<int>(rng.below(2));
    }
    const ConfusionMatrix cm = confusion(y, p);
    for (int t : {0, 1})
      for (int q : {0, 1}) {
        std::size_t expected = 0;
        for (std::size_t i = 0; i < n; ++i) expected += (y[i] == t && p[i] == q);
        EXPECT_EQ(cm.counts[t][q], expected);
      }
    EXPECT_EQ(cm.total(), n);
    EXPECT_NEAR(cm.accuracy() + cm.error_rate(), 1.0, 1e-15);
  }
}

TEST(Confusion, Errors) {
  EXPECT_THROW(confusion({0, 1}, {0}), DimensionError);
  EXPECT_THROW(confusion({}, {}), DimensionError);
  EXPECT_THROW(confusion({0, 2}, {0, 1}), DataError);
}

TEST(F1, KnownMatrices) {
  const auto f = f1_per_class(from_counts(10, 0, 10, 0));
  EXPECT_NEAR(f[0], 2.0 / 3.0, 1e-15);
  EXPECT_EQ(f[1], 0.0);
  const ConfusionMatrix cm = from_counts(50, 10, 5, 35);
  const auto g = f1_per_class(cm);
  EXPECT_NEAR(g[0], f1_longhand(cm, 0), 1e-12);
  EXPECT_NEAR(g[1], f1_longhand(cm, 1), 1e-12);
  EXPECT_NEAR(g[0], 100.0 / 115.0, 1e-12);
  EXPECT_NEAR(g[1], 70.0 / 85.0, 1e-12);
}

TEST(F1, MatchesLonghandOnRandomMatrices) {
  Rng rng(23);
  for (int rep = 0; rep < 200; ++rep) {
    const ConfusionMatrix cm = from_counts(rng.below(50), rng.below(50), rng.below(50), rng.below(50));
    const auto f = f1_per_class(cm);
    for (int k : {0, 1}) EXPECT_NEAR(f[k], f1_longhand(cm, k), 1e-12);
  }
}

TEST(Report, RowRoundTrip) {
  RunConfig cfg;
  cfg.model.backbone = Backbone::small_b;
  cfg.model.use_attention = true;
  cfg.train.min_lr = 5e-5;
  cfg.train.batch_size = 64;
  const ConfusionMatrix cm = from_counts(50, 10, 5, 35);
  const RunReport r = make_report(7, cfg, cm, sample_epochs());
  const auto cols = split(report_row(r), ',');
  ASSERT_EQ(cols.size(), split(kReportHeader, ',').size());
  EXPECT_EQ(cols[0], "7");
  EXPECT_EQ(cols[1], to_string(Backbone::small_b));
  EXPECT_EQ(cols[2], "Yes");
  EXPECT_EQ(std::stod(cols[3]), 5e-5);
  EXPECT_EQ(cols[4], "64");
  EXPECT_NEAR(std::stod(cols[5]), 0.85, 1e-6);
  EXPECT_NEAR(std::stod(cols[6]), 100.0 / 115.0, 1e-6);
  EXPECT_NEAR(std::stod(cols[7]), 70.0 / 85.0, 1e-6);
  EXPECT_NEAR(std::stod(cols[8]), 2.5, 1e-6);
}

TEST(Report, FailedRunIsMarked) {
  RunReport r;
  r.model = "small-a";
  r.error = "diverged";
  const auto cols = split(report_row(r), ',');
  EXPECT_EQ(cols[5], "failed");
  EXPECT_EQ(cols[7], "failed");
}

TEST(Report, EmitWritesParseableFiles) {
  TempDir dir("report");
  RunConfig cfg;
  const RunReport r = make_report(1, cfg, from_counts(3, 1, 0, 4), sample_epochs());
  emit_report(r, dir.path());

  const auto report_lines = split(slurp(dir / "report.csv"), '\n');
  ASSERT_EQ(report_lines.size(), 2u);
  EXPECT_EQ(report_lines[0], kReportHeader);

  const auto conf = split(slurp(dir / "confusion.csv"), '\n');
  ASSERT_EQ(conf.size(), 3u);
  EXPECT_EQ(split(conf[1], ',')[1], "3");
  EXPECT_EQ(split(conf[2], ',')[2], "4");

  const auto timing = split(slurp(dir / "timing.csv"), '\n');
  ASSERT_EQ(timing.size(), 5u);
  EXPECT_NEAR(std::stod(split(timing[4], ',')[2]), 2.5, 1e-6);

  boost::property_tree::ptree tree;
  std::istringstream svg(slurp(dir / "curves.svg"));
  ASSERT_NO_THROW(boost::property_tree::read_xml(svg, tree));
  std::set<std::string> ids;
  for (const auto& [name, child] : tree.get_child("svg"))
    if (name == "polyline") {
      ids.insert(child.get<std::string>("<xmlattr>.id"));
      EXPECT_EQ(split(child.get<std::string>("<xmlattr>.points"), ' ').size(), 4u);
    }
  EXPECT_EQ(ids, (std::set<std::string>{"train_acc", "val_acc", "train_loss", "val_loss"}));
}

TEST(Report, EmptyCurvesStillValidSvg) {
  boost::property_tree::ptree tree;
  std::istringstream svg(curves_svg({}));
  EXPECT_NO_THROW(boost::property_tree::read_xml(svg, tree));
}
