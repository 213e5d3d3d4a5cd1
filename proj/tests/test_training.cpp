#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace conflictnet;
using testing_util::random_tensor;
using testing_util::TempDir;

namespace {

LayerState scalar_param(double value, double grad) {
  LayerState s("w");
  s.add_param("w", Tensor::vector({value}));
  s.grad("w")[0] = grad;
  s.mark_grads_populated();
  return s;
}

// 40 synthetic clips at 8×8, sampled to T=5, shared by the fit tests.
class TinyData : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("fit");
    SynthSpec spec;
    spec.clips_per_class = 20;
    spec.frames = 15;
    spec.height = spec.width = 8;
    spec.seed = 3;
    const Manifest m = generate_synthetic(spec, dir_->path());
    splits_ = new DatasetSplits(split_dataset(m, {0.6, 0.2, 0.2}, Rng(3)));
    const ModelConfig mc = model_config();
    train_ = new ClipStore(splits_->train, mc.seq_len, mc.frame_h, mc.frame_w);
    val_ = new ClipStore(splits_->val, mc.seq_len, mc.frame_h, mc.frame_w);
  }
  static void TearDownTestSuite() {
    delete train_;
    delete val_;
    delete splits_;
    delete dir_;
  }

  static ModelConfig model_config() {
    ModelConfig c;
    c.seq_len = 5;
    c.frame_h = c.frame_w = 8;
    c.frame_feature_dim = 16;
    c.lstm_units = 8;
    c.dense_head = {8};
    c.dropout_rates = {0.1, 0.1};
    return c;
  }

  static TrainConfig train_config() {
    TrainConfig t;
    t.initial_lr = 3e-3;
    t.min_lr = 1e-4;
    t.batch_size = 8;
    t.max_epochs = 30;
    t.early_stop_patience = 30;
    t.seed = 5;
    return t;
  }

  static Model fresh_model(std::uint64_t seed = 1) {
    Rng rng(seed);
    return build_model(model_config(), rng);
  }

  static inline TempDir* dir_ = nullptr;
  static inline DatasetSplits* splits_ = nullptr;
  static inline ClipStore* train_ = nullptr;
  static inline ClipStore* val_ = nullptr;
};

}  // namespace

TEST(CrossEntropy, AnalyticValues) {
  EXPECT_NEAR(cross_entropy(Tensor::matrix({{0.5, 0.5}}), {1}), std::log(2.0), 1e-15);
  EXPECT_LE(cross_entropy(Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}), {0, 1}), 1e-11);
  EXPECT_TRUE(std::isfinite(cross_entropy(Tensor::matrix({{1.0, 0.0}}), {1})));
  EXPECT_THROW(cross_entropy(Tensor::matrix({{0.5, 0.5}}), {0, 1}), DimensionError);
}

TEST(CrossEntropy, JointSoftmaxGradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t b = 1 + rng.below(5);
    const Tensor logits = random_tensor({b, 2}, rng, -3, 3);
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(rng.below(2));
    const Tensor analytic = cross_entropy_logits_grad(softmax_rows(logits), labels);
    const Tensor numeric =
        finite_difference_grad([&](const Tensor& z) { return cross_entropy(softmax_rows(z), labels); }, logits);
    EXPECT_LT(max_relative_error(analytic, numeric), 1e-4);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  LayerState s = scalar_param(0.7, 0.0);
  Adam opt;
  for (std::size_t t = 1; t <= 5; ++t) adam_step(opt, {&s}, 1e-2, t);
  EXPECT_EQ(s.param("w")[0], 0.7);
}

TEST(Adam, FirstStepClosedForm) {
  const double lr = 1e-3;
  LayerState s = scalar_param(2.0, 1.0);
  Adam opt;
  adam_step(opt, {&s}, lr, 1);
  EXPECT_NEAR(s.param("w")[0], 2.0 - lr * (1.0 / (1.0 + 1e-8)), 1e-15);
}

TEST(Adam, StepWithoutGradientsIsContractError) {
  LayerState s("w");
  s.add_param("w", Tensor::vector({1.0}));
  Adam opt;
  EXPECT_THROW(opt.step({&s}, 1e-3), ContractError);
  LayerState t = scalar_param(1.0, 1.0);
  EXPECT_THROW(opt.step({&t}, 1e-3, 0), ContractError);
}

TEST(Adam, QuadraticBowl) {
  LayerState s("w");
  s.add_param("w", Tensor::vector({1.5, -2.0, 0.5}));
  const double initial = std::sqrt(1.5 * 1.5 + 4.0 + 0.25);
  Adam opt;
  for (std::size_t t = 1; t <= 100; ++t) {
    for (std::size_t i = 0; i < 3; ++i) s.grad("w")[i] = 2.0 * s.param("w")[i];
    s.mark_grads_populated();
    opt.step({&s}, 0.1);
  }
  double norm = 0;
  for (double v : s.param("w").values()) norm += v * v;
  EXPECT_LT(std::sqrt(norm), initial / 10.0);
}

TEST(Plateau, ImprovingLossKeepsLr) {
  TrainConfig cfg;
  std::vector<double> h;
  for (int e = 0; e < 10; ++e) {
    h.push_back(1.0 - 0.01 * e);
    EXPECT_EQ(reduce_lr_on_plateau(h, 1e-3, cfg), 1e-3);
  }
}

TEST(Plateau, FlatLossReducesOnceAtEpochFour) {
  TrainConfig cfg;
  cfg.plateau_patience = 3;
  cfg.plateau_factor = 0.5;
  cfg.min_lr = 1e-6;
  PlateauScheduler s(cfg);
  std::vector<double> lrs;
  double lr = 1e-3;
  for (int e = 0; e < 4; ++e) {
    lr = s.update(1.0, lr);
    lrs.push_back(lr);
  }
  EXPECT_EQ(lrs, (std::vector<double>{1e-3, 1e-3, 1e-3, 5e-4}));
  EXPECT_EQ(reduce_lr_on_plateau({1.0, 1.0, 1.0}, 1e-3, cfg), 1e-3);
  EXPECT_EQ(reduce_lr_on_plateau({1.0, 1.0, 1.0, 1.0}, 1e-3, cfg), 5e-4);
}

TEST(Plateau, FloorAndCooldown) {
  TrainConfig cfg;
  cfg.plateau_patience = 1;
  cfg.min_lr = 5e-5;
  EXPECT_EQ(reduce_lr_on_plateau({1.0, 1.0}, 5e-5, cfg), 5e-5);
  EXPECT_EQ(reduce_lr_on_plateau({1.0, 1.0}, 6e-5, cfg), 5e-5);
  // Epoch 2 triggers, epoch 3 is cooldown, epoch 4 triggers again.
  PlateauScheduler s(cfg);
  std::vector<bool> fired;
  for (int e = 0; e < 4; ++e) fired.push_back(s.observe(1.0));
  EXPECT_EQ(fired, (std::vector<bool>{false, true, false, true}));
}

TEST(Plateau, SmallImprovementsBelowThresholdCountAsPlateau) {
  TrainConfig cfg;
  cfg.plateau_patience = 2;
  EXPECT_EQ(reduce_lr_on_plateau({1.0, 1.0 - 5e-5, 1.0 - 9e-5}, 1e-3, cfg), 5e-4);
}

TEST(Config, RunConfigApplyAndRoundTrip) {
  RunConfig cfg;
  cfg.apply("min_lr = 0.00005\nbatch_size=64\nbackbone=small-c\nuse_attention=false\n");
  EXPECT_EQ(cfg.train.min_lr, 5e-5);
  EXPECT_EQ(cfg.train.batch_size, 64u);
  EXPECT_EQ(cfg.model.backbone, Backbone::small_c);
  EXPECT_FALSE(cfg.model.use_attention);
  RunConfig back;
  back.apply(cfg.to_text());
  EXPECT_EQ(back.to_text(), cfg.to_text());
  EXPECT_THROW(cfg.apply("learning_rate=1\n"), ConfigError);
  RunConfig bad;
  bad.train.min_lr = 1.0;
  bad.train.initial_lr = 1e-3;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.train.batch_size = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST_F(TinyData, ZeroEpochsReturnsInitialModel) {
  TrainConfig cfg = train_config();
  cfg.max_epochs = 0;
  Model m = fresh_model();
  FitResult r = fit(m, *train_, *val_, cfg);
  EXPECT_TRUE(r.stats.empty());
  auto a = m.parameters(), b = r.model.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].param->value, b[i].param->value);
}

TEST_F(TinyData, OneStepReducesBatchLoss) {
  Model m = fresh_model(2);
  std::vector<std::size_t> idx(train_->size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const ClipBatch batch = train_->batch(idx);
  Rng unused(0);
  const double before = cross_entropy(m.forward(batch.frames(), false, unused), batch.labels());
  m.zero_grad();
  const Tensor probs = m.forward(batch.frames(), false, unused);
  m.backward(cross_entropy_logits_grad(probs, batch.labels()));
  Adam opt;
  opt.step(m.layer_states(), 1e-4);
  const double after = cross_entropy(m.forward(batch.frames(), false, unused), batch.labels());
  EXPECT_LT(after, before);
}

TEST_F(TinyData, FitIsDeterministic) {
  TrainConfig cfg = train_config();
  cfg.max_epochs = 3;
  const FitResult a = fit(fresh_model(), *train_, *val_, cfg);
  const FitResult b = fit(fresh_model(), *train_, *val_, cfg);
  ASSERT_EQ(a.stats.size(), b.stats.size());
  for (std::size_t i = 0; i < a.stats.size(); ++i) {
    EXPECT_EQ(a.stats[i].train_loss, b.stats[i].train_loss);
    EXPECT_EQ(a.stats[i].val_loss, b.stats[i].val_loss);
    EXPECT_EQ(a.stats[i].train_acc, b.stats[i].train_acc);
    EXPECT_EQ(a.stats[i].val_acc, b.stats[i].val_acc);
    EXPECT_EQ(a.stats[i].lr, b.stats[i].lr);
  }
  Model ma = a.model, mb = b.model;
  EXPECT_EQ(serialize_model(ma), serialize_model(mb));
}

TEST_F(TinyData, SeparableSetReachesHighValAccuracy) {
  const FitResult r = fit(fresh_model(), *train_, *val_, train_config());
  ASSERT_FALSE(r.stats.empty());
  double best = 0;
  for (const auto& s : r.stats) best = std::max(best, s.val_acc);
  EXPECT_GE(best, 0.9);
  EXPECT_LE(r.stats.size(), 30u);
  EXPECT_GE(r.best_epoch, 1u);
}

TEST_F(TinyData, EarlyStoppingKeepsBestEpochParameters) {
  TrainConfig cfg = train_config();
  cfg.max_epochs = 8;
  cfg.early_stop_patience = 2;
  const FitResult r = fit(fresh_model(), *train_, *val_, cfg);
  ASSERT_GE(r.best_epoch, 1u);
  Model best = r.model;
  const Evaluation ev = evaluate(best, *val_, 8);
  EXPECT_DOUBLE_EQ(ev.loss, r.stats[r.best_epoch - 1].val_loss);
  for (std::size_t i = 0; i < r.stats.size(); ++i) EXPECT_GE(r.stats[i].val_loss, r.stats[r.best_epoch - 1].val_loss - 1e-4);
}

TEST_F(TinyData, NonFiniteLossRaisesTrainingError) {
  Model m = fresh_model();
  m.parameters().back().param->value[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg = train_config();
  cfg.max_epochs = 2;
  try {
    fit(m, *train_, *val_, cfg);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.epoch(), 1u);
  }
}

TEST_F(TinyData, RunOutputsWritten) {
  TrainConfig cfg = train_config();
  cfg.max_epochs = 2;
  const FitResult r = fit(fresh_model(), *train_, *val_, cfg);
  TempDir out("run-out");
  RunConfig rc;
  rc.model = model_config();
  rc.train = cfg;
  write_run_outputs(out.path(), r, rc);
  const std::string stats = read_text_file(out / "stats.csv");
  EXPECT_EQ(stats.substr(0, stats.find('\n')), kStatsHeader);
  EXPECT_EQ(std::count(stats.begin(), stats.end(), '\n'), 3);
  Model loaded = load_model(out / "best.ckpt");
  Model fitted = r.model;
  EXPECT_EQ(serialize_model(loaded), serialize_model(fitted));
  RunConfig back;
  back.apply(read_text_file(out / "config.txt"));
  EXPECT_EQ(back.to_text(), rc.to_text());
}
