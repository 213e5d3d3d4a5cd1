// Loss, Adam, plateau learning-rate schedule with a floor, and the epoch loop.
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <limits>

#include "conflictnet/checkpoint.hpp"
#include "conflictnet/data/dataset.hpp"
#include "conflictnet/model.hpp"

namespace conflictnet {

/// Minimum decrease of val_loss that counts as an improvement.
inline constexpr double kImprovementThreshold = 1e-4;

struct TrainConfig {
  double initial_lr = 1e-3;
  double min_lr = 5e-5;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t plateau_patience = 3;
  double plateau_factor = 0.5;
  std::size_t early_stop_patience = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(initial_lr > 0)) throw ConfigError("initial_lr", "must be positive");
    if (!(min_lr > 0 && min_lr <= initial_lr)) throw ConfigError("min_lr", "must satisfy 0 < min_lr <= initial_lr");
    if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
    if (!(plateau_factor > 0 && plateau_factor < 1)) throw ConfigError("plateau_factor", "must be in (0,1)");
    if (plateau_patience < 1) throw ConfigError("plateau_patience", "must be >= 1");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience", "must be >= 1");
  }

  KeyValues to_key_values() const {
    return {
        {"initial_lr", format_double(initial_lr)},
        {"min_lr", format_double(min_lr)},
        {"batch_size", std::to_string(batch_size)},
        {"max_epochs", std::to_string(max_epochs)},
        {"plateau_patience", std::to_string(plateau_patience)},
        {"plateau_factor", format_double(plateau_factor)},
        {"early_stop_patience", std::to_string(early_stop_patience)},
        {"seed", std::to_string(seed)},
    };
  }

  bool set(const std::string& key, const std::string& value) {
    if (key == "initial_lr") initial_lr = parse_double(key, value);
    else if (key == "min_lr") min_lr = parse_double(key, value);
    else if (key == "batch_size") batch_size = parse_uint(key, value);
    else if (key == "max_epochs") max_epochs = parse_uint(key, value);
    else if (key == "plateau_patience") plateau_patience = parse_uint(key, value);
    else if (key == "plateau_factor") plateau_factor = parse_double(key, value);
    else if (key == "early_stop_patience") early_stop_patience = parse_uint(key, value);
    else if (key == "seed") seed = parse_uint(key, value);
    else return false;
    return true;
  }

  bool operator==(const TrainConfig&) const = default;
};

/// Model and training settings read from one key=value file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  std::string to_text() const {
    KeyValues kv = model.to_key_values();
    for (auto& p : train.to_key_values()) kv.push_back(std::move(p));
    return format_key_values(kv);
  }

  /// Applies `text` on top of the current values. Unknown keys are rejected.
  void apply(std::string_view text) {
    for (const auto& [k, v] : parse_key_values(text))
      if (!model.set(k, v) && !train.set(k, v)) throw ConfigError(k, "unknown config key");
  }

  void validate() const {
    model.validate();
    train.validate();
  }
};

// ---------------------------------------------------------------------------
// Loss

inline void check_labels(const std::vector<int>& labels, std::size_t rows) {
  if (labels.size() != rows)
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  for (int l : labels)
    if (l != 0 && l != 1) throw DataError("label outside {0,1}: " + std::to_string(l));
}

/// Mean negative log-likelihood with probabilities clamped to [1e-12, 1].
inline double cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.dim(1) != 2)
    throw DimensionError("cross_entropy expects B×2 probabilities, got " + to_string(probs.shape()));
  check_labels(labels, probs.dim(0));
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r)
    total -= std::log(std::clamp(probs[r * 2 + static_cast<std::size_t>(labels[r])], 1e-12, 1.0));
  return total / static_cast<double>(labels.size());
}

/// Gradient of softmax followed by cross_entropy w.r.t. the logits: (p − onehot)/B.
inline Tensor cross_entropy_logits_grad(const Tensor& probs, const std::vector<int>& labels) {
  check_labels(labels, probs.dim(0));
  Tensor g = probs;
  const double inv = 1.0 / static_cast<double>(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    g[r * 2 + static_cast<std::size_t>(labels[r])] -= 1.0;
    g[r * 2] *= inv;
    g[r * 2 + 1] *= inv;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adam

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update at step index `t` (1-based) over every parameter of `states`.
  void step(const std::vector<LayerState*>& states, double lr, std::size_t t) {
    if (t < 1) throw ContractError("adam step index must be >= 1");
    std::size_t slot = 0;
    for (auto* s : states) {
      if (s->params().empty()) continue;
      if (!s->grads_populated())
        throw ContractError("adam step before backward: no gradients for '" + s->name() + "'");
      for (auto& p : s->params()) {
        if (slot == m_.size()) {
          m_.emplace_back(p.value.shape());
          v_.emplace_back(p.value.shape());
        }
        Tensor& m = m_[slot];
        Tensor& v = v_[slot];
        if (m.shape() != p.value.shape()) throw ContractError("adam moment shape changed for '" + p.name + "'");
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
        for (std::size_t i = 0; i < p.value.size(); ++i) {
          const double g = p.grad[i];
          m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
          v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
          p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
        ++slot;
      }
    }
    steps_ = t;
  }

  /// Step with an internal counter.
  void step(const std::vector<LayerState*>& states, double lr) { step(states, lr, steps_ + 1); }

  std::size_t steps() const noexcept { return steps_; }

 private:
  double beta1_, beta2_, eps_;
  std::vector<Tensor> m_, v_;
  std::size_t steps_ = 0;
};

inline void adam_step(Adam& opt, const std::vector<LayerState*>& states, double lr, std::size_t t) {
  opt.step(states, lr, t);
}

// ---------------------------------------------------------------------------
// Learning-rate schedule

/// Halves (by plateau_factor) the learning rate after plateau_patience epochs
/// without a val_loss improvement, never going below min_lr; the epoch after a
/// reduction is a cooldown that does not count toward patience.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(const TrainConfig& cfg) : cfg_(cfg) {}

  /// Feeds one epoch's val_loss; true if this epoch triggers a reduction.
  bool observe(double val_loss) {
    if (val_loss < best_ - kImprovementThreshold) {
      best_ = val_loss;
      wait_ = 0;
      cooldown_ = 0;
      return false;
    }
    if (cooldown_ > 0) {
      --cooldown_;
      wait_ = 0;
      return false;
    }
    if (++wait_ >= cfg_.plateau_patience) {
      wait_ = 0;
      cooldown_ = 1;
      return true;
    }
    return false;
  }

  /// Feeds one epoch's val_loss; returns the lr for the next epoch.
  double update(double val_loss, double lr) {
    return observe(val_loss) ? std::max(lr * cfg_.plateau_factor, cfg_.min_lr) : lr;
  }

 private:
  TrainConfig cfg_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t wait_ = 0;
  std::size_t cooldown_ = 0;
};

/// Pure form: replays `history` and returns the lr after its last epoch,
/// starting from `lr` and applying a reduction only if the last epoch triggers one.
inline double reduce_lr_on_plateau(const std::vector<double>& history, double lr, const TrainConfig& cfg) {
  if (history.empty()) return lr;
  PlateauScheduler s(cfg);
  for (std::size_t i = 0; i + 1 < history.size(); ++i) s.observe(history[i]);
  return s.update(history.back(), lr);
}

// ---------------------------------------------------------------------------
// Fit

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
  double lr = 0;
  double seconds = 0;
  std::vector<int> train_predictions, train_labels;  // in the order seen this epoch
  std::vector<int> val_predictions, val_labels;
};

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
  std::vector<int> predictions;
  std::vector<int> labels;
};

inline double accuracy_of(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  return pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
}

/// Inference-mode loss/accuracy over the whole store, in store order.
inline Evaluation evaluate(Model& model, const ClipStore& store, std::size_t batch_size) {
  Evaluation ev;
  double total = 0.0;
  Rng unused(0);
  for (const auto& idx : epoch_batches(store.size(), batch_size, unused, false, 0)) {
    const ClipBatch batch = store.batch(idx);
    const Tensor probs = model.forward(batch.frames(), false, unused);
    total += cross_entropy(probs, batch.labels()) * static_cast<double>(batch.size());
    const auto pred = predict_labels(probs);
    ev.predictions.insert(ev.predictions.end(), pred.begin(), pred.end());
    ev.labels.insert(ev.labels.end(), batch.labels().begin(), batch.labels().end());
  }
  ev.loss = total / static_cast<double>(store.size());
  ev.accuracy = accuracy_of(ev.predictions, ev.labels);
  if (!std::isfinite(ev.loss)) throw NumericError("non-finite evaluation loss");
  return ev;
}

/// Raised when training fails; carries the 1-based epoch index.
class TrainingError : public NumericError {
 public:
  TrainingError(std::size_t epoch, const std::string& what)
      : NumericError("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

struct FitResult {
  Model model;  // parameters of the best-val_loss epoch
  std::vector<EpochStats> stats;
  std::size_t best_epoch = 0;
};

/// Trains `model` on `train`, selects by val_loss, stops early.
/// All randomness derives from cfg.seed.
inline FitResult fit(Model model, const ClipStore& train, const ClipStore& val, const TrainConfig& cfg) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const Rng root(cfg.seed);
  const Rng shuffle_rng = root.substream("shuffle");
  const Rng dropout_rng = root.substream("dropout");
  Adam opt;
  PlateauScheduler scheduler(cfg);
  double lr = cfg.initial_lr;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<Tensor> best_params;
  FitResult result{model, {}, 0};
  const auto states = model.layer_states();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = Clock::now();
    EpochStats st;
    st.epoch = epoch;
    st.lr = lr;
    double loss_sum = 0.0;
    try {
      for (const auto& idx : epoch_batches(train.size(), cfg.batch_size, shuffle_rng, true, epoch)) {
        const ClipBatch batch = train.batch(idx);
        model.zero_grad();
        Rng drop = dropout_rng.substream("step", opt.steps() + 1);
        const Tensor probs = model.forward(batch.frames(), true, drop);
        const double loss = cross_entropy(probs, batch.labels());
        if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
        loss_sum += loss * static_cast<double>(batch.size());
        const auto pred = predict_labels(probs);
        st.train_predictions.insert(st.train_predictions.end(), pred.begin(), pred.end());
        st.train_labels.insert(st.train_labels.end(), batch.labels().begin(), batch.labels().end());
        model.backward(cross_entropy_logits_grad(probs, batch.labels()));
        opt.step(states, lr);
      }
      const Evaluation ev = evaluate(model, val, cfg.batch_size);
      st.val_loss = ev.loss;
      st.val_acc = ev.accuracy;
      st.val_predictions = ev.predictions;
      st.val_labels = ev.labels;
    } catch (const TrainingError&) {
      throw;
    } catch (const NumericError& e) {
      throw TrainingError(epoch, e.what());
    } catch (const DataError& e) {
      throw DataError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    st.train_loss = loss_sum / static_cast<double>(train.size());
    st.train_acc = accuracy_of(st.train_predictions, st.train_labels);
    st.seconds = std::chrono::duration<double>(Clock::now() - start).count();

    if (st.val_loss < best_loss - kImprovementThreshold) {
      best_loss = st.val_loss;
      since_best = 0;
      result.best_epoch = epoch;
      best_params.clear();
      for (const auto& p : model.parameters()) best_params.push_back(p.param->value);
    } else {
      ++since_best;
    }
    lr = scheduler.update(st.val_loss, lr);
    result.stats.push_back(std::move(st));
    if (since_best >= cfg.early_stop_patience) break;
  }

  if (!best_params.empty()) {
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].param->value = best_params[i];
  }
  model.zero_grad();
  for (auto* s : model.layer_states()) s->clear_cache();
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Run outputs

inline constexpr const char* kStatsHeader = "epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds";

inline std::string stats_csv(const std::vector<EpochStats>& stats) {
  std::string out = std::string(kStatsHeader) + "\n";
  for (const auto& s : stats)
    out += std::to_string(s.epoch) + "," + fixed6(s.train_loss) + "," + fixed6(s.train_acc) + "," +
           fixed6(s.val_loss) + "," + fixed6(s.val_acc) + "," + fixed6(s.lr) + "," + fixed6(s.seconds) + "\n";
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

/// stats.csv, best.ckpt and config.txt under `dir`.
inline void write_run_outputs(const std::filesystem::path& dir, const FitResult& fit_result, const RunConfig& cfg) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "stats.csv", stats_csv(fit_result.stats));
  Model m = fit_result.model;
  save_model(m, dir / "best.ckpt");
  write_text_file(dir / "config.txt", cfg.to_text());
}

}  // namespace conflictnet
