// Analytic-vs-central-difference checks for every layer and the full model.
#pragma once

#include <functional>
#include <map>

#include "conflictnet/training.hpp"

namespace conflictnet {

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;
// The whole-model loss carries ~1e-16 relative roundoff through thousands of
// ops while some gradient entries are ~1e-9; a wider step keeps the difference
// quotient above that noise. Truncation error stays far below the tolerance.
inline constexpr double kModelGradCheckStep = 3e-4;

struct GradCheckResult {
  std::string layer;
  std::size_t seeds = 0;
  double max_rel_err = 0;
  std::string worst;  // which tensor produced max_rel_err
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that crossed a ReLU or max-pool switch

  bool passed() const noexcept { return max_rel_err < kGradCheckTolerance; }
};

namespace detail {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

inline double weighted_sum(const Tensor& y, const Tensor& r) {
  y.require_same_shape(r, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

class GradAccumulator {
 public:
  explicit GradAccumulator(GradCheckResult& res) : res_(res) {}

  /// Compares `analytic` with central differences of `loss` over `target`,
  /// which `loss` must read in place.
  void check(const std::string& what, Tensor& target, const Tensor& analytic, const std::function<double()>& loss) {
    const Tensor saved = target;
    const Tensor numeric = finite_difference_grad(
        [&](const Tensor& probe) {
          target = probe;
          return loss();
        },
        saved, kGradCheckStep);
    target = saved;
    record(what, max_relative_error(analytic, numeric));
    res_.checked += target.size();
  }

  /// Like check(), for piecewise-smooth losses: a coordinate whose ±h probes
  /// land on a different activation pattern than the unperturbed point spans
  /// a kink, so central differences do not estimate its derivative there and
  /// it is counted as skipped instead.
  void check_piecewise(const std::string& what, Tensor& target, const Tensor& analytic,
                       const std::function<double()>& loss,
                       const std::function<std::vector<std::size_t>()>& pattern, double step) {
    loss();
    const auto base = pattern();
    double worst = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double orig = target[i];
      target[i] = orig + step;
      const double fp = loss();
      const bool same_p = pattern() == base;
      target[i] = orig - step;
      const double fm = loss();
      const bool same_m = pattern() == base;
      target[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("gradcheck: non-finite loss in " + what);
      if (!same_p || !same_m) {
        ++res_.skipped;
        continue;
      }
      ++res_.checked;
      worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * step)));
    }
    record(what, worst);
  }

 private:
  void record(const std::string& what, double err) {
    if (err >= res_.max_rel_err) {
      res_.max_rel_err = err;
      res_.worst = what;
    }
  }

  GradCheckResult& res_;
};

inline void check_state(GradAccumulator& acc, LayerState& s, const std::function<double()>& loss) {
  for (auto& p : s.params()) {
    const Tensor analytic = p.grad;
    acc.check(s.name() + "." + p.name, p.value, analytic, loss);
  }
}

inline void gc_dense(Rng& rng, GradAccumulator& acc) {
  const std::size_t b = 1 + rng.below(3), in = 1 + rng.below(5), out = 1 + rng.below(4);
  const Activation act = rng.uniform() < 0.5 ? Activation::tanh : Activation::sigmoid;
  LayerState s = init_dense("dense", in, out, rng);
  s.param("bias") = random_tensor({out}, rng);
  Tensor x = random_tensor({b, in}, rng);
  const Tensor r = random_tensor({b, out}, rng);
  auto loss = [&] { return weighted_sum(dense_forward(x, s, act), r); };
  loss();
  const Tensor dx = dense_backward(r, s);
  acc.check("dense.x", x, dx, loss);
  check_state(acc, s, loss);
}

inline void gc_conv2d(Rng& rng, GradAccumulator& acc) {
  const std::size_t b = 1 + rng.below(2), h = 3 + rng.below(4), w = 3 + rng.below(4), c = 1 + rng.below(3);
  const std::size_t f = 1 + rng.below(3), stride = 1 + rng.below(2);
  const std::size_t k = rng.uniform() < 0.7 ? 3 : 1;
  const Padding pad = rng.uniform() < 0.5 ? Padding::same : Padding::valid;
  LayerState s = init_conv2d("conv2d", k, c, f, rng);
  s.param("bias") = random_tensor({f}, rng);
  Tensor x = random_tensor({b, h, w, c}, rng);
  const auto g = conv2d_geometry(h, w, c, k, f, stride, pad);
  const Tensor r = random_tensor({b, g.out_h, g.out_w, f}, rng);
  auto loss = [&] { return weighted_sum(conv2d_forward(x, s, stride, pad), r); };
  loss();
  const Tensor dx = conv2d_backward(r, s);
  acc.check("conv2d.x", x, dx, loss);
  check_state(acc, s, loss);
}

inline void gc_maxpool(Rng& rng, GradAccumulator& acc) {
  const std::size_t b = 1 + rng.below(2), h = 2 + rng.below(5), w = 2 + rng.below(5), c = 1 + rng.below(3);
  const std::size_t window = 1 + rng.below(std::min(h, w)), stride = 1 + rng.below(2);
  LayerState s("maxpool");
  Tensor x = random_tensor({b, h, w, c}, rng);
  Tensor y = maxpool_forward(x, window, stride, s);
  const Tensor r = random_tensor(y.shape(), rng);
  auto loss = [&] { return weighted_sum(maxpool_forward(x, window, stride, s), r); };
  const Tensor dx = maxpool_backward(r, s);
  acc.check("maxpool.x", x, dx, loss);
}

inline void gc_dropout(Rng& rng, GradAccumulator& acc) {
  const std::size_t n = 1 + rng.below(20);
  const double rate = rng.uniform(0.0, 0.8);
  const Rng mask_rng = rng.substream("mask");
  LayerState s("dropout");
  Tensor x = random_tensor({n}, rng);
  const Tensor r = random_tensor({n}, rng);
  auto loss = [&] {
    Rng m = mask_rng;
    return weighted_sum(dropout_forward(x, rate, m, true, s), r);
  };
  loss();
  const Tensor dx = dropout_backward(r, s);
  acc.check("dropout.x", x, dx, loss);
}

inline void gc_lstm_step(Rng& rng, GradAccumulator& acc) {
  const std::size_t b = 1 + rng.below(3), in = 1 + rng.below(4), u = 1 + rng.below(4);
  LayerState s = init_lstm("lstm", in, u, rng);
  s.param("bias") = random_tensor({4 * u}, rng);
  Tensor x = random_tensor({b, in}, rng), h = random_tensor({b, u}, rng), c = random_tensor({b, u}, rng);
  const Tensor rh = random_tensor({b, u}, rng), rc = random_tensor({b, u}, rng);
  auto loss = [&] {
    const auto out = lstm_step(x, h, c, s);
    return weighted_sum(out.h, rh) + weighted_sum(out.c, rc);
  };
  const auto out = lstm_step(x, h, c, s);
  const auto g = lstm_step_backward(rh, rc, out.cache, s);
  acc.check("lstm_step.x", x, g.dx, loss);
  acc.check("lstm_step.h_prev", h, g.dh_prev, loss);
  acc.check("lstm_step.c_prev", c, g.dc_prev, loss);
  check_state(acc, s, loss);
}

inline void gc_bilstm(Rng& rng, GradAccumulator& acc) {
  const std::size_t b = 1 + rng.below(2), t = 1 + rng.below(4), in = 1 + rng.below(3), u = 1 + rng.below(3);
  LayerState fwd = init_lstm("bilstm.fwd", in, u, rng), bwd = init_lstm("bilstm.bwd", in, u, rng);
  Tensor xs = random_tensor({b, t, in}, rng);
  const Tensor r = random_tensor({b, t, 2 * u}, rng);
  auto loss = [&] { return weighted_sum(bilstm_forward(xs, fwd, bwd), r); };
  loss();
  const Tensor dx = bilstm_backward(r, fwd, bwd);
  acc.check("bilstm.xs", xs, dx, loss);
  check_state(acc, fwd, loss);
  check_state(acc, bwd, loss);
}

inline void gc_attention(Rng& rng, GradAccumulator& acc, AttentionNorm norm) {
  const std::size_t b = 1 + rng.below(2), t = 1 + rng.below(5), d = 1 + rng.below(4);
  LayerState s = init_attention("attention", d, rng);
  Tensor xs = random_tensor({b, t, d}, rng);
  if (norm == AttentionNorm::linear) {
    // keep every score well inside (0,1) so Σe is far from zero
    s.param("bias")[0] = rng.uniform(0.8, 1.2);
    for (auto& v : s.param("weight").storage()) v = rng.uniform(-0.3, 0.3);
  } else {
    s.param("bias")[0] = rng.uniform(-1, 1);
  }
  const Tensor r = random_tensor({b, d}, rng);
  auto loss = [&] { return weighted_sum(attention_forward(xs, s, norm).context, r); };
  loss();
  const Tensor dx = attention_backward(r, s);
  acc.check("attention.xs", xs, dx, loss);
  check_state(acc, s, loss);
}

inline void gc_softmax_ce(Rng& rng, GradAccumulator& acc) {
  const std::size_t b = 1 + rng.below(6);
  Tensor logits = random_tensor({b, 2}, rng, -3, 3);
  std::vector<int> labels(b);
  for (auto& l : labels) l = static_cast<int>(rng.below(2));
  auto loss = [&] { return cross_entropy(softmax_rows(logits), labels); };
  const Tensor g = cross_entropy_logits_grad(softmax_rows(logits), labels);
  acc.check("softmax_ce.logits", logits, g, loss);
}

inline void gc_time_distributed(Rng& rng, GradAccumulator& acc) {
  const std::size_t b = 1 + rng.below(2), t = 1 + rng.below(3), hw = 4 + rng.below(3);
  FrameNet net(hw, hw, 2);
  net.conv("td.conv", 3, 3, rng).activation("td.tanh", Activation::tanh).maxpool("td.pool", 2, 2).flatten().dense(
      "td.proj", 3, Activation::tanh, rng);
  Tensor xs = random_tensor({b, t, hw, hw, 2}, rng);
  const Tensor r = random_tensor({b, t, 3}, rng);
  auto loss = [&] { return weighted_sum(time_distributed_forward(net, xs), r); };
  loss();
  const Tensor dx = time_distributed_backward(net, r);
  auto pattern = [&] { return net.activation_pattern(); };
  acc.check_piecewise("time_distributed.xs", xs, dx, loss, pattern, kGradCheckStep);
  for (auto& st : net.stages())
    for (auto& p : st.state.params()) {
      const Tensor analytic = p.grad;
      acc.check_piecewise(st.state.name() + "." + p.name, p.value, analytic, loss, pattern, kGradCheckStep);
    }
}

}  // namespace detail

/// Tiny configuration for the end-to-end check: T=3, 8×8×3 frames, 4 LSTM units.
inline ModelConfig tiny_model_config(bool attention = true) {
  ModelConfig cfg;
  cfg.seq_len = 3;
  cfg.frame_h = 8;
  cfg.frame_w = 8;
  cfg.channels = 3;
  cfg.backbone = Backbone::small_a;
  cfg.frame_feature_dim = 16;
  cfg.lstm_units = 4;
  cfg.use_attention = attention;
  cfg.dense_head = {8};
  cfg.dropout_rates = {0.2, 0.2};
  return cfg;
}

namespace detail {

// Dropout runs in training mode with a mask stream replayed on every call.
inline void gc_model(Rng& rng, GradAccumulator& acc, bool check_inputs = true) {
  const ModelConfig cfg = tiny_model_config(rng.uniform() < 0.75);
  Rng init = rng.substream("init");
  Model m = Model::build(cfg, init);
  const std::size_t b = 2;
  Tensor frames = random_tensor({b, cfg.seq_len, cfg.frame_h, cfg.frame_w, cfg.channels}, rng, 0.0, 1.0);
  std::vector<int> labels{0, 1};
  const Rng drop = rng.substream("dropout");
  auto loss = [&] {
    Rng d = drop;
    return cross_entropy(m.forward(frames, true, d), labels);
  };
  Rng d = drop;
  const Tensor probs = m.forward(frames, true, d);
  m.zero_grad();
  const Tensor dframes = m.backward(cross_entropy_logits_grad(probs, labels));
  auto pattern = [&] { return m.activation_pattern(); };
  if (check_inputs) acc.check_piecewise("model.frames", frames, dframes, loss, pattern, kModelGradCheckStep);
  for (auto& ref : m.parameters()) {
    const Tensor analytic = ref.param->grad;
    acc.check_piecewise(ref.name, ref.param->value, analytic, loss, pattern, kModelGradCheckStep);
  }
}

}  // namespace detail

inline const std::vector<std::string>& gradcheck_layers() {
  static const std::vector<std::string> names{"dense",   "conv2d",           "maxpool",          "dropout",
                                              "lstm_step", "bilstm",         "attention_softmax", "attention_linear",
                                              "softmax_ce", "time_distributed", "model"};
  return names;
}

/// Runs one named check over `seeds` consecutive seeds starting at `seed`.
inline GradCheckResult run_gradcheck(const std::string& layer, std::uint64_t seed, std::size_t seeds = 10) {
  GradCheckResult res{layer, seeds, 0.0, {}};
  detail::GradAccumulator acc(res);
  for (std::size_t i = 0; i < seeds; ++i) {
    Rng rng = Rng(seed).substream(layer, i);
    if (layer == "dense") detail::gc_dense(rng, acc);
    else if (layer == "conv2d") detail::gc_conv2d(rng, acc);
    else if (layer == "maxpool") detail::gc_maxpool(rng, acc);
    else if (layer == "dropout") detail::gc_dropout(rng, acc);
    else if (layer == "lstm_step") detail::gc_lstm_step(rng, acc);
    else if (layer == "bilstm") detail::gc_bilstm(rng, acc);
    else if (layer == "attention_softmax") detail::gc_attention(rng, acc, AttentionNorm::softmax);
    else if (layer == "attention_linear") detail::gc_attention(rng, acc, AttentionNorm::linear);
    else if (layer == "softmax_ce") detail::gc_softmax_ce(rng, acc);
    else if (layer == "time_distributed") detail::gc_time_distributed(rng, acc);
    else if (layer == "model") detail::gc_model(rng, acc);
    else throw ConfigError("layer", "unknown gradcheck layer '" + layer + "'");
  }
  return res;
}

}  // namespace conflictnet
