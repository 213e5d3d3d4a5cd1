// Weighted-sum attention over a sequence.
//
// Per batch row: e_t = tanh(W·x_t + b), weights a = normalize(e), and
// context = Σ_t a_t x_t. Two normalizations are available: softmax (default)
// and the plain ratio a_t = e_t / Σ_j e_j.
#pragma once

#include "conflictnet/layers/layer_state.hpp"

namespace conflictnet {

enum class AttentionNorm { softmax, linear };

inline std::string to_string(AttentionNorm n) { return n == AttentionNorm::softmax ? "softmax" : "linear"; }

/// Raised by linear normalization when |Σ e_j| is too small to divide by.
class DegenerateNormalizationError : public NumericError {
 public:
  using NumericError::NumericError;
};

inline constexpr double kLinearNormFloor = 1e-8;

inline LayerState init_attention(std::string name, std::size_t dim, Rng& rng) {
  LayerState s(std::move(name));
  s.add_param("weight", glorot_uniform({dim}, dim, 1, rng));
  s.add_param("bias", Tensor({1}));
  return s;
}

struct AttentionOutput {
  Tensor context;  // B × D
  Tensor weights;  // B × T
  Tensor scores;   // B × T
};

namespace detail {
struct AttentionCache {
  Tensor input;
  Tensor weights;
  Tensor scores;
  std::vector<double> sums;  // Σ_j e_j per row, linear mode only
  AttentionNorm norm;
};
}  // namespace detail

inline AttentionOutput attention_forward(const Tensor& xs, LayerState& state,
                                         AttentionNorm norm = AttentionNorm::softmax) {
  const Tensor& w = state.param("weight");
  const double bias = state.param("bias")[0];
  if (xs.rank() != 3 || xs.dim(2) != w.dim(0))
    throw DimensionError("attention '" + state.name() + "': input " + to_string(xs.shape()) + " vs weight " +
                         to_string(w.shape()));
  const std::size_t batch = xs.dim(0), steps = xs.dim(1), dim = xs.dim(2);
  AttentionOutput out{Tensor({batch, dim}), Tensor({batch, steps}), Tensor({batch, steps})};
  std::vector<double> sums;
  if (norm == AttentionNorm::linear) sums.resize(batch);

  for (std::size_t b = 0; b < batch; ++b) {
    double* e = out.scores.data() + b * steps;
    double* a = out.weights.data() + b * steps;
    for (std::size_t t = 0; t < steps; ++t) {
      const double* x = xs.data() + (b * steps + t) * dim;
      double s = bias;
      for (std::size_t d = 0; d < dim; ++d) s += w[d] * x[d];
      e[t] = std::tanh(s);
    }
    if (norm == AttentionNorm::softmax) {
      double mx = e[0];
      for (std::size_t t = 1; t < steps; ++t) mx = std::max(mx, e[t]);
      double total = 0.0;
      for (std::size_t t = 0; t < steps; ++t) total += (a[t] = std::exp(e[t] - mx));
      for (std::size_t t = 0; t < steps; ++t) a[t] /= total;
    } else {
      double total = 0.0;
      for (std::size_t t = 0; t < steps; ++t) total += e[t];
      if (std::abs(total) < kLinearNormFloor)
        throw DegenerateNormalizationError("attention '" + state.name() + "': sum of scores " +
                                           std::to_string(total) + " too close to zero for linear normalization");
      sums[b] = total;
      for (std::size_t t = 0; t < steps; ++t) a[t] = e[t] / total;
    }
    double* ctx = out.context.data() + b * dim;
    for (std::size_t t = 0; t < steps; ++t) {
      const double* x = xs.data() + (b * steps + t) * dim;
      for (std::size_t d = 0; d < dim; ++d) ctx[d] += a[t] * x[d];
    }
  }
  state.store(detail::AttentionCache{xs, out.weights, out.scores, std::move(sums), norm});
  return out;
}

/// Backward from the context gradient (B × D); returns dxs (B × T × D).
inline Tensor attention_backward(const Tensor& dcontext, LayerState& state) {
  auto cache = state.take<detail::AttentionCache>("attention_backward");
  const Tensor& xs = cache.input;
  const std::size_t batch = xs.dim(0), steps = xs.dim(1), dim = xs.dim(2);
  if (dcontext.shape() != Shape{batch, dim})
    throw DimensionError("attention_backward: upstream gradient " + to_string(dcontext.shape()));
  const Tensor& w = state.param("weight");
  Tensor& dw = state.grad("weight");
  Tensor& dbias = state.grad("bias");
  Tensor dxs(xs.shape());
  std::vector<double> da(steps), de(steps);

  for (std::size_t b = 0; b < batch; ++b) {
    const double* dc = dcontext.data() + b * dim;
    const double* a = cache.weights.data() + b * steps;
    const double* e = cache.scores.data() + b * steps;
    for (std::size_t t = 0; t < steps; ++t) {
      const double* x = xs.data() + (b * steps + t) * dim;
      double* dx = dxs.data() + (b * steps + t) * dim;
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        s += dc[d] * x[d];
        dx[d] = a[t] * dc[d];
      }
      da[t] = s;
    }
    double weighted = 0.0;
    for (std::size_t t = 0; t < steps; ++t) weighted += a[t] * da[t];
    if (cache.norm == AttentionNorm::softmax) {
      for (std::size_t t = 0; t < steps; ++t) de[t] = a[t] * (da[t] - weighted);
    } else {
      for (std::size_t t = 0; t < steps; ++t) de[t] = (da[t] - weighted) / cache.sums[b];
    }
    for (std::size_t t = 0; t < steps; ++t) {
      const double ds = de[t] * (1.0 - e[t] * e[t]);
      const double* x = xs.data() + (b * steps + t) * dim;
      double* dx = dxs.data() + (b * steps + t) * dim;
      for (std::size_t d = 0; d < dim; ++d) {
        dw[d] += ds * x[d];
        dx[d] += ds * w[d];
      }
      dbias[0] += ds;
    }
  }
  state.mark_grads_populated();
  return dxs;
}

}  // namespace conflictnet
