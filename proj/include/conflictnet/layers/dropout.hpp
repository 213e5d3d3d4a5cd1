// Inverted dropout: survivors are scaled by 1/(1-rate); inference is identity.
#pragma once

#include "conflictnet/layers/layer_state.hpp"

namespace conflictnet {

namespace detail {
struct DropoutCache {
  Tensor mask;  // empty when the forward was an identity
};
}  // namespace detail

inline void validate_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout_rate", "must be in [0,1), got " + std::to_string(rate));
}

inline Tensor dropout_forward(const Tensor& x, double rate, Rng& rng, bool training, LayerState& state) {
  validate_dropout_rate(rate);
  if (!training || rate == 0.0) {
    state.store(detail::DropoutCache{});
    return x;
  }
  const double scale = 1.0 / (1.0 - rate);
  Tensor mask(x.shape());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : scale;
    y[i] = x[i] * mask[i];
  }
  state.store(detail::DropoutCache{std::move(mask)});
  return y;
}

inline Tensor dropout_backward(const Tensor& dy, LayerState& state) {
  auto cache = state.take<detail::DropoutCache>("dropout_backward");
  if (cache.mask.empty()) return dy;
  dy.require_same_shape(cache.mask, "dropout_backward");
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * cache.mask[i];
  return dx;
}

}  // namespace conflictnet
