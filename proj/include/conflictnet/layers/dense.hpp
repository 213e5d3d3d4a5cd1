// Fully connected layer: activation(x·W + b).
#pragma once

#include "conflictnet/layers/layer_state.hpp"

namespace conflictnet {

inline LayerState init_dense(std::string name, std::size_t in, std::size_t out, Rng& rng) {
  LayerState s(std::move(name));
  s.add_param("weight", glorot_uniform({in, out}, in, out, rng));
  s.add_param("bias", Tensor({out}));
  return s;
}

namespace detail {
struct DenseCache {
  Tensor input;
  Tensor output;
  Activation activation;
};
}  // namespace detail

inline Tensor dense_forward(const Tensor& x, LayerState& state, Activation activation = Activation::identity) {
  const Tensor& w = state.param("weight");
  const Tensor& b = state.param("bias");
  if (x.rank() != 2 || x.dim(1) != w.dim(0))
    throw DimensionError("dense '" + state.name() + "': input " + to_string(x.shape()) + " vs weight " +
                         to_string(w.shape()));
  const std::size_t rows = x.dim(0), out = w.dim(1);
  Tensor y({rows, out});
  for (std::size_t r = 0; r < rows; ++r) std::copy(b.data(), b.data() + out, y.data() + r * out);
  detail::gemm(x.data(), w.data(), y.data(), rows, w.dim(0), out, true);
  if (activation != Activation::identity)
    for (auto& v : y.storage()) v = activate(activation, v);
  state.store(detail::DenseCache{x, y, activation});
  return y;
}

/// Accumulates dW, db into the state's grads and returns dx.
inline Tensor dense_backward(const Tensor& dy, LayerState& state) {
  auto cache = state.take<detail::DenseCache>("dense_backward");
  dy.require_same_shape(cache.output, "dense_backward");
  const Tensor dz = cache.activation == Activation::identity ? dy
                                                              : elementwise_backward(dy, cache.output, cache.activation);
  const Tensor& w = state.param("weight");
  const std::size_t rows = dz.dim(0), in = w.dim(0), out = w.dim(1);

  Tensor xt = transpose(cache.input);
  detail::gemm(xt.data(), dz.data(), state.grad("weight").data(), in, rows, out, true);
  Tensor& db = state.grad("bias");
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out; ++j) db[j] += dz[r * out + j];

  Tensor dx({rows, in});
  Tensor wt = transpose(w);
  detail::gemm(dz.data(), wt.data(), dx.data(), rows, out, in, false);
  state.mark_grads_populated();
  return dx;
}

}  // namespace conflictnet
