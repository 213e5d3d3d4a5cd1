// Max pooling over NHWC batches. Gradient goes to the first row-major argmax.
#pragma once

#include "conflictnet/layers/layer_state.hpp"

namespace conflictnet {

namespace detail {
struct MaxPoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};
}  // namespace detail

inline Tensor maxpool_forward(const Tensor& x, std::size_t window, std::size_t stride, LayerState& state) {
  if (x.rank() != 4) throw DimensionError("maxpool expects NHWC input, got " + to_string(x.shape()));
  if (window < 1 || stride < 1) throw DimensionError("maxpool: window and stride must be >= 1");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (window > h || window > w)
    throw DimensionError("maxpool: window " + std::to_string(window) + " larger than input " + to_string(x.shape()));
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  Tensor y({n, oh, ow, c});
  std::vector<std::size_t> argmax(y.size());
  parallel_for(n, [&](std::size_t b) {
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((b * h + oy * stride) * w + ox * stride) * c + ch;
          double best_v = x[best];
          for (std::size_t ky = 0; ky < window; ++ky)
            for (std::size_t kx = 0; kx < window; ++kx) {
              const std::size_t idx = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
              if (x[idx] > best_v) {
                best_v = x[idx];
                best = idx;
              }
            }
          const std::size_t o = ((b * oh + oy) * ow + ox) * c + ch;
          y[o] = best_v;
          argmax[o] = best;
        }
  });
  state.store(detail::MaxPoolCache{x.shape(), std::move(argmax)});
  return y;
}

inline Tensor maxpool_backward(const Tensor& dy, LayerState& state) {
  auto cache = state.take<detail::MaxPoolCache>("maxpool_backward");
  if (dy.size() != cache.argmax.size())
    throw DimensionError("maxpool_backward: upstream gradient " + to_string(dy.shape()));
  Tensor dx(cache.input_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[cache.argmax[o]] += dy[o];
  return dx;
}

}  // namespace conflictnet
