// Standard LSTM cell, a time-unrolled LSTM, and the bidirectional wrapper.
//
// Gate blocks are packed along the last axis in the order i, f, g, o:
//   z = x·kernel + h_prev·recurrent + bias        (B × 4U)
//   i, f, o = sigmoid(z_*),  g = tanh(z_g)
//   c = f ⊙ c_prev + i ⊙ g,  h = o ⊙ tanh(c)
#pragma once

#include <vector>

#include "conflictnet/layers/layer_state.hpp"

namespace conflictnet {

enum class Gate : std::size_t { input = 0, forget = 1, cell = 2, output = 3 };

inline LayerState init_lstm(std::string name, std::size_t in, std::size_t units, Rng& rng) {
  LayerState s(std::move(name));
  s.add_param("kernel", glorot_uniform({in, 4 * units}, in, 4 * units, rng));
  s.add_param("recurrent", glorot_uniform({units, 4 * units}, units, 4 * units, rng));
  Tensor bias({4 * units});
  for (std::size_t u = 0; u < units; ++u) bias[static_cast<std::size_t>(Gate::forget) * units + u] = 1.0;
  s.add_param("bias", std::move(bias));
  return s;
}

inline std::size_t lstm_units(const LayerState& s) { return s.param("recurrent").dim(0); }

struct LstmStepCache {
  Tensor x, h_prev, c_prev;
  Tensor gates;  // activated i, f, g, o (B × 4U)
  Tensor c, tanh_c;
};

struct LstmStepResult {
  Tensor h;
  Tensor c;
  LstmStepCache cache;
};

struct LstmStepGrads {
  Tensor dx;
  Tensor dh_prev;
  Tensor dc_prev;
};

inline LstmStepResult lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev, const LayerState& state) {
  const Tensor& wk = state.param("kernel");
  const Tensor& wr = state.param("recurrent");
  const Tensor& bias = state.param("bias");
  const std::size_t units = wr.dim(0), in = wk.dim(0);
  if (x.rank() != 2 || x.dim(1) != in || h_prev.shape() != Shape{x.dim(0), units} || c_prev.shape() != h_prev.shape())
    throw DimensionError("lstm_step '" + state.name() + "': x " + to_string(x.shape()) + ", h " +
                         to_string(h_prev.shape()) + ", c " + to_string(c_prev.shape()) + " vs kernel " +
                         to_string(wk.shape()));
  const std::size_t batch = x.dim(0), g4 = 4 * units;
  Tensor z({batch, g4});
  for (std::size_t r = 0; r < batch; ++r) std::copy(bias.data(), bias.data() + g4, z.data() + r * g4);
  detail::gemm(x.data(), wk.data(), z.data(), batch, in, g4, true);
  detail::gemm(h_prev.data(), wr.data(), z.data(), batch, units, g4, true);

  Tensor c({batch, units}), h({batch, units}), tanh_c({batch, units});
  for (std::size_t r = 0; r < batch; ++r) {
    double* zr = z.data() + r * g4;
    for (std::size_t u = 0; u < units; ++u) {
      const double ig = sigmoid(zr[u]);
      const double fg = sigmoid(zr[units + u]);
      const double gg = std::tanh(zr[2 * units + u]);
      const double og = sigmoid(zr[3 * units + u]);
      zr[u] = ig;
      zr[units + u] = fg;
      zr[2 * units + u] = gg;
      zr[3 * units + u] = og;
      const std::size_t o = r * units + u;
      c[o] = fg * c_prev[o] + ig * gg;
      tanh_c[o] = std::tanh(c[o]);
      h[o] = og * tanh_c[o];
    }
  }
  return {h, c, LstmStepCache{x, h_prev, c_prev, std::move(z), c, std::move(tanh_c)}};
}

/// Backward through one step; accumulates parameter gradients into `state`.
inline LstmStepGrads lstm_step_backward(const Tensor& dh, const Tensor& dc, const LstmStepCache& cache,
                                        LayerState& state) {
  const Tensor& wk = state.param("kernel");
  const Tensor& wr = state.param("recurrent");
  const std::size_t units = wr.dim(0), in = wk.dim(0), batch = cache.x.dim(0), g4 = 4 * units;
  dh.require_same_shape(cache.c, "lstm_step_backward(dh)");
  dc.require_same_shape(cache.c, "lstm_step_backward(dc)");

  Tensor dz({batch, g4});
  Tensor dc_prev({batch, units});
  for (std::size_t r = 0; r < batch; ++r) {
    const double* gr = cache.gates.data() + r * g4;
    double* dzr = dz.data() + r * g4;
    for (std::size_t u = 0; u < units; ++u) {
      const std::size_t o = r * units + u;
      const double ig = gr[u], fg = gr[units + u], gg = gr[2 * units + u], og = gr[3 * units + u];
      const double tc = cache.tanh_c[o];
      const double dct = dc[o] + dh[o] * og * (1.0 - tc * tc);
      dzr[u] = dct * gg * ig * (1.0 - ig);
      dzr[units + u] = dct * cache.c_prev[o] * fg * (1.0 - fg);
      dzr[2 * units + u] = dct * ig * (1.0 - gg * gg);
      dzr[3 * units + u] = dh[o] * tc * og * (1.0 - og);
      dc_prev[o] = dct * fg;
    }
  }

  const Tensor xt = transpose(cache.x);
  detail::gemm(xt.data(), dz.data(), state.grad("kernel").data(), in, batch, g4, true);
  const Tensor ht = transpose(cache.h_prev);
  detail::gemm(ht.data(), dz.data(), state.grad("recurrent").data(), units, batch, g4, true);
  Tensor& db = state.grad("bias");
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t j = 0; j < g4; ++j) db[j] += dz[r * g4 + j];

  Tensor dx({batch, in}), dh_prev({batch, units});
  const Tensor wkt = transpose(wk);
  const Tensor wrt = transpose(wr);
  detail::gemm(dz.data(), wkt.data(), dx.data(), batch, g4, in, false);
  detail::gemm(dz.data(), wrt.data(), dh_prev.data(), batch, g4, units, false);
  state.mark_grads_populated();
  return {std::move(dx), std::move(dh_prev), std::move(dc_prev)};
}

namespace detail {

struct LstmSequenceCache {
  std::vector<LstmStepCache> steps;  // in processing order
  bool reverse;
  std::size_t in;
};

inline Tensor time_slice(const Tensor& xs, std::size_t t) {
  const std::size_t batch = xs.dim(0), steps = xs.dim(1), width = xs.dim(2);
  Tensor out({batch, width});
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(xs.data() + (b * steps + t) * width, width, out.data() + b * width);
  return out;
}

// Writes src (B × width) into dst[:, t, offset : offset + width].
inline void put_time_slice(Tensor& dst, std::size_t t, std::size_t offset, const Tensor& src) {
  const std::size_t batch = dst.dim(0), steps = dst.dim(1), width = dst.dim(2), w = src.dim(1);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(src.data() + b * w, w, dst.data() + (b * steps + t) * width + offset);
}

inline Tensor get_time_slice(const Tensor& src, std::size_t t, std::size_t offset, std::size_t w) {
  const std::size_t batch = src.dim(0), steps = src.dim(1), width = src.dim(2);
  Tensor out({batch, w});
  for (std::size_t b = 0; b < batch; ++b)
    std::copy_n(src.data() + (b * steps + t) * width + offset, w, out.data() + b * w);
  return out;
}

}  // namespace detail

/// Runs the cell over B×T×In from zero state; `reverse` walks time backwards
/// but writes each h_t at its original time index.
inline Tensor lstm_forward(const Tensor& xs, LayerState& state, bool reverse = false) {
  if (xs.rank() != 3) throw DimensionError("lstm_forward expects B×T×In, got " + to_string(xs.shape()));
  const std::size_t batch = xs.dim(0), steps = xs.dim(1), units = lstm_units(state);
  Tensor h({batch, units}), c({batch, units});
  Tensor out({batch, steps, units});
  detail::LstmSequenceCache cache{{}, reverse, xs.dim(2)};
  cache.steps.reserve(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    auto step = lstm_step(detail::time_slice(xs, t), h, c, state);
    detail::put_time_slice(out, t, 0, step.h);
    h = std::move(step.h);
    c = std::move(step.c);
    cache.steps.push_back(std::move(step.cache));
  }
  state.store(std::move(cache));
  return out;
}

/// Backpropagation through time; dys is B×T×U aligned with the forward output.
inline Tensor lstm_backward(const Tensor& dys, LayerState& state) {
  auto cache = state.take<detail::LstmSequenceCache>("lstm_backward");
  const std::size_t steps = cache.steps.size();
  const std::size_t units = lstm_units(state);
  if (dys.rank() != 3 || dys.dim(1) != steps || dys.dim(2) != units)
    throw DimensionError("lstm_backward: upstream gradient " + to_string(dys.shape()));
  const std::size_t batch = dys.dim(0);
  Tensor dxs({batch, steps, cache.in});
  Tensor dh_next({batch, units}), dc_next({batch, units});
  for (std::size_t k = steps; k-- > 0;) {
    const std::size_t t = cache.reverse ? steps - 1 - k : k;
    Tensor dh = detail::time_slice(dys, t);
    dh += dh_next;
    auto g = lstm_step_backward(dh, dc_next, cache.steps[k], state);
    detail::put_time_slice(dxs, t, 0, g.dx);
    dh_next = std::move(g.dh_prev);
    dc_next = std::move(g.dc_prev);
  }
  return dxs;
}

/// Concatenates forward-direction and reverse-direction hidden states per
/// timestep: B×T×In -> B×T×2U.
inline Tensor bilstm_forward(const Tensor& xs, LayerState& fwd, LayerState& bwd) {
  if (xs.rank() != 3) throw DimensionError("bilstm_forward expects B×T×In, got " + to_string(xs.shape()));
  const Tensor hf = lstm_forward(xs, fwd, false);
  const Tensor hb = lstm_forward(xs, bwd, true);
  const std::size_t batch = xs.dim(0), steps = xs.dim(1), uf = hf.dim(2), ub = hb.dim(2);
  Tensor out({batch, steps, uf + ub});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t) {
      double* dst = out.data() + (b * steps + t) * (uf + ub);
      std::copy_n(hf.data() + (b * steps + t) * uf, uf, dst);
      std::copy_n(hb.data() + (b * steps + t) * ub, ub, dst + uf);
    }
  return out;
}

inline Tensor bilstm_backward(const Tensor& dy, LayerState& fwd, LayerState& bwd) {
  const std::size_t uf = lstm_units(fwd), ub = lstm_units(bwd);
  if (dy.rank() != 3 || dy.dim(2) != uf + ub)
    throw DimensionError("bilstm_backward: upstream gradient " + to_string(dy.shape()));
  const std::size_t batch = dy.dim(0), steps = dy.dim(1);
  Tensor df({batch, steps, uf}), db({batch, steps, ub});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t) {
      const double* src = dy.data() + (b * steps + t) * (uf + ub);
      std::copy_n(src, uf, df.data() + (b * steps + t) * uf);
      std::copy_n(src + uf, ub, db.data() + (b * steps + t) * ub);
    }
  Tensor dx = lstm_backward(df, fwd);
  dx += lstm_backward(db, bwd);
  return dx;
}

}  // namespace conflictnet
