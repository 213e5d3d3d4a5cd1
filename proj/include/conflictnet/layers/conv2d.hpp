// 2-D cross-correlation over NHWC batches (no kernel flip).
//
// Kernels are stored k×k×C×F. Each image is lowered with im2col and multiplied
// against the flattened kernel; images run in parallel and kernel gradients
// are reduced over fixed image groups in ascending order.
#pragma once

#include <algorithm>

#include "conflictnet/layers/layer_state.hpp"

namespace conflictnet {

enum class Padding { same, valid };

inline std::string to_string(Padding p) { return p == Padding::same ? "same" : "valid"; }

struct Conv2dGeometry {
  std::size_t in_h, in_w, channels, kernel, filters, stride;
  std::size_t out_h, out_w;
  std::size_t pad_top, pad_left;

  std::size_t patch() const noexcept { return kernel * kernel * channels; }
  std::size_t positions() const noexcept { return out_h * out_w; }
};

inline Conv2dGeometry conv2d_geometry(std::size_t h, std::size_t w, std::size_t c, std::size_t k, std::size_t f,
                                      std::size_t stride, Padding padding) {
  if (k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  Conv2dGeometry g{h, w, c, k, f, stride, 0, 0, 0, 0};
  if (padding == Padding::same) {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + k;
    const std::size_t need_w = (g.out_w - 1) * stride + k;
    g.pad_top = need_h > h ? (need_h - h) / 2 : 0;
    g.pad_left = need_w > w ? (need_w - w) / 2 : 0;
  } else {
    if (k > h || k > w)
      throw DimensionError("conv2d: kernel " + std::to_string(k) + " larger than input " + std::to_string(h) + "x" +
                           std::to_string(w));
    g.out_h = (h - k) / stride + 1;
    g.out_w = (w - k) / stride + 1;
  }
  return g;
}

inline LayerState init_conv2d(std::string name, std::size_t kernel, std::size_t channels, std::size_t filters,
                              Rng& rng) {
  LayerState s(std::move(name));
  s.add_param("kernel", glorot_uniform({kernel, kernel, channels, filters}, kernel * kernel * channels,
                                       kernel * kernel * filters, rng));
  s.add_param("bias", Tensor({filters}));
  return s;
}

namespace detail {

struct Conv2dCache {
  Tensor input;
  Conv2dGeometry geom;
};

// col[p][(ky*k + kx)*C + c] for output position p; out-of-bounds taps are zero.
inline void im2col(const double* img, const Conv2dGeometry& g, double* col) {
  const std::size_t k = g.kernel, c = g.channels;
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      double* row = col + (oy * g.out_w + ox) * g.patch();
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
          double* dst = row + (ky * k + kx) * c;
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) ||
              ix >= static_cast<std::ptrdiff_t>(g.in_w)) {
            std::fill(dst, dst + c, 0.0);
          } else {
            const double* src = img + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* col, const Conv2dGeometry& g, double* img) {
  const std::size_t k = g.kernel, c = g.channels;
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const double* row = col + (oy * g.out_w + ox) * g.patch();
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
          const double* src = row + (ky * k + kx) * c;
          double* dst = img + (static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

// Number of images reduced together before the ordered cross-group sum.
inline std::size_t conv_group_size(std::size_t batch) { return std::max<std::size_t>(1, (batch + 63) / 64); }

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& x, LayerState& state, std::size_t stride = 1,
                             Padding padding = Padding::same) {
  const Tensor& kern = state.param("kernel");
  const Tensor& bias = state.param("bias");
  if (x.rank() != 4 || x.dim(3) != kern.dim(2))
    throw DimensionError("conv2d '" + state.name() + "': input " + to_string(x.shape()) + " vs kernel " +
                         to_string(kern.shape()));
  const std::size_t batch = x.dim(0);
  const auto g = conv2d_geometry(x.dim(1), x.dim(2), x.dim(3), kern.dim(0), kern.dim(3), stride, padding);
  Tensor y({batch, g.out_h, g.out_w, g.filters});
  const std::size_t in_stride = g.in_h * g.in_w * g.channels;
  const std::size_t out_stride = g.positions() * g.filters;
  parallel_for(batch, [&](std::size_t b) {
    std::vector<double> col(g.positions() * g.patch());
    detail::im2col(x.data() + b * in_stride, g, col.data());
    double* yb = y.data() + b * out_stride;
    for (std::size_t p = 0; p < g.positions(); ++p) std::copy(bias.data(), bias.data() + g.filters, yb + p * g.filters);
    detail::gemm(col.data(), kern.data(), yb, g.positions(), g.patch(), g.filters, true, false);
  });
  state.store(detail::Conv2dCache{x, g});
  return y;
}

inline Tensor conv2d_backward(const Tensor& dy, LayerState& state) {
  auto cache = state.take<detail::Conv2dCache>("conv2d_backward");
  const auto& g = cache.geom;
  const std::size_t batch = cache.input.dim(0);
  if (dy.shape() != Shape{batch, g.out_h, g.out_w, g.filters})
    throw DimensionError("conv2d_backward: upstream gradient " + to_string(dy.shape()));

  const Tensor kt = transpose(state.param("kernel").reshaped({g.patch(), g.filters}));
  Tensor dx(cache.input.shape());
  const std::size_t in_stride = g.in_h * g.in_w * g.channels;
  const std::size_t out_stride = g.positions() * g.filters;
  const std::size_t group = detail::conv_group_size(batch);
  const std::size_t groups = (batch + group - 1) / group;
  std::vector<double> dk_groups(groups * g.patch() * g.filters, 0.0);

  parallel_for(groups, [&](std::size_t gi) {
    std::vector<double> col(g.positions() * g.patch());
    std::vector<double> colt(col.size());
    std::vector<double> dcol(col.size());
    double* dk = dk_groups.data() + gi * g.patch() * g.filters;
    for (std::size_t b = gi * group; b < std::min(batch, (gi + 1) * group); ++b) {
      const double* dyb = dy.data() + b * out_stride;
      detail::im2col(cache.input.data() + b * in_stride, g, col.data());
      detail::transpose(col.data(), colt.data(), g.positions(), g.patch());
      detail::gemm(colt.data(), dyb, dk, g.patch(), g.positions(), g.filters, true, false);
      detail::gemm(dyb, kt.data(), dcol.data(), g.positions(), g.filters, g.patch(), false, false);
      detail::col2im_add(dcol.data(), g, dx.data() + b * in_stride);
    }
  });

  Tensor& dk = state.grad("kernel");
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double* src = dk_groups.data() + gi * g.patch() * g.filters;
    for (std::size_t i = 0; i < dk.size(); ++i) dk[i] += src[i];
  }
  Tensor& db = state.grad("bias");
  for (std::size_t r = 0; r < batch * g.positions(); ++r)
    for (std::size_t f = 0; f < g.filters; ++f) db[f] += dy[r * g.filters + f];
  state.mark_grads_populated();
  return dx;
}

}  // namespace conflictnet
