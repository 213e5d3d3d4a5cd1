// Per-frame CNN stack and the TimeDistributed wrapper that shares it across
// every frame of a clip batch.
#pragma once

#include <variant>

#include "conflictnet/layers/conv2d.hpp"
#include "conflictnet/layers/dense.hpp"
#include "conflictnet/layers/pooling.hpp"

namespace conflictnet {

class FrameNet {
 public:
  enum class Kind { conv, activation, maxpool, flatten, dense };

  struct Stage {
    Kind kind;
    LayerState state;
    std::size_t stride = 1;
    std::size_t window = 2;
    Padding padding = Padding::same;
    Activation activation = Activation::identity;
  };

  FrameNet() = default;
  FrameNet(std::size_t h, std::size_t w, std::size_t c) : input_{h, w, c}, current_{h, w, c} {}

  /// Frame shape (H, W, C) the stack accepts.
  const Shape& input_shape() const noexcept { return input_; }
  /// Per-frame output shape after the stages added so far.
  const Shape& output_shape() const noexcept { return current_; }

  FrameNet& conv(std::string name, std::size_t kernel, std::size_t filters, Rng& rng, std::size_t stride = 1,
                 Padding padding = Padding::same) {
    require_spatial("conv");
    const auto g = conv2d_geometry(current_[0], current_[1], current_[2], kernel, filters, stride, padding);
    Stage s{Kind::conv, init_conv2d(std::move(name), kernel, current_[2], filters, rng)};
    s.stride = stride;
    s.padding = padding;
    stages_.push_back(std::move(s));
    current_ = {g.out_h, g.out_w, filters};
    return *this;
  }

  FrameNet& activation(std::string name, Activation f) {
    Stage s{Kind::activation, LayerState(std::move(name))};
    s.activation = f;
    stages_.push_back(std::move(s));
    return *this;
  }

  FrameNet& maxpool(std::string name, std::size_t window, std::size_t stride) {
    require_spatial("maxpool");
    if (window > current_[0] || window > current_[1])
      throw DimensionError("maxpool '" + name + "': window " + std::to_string(window) + " exceeds feature map " +
                           to_string(current_));
    Stage s{Kind::maxpool, LayerState(std::move(name))};
    s.window = window;
    s.stride = stride;
    stages_.push_back(std::move(s));
    current_ = {(current_[0] - window) / stride + 1, (current_[1] - window) / stride + 1, current_[2]};
    return *this;
  }

  FrameNet& flatten() {
    stages_.push_back(Stage{Kind::flatten, LayerState("flatten")});
    current_ = {shape_size(current_)};
    return *this;
  }

  FrameNet& dense(std::string name, std::size_t out, Activation f, Rng& rng) {
    if (current_.size() != 1) throw DimensionError("dense '" + name + "' needs a flattened input");
    Stage s{Kind::dense, init_dense(std::move(name), current_[0], out, rng)};
    s.activation = f;
    stages_.push_back(std::move(s));
    current_ = {out};
    return *this;
  }

  std::vector<Stage>& stages() noexcept { return stages_; }
  const std::vector<Stage>& stages() const noexcept { return stages_; }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& s : stages_) n += s.state.parameter_count();
    return n;
  }

  /// N×H×W×C -> N×(output_shape...).
  Tensor forward(const Tensor& frames) {
    Shape expect{0};
    expect.insert(expect.end(), input_.begin(), input_.end());
    expect[0] = frames.rank() ? frames.dim(0) : 0;
    if (frames.shape() != expect)
      throw DimensionError("frame net expects N×" + to_string(input_) + " frames, got " + to_string(frames.shape()));
    Tensor x = frames;
    for (auto& s : stages_) {
      switch (s.kind) {
        case Kind::conv: x = conv2d_forward(x, s.state, s.stride, s.padding); break;
        case Kind::activation:
          x = elementwise(x, s.activation);
          s.state.store(ActivationCache{x});
          break;
        case Kind::maxpool: x = maxpool_forward(x, s.window, s.stride, s.state); break;
        case Kind::flatten: {
          Shape in = x.shape();
          const std::size_t n = in[0];
          x.reshape({n, x.size() / n});
          s.state.store(std::move(in));
          break;
        }
        case Kind::dense: x = dense_forward(x, s.state, s.activation); break;
      }
    }
    return x;
  }

  /// Which side of every non-differentiable point the last forward landed on:
  /// ReLU on/off masks and max-pool winners, flattened.
  std::vector<std::size_t> activation_pattern() const {
    std::vector<std::size_t> out;
    for (const auto& s : stages_) {
      if (s.kind == Kind::activation && s.activation == Activation::relu) {
        if (const auto* c = s.state.peek<ActivationCache>())
          for (double v : c->output.values()) out.push_back(v > 0.0);
      } else if (s.kind == Kind::maxpool) {
        if (const auto* c = s.state.peek<detail::MaxPoolCache>()) out.insert(out.end(), c->argmax.begin(), c->argmax.end());
      } else if (s.kind == Kind::dense && s.activation == Activation::relu) {
        if (const auto* c = s.state.peek<detail::DenseCache>())
          for (double v : c->output.values()) out.push_back(v > 0.0);
      }
    }
    return out;
  }

  Tensor backward(const Tensor& dy) {
    Tensor g = dy;
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
      auto& s = *it;
      switch (s.kind) {
        case Kind::conv: g = conv2d_backward(g, s.state); break;
        case Kind::activation: {
          auto cache = s.state.take<ActivationCache>("activation_backward");
          g = elementwise_backward(g, cache.output, s.activation);
          break;
        }
        case Kind::maxpool: g = maxpool_backward(g, s.state); break;
        case Kind::flatten: g.reshape(s.state.take<Shape>("flatten_backward")); break;
        case Kind::dense: g = dense_backward(g, s.state); break;
      }
    }
    return g;
  }

 private:
  struct ActivationCache {
    Tensor output;
  };

  void require_spatial(const char* what) const {
    if (current_.size() != 3) throw DimensionError(std::string(what) + " needs an H×W×C feature map");
  }

  Shape input_;
  Shape current_;
  std::vector<Stage> stages_;
};

/// Applies `net` to each of the B·T frames of B×T×H×W×C with shared
/// parameters; returns B×T×F.
inline Tensor time_distributed_forward(FrameNet& net, const Tensor& xs) {
  if (xs.rank() != 5) throw DimensionError("time_distributed expects B×T×H×W×C, got " + to_string(xs.shape()));
  if (net.output_shape().size() != 1) throw DimensionError("time_distributed: frame net must end in a flat vector");
  const std::size_t batch = xs.dim(0), steps = xs.dim(1);
  Tensor frames = xs.reshaped({batch * steps, xs.dim(2), xs.dim(3), xs.dim(4)});
  Tensor y = net.forward(frames);
  const std::size_t features = y.dim(1);
  return std::move(y).reshaped({batch, steps, features});
}

/// Backward for time_distributed_forward. Parameter gradients sum over all frames.
inline Tensor time_distributed_backward(FrameNet& net, const Tensor& dy) {
  if (dy.rank() != 3) throw DimensionError("time_distributed_backward expects B×T×F, got " + to_string(dy.shape()));
  const std::size_t batch = dy.dim(0), steps = dy.dim(1);
  Tensor g = net.backward(dy.reshaped({batch * steps, dy.dim(2)}));
  const auto& in = net.input_shape();
  return std::move(g).reshaped({batch, steps, in[0], in[1], in[2]});
}

}  // namespace conflictnet
