// Parameters, gradients and the single-use forward cache of one layer.
#pragma once

#include <any>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "conflictnet/error.hpp"
#include "conflictnet/rng.hpp"
#include "conflictnet/tensor.hpp"

namespace conflictnet {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

class LayerState {
 public:
  LayerState() = default;
  explicit LayerState(std::string name) : name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

  Tensor& add_param(std::string name, Tensor init) {
    for (const auto& p : params_)
      if (p.name == name) throw ContractError("duplicate parameter '" + name + "' in " + name_);
    Tensor grad(init.shape());
    params_.push_back({std::move(name), std::move(init), std::move(grad)});
    return params_.back().value;
  }

  Tensor& param(const std::string& name) { return find(name).value; }
  const Tensor& param(const std::string& name) const { return const_cast<LayerState*>(this)->find(name).value; }
  Tensor& grad(const std::string& name) { return find(name).grad; }
  const Tensor& grad(const std::string& name) const { return const_cast<LayerState*>(this)->find(name).grad; }
  bool has_param(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return true;
    return false;
  }

  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
    grads_populated_ = false;
  }

  bool grads_populated() const noexcept { return grads_populated_; }
  void mark_grads_populated() noexcept { grads_populated_ = true; }

  template <typename Cache>
  void store(Cache cache) {
    cache_ = std::move(cache);
  }

  /// Removes and returns the cache left by the last forward.
  template <typename Cache>
  Cache take(const char* op) {
    if (!cache_.has_value())
      throw ContractError(std::string(op) + ": backward called without a preceding forward on '" + name_ + "'");
    auto* c = std::any_cast<Cache>(&cache_);
    if (c == nullptr) throw ContractError(std::string(op) + ": cache on '" + name_ + "' was written by a different op");
    Cache out = std::move(*c);
    cache_.reset();
    return out;
  }

  /// Cache left by the last forward without consuming it, or nullptr.
  template <typename Cache>
  const Cache* peek() const noexcept {
    return std::any_cast<Cache>(&cache_);
  }

  bool has_cache() const noexcept { return cache_.has_value(); }
  void clear_cache() noexcept { cache_.reset(); }

 private:
  Param& find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw ContractError("no parameter '" + name + "' in layer '" + name_ + "'");
  }

  std::string name_;
  std::vector<Param> params_;
  std::any cache_;
  bool grads_populated_ = false;
};

/// Glorot-uniform draw, limit sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace conflictnet
