// Dense row-major tensor of doubles and the primitive operations layers are
// built from. Every op with a backward rule exposes it as a free function
// taking the upstream gradient and whatever the forward returned.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "conflictnet/error.hpp"
#include "conflictnet/parallel.hpp"

namespace conflictnet {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  /// 1-D tensor from a list of values.
  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  /// 2-D tensor from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... Idx>
  double& at(Idx... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Idx>
  double at(Idx... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const& {
    Tensor t = *this;
    t.reshape(std::move(shape));
    return t;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }
  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size())
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    shape_ = std::move(shape);
    validate_shape();
  }

  void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& other) const = default;

  void require_same_shape(const Tensor& other, const char* op) const {
    if (shape_ != other.shape_)
      throw DimensionError(std::string(op) + ": shapes " + to_string(shape_) + " and " +
                           to_string(other.shape_) + " differ");
  }

 private:
  void validate_shape() const {
    for (auto d : shape_)
      if (d == 0) throw DimensionError("tensor dims must be positive, got " + to_string(shape_));
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size())
      throw DimensionError("index rank " + std::to_string(idx.size()) + " for shape " + to_string(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      if (i >= shape_[axis]) throw DimensionError("index out of range for shape " + to_string(shape_));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Throws NumericError naming `what` if any element is NaN or infinite.
inline void check_finite(const Tensor& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite value in " + what);
}

namespace detail {

// C[rows] (+)= A[rows] * B for row-major A (MxK), B (KxN), C (MxN).
// Each C element accumulates over k in ascending order regardless of threading.
inline void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
                 bool accumulate, bool parallel = true) {
  auto rows = [=](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      double* ci = c + i * n;
      if (!accumulate) std::fill(ci, ci + n, 0.0);
      const double* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ai[p];
        if (av == 0.0) continue;
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  };
  const std::size_t work = m * k * n;
  if (!parallel || work < (1u << 15) || ThreadPool::instance().size() == 1) {
    rows(0, m);
  } else {
    ThreadPool::instance().run(m, rows);
  }
}

inline void transpose(const double* a, double* out, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock)
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock)
      for (std::size_t i = i0; i < std::min(rows, i0 + kBlock); ++i)
        for (std::size_t j = j0; j < std::min(cols, j0 + kBlock); ++j) out[j * rows + i] = a[i * cols + j];
}

}  // namespace detail

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + to_string(a.shape()));
  Tensor out({a.dim(1), a.dim(0)});
  detail::transpose(a.data(), out.data(), a.dim(0), a.dim(1));
  return out;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor c({a.dim(0), b.dim(1)});
  detail::gemm(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1), false);
  return c;
}

struct MatmulGrads {
  Tensor da;
  Tensor db;
};

/// dA = dC·Bᵀ, dB = Aᵀ·dC.
inline MatmulGrads matmul_backward(const Tensor& dc, const Tensor& a, const Tensor& b) {
  return {matmul(dc, transpose(b)), matmul(transpose(a), dc)};
}

/// Numerically stable softmax over a 1-D tensor.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() != 1 || x.empty()) throw DimensionError("softmax expects a non-empty vector, got " + to_string(x.shape()));
  Tensor y(x.shape());
  const double mx = *std::max_element(x.values().begin(), x.values().end());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= sum;
  return y;
}

/// Softmax along the last axis of a matrix.
inline Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("softmax_rows expects a matrix, got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= sum;
  }
  return y;
}

/// Gradient of softmax given its output y and upstream dy: y ⊙ (dy − ⟨dy, y⟩).
inline Tensor softmax_backward(const Tensor& dy, const Tensor& y) {
  dy.require_same_shape(y, "softmax_backward");
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += dy[i] * y[i];
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (dy[i] - dot);
  return dx;
}

enum class Activation { identity, tanh, sigmoid, relu };

inline std::string to_string(Activation f) {
  switch (f) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
  }
  return "?";
}

inline double sigmoid(double v) noexcept {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline double activate(Activation f, double v) noexcept {
  switch (f) {
    case Activation::identity: return v;
    case Activation::tanh: return std::tanh(v);
    case Activation::sigmoid: return sigmoid(v);
    case Activation::relu: return v > 0.0 ? v : 0.0;
  }
  return v;
}

/// Derivative expressed through the forward output y = f(x).
inline double activation_derivative(Activation f, double y) noexcept {
  switch (f) {
    case Activation::identity: return 1.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

inline Tensor elementwise(const Tensor& x, Activation f) {
  Tensor y = x;
  for (auto& v : y.storage()) v = activate(f, v);
  return y;
}

inline Tensor elementwise_backward(const Tensor& dy, const Tensor& y, Activation f) {
  dy.require_same_shape(y, "elementwise_backward");
  Tensor dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * activation_derivative(f, y[i]);
  return dx;
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
template <typename Fn>
Tensor finite_difference_grad(Fn&& f, const Tensor& x, double h = 1e-5) {
  if (!(h > 0.0)) throw ContractError("finite_difference_grad: step must be positive");
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(static_cast<const Tensor&>(probe));
    probe[i] = orig - h;
    const double fm = f(static_cast<const Tensor&>(probe));
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_difference_grad: non-finite function value at coordinate " + std::to_string(i));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// |a−b| / max(|a|, |b|, 1e-8).
inline double relative_error(double a, double b) noexcept {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

inline double max_relative_error(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace conflictnet
