#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nmfnav/error.hpp"

namespace nmfnav {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

enum class Mode { train, eval };

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
};

/// Dense row-major array taking part in reverse-mode differentiation.
///
/// A tensor is a shared handle: copies alias the same storage, which is what lets
/// the tape write gradients back into parameters held elsewhere. Use clone() or
/// detach() for an independent copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  /// Zero-extent axes are allowed (empty concat operands).
  explicit BasicTensor(Shape shape, T fill = T(0)) : s_(std::make_shared<TensorStorage<T>>()) {
    s_->value.assign(shape_numel(shape), fill);
    s_->shape = std::move(shape);
  }

  BasicTensor(Shape shape, std::vector<T> values) : s_(std::make_shared<TensorStorage<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
    }
    s_->shape = std::move(shape);
    s_->value = std::move(values);
  }

  static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const void* id() const noexcept { return s_.get(); }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t numel() const { return s_->value.size(); }

  std::span<T> data() { return s_->value; }
  std::span<const T> data() const { return s_->value; }
  T& operator[](std::size_t i) { return s_->value[i]; }
  const T& operator[](std::size_t i) const { return s_->value[i]; }
  std::vector<T>& values() { return s_->value; }
  const std::vector<T>& values() const { return s_->value; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return s_->value[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  BasicTensor& set_requires_grad(bool on) {
    s_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !s_->grad.empty() || numel() == 0; }
  std::span<T> grad() { return s_->grad; }
  std::span<const T> grad() const { return s_->grad; }

  /// Allocates a zeroed gradient buffer if none exists.
  void ensure_grad() {
    if (s_->grad.size() != s_->value.size()) s_->grad.assign(s_->value.size(), T(0));
  }
  void zero_grad() { s_->grad.assign(s_->value.size(), T(0)); }
  void drop_grad() { s_->grad.clear(); }

  /// Reinterprets the shape in place; element count must match.
  void reshape_inplace(Shape shape) {
    if (shape_numel(shape) != numel()) {
      throw ShapeError("cannot reshape " + shape_str(s_->shape) + " to " + shape_str(shape));
    }
    s_->shape = std::move(shape);
  }

  BasicTensor clone() const {
    BasicTensor out;
    out.s_ = std::make_shared<TensorStorage<T>>(*s_);
    return out;
  }

  BasicTensor detach() const { return BasicTensor(shape(), values()); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> v(values().begin(), values().end());
    BasicTensor<U> out(shape(), std::move(v));
    out.set_requires_grad(requires_grad());
    return out;
  }

  bool all_finite() const {
    return std::all_of(s_->value.begin(), s_->value.end(), [](T v) { return std::isfinite(v); });
  }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

using Tensor = BasicTensor<float>;

/// Ordered log of executed differentiable operations.
///
/// Each entry holds a closure that reads its output's gradient and accumulates
/// into its inputs' gradients. backward() replays entries in reverse, each once,
/// then clears the log. A disabled tape records nothing (inference).
template <typename T>
class BasicTape {
 public:
  explicit BasicTape(bool enabled = true) : enabled_(enabled) {}

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  bool enabled() const noexcept { return enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// True when an op over these inputs must be recorded.
  template <typename... Ts>
  bool wants(const Ts&... inputs) const {
    if (!enabled_) return false;
    return ((inputs.defined() && inputs.requires_grad()) || ...);
  }

  /// Registers an executed op. The output is marked as requiring gradient.
  void record(BasicTensor<T> output, std::function<void()> backward_fn) {
    output.set_requires_grad(true);
    nodes_.push_back(Node{std::move(output), std::move(backward_fn)});
    consumed_ = false;
  }

  /// Populates gradients of every requires_grad tensor reachable from `loss`.
  void backward(const BasicTensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw GraphError("backward() requires a scalar loss");
    }
    if (consumed_) {
      throw GraphError("backward() called twice without a new forward pass");
    }
    const auto it = std::find_if(nodes_.begin(), nodes_.end(),
                                 [&](const Node& n) { return n.output.id() == loss.id(); });
    if (it == nodes_.end()) {
      // No differentiable path: nothing to populate.
      clear();
      consumed_ = true;
      return;
    }
    for (auto& n : nodes_) n.output.ensure_grad();
    BasicTensor<T> seed = it->output;
    seed.grad()[0] = T(1);
    for (auto node = nodes_.rbegin(); node != nodes_.rend(); ++node) node->backward();
    clear();
    consumed_ = true;
  }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    BasicTensor<T> output;
    std::function<void()> backward;
  };

  bool enabled_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

using Tape = BasicTape<float>;

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what) {
  if (t.defined() && !t.all_finite()) {
    throw NumericError(std::string("non-finite value in ") + what);
  }
}

}  // namespace nmfnav
