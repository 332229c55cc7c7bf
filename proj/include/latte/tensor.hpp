#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "latte/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace latte {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Keeps large activation buffers on the heap instead of fresh mmap pages,
/// which otherwise dominate the cost of a training step.
inline void tune_allocator() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
    return true;
  }();
  (void)done;
#endif
}

template <typename T>
class Tape;

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;  // leaf that accumulates gradients (parameter)
  bool tracked = false;        // produced by an op recorded on a tape
  bool grad_ready = false;     // backward has written into `grad`
  const Tape<T>* tape = nullptr;
  std::uint64_t generation = 0;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{});
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share storage; use `clone()` for a
/// deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{}), requires_grad);
  }

  static Tensor full(Shape shape, T v) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<T>{v}, requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> data() { return node_->value; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }
  T& operator[](std::size_t i) { return node_->value[i]; }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool tracked() const { return node_->tracked; }

  bool has_grad() const { return node_->grad_ready; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }

  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T{});
    node_->grad_ready = false;
  }

  Tensor clone() const {
    return Tensor(node_->shape, node_->value, node_->requires_grad);
  }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of executed differentiable ops. Backward replays the
/// recorded closures in reverse order, which is a reverse topological order of
/// the forward pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() { tune_allocator(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(BackwardFn fn) {
    if (consumed_) throw TapeError("recording onto a consumed tape; call reset() first");
    entries_.push_back(std::move(fn));
  }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw DimensionError("backward requires a scalar loss, got shape " +
                           (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    const auto& node = *loss.node();
    if (consumed_) throw TapeError("backward already ran on this tape; call reset() first");
    if (!node.tracked || node.tape != this || node.generation != generation_) {
      throw TapeError("loss was not produced on the active tape");
    }
    loss.node()->ensure_grad()[0] = T{1};
    loss.node()->grad_ready = true;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    consumed_ = true;
  }

  void reset() {
    entries_.clear();
    consumed_ = false;
    ++generation_;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }
  std::uint64_t generation() const noexcept { return generation_; }

 private:
  std::vector<BackwardFn> entries_;
  bool consumed_ = false;
  std::uint64_t generation_ = 0;
};

template <typename T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

/// Installs a tape as the thread's active tape for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(active_tape<T>()) { active_tape<T>() = &tape; }
  ~TapeScope() { active_tape<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

}  // namespace latte
