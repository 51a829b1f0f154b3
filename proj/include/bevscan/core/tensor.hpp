#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bevscan {

using Shape = std::vector<std::size_t>;

/// Raised on any shape or dimension contract violation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

/// Cache-line aligned allocation. Vectorized kernels peel unaligned heads through
/// scalar code whose rounding differs from the packet path, so a fixed alignment
/// keeps results independent of heap placement.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TensorStorage {
  Shape shape;
  AlignedVector<T> data;
  AlignedVector<T> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
  bool is_leaf = true;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

/// Ordered record of executed differentiable operations.
///
/// Operations append an entry as they run, so the tape order is a
/// topological order of the graph; backward replays it in reverse. One tape
/// lives per thread.
class Tape {
 public:
  struct Entry {
    std::function<void()> backward;
    std::function<void()> release;  // drops the output's (non-leaf) gradient
  };

  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  void record(std::function<void()> backward, std::function<void()> release) {
    entries_.push_back({std::move(backward), std::move(release)});
  }

  void replay_backward() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
  }

  void clear() {
    for (auto& e : entries_) e.release();
    entries_.clear();
  }

  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Dense row-major tensor with optional gradient tracking.
///
/// Copies are shallow handles onto shared storage; use clone() for a deep
/// copy. Forward values are never mutated by operations, only by explicit
/// writes to leaf data (parameter updates, input filling).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : st_(std::make_shared<TensorStorage<T>>()) {
    st_->data.assign(numel_of(shape), fill);
    st_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data) : st_(std::make_shared<TensorStorage<T>>()) {
    if (numel_of(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    st_->shape = std::move(shape);
    st_->data.assign(data.begin(), data.end());
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  template <typename Rng>
  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : t.st_->data) v = static_cast<T>(nd(rng)) * stddev;
    return t;
  }

  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> ud(lo, hi);
    for (auto& v : t.st_->data) v = static_cast<T>(ud(rng));
    return t;
  }

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const { return st_->shape; }
  std::size_t rank() const { return st_->shape.size(); }
  std::size_t dim(std::size_t i) const { return st_->shape.at(i); }
  std::size_t numel() const { return st_->data.size(); }

  std::span<const T> data() const { return st_->data; }
  std::span<T> mutable_data() { return st_->data; }
  const T* ptr() const { return st_->data.data(); }
  T* mutable_ptr() { return st_->data.data(); }
  T operator[](std::size_t i) const { return st_->data[i]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return st_->data[0];
  }

  bool requires_grad() const { return st_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    st_->requires_grad = on;
    return *this;
  }
  bool is_leaf() const { return st_->is_leaf; }
  bool has_grad() const { return !st_->grad.empty(); }
  std::span<const T> grad() const { return st_->grad; }
  std::span<T> mutable_grad() {
    st_->ensure_grad();
    return st_->grad;
  }
  void zero_grad() { st_->grad.clear(); }

  Tensor clone() const {
    Tensor t(shape());
    t.st_->data = st_->data;
    return t;
  }
  /// Same values, cut from the graph.
  Tensor detach() const { return clone(); }

  const std::shared_ptr<TensorStorage<T>>& storage() const { return st_; }
  bool same_storage(const Tensor& o) const { return st_ == o.st_; }

 private:
  std::shared_ptr<TensorStorage<T>> st_;
};

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> ins) {
  if (!grad_enabled()) return false;
  for (auto* t : ins)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

/// Marks `out` as a graph node and records its backward closure on the tape.
/// The closure receives the output gradient; it runs only if that gradient
/// was populated.
template <typename T, typename Fn>
void record(Tensor<T>& out, Fn&& fn) {
  auto st = out.storage();
  st->requires_grad = true;
  st->is_leaf = false;
  std::weak_ptr<TensorStorage<T>> weak = st;
  Tape::current().record(
      [st, fn = std::forward<Fn>(fn)]() {
        if (st->grad.empty()) return;
        fn(std::span<const T>(st->grad));
      },
      [weak]() {
        if (auto s = weak.lock()) {
          s->grad.clear();
          s->grad.shrink_to_fit();
        }
      });
}

/// Gradient buffer of an input if it participates in differentiation.
template <typename T>
T* grad_target(const Tensor<T>& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  t.storage()->ensure_grad();
  return t.storage()->grad.data();
}

}  // namespace detail

/// Reverse-mode pass from a scalar. Populates grads on every requires_grad
/// leaf reached and clears the tape afterwards unless asked to keep it.
template <typename T>
void backward(const Tensor<T>& loss, bool keep_tape = false) {
  if (loss.numel() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw std::logic_error("backward() on a tensor that does not require grad");
  auto st = loss.storage();
  st->ensure_grad();
  st->grad[0] += T(1);
  Tape::current().replay_backward();
  if (!keep_tape) Tape::current().clear();
}

}  // namespace bevscan
