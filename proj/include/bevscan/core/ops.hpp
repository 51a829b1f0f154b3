#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bevscan/core/tensor.hpp"

namespace bevscan {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

/// y = f(x) evaluated in an aligned scratch buffer. Eigen peels unaligned heads
/// through scalar transcendental paths, which differ from the packet paths in the
/// last ulp; staging keeps results independent of where the heap put x and y.
template <typename T, typename F>
void aligned_apply(const T* x, T* y, std::size_t n, F f) {
  thread_local Eigen::Array<T, Eigen::Dynamic, 1> buf;
  const auto N = static_cast<Eigen::Index>(n);
  buf.resize(N);
  buf = CArrMap<T>(x, N);
  buf = f(buf);
  ArrMap<T>(y, N) = buf;
}

/// Vectorized logistic function over n contiguous values.
template <typename T>
void sigmoid_n(const T* x, T* y, std::size_t n) {
  aligned_apply(x, y, n, [](const auto& a) { return (T(1) + (-a).exp()).inverse(); });
}

/// Elementwise unary op given value and derivative-from-(x, y) functors.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  const T* xp = x.ptr();
  T* yp = out.mutable_ptr();
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) yp[i] = f(xp[i]);
  if (any_requires_grad<T>({&x})) {
    Tensor<T> xin = x;
    std::weak_ptr<TensorStorage<T>> yw = out.storage();
    record(out, [xin, yw, df](std::span<const T> g) {
      T* gx = grad_target(xin);
      if (!gx) return;
      auto ys = yw.lock();
      const T* xp = xin.ptr();
      const T* yp = ys->data.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xp[i], yp[i]);
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* yp = out.mutable_ptr();
  for (std::size_t i = 0; i < out.numel(); ++i) yp[i] = ap[i] + bp[i];
  if (detail::any_requires_grad<T>({&a, &b})) {
    detail::record(out, [a, b](std::span<const T> g) {
      if (T* ga = detail::grad_target(a))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (T* gb = detail::grad_target(b))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.mutable_ptr()[i] = a[i] - b[i];
  if (detail::any_requires_grad<T>({&a, &b})) {
    detail::record(out, [a, b](std::span<const T> g) {
      if (T* ga = detail::grad_target(a))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (T* gb = detail::grad_target(b))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.mutable_ptr()[i] = a[i] * b[i];
  if (detail::any_requires_grad<T>({&a, &b})) {
    detail::record(out, [a, b](std::span<const T> g) {
      if (T* ga = detail::grad_target(a))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      if (T* gb = detail::grad_target(b))
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
    });
  }
  return out;
}

/// Sum of any number of same-shape tensors.
template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("add_n: no inputs");
  Tensor<T> out(xs[0].shape());
  T* yp = out.mutable_ptr();
  bool track = false;
  for (const auto& x : xs) {
    detail::require_same_shape(xs[0], x, "add_n");
    for (std::size_t i = 0; i < out.numel(); ++i) yp[i] += x[i];
    track = track || detail::any_requires_grad<T>({&x});
  }
  if (track) {
    detail::record(out, [xs](std::span<const T> g) {
      for (const auto& x : xs)
        if (T* gx = detail::grad_target(x))
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.mutable_ptr()[i] = x[i] * s;
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, s](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

/// Multiplies every element by a differentiable one-element tensor.
template <typename T>
Tensor<T> mul_scalar_tensor(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.numel() != 1) throw ShapeError("mul_scalar_tensor: scalar expected, got " + shape_str(s.shape()));
  const T sv = s[0];
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.mutable_ptr()[i] = x[i] * sv;
  if (detail::any_requires_grad<T>({&x, &s})) {
    detail::record(out, [x, s, sv](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
      if (T* gs = detail::grad_target(s)) {
        T acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
        gs[0] += acc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  detail::aligned_apply(x.ptr(), out.mutable_ptr(), x.numel(),
                        [](const auto& a) { return a.exp(); });
  if (detail::any_requires_grad<T>({&x})) {
    std::weak_ptr<TensorStorage<T>> yw = out.storage();
    detail::record(out, [x, yw](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      if (!gx) return;
      auto ys = yw.lock();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * ys->data[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// ---------------------------------------------------------------------------
// Activations. Kinks take subgradient 0.

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
T softplus_scalar(T v) {
  return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  detail::sigmoid_n(x.ptr(), out.mutable_ptr(), x.numel());
  if (detail::any_requires_grad<T>({&x})) {
    std::weak_ptr<TensorStorage<T>> yw = out.storage();
    detail::record(out, [x, yw](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      if (!gx) return;
      auto ys = yw.lock();
      const T* y = ys->data.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  Tensor<T> out(x.shape());
  const bool track = detail::any_requires_grad<T>({&x});
  auto sig = std::make_shared<std::vector<T>>(n);
  detail::sigmoid_n(x.ptr(), sig->data(), n);
  const T* xp = x.ptr();
  T* yp = out.mutable_ptr();
  for (std::size_t i = 0; i < n; ++i) yp[i] = xp[i] * (*sig)[i];
  if (track) {
    detail::record(out, [x, sig](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      if (!gx) return;
      const T* xp = x.ptr();
      const T* s = sig->data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i] * (T(1) + xp[i] * (T(1) - s[i]));
    });
  }
  return out;
}

/// log(1 + exp(x)) as max(x, 0) + log1p(exp(-|x|)).
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  detail::aligned_apply(x.ptr(), out.mutable_ptr(), x.numel(), [](const auto& a) {
    return a.max(T(0)) + (-a.abs()).exp().log1p();
  });
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      if (!gx) return;
      std::vector<T> s(g.size());
      detail::sigmoid_n(x.ptr(), s.data(), s.size());
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i];
    });
  }
  return out;
}

/// relu6(x + 3) / 6
template <typename T>
Tensor<T> hsigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::min(std::max(v + T(3), T(0)), T(6)) / T(6); },
      [](T v, T) { return (v > T(-3) && v < T(3)) ? T(1) / T(6) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  Tensor<T> out(Shape{1}, acc);
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Linear algebra

/// (m x k) . (k x n)
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Tensor<T> out(Shape{a.dim(0), b.dim(1)});
  MatMap<T>(out.mutable_ptr(), m, n).noalias() = CMatMap<T>(a.ptr(), m, k) * CMatMap<T>(b.ptr(), k, n);
  if (detail::any_requires_grad<T>({&a, &b})) {
    detail::record(out, [a, b, m, k, n](std::span<const T> g) {
      CMatMap<T> G(g.data(), m, n);
      if (T* ga = detail::grad_target(a))
        MatMap<T>(ga, m, k).noalias() += G * CMatMap<T>(b.ptr(), k, n).transpose();
      if (T* gb = detail::grad_target(b))
        MatMap<T>(gb, k, n).noalias() += CMatMap<T>(a.ptr(), m, k).transpose() * G;
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose2d: rank-2 tensor expected, got " + shape_str(x.shape()));
  const auto r = static_cast<Eigen::Index>(x.dim(0));
  const auto c = static_cast<Eigen::Index>(x.dim(1));
  Tensor<T> out(Shape{x.dim(1), x.dim(0)});
  MatMap<T>(out.mutable_ptr(), c, r) = CMatMap<T>(x.ptr(), r, c).transpose();
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, r, c](std::span<const T> g) {
      if (T* gx = detail::grad_target(x)) MatMap<T>(gx, r, c) += CMatMap<T>(g.data(), c, r).transpose();
    });
  }
  return out;
}

/// y = x . W (+ b) over the last axis. x: (..., in), W: (in, out), b: (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
  if (w.rank() != 2 || x.shape().back() != w.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(1))) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  }
  const auto in = static_cast<Eigen::Index>(w.dim(0));
  const auto outd = static_cast<Eigen::Index>(w.dim(1));
  const auto rows = static_cast<Eigen::Index>(x.numel() / w.dim(0));
  Shape oshape = x.shape();
  oshape.back() = w.dim(1);
  Tensor<T> out(oshape);
  MatMap<T> Y(out.mutable_ptr(), rows, outd);
  Y.noalias() = CMatMap<T>(x.ptr(), rows, in) * CMatMap<T>(w.ptr(), in, outd);
  if (b.defined()) Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.ptr(), outd);
  if (detail::any_requires_grad<T>({&x, &w, &b})) {
    detail::record(out, [x, w, b, rows, in, outd](std::span<const T> g) {
      CMatMap<T> G(g.data(), rows, outd);
      if (T* gx = detail::grad_target(x))
        MatMap<T>(gx, rows, in).noalias() += G * CMatMap<T>(w.ptr(), in, outd).transpose();
      if (T* gw = detail::grad_target(w))
        MatMap<T>(gw, in, outd).noalias() += CMatMap<T>(x.ptr(), rows, in).transpose() * G;
      if (b.defined())
        if (T* gb = detail::grad_target(b))
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb, outd) += G.colwise().sum();
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

namespace detail {
inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}
}  // namespace detail

/// Axis permutation: out.shape[i] = x.shape[axes[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw ShapeError("permute: axes rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(r, false);
  Shape oshape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw ShapeError("permute: invalid axis list");
    seen[axes[i]] = true;
    oshape[i] = x.dim(axes[i]);
  }
  bool swap_last = r >= 2 && axes[r - 2] == r - 1 && axes[r - 1] == r - 2;
  for (std::size_t i = 0; swap_last && i + 2 < r; ++i) swap_last = axes[i] == i;
  if (swap_last) {
    // batched 2-D transpose
    const auto rows = static_cast<Eigen::Index>(x.dim(r - 2)), cols = static_cast<Eigen::Index>(x.dim(r - 1));
    const std::size_t mat = x.dim(r - 2) * x.dim(r - 1), batch = x.numel() / std::max<std::size_t>(mat, 1);
    Tensor<T> out(oshape);
    for (std::size_t b = 0; b < batch; ++b)
      MatMap<T>(out.mutable_ptr() + b * mat, cols, rows) = CMatMap<T>(x.ptr() + b * mat, rows, cols).transpose();
    if (detail::any_requires_grad<T>({&x})) {
      detail::record(out, [x, rows, cols, mat, batch](std::span<const T> g) {
        if (T* gx = detail::grad_target(x))
          for (std::size_t b = 0; b < batch; ++b)
            MatMap<T>(gx + b * mat, rows, cols) += CMatMap<T>(g.data() + b * mat, cols, rows).transpose();
      });
    }
    return out;
  }
  const auto in_strides = detail::strides_of(x.shape());
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) src_stride[i] = in_strides[axes[i]];
  // index map out -> in, reused by backward
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> ctr(r, 0);
  for (std::size_t o = 0; o < x.numel(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += ctr[i] * src_stride[i];
    (*index)[o] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++ctr[i] < oshape[i]) break;
      ctr[i] = 0;
    }
  }
  Tensor<T> out(oshape);
  for (std::size_t o = 0; o < x.numel(); ++o) out.mutable_ptr()[o] = x[(*index)[o]];
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, index](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t o = 0; o < g.size(); ++o) gx[(*index)[o]] += g[o];
    });
  }
  return out;
}

/// Concatenation along `axis`; every other extent must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
  }
  Shape oshape = s0;
  oshape[axis] = 0;
  for (const auto& x : xs) {
    if (x.rank() != s0.size()) throw ShapeError("concat: rank mismatch " + shape_str(x.shape()));
    for (std::size_t i = 0; i < s0.size(); ++i)
      if (i != axis && x.dim(i) != s0[i])
        throw ShapeError("concat: incompatible shapes " + shape_str(s0) + " and " + shape_str(x.shape()));
    oshape[axis] += x.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  Tensor<T> out(oshape);
  const std::size_t out_row = oshape[axis] * inner;
  std::size_t offset = 0;
  bool track = false;
  for (const auto& x : xs) {
    const std::size_t row = x.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.ptr() + o * row, row, out.mutable_ptr() + o * out_row + offset);
    offset += row;
    track = track || detail::any_requires_grad<T>({&x});
  }
  if (track) {
    detail::record(out, [xs, axis, outer, inner, out_row](std::span<const T> g) {
      std::size_t off = 0;
      for (const auto& x : xs) {
        const std::size_t row = x.dim(axis) * inner;
        if (T* gx = detail::grad_target(x))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < row; ++i) gx[o * row + i] += g[o * out_row + off + i];
        off += row;
      }
    });
  }
  return out;
}

/// Contiguous slice [begin, begin+count) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t count) {
  if (axis >= x.rank() || begin + count > x.dim(axis) || count == 0) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") invalid on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape oshape = x.shape();
  oshape[axis] = count;
  Tensor<T> out(oshape);
  const std::size_t in_row = x.dim(axis) * inner, out_row = count * inner, off = begin * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.ptr() + o * in_row + off, out_row, out.mutable_ptr() + o * out_row);
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, outer, in_row, out_row, off](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < out_row; ++i) gx[o * in_row + off + i] += g[o * out_row + i];
    });
  }
  return out;
}

/// Reorders rows along axis 1 of a (B, L, D) tensor: out[b, i] = x[b, index[i]].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& index) {
  if (x.rank() != 3 || index.size() != x.dim(1)) {
    throw ShapeError("gather_rows: index of length " + std::to_string(index.size()) +
                     " incompatible with " + shape_str(x.shape()));
  }
  const std::size_t B = x.dim(0), L = x.dim(1), D = x.dim(2);
  for (auto i : index)
    if (i >= L) throw ShapeError("gather_rows: index out of range");
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < L; ++i)
      std::copy_n(x.ptr() + (b * L + index[i]) * D, D, out.mutable_ptr() + (b * L + i) * D);
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, index, B, L, D](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < L; ++i) {
            T* dst = gx + (b * L + index[i]) * D;
            const T* src = g.data() + (b * L + i) * D;
            for (std::size_t d = 0; d < D; ++d) dst[d] += src[d];
          }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Broadcast-free channel helpers

/// x: (N, C, ...) plus b: (C).
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (x.rank() < 2 || b.numel() != x.dim(1)) {
    throw ShapeError("add_channel_bias: bias " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.numel() / (N * C);
  Tensor<T> out(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * S;
      for (std::size_t s = 0; s < S; ++s) out.mutable_ptr()[base + s] = x[base + s] + b[c];
    }
  if (detail::any_requires_grad<T>({&x, &b})) {
    detail::record(out, [x, b, N, C, S](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      if (T* gb = detail::grad_target(b))
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            T acc = 0;
            for (std::size_t s = 0; s < S; ++s) acc += g[(n * C + c) * S + s];
            gb[c] += acc;
          }
    });
  }
  return out;
}

/// x: (N, C, ...) times per-sample channel weights w: (N, C).
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.rank() < 2 || w.rank() != 2 || w.dim(0) != x.dim(0) || w.dim(1) != x.dim(1)) {
    throw ShapeError("scale_channels: weights " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.numel() / (N * C);
  Tensor<T> out(x.shape());
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t s = 0; s < S; ++s) out.mutable_ptr()[nc * S + s] = x[nc * S + s] * w[nc];
  if (detail::any_requires_grad<T>({&x, &w})) {
    detail::record(out, [x, w, N, C, S](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      T* gw = detail::grad_target(w);
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        T acc = 0;
        for (std::size_t s = 0; s < S; ++s) {
          if (gx) gx[nc * S + s] += g[nc * S + s] * w[nc];
          acc += g[nc * S + s] * x[nc * S + s];
        }
        if (gw) gw[nc] += acc;
      }
    });
  }
  return out;
}

/// x: (N, C, H, W) times a single-channel map m: (N, 1, H, W), shared across channels.
template <typename T>
Tensor<T> mul_spatial(const Tensor<T>& x, const Tensor<T>& m) {
  if (x.rank() != 4 || m.rank() != 4 || m.dim(0) != x.dim(0) || m.dim(1) != 1 || m.dim(2) != x.dim(2) ||
      m.dim(3) != x.dim(3)) {
    throw ShapeError("mul_spatial: mask " + shape_str(m.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s)
        out.mutable_ptr()[(n * C + c) * S + s] = x[(n * C + c) * S + s] * m[n * S + s];
  if (detail::any_requires_grad<T>({&x, &m})) {
    detail::record(out, [x, m, N, C, S](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      T* gm = detail::grad_target(m);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t i = (n * C + c) * S + s;
            if (gx) gx[i] += g[i] * m[n * S + s];
            if (gm) gm[n * S + s] += g[i] * x[i];
          }
    });
  }
  return out;
}

/// x: (..., D) times g: (D), broadcast over leading axes.
template <typename T>
Tensor<T> mul_lastdim(const Tensor<T>& x, const Tensor<T>& gamma) {
  const std::size_t D = x.shape().back();
  if (gamma.numel() != D) {
    throw ShapeError("mul_lastdim: " + shape_str(gamma.shape()) + " vs input " + shape_str(x.shape()));
  }
  const std::size_t R = x.numel() / D;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t d = 0; d < D; ++d) out.mutable_ptr()[r * D + d] = x[r * D + d] * gamma[d];
  if (detail::any_requires_grad<T>({&x, &gamma})) {
    detail::record(out, [x, gamma, R, D](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      T* gg = detail::grad_target(gamma);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t d = 0; d < D; ++d) {
          if (gx) gx[r * D + d] += g[r * D + d] * gamma[d];
          if (gg) gg[d] += g[r * D + d] * x[r * D + d];
        }
    });
  }
  return out;
}

/// x: (..., D) plus b: (D), broadcast over leading axes.
template <typename T>
Tensor<T> add_lastdim(const Tensor<T>& x, const Tensor<T>& b) {
  const std::size_t D = x.shape().back();
  if (b.numel() != D) throw ShapeError("add_lastdim: " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
  const std::size_t R = x.numel() / D;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t d = 0; d < D; ++d) out.mutable_ptr()[r * D + d] = x[r * D + d] + b[d];
  if (detail::any_requires_grad<T>({&x, &b})) {
    detail::record(out, [x, b, R, D](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      if (T* gb = detail::grad_target(b))
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t d = 0; d < D; ++d) gb[d] += g[r * D + d];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization / attention primitives

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0) throw ShapeError("softmax_lastdim: scalar input");
  const std::size_t D = x.shape().back(), R = x.numel() / D;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < R; ++r) {
    const T* xp = x.ptr() + r * D;
    T* yp = out.mutable_ptr() + r * D;
    const T mx = *std::max_element(xp, xp + D);
    detail::aligned_apply(xp, yp, D, [mx](const auto& a) { return (a - mx).exp(); });
    auto y = detail::ArrMap<T>(yp, static_cast<Eigen::Index>(D));
    y /= y.sum();
  }
  if (detail::any_requires_grad<T>({&x})) {
    std::weak_ptr<TensorStorage<T>> yw = out.storage();
    detail::record(out, [x, yw, R, D](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      if (!gx) return;
      auto ys = yw.lock();
      for (std::size_t r = 0; r < R; ++r) {
        const T* y = ys->data.data() + r * D;
        const T* gy = g.data() + r * D;
        T dot = 0;
        for (std::size_t d = 0; d < D; ++d) dot += gy[d] * y[d];
        for (std::size_t d = 0; d < D; ++d) gx[r * D + d] += y[d] * (gy[d] - dot);
      }
    });
  }
  return out;
}

namespace detail {
/// Row-softmax of S in place; returns nothing, rows are independent.
template <typename T>
void softmax_rows(RowMat<T>& S) {
  for (Eigen::Index r = 0; r < S.rows(); ++r) {
    auto row = S.row(r).array();
    row = (row - row.maxCoeff()).exp();
    row /= row.sum();
  }
}
}  // namespace detail

/// softmax(q k^T) v for q (Q, dk), k (M, dk), v (M, dv), computed in row
/// blocks so the (Q, M) weight matrix is never materialized; the backward
/// pass recomputes each block.
template <typename T>
Tensor<T> softmax_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0) ||
      k.dim(0) == 0) {
    throw ShapeError("softmax_attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                     shape_str(v.shape()));
  }
  using Index = Eigen::Index;
  const auto Q = Index(q.dim(0)), M = Index(k.dim(0)), dk = Index(q.dim(1)), dv = Index(v.dim(1));
  static constexpr Index kRows = 256;
  Tensor<T> out(Shape{q.dim(0), v.dim(1)});
  {
    CMatMap<T> K(k.ptr(), M, dk), V(v.ptr(), M, dv);
    for (Index r0 = 0; r0 < Q; r0 += kRows) {
      const Index n = std::min(kRows, Q - r0);
      RowMat<T> Sb = CMatMap<T>(q.ptr() + r0 * dk, n, dk) * K.transpose();
      detail::softmax_rows(Sb);
      MatMap<T>(out.mutable_ptr() + r0 * dv, n, dv).noalias() = Sb * V;
    }
  }
  if (detail::any_requires_grad<T>({&q, &k, &v})) {
    std::weak_ptr<TensorStorage<T>> ow = out.storage();
    detail::record(out, [q, k, v, ow, Q, M, dk, dv](std::span<const T> g) {
      T* gq = detail::grad_target(q);
      T* gk = detail::grad_target(k);
      T* gv = detail::grad_target(v);
      auto os = ow.lock();
      CMatMap<T> K(k.ptr(), M, dk), V(v.ptr(), M, dv);
      for (Index r0 = 0; r0 < Q; r0 += kRows) {
        const Index n = std::min(kRows, Q - r0);
        CMatMap<T> Qb(q.ptr() + r0 * dk, n, dk);
        CMatMap<T> Gb(g.data() + r0 * dv, n, dv);
        CMatMap<T> Ob(os->data.data() + r0 * dv, n, dv);
        RowMat<T> P = Qb * K.transpose();
        detail::softmax_rows(P);
        if (gv) MatMap<T>(gv, M, dv).noalias() += P.transpose() * Gb;
        if (!gq && !gk) continue;
        RowMat<T> dS = Gb * V.transpose();
        const Eigen::Matrix<T, Eigen::Dynamic, 1> dot = (Gb.array() * Ob.array()).rowwise().sum();
        dS = (P.array() * (dS.array().colwise() - dot.array())).matrix();
        if (gq) MatMap<T>(gq + r0 * dk, n, dk).noalias() += dS * K;
        if (gk) MatMap<T>(gk, M, dk).noalias() += dS.transpose() * Qb;
      }
    });
  }
  return out;
}

/// Zero-mean unit-variance normalization over the last axis (no affine).
template <typename T>
Tensor<T> layer_norm_lastdim(const Tensor<T>& x, T eps = T(1e-5)) {
  const std::size_t D = x.shape().back(), R = x.numel() / D;
  Tensor<T> out(x.shape());
  auto inv_std = std::make_shared<std::vector<T>>(R);
  for (std::size_t r = 0; r < R; ++r) {
    const T* xp = x.ptr() + r * D;
    T mu = 0;
    for (std::size_t d = 0; d < D; ++d) mu += xp[d];
    mu /= static_cast<T>(D);
    T var = 0;
    for (std::size_t d = 0; d < D; ++d) var += (xp[d] - mu) * (xp[d] - mu);
    var /= static_cast<T>(D);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t d = 0; d < D; ++d) out.mutable_ptr()[r * D + d] = (xp[d] - mu) * is;
  }
  if (detail::any_requires_grad<T>({&x})) {
    std::weak_ptr<TensorStorage<T>> yw = out.storage();
    detail::record(out, [x, yw, inv_std, R, D](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      if (!gx) return;
      auto ys = yw.lock();
      for (std::size_t r = 0; r < R; ++r) {
        const T* y = ys->data.data() + r * D;
        const T* gy = g.data() + r * D;
        T mg = 0, mgy = 0;
        for (std::size_t d = 0; d < D; ++d) {
          mg += gy[d];
          mgy += gy[d] * y[d];
        }
        mg /= static_cast<T>(D);
        mgy /= static_cast<T>(D);
        for (std::size_t d = 0; d < D; ++d) gx[r * D + d] += (*inv_std)[r] * (gy[d] - mg - y[d] * mgy);
      }
    });
  }
  return out;
}

}  // namespace bevscan
