#pragma once

#include <array>
#include <cmath>
#include <string>

#include "bevscan/core/module.hpp"

namespace bevscan {

/// Mean binary cross-entropy over all elements, computed from logits in the
/// overflow-free form max(x, 0) - x*y + log1p(exp(-|x|)).
template <typename T>
Tensor<T> seg_loss(const Tensor<T>& logits, const Tensor<T>& target) {
  detail::require_same_shape(logits, target, "seg_loss");
  const auto x = logits.data();
  const auto y = target.data();
  const std::size_t N = x.size();
  double acc = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double xi = x[i], yi = y[i];
    acc += std::max(xi, 0.0) - xi * yi + std::log1p(std::exp(-std::abs(xi)));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / double(N)));
  if (detail::any_requires_grad<T>({&logits, &target})) {
    detail::record(out, [logits, target, N](std::span<const T> g) {
      const T s = g[0] / static_cast<T>(N);
      const T* xp = logits.ptr();
      const T* yp = target.ptr();
      if (T* gx = detail::grad_target(logits))
        for (std::size_t i = 0; i < N; ++i) gx[i] += s * (sigmoid_scalar(xp[i]) - yp[i]);
      if (T* gy = detail::grad_target(target))
        for (std::size_t i = 0; i < N; ++i) gy[i] -= s * xp[i];
    });
  }
  return out;
}

/// Mean squared error over all elements.
template <typename T>
Tensor<T> center_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "center_loss");
  const auto p = pred.data();
  const auto t = target.data();
  const std::size_t N = p.size();
  double acc = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double e = double(p[i]) - double(t[i]);
    acc += e * e;
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / double(N)));
  if (detail::any_requires_grad<T>({&pred, &target})) {
    detail::record(out, [pred, target, N](std::span<const T> g) {
      const T s = T(2) * g[0] / static_cast<T>(N);
      const T* pp = pred.ptr();
      const T* tp = target.ptr();
      T* gp = detail::grad_target(pred);
      T* gt = detail::grad_target(target);
      for (std::size_t i = 0; i < N; ++i) {
        const T d = s * (pp[i] - tp[i]);
        if (gp) gp[i] += d;
        if (gt) gt[i] -= d;
      }
    });
  }
  return out;
}

/// Mean absolute error over the cells where mask > 0, averaged over every
/// channel of those cells. pred/target (B, C, H, W), mask (B, 1, H, W).
/// Zero when the mask is empty.
template <typename T>
Tensor<T> offset_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  detail::require_same_shape(pred, target, "offset_loss");
  if (pred.rank() != 4 || mask.rank() != 4 || mask.dim(1) != 1 || mask.dim(0) != pred.dim(0) ||
      mask.dim(2) != pred.dim(2) || mask.dim(3) != pred.dim(3)) {
    throw ShapeError("offset_loss: mask " + shape_str(mask.shape()) + " does not cover " + shape_str(pred.shape()));
  }
  const std::size_t B = pred.dim(0), C = pred.dim(1), HW = pred.dim(2) * pred.dim(3);
  const T* pp = pred.ptr();
  const T* tp = target.ptr();
  const T* mp = mask.ptr();
  std::size_t active = 0;
  double acc = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < HW; ++s) {
      if (!(mp[b * HW + s] > T(0))) continue;
      ++active;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t i = (b * C + c) * HW + s;
        acc += std::abs(double(pp[i]) - double(tp[i]));
      }
    }
  const double denom = double(active * C);
  Tensor<T> out = Tensor<T>::scalar(active ? static_cast<T>(acc / denom) : T(0));
  if (active && detail::any_requires_grad<T>({&pred, &target})) {
    detail::record(out, [pred, target, mask, B, C, HW, denom](std::span<const T> g) {
      const T s = g[0] / static_cast<T>(denom);
      const T* pp = pred.ptr();
      const T* tp = target.ptr();
      const T* mp = mask.ptr();
      T* gp = detail::grad_target(pred);
      T* gt = detail::grad_target(target);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t q = 0; q < HW; ++q) {
          if (!(mp[b * HW + q] > T(0))) continue;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = (b * C + c) * HW + q;
            const T d = pp[i] - tp[i];
            const T sg = d > T(0) ? s : (d < T(0) ? -s : T(0));
            if (gp) gp[i] += sg;
            if (gt) gt[i] -= sg;
          }
        }
    });
  }
  return out;
}

/// Learned log-variances of the three tasks, or fixed weights when
/// `learned` is false.
template <typename T>
struct UncertaintyWeights {
  Tensor<T> log_var;  // (3): seg, center, offset
  bool learned = true;
  std::array<T, 3> fixed{T(1), T(1), T(1)};

  UncertaintyWeights() : log_var(make_param<T>(Shape{3})) {}

  void collect(const std::string& prefix, ParamList<T>& out) const {
    if (learned) out.emplace_back(prefix + ".log_var", log_var);
  }
};

/// L = sum_k exp(-s_k) L_k + s_k (learned) or sum_k w_k L_k (fixed).
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_seg, const Tensor<T>& l_cen, const Tensor<T>& l_off,
                     const UncertaintyWeights<T>& w) {
  const std::array<Tensor<T>, 3> ls{l_seg, l_cen, l_off};
  for (const auto& l : ls)
    if (l.numel() != 1) throw ShapeError("total_loss: component losses must be scalars");
  if (!w.learned) {
    return add_n<T>({scale(l_seg, w.fixed[0]), scale(l_cen, w.fixed[1]), scale(l_off, w.fixed[2])});
  }
  const Tensor<T>& s = w.log_var;
  if (s.numel() != 3) throw ShapeError("total_loss: expected 3 log-variances, got " + shape_str(s.shape()));
  T acc = 0;
  for (std::size_t k = 0; k < 3; ++k) acc += std::exp(-s[k]) * ls[k].item() + s[k];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (detail::any_requires_grad<T>({&l_seg, &l_cen, &l_off, &s})) {
    detail::record(out, [ls, s](std::span<const T> g) {
      T* gs = detail::grad_target(s);
      for (std::size_t k = 0; k < 3; ++k) {
        const T e = std::exp(-s[k]);
        if (T* gl = detail::grad_target(ls[k])) gl[0] += g[0] * e;
        if (gs) gs[k] += g[0] * (T(1) - e * ls[k].item());
      }
    });
  }
  return out;
}

}  // namespace bevscan
