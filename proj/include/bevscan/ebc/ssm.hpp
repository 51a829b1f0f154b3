#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "bevscan/core/ops.hpp"

namespace bevscan {

/// Discrete transition and input gains of one state lane.
struct DiscreteGains {
  double a_bar;
  double b_bar;
};

/// Zero-order-hold transition with the first-order input gain:
/// a_bar = exp(delta * a), b_bar = delta * b.
inline DiscreteGains discretize(double a, double b, double delta) {
  return {std::exp(delta * a), delta * b};
}

namespace detail {

/// abar[i, j] = exp(delta[i] * A[i, j]) for one time step, vectorized.
template <typename T>
void transition_gains(const T* delta, const T* A, std::size_t d, std::size_t n, T* abar) {
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < n; ++j) abar[i * n + j] = delta[i] * A[i * n + j];
  aligned_apply(abar, abar, d * n, [](const auto& a) { return a.exp(); });
}

}  // namespace detail

/// Input-dependent (selective) linear state-space scan.
///
/// Shapes: x, delta (B, L, d); A (d, n); b_in, c_out (B, L, n); skip (d).
/// Per channel i and state j, with h_0 = 0:
///   h_t = exp(delta_t,i * A_i,j) * h_{t-1} + delta_t,i * b_t,j * x_t,i
///   y_t,i = sum_j c_t,j * h_t,i,j + skip_i * x_t,i
/// The backward pass is the exact reverse-time adjoint of this recurrence.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& b_in,
                         const Tensor<T>& c_out, const Tensor<T>& skip) {
  if (x.rank() != 3 || delta.shape() != x.shape() || A.rank() != 2 || A.dim(0) != x.dim(2) || b_in.rank() != 3 ||
      b_in.dim(0) != x.dim(0) || b_in.dim(1) != x.dim(1) || b_in.dim(2) != A.dim(1) || c_out.shape() != b_in.shape() ||
      skip.numel() != x.dim(2)) {
    throw ShapeError("selective_scan: inconsistent shapes x" + shape_str(x.shape()) + " delta" +
                     shape_str(delta.shape()) + " A" + shape_str(A.shape()) + " B" + shape_str(b_in.shape()) +
                     " C" + shape_str(c_out.shape()) + " D" + shape_str(skip.shape()));
  }
  const std::size_t Bn = x.dim(0), L = x.dim(1), d = x.dim(2), n = A.dim(1);
  const bool track = detail::any_requires_grad<T>({&x, &delta, &A, &b_in, &c_out, &skip});
  // states kept for the adjoint pass: (B, L, d, n)
  auto states = std::make_shared<std::vector<T>>(track ? Bn * L * d * n : 0);
  std::vector<T> h(d * n), abar(d * n);
  Tensor<T> out(x.shape());
  const T* xp = x.ptr();
  const T* dp = delta.ptr();
  const T* ap = A.ptr();
  const T* bp = b_in.ptr();
  const T* cp = c_out.ptr();
  const T* sp = skip.ptr();
  T* yp = out.mutable_ptr();
  for (std::size_t b = 0; b < Bn; ++b) {
    std::fill(h.begin(), h.end(), T(0));
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t row = b * L + t;
      const T* bt = bp + row * n;
      const T* ct = cp + row * n;
      detail::transition_gains(dp + row * d, ap, d, n, abar.data());
      for (std::size_t i = 0; i < d; ++i) {
        const T xv = xp[row * d + i];
        const T dx = dp[row * d + i] * xv;
        T* hi = h.data() + i * n;
        const T* ei = abar.data() + i * n;
        T acc = 0;
        for (std::size_t j = 0; j < n; ++j) {
          hi[j] = ei[j] * hi[j] + dx * bt[j];
          acc += ct[j] * hi[j];
        }
        yp[row * d + i] = acc + sp[i] * xv;
      }
      if (track) std::copy(h.begin(), h.end(), states->begin() + static_cast<std::ptrdiff_t>(row * d * n));
    }
  }
  if (track) {
    detail::record(out, [x, delta, A, b_in, c_out, skip, states, Bn, L, d, n](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      T* gdelta = detail::grad_target(delta);
      T* gA = detail::grad_target(A);
      T* gB = detail::grad_target(b_in);
      T* gC = detail::grad_target(c_out);
      T* gD = detail::grad_target(skip);
      const T* xp = x.ptr();
      const T* dp = delta.ptr();
      const T* ap = A.ptr();
      const T* bp = b_in.ptr();
      const T* cp = c_out.ptr();
      const T* sp = skip.ptr();
      const T* hs = states->data();
      std::vector<T> dh(d * n), abar(d * n);
      for (std::size_t b = 0; b < Bn; ++b) {
        std::fill(dh.begin(), dh.end(), T(0));  // adjoint carried from t+1 (already multiplied by a_bar_{t+1})
        for (std::size_t t = L; t-- > 0;) {
          const std::size_t row = b * L + t;
          const T* bt = bp + row * n;
          const T* ct = cp + row * n;
          const T* ht = hs + row * d * n;
          const T* hprev = t > 0 ? hs + (row - 1) * d * n : nullptr;
          detail::transition_gains(dp + row * d, ap, d, n, abar.data());
          for (std::size_t i = 0; i < d; ++i) {
            const T gy = g[row * d + i];
            const T dt = dp[row * d + i];
            const T xv = xp[row * d + i];
            if (gD) gD[i] += gy * xv;
            T gxv = gy * sp[i];
            T gdt = 0;
            T* dhi = dh.data() + i * n;
            const T* ai = ap + i * n;
            const T* ei = abar.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
              const T total = dhi[j] + gy * ct[j];  // dL/dh_t
              if (gC) gC[row * n + j] += gy * ht[i * n + j];
              const T hp = hprev ? hprev[i * n + j] : T(0);
              const T g_exp = total * hp * ei[j];  // dL/d(delta * A)
              gdt += g_exp * ai[j] + total * bt[j] * xv;
              if (gA) gA[i * n + j] += g_exp * dt;
              if (gB) gB[row * n + j] += total * dt * xv;
              gxv += total * dt * bt[j];
              dhi[j] = total * ei[j];
            }
            if (gx) gx[row * d + i] += gxv;
            if (gdelta) gdelta[row * d + i] += gdt;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace bevscan
