#pragma once

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "bevscan/core/ops.hpp"

namespace bevscan {

struct Conv2dGeometry {
  std::size_t n, c, h, w;       // input
  std::size_t o, kh, kw;        // kernel
  std::size_t stride, pad;
  std::size_t oh, ow;           // output
};

namespace detail {

/// Columns [p0, p0 + len) of the (C*kh*kw, oh*ow) patch matrix, written
/// row-major with leading dimension len.
template <typename T>
void im2col(const T* x, const Conv2dGeometry& g, std::size_t p0, std::size_t len, T* col) {
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((c * g.kh + ky) * g.kw + kx) * len;
        const T* xc = x + c * g.h * g.w;
        std::size_t p = p0;
        while (p < p0 + len) {
          const std::size_t oy = p / g.ow, ox0 = p % g.ow;
          const std::size_t run = std::min(g.ow - ox0, p0 + len - p);
          T* dst = row + (p - p0);
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, run, T(0));
          } else {
            const T* src = xc + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t q = 0; q < run; ++q) {
              const long ix = static_cast<long>((ox0 + q) * g.stride + kx) - static_cast<long>(g.pad);
              dst[q] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
            }
          }
          p += run;
        }
      }
}

/// Scatter-adds a column block produced like im2col back into the input.
template <typename T>
void col2im_add(const T* col, const Conv2dGeometry& g, std::size_t p0, std::size_t len, T* gx) {
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((c * g.kh + ky) * g.kw + kx) * len;
        T* xc = gx + c * g.h * g.w;
        std::size_t p = p0;
        while (p < p0 + len) {
          const std::size_t oy = p / g.ow, ox0 = p % g.ow;
          const std::size_t run = std::min(g.ow - ox0, p0 + len - p);
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy >= 0 && iy < static_cast<long>(g.h)) {
            T* dst = xc + static_cast<std::size_t>(iy) * g.w;
            const T* src = row + (p - p0);
            for (std::size_t q = 0; q < run; ++q) {
              const long ix = static_cast<long>((ox0 + q) * g.stride + kx) - static_cast<long>(g.pad);
              if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[q];
            }
          }
          p += run;
        }
      }
}

/// Output columns per im2col block, sized to keep the block cache-resident.
inline std::size_t conv_block_columns(std::size_t k_rows, std::size_t plane) {
  const std::size_t cols = std::max<std::size_t>(256, (std::size_t{1} << 17) / std::max<std::size_t>(k_rows, 1));
  return std::min(plane, cols);
}

template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

/// Stride-1 "same" convolution without a patch matrix. The input is zero
/// padded to (C, H+2p, W+2p); output column q = y*(W+2p) + x then reads tap
/// (ky, kx) at padded offset q + ky*(W+2p) + kx, so every tap is a plain
/// strided GEMM. Columns with x >= W are scratch and never copied out.
struct ShiftedLayout {
  std::size_t wp, plane, cols, buffer;  // padded width, padded plane, H*wp, plane + slack

  explicit ShiftedLayout(const Conv2dGeometry& g)
      : wp(g.w + 2 * g.pad), plane((g.h + 2 * g.pad) * wp), cols(g.h * wp) {
    buffer = g.c * plane + 2 * g.pad;  // last channel's final taps run past its plane
  }
  std::size_t tap_offset(std::size_t ky, std::size_t kx) const { return ky * wp + kx; }
};

inline bool shifted_applicable(const Conv2dGeometry& g) {
  return g.stride == 1 && g.kh == g.kw && g.kh > 1 && g.kh % 2 == 1 && 2 * g.pad == g.kh - 1;
}

template <typename T>
void pad_into(const T* x, const Conv2dGeometry& g, const ShiftedLayout& L, T* xp) {
  std::fill_n(xp, L.buffer, T(0));
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t y = 0; y < g.h; ++y)
      std::copy_n(x + (c * g.h + y) * g.w, g.w, xp + c * L.plane + (y + g.pad) * L.wp + g.pad);
}

/// (O, C, k, k) -> k*k contiguous (O, C) tap matrices.
template <typename T>
std::vector<T> split_taps(const T* w, const Conv2dGeometry& g) {
  const std::size_t taps = g.kh * g.kw;
  std::vector<T> wt(taps * g.o * g.c);
  for (std::size_t oc = 0; oc < g.o * g.c; ++oc)
    for (std::size_t t = 0; t < taps; ++t) wt[t * g.o * g.c + oc] = w[oc * taps + t];
  return wt;
}

}  // namespace detail

namespace detail {

template <typename T>
Tensor<T> conv2d_shifted(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, const Conv2dGeometry& g,
                         Tensor<T>& out) {
  const ShiftedLayout L(g);
  const auto O = static_cast<Eigen::Index>(g.o), C = static_cast<Eigen::Index>(g.c);
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(L.plane));
  const std::size_t taps = g.kh * g.kw;
  const std::size_t block = conv_block_columns(g.c * taps, L.cols);
  const auto wt = std::make_shared<std::vector<T>>(split_taps(w.ptr(), g));
  std::vector<T> xp(L.buffer);
  RowMat<T> acc(O, static_cast<Eigen::Index>(block));
  for (std::size_t n = 0; n < g.n; ++n) {
    pad_into(x.ptr() + n * g.c * g.h * g.w, g, L, xp.data());
    T* yn = out.mutable_ptr() + n * g.o * g.h * g.w;
    for (std::size_t q0 = 0; q0 < L.cols; q0 += block) {
      const auto len = static_cast<Eigen::Index>(std::min(block, L.cols - q0));
      auto Yc = acc.leftCols(len);
      Yc.setZero();
      for (std::size_t ky = 0; ky < g.kh; ++ky)
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          CMatMap<T> Wt(wt->data() + (ky * g.kw + kx) * g.o * g.c, O, C);
          Yc.noalias() += Wt * CStridedMap<T>(xp.data() + q0 + L.tap_offset(ky, kx), C, len, stride);
        }
      for (Eigen::Index q = 0; q < len; ++q) {
        const std::size_t y = (q0 + std::size_t(q)) / L.wp, xo = (q0 + std::size_t(q)) % L.wp;
        if (xo >= g.w) continue;
        for (Eigen::Index o = 0; o < O; ++o) yn[(std::size_t(o) * g.h + y) * g.w + xo] = Yc(o, q);
      }
    }
    if (bias.defined()) {
      MatMap<T> Y(yn, O, static_cast<Eigen::Index>(g.h * g.w));
      Y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.ptr(), O);
    }
  }

  if (any_requires_grad<T>({&x, &w, &bias})) {
    record(out, [x, w, bias, g, L, wt, block, taps, O, C, stride](std::span<const T> grad) {
      T* gx = grad_target(x);
      T* gw = grad_target(w);
      T* gb = bias.defined() ? grad_target(bias) : nullptr;
      std::vector<T> xp(gw ? L.buffer : 0), gxp(gx ? L.buffer : 0), gwt(gw ? taps * g.o * g.c : 0);
      RowMat<T> Gc(O, static_cast<Eigen::Index>(block));
      for (std::size_t n = 0; n < g.n; ++n) {
        const T* gn = grad.data() + n * g.o * g.h * g.w;
        if (gb) {
          CMatMap<T> G(gn, O, static_cast<Eigen::Index>(g.h * g.w));
          Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb, O) += G.rowwise().sum();
        }
        if (gw) pad_into(x.ptr() + n * g.c * g.h * g.w, g, L, xp.data());
        if (gx) std::fill(gxp.begin(), gxp.end(), T(0));
        for (std::size_t q0 = 0; q0 < L.cols; q0 += block) {
          const auto len = static_cast<Eigen::Index>(std::min(block, L.cols - q0));
          auto G = Gc.leftCols(len);
          for (Eigen::Index q = 0; q < len; ++q) {
            const std::size_t y = (q0 + std::size_t(q)) / L.wp, xo = (q0 + std::size_t(q)) % L.wp;
            if (xo >= g.w) {
              G.col(q).setZero();
              continue;
            }
            for (Eigen::Index o = 0; o < O; ++o) G(o, q) = gn[(std::size_t(o) * g.h + y) * g.w + xo];
          }
          for (std::size_t t = 0; t < taps; ++t) {
            const std::size_t off = q0 + L.tap_offset(t / g.kw, t % g.kw);
            if (gw) {
              MatMap<T>(gwt.data() + t * g.o * g.c, O, C).noalias() +=
                  G * CStridedMap<T>(xp.data() + off, C, len, stride).transpose();
            }
            if (gx) {
              CMatMap<T> Wt(wt->data() + t * g.o * g.c, O, C);
              StridedMap<T>(gxp.data() + off, C, len, stride).noalias() += Wt.transpose() * G;
            }
          }
        }
        if (gx) {
          T* gxn = gx + n * g.c * g.h * g.w;
          for (std::size_t c = 0; c < g.c; ++c)
            for (std::size_t y = 0; y < g.h; ++y) {
              const T* src = gxp.data() + c * L.plane + (y + g.pad) * L.wp + g.pad;
              T* dst = gxn + (c * g.h + y) * g.w;
              for (std::size_t i = 0; i < g.w; ++i) dst[i] += src[i];
            }
        }
      }
      if (gw)
        for (std::size_t oc = 0; oc < g.o * g.c; ++oc)
          for (std::size_t t = 0; t < taps; ++t) gw[oc * taps + t] += gwt[t * g.o * g.c + oc];
    });
  }
  return out;
}

}  // namespace detail

/// 2-D cross-correlation with zero padding.
///
/// x: (N, C, H, W), w: (O, C, kh, kw), optional bias (O). Output spatial size
/// is floor((H + 2p - k) / s) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                     shape_str(w.shape()));
  }
  Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), stride, pad, 0, 0};
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != g.o) throw ShapeError("conv2d: bias size mismatch");
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;

  const auto K = static_cast<Eigen::Index>(g.c * g.kh * g.kw);
  const auto P = static_cast<Eigen::Index>(g.oh * g.ow);
  const auto O = static_cast<Eigen::Index>(g.o);
  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;

  Tensor<T> out(Shape{g.n, g.o, g.oh, g.ow});
  if (detail::shifted_applicable(g)) return detail::conv2d_shifted(x, w, bias, g, out);
  const std::size_t block = detail::conv_block_columns(static_cast<std::size_t>(K), static_cast<std::size_t>(P));
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(K) * block);
  CMatMap<T> W(w.ptr(), O, K);
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* xn = x.ptr() + n * g.c * g.h * g.w;
    MatMap<T> Y(out.mutable_ptr() + n * g.o * P, O, P);
    if (pointwise) {
      Y.noalias() = W * CMatMap<T>(xn, K, P);
    } else {
      for (std::size_t p0 = 0; p0 < std::size_t(P); p0 += block) {
        const std::size_t len = std::min(block, std::size_t(P) - p0);
        detail::im2col(xn, g, p0, len, col.data());
        Y.middleCols(Eigen::Index(p0), Eigen::Index(len)).noalias() = W * CMatMap<T>(col.data(), K, Eigen::Index(len));
      }
    }
    if (bias.defined()) Y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.ptr(), O);
  }

  if (detail::any_requires_grad<T>({&x, &w, &bias})) {
    detail::record(out, [x, w, bias, g, K, P, O, pointwise, block](std::span<const T> grad) {
      T* gx = detail::grad_target(x);
      T* gw = detail::grad_target(w);
      T* gb = bias.defined() ? detail::grad_target(bias) : nullptr;
      std::vector<T> col(pointwise || !gw ? 0 : static_cast<std::size_t>(K) * block);
      std::vector<T> dcol(pointwise || !gx ? 0 : static_cast<std::size_t>(K) * block);
      CMatMap<T> W(w.ptr(), O, K);
      for (std::size_t n = 0; n < g.n; ++n) {
        CMatMap<T> G(grad.data() + n * g.o * P, O, P);
        const T* xn = x.ptr() + n * g.c * g.h * g.w;
        T* gxn = gx ? gx + n * g.c * g.h * g.w : nullptr;
        if (gb) Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gb, O) += G.rowwise().sum();
        if (pointwise) {
          if (gw) MatMap<T>(gw, O, K).noalias() += G * CMatMap<T>(xn, K, P).transpose();
          if (gxn) MatMap<T>(gxn, K, P).noalias() += W.transpose() * G;
          continue;
        }
        for (std::size_t p0 = 0; p0 < std::size_t(P); p0 += block) {
          const std::size_t len = std::min(block, std::size_t(P) - p0);
          const auto Gb = G.middleCols(Eigen::Index(p0), Eigen::Index(len));
          if (gw) {
            detail::im2col(xn, g, p0, len, col.data());
            MatMap<T>(gw, O, K).noalias() += Gb * CMatMap<T>(col.data(), K, Eigen::Index(len)).transpose();
          }
          if (gxn) {
            MatMap<T>(dcol.data(), K, Eigen::Index(len)).noalias() = W.transpose() * Gb;
            detail::col2im_add(dcol.data(), g, p0, len, gxn);
          }
        }
      }
    });
  }
  return out;
}

/// Depthwise causal 1-D convolution over sequences in channels-last layout.
///
/// x: (B, L, d), w: (d, K), optional bias (d).
/// y[b, t, c] = bias[c] + sum_k w[c, k] * x[b, t - k, c], with positions
/// before the sequence start read as zero, so output t never sees inputs
/// after t. Tap k is the k-step delay.
template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  if (w.rank() != 2 || w.dim(1) < 1) throw ShapeError("causal_conv1d: kernel width must be >= 1");
  if (x.rank() != 3 || w.dim(0) != x.dim(2)) {
    throw ShapeError("causal_conv1d: input " + shape_str(x.shape()) + " incompatible with kernel " +
                     shape_str(w.shape()));
  }
  if (bias.defined() && bias.numel() != x.dim(2)) throw ShapeError("causal_conv1d: bias size mismatch");
  const std::size_t B = x.dim(0), L = x.dim(1), D = x.dim(2), K = w.dim(1);
  Tensor<T> out(x.shape());
  const T* xp = x.ptr();
  const T* wp = w.ptr();
  T* yp = out.mutable_ptr();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t) {
      T* yrow = yp + (b * L + t) * D;
      for (std::size_t c = 0; c < D; ++c) yrow[c] = bias.defined() ? bias[c] : T(0);
      for (std::size_t k = 0; k < K; ++k) {
        if (k > t) break;
        const T* xrow = xp + (b * L + t - k) * D;
        for (std::size_t c = 0; c < D; ++c) yrow[c] += wp[c * K + k] * xrow[c];
      }
    }
  if (detail::any_requires_grad<T>({&x, &w, &bias})) {
    detail::record(out, [x, w, bias, B, L, D, K](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      T* gw = detail::grad_target(w);
      T* gb = bias.defined() ? detail::grad_target(bias) : nullptr;
      const T* xp = x.ptr();
      const T* wp = w.ptr();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t) {
          const T* grow = g.data() + (b * L + t) * D;
          if (gb)
            for (std::size_t c = 0; c < D; ++c) gb[c] += grow[c];
          for (std::size_t k = 0; k < K; ++k) {
            if (k > t) break;
            const std::size_t off = (b * L + t - k) * D;
            for (std::size_t c = 0; c < D; ++c) {
              if (gx) gx[off + c] += grow[c] * wp[c * K + k];
              if (gw) gw[c * K + k] += grow[c] * xp[off + c];
            }
          }
        }
    });
  }
  return out;
}

/// 2x2 max pooling with stride 2 (floor on odd extents). Ties route the
/// gradient to the first maximum in scan order.
template <typename T>
Tensor<T> max_pool2x2(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(2) < 2 || x.dim(3) < 2) {
    throw ShapeError("max_pool2x2: input " + shape_str(x.shape()) + " too small");
  }
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), OH = H / 2, OW = W / 2;
  Tensor<T> out(Shape{x.dim(0), x.dim(1), OH, OW});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  for (std::size_t p = 0; p < NC; ++p)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = p * H * W + (2 * oy) * W + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = p * H * W + (2 * oy + dy) * W + 2 * ox + dx;
            if (x[i] > x[best]) best = i;
          }
        const std::size_t o = (p * OH + oy) * OW + ox;
        (*argmax)[o] = best;
        out.mutable_ptr()[o] = x[best];
      }
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, argmax](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling over space or channels

/// (N, C, H, W) -> (N, C): mean over H*W.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: NCHW input expected, got " + shape_str(x.shape()));
  const std::size_t NC = x.dim(0) * x.dim(1), S = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{x.dim(0), x.dim(1)});
  for (std::size_t p = 0; p < NC; ++p) {
    T acc = 0;
    for (std::size_t s = 0; s < S; ++s) acc += x[p * S + s];
    out.mutable_ptr()[p] = acc / static_cast<T>(S);
  }
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, NC, S](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t p = 0; p < NC; ++p)
          for (std::size_t s = 0; s < S; ++s) gx[p * S + s] += g[p] / static_cast<T>(S);
    });
  }
  return out;
}

/// (N, C, H, W) -> (N, 1, H, W): max over channels.
template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("channel_max: NCHW input expected, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{N, 1, x.dim(2), x.dim(3)});
  auto arg = std::make_shared<std::vector<std::size_t>>(N * S);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t s = 0; s < S; ++s) {
      std::size_t best = n * C * S + s;
      for (std::size_t c = 1; c < C; ++c) {
        const std::size_t i = (n * C + c) * S + s;
        if (x[i] > x[best]) best = i;
      }
      (*arg)[n * S + s] = best;
      out.mutable_ptr()[n * S + s] = x[best];
    }
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, arg](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t o = 0; o < g.size(); ++o) gx[(*arg)[o]] += g[o];
    });
  }
  return out;
}

/// (N, C, H, W) -> (N, 1, H, W): mean over channels.
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("channel_mean: NCHW input expected, got " + shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{N, 1, x.dim(2), x.dim(3)});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t s = 0; s < S; ++s) {
      T acc = 0;
      for (std::size_t c = 0; c < C; ++c) acc += x[(n * C + c) * S + s];
      out.mutable_ptr()[n * S + s] = acc / static_cast<T>(C);
    }
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, N, C, S](std::span<const T> g) {
      if (T* gx = detail::grad_target(x))
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t s = 0; s < S; ++s) gx[(n * C + c) * S + s] += g[n * S + s] / static_cast<T>(C);
    });
  }
  return out;
}

namespace detail {
/// Source taps for one output coordinate of a 2x bilinear upsample
/// (half-pixel centers, edge clamped).
struct Tap {
  std::size_t i0, i1;
  double w1;
};
inline Tap upsample_tap(std::size_t dst, std::size_t src_len) {
  double s = (static_cast<double>(dst) + 0.5) / 2.0 - 0.5;
  if (s < 0) s = 0;
  auto i0 = static_cast<std::size_t>(s);
  if (i0 > src_len - 1) i0 = src_len - 1;
  const std::size_t i1 = std::min(i0 + 1, src_len - 1);
  return {i0, i1, s - static_cast<double>(i0)};
}
}  // namespace detail

/// Bilinear 2x upsampling of (N, C, H, W), align_corners = false.
template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("upsample_bilinear2x: NCHW input expected, got " + shape_str(x.shape()));
  const std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), OH = 2 * H, OW = 2 * W;
  std::vector<detail::Tap> ty(OH), tx(OW);
  for (std::size_t i = 0; i < OH; ++i) ty[i] = detail::upsample_tap(i, H);
  for (std::size_t i = 0; i < OW; ++i) tx[i] = detail::upsample_tap(i, W);
  Tensor<T> out(Shape{x.dim(0), x.dim(1), OH, OW});
  for (std::size_t p = 0; p < NC; ++p) {
    const T* src = x.ptr() + p * H * W;
    T* dst = out.mutable_ptr() + p * OH * OW;
    for (std::size_t oy = 0; oy < OH; ++oy) {
      const auto [y0, y1, wy] = ty[oy];
      for (std::size_t ox = 0; ox < OW; ++ox) {
        const auto [x0, x1, wx] = tx[ox];
        const T a = src[y0 * W + x0], b = src[y0 * W + x1], c = src[y1 * W + x0], d = src[y1 * W + x1];
        const T top = a + static_cast<T>(wx) * (b - a);
        const T bot = c + static_cast<T>(wx) * (d - c);
        dst[oy * OW + ox] = top + static_cast<T>(wy) * (bot - top);
      }
    }
  }
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, ty, tx, NC, H, W, OH, OW](std::span<const T> g) {
      T* gx = detail::grad_target(x);
      if (!gx) return;
      for (std::size_t p = 0; p < NC; ++p) {
        T* dst = gx + p * H * W;
        const T* gp = g.data() + p * OH * OW;
        for (std::size_t oy = 0; oy < OH; ++oy) {
          const auto [y0, y1, wy] = ty[oy];
          for (std::size_t ox = 0; ox < OW; ++ox) {
            const auto [x0, x1, wx] = tx[ox];
            const T v = gp[oy * OW + ox];
            const T fy = static_cast<T>(wy), fx = static_cast<T>(wx);
            dst[y0 * W + x0] += v * (1 - fy) * (1 - fx);
            dst[y0 * W + x1] += v * (1 - fy) * fx;
            dst[y1 * W + x0] += v * fy * (1 - fx);
            dst[y1 * W + x1] += v * fy * fx;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace bevscan
