#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance runner. None of these call into the library code they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "bevscan/bevscan.hpp"

namespace oracle {

using bevscan::Rng;
using bevscan::Shape;
using Tensor = bevscan::Tensor<double>;

inline Tensor random(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (auto& v : t.mutable_data()) v = u(rng);
  return t;
}

inline Tensor param(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto t = random(std::move(s), rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

/// Values pushed at least `gap` away from every kink in `kinks`, so a
/// finite-difference step never crosses one.
inline Tensor away_from(Tensor t, std::initializer_list<double> kinks, double gap = 1e-3) {
  for (auto& v : t.mutable_data())
    for (double k : kinks)
      if (std::abs(v - k) < gap) v = k + (v < k ? -gap : gap);
  return t;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradReport {
  double max_rel = 0.0;
  std::size_t entries = 0;
  std::size_t kinks = 0;  // entries skipped because the function is not differentiable there
};

/// Relative error with a 1e-3 floor on the denominator, so gradients that
/// are numerically zero are compared absolutely.
inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

inline constexpr double kGradTolerance = 1e-4;

using GradFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares the reverse-mode gradient of sum(r * f(inputs)) with central
/// differences (step h) on every element of every input that requires grad.
inline GradReport grad_check(const GradFn& f, std::vector<Tensor> inputs, Rng& rng, double h = 1e-5) {
  Tensor r;
  {
    bevscan::NoGradGuard guard;
    r = random(f(inputs).shape(), rng, 0.5, 1.5);
  }
  auto loss_value = [&] {
    bevscan::NoGradGuard guard;
    const auto y = f(inputs);
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * r[i];
    return s;
  };
  for (auto& t : inputs) t.zero_grad();
  bevscan::backward(bevscan::sum(bevscan::mul(f(inputs), r)));

  GradReport rep;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double orig = d[i];
      d[i] = orig + h;
      const double up = loss_value();
      d[i] = orig - h;
      const double down = loss_value();
      d[i] = orig;
      ++rep.entries;
      const double err = rel_error(analytic[i], (up - down) / (2 * h));
      if (err > kGradTolerance) {
        // A ReLU-style kink inside [x - h, x + h] makes the one-sided slopes
        // disagree; a wrong analytic gradient does not.
        const double mid = loss_value();
        if (rel_error((up - mid) / h, (mid - down) / h) > 1e-3) {
          ++rep.kinks;
          continue;
        }
      }
      rep.max_rel = std::max(rep.max_rel, err);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Selective scan, unrolled

/// y[b][t][i] for the recurrence written out step by step with explicit
/// discretized gains.
inline std::vector<double> unrolled_scan(const std::vector<double>& x, const std::vector<double>& delta,
                                         const std::vector<double>& A, const std::vector<double>& Bm,
                                         const std::vector<double>& Cm, const std::vector<double>& D,
                                         std::size_t batch, std::size_t L, std::size_t d, std::size_t n) {
  std::vector<double> y(batch * L * d, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < d; ++i) {
      std::vector<double> h(n, 0.0);
      for (std::size_t t = 0; t < L; ++t) {
        const double dt = delta[(b * L + t) * d + i];
        const double xt = x[(b * L + t) * d + i];
        double out = D[i] * xt;
        for (std::size_t j = 0; j < n; ++j) {
          const double a_bar = std::exp(A[i * n + j] * dt);
          const double b_bar = dt * Bm[(b * L + t) * n + j];
          h[j] = a_bar * h[j] + b_bar * xt;
          out += Cm[(b * L + t) * n + j] * h[j];
        }
        y[(b * L + t) * d + i] = out;
      }
    }
  return y;
}

// ---------------------------------------------------------------------------
// Convolution, naive loops

inline std::vector<double> conv2d_naive(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                                        std::size_t pad) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::size_t OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
  std::vector<double> y(N * O * OH * OW, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double acc = bias.defined() ? bias[o] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = long(oy * stride + ky) - long(pad), ix = long(ox * stride + kx) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                acc += w[((o * C + c) * KH + ky) * KW + kx] * x[((n * C + c) * H + std::size_t(iy)) * W + std::size_t(ix)];
              }
          y[((n * O + o) * OH + oy) * OW + ox] = acc;
        }
  return y;
}

// ---------------------------------------------------------------------------
// Lift, one voxel at a time

/// Bilinear read of one (h, w) plane at continuous (u, v).
inline double bilinear(const double* plane, std::size_t h, std::size_t w, double u, double v) {
  const double u0 = std::floor(u), v0 = std::floor(v);
  double acc = 0;
  for (int dv = 0; dv < 2; ++dv)
    for (int du = 0; du < 2; ++du) {
      const double wu = du ? u - u0 : 1 - (u - u0);
      const double wv = dv ? v - v0 : 1 - (v - v0);
      const double uu = std::min(u0 + du, double(w - 1)), vv = std::min(v0 + dv, double(h - 1));
      acc += wu * wv * plane[std::size_t(vv) * w + std::size_t(uu)];
    }
  return acc;
}

/// features (K, d, h, w) -> (d, ny, nz, nx): mean over cameras that see the
/// voxel center in front of them and inside the map.
inline std::vector<double> lift_per_voxel(const bevscan::CameraRig& rig, const bevscan::BevGrid& g,
                                          const Tensor& features) {
  const std::size_t K = rig.size(), d = features.dim(1), h = rig.feat_h, w = rig.feat_w;
  std::vector<double> out(d * g.ny * g.nz * g.nx, 0.0);
  for (std::size_t k = 0; k < g.ny; ++k)
    for (std::size_t j = 0; j < g.nz; ++j)
      for (std::size_t i = 0; i < g.nx; ++i) {
        const double px = g.x_min + (i + 0.5) * (g.x_max - g.x_min) / g.nx;
        const double py = g.y_min + (k + 0.5) * (g.y_max - g.y_min) / g.ny;
        const double pz = g.z_min + (j + 0.5) * (g.z_max - g.z_min) / g.nz;
        std::vector<double> acc(d, 0.0);
        int seen = 0;
        for (std::size_t c = 0; c < K; ++c) {
          const auto& cam = rig.cameras[c];
          double pc[3];
          for (int r = 0; r < 3; ++r)
            pc[r] = cam.rotation(r, 0) * px + cam.rotation(r, 1) * py + cam.rotation(r, 2) * pz + cam.translation[r];
          if (pc[2] <= 1e-6) continue;
          const double u = cam.fx * pc[0] / pc[2] + cam.cx, v = cam.fy * pc[1] / pc[2] + cam.cy;
          if (u < 0 || v < 0 || u > double(w - 1) || v > double(h - 1)) continue;
          ++seen;
          for (std::size_t ch = 0; ch < d; ++ch)
            acc[ch] += bilinear(features.ptr() + (c * d + ch) * h * w, h, w, u, v);
        }
        if (!seen) continue;
        for (std::size_t ch = 0; ch < d; ++ch) out[((ch * g.ny + k) * g.nz + j) * g.nx + i] = acc[ch] / seen;
      }
  return out;
}

/// K cameras at random positions near the ego with random yaw and pitch.
inline bevscan::CameraRig random_rig(Rng& rng, std::size_t K, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<double> pos(-2.0, 2.0), ang(-3.1, 3.1), pitch(-0.4, 0.4), f(0.5, 1.5);
  bevscan::CameraRig rig;
  rig.feat_h = h;
  rig.feat_w = w;
  for (std::size_t k = 0; k < K; ++k) {
    const double fx = f(rng) * double(w), fy = f(rng) * double(w);
    rig.cameras.push_back(bevscan::Camera::looking({pos(rng), pos(rng) - 1.0, pos(rng)}, ang(rng), pitch(rng), fx, fy,
                                                   0.5 * double(w - 1) + pos(rng), 0.5 * double(h - 1) + pos(rng)));
  }
  return rig;
}

// ---------------------------------------------------------------------------
// EBC block, straight-line

/// The whole block for one (D, H, W) map written as plain loops: patch
/// tokens, embedding, normalization, projections, and every branch's conv,
/// gains, and recurrence walked in visiting order with results written back
/// to the visited patch. Reads the block's parameters directly.
inline std::vector<double> ebc_reference(bevscan::EbcBlock<double>& blk, const Tensor& f) {
  using Mat = std::vector<std::vector<double>>;
  const std::size_t D = f.dim(1), H = f.dim(2), W = f.dim(3), PX = W / 2, L = (H / 2) * PX;
  const std::size_t din = blk.config().inner;
  auto affine = [](const std::vector<double>& v, const Tensor& w, const Tensor& b) {
    const std::size_t in = w.dim(0), out = w.dim(1);
    std::vector<double> y(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b.defined() ? b[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += v[i] * w[i * out + o];
      y[o] = acc;
    }
    return y;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  auto softplus = [](double v) { return v > 20 ? v : std::log1p(std::exp(v)); };

  Mat u(L), x(L), z(L);
  for (std::size_t p = 0; p < L; ++p) {
    const std::size_t pz = p / PX, px = p % PX;
    std::vector<double> v(4 * D);
    for (std::size_t c = 0; c < D; ++c)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) v[c * 4 + dy * 2 + dx] = f[(c * H + 2 * pz + dy) * W + 2 * px + dx];
    auto e = affine(v, blk.patch().embed.weight, blk.patch().embed.bias);
    double mu = 0, var = 0;
    for (double a : e) mu += a;
    mu /= double(e.size());
    for (double a : e) var += (a - mu) * (a - mu);
    var /= double(e.size());
    for (std::size_t c = 0; c < e.size(); ++c)
      e[c] = (e[c] - mu) / std::sqrt(var + 1e-5) * blk.norm_gamma()[c] + blk.norm_beta()[c];
    u[p] = e;
    x[p] = affine(e, blk.in_x().weight, blk.in_x().bias);
    z[p] = affine(e, blk.in_z().weight, blk.in_z().bias);
  }

  Mat ysum(L, std::vector<double>(din, 0.0));
  for (std::size_t s = 0; s < blk.branches().size(); ++s) {
    const auto& br = blk.branches()[s];
    const auto& order = blk.permutations()[s].order;
    const std::size_t n = br.a_log.dim(1), K = br.conv_w.dim(1);
    std::vector<double> h(din * n, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      const auto& xt = x[order[t]];
      std::vector<double> conv(din);
      for (std::size_t i = 0; i < din; ++i) {
        double acc = br.conv_b[i];
        for (std::size_t k = 0; k < K && k <= t; ++k) acc += br.conv_w[i * K + k] * x[order[t - k]][i];
        conv[i] = acc * sig(acc);
      }
      const auto bt = affine(xt, br.proj_b.weight, Tensor{});
      const auto ct = affine(xt, br.proj_c.weight, Tensor{});
      const auto dt = affine(xt, br.proj_dt.weight, br.proj_dt.bias);
      for (std::size_t i = 0; i < din; ++i) {
        const double delta = softplus(dt[i]);
        double y = br.skip[i] * conv[i];
        for (std::size_t j = 0; j < n; ++j) {
          const double a = -std::exp(br.a_log[i * n + j]);
          double& hij = h[i * n + j];
          hij = std::exp(delta * a) * hij + delta * bt[j] * conv[i];
          y += ct[j] * hij;
        }
        ysum[order[t]][i] += y;
      }
    }
  }

  std::vector<double> out(f.data().begin(), f.data().end());
  for (std::size_t p = 0; p < L; ++p) {
    std::vector<double> g(din);
    for (std::size_t i = 0; i < din; ++i) g[i] = ysum[p][i] * z[p][i] * sig(z[p][i]);
    const auto o = affine(g, blk.out_proj().weight, blk.out_proj().bias);
    const auto r = affine(o, blk.patch().restore.weight, blk.patch().restore.bias);
    const std::size_t pz = p / PX, px = p % PX;
    for (std::size_t c = 0; c < D; ++c)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) out[(c * H + 2 * pz + dy) * W + 2 * px + dx] += r[c * 4 + dy * 2 + dx];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Band cardinalities by enumeration

/// Patch counts with center distance in [0, near), [near, mid), [mid, inf),
/// enumerated directly from the grid geometry.
inline std::array<std::size_t, 3> band_counts(const bevscan::BevGrid& g, double near = 20.0, double mid = 35.0) {
  std::array<std::size_t, 3> c{0, 0, 0};
  const double px = 2.0 * (g.x_max - g.x_min) / double(g.nx), pz = 2.0 * (g.z_max - g.z_min) / double(g.nz);
  for (std::size_t a = 0; a < g.nz / 2; ++a)
    for (std::size_t b = 0; b < g.nx / 2; ++b) {
      const double x = g.x_min + (double(b) + 0.5) * px, z = g.z_min + (double(a) + 0.5) * pz;
      const double r = std::sqrt(x * x + z * z);
      ++c[r < near ? 0 : (r < mid ? 1 : 2)];
    }
  return c;
}

// ---------------------------------------------------------------------------
// Rectangle intersection by edge crossing and containment

using Pt = std::array<double, 2>;

inline std::array<Pt, 4> rectangle(double cx, double cz, double yaw, double length, double width) {
  // yaw 0: length along +z; yaw rotates clockwise seen from above (+x right)
  const double s = std::sin(yaw), c = std::cos(yaw);
  std::array<Pt, 4> out{};
  const double hl = length / 2, hw = width / 2;
  const std::array<std::array<double, 2>, 4> local{{{hw, hl}, {-hw, hl}, {-hw, -hl}, {hw, -hl}}};
  for (int k = 0; k < 4; ++k) {
    const double lx = local[k][0], lz = local[k][1];
    out[k] = {cx + lx * c + lz * s, cz - lx * s + lz * c};
  }
  return out;
}

inline bool segments_cross(const Pt& a, const Pt& b, const Pt& c, const Pt& d) {
  auto orient = [](const Pt& p, const Pt& q, const Pt& r) {
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
  };
  const double o1 = orient(a, b, c), o2 = orient(a, b, d), o3 = orient(c, d, a), o4 = orient(c, d, b);
  return ((o1 > 0) != (o2 > 0)) && ((o3 > 0) != (o4 > 0));
}

inline bool inside_convex(const std::array<Pt, 4>& poly, const Pt& p) {
  int sign = 0;
  for (int k = 0; k < 4; ++k) {
    const Pt& a = poly[k];
    const Pt& b = poly[(k + 1) % 4];
    const double cr = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    const int s = cr > 0 ? 1 : (cr < 0 ? -1 : 0);
    if (s == 0) continue;
    if (sign == 0) sign = s;
    else if (s != sign) return false;
  }
  return true;
}

inline bool rectangles_intersect(const std::array<Pt, 4>& p, const std::array<Pt, 4>& q) {
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (segments_cross(p[i], p[(i + 1) % 4], q[j], q[(j + 1) % 4])) return true;
  return inside_convex(p, q[0]) || inside_convex(q, p[0]);
}

// ---------------------------------------------------------------------------
// IoU by counting

inline double iou_count(const std::vector<float>& prob, const std::vector<float>& target, double threshold = 0.5) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t s = 0; s < prob.size(); ++s) {
    const bool p = prob[s] > threshold, t = target[s] > 0.5;
    inter += p && t;
    uni += p || t;
  }
  return uni ? double(inter) / double(uni) : 1.0;
}

}  // namespace oracle
