#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "bevscan/core/conv.hpp"
#include "bevscan/core/module.hpp"
#include "bevscan/ebc/permutation.hpp"
#include "bevscan/ebc/ssm.hpp"

namespace bevscan {

namespace detail {

/// Copies between the (B, D, H, W) map and (B, L, 4D) patch tokens; token
/// (pz, px) holds x[c, 2pz + dy, 2px + dx] at feature (c * 4 + dy * 2 + dx).
/// to_tokens selects the direction; `accumulate` adds instead of assigning.
template <typename T>
void patch_copy(const T* src, T* dst, std::size_t B, std::size_t D, std::size_t H, std::size_t W, bool to_tokens,
                bool accumulate) {
  const std::size_t PZ = H / 2, PX = W / 2;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < D; ++c)
      for (std::size_t y = 0; y < H; ++y) {
        const std::size_t map_row = ((b * D + c) * H + y) * W;
        const std::size_t pz = y / 2, dy = y % 2;
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t tok = ((b * PZ + pz) * PX + x / 2) * 4 * D + c * 4 + dy * 2 + x % 2;
          const std::size_t from = to_tokens ? map_row + x : tok;
          const std::size_t to = to_tokens ? tok : map_row + x;
          if (accumulate) dst[to] += src[from];
          else dst[to] = src[from];
        }
      }
}

}  // namespace detail

/// (B, D, H, W) -> (B, L, 4D), L = (H/2)(W/2) in raster order; each token is
/// its 2x2 patch flattened as (channel, dy, dx).
template <typename T>
Tensor<T> unfold2x2(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("unfold2x2: (B, D, H, W) expected, got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("unfold2x2: odd spatial dims " + shape_str(x.shape()));
  Tensor<T> out(Shape{B, (H / 2) * (W / 2), 4 * D});
  detail::patch_copy(x.ptr(), out.mutable_ptr(), B, D, H, W, true, false);
  if (detail::any_requires_grad<T>({&x})) {
    detail::record(out, [x, B, D, H, W](std::span<const T> g) {
      if (T* gx = detail::grad_target(x)) detail::patch_copy(g.data(), gx, B, D, H, W, false, true);
    });
  }
  return out;
}

/// Inverse of unfold2x2.
template <typename T>
Tensor<T> fold2x2(const Tensor<T>& tokens, std::size_t H, std::size_t W) {
  if (tokens.rank() != 3 || H % 2 || W % 2 || tokens.dim(1) != (H / 2) * (W / 2) || tokens.dim(2) % 4) {
    throw ShapeError("fold2x2: tokens " + shape_str(tokens.shape()) + " do not tile " + std::to_string(H) + "x" +
                     std::to_string(W));
  }
  const std::size_t B = tokens.dim(0), D = tokens.dim(2) / 4;
  Tensor<T> out(Shape{B, D, H, W});
  detail::patch_copy(tokens.ptr(), out.mutable_ptr(), B, D, H, W, false, false);
  if (detail::any_requires_grad<T>({&tokens})) {
    detail::record(out, [tokens, B, D, H, W](std::span<const T> g) {
      if (T* gt = detail::grad_target(tokens)) detail::patch_copy(g.data(), gt, B, D, H, W, true, true);
    });
  }
  return out;
}

/// 2x2 patch embedding and its learned inverse projection.
template <typename T>
struct Patchify {
  Linear<T> embed;    // 4D -> E
  Linear<T> restore;  // E -> 4D

  Patchify() = default;
  Patchify(std::size_t channels, std::size_t embed_dim, Rng& rng)
      : embed(4 * channels, embed_dim, rng), restore(embed_dim, 4 * channels, rng) {}

  Tensor<T> patchify(const Tensor<T>& x) const { return embed(unfold2x2(x)); }
  Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t H, std::size_t W) const {
    return fold2x2(restore(tokens), H, W);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    embed.collect(prefix + ".embed", out);
    restore.collect(prefix + ".restore", out);
  }
};

struct EbcConfig {
  std::size_t channels = 128;  // D
  std::size_t inner = 128;     // d_in
  std::size_t state = 16;      // n
  std::size_t conv_width = 4;
  std::vector<ScanKind> branches{ScanKind::Forward, ScanKind::ForwardSurround, ScanKind::BackwardSurround};
  BandPartition bands{};
};

/// Learned parameters of one scan branch.
template <typename T>
struct SsmBranchParams {
  Tensor<T> conv_w, conv_b;  // (d_in, K), (d_in)
  Linear<T> proj_b, proj_c;  // d_in -> n
  Linear<T> proj_dt;         // d_in -> d_in; its bias is the learned offset inside softplus
  Tensor<T> a_log;           // (d_in, n), A = -exp(a_log)
  Tensor<T> skip;            // (d_in)

  SsmBranchParams() = default;
  SsmBranchParams(const EbcConfig& cfg, Rng& rng) {
    const std::size_t d = cfg.inner, n = cfg.state, K = cfg.conv_width;
    const T cb = static_cast<T>(1.0 / std::sqrt(static_cast<double>(K)));
    conv_w = Tensor<T>::uniform(Shape{d, K}, rng, -cb, cb).set_requires_grad(true);
    conv_b = make_param<T>(Shape{d});
    proj_b = Linear<T>(d, n, rng, false);
    proj_c = Linear<T>(d, n, rng, false);
    proj_dt = Linear<T>(d, d, rng, true, T(0.1));
    // softplus(bias) starts log-uniform in [1e-3, 1e-1]
    std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
    for (auto& v : proj_dt.bias.mutable_data()) {
      const double dt = std::exp(u(rng));
      v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
    }
    a_log = make_param<T>(Shape{d, n});
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < n; ++j) a_log.mutable_data()[i * n + j] = static_cast<T>(std::log(double(j + 1)));
    skip = make_param<T>(Shape{d}, T(1));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".conv.weight", conv_w);
    out.emplace_back(prefix + ".conv.bias", conv_b);
    proj_b.collect(prefix + ".proj_b", out);
    proj_c.collect(prefix + ".proj_c", out);
    proj_dt.collect(prefix + ".proj_dt", out);
    out.emplace_back(prefix + ".A_log", a_log);
    out.emplace_back(prefix + ".D", skip);
  }
};

/// Environment-aware BEV compressor: patch tokens scanned by up to three
/// selective SSM branches (raster, surround near->far clockwise, surround
/// far->near counter-clockwise), gated, summed, projected, and added back to
/// the input.
template <typename T>
class EbcBlock {
 public:
  EbcBlock() = default;
  EbcBlock(const EbcConfig& cfg, const BevGrid& grid, Rng& rng)
      : cfg_(cfg), patch_(cfg.channels, cfg.channels, rng), in_x_(cfg.channels, cfg.inner, rng),
        in_z_(cfg.channels, cfg.inner, rng), out_(cfg.inner, cfg.channels, rng, true, T(0.5)) {
    require_even(grid);
    norm_gamma_ = make_param<T>(Shape{cfg.channels}, T(1));
    norm_beta_ = make_param<T>(Shape{cfg.channels});
    for (auto kind : cfg.branches) {
      perms_.push_back(build_permutation(grid, kind, cfg.bands));
      branches_.emplace_back(cfg, rng);
    }
  }

  const EbcConfig& config() const { return cfg_; }
  const std::vector<PatchPermutation>& permutations() const { return perms_; }
  std::vector<SsmBranchParams<T>>& branches() { return branches_; }
  const std::vector<SsmBranchParams<T>>& branches() const { return branches_; }
  Patchify<T>& patch() { return patch_; }
  Linear<T>& in_x() { return in_x_; }
  Linear<T>& in_z() { return in_z_; }
  Linear<T>& out_proj() { return out_; }
  Tensor<T>& norm_gamma() { return norm_gamma_; }
  Tensor<T>& norm_beta() { return norm_beta_; }

  /// Normalized patch tokens (B, L, D) of a BEV map.
  Tensor<T> tokens(const Tensor<T>& f_b) const {
    auto t = layer_norm_lastdim(patch_.patchify(f_b));
    return add_lastdim(mul_lastdim(t, norm_gamma_), norm_beta_);
  }

  /// Scan of branch `s` on raster-order inputs x (B, L, d_in). Output is in
  /// the branch's own visiting order and before gating.
  Tensor<T> scan_branch(const Tensor<T>& x, std::size_t s) const {
    const auto& p = branches_.at(s);
    auto xs = perms_[s].kind == ScanKind::Forward ? x : gather_rows(x, perms_[s].order);
    auto u = silu(causal_conv1d(xs, p.conv_w, p.conv_b));
    auto b_in = p.proj_b(xs);
    auto c_out = p.proj_c(xs);
    auto delta = softplus(p.proj_dt(xs));
    auto A = neg(exp(p.a_log));
    return selective_scan(u, delta, A, b_in, c_out, p.skip);
  }

  Tensor<T> operator()(const Tensor<T>& f_b) const {
    if (f_b.rank() != 4 || f_b.dim(1) != cfg_.channels) {
      throw ShapeError("ebc: expected (B, " + std::to_string(cfg_.channels) + ", H, W), got " +
                       shape_str(f_b.shape()));
    }
    if (branches_.empty()) return f_b;
    auto u = tokens(f_b);
    auto x = in_x_(u);
    auto z = in_z_(u);
    std::vector<Tensor<T>> ys;
    for (std::size_t s = 0; s < branches_.size(); ++s) {
      auto y = scan_branch(x, s);
      ys.push_back(perms_[s].kind == ScanKind::Forward ? y : gather_rows(y, perms_[s].inverse));
    }
    auto gated = mul(ys.size() == 1 ? ys[0] : add_n(ys), silu(z));
    auto delta = patch_.unpatchify(out_(gated), f_b.dim(2), f_b.dim(3));
    return add(delta, f_b);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    patch_.collect(prefix + ".patch", out);
    out.emplace_back(prefix + ".norm.gamma", norm_gamma_);
    out.emplace_back(prefix + ".norm.beta", norm_beta_);
    in_x_.collect(prefix + ".in_x", out);
    in_z_.collect(prefix + ".in_z", out);
    for (std::size_t s = 0; s < branches_.size(); ++s)
      branches_[s].collect(prefix + "." + to_string(perms_[s].kind), out);
    out_.collect(prefix + ".out", out);
  }

 private:
  EbcConfig cfg_;
  Patchify<T> patch_;
  Tensor<T> norm_gamma_, norm_beta_;
  Linear<T> in_x_, in_z_, out_;
  std::vector<PatchPermutation> perms_;
  std::vector<SsmBranchParams<T>> branches_;
};

}  // namespace bevscan
