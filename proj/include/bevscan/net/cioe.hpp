#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bevscan/core/module.hpp"

namespace bevscan {

/// Spatial gate from the pre-center-head feature: a 7x7 conv over
/// [channel max, channel mean] followed by a sigmoid. Output (B, 1, H, W).
template <typename T>
struct CenterMask {
  Conv2d<T> conv;

  CenterMask() = default;
  explicit CenterMask(Rng& rng) : conv(2, 1, 7, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& center_feature) const {
    return sigmoid(conv(concat<T>({channel_max(center_feature), channel_mean(center_feature)}, 1)));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const { conv.collect(prefix + ".conv", out); }
};

struct AttentionConfig {
  std::size_t queries = 0;     // Z * X
  std::size_t pos_dim = 8;     // positional embedding width
  std::size_t key_dim = 16;
  std::size_t token_dim = 0;   // channel width of the PV tokens
  std::size_t value_dim = 32;  // must match the BEV feature width it is added to
};

/// Dense cross-attention from BEV queries to perspective-view tokens.
/// Each query is [centerness, learned positional embedding], so the center
/// heatmap decides where to look. Output (B, value_dim, Z, X).
template <typename T>
struct CenterQueryAttention {
  AttentionConfig cfg;
  Tensor<T> pos;  // (queries, pos_dim), zero-initialized
  Linear<T> w_q, w_k, w_v;

  CenterQueryAttention() = default;
  CenterQueryAttention(const AttentionConfig& c, Rng& rng)
      : cfg(c), w_q(1 + c.pos_dim, c.key_dim, rng, false), w_k(c.token_dim, c.key_dim, rng, false),
        w_v(c.token_dim, c.value_dim, rng, false) {
    pos = make_param<T>(Shape{c.queries, c.pos_dim});
  }

  /// (B*K, C, h, w) per-view maps -> (B, K*h*w, C) token lists.
  static Tensor<T> tokens_from_views(const Tensor<T>& views, std::size_t batch) {
    if (views.rank() != 4 || batch == 0 || views.dim(0) % batch) {
      throw ShapeError("attention: views " + shape_str(views.shape()) + " do not split into batch " +
                       std::to_string(batch));
    }
    const std::size_t K = views.dim(0) / batch, C = views.dim(1), hw = views.dim(2) * views.dim(3);
    auto r = reshape(views, Shape{batch, K, C, hw});
    return reshape(permute(r, {0, 1, 3, 2}), Shape{batch, K * hw, C});
  }

  /// centerness (B, 1, Z, X); tokens (B, M, token_dim). If `weights` is
  /// given it receives the attention matrices (B, Z*X, M).
  Tensor<T> operator()(const Tensor<T>& centerness, const Tensor<T>& tokens, Tensor<T>* weights = nullptr) const {
    if (centerness.rank() != 4 || centerness.dim(1) != 1 || centerness.dim(2) * centerness.dim(3) != cfg.queries) {
      throw ShapeError("attention: centerness " + shape_str(centerness.shape()) + " does not give " +
                       std::to_string(cfg.queries) + " queries");
    }
    const std::size_t B = centerness.dim(0), Z = centerness.dim(2), X = centerness.dim(3);
    if (tokens.rank() != 3 || tokens.dim(0) != B || tokens.dim(2) != cfg.token_dim || tokens.dim(1) == 0) {
      throw ShapeError("attention: tokens " + shape_str(tokens.shape()) + " need (" + std::to_string(B) +
                       ", M, " + std::to_string(cfg.token_dim) + ")");
    }
    const std::size_t Q = cfg.queries, M = tokens.dim(1);
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.key_dim)));
    auto phi = reshape(centerness, Shape{B, Q, 1});
    std::vector<Tensor<T>> pos_b(B, reshape(pos, Shape{1, Q, cfg.pos_dim}));
    auto q = scale(w_q(concat<T>({phi, B == 1 ? pos_b[0] : concat(pos_b, 0)}, 2)), inv_sqrt);
    auto k = w_k(tokens);
    auto v = w_v(tokens);
    std::vector<Tensor<T>> outs, attn;
    for (std::size_t b = 0; b < B; ++b) {
      auto qb = reshape(slice(q, 0, b, 1), Shape{Q, cfg.key_dim});
      auto kb = reshape(slice(k, 0, b, 1), Shape{M, cfg.key_dim});
      auto vb = reshape(slice(v, 0, b, 1), Shape{M, cfg.value_dim});
      if (weights) {
        NoGradGuard guard;
        attn.push_back(reshape(softmax_lastdim(matmul(qb, transpose2d(kb))), Shape{1, Q, M}));
      }
      outs.push_back(reshape(softmax_attention(qb, kb, vb), Shape{1, Q, cfg.value_dim}));
    }
    if (weights) *weights = B == 1 ? attn[0] : concat(attn, 0);
    auto o = B == 1 ? outs[0] : concat(outs, 0);
    return reshape(permute(o, {0, 2, 1}), Shape{B, cfg.value_dim, Z, X});
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".pos", pos);
    w_q.collect(prefix + ".w_q", out);
    w_k.collect(prefix + ".w_k", out);
    w_v.collect(prefix + ".w_v", out);
  }
};

}  // namespace bevscan
