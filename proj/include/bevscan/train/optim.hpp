#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevscan/core/module.hpp"

namespace bevscan {

struct AdamWConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-2;
};

/// True for parameters that receive weight decay: matrices and conv kernels,
/// except SSM state matrices and positional embeddings.
inline bool decays(const std::string& name, std::size_t rank) {
  auto ends_with = [&](const std::string& s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return rank >= 2 && !ends_with(".A_log") && !ends_with(".pos");
}

/// Decoupled-decay Adam. For each parameter, in order:
///   p *= 1 - lr * wd;  m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2
///   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <typename T>
class AdamW {
 public:
  AdamW(ParamList<T> params, AdamWConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& [name, p] : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
      decay_.push_back(cfg_.weight_decay > 0 && decays(name, p.rank()));
    }
  }

  std::size_t steps() const { return t_; }
  const ParamList<T>& params() const { return params_; }

  /// Applies one update from the gradients currently stored in the
  /// parameters. Parameters without a gradient count as zero-gradient.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k].second;
      auto data = p.mutable_data();
      const bool has = p.has_grad();
      const auto grad = has ? p.grad() : std::span<const T>{};
      auto& m = m_[k];
      auto& v = v_[k];
      const double shrink = decay_[k] ? 1.0 - lr * cfg_.weight_decay : 1.0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = has ? double(grad[i]) : 0.0;
        double x = double(data[i]) * shrink;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        x -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        data[i] = static_cast<T>(x);
      }
    }
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

 private:
  ParamList<T> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<bool> decay_;
  std::size_t t_ = 0;
};

/// One-cycle schedule: linear warmup from lr_max/25 to lr_max over the
/// first floor(0.3 * total) steps, then cosine decay to lr_max/1e4 at the
/// last step.
inline double one_cycle_lr(std::size_t step, std::size_t total, double lr_max) {
  if (step >= total) {
    throw std::out_of_range("one_cycle_lr: step " + std::to_string(step) + " >= total " + std::to_string(total));
  }
  const double start = lr_max / 25.0, end = lr_max / 1e4;
  const std::size_t warm = static_cast<std::size_t>(0.3 * double(total));
  if (step < warm) return start + (lr_max - start) * double(step) / double(warm);
  const std::size_t span = total - 1 - warm;
  if (span == 0) return lr_max;
  const double frac = double(step - warm) / double(span);
  return end + 0.5 * (lr_max - end) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace bevscan
