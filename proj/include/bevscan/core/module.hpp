#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bevscan/core/conv.hpp"

namespace bevscan {

template <typename T>
using NamedTensor = std::pair<std::string, Tensor<T>>;

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

using Rng = std::mt19937_64;

/// Learnable leaf tensor.
template <typename T>
Tensor<T> make_param(Shape shape, T fill = T(0)) {
  Tensor<T> t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

/// He-normal initialization for a layer with `fan_in` inputs.
template <typename T>
Tensor<T> he_param(Shape shape, std::size_t fan_in, Rng& rng, T gain = T(1)) {
  const T std_dev = gain * static_cast<T>(std::sqrt(2.0 / static_cast<double>(fan_in)));
  auto t = Tensor<T>::randn(std::move(shape), rng, std_dev);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
void fill_zero(ParamList<T>& params) {
  for (auto& [name, p] : params) std::fill(p.mutable_data().begin(), p.mutable_data().end(), T(0));
}

/// Affine map over the last axis: W (in, out), b (out).
template <typename T>
struct Linear {
  Tensor<T> weight, bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true, T gain = T(1)) {
    const T bound = gain * static_cast<T>(std::sqrt(1.0 / static_cast<double>(in)));
    weight = Tensor<T>::uniform(Shape{in, out}, rng, -bound, bound);
    weight.set_requires_grad(true);
    if (with_bias) bias = make_param<T>(Shape{out});
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  }
};

/// conv2d with owned weights, bias, and fixed stride / padding.
template <typename T>
struct Conv2d {
  Tensor<T> weight, bias;
  std::size_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, Rng& rng, bool with_bias = true,
         T gain = T(1))
      : stride(stride_), pad(k / 2) {
    weight = he_param<T>(Shape{out, in, k, k}, in * k * k, rng, gain);
    if (with_bias) bias = make_param<T>(Shape{out});
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  }
};

}  // namespace bevscan
