#pragma once

#include <string>

#include "bevscan/net/encoder.hpp"

namespace bevscan {

/// seg_logits (B, 1, Z, X), centerness (B, 1, Z, X) in [0, 1], offset
/// (B, 2, Z, X) in cells, pointing from each cell to its instance center.
template <typename T>
struct HeadOutputs {
  Tensor<T> seg_logits;
  Tensor<T> centerness;
  Tensor<T> offset;
};

/// A 3x3 conv + ReLU followed by a 1x1 projection.
template <typename T>
struct HeadStack {
  ConvRelu<T> hidden;
  Conv2d<T> project;

  HeadStack() = default;
  HeadStack(std::size_t in, std::size_t width, std::size_t out, Rng& rng)
      : hidden(in, width, 3, 1, rng), project(width, out, 1, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return project(hidden(x)); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    hidden.collect(prefix + ".hidden", out);
    project.collect(prefix + ".project", out);
  }
};

template <typename T>
struct Heads {
  HeadStack<T> seg, center, offset;

  Heads() = default;
  Heads(std::size_t in, std::size_t width, Rng& rng)
      : seg(in, width, 1, rng), center(in, width, 1, rng), offset(in, width, 2, rng) {}

  /// Hidden feature of the center stack; the center mask reads from here.
  Tensor<T> center_feature(const Tensor<T>& f) const { return center.hidden(f); }
  Tensor<T> centerness_from(const Tensor<T>& center_feature) const {
    return sigmoid(center.project(center_feature));
  }

  HeadOutputs<T> operator()(const Tensor<T>& f) const {
    return {seg(f), centerness_from(center_feature(f)), offset(f)};
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    seg.collect(prefix + ".seg", out);
    center.collect(prefix + ".center", out);
    offset.collect(prefix + ".offset", out);
  }
};

}  // namespace bevscan
