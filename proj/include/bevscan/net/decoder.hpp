#pragma once

#include <string>
#include <vector>

#include "bevscan/net/encoder.hpp"

namespace bevscan {

/// Two 3x3 convs with an identity (or 1x1 strided) shortcut.
template <typename T>
struct BasicBlock {
  Conv2d<T> conv1, conv2, shortcut;

  BasicBlock() = default;
  BasicBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
      : conv1(in, out, 3, stride, rng), conv2(out, out, 3, 1, rng) {
    if (stride != 1 || in != out) shortcut = Conv2d<T>(in, out, 1, stride, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = conv2(relu(conv1(x)));
    auto skip = shortcut.weight.defined() ? shortcut(x) : x;
    return relu(add(y, skip));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
    if (shortcut.weight.defined()) shortcut.collect(prefix + ".shortcut", out);
  }
};

/// Summative top-down merge: U_2 = S_2, U_i = up2x(U_{i+1}) + S_i.
/// skips[i] must sit at twice the resolution of skips[i+1].
template <typename T>
Tensor<T> decode(const std::vector<Tensor<T>>& skips) {
  if (skips.empty()) throw ShapeError("decode: no skip features");
  Tensor<T> u = skips.back();
  for (std::size_t i = skips.size() - 1; i-- > 0;) {
    const auto& s = skips[i];
    if (s.rank() != 4 || u.rank() != 4 || s.dim(0) != u.dim(0) || s.dim(1) != u.dim(1) ||
        s.dim(2) != 2 * u.dim(2) || s.dim(3) != 2 * u.dim(3)) {
      throw ShapeError("decode: level " + std::to_string(i) + " " + shape_str(s.shape()) +
                       " is not the 2x upsample of " + shape_str(u.shape()));
    }
    u = add(upsample_bilinear2x(u), s);
  }
  return u;
}

struct TrunkConfig {
  std::size_t channels = 32;   // width of S_0 and of the decoded map
  std::size_t mid = 48;        // width of the stride-2 level
  std::size_t deep = 64;       // width of the stride-4 level
};

/// BEV trunk over the fused map: S_0 at stride 1, residual stages at
/// strides 2 and 4, each laterally projected back to `channels`.
template <typename T>
struct BevTrunk {
  TrunkConfig cfg;
  BasicBlock<T> down1, down2;
  Conv2d<T> lat1, lat2;

  BevTrunk() = default;
  BevTrunk(const TrunkConfig& c, Rng& rng)
      : cfg(c), down1(c.channels, c.mid, 2, rng), down2(c.mid, c.deep, 2, rng), lat1(c.mid, c.channels, 1, 1, rng),
        lat2(c.deep, c.channels, 1, 1, rng) {}

  /// {S_0, S_1, S_2}, all with `channels` channels.
  std::vector<Tensor<T>> skips(const Tensor<T>& f) const {
    auto s1 = down1(f);
    auto s2 = down2(s1);
    return {f, lat1(s1), lat2(s2)};
  }

  Tensor<T> operator()(const Tensor<T>& f) const { return decode(skips(f)); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    down1.collect(prefix + ".down1", out);
    down2.collect(prefix + ".down2", out);
    lat1.collect(prefix + ".lat1", out);
    lat2.collect(prefix + ".lat2", out);
  }
};

}  // namespace bevscan
