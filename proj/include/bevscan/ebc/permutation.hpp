#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevscan/geometry/grid.hpp"

namespace bevscan {

enum class Band : unsigned char { A = 0, B = 1, C = 2 };

/// Distance bands around the ego: A = [0, near), B = [near, mid), C = [mid, inf).
/// C absorbs everything beyond `mid`, including the corners of a square grid.
struct BandPartition {
  double near = 20.0;
  double mid = 35.0;

  Band band_of(double distance) const {
    if (distance < near) return Band::A;
    if (distance < mid) return Band::B;
    return Band::C;
  }
};

enum class ScanKind { Forward, ForwardSurround, BackwardSurround };

inline const char* to_string(ScanKind k) {
  switch (k) {
    case ScanKind::Forward: return "forward";
    case ScanKind::ForwardSurround: return "forward_surround";
    case ScanKind::BackwardSurround: return "backward_surround";
  }
  return "?";
}

/// Metric center of 2x2 patch (pz, px).
struct PatchCenter {
  double x, z;
};

inline void require_even(const BevGrid& grid) {
  if (grid.nx % 2 || grid.nz % 2) {
    throw std::invalid_argument("2x2 patching needs even grid dims, got " + std::to_string(grid.nz) + "x" +
                                std::to_string(grid.nx));
  }
}

inline std::vector<PatchCenter> patch_centers(const BevGrid& grid) {
  require_even(grid);
  const std::size_t pz = grid.nz / 2, px = grid.nx / 2;
  std::vector<PatchCenter> c;
  c.reserve(pz * px);
  for (std::size_t j = 0; j < pz; ++j)
    for (std::size_t i = 0; i < px; ++i)
      c.push_back({grid.x_min + static_cast<double>(2 * i + 1) * grid.dx(),
                   grid.z_min + static_cast<double>(2 * j + 1) * grid.dz()});
  return c;
}

/// Clockwise angle seen from above, starting at +Z (forward) and turning
/// toward +X (right); in [0, 2*pi).
inline double clockwise_angle(double x, double z) {
  double a = std::atan2(x, z);
  if (a < 0) a += 2.0 * std::numbers::pi;
  return a;
}

/// A named serialization of the patch sequence. order[i] is the raster
/// index of the patch visited i-th; inverse[order[i]] == i.
struct PatchPermutation {
  ScanKind kind = ScanKind::Forward;
  std::vector<std::size_t> order;
  std::vector<std::size_t> inverse;
  std::array<std::size_t, 3> band_sizes{0, 0, 0};

  std::size_t size() const { return order.size(); }
};

inline std::vector<std::size_t> invert(const std::vector<std::size_t>& order) {
  std::vector<std::size_t> inv(order.size(), order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] >= order.size() || inv[order[i]] != order.size()) throw std::logic_error("not a permutation");
    inv[order[i]] = i;
  }
  return inv;
}

/// Forward: raster order. ForwardSurround: band A, then B, then C; inside a
/// band by clockwise angle from +Z, then radius, then raster index.
/// BackwardSurround: exact reversal of ForwardSurround (far to near,
/// counter-clockwise).
inline PatchPermutation build_permutation(const BevGrid& grid, ScanKind kind, const BandPartition& bands = {}) {
  const auto centers = patch_centers(grid);
  const std::size_t L = centers.size();
  PatchPermutation perm;
  perm.kind = kind;
  perm.order.resize(L);
  struct Key {
    int band;
    double angle, radius;
    std::size_t index;
  };
  std::vector<Key> keys(L);
  for (std::size_t p = 0; p < L; ++p) {
    const double r = std::hypot(centers[p].x, centers[p].z);
    const int b = static_cast<int>(bands.band_of(r));
    keys[p] = {b, clockwise_angle(centers[p].x, centers[p].z), r, p};
    ++perm.band_sizes[static_cast<std::size_t>(b)];
  }
  if (kind == ScanKind::Forward) {
    for (std::size_t p = 0; p < L; ++p) perm.order[p] = p;
  } else {
    std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
      if (a.band != b.band) return a.band < b.band;
      if (a.angle != b.angle) return a.angle < b.angle;
      if (a.radius != b.radius) return a.radius < b.radius;
      return a.index < b.index;
    });
    for (std::size_t i = 0; i < L; ++i) perm.order[i] = keys[i].index;
    if (kind == ScanKind::BackwardSurround) std::reverse(perm.order.begin(), perm.order.end());
  }
  perm.inverse = invert(perm.order);
  return perm;
}

}  // namespace bevscan
