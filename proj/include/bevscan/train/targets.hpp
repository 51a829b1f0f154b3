#pragma once

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "bevscan/core/tensor.hpp"
#include "bevscan/geometry/grid.hpp"
#include "bevscan/scene/scene.hpp"

namespace bevscan {

/// Per-cell supervision on the BEV grid. Rasters are (1|2, nz, nx) in
/// row-major (z, x) order; instance_ids holds -1 for background.
struct Targets {
  std::size_t nz = 0, nx = 0;
  std::vector<float> seg;          // {0, 1}
  std::vector<float> centerness;   // [0, 1]
  std::vector<float> offset;       // 2 planes: (dx, dz) in cells
  std::vector<std::int32_t> instance_ids;
  std::vector<bool> visibility;    // per instance
  struct CenterCell {
    long i, j;  // -1 when the center is off-grid
  };
  std::vector<CenterCell> centers;  // per instance
  double sigma = 3.0;

  std::size_t cells() const { return nz * nx; }

  template <typename T>
  Tensor<T> tensor(const std::vector<float>& v, std::size_t channels) const {
    std::vector<T> d(v.begin(), v.end());
    return Tensor<T>(Shape{channels, nz, nx}, std::move(d));
  }
};

inline constexpr double kCenterSigmaCells = 3.0;

namespace detail {

inline void splat_gaussian(Targets& t, long pi, long pj) {
  const double inv2s2 = 1.0 / (2.0 * t.sigma * t.sigma);
  const long reach = static_cast<long>(std::ceil(4.0 * t.sigma));
  const long nz = static_cast<long>(t.nz), nx = static_cast<long>(t.nx);
  for (long j = std::max(0L, pj - reach); j <= std::min(nz - 1, pj + reach); ++j)
    for (long i = std::max(0L, pi - reach); i <= std::min(nx - 1, pi + reach); ++i) {
      const double d2 = double((i - pi) * (i - pi) + (j - pj) * (j - pj));
      auto& c = t.centerness[std::size_t(j) * t.nx + std::size_t(i)];
      c = std::max(c, static_cast<float>(std::exp(-d2 * inv2s2)));
    }
}

}  // namespace detail

/// Rasterizes vehicle footprints at cell centers. The instance center is the
/// cell containing the box center; the Gaussian peaks there at exactly 1.
/// Where footprints share a cell the later vehicle wins.
inline Targets make_targets(const SceneSpec& scene, const BevGrid& grid, double sigma = kCenterSigmaCells) {
  Targets t;
  t.nz = grid.nz;
  t.nx = grid.nx;
  const std::size_t S = grid.cells();
  t.seg.assign(S, 0.f);
  t.centerness.assign(S, 0.f);
  t.offset.assign(2 * S, 0.f);
  t.instance_ids.assign(S, -1);
  t.visibility.assign(scene.vehicles.size(), true);
  t.sigma = sigma;
  for (std::size_t n = 0; n < scene.vehicles.size(); ++n) {
    const auto& v = scene.vehicles[n];
    const double ci = grid.x_to_cell(v.x), cj = grid.z_to_cell(v.z);
    // footprint over the bounding square of the box
    const double half = 0.5 * std::hypot(v.length, v.width);
    const long i0 = std::max(0L, static_cast<long>(std::floor(grid.x_to_cell(v.x - half))));
    const long i1 = std::min(static_cast<long>(grid.nx) - 1, static_cast<long>(std::ceil(grid.x_to_cell(v.x + half))));
    const long j0 = std::max(0L, static_cast<long>(std::floor(grid.z_to_cell(v.z - half))));
    const long j1 = std::min(static_cast<long>(grid.nz) - 1, static_cast<long>(std::ceil(grid.z_to_cell(v.z + half))));
    for (long j = j0; j <= j1; ++j)
      for (long i = i0; i <= i1; ++i) {
        if (!v.contains_xz(grid.x_center(std::size_t(i)), grid.z_center(std::size_t(j)))) continue;
        const std::size_t s = std::size_t(j) * grid.nx + std::size_t(i);
        t.seg[s] = 1.f;
        t.instance_ids[s] = static_cast<std::int32_t>(n);
        t.offset[s] = static_cast<float>(ci - static_cast<double>(i));
        t.offset[S + s] = static_cast<float>(cj - static_cast<double>(j));
      }
    const auto cell = grid.cell_of(v.x, v.z);
    if (!cell) {
      t.centers.push_back({-1, -1});
      continue;
    }
    t.centers.push_back({long(cell->i), long(cell->j)});
    detail::splat_gaussian(t, long(cell->i), long(cell->j));
  }
  return t;
}

/// Removes every instance whose flag is false from seg, centerness, and
/// offset; flags.size() must equal the instance count.
inline Targets visibility_filter(const Targets& in, const std::vector<bool>& flags) {
  if (flags.size() != in.centers.size()) throw std::invalid_argument("visibility_filter: flag count mismatch");
  Targets out = in;
  out.visibility = flags;
  const std::size_t S = in.cells();
  for (std::size_t s = 0; s < S; ++s) {
    const auto id = in.instance_ids[s];
    if (id >= 0 && !flags[std::size_t(id)]) {
      out.seg[s] = 0.f;
      out.offset[s] = out.offset[S + s] = 0.f;
      out.instance_ids[s] = -1;
    }
  }
  std::fill(out.centerness.begin(), out.centerness.end(), 0.f);
  for (std::size_t n = 0; n < flags.size(); ++n)
    if (flags[n] && in.centers[n].i >= 0) detail::splat_gaussian(out, in.centers[n].i, in.centers[n].j);
  return out;
}

/// Applies the targets' own visibility flags.
inline Targets visible_only(const Targets& in) { return visibility_filter(in, in.visibility); }

}  // namespace bevscan
