#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevscan/core/module.hpp"
#include "bevscan/geometry/grid.hpp"

namespace bevscan {

/// Grid-aligned point-cloud raster, shape (N, nz, nx).
/// Channel 0: points per cell. Channel 1: mean y of those points (0 if empty).
template <typename T>
struct PointCloudRaster {
  Tensor<T> channels;
  std::size_t count_in_bounds = 0;
};

inline constexpr std::size_t kRasterChannels = 2;

template <typename T>
PointCloudRaster<T> rasterize_points(const std::vector<Vec3>& points, const BevGrid& grid) {
  grid.validate();
  const std::size_t S = grid.cells();
  PointCloudRaster<T> r{Tensor<T>(Shape{kRasterChannels, grid.nz, grid.nx}), 0};
  std::vector<double> count(S, 0.0), ysum(S, 0.0);
  for (const auto& p : points) {
    const auto cell = grid.cell_of(p.x(), p.z());
    if (!cell) continue;
    const std::size_t idx = cell->j * grid.nx + cell->i;
    count[idx] += 1.0;
    ysum[idx] += p.y();
    ++r.count_in_bounds;
  }
  T* out = r.channels.mutable_ptr();
  for (std::size_t s = 0; s < S; ++s) {
    out[s] = static_cast<T>(count[s]);
    out[S + s] = count[s] > 0 ? static_cast<T>(ysum[s] / count[s]) : T(0);
  }
  return r;
}

/// Plain-text XYZ point cloud: one "x y z" triple per line, meters. Blank
/// lines and lines starting with '#' are skipped.
inline std::vector<Vec3> read_xyz(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open point cloud: " + path);
  std::vector<Vec3> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x >> y >> z)) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed XYZ line");
    pts.emplace_back(x, y, z);
  }
  return pts;
}

inline void write_xyz(const std::string& path, const std::vector<Vec3>& pts) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write point cloud: " + path);
  os.precision(9);
  for (const auto& p : pts) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
}

/// Camera BEV features concatenated with the point raster (camera channels
/// first), then compressed to a fixed width by a learned 1x1 convolution.
template <typename T>
struct Fusion {
  Conv2d<T> compress;
  std::size_t camera_channels = 0, point_channels = 0;

  Fusion() = default;
  Fusion(std::size_t camera_ch, std::size_t point_ch, std::size_t out_ch, Rng& rng)
      : compress(camera_ch + point_ch, out_ch, 1, 1, rng), camera_channels(camera_ch), point_channels(point_ch) {}

  /// f_b: (B, camera_channels, nz, nx), f_p: (B, point_channels, nz, nx) or
  /// undefined when point_channels == 0.
  Tensor<T> concat_inputs(const Tensor<T>& f_b, const Tensor<T>& f_p) const {
    if (point_channels == 0) return f_b;
    if (!f_p.defined() || f_p.rank() != 4 || f_b.rank() != 4 || f_p.dim(0) != f_b.dim(0) ||
        f_p.dim(2) != f_b.dim(2) || f_p.dim(3) != f_b.dim(3)) {
      throw ShapeError("fuse: spatial mismatch between " + shape_str(f_b.shape()) + " and " +
                       (f_p.defined() ? shape_str(f_p.shape()) : std::string("<none>")));
    }
    return concat<T>({f_b, f_p}, 1);
  }

  Tensor<T> operator()(const Tensor<T>& f_b, const Tensor<T>& f_p) const {
    return compress(concat_inputs(f_b, f_p));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const { compress.collect(prefix + ".compress", out); }
};

}  // namespace bevscan
