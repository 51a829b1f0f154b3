#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace bevscan {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Metric <-> cell contract of the BEV volume.
///
/// Ego frame: +X right, +Y down, +Z forward (right-handed, same axes as a
/// camera looking forward). The ground plane is y = 0, so heights above
/// ground are negative y. Cell (i, j) indexes (x, z); voxel level k indexes y
/// in ascending order.
struct BevGrid {
  double x_min = -50.0, x_max = 50.0;
  double z_min = -50.0, z_max = 50.0;
  double y_min = -5.0, y_max = 5.0;
  std::size_t nx = 200, nz = 200, ny = 8;

  double dx() const { return (x_max - x_min) / static_cast<double>(nx); }
  double dz() const { return (z_max - z_min) / static_cast<double>(nz); }
  double dy() const { return (y_max - y_min) / static_cast<double>(ny); }

  std::size_t cells() const { return nx * nz; }
  std::size_t voxels() const { return nx * nz * ny; }

  double x_center(std::size_t i) const { return x_min + (static_cast<double>(i) + 0.5) * dx(); }
  double z_center(std::size_t j) const { return z_min + (static_cast<double>(j) + 0.5) * dz(); }
  double y_center(std::size_t k) const { return y_min + (static_cast<double>(k) + 0.5) * dy(); }

  Vec3 voxel_center(std::size_t k, std::size_t j, std::size_t i) const {
    return {x_center(i), y_center(k), z_center(j)};
  }

  /// Continuous cell coordinates where integer values are cell centers.
  double x_to_cell(double x) const { return (x - x_min) / dx() - 0.5; }
  double z_to_cell(double z) const { return (z - z_min) / dz() - 0.5; }

  struct Cell {
    std::size_t i, j;
  };

  /// Cell containing (x, z); nullopt outside [min, max) in either axis.
  std::optional<Cell> cell_of(double x, double z) const {
    if (!(x >= x_min && x < x_max && z >= z_min && z < z_max)) return std::nullopt;
    auto i = static_cast<std::size_t>(std::floor((x - x_min) / dx()));
    auto j = static_cast<std::size_t>(std::floor((z - z_min) / dz()));
    if (i >= nx) i = nx - 1;
    if (j >= nz) j = nz - 1;
    return Cell{i, j};
  }

  void validate() const {
    if (nx == 0 || nz == 0 || ny == 0) throw std::invalid_argument("BevGrid: zero cell count");
    if (!(x_max > x_min && z_max > z_min && y_max > y_min))
      throw std::invalid_argument("BevGrid: empty metric extent");
  }

  bool operator==(const BevGrid&) const = default;
};

}  // namespace bevscan
