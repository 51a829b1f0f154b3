#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevscan/geometry/camera.hpp"

namespace bevscan {

/// Oriented vehicle box resting on the ground (y from 0 up to -height).
/// yaw = 0 points the length along +Z; positive yaw turns toward +X.
struct Vehicle {
  double x = 0, z = 0, yaw = 0;
  double length = 4.5, width = 2.0, height = 1.6;

  /// Unit axes in the (x, z) plane: along the length and along the width.
  std::array<double, 2> forward() const { return {std::sin(yaw), std::cos(yaw)}; }
  std::array<double, 2> lateral() const { return {std::cos(yaw), -std::sin(yaw)}; }

  bool contains_xz(double px, double pz) const {
    const double dx = px - x, dz = pz - z;
    const auto f = forward();
    const auto r = lateral();
    return std::abs(dx * f[0] + dz * f[1]) <= 0.5 * length && std::abs(dx * r[0] + dz * r[1]) <= 0.5 * width;
  }

  /// Footprint corners, counter-clockwise order is not guaranteed.
  std::array<std::array<double, 2>, 4> corners() const {
    const auto f = forward();
    const auto r = lateral();
    const double hl = 0.5 * length, hw = 0.5 * width;
    std::array<std::array<double, 2>, 4> c{};
    const double sl[4] = {1, 1, -1, -1}, sw[4] = {1, -1, -1, 1};
    for (int k = 0; k < 4; ++k) {
      c[k] = {x + sl[k] * hl * f[0] + sw[k] * hw * r[0], z + sl[k] * hl * f[1] + sw[k] * hw * r[1]};
    }
    return c;
  }

  bool operator==(const Vehicle&) const = default;
};

/// Separating-axis test on two footprints, expanded by `margin` meters.
inline bool footprints_overlap(const Vehicle& a, const Vehicle& b, double margin = 0.0) {
  Vehicle ea = a, eb = b;
  ea.length += margin;
  ea.width += margin;
  eb.length += margin;
  eb.width += margin;
  const auto ca = ea.corners(), cb = eb.corners();
  const std::array<std::array<double, 2>, 4> axes{ea.forward(), ea.lateral(), eb.forward(), eb.lateral()};
  for (const auto& ax : axes) {
    double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
    for (int k = 0; k < 4; ++k) {
      const double pa = ca[k][0] * ax[0] + ca[k][1] * ax[1];
      const double pb = cb[k][0] * ax[0] + cb[k][1] * ax[1];
      amin = std::min(amin, pa);
      amax = std::max(amax, pa);
      bmin = std::min(bmin, pb);
      bmax = std::max(bmax, pb);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

/// Six cameras on a ring around the ego, 60 degrees apart, starting forward.
struct RigSpec {
  std::size_t cameras = 6;
  double height = 1.5;        // meters above ground
  double pitch = 0.0;         // radians, positive looks down
  double radius = 0.5;        // meters from the ego center
  double hfov_deg = 70.0;
  std::size_t image_h = 64, image_w = 112;

  double focal() const {
    return 0.5 * static_cast<double>(image_w) / std::tan(0.5 * hfov_deg * std::numbers::pi / 180.0);
  }

  /// Rig at image resolution (feat_h/feat_w are the image size).
  CameraRig build() const {
    CameraRig rig;
    rig.feat_h = image_h;
    rig.feat_w = image_w;
    const double f = focal();
    const double cx = 0.5 * static_cast<double>(image_w - 1), cy = 0.5 * static_cast<double>(image_h - 1);
    for (std::size_t k = 0; k < cameras; ++k) {
      const double yaw = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(cameras);
      const Vec3 pos(radius * std::sin(yaw), -height, radius * std::cos(yaw));
      rig.cameras.push_back(Camera::looking(pos, yaw, pitch, f, f, cx, cy));
    }
    rig.validate();
    return rig;
  }
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<Vehicle> vehicles;
};

/// Sampling distribution of generated scenes.
struct SceneDistribution {
  std::size_t min_vehicles = 4, max_vehicles = 12;
  double extent = 48.0;        // |x|, |z| bound for vehicle corners
  double ego_clearance = 3.0;  // half-size of the keep-out square around the ego
  double near_bias = 1.0;      // radius ~ extent * u^near_bias; 1 = uniform in radius
  double yaw_jitter = 0.15;    // radians around an axis-aligned heading
  double margin = 0.4;         // minimum gap between vehicles
};

/// Deterministic in `seed`. Vehicles never overlap each other or the ego.
inline SceneSpec generate_scene(std::uint64_t seed, const SceneDistribution& dist = {}) {
  if (dist.min_vehicles > dist.max_vehicles) {
    throw std::invalid_argument("generate_scene: empty vehicle range [" + std::to_string(dist.min_vehicles) + ", " +
                                std::to_string(dist.max_vehicles) + "]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> count(dist.min_vehicles, dist.max_vehicles);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  SceneSpec scene;
  scene.seed = seed;
  const std::size_t target = count(rng);
  const Vehicle ego{0, 0, 0, 2 * dist.ego_clearance, 2 * dist.ego_clearance, 1.6};
  for (std::size_t attempt = 0; scene.vehicles.size() < target && attempt < 200 * (target + 1); ++attempt) {
    Vehicle v;
    v.length = 4.5 + 0.3 * normal(rng);
    v.width = 2.0 + 0.12 * normal(rng);
    v.height = 1.6 + 0.15 * normal(rng);
    const double r = dist.ego_clearance + (dist.extent - dist.ego_clearance) * std::pow(unit(rng), dist.near_bias);
    const double theta = 2.0 * std::numbers::pi * unit(rng);
    v.x = r * std::sin(theta);
    v.z = r * std::cos(theta);
    const double heading = unit(rng) < 0.5 ? 0.0 : 0.5 * std::numbers::pi;
    v.yaw = heading + dist.yaw_jitter * normal(rng);
    bool ok = true;
    for (const auto& c : v.corners()) ok = ok && std::abs(c[0]) <= dist.extent && std::abs(c[1]) <= dist.extent;
    ok = ok && !footprints_overlap(v, ego);
    for (const auto& o : scene.vehicles) ok = ok && !footprints_overlap(v, o, dist.margin);
    if (ok) scene.vehicles.push_back(v);
  }
  return scene;
}

}  // namespace bevscan
