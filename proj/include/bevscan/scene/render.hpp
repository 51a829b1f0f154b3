#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "bevscan/scene/scene.hpp"
#include "bevscan/train/targets.hpp"

namespace bevscan {

enum class Modality { Camera, CameraRadar, CameraLidar };

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::Camera: return "camera";
    case Modality::CameraRadar: return "camera+radar";
    case Modality::CameraLidar: return "camera+lidar";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "camera") return Modality::Camera;
  if (s == "camera+radar") return Modality::CameraRadar;
  if (s == "camera+lidar") return Modality::CameraLidar;
  throw std::invalid_argument("unknown modality '" + s + "' (camera, camera+radar, camera+lidar)");
}

struct RenderOptions {
  RigSpec rig{};
  Modality modality = Modality::Camera;
  std::size_t visibility_pixels = 10;  // minimum pixels in one view
  double lidar_height = 3.0;           // sensor above ground, meters
  double lidar_spacing = 0.25;         // aim-point spacing on the ground, meters
  double lidar_reach = 110.0;          // aim points cover |x|, |z| <= reach
  double lidar_noise = 0.02;           // range noise sigma, meters
  double radar_keep = 0.02;
  double radar_noise = 0.5;
};

/// Multi-view RGB images (K, 3, H, W) in [0, 1], a point cloud in ego
/// meters, and the supervision targets with visibility flags filled in.
struct RenderedSample {
  std::size_t views = 0, height = 0, width = 0;
  std::vector<float> images;
  std::vector<Vec3> points;
  Targets targets;
  std::vector<std::vector<std::size_t>> vehicle_pixels;  // [vehicle][view]
};

namespace detail {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int vehicle = -1;  // -1 ground
  int face = 0;      // 0 top, 1 length side, 2 width side
  bool any = false;
};

/// Slab intersection with an oriented box; updates `hit` if nearer.
inline void intersect_box(const Vec3& o, const Vec3& d, const Vehicle& v, int index, Hit& hit) {
  const auto f = v.forward();
  const auto r = v.lateral();
  // box frame: a = lateral, b = vertical (y), c = forward
  const double ox = o.x() - v.x, oz = o.z() - v.z;
  const double lo[3] = {-0.5 * v.width, -v.height, -0.5 * v.length};
  const double hi[3] = {0.5 * v.width, 0.0, 0.5 * v.length};
  const double po[3] = {ox * r[0] + oz * r[1], o.y(), ox * f[0] + oz * f[1]};
  const double pd[3] = {d.x() * r[0] + d.z() * r[1], d.y(), d.x() * f[0] + d.z() * f[1]};
  double tmin = 0.0, tmax = hit.t;
  int axis = -1;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(pd[a]) < 1e-12) {
      if (po[a] < lo[a] || po[a] > hi[a]) return;
      continue;
    }
    double t0 = (lo[a] - po[a]) / pd[a], t1 = (hi[a] - po[a]) / pd[a];
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > tmin) {
      tmin = t0;
      axis = a;
    }
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return;
  }
  if (axis < 0 || tmin >= hit.t) return;  // origin inside, or farther than the current hit
  hit.t = tmin;
  hit.vehicle = index;
  hit.face = axis == 1 ? 0 : (axis == 0 ? 1 : 2);
  hit.any = true;
}

inline Hit cast(const Vec3& o, const Vec3& d, const SceneSpec& scene) {
  Hit hit;
  if (d.y() > 1e-9 && o.y() < 0) {
    hit.t = -o.y() / d.y();
    hit.any = true;
  }
  for (std::size_t n = 0; n < scene.vehicles.size(); ++n) intersect_box(o, d, scene.vehicles[n], int(n), hit);
  return hit;
}

inline std::array<double, 3> hsv(double h, double s, double v) {
  const double c = v * s, hp = h * 6.0, x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  std::array<double, 3> rgb{};
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  const double m = v - c;
  return {rgb[0] + m, rgb[1] + m, rgb[2] + m};
}

/// Saturated per-vehicle colors, stable in the scene seed.
inline std::vector<std::array<double, 3>> vehicle_colors(const SceneSpec& scene) {
  std::mt19937_64 rng(scene.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::array<double, 3>> c;
  for (std::size_t n = 0; n < scene.vehicles.size(); ++n) c.push_back(hsv(u(rng), 0.6 + 0.4 * u(rng), 0.55 + 0.4 * u(rng)));
  return c;
}

inline std::array<double, 3> ground_color(const Vec3& p) {
  const long cx = static_cast<long>(std::floor(p.x() / 2.0)), cz = static_cast<long>(std::floor(p.z() / 2.0));
  const double g = ((cx + cz) & 1) ? 0.42 : 0.34;
  return {g, g, g * 1.02};
}

}  // namespace detail

/// Ray-cast renderer: each pixel shows the nearest surface along its ray
/// (vehicle faces shaded by orientation, checkered ground, sky gradient).
inline RenderedSample render(const SceneSpec& scene, const BevGrid& grid, const RenderOptions& opt = {}) {
  const CameraRig rig = opt.rig.build();
  RenderedSample out;
  out.views = rig.size();
  out.height = rig.feat_h;
  out.width = rig.feat_w;
  const std::size_t H = out.height, W = out.width, plane = H * W;
  out.images.assign(out.views * 3 * plane, 0.f);
  out.vehicle_pixels.assign(scene.vehicles.size(), std::vector<std::size_t>(out.views, 0));
  const auto colors = detail::vehicle_colors(scene);
  static constexpr double kShade[3] = {1.0, 0.78, 0.62};
  for (std::size_t k = 0; k < out.views; ++k) {
    const auto& cam = rig.cameras[k];
    const Vec3 o = cam.center_in_ego();
    float* img = out.images.data() + k * 3 * plane;
    for (std::size_t v = 0; v < H; ++v)
      for (std::size_t u = 0; u < W; ++u) {
        const Vec3 d = cam.ray_direction(double(u), double(v));
        const auto hit = detail::cast(o, d, scene);
        std::array<double, 3> rgb;
        if (hit.vehicle >= 0) {
          const auto& c = colors[std::size_t(hit.vehicle)];
          const double s = kShade[hit.face];
          rgb = {c[0] * s, c[1] * s, c[2] * s};
          ++out.vehicle_pixels[std::size_t(hit.vehicle)][k];
        } else if (hit.any) {
          rgb = detail::ground_color(o + hit.t * d);
        } else {
          const double e = std::clamp(-d.y(), 0.0, 1.0);
          rgb = {0.55 + 0.2 * e, 0.7 + 0.15 * e, 0.9};
        }
        for (std::size_t ch = 0; ch < 3; ++ch) img[ch * plane + v * W + u] = static_cast<float>(rgb[ch]);
      }
  }

  out.targets = make_targets(scene, grid);
  for (std::size_t n = 0; n < scene.vehicles.size(); ++n) {
    const auto& px = out.vehicle_pixels[n];
    out.targets.visibility[n] = *std::max_element(px.begin(), px.end()) >= opt.visibility_pixels;
  }

  if (opt.modality != Modality::Camera) {
    std::mt19937_64 rng(scene.seed * 0x2545f4914f6cdd1dULL + 7);
    std::normal_distribution<double> range_noise(0.0, opt.lidar_noise);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5), keep(0.0, 1.0);
    const Vec3 o(0.0, -opt.lidar_height, 0.0);
    const long steps = static_cast<long>(std::floor(opt.lidar_reach / opt.lidar_spacing));
    const bool radar = opt.modality == Modality::CameraRadar;
    // returns beyond the grid footprint are never used downstream
    auto keep_point = [&](const Vec3& p) {
      if (p.x() >= grid.x_min && p.x() < grid.x_max && p.z() >= grid.z_min && p.z() < grid.z_max)
        out.points.push_back(p);
    };
    std::normal_distribution<double> radar_noise(0.0, opt.radar_noise);
    for (long b = -steps; b <= steps; ++b)
      for (long a = -steps; a <= steps; ++a) {
        const Vec3 aim((double(a) + jitter(rng)) * opt.lidar_spacing, 0.0,
                       (double(b) + jitter(rng)) * opt.lidar_spacing);
        Vec3 d = aim - o;
        const double len = d.norm();
        if (len < 1e-9) continue;
        d /= len;
        const double noise = range_noise(rng);
        if (radar) {
          const double r = keep(rng), rn = radar_noise(rng);
          if (r >= opt.radar_keep) continue;  // decided before casting; the stream is unchanged
          const auto hit = detail::cast(o, d, scene);
          if (hit.any) keep_point(o + (hit.t + rn) * d);
        } else if (const auto hit = detail::cast(o, d, scene); hit.any) {
          keep_point(o + (hit.t + noise) * d);
        }
      }
  }
  return out;
}

}  // namespace bevscan
