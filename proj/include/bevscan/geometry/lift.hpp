#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "bevscan/core/ops.hpp"
#include "bevscan/geometry/camera.hpp"

namespace bevscan {

/// Precomputed bilinear sampling pattern of a fixed rig over fixed points.
///
/// For each target point, every camera that sees it (positive depth and
/// projection inside [0, w-1] x [0, h-1]) contributes four taps; tap weights
/// already include the 1 / (number of valid cameras) averaging factor.
/// Points seen by no camera have no taps and lift to zero.
struct LiftPlan {
  struct Tap {
    std::uint32_t offset;  // camera * h * w + pixel
    double weight;
  };
  std::size_t cameras = 0, feat_h = 0, feat_w = 0, points = 0;
  std::vector<std::uint32_t> begin;  // points + 1 CSR offsets into taps
  std::vector<Tap> taps;
  std::vector<std::uint8_t> valid_count;
};

inline LiftPlan build_lift_plan(const CameraRig& rig, const std::vector<Vec3>& points) {
  rig.validate();
  LiftPlan plan;
  plan.cameras = rig.size();
  plan.feat_h = rig.feat_h;
  plan.feat_w = rig.feat_w;
  plan.points = points.size();
  plan.begin.reserve(points.size() + 1);
  plan.valid_count.reserve(points.size());
  plan.begin.push_back(0);
  const double umax = static_cast<double>(rig.feat_w - 1);
  const double vmax = static_cast<double>(rig.feat_h - 1);
  const std::size_t hw = rig.feat_h * rig.feat_w;
  std::vector<LiftPlan::Tap> local;
  for (const auto& p : points) {
    local.clear();
    std::uint8_t valid = 0;
    for (std::size_t k = 0; k < rig.size(); ++k) {
      const auto px = rig.cameras[k].project(p);
      if (!px || px->u < 0.0 || px->u > umax || px->v < 0.0 || px->v > vmax) continue;
      ++valid;
      const auto u0 = static_cast<std::size_t>(std::floor(px->u));
      const auto v0 = static_cast<std::size_t>(std::floor(px->v));
      const std::size_t u1 = std::min<std::size_t>(u0 + 1, rig.feat_w - 1);
      const std::size_t v1 = std::min<std::size_t>(v0 + 1, rig.feat_h - 1);
      const double fu = px->u - static_cast<double>(u0), fv = px->v - static_cast<double>(v0);
      const std::size_t base = k * hw;
      auto push = [&](std::size_t v, std::size_t u, double w) {
        if (w != 0.0) local.push_back({static_cast<std::uint32_t>(base + v * rig.feat_w + u), w});
      };
      push(v0, u0, (1 - fu) * (1 - fv));
      push(v0, u1, fu * (1 - fv));
      push(v1, u0, (1 - fu) * fv);
      push(v1, u1, fu * fv);
    }
    for (auto& t : local) {
      t.weight /= static_cast<double>(valid);
      plan.taps.push_back(t);
    }
    plan.valid_count.push_back(valid);
    plan.begin.push_back(static_cast<std::uint32_t>(plan.taps.size()));
  }
  return plan;
}

/// Voxel centers in (k, j, i) raster order, k = y level, j = z row, i = x column.
inline std::vector<Vec3> voxel_centers(const BevGrid& grid) {
  grid.validate();
  std::vector<Vec3> pts;
  pts.reserve(grid.voxels());
  for (std::size_t k = 0; k < grid.ny; ++k)
    for (std::size_t j = 0; j < grid.nz; ++j)
      for (std::size_t i = 0; i < grid.nx; ++i) pts.push_back(grid.voxel_center(k, j, i));
  return pts;
}

inline LiftPlan build_lift_plan(const CameraRig& rig, const BevGrid& grid) {
  return build_lift_plan(rig, voxel_centers(grid));
}

/// Samples per-camera feature maps at the plan's points.
///
/// features: (B, K, d, h, w) -> (B, d, P). Linear in the features and
/// differentiable with respect to them.
template <typename T>
Tensor<T> lift_sample(const Tensor<T>& features, std::shared_ptr<const LiftPlan> plan) {
  if (features.rank() != 5 || features.dim(1) != plan->cameras || features.dim(3) != plan->feat_h ||
      features.dim(4) != plan->feat_w) {
    throw ShapeError("lift: features " + shape_str(features.shape()) + " do not match the rig (" +
                     std::to_string(plan->cameras) + " cameras, " + std::to_string(plan->feat_h) + "x" +
                     std::to_string(plan->feat_w) + ")");
  }
  const std::size_t B = features.dim(0), d = features.dim(2), P = plan->points;
  const std::size_t per_sample = plan->cameras * d * plan->feat_h * plan->feat_w;
  const std::size_t hw = plan->feat_h * plan->feat_w;
  Tensor<T> out(Shape{B, d, P});
  for (std::size_t b = 0; b < B; ++b) {
    const T* f = features.ptr() + b * per_sample;
    T* o = out.mutable_ptr() + b * d * P;
    for (std::size_t p = 0; p < P; ++p)
      for (std::uint32_t t = plan->begin[p]; t < plan->begin[p + 1]; ++t) {
        const auto& tap = plan->taps[t];
        const std::size_t cam = tap.offset / hw, pix = tap.offset % hw;
        const T w = static_cast<T>(tap.weight);
        const T* fc = f + cam * d * hw + pix;
        for (std::size_t c = 0; c < d; ++c) o[c * P + p] += w * fc[c * hw];
      }
  }
  if (detail::any_requires_grad<T>({&features})) {
    detail::record(out, [features, plan, B, d, P, per_sample, hw](std::span<const T> g) {
      T* gf = detail::grad_target(features);
      if (!gf) return;
      for (std::size_t b = 0; b < B; ++b) {
        T* f = gf + b * per_sample;
        const T* go = g.data() + b * d * P;
        for (std::size_t p = 0; p < P; ++p)
          for (std::uint32_t t = plan->begin[p]; t < plan->begin[p + 1]; ++t) {
            const auto& tap = plan->taps[t];
            const std::size_t cam = tap.offset / hw, pix = tap.offset % hw;
            const T w = static_cast<T>(tap.weight);
            T* fc = f + cam * d * hw + pix;
            for (std::size_t c = 0; c < d; ++c) fc[c * hw] += w * go[c * P + p];
          }
      }
    });
  }
  return out;
}

/// Lifts multi-view features into the voxel volume: (B, K, d, h, w) ->
/// (B, d, ny, nz, nx).
template <typename T>
Tensor<T> lift(const Tensor<T>& features, std::shared_ptr<const LiftPlan> plan, const BevGrid& grid) {
  if (plan->points != grid.voxels()) throw ShapeError("lift: plan was not built for this grid");
  auto flat = lift_sample(features, plan);
  return reshape(flat, Shape{features.dim(0), features.dim(2), grid.ny, grid.nz, grid.nx});
}

/// Folds the y levels into channels: (B, d, ny, nz, nx) -> (B, d*ny, nz, nx),
/// channel index = feature * ny + y level.
template <typename T>
Tensor<T> collapse_y(const Tensor<T>& vox) {
  if (vox.rank() != 5) throw ShapeError("collapse_y: (B, d, ny, nz, nx) expected, got " + shape_str(vox.shape()));
  return reshape(vox, Shape{vox.dim(0), vox.dim(1) * vox.dim(2), vox.dim(3), vox.dim(4)});
}

}  // namespace bevscan
