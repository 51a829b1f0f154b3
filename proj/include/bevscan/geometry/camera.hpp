#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Geometry>

#include "bevscan/geometry/grid.hpp"

namespace bevscan {

/// Pinhole camera. Pixel coordinates put pixel index u at continuous u, so
/// (cx, cy) = (w-1)/2, (h-1)/2 is the image center.
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Mat3 rotation = Mat3::Identity();        // camera-from-ego
  Vec3 translation = Vec3::Zero();         // camera-from-ego

  Vec3 to_camera(const Vec3& p_ego) const { return rotation * p_ego + translation; }
  Vec3 center_in_ego() const { return -rotation.transpose() * translation; }

  struct Pixel {
    double u, v, depth;
  };

  /// Projection of an ego-frame point; nullopt when not in front of the camera.
  std::optional<Pixel> project(const Vec3& p_ego) const {
    const Vec3 pc = to_camera(p_ego);
    if (!(pc.z() > 1e-6)) return std::nullopt;
    return Pixel{fx * pc.x() / pc.z() + cx, fy * pc.y() / pc.z() + cy, pc.z()};
  }

  /// Ray through pixel (u, v) in ego frame (unit direction).
  Vec3 ray_direction(double u, double v) const {
    const Vec3 dc((u - cx) / fx, (v - cy) / fy, 1.0);
    return (rotation.transpose() * dc).normalized();
  }

  /// Camera with axis orientation from yaw (clockwise from +Z seen from
  /// above) and pitch (positive looks down), centered at `position`.
  static Camera looking(const Vec3& position, double yaw, double pitch, double fx, double fy, double cx,
                        double cy) {
    const Vec3 forward(std::sin(yaw) * std::cos(pitch), std::sin(pitch), std::cos(yaw) * std::cos(pitch));
    const Vec3 right(std::cos(yaw), 0.0, -std::sin(yaw));
    const Vec3 down = forward.cross(right);
    Camera c;
    c.fx = fx;
    c.fy = fy;
    c.cx = cx;
    c.cy = cy;
    c.rotation.row(0) = right.transpose();
    c.rotation.row(1) = down.transpose();
    c.rotation.row(2) = forward.transpose();
    c.translation = -c.rotation * position;
    return c;
  }

  /// Same camera with intrinsics rescaled for a feature map that is
  /// `factor` times smaller than the image (stride-`factor` features whose
  /// pixel j sits over image pixel factor * j).
  Camera downscaled(double factor) const {
    Camera c = *this;
    c.fx /= factor;
    c.fy /= factor;
    c.cx /= factor;
    c.cy /= factor;
    return c;
  }

  void validate() const {
    if (fx == 0.0 || fy == 0.0) throw std::invalid_argument("Camera: degenerate intrinsics (fx or fy is 0)");
    const Mat3 rtr = rotation.transpose() * rotation;
    if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9)
      throw std::invalid_argument("Camera: rotation is not a proper orthonormal matrix");
  }
};

/// Cameras observing one feature-map resolution (h x w per camera).
struct CameraRig {
  std::vector<Camera> cameras;
  std::size_t feat_h = 0, feat_w = 0;

  std::size_t size() const { return cameras.size(); }

  void validate() const {
    if (cameras.empty()) throw std::invalid_argument("CameraRig: no cameras");
    if (feat_h == 0 || feat_w == 0) throw std::invalid_argument("CameraRig: empty feature map");
    for (const auto& c : cameras) c.validate();
  }

  /// Rig moved by the rigid ego-frame transform p' = R p + s.
  CameraRig transformed(const Mat3& R, const Vec3& s) const {
    CameraRig out = *this;
    for (auto& c : out.cameras) {
      // p_cam = Rc p + tc with p = R^T (p' - s)
      c.rotation = c.rotation * R.transpose();
      c.translation = c.translation - c.rotation * s;
    }
    return out;
  }
};

}  // namespace bevscan
