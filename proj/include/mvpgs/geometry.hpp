// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <cstring>
#include <map>
#include <optional>
#include <vector>

#include "mvpgs/common.hpp"

namespace mvpgs {

// Conventions used throughout:
//  - camera frame: x right, y down, z forward (into the scene)
//  - poses are camera-to-world rigid transforms
//  - pixel centers sit at integer coordinates; (0,0) is the center of the
//    top-left pixel
//  - geometry in doubles, image payloads in floats

// ---------------------------------------------------------------------------

struct Intrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;

  void validate() const {
    require(fx > 0 && fy > 0, "Intrinsics: focal lengths must be positive");
    require(width > 0 && height > 0, "Intrinsics: image size must be positive");
    require(cx >= 0 && cx < width, "Intrinsics: cx outside image");
    require(cy >= 0 && cy < height, "Intrinsics: cy outside image");
  }
};

// Camera-to-world rigid transform.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose identity() { return Pose{}; }

  bool is_valid(double tol = 1e-9) const {
    const Eigen::Matrix3d should_be_i = rotation.transpose() * rotation;
    if ((should_be_i - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(rotation.determinant() - 1.0) <= tol;
  }

  // World-to-camera counterpart: R^T, -R^T t.
  Pose inverse() const {
    Pose out;
    out.rotation = rotation.transpose();
    out.translation = -(rotation.transpose() * translation);
    return out;
  }

  Eigen::Vector3d center() const { return translation; }

  bool bitwise_equal(const Pose& o) const {
    return std::memcmp(rotation.data(), o.rotation.data(), sizeof(double) * 9) == 0 &&
           std::memcmp(translation.data(), o.translation.data(), sizeof(double) * 3) == 0;
  }
};

// Interleaved RGB, row-major, values in [0,1].
struct Image {
  int width = 0, height = 0;
  std::vector<float> data;  // height*width*3

  Image() = default;
  Image(int w, int h, float fill = 0.f) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}

  float& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }

  Eigen::Vector3d pixel(int x, int y) const {
    const size_t base = (static_cast<size_t>(y) * width + x) * 3;
    return {data[base], data[base + 1], data[base + 2]};
  }

  void set_pixel(int x, int y, const Eigen::Vector3d& rgb) {
    const size_t base = (static_cast<size_t>(y) * width + x) * 3;
    data[base] = static_cast<float>(rgb.x());
    data[base + 1] = static_cast<float>(rgb.y());
    data[base + 2] = static_cast<float>(rgb.z());
  }

  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
};

enum class DepthRole { Mvs, Mono, Rendered, GroundTruth };

// z-depth along the camera forward axis; invalid entries hold 0.
struct DepthMap {
  int width = 0, height = 0;
  std::vector<float> depth;    // height*width
  std::vector<uint8_t> valid;  // height*width, 0/1
  DepthRole role = DepthRole::GroundTruth;

  DepthMap() = default;
  DepthMap(int w, int h, DepthRole r = DepthRole::GroundTruth)
      : width(w), height(h), depth(static_cast<size_t>(w) * h, 0.f),
        valid(static_cast<size_t>(w) * h, 0), role(r) {}

  size_t idx(int x, int y) const { return static_cast<size_t>(y) * width + x; }
  float at(int x, int y) const { return depth[idx(x, y)]; }
  bool is_valid(int x, int y) const { return valid[idx(x, y)] != 0; }

  void set(int x, int y, float d) {
    depth[idx(x, y)] = d;
    valid[idx(x, y)] = d > 0.f ? 1 : 0;
  }

  void invalidate(int x, int y) {
    depth[idx(x, y)] = 0.f;
    valid[idx(x, y)] = 0;
  }

  size_t valid_count() const {
    size_t n = 0;
    for (uint8_t v : valid) n += v;
    return n;
  }
};

// One calibrated observation plus optional depth attachments keyed by role.
struct View {
  Image image;
  Intrinsics intrinsics;
  Pose pose;
  std::map<DepthRole, DepthMap> depths;

  const DepthMap* depth(DepthRole role) const {
    auto it = depths.find(role);
    return it == depths.end() ? nullptr : &it->second;
  }

  void attach(DepthMap d) {
    require(d.width == intrinsics.width && d.height == intrinsics.height,
            "View: depth attachment dimensions must match intrinsics");
    depths[d.role] = std::move(d);
  }
};

// ---------------------------------------------------------------------------
// Projection primitives
// ---------------------------------------------------------------------------

inline Eigen::Vector2d project(const Eigen::Vector3d& point_cam, const Intrinsics& k) {
  if (point_cam.z() <= 0.0) throw NonPositiveDepth("project: z <= 0");
  const double inv_z = 1.0 / point_cam.z();
  return {k.fx * point_cam.x() * inv_z + k.cx, k.fy * point_cam.y() * inv_z + k.cy};
}

inline Eigen::Vector3d backproject(const Eigen::Vector2d& pixel, double d, const Intrinsics& k) {
  if (d <= 0.0) throw NonPositiveDepth("backproject: d <= 0");
  return {d * (pixel.x() - k.cx) / k.fx, d * (pixel.y() - k.cy) / k.fy, d};
}

inline Eigen::Vector3d transform_point(const Pose& p, const Eigen::Vector3d& point) {
  return p.rotation * point + p.translation;
}

// The rigid transform taking src-camera coordinates into tgt-camera
// coordinates, i.e. P_tgt^-1 * P_src. Bitwise-equal poses short-circuit to
// the exact identity so self-warps reproduce inputs without rounding.
inline Pose relative_transform(const Pose& p_src, const Pose& p_tgt) {
  if (p_src.bitwise_equal(p_tgt)) return Pose::identity();
  Pose out;
  out.rotation = p_tgt.rotation.transpose() * p_src.rotation;
  out.translation = p_tgt.rotation.transpose() * (p_src.translation - p_tgt.translation);
  return out;
}

// 4-neighbor bilinear interpolation; uv must lie in [0,w-1]x[0,h-1].
inline std::optional<Eigen::Vector3d> bilinear_sample(const Image& img, const Eigen::Vector2d& uv) {
  const double x = uv.x(), y = uv.y();
  if (!(x >= 0.0 && x <= img.width - 1 && y >= 0.0 && y <= img.height - 1)) return std::nullopt;
  const int x0 = std::min(static_cast<int>(std::floor(x)), img.width - 2 >= 0 ? img.width - 2 : 0);
  const int y0 = std::min(static_cast<int>(std::floor(y)), img.height - 2 >= 0 ? img.height - 2 : 0);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const Eigen::Vector3d c00 = img.pixel(x0, y0);
  const Eigen::Vector3d c10 = img.pixel(x1, y0);
  const Eigen::Vector3d c01 = img.pixel(x0, y1);
  const Eigen::Vector3d c11 = img.pixel(x1, y1);
  return ((1.0 - fx) * (1.0 - fy)) * c00 + (fx * (1.0 - fy)) * c10 + ((1.0 - fx) * fy) * c01 +
         (fx * fy) * c11;
}

// Pose interpolation: spherical for rotation, linear for translation.
inline Pose pose_interp(const Pose& a, const Pose& b, double t) {
  const Eigen::Quaterniond qa(a.rotation);
  const Eigen::Quaterniond qb(b.rotation);
  Pose out;
  out.rotation = qa.slerp(t, qb).normalized().toRotationMatrix();
  out.translation = (1.0 - t) * a.translation + t * b.translation;
  return out;
}

// Camera-to-world pose at eye looking toward target. The camera's down axis
// (+y) is aligned with world +y, which the fixtures treat as pointing down.
inline Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                    const Eigen::Vector3d& y_hint = Eigen::Vector3d(0, 1, 0)) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = y_hint.cross(z);
  require(x.norm() > 1e-9, "look_at: view direction parallel to y_hint");
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Pose p;
  p.rotation.col(0) = x;
  p.rotation.col(1) = y;
  p.rotation.col(2) = z;
  p.translation = eye;
  return p;
}

}  // namespace mvpgs
