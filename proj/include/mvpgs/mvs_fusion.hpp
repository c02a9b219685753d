// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "mvpgs/common.hpp"
#include "mvpgs/gaussians.hpp"
#include "mvpgs/geometry.hpp"

namespace mvpgs {

// Geometric consistency filtering of per-view depth maps, fusion of the
// survivors into a colored point cloud, and Gaussian initialization from it.

struct ConsistencyConfig {
  double pixel_thresh = 1.0;
  double rel_depth_thresh = 0.01;
  int min_consistent_views = 2;
  double downsample_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    require(pixel_thresh > 0.0, "ConsistencyConfig: pixel_thresh <= 0");
    require(rel_depth_thresh > 0.0, "ConsistencyConfig: rel_depth_thresh <= 0");
    require(min_consistent_views >= 1, "ConsistencyConfig: min_consistent_views < 1");
    require(downsample_rate > 0.0 && downsample_rate <= 1.0,
            "ConsistencyConfig: downsample_rate outside (0,1]");
  }

  // With N total views a pixel can agree with at most N-1 others; callers at
  // the pipeline boundary clamp so 2-view scenes remain usable.
  ConsistencyConfig clamped(std::size_t n_views) const {
    ConsistencyConfig c = *this;
    if (n_views >= 2)
      c.min_consistent_views = std::min<int>(c.min_consistent_views,
                                             static_cast<int>(n_views) - 1);
    return c;
  }
};

struct PointCloud {
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> colors;  // [0,1]

  std::size_t size() const { return positions.size(); }
};

// ------------------------------- reproject ----------------------------------

enum class ReprojectStatus { Ok, OutOfFrustum, Occluded };

struct ReprojectResult {
  ReprojectStatus status = ReprojectStatus::OutOfFrustum;
  Eigen::Vector2d p_reproj{0, 0};
  double d_reproj = 0.0;
};

namespace detail {

// Bilinear inverse-depth at a fractional pixel. 1/d is affine in pixel
// coordinates on a planar patch, so this read is exact on slanted planes;
// returns 0 beside holes and image borders where the 2x2 stencil is
// incomplete.
inline double sample_inv_depth(const DepthMap& d, double px, double py) {
  const double fx = std::floor(px), fy = std::floor(py);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  if (x0 < 0 || y0 < 0 || x0 + 1 >= d.width || y0 + 1 >= d.height) return 0.0;
  if (!d.is_valid(x0, y0) || !d.is_valid(x0 + 1, y0) || !d.is_valid(x0, y0 + 1) ||
      !d.is_valid(x0 + 1, y0 + 1))
    return 0.0;
  const double ax = px - fx, ay = py - fy;
  const double i00 = 1.0 / d.at(x0, y0), i10 = 1.0 / d.at(x0 + 1, y0);
  const double i01 = 1.0 / d.at(x0, y0 + 1), i11 = 1.0 / d.at(x0 + 1, y0 + 1);
  const double top = i00 * (1.0 - ax) + i10 * ax;
  const double bot = i01 * (1.0 - ax) + i11 * ax;
  const double inv = top * (1.0 - ay) + bot * ay;
  return 1.0 / inv;
}

}  // namespace detail

// Round trip of a reference pixel through a source view: project with the ref
// depth, read the source depth at the fractional landing point (bilinear in
// inverse depth, nearest pixel beside holes), backproject the landing
// position with that depth, project back into ref.
inline ReprojectResult reproject(const View& ref, const DepthMap& ref_depth, const View& src,
                                 const DepthMap& src_depth, int x, int y) {
  require(ref_depth.is_valid(x, y), "reproject: pixel invalid in ref depth");
  ReprojectResult out;
  const Pose ref_to_src = relative_transform(ref.pose, src.pose);
  const Eigen::Vector3d x_ref =
      backproject({static_cast<double>(x), static_cast<double>(y)}, ref_depth.at(x, y),
                  ref.intrinsics);
  const Eigen::Vector3d x_src = transform_point(ref_to_src, x_ref);
  if (x_src.z() <= 0.0) return out;
  const Eigen::Vector2d p_src = project(x_src, src.intrinsics);
  const int sx = static_cast<int>(std::lround(p_src.x()));
  const int sy = static_cast<int>(std::lround(p_src.y()));
  if (sx < 0 || sx >= src.intrinsics.width || sy < 0 || sy >= src.intrinsics.height) return out;
  if (!src_depth.is_valid(sx, sy)) {
    out.status = ReprojectStatus::Occluded;
    return out;
  }
  // Backproject the fractional landing point with the depth read there; the
  // interpolated read makes the round trip exact on locally planar depth.
  double d_read = detail::sample_inv_depth(src_depth, p_src.x(), p_src.y());
  if (d_read <= 0.0) d_read = src_depth.at(sx, sy);
  const Eigen::Vector3d y_src = backproject(p_src, d_read, src.intrinsics);
  const Pose src_to_ref = relative_transform(src.pose, ref.pose);
  const Eigen::Vector3d y_ref = transform_point(src_to_ref, y_src);
  if (y_ref.z() <= 0.0) return out;
  out.p_reproj = project(y_ref, ref.intrinsics);
  out.d_reproj = y_ref.z();
  out.status = ReprojectStatus::Ok;
  return out;
}

// --------------------------- consistency masks ------------------------------

// mask[i][p] true iff pixel p of view i round-trips within both thresholds
// against at least min_consistent_views other views. Views carry their MVS
// depth maps in depths (index-aligned).
inline std::vector<std::vector<std::uint8_t>> consistency_masks(
    const std::vector<View>& views, const std::vector<DepthMap>& depths,
    const ConsistencyConfig& cfg) {
  cfg.validate();
  require(views.size() == depths.size(), "consistency_masks: views/depths count mismatch");
  if (views.size() < static_cast<std::size_t>(cfg.min_consistent_views) + 1)
    throw TooFewViews("consistency_masks: need at least min_consistent_views+1 views");

  std::vector<std::vector<std::uint8_t>> masks(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const DepthMap& di = depths[i];
    require(di.width == views[i].intrinsics.width && di.height == views[i].intrinsics.height,
            "consistency_masks: depth/view shape mismatch");
    masks[i].assign(di.depth.size(), 0);
    for (int y = 0; y < di.height; ++y) {
      for (int x = 0; x < di.width; ++x) {
        if (!di.is_valid(x, y)) continue;
        const double d1 = di.at(x, y);
        int agree = 0;
        for (std::size_t j = 0; j < views.size() && agree < cfg.min_consistent_views; ++j) {
          if (j == i) continue;
          const ReprojectResult r = reproject(views[i], di, views[j], depths[j], x, y);
          if (r.status != ReprojectStatus::Ok) continue;
          const double px_err = (r.p_reproj - Eigen::Vector2d(x, y)).norm();
          const double d_err = std::abs(r.d_reproj - d1) / d1;
          if (px_err < cfg.pixel_thresh && d_err < cfg.rel_depth_thresh) ++agree;
        }
        if (agree >= cfg.min_consistent_views) masks[i][di.idx(x, y)] = 1;
      }
    }
  }
  return masks;
}

// -------------------------------- fusion ------------------------------------

// Backprojects every masked pixel (view-major, row-major) with its image
// color, then keeps a seeded uniform sample of round(rate * survivors).
inline PointCloud fuse_point_cloud(const std::vector<View>& views,
                                   const std::vector<DepthMap>& depths,
                                   const std::vector<std::vector<std::uint8_t>>& masks,
                                   const ConsistencyConfig& cfg) {
  cfg.validate();
  require(views.size() == depths.size() && views.size() == masks.size(),
          "fuse_point_cloud: input count mismatch");
  PointCloud all;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const DepthMap& d = depths[i];
    const View& v = views[i];
    require(masks[i].size() == d.depth.size(), "fuse_point_cloud: mask shape mismatch");
    for (int y = 0; y < d.height; ++y) {
      for (int x = 0; x < d.width; ++x) {
        if (!masks[i][d.idx(x, y)] || !d.is_valid(x, y)) continue;
        const Eigen::Vector3d xw = transform_point(
            v.pose, backproject({static_cast<double>(x), static_cast<double>(y)}, d.at(x, y),
                                v.intrinsics));
        all.positions.push_back(xw);
        all.colors.push_back(v.image.pixel(x, y));
      }
    }
  }
  if (all.positions.empty()) throw EmptyCloud("fuse_point_cloud: no pixel survived masking");

  const std::size_t keep = static_cast<std::size_t>(
      std::llround(cfg.downsample_rate * static_cast<double>(all.positions.size())));
  if (keep >= all.positions.size()) return all;
  if (keep == 0) throw EmptyCloud("fuse_point_cloud: downsample kept zero points");
  Rng rng(cfg.seed);
  const std::vector<std::size_t> chosen =
      rng.sample_without_replacement(all.positions.size(), keep);
  PointCloud out;
  out.positions.reserve(keep);
  out.colors.reserve(keep);
  for (std::size_t c : chosen) {
    out.positions.push_back(all.positions[c]);
    out.colors.push_back(all.colors[c]);
  }
  return out;
}

// --------------------------- gaussian initializer ---------------------------

// Mean distance to the 3 nearest neighbors (fewer when the cloud is small),
// brute force; clouds here are a few thousand points at most.
inline std::vector<double> mean_knn_distance(const std::vector<Eigen::Vector3d>& pts, int k = 3) {
  const std::size_t n = pts.size();
  std::vector<double> out(n, 0.0);
  std::vector<double> d2;
  for (std::size_t i = 0; i < n; ++i) {
    d2.clear();
    d2.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d2.push_back((pts[i] - pts[j]).squaredNorm());
    const std::size_t kk = std::min<std::size_t>(k, d2.size());
    if (kk == 0) {
      out[i] = 0.0;
      continue;
    }
    std::partial_sort(d2.begin(), d2.begin() + kk, d2.end());
    double sum = 0.0;
    for (std::size_t m = 0; m < kk; ++m) sum += std::sqrt(d2[m]);
    out[i] = sum / static_cast<double>(kk);
  }
  return out;
}

inline GaussianSet init_gaussians(const PointCloud& cloud, int sh_degree) {
  if (cloud.positions.empty()) throw EmptyCloud("init_gaussians: empty cloud");
  require(sh_degree >= 0 && sh_degree <= kShMaxDegree, "init_gaussians: bad sh_degree");
  GaussianSet g;
  g.sh_degree = sh_degree;
  g.resize(cloud.size());
  const std::vector<double> knn = mean_knn_distance(cloud.positions);
  const double opacity_logit = inverse_sigmoid(0.1);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    g.set_position(i, cloud.positions[i]);
    const double s = std::log(std::max(knn[i], 1e-7));
    g.set_scale_log(i, {s, s, s});
    g.set_quat(i, {1.0, 0.0, 0.0, 0.0});
    g.opacities_raw[i] = opacity_logit;
    double* sh = g.sh_ptr(i);
    for (int c = 0; c < 3; ++c) sh[c] = rgb_to_sh_dc(cloud.colors[i][c]);
  }
  return g;
}

// --------------------------------- PLY io -----------------------------------
// Binary little-endian, x/y/z f32 + red/green/blue u8.

inline void write_ply(const std::string& path, const PointCloud& cloud) {
  std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex " +
                       std::to_string(cloud.size()) +
                       "\nproperty float x\nproperty float y\nproperty float z\n"
                       "property uchar red\nproperty uchar green\nproperty uchar blue\n"
                       "end_header\n";
  std::vector<std::uint8_t> buf(header.begin(), header.end());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < 3; ++a) detail::put_f32_le(buf, static_cast<float>(cloud.positions[i][a]));
    for (int c = 0; c < 3; ++c) {
      double v = cloud.colors[i][c];
      v = std::max(0.0, std::min(1.0, v));
      buf.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  detail::write_file(path, buf.data(), buf.size());
}

inline PointCloud read_ply(const std::string& path) {
  const auto buf = detail::read_file(path);
  const std::string text(buf.begin(), buf.end());
  const std::size_t hdr_end = text.find("end_header\n");
  if (hdr_end == std::string::npos) throw IoError("PLY without end_header: " + path);
  if (text.rfind("ply\nformat binary_little_endian 1.0\n", 0) != 0)
    throw IoError("unsupported PLY flavor: " + path);
  const std::size_t ev = text.find("element vertex ");
  if (ev == std::string::npos || ev > hdr_end) throw IoError("PLY missing vertex count: " + path);
  const std::size_t n = std::strtoull(text.c_str() + ev + 15, nullptr, 10);
  const std::size_t payload = hdr_end + std::strlen("end_header\n");
  if (buf.size() - payload != n * 15) throw IoError("PLY payload size mismatch: " + path);
  detail::ByteReader r(buf);
  r.need(payload);
  r.p += payload;
  PointCloud cloud;
  cloud.positions.reserve(n);
  cloud.colors.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a) p[a] = static_cast<double>(r.f32());
    Eigen::Vector3d c;
    for (int a = 0; a < 3; ++a) {
      r.need(1);
      c[a] = *r.p / 255.0;
      ++r.p;
    }
    cloud.positions.push_back(p);
    cloud.colors.push_back(c);
  }
  return cloud;
}

}  // namespace mvpgs
