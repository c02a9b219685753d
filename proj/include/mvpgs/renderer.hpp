// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tile-based differentiable splatting of 3D Gaussians into a color image and
// a depth map, with an analytic backward pass over all five parameter arrays.
//
// Forward, per pixel, front to back over depth-sorted splats:
//   alpha_i = min(cap, opacity_i * exp(-0.5 * d^T conic d))
//   C  = sum T_i alpha_i c_i,  D = sum T_i alpha_i z_i,  T_{i+1} = T_i (1 - alpha_i)
// Contributions with alpha below 1/255 are skipped; blending stops before a
// contribution that would push transmittance under t_stop. Depth is NOT
// alpha-normalized by default (normalize_depth exposes the variant).
//
// The backward pass re-walks each pixel front to back with the retained
// per-tile sorted lists, then runs suffix sums in reverse to get dL/dalpha,
// and finally chains per-Gaussian 2D gradients through the projection:
//   conic -> Sigma' -> (J, Sigma_cam) -> (R, S | mean_cam) -> raw parameters.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mvpgs/common.hpp"
#include "mvpgs/gaussians.hpp"
#include "mvpgs/geometry.hpp"
#include "mvpgs/sh.hpp"

namespace mvpgs {

struct RenderConfig {
  int tile_size = 16;
  double alpha_cap = 0.99;
  double alpha_skip = 1.0 / 255.0;
  double t_stop = 1e-4;
  double z_near = 0.01;
  double dilation = 0.3;        // added to both diagonal entries of Sigma'
  bool normalize_depth = false; // divide depth by alpha_accum where covered
  int active_sh_degree = -1;    // -1: use the set's degree

  void validate() const {
    require(tile_size >= 1, "tile_size < 1");
    require(alpha_cap > 0.0 && alpha_cap < 1.0, "alpha_cap outside (0,1)");
    require(alpha_skip > 0.0 && alpha_skip < alpha_cap, "alpha_skip outside (0,cap)");
    require(t_stop > 0.0 && t_stop < 1.0, "t_stop outside (0,1)");
    require(z_near > 0.0, "z_near <= 0");
    require(dilation >= 0.0, "negative dilation");
    require(active_sh_degree <= kShMaxDegree, "active_sh_degree too large");
  }
};

// One Gaussian after projection into a view; everything the rasterizer and
// the backward pass need per splat.
struct ProjectedGaussian {
  std::size_t index = 0;       // position in the source GaussianSet
  Eigen::Vector3d mean_cam{0, 0, 0};
  double u = 0, v = 0;         // projected mean, pixel coordinates
  double sxx = 0, sxy = 0, syy = 0;  // dilated 2D covariance
  double cxx = 0, cxy = 0, cyy = 0;  // conic, its inverse
  double opacity = 0;
  double reach_q = 0;          // quadratic-form value where alpha hits alpha_skip
  Eigen::Vector3d color{0, 0, 0};
};

struct TileGrid {
  int tile = 16;
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<int>> lists;  // per tile, indices into proj, depth-sorted
};

struct RenderOutput {
  int width = 0, height = 0;
  Image color;
  DepthMap depth;                        // role Rendered, valid where depth > 0
  std::vector<double> color_plane;       // w*h*3, f64 compositing result
  std::vector<double> depth_plane;       // w*h
  std::vector<double> alpha_accum;       // w*h, sum of T_i alpha_i
  std::size_t culled_count = 0;          // z <= z_near
  std::size_t degenerate_count = 0;      // det(Sigma') <= 0 after dilation
  std::vector<std::uint8_t> projected;   // per source gaussian

  // Retained for the backward pass.
  std::vector<ProjectedGaussian> proj;
  TileGrid grid;
};

namespace detail {

inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Eigen::Vector3d& m,
                                                       const Intrinsics& k) {
  const double z = m.z(), inv_z = 1.0 / z;
  Eigen::Matrix<double, 2, 3> j;
  j << k.fx * inv_z, 0.0, -k.fx * m.x() * inv_z * inv_z,
      0.0, k.fy * inv_z, -k.fy * m.y() * inv_z * inv_z;
  return j;
}

}  // namespace detail

// 2D projection of one camera-space covariance: Sigma' = J Sigma_cam J^T plus
// the anti-aliasing dilation on the diagonal.
struct Projection2D {
  double u = 0, v = 0, z = 0;
  double sxx = 0, sxy = 0, syy = 0;
};

inline Projection2D project_gaussian(const Eigen::Matrix3d& sigma_cam,
                                     const Eigen::Vector3d& mean_cam, const Intrinsics& k,
                                     double dilation = 0.3, double z_near = 0.01) {
  if (mean_cam.z() <= z_near) throw NonPositiveDepth("project_gaussian: z <= z_near");
  const Eigen::Matrix<double, 2, 3> j = detail::projection_jacobian(mean_cam, k);
  const Eigen::Matrix2d s2 = j * sigma_cam * j.transpose();
  const Eigen::Vector2d px = project(mean_cam, k);
  Projection2D out;
  out.u = px.x();
  out.v = px.y();
  out.z = mean_cam.z();
  out.sxx = s2(0, 0) + dilation;
  out.sxy = s2(0, 1);
  out.syy = s2(1, 1) + dilation;
  return out;
}

// Opacity contribution of a projected splat at pixel offset (dx, dy). Kept as
// the single shared definition so the tile rasterizer and the brute-force
// reference compositor agree bit for bit.
inline double splat_alpha(const ProjectedGaussian& pg, double dx, double dy) {
  const double q = pg.cxx * dx * dx + 2.0 * pg.cxy * dx * dy + pg.cyy * dy * dy;
  return pg.opacity * std::exp(-0.5 * q);
}

inline RenderOutput render(const GaussianSet& g, const View& view, const RenderConfig& cfg = {}) {
  cfg.validate();
  view.intrinsics.validate();
  if (g.size() == 0) throw EmptyCloud("render: empty gaussian set");
  g.validate();

  const Intrinsics& k = view.intrinsics;
  const int w = k.width, h = k.height;
  const Pose w2c = view.pose.inverse();
  const Eigen::Vector3d cam_center = view.pose.center();
  const int degree =
      cfg.active_sh_degree < 0 ? g.sh_degree : std::min(cfg.active_sh_degree, g.sh_degree);

  RenderOutput out;
  out.width = w;
  out.height = h;
  out.projected.assign(g.size(), 0);
  out.proj.reserve(g.size());

  for (std::size_t i = 0; i < g.size(); ++i) {
    const Eigen::Vector3d mean_cam = transform_point(w2c, g.position(i));
    if (mean_cam.z() <= cfg.z_near) {
      ++out.culled_count;
      continue;
    }
    const double opacity = g.opacity(i);
    // Fully transparent everywhere: alpha = opacity * exp(..) <= opacity.
    if (opacity < cfg.alpha_skip) continue;

    const Eigen::Matrix3d sigma3 = covariance_3d(g.scale_log(i), g.quat(i));
    const Eigen::Matrix3d sigma_cam = w2c.rotation * sigma3 * w2c.rotation.transpose();
    const Projection2D p2 = project_gaussian(sigma_cam, mean_cam, k, cfg.dilation, cfg.z_near);
    const double det = p2.sxx * p2.syy - p2.sxy * p2.sxy;
    if (det <= 0.0) {
      ++out.degenerate_count;
      continue;
    }
    ProjectedGaussian pg;
    pg.index = i;
    pg.mean_cam = mean_cam;
    pg.u = p2.u;
    pg.v = p2.v;
    pg.sxx = p2.sxx;
    pg.sxy = p2.sxy;
    pg.syy = p2.syy;
    const double inv_det = 1.0 / det;
    pg.cxx = p2.syy * inv_det;
    pg.cxy = -p2.sxy * inv_det;
    pg.cyy = p2.sxx * inv_det;
    pg.opacity = opacity;
    pg.reach_q = 2.0 * std::log(opacity / cfg.alpha_skip);
    bool clamped[3];
    pg.color = eval_sh(degree, g.sh_ptr(i), g.position(i) - cam_center, clamped);
    out.projected[i] = 1;
    out.proj.push_back(pg);
  }

  // Tile binning over the axis-aligned reach of each splat. The footprint is
  // the tight AABB of the q <= max(9, reach_q) ellipse: it covers the 3-sigma
  // ellipse and everything above the alpha skip threshold, so the contributor
  // set per pixel matches a full per-pixel sweep exactly.
  TileGrid& grid = out.grid;
  grid.tile = cfg.tile_size;
  grid.tiles_x = (w + cfg.tile_size - 1) / cfg.tile_size;
  grid.tiles_y = (h + cfg.tile_size - 1) / cfg.tile_size;
  grid.lists.assign(static_cast<std::size_t>(grid.tiles_x) * grid.tiles_y, {});
  for (std::size_t p = 0; p < out.proj.size(); ++p) {
    const ProjectedGaussian& pg = out.proj[p];
    const double q_max = std::max(9.0, pg.reach_q);
    const double rx = std::sqrt(q_max * pg.sxx);
    const double ry = std::sqrt(q_max * pg.syy);
    const int x0 = std::max(0, static_cast<int>(std::ceil(pg.u - rx)));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(pg.u + rx)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(pg.v - ry)));
    const int y1 = std::min(h - 1, static_cast<int>(std::floor(pg.v + ry)));
    if (x0 > x1 || y0 > y1) continue;
    for (int ty = y0 / cfg.tile_size; ty <= y1 / cfg.tile_size; ++ty)
      for (int tx = x0 / cfg.tile_size; tx <= x1 / cfg.tile_size; ++tx)
        grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx].push_back(
            static_cast<int>(p));
  }
  for (auto& list : grid.lists) {
    std::sort(list.begin(), list.end(), [&](int a, int b) {
      const ProjectedGaussian &ga = out.proj[a], &gb = out.proj[b];
      if (ga.mean_cam.z() != gb.mean_cam.z()) return ga.mean_cam.z() < gb.mean_cam.z();
      return ga.index < gb.index;  // canonical tie-break
    });
  }

  const std::size_t n_px = static_cast<std::size_t>(w) * h;
  out.color_plane.assign(n_px * 3, 0.0);
  out.depth_plane.assign(n_px, 0.0);
  out.alpha_accum.assign(n_px, 0.0);

  const std::size_t n_tiles = grid.lists.size();
  parallel_chunks(n_tiles, thread_cap(), [&](std::size_t t0, std::size_t t1) {
    for (std::size_t t = t0; t < t1; ++t) {
      const std::vector<int>& list = grid.lists[t];
      if (list.empty()) continue;
      const int tx = static_cast<int>(t % grid.tiles_x);
      const int ty = static_cast<int>(t / grid.tiles_x);
      const int px0 = tx * cfg.tile_size, px1 = std::min(w, px0 + cfg.tile_size);
      const int py0 = ty * cfg.tile_size, py1 = std::min(h, py0 + cfg.tile_size);
      for (int y = py0; y < py1; ++y) {
        for (int x = px0; x < px1; ++x) {
          double t_acc = 1.0;
          double c0 = 0.0, c1 = 0.0, c2 = 0.0, d_acc = 0.0, a_acc = 0.0;
          for (const int pi : list) {
            const ProjectedGaussian& pg = out.proj[pi];
            const double dx = x - pg.u, dy = y - pg.v;
            const double q = pg.cxx * dx * dx + 2.0 * pg.cxy * dx * dy + pg.cyy * dy * dy;
            // Cheap exp-free reject; the margin keeps it strictly inside the
            // exact alpha < alpha_skip region so the predicate below stays
            // authoritative.
            if (q > pg.reach_q + 2e-9) continue;
            const double alpha_full = pg.opacity * std::exp(-0.5 * q);
            if (alpha_full < cfg.alpha_skip) continue;
            const double alpha = std::min(cfg.alpha_cap, alpha_full);
            const double t_next = t_acc * (1.0 - alpha);
            if (t_next < cfg.t_stop) break;
            const double wgt = t_acc * alpha;
            c0 += wgt * pg.color.x();
            c1 += wgt * pg.color.y();
            c2 += wgt * pg.color.z();
            d_acc += wgt * pg.mean_cam.z();
            a_acc += wgt;
            t_acc = t_next;
          }
          const std::size_t px = static_cast<std::size_t>(y) * w + x;
          out.color_plane[px * 3 + 0] = c0;
          out.color_plane[px * 3 + 1] = c1;
          out.color_plane[px * 3 + 2] = c2;
          out.depth_plane[px] =
              (cfg.normalize_depth && a_acc > 1e-12) ? d_acc / a_acc : d_acc;
          out.alpha_accum[px] = a_acc;
        }
      }
    }
  });

  out.color = Image(w, h);
  out.depth = DepthMap(w, h, DepthRole::Rendered);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t px = static_cast<std::size_t>(y) * w + x;
      for (int c = 0; c < 3; ++c)
        out.color.data[px * 3 + c] = static_cast<float>(out.color_plane[px * 3 + c]);
      out.depth.set(x, y, static_cast<float>(out.depth_plane[px]));
    }
  }
  return out;
}

// Analytic gradients of a scalar loss w.r.t. every Gaussian parameter, given
// upstream gradients on the rendered color plane (w*h*3) and depth plane
// (w*h). `out` must come from render() on the same set/view/config.
// Also accumulates per-splat screen-space position gradient norms (NDC
// units: du scaled by w/2, dv by h/2) into grads->screen_grad.
inline void render_backward(const GaussianSet& g, const View& view, const RenderConfig& cfg,
                            const RenderOutput& out, const std::vector<double>& dL_dcolor,
                            const std::vector<double>& dL_ddepth, GaussianGrads* grads) {
  require(grads != nullptr, "render_backward: null grads");
  require(!cfg.normalize_depth, "render_backward: normalized depth has no backward pass");
  const Intrinsics& k = view.intrinsics;
  const int w = k.width, h = k.height;
  const std::size_t n_px = static_cast<std::size_t>(w) * h;
  require(out.width == w && out.height == h, "render_backward: view/output mismatch");
  require(dL_dcolor.size() == n_px * 3, "render_backward: color grad size mismatch");
  require(dL_ddepth.size() == n_px, "render_backward: depth grad size mismatch");
  grads->resize_zero(g);

  const Pose w2c = view.pose.inverse();
  const Eigen::Vector3d cam_center = view.pose.center();
  const int degree =
      cfg.active_sh_degree < 0 ? g.sh_degree : std::min(cfg.active_sh_degree, g.sh_degree);

  // Per-splat accumulators in screen space:
  // [du, dv, d_cxx, d_cxy, d_cyy, d_opacity, d_c0, d_c1, d_c2, d_z]
  using Acc = std::array<double, 10>;
  const TileGrid& grid = out.grid;
  std::vector<std::vector<Acc>> tile_acc(grid.lists.size());

  parallel_chunks(grid.lists.size(), thread_cap(), [&](std::size_t t0, std::size_t t1) {
    struct Contrib {
      int slot;          // position in the tile list
      double alpha;      // after cap
      double alpha_full; // before cap
      double trans;      // transmittance at entry
    };
    std::vector<Contrib> stack;
    for (std::size_t t = t0; t < t1; ++t) {
      const std::vector<int>& list = grid.lists[t];
      if (list.empty()) continue;
      std::vector<Acc>& acc = tile_acc[t];
      acc.assign(list.size(), Acc{});
      const int tx = static_cast<int>(t % grid.tiles_x);
      const int ty = static_cast<int>(t / grid.tiles_x);
      const int px0 = tx * grid.tile, px1 = std::min(w, px0 + grid.tile);
      const int py0 = ty * grid.tile, py1 = std::min(h, py0 + grid.tile);
      for (int y = py0; y < py1; ++y) {
        for (int x = px0; x < px1; ++x) {
          const std::size_t px = static_cast<std::size_t>(y) * w + x;
          const double gc0 = dL_dcolor[px * 3 + 0];
          const double gc1 = dL_dcolor[px * 3 + 1];
          const double gc2 = dL_dcolor[px * 3 + 2];
          const double gd = dL_ddepth[px];
          if (gc0 == 0.0 && gc1 == 0.0 && gc2 == 0.0 && gd == 0.0) continue;

          // Re-walk the forward pass to recover the contribution stack.
          stack.clear();
          double t_acc = 1.0;
          for (std::size_t s = 0; s < list.size(); ++s) {
            const ProjectedGaussian& pg = out.proj[list[s]];
            const double dx = x - pg.u, dy = y - pg.v;
            const double q = pg.cxx * dx * dx + 2.0 * pg.cxy * dx * dy + pg.cyy * dy * dy;
            if (q > pg.reach_q + 2e-9) continue;
            const double alpha_full = pg.opacity * std::exp(-0.5 * q);
            if (alpha_full < cfg.alpha_skip) continue;
            const double alpha = std::min(cfg.alpha_cap, alpha_full);
            const double t_next = t_acc * (1.0 - alpha);
            if (t_next < cfg.t_stop) break;
            stack.push_back({static_cast<int>(s), alpha, alpha_full, t_acc});
            t_acc = t_next;
          }

          // Reverse suffix sums: S = sum over later contributions of T a v.
          double s_c0 = 0.0, s_c1 = 0.0, s_c2 = 0.0, s_d = 0.0;
          for (std::size_t r = stack.size(); r-- > 0;) {
            const Contrib& cb = stack[r];
            const ProjectedGaussian& pg = out.proj[list[cb.slot]];
            const double wgt = cb.trans * cb.alpha;
            Acc& a = acc[cb.slot];
            a[6] += gc0 * wgt;
            a[7] += gc1 * wgt;
            a[8] += gc2 * wgt;
            a[9] += gd * wgt;

            const double inv_one_minus = 1.0 / (1.0 - cb.alpha);
            double dL_dalpha = gc0 * (cb.trans * pg.color.x() - s_c0 * inv_one_minus) +
                               gc1 * (cb.trans * pg.color.y() - s_c1 * inv_one_minus) +
                               gc2 * (cb.trans * pg.color.z() - s_c2 * inv_one_minus) +
                               gd * (cb.trans * pg.mean_cam.z() - s_d * inv_one_minus);
            s_c0 += wgt * pg.color.x();
            s_c1 += wgt * pg.color.y();
            s_c2 += wgt * pg.color.z();
            s_d += wgt * pg.mean_cam.z();

            if (cb.alpha_full > cfg.alpha_cap) continue;  // cap active: flat
            // alpha = opacity * G with G = exp(-q/2), so
            // dL/dq = dL/dalpha * opacity * (-G/2) = -0.5 * dL/dalpha * alpha.
            const double gq = -0.5 * dL_dalpha * cb.alpha_full;
            const double dx = x - pg.u, dy = y - pg.v;
            a[5] += dL_dalpha * (cb.alpha_full / pg.opacity);  // dalpha/dopacity = G
            const double dq_du = -2.0 * (pg.cxx * dx + pg.cxy * dy);
            const double dq_dv = -2.0 * (pg.cxy * dx + pg.cyy * dy);
            a[0] += gq * dq_du;
            a[1] += gq * dq_dv;
            a[2] += gq * dx * dx;
            a[3] += gq * 2.0 * dx * dy;
            a[4] += gq * dy * dy;
          }
        }
      }
    }
  });

  // Merge tile-local buffers into per-splat accumulators, canonical order.
  std::vector<Acc> splat_acc(out.proj.size(), Acc{});
  for (std::size_t t = 0; t < grid.lists.size(); ++t) {
    const std::vector<int>& list = grid.lists[t];
    const std::vector<Acc>& acc = tile_acc[t];
    if (acc.empty()) continue;
    for (std::size_t s = 0; s < list.size(); ++s) {
      Acc& dst = splat_acc[list[s]];
      for (int j = 0; j < 10; ++j) dst[j] += acc[s][j];
    }
  }

  // Chain per splat from screen space back to the raw parameters.
  parallel_chunks(out.proj.size(), thread_cap(), [&](std::size_t p0, std::size_t p1) {
    for (std::size_t p = p0; p < p1; ++p) {
      const ProjectedGaussian& pg = out.proj[p];
      const Acc& a = splat_acc[p];
      bool all_zero = true;
      for (int j = 0; j < 10 && all_zero; ++j) all_zero = a[j] == 0.0;
      const std::size_t i = pg.index;

      // Screen-space densification signal in NDC units.
      grads->screen_grad[i] += std::hypot(a[0] * (0.5 * w), a[1] * (0.5 * h));
      if (all_zero) continue;

      // conic = inverse(Sigma'): dL/dSigma' = -A (dL/dA) A.
      Eigen::Matrix2d conic;
      conic << pg.cxx, pg.cxy, pg.cxy, pg.cyy;
      Eigen::Matrix2d g_conic;
      g_conic << a[2], a[3] * 0.5, a[3] * 0.5, a[4];
      const Eigen::Matrix2d g_sigma2 = -conic * g_conic * conic;

      const Eigen::Vector3d mean_cam = pg.mean_cam;
      const double x = mean_cam.x(), y = mean_cam.y(), z = mean_cam.z();
      const double inv_z = 1.0 / z, inv_z2 = inv_z * inv_z;
      const Eigen::Matrix<double, 2, 3> j = detail::projection_jacobian(mean_cam, k);
      const Eigen::Matrix3d sigma3 = covariance_3d(g.scale_log(i), g.quat(i));
      const Eigen::Matrix3d sigma_cam = w2c.rotation * sigma3 * w2c.rotation.transpose();

      // Sigma' = J Sigma_cam J^T + dilation I.
      const Eigen::Matrix<double, 2, 3> g_j =
          (g_sigma2 + g_sigma2.transpose()) * j * sigma_cam;
      const Eigen::Matrix3d g_sigma_cam = j.transpose() * g_sigma2 * j;
      const Eigen::Matrix3d g_sigma3 =
          w2c.rotation.transpose() * g_sigma_cam * w2c.rotation;

      Eigen::Vector3d g_scale_log;
      Eigen::Vector4d g_quat;
      covariance_3d_backward(g.scale_log(i), g.quat(i), g_sigma3, &g_scale_log, &g_quat);

      // mean_cam gradient: projection of the mean plus the J(mean_cam) chain
      // plus the composited depth term.
      Eigen::Vector3d g_mc = Eigen::Vector3d::Zero();
      g_mc.x() += a[0] * k.fx * inv_z;
      g_mc.y() += a[1] * k.fy * inv_z;
      g_mc.z() += -a[0] * k.fx * x * inv_z2 - a[1] * k.fy * y * inv_z2;
      g_mc.x() += g_j(0, 2) * (-k.fx * inv_z2);
      g_mc.y() += g_j(1, 2) * (-k.fy * inv_z2);
      g_mc.z() += g_j(0, 0) * (-k.fx * inv_z2) + g_j(1, 1) * (-k.fy * inv_z2) +
                  g_j(0, 2) * (2.0 * k.fx * x * inv_z2 * inv_z) +
                  g_j(1, 2) * (2.0 * k.fy * y * inv_z2 * inv_z);
      g_mc.z() += a[9];

      Eigen::Vector3d g_pos = w2c.rotation.transpose() * g_mc;

      // Color through SH evaluation (re-derives the clamp gating).
      const Eigen::Vector3d dir = g.position(i) - cam_center;
      bool clamped[3];
      eval_sh(degree, g.sh_ptr(i), dir, clamped);
      const Eigen::Vector3d g_rgb(a[6], a[7], a[8]);
      g_pos += eval_sh_backward(degree, g.sh_ptr(i), dir, clamped, g_rgb,
                                grads->sh.data() + i * g.coeffs() * 3);

      const double sig = pg.opacity;
      grads->opacities_raw[i] += a[5] * sig * (1.0 - sig);
      for (int c = 0; c < 3; ++c) {
        grads->positions[i * 3 + c] += g_pos[c];
        grads->scales_log[i * 3 + c] += g_scale_log[c];
      }
      for (int c = 0; c < 4; ++c) grads->rotations[i * 4 + c] += g_quat[c];
    }
  });
}

}  // namespace mvpgs
