// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <array>
#include <vector>

#include "mvpgs/common.hpp"
#include "mvpgs/geometry.hpp"

namespace mvpgs {

// Forward warping of a source view into a target pose by splatting each
// source pixel (via its depth) onto its four nearest target pixels, with a
// depth weight that lets nearer surfaces dominate where several source pixels
// land on the same target pixel. A backward-warping baseline is included for
// cross-checks; it ghosts at disocclusions, which is the failure mode forward
// warping exists to avoid.

struct WarpResult {
  Image image;
  std::vector<std::uint8_t> coverage;
  std::vector<double> accum_weight;  // normalization denominator, diagnostics

  bool empty_coverage() const {
    for (std::uint8_t c : coverage)
      if (c) return false;
    return true;
  }
};

struct SplatContribution {
  int x = 0;
  int y = 0;
  double w = 0.0;
};

// Bilinear scatter stencil: the four integer neighbors of p with weights
// (1-|i-x|)(1-|j-y|). Callers drop out-of-image entries; interior weights sum
// to 1 by construction.
inline std::array<SplatContribution, 4> splat_weights(const Eigen::Vector2d& p) {
  const double fx = std::floor(p.x()), fy = std::floor(p.y());
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = p.x() - fx, ay = p.y() - fy;
  return {SplatContribution{x0, y0, (1.0 - ax) * (1.0 - ay)},
          SplatContribution{x0 + 1, y0, ax * (1.0 - ay)},
          SplatContribution{x0, y0 + 1, (1.0 - ax) * ay},
          SplatContribution{x0 + 1, y0 + 1, ax * ay}};
}

inline double depth_weight(double d, double gamma) {
  if (d <= 0.0) throw NonPositiveDepth("depth_weight: d <= 0");
  require(gamma > 0.0, "depth_weight: gamma <= 0");
  return std::exp(-gamma * std::log1p(d));
}

inline double gamma_for_max_depth(double d_max) {
  require(d_max > 0.0, "gamma_for_max_depth: d_max <= 0");
  return 50.0 / std::log1p(d_max);
}

inline constexpr double kWarpZNear = 1e-4;
inline constexpr double kWarpWeightCutoff = 1e-9;  // drops round-off stencil strays
// A pixel counts as covered once the depth-independent stencil mass reaching
// it amounts to a landing within roughly half a pixel. This keeps the 1-px
// spill ring around disocclusions (whose only contributors are foreground
// edge strays) out of the coverage mask.
inline constexpr double kWarpCoverageMass = 0.3;

// Splats every valid source pixel into the target view. Depth weights are
// normalized by their maximum before accumulation; the final color is a
// weighted mean, so a common factor cancels. Coverage is gated on plain
// stencil mass, not depth-weighted mass, so far-but-legitimate surfaces
// (depth weights go down to e^-50) stay covered. Accumulation order is
// canonical row-major.
inline WarpResult forward_warp(const Image& src, const DepthMap& d_src, const Pose& p_src,
                               const Pose& p_tgt, const Intrinsics& k) {
  require(src.width == d_src.width && src.height == d_src.height,
          "forward_warp: image/depth shape mismatch");
  require(d_src.valid_count() > 0, "forward_warp: no valid source depth");
  k.validate();

  const Pose src_to_tgt = relative_transform(p_src, p_tgt);

  struct Landed {
    double px, py;
    double d;
    int sx, sy;
  };
  std::vector<Landed> landed;
  landed.reserve(d_src.valid_count());
  double d_max = 0.0, d_min = 0.0;
  for (int y = 0; y < d_src.height; ++y) {
    for (int x = 0; x < d_src.width; ++x) {
      if (!d_src.is_valid(x, y)) continue;
      const Eigen::Vector3d xc = transform_point(
          src_to_tgt, backproject({static_cast<double>(x), static_cast<double>(y)},
                                  d_src.at(x, y), k));
      if (xc.z() <= kWarpZNear) continue;
      const Eigen::Vector2d pt = project(xc, k);
      // Keep any landing whose stencil touches the image; the tap loop drops
      // out-of-bounds corners, so there is no cliff at the border.
      if (!(pt.x() > -1.0 && pt.x() < k.width && pt.y() > -1.0 && pt.y() < k.height)) continue;
      if (landed.empty()) {
        d_max = d_min = xc.z();
      } else {
        d_max = std::max(d_max, xc.z());
        d_min = std::min(d_min, xc.z());
      }
      landed.push_back({pt.x(), pt.y(), xc.z(), x, y});
    }
  }
  if (landed.empty()) throw AllPointsCulled("forward_warp: nothing lands in the target frustum");

  const double gamma = gamma_for_max_depth(d_max);
  const double log1p_dmin = std::log1p(d_min);

  const std::size_t n = static_cast<std::size_t>(k.width) * k.height;
  std::vector<double> num(n * 3, 0.0), den(n, 0.0), mass(n, 0.0);
  for (const Landed& l : landed) {
    const double wd = std::exp(gamma * (log1p_dmin - std::log1p(l.d)));
    const auto stencil = splat_weights({l.px, l.py});
    for (const SplatContribution& s : stencil) {
      if (s.x < 0 || s.x >= k.width || s.y < 0 || s.y >= k.height) continue;
      if (s.w <= kWarpWeightCutoff) continue;
      const double w = s.w * wd;
      const std::size_t idx = static_cast<std::size_t>(s.y) * k.width + s.x;
      for (int c = 0; c < 3; ++c) num[idx * 3 + c] += w * src.at(l.sx, l.sy, c);
      den[idx] += w;
      mass[idx] += s.w;
    }
  }

  WarpResult out;
  out.image = Image(k.width, k.height);
  out.coverage.assign(n, 0);
  out.accum_weight = den;
  for (std::size_t i = 0; i < n; ++i) {
    if (mass[i] >= kWarpCoverageMass && den[i] > 0.0) {
      out.coverage[i] = 1;
      for (int c = 0; c < 3; ++c)
        out.image.data[i * 3 + c] = static_cast<float>(num[i * 3 + c] / den[i]);
    }
  }
  return out;
}

// Gather-side baseline: per target pixel with known target depth, look up the
// source color by bilinear sampling. Coverage false where the sample point
// leaves the source image.
inline WarpResult backward_warp(const Image& src, const DepthMap& d_tgt, const Pose& p_src,
                                const Pose& p_tgt, const Intrinsics& k) {
  require(src.width == k.width && src.height == k.height,
          "backward_warp: image/intrinsics shape mismatch");
  require(d_tgt.width == k.width && d_tgt.height == k.height,
          "backward_warp: depth/intrinsics shape mismatch");
  k.validate();

  const Pose tgt_to_src = relative_transform(p_tgt, p_src);
  const std::size_t n = static_cast<std::size_t>(k.width) * k.height;
  WarpResult out;
  out.image = Image(k.width, k.height);
  out.coverage.assign(n, 0);
  out.accum_weight.assign(n, 0.0);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      if (!d_tgt.is_valid(x, y)) continue;
      const Eigen::Vector3d xc = transform_point(
          tgt_to_src, backproject({static_cast<double>(x), static_cast<double>(y)},
                                  d_tgt.at(x, y), k));
      if (xc.z() <= kWarpZNear) continue;
      Eigen::Vector2d ps = project(xc, k);
      // Snap round-off strays at the image border back onto it.
      for (int a = 0; a < 2; ++a) {
        const double hi = a == 0 ? k.width - 1 : k.height - 1;
        if (ps[a] < 0.0 && ps[a] > -1e-9) ps[a] = 0.0;
        if (ps[a] > hi && ps[a] < hi + 1e-9) ps[a] = hi;
      }
      const auto c = bilinear_sample(src, ps);
      if (!c) continue;
      const std::size_t idx = static_cast<std::size_t>(y) * k.width + x;
      out.coverage[idx] = 1;
      out.accum_weight[idx] = 1.0;
      out.image.set_pixel(x, y, *c);
    }
  }
  return out;
}

}  // namespace mvpgs
