// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training losses: photometric (L1 + SSIM), forward-warp appearance loss on
// covered pixels, masked depth consistency, and a scale-free depth rank loss.
// Every loss exposes an analytic gradient w.r.t. the rendered color or depth
// plane; gradients are checked against finite differences in the test suite.
//
// Color planes are row-major f64, pixel-major with 3 channels:
// idx = (y*w + x)*3 + c. Depth planes are row-major f64, one value per pixel.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mvpgs/common.hpp"
#include "mvpgs/geometry.hpp"
#include "mvpgs/warp.hpp"

namespace mvpgs {

struct LossWeights {
  double lambda1 = 0.8;   // L1 share of the photometric loss
  double lambda2 = 0.2;   // L1 share of the forward-warp loss
  double beta1 = 0.1;     // depth-consistency weight
  double beta2 = 0.005;   // rank-loss weight
  int rank_batch = 512;   // pairs per rank-loss evaluation
  double rank_margin = 0.0;

  void validate() const {
    require(lambda1 >= 0.0 && lambda1 <= 1.0, "lambda1 outside [0,1]");
    require(lambda2 >= 0.0 && lambda2 <= 1.0, "lambda2 outside [0,1]");
    require(beta1 >= 0.0 && beta2 >= 0.0, "negative loss weight");
    require(rank_batch >= 1, "rank_batch < 1");
    require(rank_margin >= 0.0, "negative rank margin");
  }
};

inline std::vector<double> plane_from_image(const Image& im) {
  std::vector<double> p(im.data.size());
  for (size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(im.data[i]);
  return p;
}

inline Image image_from_plane(const std::vector<double>& p, int w, int h) {
  require(p.size() == static_cast<size_t>(w) * h * 3, "plane size mismatch");
  Image im(w, h);
  for (size_t i = 0; i < p.size(); ++i) im.data[i] = static_cast<float>(p[i]);
  return im;
}

inline std::vector<double> plane_from_depth(const DepthMap& d) {
  std::vector<double> p(d.depth.size(), 0.0);
  for (size_t i = 0; i < p.size(); ++i)
    if (d.valid[i]) p[i] = static_cast<double>(d.depth[i]);
  return p;
}

namespace detail {

constexpr int kSsimRadius = 5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

inline const std::array<double, 11>& ssim_window() {
  static const std::array<double, 11> k = [] {
    std::array<double, 11> w{};
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      const double t = i - kSsimRadius;
      w[i] = std::exp(-t * t / (2.0 * sigma * sigma));
      sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
  }();
  return k;
}

// Zero-padded separable Gaussian blur of one scalar plane. The kernel is
// symmetric, so this operator is its own adjoint, which the SSIM backward
// pass relies on.
inline void blur_plane(const double* in, double* out, double* scratch, int w, int h) {
  const auto& k = ssim_window();
  for (int y = 0; y < h; ++y) {
    const double* row = in + static_cast<size_t>(y) * w;
    double* dst = scratch + static_cast<size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      const int t0 = std::max(-kSsimRadius, -x);
      const int t1 = std::min(kSsimRadius, w - 1 - x);
      double acc = 0.0;
      for (int t = t0; t <= t1; ++t) acc += k[t + kSsimRadius] * row[x + t];
      dst[x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    const int t0 = std::max(-kSsimRadius, -y);
    const int t1 = std::min(kSsimRadius, h - 1 - y);
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = t0; t <= t1; ++t)
        acc += k[t + kSsimRadius] * scratch[static_cast<size_t>(y + t) * w + x];
      out[static_cast<size_t>(y) * w + x] = acc;
    }
  }
}

}  // namespace detail

struct SsimResult {
  double mean = 0.0;
  std::vector<double> map;  // per-pixel channel-averaged SSIM
  size_t selected = 0;      // window centers that entered the mean
};

// Channel-averaged SSIM between two 3-channel planes. `sel`, when nonempty,
// restricts the mean to window centers with sel != 0; the map is always
// computed everywhere. When `grad_a` is non-null it receives d(mean)/da
// (accumulated, caller zero-fills).
inline SsimResult ssim_planes(const std::vector<double>& a, const std::vector<double>& b,
                              int w, int h, const std::vector<std::uint8_t>& sel,
                              std::vector<double>* grad_a = nullptr) {
  const size_t n = static_cast<size_t>(w) * h;
  require(a.size() == n * 3 && b.size() == n * 3, "ssim plane size mismatch");
  require(sel.empty() || sel.size() == n, "ssim selection size mismatch");
  if (grad_a) require(grad_a->size() == n * 3, "ssim grad size mismatch");

  SsimResult out;
  out.map.assign(n, 0.0);
  double sel_count = 0.0;
  if (sel.empty()) {
    sel_count = static_cast<double>(n);
  } else {
    for (std::uint8_t s : sel) sel_count += s ? 1.0 : 0.0;
  }
  out.selected = static_cast<size_t>(sel_count);

  std::vector<double> pa(n), pb(n), mu_a(n), mu_b(n), m_aa(n), m_bb(n), m_ab(n);
  std::vector<double> prod(n), scratch(n);
  std::vector<double> q_mu(n), q_va(n), q_cov(n);

  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < n; ++i) {
      pa[i] = a[i * 3 + c];
      pb[i] = b[i * 3 + c];
    }
    detail::blur_plane(pa.data(), mu_a.data(), scratch.data(), w, h);
    detail::blur_plane(pb.data(), mu_b.data(), scratch.data(), w, h);
    for (size_t i = 0; i < n; ++i) prod[i] = pa[i] * pa[i];
    detail::blur_plane(prod.data(), m_aa.data(), scratch.data(), w, h);
    for (size_t i = 0; i < n; ++i) prod[i] = pb[i] * pb[i];
    detail::blur_plane(prod.data(), m_bb.data(), scratch.data(), w, h);
    for (size_t i = 0; i < n; ++i) prod[i] = pa[i] * pb[i];
    detail::blur_plane(prod.data(), m_ab.data(), scratch.data(), w, h);

    for (size_t i = 0; i < n; ++i) {
      const double va = m_aa[i] - mu_a[i] * mu_a[i];
      const double vb = m_bb[i] - mu_b[i] * mu_b[i];
      const double cov = m_ab[i] - mu_a[i] * mu_b[i];
      const double n1 = 2.0 * mu_a[i] * mu_b[i] + detail::kSsimC1;
      const double n2 = 2.0 * cov + detail::kSsimC2;
      const double d1 = mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + detail::kSsimC1;
      const double d2 = va + vb + detail::kSsimC2;
      // Direct division: identical inputs give numerator == denominator
      // bitwise, and x/x == 1.0 exactly (a reciprocal-multiply does not
      // guarantee that).
      const double s = (n1 * n2) / (d1 * d2);
      const double inv = 1.0 / (d1 * d2);
      out.map[i] += s / 3.0;
      if (grad_a) {
        // Partials of s at this pixel w.r.t. the blurred statistics.
        q_va[i] = -s / d2;                                      // ds/d(va)
        q_cov[i] = 2.0 * n1 * inv;                              // ds/d(cov)
        q_mu[i] = 2.0 * mu_b[i] * n2 * inv - 2.0 * mu_a[i] * s / d1  // direct
                  - 2.0 * mu_a[i] * q_va[i] - mu_b[i] * q_cov[i];    // via va, cov
      }
    }
    if (grad_a && sel_count > 0.0) {
      // mean = sum(sel * map) / sel_count, map += s/3. Upstream weight per
      // selected center, per channel:
      for (size_t i = 0; i < n; ++i) {
        const double g = (sel.empty() || sel[i]) ? 1.0 / (3.0 * sel_count) : 0.0;
        q_mu[i] *= g;
        q_va[i] *= g;
        q_cov[i] *= g;
      }
      // d(mean)/da = blur(q_mu) + 2a .* blur(q_va) + b .* blur(q_cov):
      // the blur is self-adjoint and a enters the statistics as
      // mu_a = blur(a), m_aa = blur(a^2), m_ab = blur(a*b).
      detail::blur_plane(q_mu.data(), prod.data(), scratch.data(), w, h);
      for (size_t i = 0; i < n; ++i) (*grad_a)[i * 3 + c] += prod[i];
      detail::blur_plane(q_va.data(), prod.data(), scratch.data(), w, h);
      for (size_t i = 0; i < n; ++i) (*grad_a)[i * 3 + c] += 2.0 * pa[i] * prod[i];
      detail::blur_plane(q_cov.data(), prod.data(), scratch.data(), w, h);
      for (size_t i = 0; i < n; ++i) (*grad_a)[i * 3 + c] += pb[i] * prod[i];
    }
  }

  // Mean of the per-pixel map over selected centers. Identical inputs give a
  // per-channel SSIM of exactly 1, and 1/3 + 1/3 + 1/3 rounds to exactly 1.0,
  // so ssim(I, I) == 1.0 bit for bit.
  double num = 0.0;
  for (size_t i = 0; i < n; ++i)
    if (sel.empty() || sel[i]) num += out.map[i];
  out.mean = sel_count > 0.0 ? num / sel_count : 1.0;
  return out;
}

inline SsimResult ssim(const Image& a, const Image& b) {
  require(a.same_shape(b), "ssim image shape mismatch");
  return ssim_planes(plane_from_image(a), plane_from_image(b), a.width, a.height, {});
}

inline SsimResult ssim(const Image& a, const Image& b, const std::vector<std::uint8_t>& mask) {
  require(a.same_shape(b), "ssim image shape mismatch");
  return ssim_planes(plane_from_image(a), plane_from_image(b), a.width, a.height, mask);
}

// Mean absolute difference over selected pixels (3 channels each). `grad_a`
// accumulates d/da.
inline double l1_planes(const std::vector<double>& a, const std::vector<double>& b,
                        int w, int h, const std::vector<std::uint8_t>& sel,
                        std::vector<double>* grad_a = nullptr) {
  const size_t n = static_cast<size_t>(w) * h;
  require(a.size() == n * 3 && b.size() == n * 3, "l1 plane size mismatch");
  require(sel.empty() || sel.size() == n, "l1 selection size mismatch");
  double count = 0.0;
  if (sel.empty()) {
    count = static_cast<double>(n);
  } else {
    for (std::uint8_t s : sel) count += s ? 1.0 : 0.0;
  }
  if (count == 0.0) return 0.0;
  const double scale = 1.0 / (3.0 * count);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (!sel.empty() && !sel[i]) continue;
    for (int c = 0; c < 3; ++c) {
      const double d = a[i * 3 + c] - b[i * 3 + c];
      sum += std::abs(d);
      if (grad_a && d != 0.0) (*grad_a)[i * 3 + c] += (d > 0.0 ? scale : -scale);
    }
  }
  return sum * scale;
}

// lambda1 * L1 + (1 - lambda1) * (1 - SSIM), full frame.
inline double photometric_loss(const std::vector<double>& rendered,
                               const std::vector<double>& gt, int w, int h,
                               const LossWeights& lw,
                               std::vector<double>* grad = nullptr) {
  std::vector<double> g_l1, g_ssim;
  if (grad) {
    require(grad->size() == rendered.size(), "photometric grad size mismatch");
    g_l1.assign(rendered.size(), 0.0);
    g_ssim.assign(rendered.size(), 0.0);
  }
  const double l1 = l1_planes(rendered, gt, w, h, {}, grad ? &g_l1 : nullptr);
  const SsimResult s = ssim_planes(rendered, gt, w, h, {}, grad ? &g_ssim : nullptr);
  if (grad)
    for (size_t i = 0; i < grad->size(); ++i)
      (*grad)[i] += lw.lambda1 * g_l1[i] - (1.0 - lw.lambda1) * g_ssim[i];
  return lw.lambda1 * l1 + (1.0 - lw.lambda1) * (1.0 - s.mean);
}

inline double photometric_loss(const Image& rendered, const Image& gt, const LossWeights& lw) {
  require(rendered.same_shape(gt), "photometric shape mismatch");
  return photometric_loss(plane_from_image(rendered), plane_from_image(gt),
                          rendered.width, rendered.height, lw);
}

// Selection of window centers whose full 11x11 window (clipped to the frame)
// lies inside the coverage mask. Out-of-frame window pixels are fine: the
// zero padding there matches the unmasked SSIM, so an all-true coverage
// reproduces the unmasked value bit for bit.
inline std::vector<std::uint8_t> erode_coverage(const std::vector<std::uint8_t>& cov,
                                                int w, int h,
                                                int radius = detail::kSsimRadius) {
  require(cov.size() == static_cast<size_t>(w) * h, "coverage size mismatch");
  std::vector<std::uint8_t> sel(cov.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool ok = true;
      for (int dy = -radius; dy <= radius && ok; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          if (!cov[static_cast<size_t>(yy) * w + xx]) {
            ok = false;
            break;
          }
        }
      }
      sel[static_cast<size_t>(y) * w + x] = ok ? 1 : 0;
    }
  }
  return sel;
}

struct FwdLossResult {
  double value = 0.0;
  bool empty_coverage = false;
};

// lambda2 * L1 + (1 - lambda2) * (1 - SSIM), both restricted to the warp's
// coverage. SSIM uses eroded centers; if erosion leaves none, the SSIM term
// contributes nothing (no evidence either way).
inline FwdLossResult fwd_loss(const std::vector<double>& rendered, const WarpResult& warped,
                              int w, int h, const LossWeights& lw,
                              std::vector<double>* grad = nullptr) {
  const size_t n = static_cast<size_t>(w) * h;
  require(warped.coverage.size() == n, "fwd_loss coverage size mismatch");
  require(rendered.size() == n * 3, "fwd_loss plane size mismatch");
  require(warped.image.width == w && warped.image.height == h, "fwd_loss shape mismatch");
  FwdLossResult out;
  if (warped.empty_coverage()) {
    out.empty_coverage = true;
    return out;
  }
  const std::vector<double> target = plane_from_image(warped.image);
  std::vector<double> g_l1, g_ssim;
  if (grad) {
    require(grad->size() == n * 3, "fwd_loss grad size mismatch");
    g_l1.assign(n * 3, 0.0);
    g_ssim.assign(n * 3, 0.0);
  }
  const double l1 = l1_planes(rendered, target, w, h, warped.coverage, grad ? &g_l1 : nullptr);
  const std::vector<std::uint8_t> sel = erode_coverage(warped.coverage, w, h);
  bool any_center = false;
  for (std::uint8_t s : sel)
    if (s) {
      any_center = true;
      break;
    }
  double ssim_mean = 1.0;
  if (any_center) {
    const SsimResult s = ssim_planes(rendered, target, w, h, sel, grad ? &g_ssim : nullptr);
    ssim_mean = s.mean;
  }
  if (grad)
    for (size_t i = 0; i < n * 3; ++i)
      (*grad)[i] += lw.lambda2 * g_l1[i] - (1.0 - lw.lambda2) * g_ssim[i];
  out.value = lw.lambda2 * l1 + (1.0 - lw.lambda2) * (1.0 - ssim_mean);
  return out;
}

struct CsLossResult {
  double value = 0.0;
  bool empty_mask = false;
};

// Mean over the mask of |D_r - D_mvs|. Mean, not sum, so the weight does not
// need retuning with resolution.
inline CsLossResult cs_loss(const std::vector<double>& rendered_depth, const DepthMap& mvs,
                            const std::vector<std::uint8_t>& mask,
                            std::vector<double>* grad = nullptr) {
  const size_t n = static_cast<size_t>(mvs.width) * mvs.height;
  require(rendered_depth.size() == n, "cs_loss depth plane size mismatch");
  require(mask.size() == n, "cs_loss mask size mismatch");
  if (grad) require(grad->size() == n, "cs_loss grad size mismatch");
  double count = 0.0;
  for (size_t i = 0; i < n; ++i)
    if (mask[i] && mvs.valid[i]) count += 1.0;
  CsLossResult out;
  if (count == 0.0) {
    out.empty_mask = true;
    return out;
  }
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (!mask[i] || !mvs.valid[i]) continue;
    const double d = rendered_depth[i] - static_cast<double>(mvs.depth[i]);
    sum += std::abs(d);
    if (grad && d != 0.0) (*grad)[i] += (d > 0.0 ? 1.0 : -1.0) / count;
  }
  out.value = sum / count;
  return out;
}

inline CsLossResult cs_loss(const DepthMap& rendered, const DepthMap& mvs,
                            const std::vector<std::uint8_t>& mask) {
  require(rendered.width == mvs.width && rendered.height == mvs.height,
          "cs_loss shape mismatch");
  return cs_loss(plane_from_depth(rendered), mvs, mask);
}

// Scale-free ordering loss: draws two disjoint index sets over pixels with
// valid mono depth and hinges on rank disagreement between rendered and mono
// depth. Mean over pairs. Invariant under any strictly increasing transform
// of the mono depths.
inline double mono_rank_loss(const std::vector<double>& rendered_depth, const DepthMap& mono,
                             int n_s, Rng& rng, double margin = 0.0,
                             std::vector<double>* grad = nullptr) {
  const size_t n = static_cast<size_t>(mono.width) * mono.height;
  require(rendered_depth.size() == n, "mono_rank_loss depth plane size mismatch");
  require(n_s >= 1, "mono_rank_loss: n_s < 1");
  if (grad) require(grad->size() == n, "mono_rank_loss grad size mismatch");
  std::vector<size_t> valid_idx;
  valid_idx.reserve(n);
  for (size_t i = 0; i < n; ++i)
    if (mono.valid[i]) valid_idx.push_back(i);
  const size_t need = 2 * static_cast<size_t>(n_s);
  if (valid_idx.size() < need)
    throw TooFewValidPixels("mono_rank_loss: need " + std::to_string(need) +
                            " valid pixels, have " + std::to_string(valid_idx.size()));
  const std::vector<size_t> pick = rng.sample_permutation(valid_idx.size(), need);
  double sum = 0.0;
  const double inv = 1.0 / static_cast<double>(n_s);
  for (int k = 0; k < n_s; ++k) {
    const size_t i1 = valid_idx[pick[k]];
    const size_t i2 = valid_idx[pick[static_cast<size_t>(n_s) + k]];
    const bool mono_lt = mono.depth[i1] < mono.depth[i2];
    const size_t lo = mono_lt ? i1 : i2;  // should render nearer
    const size_t hi = mono_lt ? i2 : i1;
    const double viol = rendered_depth[lo] - rendered_depth[hi] + margin;
    if (viol > 0.0) {
      sum += viol;
      if (grad) {
        (*grad)[lo] += inv;
        (*grad)[hi] -= inv;
      }
    }
  }
  return sum * inv;
}

inline double mono_rank_loss(const DepthMap& rendered, const DepthMap& mono, int n_s, Rng& rng,
                             double margin = 0.0) {
  require(rendered.width == mono.width && rendered.height == mono.height,
          "mono_rank_loss shape mismatch");
  DepthMap gated = mono;
  for (size_t i = 0; i < gated.valid.size(); ++i)
    if (!rendered.valid[i]) gated.valid[i] = 0;
  return mono_rank_loss(plane_from_depth(rendered), gated, n_s, rng, margin);
}

struct LossParts {
  double photo = 0.0;
  double cs = 0.0;
  double mono = 0.0;
  double fwd = 0.0;
};

inline double total_loss(const LossParts& parts, const LossWeights& lw, bool unseen) {
  if (unseen) return parts.fwd;
  return parts.photo + lw.beta1 * parts.cs + lw.beta2 * parts.mono;
}

}  // namespace mvpgs
