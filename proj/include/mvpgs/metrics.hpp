// SPDX-License-Identifier: Apache-2.0
#pragma once

// Image quality metrics for held-out evaluation.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mvpgs/common.hpp"
#include "mvpgs/geometry.hpp"
#include "mvpgs/losses.hpp"

namespace mvpgs {

// -10 log10(MSE) with channels pooled; identical inputs give +infinity,
// serialized downstream as the string sentinel "inf".
inline double psnr(const Image& a, const Image& b,
                   const std::vector<std::uint8_t>& mask = {}) {
  require(a.same_shape(b), "psnr: image shape mismatch");
  const std::size_t n_px = static_cast<std::size_t>(a.width) * a.height;
  require(mask.empty() || mask.size() == n_px, "psnr: mask size mismatch");
  double sum = 0.0, count = 0.0;
  for (std::size_t i = 0; i < n_px; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    for (int c = 0; c < 3; ++c) {
      const double d =
          static_cast<double>(a.data[i * 3 + c]) - static_cast<double>(b.data[i * 3 + c]);
      sum += d * d;
      count += 1.0;
    }
  }
  require(count > 0.0, "psnr: empty mask");
  const double mse = sum / count;
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

struct ViewMetrics {
  int index = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::vector<ViewMetrics> views;
  double mean_psnr = 0.0;  // +inf if any view is exact
  double mean_ssim = 0.0;
};

// Index-aligned render/GT pairs -> per-view and mean PSNR/SSIM.
inline EvalReport evaluate(const std::vector<Image>& renders, const std::vector<Image>& gts,
                           const std::vector<int>& indices = {}) {
  if (renders.size() != gts.size())
    throw CountMismatch("evaluate: " + std::to_string(renders.size()) + " renders vs " +
                        std::to_string(gts.size()) + " ground-truth images");
  require(!renders.empty(), "evaluate: no image pairs");
  require(indices.empty() || indices.size() == renders.size(),
          "evaluate: index list size mismatch");
  EvalReport report;
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (std::size_t i = 0; i < renders.size(); ++i) {
    ViewMetrics m;
    m.index = indices.empty() ? static_cast<int>(i) : indices[i];
    m.psnr = psnr(renders[i], gts[i]);
    m.ssim = ssim(renders[i], gts[i]).mean;
    psnr_sum += m.psnr;
    ssim_sum += m.ssim;
    report.views.push_back(m);
  }
  report.mean_psnr = psnr_sum / static_cast<double>(renders.size());
  report.mean_ssim = ssim_sum / static_cast<double>(renders.size());
  return report;
}

}  // namespace mvpgs
