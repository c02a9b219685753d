// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include "mvpgs/common.hpp"

namespace mvpgs {

// Real spherical harmonics up to degree 3, in the band ordering used by
// point-based radiance fields. Colors are stored as per-channel coefficient
// vectors; the DC term carries most of the signal and higher bands add view
// dependence. Evaluation adds 0.5 and clamps at zero.

inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr double kShC2[5] = {1.0925484305920792, -1.0925484305920792,
                                    0.31539156525252005, -1.0925484305920792,
                                    0.5462742152960396};
inline constexpr double kShC3[7] = {-0.5900435899266435, 2.890611442640554,
                                    -0.4570457994644658, 0.3731763325901154,
                                    -0.4570457994644658, 1.445305721320277,
                                    -0.5900435899266435};

inline constexpr int kShMaxDegree = 3;
inline constexpr int kShMaxCoeffs = 16;

inline constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

// Basis values for a unit direction; fills coeff_count(degree) entries.
inline void sh_basis(int degree, const Eigen::Vector3d& d, double* b) {
  const double x = d.x(), y = d.y(), z = d.z();
  b[0] = kShC0;
  if (degree < 1) return;
  b[1] = -kShC1 * y;
  b[2] = kShC1 * z;
  b[3] = -kShC1 * x;
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  const double xy = x * y, yz = y * z, xz = x * z;
  b[4] = kShC2[0] * xy;
  b[5] = kShC2[1] * yz;
  b[6] = kShC2[2] * (2.0 * zz - xx - yy);
  b[7] = kShC2[3] * xz;
  b[8] = kShC2[4] * (xx - yy);
  if (degree < 3) return;
  b[9] = kShC3[0] * y * (3.0 * xx - yy);
  b[10] = kShC3[1] * xy * z;
  b[11] = kShC3[2] * y * (4.0 * zz - xx - yy);
  b[12] = kShC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
  b[13] = kShC3[4] * x * (4.0 * zz - xx - yy);
  b[14] = kShC3[5] * z * (xx - yy);
  b[15] = kShC3[6] * x * (xx - yy - zz);
}

// Partial derivatives of each basis value w.r.t. the unit direction.
// grad[k] = (db_k/dx, db_k/dy, db_k/dz).
inline void sh_basis_grad(int degree, const Eigen::Vector3d& d, Eigen::Vector3d* grad) {
  const double x = d.x(), y = d.y(), z = d.z();
  grad[0].setZero();
  if (degree < 1) return;
  grad[1] = {0.0, -kShC1, 0.0};
  grad[2] = {0.0, 0.0, kShC1};
  grad[3] = {-kShC1, 0.0, 0.0};
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  grad[4] = {kShC2[0] * y, kShC2[0] * x, 0.0};
  grad[5] = {0.0, kShC2[1] * z, kShC2[1] * y};
  grad[6] = {-2.0 * kShC2[2] * x, -2.0 * kShC2[2] * y, 4.0 * kShC2[2] * z};
  grad[7] = {kShC2[3] * z, 0.0, kShC2[3] * x};
  grad[8] = {2.0 * kShC2[4] * x, -2.0 * kShC2[4] * y, 0.0};
  if (degree < 3) return;
  grad[9] = {kShC3[0] * 6.0 * x * y, kShC3[0] * (3.0 * xx - 3.0 * yy), 0.0};
  grad[10] = {kShC3[1] * y * z, kShC3[1] * x * z, kShC3[1] * x * y};
  grad[11] = {-2.0 * kShC3[2] * x * y, kShC3[2] * (4.0 * zz - xx - 3.0 * yy),
              8.0 * kShC3[2] * y * z};
  grad[12] = {-6.0 * kShC3[3] * x * z, -6.0 * kShC3[3] * y * z,
              kShC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)};
  grad[13] = {kShC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kShC3[4] * x * y,
              8.0 * kShC3[4] * x * z};
  grad[14] = {2.0 * kShC3[5] * x * z, -2.0 * kShC3[5] * y * z, kShC3[5] * (xx - yy)};
  grad[15] = {kShC3[6] * (3.0 * xx - yy - zz), -2.0 * kShC3[6] * x * y, -2.0 * kShC3[6] * x * z};
}

// sh: row-major [coeff_count][3]. dir need not be normalized. Returns
// max(0, dot(basis, sh_c) + 0.5) per channel; clamped[c] records where the
// clamp engaged so the backward pass can gate gradients.
inline Eigen::Vector3d eval_sh(int degree, const double* sh, const Eigen::Vector3d& dir,
                               bool clamped[3]) {
  const Eigen::Vector3d d = dir.normalized();
  double b[kShMaxCoeffs];
  sh_basis(degree, d, b);
  const int n = sh_coeff_count(degree);
  Eigen::Vector3d rgb(0.5, 0.5, 0.5);
  for (int k = 0; k < n; ++k)
    for (int c = 0; c < 3; ++c) rgb[c] += b[k] * sh[k * 3 + c];
  for (int c = 0; c < 3; ++c) {
    clamped[c] = rgb[c] < 0.0;
    if (clamped[c]) rgb[c] = 0.0;
  }
  return rgb;
}

// Accumulates dL/dsh (row-major [coeff_count][3]) and returns dL/ddir for the
// unnormalized direction. Channels clamped in the forward pass contribute no
// gradient.
inline Eigen::Vector3d eval_sh_backward(int degree, const double* sh, const Eigen::Vector3d& dir,
                                        const bool clamped[3], const Eigen::Vector3d& dL_drgb,
                                        double* dL_dsh) {
  const double len = dir.norm();
  const Eigen::Vector3d d = dir / len;
  double b[kShMaxCoeffs];
  Eigen::Vector3d bg[kShMaxCoeffs];
  sh_basis(degree, d, b);
  sh_basis_grad(degree, d, bg);
  const int n = sh_coeff_count(degree);
  Eigen::Vector3d g = dL_drgb;
  for (int c = 0; c < 3; ++c)
    if (clamped[c]) g[c] = 0.0;
  Eigen::Vector3d dL_dunit = Eigen::Vector3d::Zero();
  for (int k = 0; k < n; ++k) {
    const double coeff_grad = g[0] * sh[k * 3 + 0] + g[1] * sh[k * 3 + 1] + g[2] * sh[k * 3 + 2];
    dL_dunit += coeff_grad * bg[k];
    for (int c = 0; c < 3; ++c) dL_dsh[k * 3 + c] += b[k] * g[c];
  }
  // Through normalization: d = v/|v|, J = (I - d d^T)/|v|.
  return (dL_dunit - d * d.dot(dL_dunit)) / len;
}

// Inverse of the DC mapping: coefficient that evaluates to the given color.
inline double rgb_to_sh_dc(double color) { return (color - 0.5) / kShC0; }
inline double sh_dc_to_rgb(double coeff) { return coeff * kShC0 + 0.5; }

}  // namespace mvpgs
