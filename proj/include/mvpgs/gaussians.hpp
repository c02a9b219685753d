// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "mvpgs/common.hpp"
#include "mvpgs/sh.hpp"

namespace mvpgs {

// Gaussian scene parameters, structure-of-arrays, f64. Raw storage is the
// optimization domain: log scales, unnormalized quaternions (w,x,y,z),
// pre-sigmoid opacities. Activations map raw values to the rendering domain.
struct GaussianSet {
  int sh_degree = kShMaxDegree;       // degree stored per gaussian
  std::vector<double> positions;      // N*3, world
  std::vector<double> scales_log;     // N*3
  std::vector<double> rotations;      // N*4, (w,x,y,z) unnormalized
  std::vector<double> opacities_raw;  // N
  std::vector<double> sh;             // N*coeffs()*3, row-major [coeff][channel]

  std::size_t size() const { return opacities_raw.size(); }
  int coeffs() const { return sh_coeff_count(sh_degree); }

  void resize(std::size_t n) {
    positions.resize(n * 3);
    scales_log.resize(n * 3);
    rotations.resize(n * 4);
    opacities_raw.resize(n);
    sh.resize(n * static_cast<std::size_t>(coeffs()) * 3);
  }

  Eigen::Vector3d position(std::size_t i) const {
    return {positions[i * 3], positions[i * 3 + 1], positions[i * 3 + 2]};
  }
  Eigen::Vector3d scale(std::size_t i) const {
    return {std::exp(scales_log[i * 3]), std::exp(scales_log[i * 3 + 1]),
            std::exp(scales_log[i * 3 + 2])};
  }
  Eigen::Vector3d scale_log(std::size_t i) const {
    return {scales_log[i * 3], scales_log[i * 3 + 1], scales_log[i * 3 + 2]};
  }
  Eigen::Vector4d quat(std::size_t i) const {
    return {rotations[i * 4], rotations[i * 4 + 1], rotations[i * 4 + 2], rotations[i * 4 + 3]};
  }
  double opacity(std::size_t i) const { return sigmoid(opacities_raw[i]); }
  const double* sh_ptr(std::size_t i) const { return sh.data() + i * coeffs() * 3; }
  double* sh_ptr(std::size_t i) { return sh.data() + i * coeffs() * 3; }

  void set_position(std::size_t i, const Eigen::Vector3d& p) {
    positions[i * 3] = p.x();
    positions[i * 3 + 1] = p.y();
    positions[i * 3 + 2] = p.z();
  }
  void set_scale_log(std::size_t i, const Eigen::Vector3d& s) {
    scales_log[i * 3] = s.x();
    scales_log[i * 3 + 1] = s.y();
    scales_log[i * 3 + 2] = s.z();
  }
  void set_quat(std::size_t i, const Eigen::Vector4d& q) {
    rotations[i * 4] = q[0];
    rotations[i * 4 + 1] = q[1];
    rotations[i * 4 + 2] = q[2];
    rotations[i * 4 + 3] = q[3];
  }

  void validate() const {
    const std::size_t n = size();
    if (positions.size() != n * 3 || scales_log.size() != n * 3 || rotations.size() != n * 4 ||
        sh.size() != n * static_cast<std::size_t>(coeffs()) * 3)
      throw CountMismatch("GaussianSet: inconsistent array lengths");
    require(sh_degree >= 0 && sh_degree <= kShMaxDegree, "GaussianSet: bad sh_degree");
    for (double v : positions)
      if (!std::isfinite(v)) throw NumericalAbort("GaussianSet: non-finite position");
    for (double v : scales_log)
      if (!std::isfinite(v)) throw NumericalAbort("GaussianSet: non-finite scale");
    for (double v : rotations)
      if (!std::isfinite(v)) throw NumericalAbort("GaussianSet: non-finite rotation");
    for (double v : opacities_raw)
      if (!std::isfinite(v)) throw NumericalAbort("GaussianSet: non-finite opacity");
    for (double v : sh)
      if (!std::isfinite(v)) throw NumericalAbort("GaussianSet: non-finite sh");
    for (std::size_t i = 0; i < n; ++i)
      require(quat(i).norm() > 1e-12, "GaussianSet: zero quaternion");
  }
};

// Rotation matrix from an unnormalized quaternion.
inline Eigen::Matrix3d quat_to_rot(const Eigen::Vector4d& q_raw) {
  const Eigen::Vector4d q = q_raw / q_raw.norm();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Matrix3d r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

// dL/dq_raw given dL/dR, chaining through quaternion normalization.
inline Eigen::Vector4d quat_to_rot_backward(const Eigen::Vector4d& q_raw,
                                            const Eigen::Matrix3d& dL_dR) {
  const double len = q_raw.norm();
  const Eigen::Vector4d q = q_raw / len;
  const double w = q[0], x = q[1], y = q[2], z = q[3];

  Eigen::Matrix3d dR_dw, dR_dx, dR_dy, dR_dz;
  dR_dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  dR_dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  dR_dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  dR_dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;

  Eigen::Vector4d dL_dq(dL_dR.cwiseProduct(dR_dw).sum(), dL_dR.cwiseProduct(dR_dx).sum(),
                        dL_dR.cwiseProduct(dR_dy).sum(), dL_dR.cwiseProduct(dR_dz).sum());
  // Through normalization: (I - q q^T)/len.
  return (dL_dq - q * q.dot(dL_dq)) / len;
}

// World covariance from raw parameters: Sigma = R diag(s^2) R^T.
inline Eigen::Matrix3d covariance_3d(const Eigen::Vector3d& scale_log,
                                     const Eigen::Vector4d& q_raw) {
  const Eigen::Matrix3d r = quat_to_rot(q_raw);
  const Eigen::Vector3d s = scale_log.array().exp();
  const Eigen::Matrix3d m = r * s.asDiagonal();
  return m * m.transpose();
}

// dL/dscale_log and dL/dq_raw from a (possibly asymmetric) dL/dSigma.
inline void covariance_3d_backward(const Eigen::Vector3d& scale_log, const Eigen::Vector4d& q_raw,
                                   const Eigen::Matrix3d& dL_dSigma, Eigen::Vector3d* dL_dscale_log,
                                   Eigen::Vector4d* dL_dq_raw) {
  const Eigen::Matrix3d r = quat_to_rot(q_raw);
  const Eigen::Vector3d s = scale_log.array().exp();
  const Eigen::Matrix3d m = r * s.asDiagonal();
  // Sigma = M M^T, so dL/dM = (dL/dSigma + dL/dSigma^T) M.
  const Eigen::Matrix3d dL_dM = (dL_dSigma + dL_dSigma.transpose()) * m;
  Eigen::Vector3d dL_ds;
  for (int j = 0; j < 3; ++j) dL_ds[j] = dL_dM.col(j).dot(r.col(j));
  *dL_dscale_log = dL_ds.cwiseProduct(s);
  const Eigen::Matrix3d dL_dR = dL_dM * s.asDiagonal();
  *dL_dq_raw = quat_to_rot_backward(q_raw, dL_dR);
}

// Parameter gradients, same layout as GaussianSet. screen_grad holds the
// per-gaussian L2 norm of the accumulated image-plane position gradient; the
// densifier thresholds on it.
struct GaussianGrads {
  std::vector<double> positions;
  std::vector<double> scales_log;
  std::vector<double> rotations;
  std::vector<double> opacities_raw;
  std::vector<double> sh;
  std::vector<double> screen_grad;

  void resize_zero(const GaussianSet& g) {
    const std::size_t n = g.size();
    positions.assign(n * 3, 0.0);
    scales_log.assign(n * 3, 0.0);
    rotations.assign(n * 4, 0.0);
    opacities_raw.assign(n, 0.0);
    sh.assign(n * static_cast<std::size_t>(g.coeffs()) * 3, 0.0);
    screen_grad.assign(n, 0.0);
  }
};

// ------------------------------ checkpoint ---------------------------------
// "MVPG" | version u32 | count u64 | sh_degree u32 | f32 arrays: positions,
// scales_log, rotations, opacities_raw, sh. Little-endian throughout.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const GaussianSet& g) {
  g.validate();
  std::vector<std::uint8_t> buf;
  const std::size_t n = g.size();
  buf.reserve(20 + (n * 3 + n * 3 + n * 4 + n + g.sh.size()) * 4);
  buf.insert(buf.end(), {'M', 'V', 'P', 'G'});
  detail::put_u32_le(buf, kCheckpointVersion);
  detail::put_u64_le(buf, static_cast<std::uint64_t>(n));
  detail::put_u32_le(buf, static_cast<std::uint32_t>(g.sh_degree));
  auto put_array = [&buf](const std::vector<double>& v) {
    for (double x : v) detail::put_f32_le(buf, static_cast<float>(x));
  };
  put_array(g.positions);
  put_array(g.scales_log);
  put_array(g.rotations);
  put_array(g.opacities_raw);
  put_array(g.sh);
  detail::write_file(path, buf.data(), buf.size());
}

inline GaussianSet load_checkpoint(const std::string& path) {
  const auto buf = detail::read_file(path);
  detail::ByteReader r(buf);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "MVPG", 4) != 0) throw IoError("bad checkpoint magic: " + path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version: " + path);
  const std::uint64_t n = r.u64();
  const std::uint32_t degree = r.u32();
  if (degree > kShMaxDegree) throw IoError("bad checkpoint sh_degree: " + path);
  GaussianSet g;
  g.sh_degree = static_cast<int>(degree);
  g.resize(static_cast<std::size_t>(n));
  auto get_array = [&r](std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(r.f32());
  };
  get_array(g.positions);
  get_array(g.scales_log);
  get_array(g.rotations);
  get_array(g.opacities_raw);
  get_array(g.sh);
  if (!r.exhausted()) throw IoError("trailing bytes in checkpoint: " + path);
  g.validate();
  return g;
}

}  // namespace mvpgs
