// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mvpgs/common.hpp"
#include "mvpgs/geometry.hpp"

namespace mvpgs {

// Procedural test scenes with a closed-form raytracer. Everything here is an
// oracle: ground-truth images, depths, co-visibility and corruption records
// that the pipeline's own outputs are checked against. Fixtures are
// bit-reproducible from (preset, seed, width, height).

// ------------------------------- textures ----------------------------------
// Two smooth variants. Bandlimited detail matters: forward warping resamples
// the source bilinearly, so texture above the pixel Nyquist rate would put a
// floor on achievable warp PSNR that says nothing about warp correctness.
// The sine checker has an 8 px period at the rigs' nominal viewing distance.

struct Palette {
  int kind = 0;  // 0 sine checker, 1 value noise
  Eigen::Vector3d base{0.5, 0.5, 0.5};
  Eigen::Vector3d amp{0.25, 0.25, 0.25};
  double freq = 1.5;  // cycles per scene unit
  double phase = 0.0;
  std::uint64_t salt = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline double lattice_hash01(std::int64_t i, std::int64_t j, std::uint64_t salt) {
  const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(i) * 0x8da6b343u ^
                                     static_cast<std::uint64_t>(j) * 0xd8163841u ^ salt);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double value_noise(double x, double y, std::uint64_t salt) {
  const double fx = std::floor(x), fy = std::floor(y);
  const std::int64_t ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3.0 - 2.0 * tx);
  ty = ty * ty * (3.0 - 2.0 * ty);
  const double v00 = lattice_hash01(ix, iy, salt);
  const double v10 = lattice_hash01(ix + 1, iy, salt);
  const double v01 = lattice_hash01(ix, iy + 1, salt);
  const double v11 = lattice_hash01(ix + 1, iy + 1, salt);
  return (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v10 + (1 - tx) * ty * v01 + tx * ty * v11;
}

}  // namespace detail

// s, t in scene units along the surface.
inline Eigen::Vector3d sample_texture(const Palette& pal, double s, double t) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  Eigen::Vector3d c;
  if (pal.kind == 0) {
    const double v = std::sin(two_pi * pal.freq * s + pal.phase) *
                     std::sin(two_pi * pal.freq * t + pal.phase);
    c = pal.base + pal.amp * v;
  } else {
    for (int ch = 0; ch < 3; ++ch) {
      const double n =
          detail::value_noise(pal.freq * 0.9 * s, pal.freq * 0.9 * t, pal.salt + 977 * ch);
      c[ch] = pal.base[ch] + 0.7 * pal.amp[ch] * (2.0 * n - 1.0);
    }
  }
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

// ------------------------------ primitives ---------------------------------

struct Quad {
  Eigen::Vector3d origin;  // corner
  Eigen::Vector3d edge_u;
  Eigen::Vector3d edge_v;
  Palette pal;
};

struct Ball {
  Eigen::Vector3d center;
  double radius = 1.0;
  Palette pal;
};

struct SceneGeometry {
  std::vector<Quad> quads;
  std::vector<Ball> balls;
  Eigen::Vector3d light_dir{-0.35, -0.45, -0.82};  // toward the light, unit after build
  double ambient = 0.4;
};

struct SurfaceHit {
  bool hit = false;
  double t = 0.0;  // ray parameter; equals camera z-depth for z-normalized rays
  Eigen::Vector3d point{0, 0, 0};
  Eigen::Vector3d normal{0, 0, 1};
  Eigen::Vector3d albedo{0, 0, 0};
};

// Nearest intersection along origin + t*dir, t > t_min.
inline SurfaceHit trace_nearest(const SceneGeometry& g, const Eigen::Vector3d& origin,
                                const Eigen::Vector3d& dir, double t_min = 1e-9) {
  SurfaceHit best;
  for (const Quad& q : g.quads) {
    const Eigen::Vector3d n = q.edge_u.cross(q.edge_v);
    const double denom = dir.dot(n);
    if (std::abs(denom) < 1e-14) continue;
    const double t = (q.origin - origin).dot(n) / denom;
    if (t <= t_min || (best.hit && t >= best.t)) continue;
    const Eigen::Vector3d h = origin + t * dir - q.origin;
    const double su = h.dot(q.edge_u) / q.edge_u.squaredNorm();
    const double sv = h.dot(q.edge_v) / q.edge_v.squaredNorm();
    if (su < 0.0 || su > 1.0 || sv < 0.0 || sv > 1.0) continue;
    best.hit = true;
    best.t = t;
    best.point = origin + t * dir;
    best.normal = n.normalized();
    best.albedo = sample_texture(q.pal, su * q.edge_u.norm(), sv * q.edge_v.norm());
  }
  for (const Ball& b : g.balls) {
    const Eigen::Vector3d oc = origin - b.center;
    const double a = dir.squaredNorm();
    const double half_b = oc.dot(dir);
    const double c = oc.squaredNorm() - b.radius * b.radius;
    const double disc = half_b * half_b - a * c;
    if (disc < 0.0) continue;
    const double sq = std::sqrt(disc);
    double t = (-half_b - sq) / a;
    if (t <= t_min) t = (-half_b + sq) / a;
    if (t <= t_min || (best.hit && t >= best.t)) continue;
    const Eigen::Vector3d p = origin + t * dir;
    const Eigen::Vector3d n = (p - b.center) / b.radius;
    const double az = std::atan2(n.z(), n.x());
    const double pol = std::acos(std::max(-1.0, std::min(1.0, n.y())));
    best.hit = true;
    best.t = t;
    best.point = p;
    best.normal = n;
    best.albedo = sample_texture(b.pal, az * b.radius, pol * b.radius);
  }
  return best;
}

inline Eigen::Vector3d shade(const SceneGeometry& g, const SurfaceHit& h) {
  const double diffuse = std::abs(h.normal.dot(g.light_dir));
  return (h.albedo * (g.ambient + (1.0 - g.ambient) * diffuse)).cwiseMax(0.0).cwiseMin(1.0);
}

// Reference render: per pixel the closest primitive, Lambertian with constant
// ambient; z-depth stored, background pixels invalid with black color. The
// camera-space ray direction has unit z, so the ray parameter IS z-depth.
inline std::pair<Image, DepthMap> raytrace_reference(const SceneGeometry& g, const Intrinsics& k,
                                                     const Pose& pose) {
  k.validate();
  require(pose.is_valid(), "raytrace_reference: invalid pose");
  Image img(k.width, k.height);
  DepthMap dm(k.width, k.height, DepthRole::GroundTruth);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Eigen::Vector3d dir_cam((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      const Eigen::Vector3d dir_world = pose.rotation * dir_cam;
      const SurfaceHit h = trace_nearest(g, pose.center(), dir_world);
      if (h.hit) {
        img.set_pixel(x, y, shade(g, h));
        dm.set(x, y, static_cast<float>(h.t));
      }
    }
  }
  return {std::move(img), std::move(dm)};
}

// ------------------------------- fixtures ----------------------------------

struct SceneFixture {
  std::string preset;
  std::uint64_t seed = 0;
  SceneGeometry geometry;
  Intrinsics intrinsics;
  std::vector<View> train;
  std::vector<View> held_out;
  // covis[i][j]: over train view i's pixels, true where the surface point is
  // also unoccluded and in-frustum in train view j (diagonal unused).
  std::vector<std::vector<std::vector<std::uint8_t>>> covis;

  double max_depth() const {
    double d = 0.0;
    for (const View& v : train) {
      const DepthMap* gt = v.depth(DepthRole::GroundTruth);
      for (std::size_t i = 0; i < gt->depth.size(); ++i)
        if (gt->valid[i]) d = std::max(d, static_cast<double>(gt->depth[i]));
    }
    return d;
  }

  std::uint64_t hash() const {
    std::string bytes;
    auto put = [&bytes](const void* p, std::size_t n) {
      bytes.append(static_cast<const char*>(p), n);
    };
    bytes += preset;
    put(&seed, 8);
    auto put_view = [&](const View& v) {
      put(v.pose.rotation.data(), 9 * 8);
      put(v.pose.translation.data(), 3 * 8);
      put(v.image.data.data(), v.image.data.size() * 4);
      const DepthMap* gt = v.depth(DepthRole::GroundTruth);
      put(gt->depth.data(), gt->depth.size() * 4);
      put(gt->valid.data(), gt->valid.size());
    };
    for (const View& v : train) put_view(v);
    for (const View& v : held_out) put_view(v);
    for (const auto& row : covis)
      for (const auto& m : row) put(m.data(), m.size());
    return fnv1a(bytes);
  }
};

namespace detail {

inline Palette make_palette(Rng& rng, int kind) {
  Palette p;
  p.kind = kind;
  for (int c = 0; c < 3; ++c) {
    p.base[c] = rng.uniform(0.38, 0.62);
    p.amp[c] = rng.uniform(0.18, 0.30);
  }
  p.freq = rng.uniform(1.3, 2.0);
  p.phase = rng.uniform(0.0, 6.283185307179586);
  p.salt = rng.next_u64();
  return p;
}

inline Quad make_quad(const Eigen::Vector3d& center, const Eigen::Vector3d& edge_u,
                      const Eigen::Vector3d& edge_v, const Palette& pal) {
  return Quad{center - 0.5 * edge_u - 0.5 * edge_v, edge_u, edge_v, pal};
}

}  // namespace detail

inline SceneGeometry build_geometry(const std::string& preset, Rng& rng) {
  SceneGeometry g;
  g.light_dir.normalize();
  const double c25 = std::cos(25.0 * M_PI / 180.0), s25 = std::sin(25.0 * M_PI / 180.0);
  const double c22 = std::cos(22.0 * M_PI / 180.0), s22 = std::sin(22.0 * M_PI / 180.0);
  if (preset == "three_planes") {
    g.quads.push_back(detail::make_quad({0, 0, 4.2}, {9, 0, 0}, {0, 9, 0},
                                        detail::make_palette(rng, 0)));
    g.quads.push_back(detail::make_quad({-1.0, 0.15, 3.15}, 1.6 * Eigen::Vector3d(c25, 0, -s25),
                                        {0, 1.8, 0}, detail::make_palette(rng, 1)));
    g.quads.push_back(detail::make_quad({0.95, 0.40, 3.05}, {1.7, 0, 0},
                                        1.5 * Eigen::Vector3d(0, c22, -s22),
                                        detail::make_palette(rng, 0)));
  } else if (preset == "plane_and_spheres") {
    g.quads.push_back(detail::make_quad({0, 0, 4.2}, {9, 0, 0}, {0, 9, 0},
                                        detail::make_palette(rng, 1)));
    g.balls.push_back(Ball{{-0.70, 0.10, 3.00}, 0.45, detail::make_palette(rng, 0)});
    g.balls.push_back(Ball{{0.65, -0.35, 3.30}, 0.35, detail::make_palette(rng, 1)});
    g.balls.push_back(Ball{{0.05, 0.50, 2.75}, 0.28, detail::make_palette(rng, 0)});
  } else if (preset == "steep_parallax") {
    g.quads.push_back(detail::make_quad({0, 0, 4.5}, {9.5, 0, 0}, {0, 9.5, 0},
                                        detail::make_palette(rng, 0)));
    g.quads.push_back(detail::make_quad({0.15, 0, 2.2}, {0.7, 0, 0}, {0, 2.4, 0},
                                        detail::make_palette(rng, 1)));
    g.quads.push_back(detail::make_quad({-0.85, -0.5, 3.1}, 0.9 * Eigen::Vector3d(c25, 0, s25),
                                        {0, 0.8, 0}, detail::make_palette(rng, 0)));
  } else {
    throw ValidationError("unknown preset: " + preset);
  }
  return g;
}

// Arc rig shared by all presets: 5 poses on a horizontal arc looking at the
// scene center; train = {0,2,4}, held-out = {1,3}.
inline std::vector<Pose> arc_rig(int count = 5) {
  const Eigen::Vector3d target(0, 0, 3.2);
  const double radius = 3.2;
  std::vector<Pose> poses;
  for (int i = 0; i < count; ++i) {
    const double theta = (-24.0 + 48.0 * i / (count - 1)) * M_PI / 180.0;
    const Eigen::Vector3d eye =
        target + Eigen::Vector3d(radius * std::sin(theta), -0.20, -radius * std::cos(theta));
    poses.push_back(look_at(eye, target));
  }
  return poses;
}

inline SceneFixture generate_scene(const std::string& preset, std::uint64_t seed, int width = 48,
                                   int height = 48) {
  Rng rng(fnv1a(preset) ^ seed);
  SceneFixture fx;
  fx.preset = preset;
  fx.seed = seed;
  fx.geometry = build_geometry(preset, rng);
  fx.intrinsics.width = width;
  fx.intrinsics.height = height;
  fx.intrinsics.fx = fx.intrinsics.fy = 0.5 * width / std::tan(25.0 * M_PI / 180.0);
  fx.intrinsics.cx = (width - 1) / 2.0;
  fx.intrinsics.cy = (height - 1) / 2.0;

  const std::vector<Pose> poses = arc_rig();
  for (int i = 0; i < static_cast<int>(poses.size()); ++i) {
    View v;
    v.intrinsics = fx.intrinsics;
    v.pose = poses[i];
    auto [img, dm] = raytrace_reference(fx.geometry, fx.intrinsics, poses[i]);
    v.image = std::move(img);
    v.attach(std::move(dm));
    if (i % 2 == 0)
      fx.train.push_back(std::move(v));
    else
      fx.held_out.push_back(std::move(v));
  }

  // Pairwise co-visibility over train views: backproject each valid pixel and
  // trace toward the partner camera; visible iff nothing closer intercepts.
  const std::size_t nt = fx.train.size();
  fx.covis.assign(nt, std::vector<std::vector<std::uint8_t>>(nt));
  for (std::size_t i = 0; i < nt; ++i) {
    const View& vi = fx.train[i];
    const DepthMap* gt = vi.depth(DepthRole::GroundTruth);
    for (std::size_t j = 0; j < nt; ++j) {
      if (j == i) continue;
      const View& vj = fx.train[j];
      std::vector<std::uint8_t> mask(gt->depth.size(), 0);
      for (int y = 0; y < gt->height; ++y) {
        for (int x = 0; x < gt->width; ++x) {
          if (!gt->is_valid(x, y)) continue;
          const Eigen::Vector3d xw = transform_point(
              vi.pose, backproject({static_cast<double>(x), static_cast<double>(y)},
                                   gt->at(x, y), vi.intrinsics));
          const Eigen::Vector3d xc = transform_point(vj.pose.inverse(), xw);
          if (xc.z() <= 0.0) continue;
          const Eigen::Vector2d px = project(xc, vj.intrinsics);
          if (px.x() < 0 || px.x() > vj.intrinsics.width - 1 || px.y() < 0 ||
              px.y() > vj.intrinsics.height - 1)
            continue;
          const SurfaceHit h = trace_nearest(fx.geometry, vj.pose.center(), xw - vj.pose.center());
          if (!h.hit || h.t < 1.0 - 1e-4) continue;  // something closer intercepts
          mask[gt->idx(x, y)] = 1;
        }
      }
      fx.covis[i][j] = std::move(mask);
    }
  }
  return fx;
}

// ------------------------- corruption / mono synth --------------------------

struct CorruptionResult {
  DepthMap depth;
  std::vector<std::uint8_t> mask;  // which pixels were corrupted
  std::size_t count = 0;
};

// Multiplies a seeded random fraction of valid pixels by (1+magnitude) or its
// reciprocal (coin flip per pixel). The reciprocal replaces the spec'd
// (1-magnitude) branch, which would zero or negate depth at magnitude >= 1
// while the acceptance test itself calls for x2 outliers.
inline CorruptionResult corrupt_depth(const DepthMap& d, double fraction, double magnitude,
                                      std::uint64_t seed) {
  require(fraction >= 0.0 && fraction <= 1.0, "corrupt_depth: fraction outside [0,1]");
  require(magnitude >= 0.0, "corrupt_depth: negative magnitude");
  CorruptionResult out;
  out.depth = d;
  out.depth.role = DepthRole::Mvs;
  out.mask.assign(d.depth.size(), 0);
  std::vector<std::size_t> valid_idx;
  for (std::size_t i = 0; i < d.depth.size(); ++i)
    if (d.valid[i]) valid_idx.push_back(i);
  const std::size_t k =
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(valid_idx.size())));
  Rng rng(seed);
  const std::vector<std::size_t> chosen = rng.sample_without_replacement(valid_idx.size(), k);
  for (std::size_t c : chosen) {
    const std::size_t i = valid_idx[c];
    const double factor = rng.uniform() < 0.5 ? (1.0 + magnitude) : 1.0 / (1.0 + magnitude);
    out.depth.depth[i] = static_cast<float>(out.depth.depth[i] * factor);
    out.mask[i] = 1;
    ++out.count;
  }
  return out;
}

enum class MonoPreset { Identity, Affine, Power, Log };

inline MonoPreset mono_preset_from_string(const std::string& s) {
  if (s == "identity") return MonoPreset::Identity;
  if (s == "affine") return MonoPreset::Affine;
  if (s == "power") return MonoPreset::Power;
  if (s == "log") return MonoPreset::Log;
  throw ValidationError("unknown mono preset: " + s);
}

// Strictly increasing distortion of ground-truth depth; stands in for a
// monocular estimator whose output has unknown scale and shift but correct
// ordering.
inline DepthMap synth_mono_depth(const DepthMap& gt, MonoPreset preset) {
  DepthMap out = gt;
  out.role = DepthRole::Mono;
  for (std::size_t i = 0; i < out.depth.size(); ++i) {
    if (!out.valid[i]) continue;
    const double d = out.depth[i];
    double m = d;
    switch (preset) {
      case MonoPreset::Identity: m = d; break;
      case MonoPreset::Affine: m = 1.7 * d + 0.3; break;
      case MonoPreset::Power: m = std::pow(d, 0.7); break;
      case MonoPreset::Log: m = std::log1p(d); break;
    }
    out.depth[i] = static_cast<float>(m);
  }
  return out;
}

// Role-flipped copy: exact GT depths presented as the MVS input.
inline DepthMap mvs_from_gt(const DepthMap& gt) {
  DepthMap out = gt;
  out.role = DepthRole::Mvs;
  return out;
}

}  // namespace mvpgs
