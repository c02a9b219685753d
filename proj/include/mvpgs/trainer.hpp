// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training loop: Adam over all Gaussian parameter groups, unseen-view
// sampling with cached forward warps, interleaved loss schedule (every
// unseen_interval-th iteration supervises against a warped appearance prior
// instead of a training photo), and clone/split/prune densification.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "mvpgs/common.hpp"
#include "mvpgs/gaussians.hpp"
#include "mvpgs/geometry.hpp"
#include "mvpgs/losses.hpp"
#include "mvpgs/mvs_fusion.hpp"
#include "mvpgs/renderer.hpp"
#include "mvpgs/warp.hpp"

namespace mvpgs {

struct LearningRates {
  double position_init = 1.6e-4;   // scaled by scene extent
  double position_final = 1.6e-6;  // scaled by scene extent
  double sh_dc = 2.5e-3;
  double sh_rest = 1.25e-4;
  double opacity = 5e-2;
  double scale = 5e-3;
  double rotation = 1e-3;
};

struct TrainConfig {
  int num_iters = 20000;
  int unseen_interval = 3;  // every k-th iteration trains against a warp
  int densify_from = 500;
  int densify_every = 100;
  int densify_until_prune = 5000;  // pruning stops here
  int densify_until = 10000;       // densification stops here
  bool swap_densify_schedule = false;  // swap the two bounds above
  double densify_grad_thresh = 2e-4;   // mean NDC-gradient norm
  double densify_scale_frac = 0.01;    // clone/split size boundary, of extent
  double split_scale_shrink = 1.6;
  double prune_opacity = 0.005;
  double prune_max_screen = 0.0;  // px radius; 0 disables the size prune
  int sh_degree = 3;
  int sh_promote_every = 1000;  // active SH degree grows by 1 this often
  int num_unseen_poses = 24;
  std::uint64_t seed = 0;
  bool deterministic = true;  // accepted for the CLI; reductions are always canonical
  int checkpoint_every = 0;   // 0: only the final state is kept
  LossWeights weights;
  LearningRates lr;
  RenderConfig render;

  void validate() const {
    require(num_iters >= 0, "num_iters < 0");
    require(unseen_interval >= 2, "unseen_interval < 2 leaves no photo iterations");
    require(densify_from >= 1 && densify_every >= 1, "densify schedule not positive");
    require(densify_until_prune >= 0 && densify_until >= 0, "densify bounds negative");
    require(densify_grad_thresh >= 0.0, "densify_grad_thresh < 0");
    require(densify_scale_frac > 0.0, "densify_scale_frac <= 0");
    require(split_scale_shrink > 1.0, "split_scale_shrink <= 1");
    require(prune_opacity >= 0.0 && prune_opacity < 1.0, "prune_opacity outside [0,1)");
    require(sh_degree >= 0 && sh_degree <= kShMaxDegree, "sh_degree out of range");
    require(sh_promote_every >= 1, "sh_promote_every < 1");
    require(num_unseen_poses >= 0, "num_unseen_poses < 0");
    weights.validate();
    render.validate();
  }
};

// Radius of a sphere around the centroid of training camera centers and
// fused points; the size reference for learning rates and densification.
inline double scene_extent(const std::vector<Pose>& train_poses, const PointCloud& cloud) {
  require(!train_poses.empty() || !cloud.positions.empty(), "scene_extent: no geometry");
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  double n = 0.0;
  for (const Pose& p : train_poses) {
    mean += p.center();
    n += 1.0;
  }
  for (const auto& p : cloud.positions) {
    mean += p;
    n += 1.0;
  }
  mean /= n;
  double r2 = 0.0;
  for (const Pose& p : train_poses) r2 = std::max(r2, (p.center() - mean).squaredNorm());
  for (const auto& p : cloud.positions) r2 = std::max(r2, (p - mean).squaredNorm());
  const double r = std::sqrt(r2);
  return r > 0.0 ? r : 1.0;
}

// Poses between random ordered pairs of training poses: SLERP rotation,
// linear translation, t ~ U(0.2, 0.8), then Gaussian translation jitter with
// sigma = 0.01 * extent.
inline std::vector<Pose> sample_unseen_poses(const std::vector<Pose>& train_poses, int m,
                                             double extent, Rng& rng) {
  if (train_poses.size() < 2)
    throw TooFewViews("sample_unseen_poses: need >= 2 training poses");
  std::vector<Pose> out;
  out.reserve(m);
  const double sigma = 0.01 * extent;
  for (int s = 0; s < m; ++s) {
    const std::size_t a = static_cast<std::size_t>(rng.below(train_poses.size()));
    std::size_t b = static_cast<std::size_t>(rng.below(train_poses.size() - 1));
    if (b >= a) ++b;
    const double t = 0.2 + 0.6 * rng.uniform();
    Pose p = pose_interp(train_poses[a], train_poses[b], t);
    p.translation += sigma * Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    out.push_back(p);
  }
  return out;
}

inline std::vector<Pose> sample_unseen_poses(const std::vector<Pose>& train_poses, int m,
                                             double extent, std::uint64_t seed) {
  Rng rng(seed);
  return sample_unseen_poses(train_poses, m, extent, rng);
}

// All unseen x source forward warps, precomputed once (warps depend only on
// poses and inputs, not on the optimization state).
struct WarpCache {
  int n_unseen = 0, n_src = 0;
  std::vector<WarpResult> entries;        // n_unseen * n_src, unseen-major
  std::vector<std::uint8_t> usable;       // nonzero coverage
  std::vector<std::size_t> usable_index;  // canonical list of usable entries

  const WarpResult& at(int u, int s) const {
    return entries[static_cast<std::size_t>(u) * n_src + s];
  }
  bool any_usable() const { return !usable_index.empty(); }
};

inline WarpCache build_warp_cache(const std::vector<View>& train_views,
                                  const std::vector<DepthMap>& src_depths,
                                  const std::vector<Pose>& unseen_poses) {
  require(src_depths.size() == train_views.size(), "warp cache: depth count mismatch");
  WarpCache cache;
  cache.n_unseen = static_cast<int>(unseen_poses.size());
  cache.n_src = static_cast<int>(train_views.size());
  cache.entries.resize(static_cast<std::size_t>(cache.n_unseen) * cache.n_src);
  cache.usable.assign(cache.entries.size(), 0);
  for (int u = 0; u < cache.n_unseen; ++u) {
    for (int s = 0; s < cache.n_src; ++s) {
      const std::size_t at = static_cast<std::size_t>(u) * cache.n_src + s;
      const View& src = train_views[s];
      try {
        cache.entries[at] = forward_warp(src.image, src_depths[s], src.pose,
                                         unseen_poses[u], src.intrinsics);
      } catch (const AllPointsCulled&) {
        cache.entries[at].image = Image(src.intrinsics.width, src.intrinsics.height);
        cache.entries[at].coverage.assign(
            static_cast<std::size_t>(src.intrinsics.width) * src.intrinsics.height, 0);
        continue;
      }
      if (!cache.entries[at].empty_coverage()) {
        cache.usable[at] = 1;
        cache.usable_index.push_back(at);
      }
    }
  }
  return cache;
}

// ------------------------------- optimizer ---------------------------------

struct AdamArray {
  std::vector<double> m, v;
  void init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
};

struct OptimizerState {
  AdamArray positions, scales_log, rotations, opacities, sh;

  void init(const GaussianSet& g) {
    positions.init(g.size() * 3);
    scales_log.init(g.size() * 3);
    rotations.init(g.size() * 4);
    opacities.init(g.size());
    sh.init(g.sh.size());
  }
};

namespace detail {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-15;

}  // namespace detail

// One Adam update of a parameter array. `step` is the global 1-based step
// count used for bias correction.
inline void adam_update(std::vector<double>& p, const std::vector<double>& g, AdamArray& st,
                        double lr, long step) {
  if (p.size() != g.size() || p.size() != st.m.size())
    throw ShapeMismatch("adam_update: array shapes differ");
  const double b1 = detail::kAdamBeta1, b2 = detail::kAdamBeta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1.0 - b1) * g[i];
    st.v[i] = b2 * st.v[i] + (1.0 - b2) * g[i] * g[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + detail::kAdamEps);
  }
}

inline double position_lr(const LearningRates& lr, double extent, long iter, long num_iters) {
  const double t = num_iters > 0 ? static_cast<double>(iter) / num_iters : 1.0;
  const double ratio = lr.position_final / lr.position_init;
  return extent * lr.position_init * std::pow(ratio, t);
}

// Adam over every parameter group; the SH carries two rates (DC vs higher
// bands). Quaternions are renormalized afterwards.
inline void adam_step(GaussianSet& g, const GaussianGrads& grads, OptimizerState& state,
                      const LearningRates& lr, double extent, long iter, long num_iters) {
  adam_update(g.positions, grads.positions, state.positions,
              position_lr(lr, extent, iter, num_iters), iter);
  adam_update(g.scales_log, grads.scales_log, state.scales_log, lr.scale, iter);
  adam_update(g.rotations, grads.rotations, state.rotations, lr.rotation, iter);
  adam_update(g.opacities_raw, grads.opacities_raw, state.opacities, lr.opacity, iter);

  // SH: DC coefficients at lr.sh_dc, the rest at lr.sh_rest.
  {
    if (g.sh.size() != grads.sh.size() || g.sh.size() != state.sh.m.size())
      throw ShapeMismatch("adam_step: sh shapes differ");
    const double b1 = detail::kAdamBeta1, b2 = detail::kAdamBeta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(iter));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(iter));
    const std::size_t row = static_cast<std::size_t>(g.coeffs()) * 3;
    for (std::size_t i = 0; i < g.sh.size(); ++i) {
      const double rate = (i % row) < 3 ? lr.sh_dc : lr.sh_rest;
      state.sh.m[i] = b1 * state.sh.m[i] + (1.0 - b1) * grads.sh[i];
      state.sh.v[i] = b2 * state.sh.v[i] + (1.0 - b2) * grads.sh[i] * grads.sh[i];
      g.sh[i] -= rate * (state.sh.m[i] / bc1) / (std::sqrt(state.sh.v[i] / bc2) + detail::kAdamEps);
    }
  }

  for (std::size_t i = 0; i < g.size(); ++i) {
    Eigen::Vector4d q = g.quat(i);
    const double n = q.norm();
    require(n > 0.0, "adam_step: zero quaternion");
    g.set_quat(i, q / n);
  }
}

// ------------------------- densification bookkeeping -----------------------

struct DensifyStats {
  std::vector<double> screen_accum;  // summed NDC gradient norms
  std::vector<double> obs_count;     // renders in which the splat projected
  std::vector<double> pos_grad;      // summed 3D position gradients
  std::vector<double> max_radius;    // max projected pixel radius

  void reset(std::size_t n) {
    screen_accum.assign(n, 0.0);
    obs_count.assign(n, 0.0);
    pos_grad.assign(n * 3, 0.0);
    max_radius.assign(n, 0.0);
  }

  void accumulate(const GaussianGrads& grads, const RenderOutput& out) {
    for (std::size_t i = 0; i < screen_accum.size(); ++i) {
      screen_accum[i] += grads.screen_grad[i];
      obs_count[i] += out.projected[i] ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) pos_grad[i * 3 + c] += grads.positions[i * 3 + c];
    }
    for (const ProjectedGaussian& pg : out.proj) {
      const double q_max = std::max(9.0, pg.reach_q);
      const double r = std::sqrt(q_max * std::max(pg.sxx, pg.syy));
      max_radius[pg.index] = std::max(max_radius[pg.index], r);
    }
  }
};

struct DensifyResult {
  GaussianSet set;
  std::vector<std::ptrdiff_t> source_row;  // old row index, or -1 for new rows
  std::size_t cloned = 0, split = 0, pruned = 0;
};

// Clone small high-gradient splats (copy nudged against the accumulated
// position gradient), split large ones into two children sampled from the
// parent, prune transparent ones. Gradient criterion: mean accumulated
// screen-space norm over the renders that saw the splat.
inline DensifyResult densify_and_prune(const GaussianSet& g, const DensifyStats& stats,
                                       const TrainConfig& cfg, double extent, bool do_densify,
                                       bool do_prune, Rng& rng) {
  const std::size_t n = g.size();
  require(stats.screen_accum.size() == n, "densify: stats size mismatch");
  const double size_split = cfg.densify_scale_frac * extent;

  struct NewRow {
    std::ptrdiff_t source;
    Eigen::Vector3d pos, scale_log;
    Eigen::Vector4d quat;
    double opacity_raw;
    std::size_t sh_from;
  };
  std::vector<NewRow> rows;
  rows.reserve(n + 16);
  DensifyResult res;

  for (std::size_t i = 0; i < n; ++i) {
    const double mean_grad =
        stats.obs_count[i] > 0.0 ? stats.screen_accum[i] / stats.obs_count[i] : 0.0;
    const Eigen::Vector3d s = g.scale(i);
    const double max_scale = s.maxCoeff();
    const bool hot = do_densify && mean_grad > cfg.densify_grad_thresh;
    const bool split_me = hot && max_scale >= size_split;

    if (!split_me) {
      rows.push_back({static_cast<std::ptrdiff_t>(i), g.position(i),
                      Eigen::Vector3d(g.scales_log[i * 3], g.scales_log[i * 3 + 1],
                                      g.scales_log[i * 3 + 2]),
                      g.quat(i), g.opacities_raw[i], i});
    }
    if (hot && !split_me) {
      // Clone, shifted a step against the accumulated position gradient.
      Eigen::Vector3d shift = Eigen::Vector3d::Zero();
      const Eigen::Vector3d pg(stats.pos_grad[i * 3], stats.pos_grad[i * 3 + 1],
                               stats.pos_grad[i * 3 + 2]);
      if (pg.norm() > 0.0) shift = -0.01 * extent * pg.normalized();
      NewRow r = rows.back();
      r.source = -1;
      r.pos += shift;
      rows.push_back(r);
      ++res.cloned;
    } else if (split_me) {
      const Eigen::Matrix3d rot = quat_to_rot(g.quat(i));
      const Eigen::Vector3d child_scale_log =
          (s / cfg.split_scale_shrink).array().log().matrix();
      for (int c = 0; c < 2; ++c) {
        const Eigen::Vector3d sample(rng.normal(), rng.normal(), rng.normal());
        rows.push_back({-1, g.position(i) + rot * (s.cwiseProduct(sample)), child_scale_log,
                        g.quat(i), g.opacities_raw[i], i});
      }
      ++res.split;
    }
  }

  // Opacity prune applies to the final set, so the post-condition
  // min(opacity) >= prune_opacity holds unconditionally. The screen-size
  // prune uses per-row stats and therefore only applies to original rows.
  std::vector<NewRow> kept;
  kept.reserve(rows.size());
  for (const NewRow& r : rows) {
    if (do_prune) {
      if (sigmoid(r.opacity_raw) < cfg.prune_opacity) {
        ++res.pruned;
        continue;
      }
      if (cfg.prune_max_screen > 0.0 && r.source >= 0 &&
          stats.max_radius[static_cast<std::size_t>(r.source)] > cfg.prune_max_screen) {
        ++res.pruned;
        continue;
      }
    }
    kept.push_back(r);
  }
  require(!kept.empty(), "densify_and_prune: pruned everything");

  res.set.sh_degree = g.sh_degree;
  res.set.resize(kept.size());
  res.source_row.resize(kept.size());
  const std::size_t shn = static_cast<std::size_t>(g.coeffs()) * 3;
  for (std::size_t r = 0; r < kept.size(); ++r) {
    const NewRow& row = kept[r];
    res.set.set_position(r, row.pos);
    res.set.set_scale_log(r, row.scale_log);
    res.set.set_quat(r, row.quat);
    res.set.opacities_raw[r] = row.opacity_raw;
    for (std::size_t j = 0; j < shn; ++j)
      res.set.sh[r * shn + j] = g.sh[row.sh_from * shn + j];
    res.source_row[r] = row.source;
  }
  return res;
}

namespace detail {

// Row remap for optimizer moments and gradients after densify/prune:
// survivors carry their state, new rows start at zero.
inline std::vector<double> remap_rows(const std::vector<double>& src,
                                      const std::vector<std::ptrdiff_t>& source_row,
                                      std::size_t stride) {
  std::vector<double> out(source_row.size() * stride, 0.0);
  for (std::size_t r = 0; r < source_row.size(); ++r)
    if (source_row[r] >= 0)
      for (std::size_t j = 0; j < stride; ++j)
        out[r * stride + j] = src[static_cast<std::size_t>(source_row[r]) * stride + j];
  return out;
}

inline void remap_adam(AdamArray& a, const std::vector<std::ptrdiff_t>& source_row,
                       std::size_t stride) {
  a.m = remap_rows(a.m, source_row, stride);
  a.v = remap_rows(a.v, source_row, stride);
}

}  // namespace detail

inline void remap_optimizer(OptimizerState& st, GaussianGrads& grads,
                            const std::vector<std::ptrdiff_t>& source_row, int sh_coeffs) {
  detail::remap_adam(st.positions, source_row, 3);
  detail::remap_adam(st.scales_log, source_row, 3);
  detail::remap_adam(st.rotations, source_row, 4);
  detail::remap_adam(st.opacities, source_row, 1);
  detail::remap_adam(st.sh, source_row, static_cast<std::size_t>(sh_coeffs) * 3);
  grads.positions = detail::remap_rows(grads.positions, source_row, 3);
  grads.scales_log = detail::remap_rows(grads.scales_log, source_row, 3);
  grads.rotations = detail::remap_rows(grads.rotations, source_row, 4);
  grads.opacities_raw = detail::remap_rows(grads.opacities_raw, source_row, 1);
  grads.sh = detail::remap_rows(grads.sh, source_row, static_cast<std::size_t>(sh_coeffs) * 3);
  grads.screen_grad = detail::remap_rows(grads.screen_grad, source_row, 1);
}

// ------------------------------ training loop ------------------------------

struct TelemetryRow {
  long iter = 0;
  bool unseen = false;
  double l_photo = 0.0, l_cs = 0.0, l_mono = 0.0, l_fwd = 0.0, total = 0.0;
};

inline std::string telemetry_csv(const std::vector<TelemetryRow>& rows) {
  std::string out = "iter,kind,l_photo,l_cs,l_mono,l_fwd,total\n";
  char line[256];
  for (const TelemetryRow& r : rows) {
    std::snprintf(line, sizeof(line), "%ld,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.iter,
                  r.unseen ? "unseen" : "train", r.l_photo, r.l_cs, r.l_mono, r.l_fwd, r.total);
    out += line;
  }
  return out;
}

struct TrainInputs {
  std::vector<View> train_views;                 // image + Mvs (+ Mono) depths attached
  std::vector<std::vector<std::uint8_t>> masks;  // per-view consistency masks
  PointCloud cloud;                              // fused initialization cloud
};

struct TrainResult {
  GaussianSet set;
  std::vector<TelemetryRow> telemetry;
  std::vector<Pose> unseen_poses;
  double extent = 0.0;
  bool fwd_supervision = true;  // false: warp cache was unusable, L_fwd skipped
  std::size_t final_count = 0;
};

using CheckpointHook = std::function<void(long iter, const GaussianSet&)>;

inline TrainResult train(const TrainInputs& in, const TrainConfig& cfg,
                         const CheckpointHook& on_checkpoint = {}) {
  cfg.validate();
  const std::size_t n_views = in.train_views.size();
  require(n_views >= 2, "train: need >= 2 training views");
  require(in.masks.size() == n_views, "train: mask count mismatch");
  for (const View& v : in.train_views) {
    require(v.depth(DepthRole::Mvs) != nullptr, "train: view missing MVS depth");
    require(v.depth(DepthRole::Mono) != nullptr, "train: view missing mono depth");
    require(v.image.width == v.intrinsics.width && v.image.height == v.intrinsics.height,
            "train: image/intrinsics mismatch");
  }
  if (in.cloud.positions.empty()) throw EmptyCloud("train: empty fused cloud");

  TrainResult res;
  std::vector<Pose> train_poses;
  for (const View& v : in.train_views) train_poses.push_back(v.pose);
  res.extent = scene_extent(train_poses, in.cloud);

  Rng rng(cfg.seed);
  res.unseen_poses = sample_unseen_poses(train_poses, cfg.num_unseen_poses, res.extent, rng);

  // Warp sources use the consistency-filtered MVS depths.
  std::vector<DepthMap> filtered(n_views);
  for (std::size_t v = 0; v < n_views; ++v) {
    filtered[v] = *in.train_views[v].depth(DepthRole::Mvs);
    require(in.masks[v].size() == filtered[v].valid.size(), "train: mask size mismatch");
    for (std::size_t i = 0; i < in.masks[v].size(); ++i)
      if (!in.masks[v][i]) {
        filtered[v].depth[i] = 0.f;
        filtered[v].valid[i] = 0;
      }
  }
  const WarpCache cache = build_warp_cache(in.train_views, filtered, res.unseen_poses);
  res.fwd_supervision = cache.any_usable();
  // num_unseen_poses == 0 is the documented switch for ablating L_fwd, so
  // only warn when supervision was requested but no warp survived.
  if (!res.fwd_supervision && cfg.num_unseen_poses > 0)
    std::fprintf(stderr,
                 "train: warning: no usable forward warps; L_fwd supervision disabled\n");

  res.set = init_gaussians(in.cloud, cfg.sh_degree);
  OptimizerState state;
  state.init(res.set);
  DensifyStats stats;
  stats.reset(res.set.size());

  std::vector<std::vector<double>> gt_planes(n_views);
  for (std::size_t v = 0; v < n_views; ++v)
    gt_planes[v] = plane_from_image(in.train_views[v].image);

  const int densify_stop =
      cfg.swap_densify_schedule ? cfg.densify_until_prune : cfg.densify_until;
  const int prune_stop =
      cfg.swap_densify_schedule ? cfg.densify_until : cfg.densify_until_prune;

  for (long iter = 1; iter <= cfg.num_iters; ++iter) {
    RenderConfig rcfg = cfg.render;
    rcfg.active_sh_degree = std::min<int>(cfg.sh_degree, iter / cfg.sh_promote_every);

    const bool unseen_iter = (iter % cfg.unseen_interval == 0) && cache.any_usable();
    TelemetryRow row;
    row.iter = iter;
    row.unseen = unseen_iter;

    View view;
    const std::vector<double>* gt_plane = nullptr;
    const View* loss_view = nullptr;
    std::size_t cache_at = 0;
    std::size_t train_v = 0;
    if (unseen_iter) {
      cache_at = cache.usable_index[rng.below(cache.usable_index.size())];
      const std::size_t n_src = static_cast<std::size_t>(cache.n_src);
      view.intrinsics = in.train_views[cache_at % n_src].intrinsics;
      view.pose = res.unseen_poses[cache_at / n_src];
    } else {
      train_v = static_cast<std::size_t>(rng.below(n_views));
      view = in.train_views[train_v];
      gt_plane = &gt_planes[train_v];
      loss_view = &in.train_views[train_v];
    }

    const RenderOutput out = render(res.set, view, rcfg);
    const std::size_t n_px = static_cast<std::size_t>(out.width) * out.height;
    std::vector<double> g_color(n_px * 3, 0.0);
    std::vector<double> g_depth(n_px, 0.0);
    LossParts parts;

    if (unseen_iter) {
      const FwdLossResult f = fwd_loss(out.color_plane, cache.entries[cache_at], out.width,
                                       out.height, cfg.weights, &g_color);
      parts.fwd = f.value;
    } else {
      parts.photo = photometric_loss(out.color_plane, *gt_plane, out.width, out.height,
                                     cfg.weights, &g_color);
      std::vector<double> g_cs(n_px, 0.0), g_mono(n_px, 0.0);
      const CsLossResult cs = cs_loss(out.depth_plane, *loss_view->depth(DepthRole::Mvs),
                                      in.masks[train_v], &g_cs);
      parts.cs = cs.value;
      parts.mono = mono_rank_loss(out.depth_plane, *loss_view->depth(DepthRole::Mono),
                                  cfg.weights.rank_batch, rng, cfg.weights.rank_margin,
                                  &g_mono);
      for (std::size_t i = 0; i < n_px; ++i)
        g_depth[i] = cfg.weights.beta1 * g_cs[i] + cfg.weights.beta2 * g_mono[i];
    }
    row.l_photo = parts.photo;
    row.l_cs = parts.cs;
    row.l_mono = parts.mono;
    row.l_fwd = parts.fwd;
    row.total = total_loss(parts, cfg.weights, unseen_iter);
    res.telemetry.push_back(row);
    if (!std::isfinite(row.total))
      throw NumericalAbort("train: non-finite loss at iteration " + std::to_string(iter));

    GaussianGrads grads;
    render_backward(res.set, view, rcfg, out, g_color, g_depth, &grads);
    stats.accumulate(grads, out);

    const int last_densify = std::max(densify_stop, prune_stop);
    if (iter >= cfg.densify_from && iter < last_densify && iter % cfg.densify_every == 0) {
      const bool do_densify = iter < densify_stop;
      const bool do_prune = iter < prune_stop;
      if (do_densify || do_prune) {
        DensifyResult d =
            densify_and_prune(res.set, stats, cfg, res.extent, do_densify, do_prune, rng);
        res.set = std::move(d.set);
        remap_optimizer(state, grads, d.source_row, res.set.coeffs());
        stats.reset(res.set.size());
      }
    }

    adam_step(res.set, grads, state, cfg.lr, res.extent, iter, cfg.num_iters);

    if (on_checkpoint && cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0)
      on_checkpoint(iter, res.set);
  }

  res.final_count = res.set.size();
  return res;
}

}  // namespace mvpgs
