// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. Each numbered criterion prints exactly one PASS/FAIL line
// with its measured runtime; the process exits nonzero if any fail. Tolerances
// are pinned here, not configurable.

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "mvpgs/pipeline.hpp"
#include "support/oracles.hpp"

using namespace mvpgs;
using mvpgs::detail::read_file;

namespace {

int g_failures = 0;

void report(int num, const char* label, bool ok, double secs) {
  std::printf("[%s] criterion %d: %s (%.2fs)\n", ok ? "PASS" : "FAIL", num, label, secs);
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

void detail(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  std::printf("       ");
  std::vprintf(fmt, ap);
  std::printf("\n");
  va_end(ap);
}

struct Scene {
  View view;
  GaussianSet g;
};

// Deterministic seed screening: walk seeds from a fixed base until `count`
// scenes clear the oracle's boundary margins. No magic per-scene seeds.
std::vector<Scene> screened_scenes(std::uint64_t base, int count, int w, int h, int n_gauss,
                                   int sh_degree, bool fd) {
  std::vector<Scene> out;
  for (std::uint64_t seed = base; out.size() < static_cast<std::size_t>(count); ++seed) {
    if (seed - base > 512) break;  // screening failed; let the caller fail loudly
    Rng rng(seed);
    Scene s;
    s.view = testutil::make_test_view(w, h, rng);
    s.g = testutil::random_gaussians(s.view, n_gauss, sh_degree, rng);
    const testutil::OracleOutput ora = testutil::oracle_render(s.g, s.view, RenderConfig{});
    if (fd ? ora.fd_safe() : ora.fp_safe()) out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- criterion 1
bool criterion_gradients(double* secs) {
  testutil::Stopwatch sw;
  std::vector<Scene> scenes = screened_scenes(5000, 20, 16, 16, 5, 2, true);
  if (scenes.size() != 20) {
    detail("screening produced %zu/20 scenes", scenes.size());
    *secs = sw.seconds();
    return false;
  }
  testutil::GradCheck chk;
  const RenderConfig cfg;
  for (Scene& s : scenes) {
    Rng lrng(900 + s.g.size());
    const testutil::PlaneLoss pl(16, 16, lrng);
    const RenderOutput out = render(s.g, s.view, cfg);
    GaussianGrads grads;
    render_backward(s.g, s.view, cfg, out, pl.wc, pl.wd, &grads);
    auto loss = [&] {
      const RenderOutput o = render(s.g, s.view, cfg);
      return pl.value(o.color_plane, o.depth_plane);
    };
    const double step = 1e-5;
    for (std::size_t i = 0; i < s.g.positions.size(); ++i)
      chk.add(grads.positions[i], testutil::central_diff(&s.g.positions[i], step, loss));
    for (std::size_t i = 0; i < s.g.scales_log.size(); ++i)
      chk.add(grads.scales_log[i], testutil::central_diff(&s.g.scales_log[i], step, loss));
    for (std::size_t i = 0; i < s.g.rotations.size(); ++i)
      chk.add(grads.rotations[i], testutil::central_diff(&s.g.rotations[i], step, loss));
    for (std::size_t i = 0; i < s.g.opacities_raw.size(); ++i)
      chk.add(grads.opacities_raw[i],
              testutil::central_diff(&s.g.opacities_raw[i], step, loss));
    for (std::size_t i = 0; i < s.g.sh.size(); i += 3)
      chk.add(grads.sh[i], testutil::central_diff(&s.g.sh[i], step, loss));
  }
  *secs = sw.seconds();
  const bool ok = chk.max_rel < 1e-3 && chk.checked > 1000 && *secs < 60.0;
  if (!ok)
    detail("max rel %.3e (analytic %.6e vs numeric %.6e), %zu checked", chk.max_rel,
           chk.worst_analytic, chk.worst_numeric, chk.checked);
  return ok;
}

// ---------------------------------------------------------------- criterion 2
bool criterion_oracle_equivalence(double* secs) {
  testutil::Stopwatch sw;
  std::vector<Scene> scenes = screened_scenes(6000, 10, 32, 32, 50, 1, false);
  if (scenes.size() != 10) {
    detail("screening produced %zu/10 scenes", scenes.size());
    *secs = sw.seconds();
    return false;
  }
  double worst_color = 0.0, worst_depth = 0.0;
  const RenderConfig cfg;
  for (const Scene& s : scenes) {
    const RenderOutput out = render(s.g, s.view, cfg);
    const testutil::OracleOutput ora = testutil::oracle_render(s.g, s.view, cfg);
    worst_color = std::max(worst_color, testutil::max_abs_diff(out.color_plane, ora.color));
    worst_depth = std::max(worst_depth, testutil::max_abs_diff(out.depth_plane, ora.depth));
  }
  *secs = sw.seconds();
  const bool ok = worst_color < 1e-6 && *secs < 30.0;
  detail("max |tile - oracle|: color %.3e, depth %.3e", worst_color, worst_depth);
  return ok;
}

// ---------------------------------------------------------------- criterion 3
bool criterion_warp(double* secs) {
  testutil::Stopwatch sw;
  const SceneFixture fx = generate_scene("three_planes", 3, 48, 48);
  bool ok = true;

  // Identity pose: bit-exact on covered pixels, coverage == validity.
  const View& v0 = fx.train[0];
  const DepthMap* d0 = v0.depth(DepthRole::GroundTruth);
  const WarpResult idw = forward_warp(v0.image, *d0, v0.pose, v0.pose, v0.intrinsics);
  for (std::size_t i = 0; i < idw.coverage.size() && ok; ++i) {
    if (idw.coverage[i] != d0->valid[i]) ok = false;
    if (!idw.coverage[i]) continue;
    for (int c = 0; c < 3; ++c)
      if (idw.image.data[i * 3 + c] != v0.image.data[i * 3 + c]) ok = false;
  }
  if (!ok) detail("identity warp is not bit-exact");

  // Each held-out pose: best single-source warp, PSNR on covered >= 30 dB,
  // coverage >= 70%.
  for (const View& held : fx.held_out) {
    WarpResult best;
    std::size_t best_cov = 0;
    for (const View& src : fx.train) {
      WarpResult w = forward_warp(src.image, *src.depth(DepthRole::GroundTruth), src.pose,
                                  held.pose, src.intrinsics);
      std::size_t cov = 0;
      for (std::uint8_t b : w.coverage) cov += b != 0;
      if (cov >= best_cov) {
        best_cov = cov;
        best = std::move(w);
      }
    }
    const double frac =
        static_cast<double>(best_cov) / static_cast<double>(best.coverage.size());
    const double db = psnr(best.image, held.image, best.coverage);
    detail("held-out coverage %.1f%%, PSNR %.2f dB", 100.0 * frac, db);
    if (frac < 0.70 || db < 30.0) ok = false;
  }
  *secs = sw.seconds();
  return ok && *secs < 5.0;
}

// ---------------------------------------------------------------- criterion 4
bool criterion_weight_algebra(double* secs) {
  testutil::Stopwatch sw;
  bool ok = true;

  Rng rng(4);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const Eigen::Vector2d p(rng.uniform(1.0, 99.0), rng.uniform(1.0, 99.0));
    const auto st = splat_weights(p);
    double sum = 0.0;
    for (const auto& s : st) {
      if (s.w < 0.0) ok = false;
      sum += s.w;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  if (worst >= 1e-12) ok = false;
  detail("weight sum error %.2e over 1e5 samples", worst);

  // Two sources land on one target pixel with depths 1 and 10; the blend must
  // match the hand-evaluated log-depth weighting with raw (1+d)^-gamma.
  const int sw_w = 16, sw_h = 5;
  Image src(sw_w, sw_h);
  DepthMap depth(sw_w, sw_h, DepthRole::GroundTruth);
  const Eigen::Vector3d near_color(0.9, 0.1, 0.2), far_color(0.1, 0.8, 0.7);
  src.set_pixel(12, 2, near_color);
  depth.set(12, 2, 1.0f);
  src.set_pixel(3, 2, far_color);
  depth.set(3, 2, 10.0f);
  Intrinsics k{10.0, 10.0, 2.0, 2.0, sw_w, sw_h};
  Pose src_pose;  // identity
  Pose tgt_pose;
  tgt_pose.translation = Eigen::Vector3d(1.0, 0.0, 0.0);  // u_t = u_s - fx/d

  const WarpResult w = forward_warp(src, depth, src_pose, tgt_pose, k);
  const std::size_t at = 2 * sw_w + 2;
  const double gamma = gamma_for_max_depth(10.0);
  const double w_near = std::pow(1.0 + 1.0, -gamma);
  const double w_far = std::pow(1.0 + 10.0, -gamma);
  const Eigen::Vector3d expect =
      (w_near * near_color + w_far * far_color) / (w_near + w_far);
  if (!w.coverage[at]) {
    ok = false;
    detail("two-contributor pixel not covered");
  } else {
    double err = 0.0;
    for (int c = 0; c < 3; ++c)
      err = std::max(err,
                     std::abs(static_cast<double>(w.image.data[at * 3 + c]) - expect[c]));
    detail("two-contributor blend error %.2e", err);
    if (err >= 1e-3) ok = false;
  }
  *secs = sw.seconds();
  return ok;
}

// ---------------------------------------------------------------- criterion 5
bool criterion_filter_fusion(double* secs) {
  testutil::Stopwatch sw;
  bool ok = true;

  const SceneFixture fx = generate_scene("three_planes", 5, 48, 48);
  std::vector<View> views = fx.train;
  std::vector<DepthMap> clean;
  for (const View& v : views) clean.push_back(mvs_from_gt(*v.depth(DepthRole::GroundTruth)));

  ConsistencyConfig ccfg;
  const auto base_masks = consistency_masks(views, clean, ccfg);

  // Corrupt 20% of view 0 at 2x.
  const CorruptionResult corr = corrupt_depth(clean[0], 0.2, 1.0, 55);
  std::vector<DepthMap> dirty = clean;
  dirty[0] = corr.depth;
  const auto masks = consistency_masks(views, dirty, ccfg);

  std::size_t corrupted = 0, excluded = 0;
  for (std::size_t i = 0; i < corr.mask.size(); ++i) {
    if (!corr.mask[i]) continue;
    ++corrupted;
    excluded += masks[0][i] ? 0 : 1;
  }
  const double excl = static_cast<double>(excluded) / static_cast<double>(corrupted);

  std::size_t clean_covis = 0, retained = 0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    for (std::size_t i = 0; i < base_masks[v].size(); ++i) {
      if (!base_masks[v][i]) continue;          // co-visible per the clean filter
      if (v == 0 && corr.mask[i]) continue;     // skip the corrupted pixels
      ++clean_covis;
      retained += masks[v][i] ? 1 : 0;
    }
  }
  const double ret = static_cast<double>(retained) / static_cast<double>(clean_covis);
  detail("corrupted excluded %.1f%%, clean co-visible retained %.1f%%", 100.0 * excl,
         100.0 * ret);
  if (excl < 0.95 || ret < 0.80) ok = false;

  ConsistencyConfig fuse_cfg;
  fuse_cfg.downsample_rate = 0.25;
  const PointCloud cloud = fuse_point_cloud(views, clean, base_masks, fuse_cfg);
  std::size_t near_surface = 0;
  for (const auto& p : cloud.positions)
    near_surface += testutil::surface_distance(fx.geometry, p) < 1e-3 ? 1 : 0;
  const double frac =
      static_cast<double>(near_surface) / static_cast<double>(cloud.positions.size());
  detail("fused points within 1e-3 of surfaces: %.2f%% of %zu", 100.0 * frac,
         cloud.positions.size());
  if (cloud.positions.size() < 100 || frac < 0.99) ok = false;

  *secs = sw.seconds();
  return ok && *secs < 10.0;
}

// ---------------------------------------------------------------- criterion 6
bool criterion_loss_identities(double* secs) {
  testutil::Stopwatch sw;
  bool ok = true;

  Rng rng(6);
  Image img(20, 18);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  if (photometric_loss(img, img, LossWeights{}) != 0.0) {
    ok = false;
    detail("L_photo(I,I) != 0");
  }
  if (ssim(img, img).mean != 1.0) {
    ok = false;
    detail("SSIM(I,I) != 1");
  }

  const SceneFixture fx = generate_scene("three_planes", 66, 24, 24);
  const DepthMap mvs = mvs_from_gt(*fx.train[0].depth(DepthRole::GroundTruth));
  std::vector<std::uint8_t> mask(mvs.depth.size(), 1);
  std::vector<double> rendered = plane_from_depth(mvs);
  if (cs_loss(rendered, mvs, mask).value != 0.0) {
    ok = false;
    detail("L_CS not zero at truth");
  }
  const double delta = 0.125;
  for (double& d : rendered) d += delta;
  const double off = cs_loss(rendered, mvs, mask).value;
  if (std::abs(off - delta) > 1e-9) {
    ok = false;
    detail("L_CS delta offset: %.9f vs %.9f", off, delta);
  }

  const DepthMap* gt = fx.train[1].depth(DepthRole::GroundTruth);
  const DepthMap mono = synth_mono_depth(*gt, MonoPreset::Affine);
  Rng drng(7);
  std::vector<double> rd(mono.depth.size());
  for (double& d : rd) d = drng.uniform(0.5, 6.0);
  for (std::uint64_t map_seed = 0; map_seed < 5 && ok; ++map_seed) {
    const auto maps = testutil::make_monotone_maps(map_seed);
    for (std::uint64_t seed = 0; seed < 5 && ok; ++seed) {
      Rng r1(seed);
      const double base = mono_rank_loss(rd, mono, 64, r1);
      for (const auto& f : maps) {
        Rng r2(seed);
        if (mono_rank_loss(rd, testutil::apply_monotone(mono, f), 64, r2) != base) {
          ok = false;
          detail("mono rank loss not invariant (map seed %llu, rng seed %llu)",
                 static_cast<unsigned long long>(map_seed),
                 static_cast<unsigned long long>(seed));
        }
      }
    }
  }
  const std::vector<double> agree = plane_from_depth(*gt);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r(seed);
    if (mono_rank_loss(agree, mono, 64, r) != 0.0) {
      ok = false;
      detail("mono rank loss nonzero despite agreeing orders");
    }
  }

  *secs = sw.seconds();
  return ok;
}

// ---------------------------------------------------------------- criterion 7
struct TrainSetup {
  TrainInputs inputs;
  SceneFixture fx;
  double init_psnr = 0.0;
};

double heldout_psnr(const GaussianSet& set, const SceneFixture& fx) {
  std::vector<Image> renders, gts;
  for (const View& held : fx.held_out) {
    const RenderOutput out = render(set, held, RenderConfig{});
    renders.push_back(out.color);
    gts.push_back(held.image);
  }
  return evaluate(renders, gts).mean_psnr;
}

bool criterion_training(double* secs) {
  testutil::Stopwatch sw;
  TrainSetup setup;
  setup.fx = generate_scene("three_planes", 0, 48, 48);
  for (const View& v : setup.fx.train) {
    View view = v;
    const DepthMap* gt = view.depth(DepthRole::GroundTruth);
    view.attach(mvs_from_gt(*gt));
    view.attach(synth_mono_depth(*gt, MonoPreset::Power));
    setup.inputs.train_views.push_back(std::move(view));
  }
  std::vector<DepthMap> depths;
  for (const View& v : setup.inputs.train_views) depths.push_back(*v.depth(DepthRole::Mvs));
  ConsistencyConfig ccfg;
  setup.inputs.masks = consistency_masks(setup.inputs.train_views, depths, ccfg);
  setup.inputs.cloud =
      fuse_point_cloud(setup.inputs.train_views, depths, setup.inputs.masks, ccfg);

  TrainConfig base;
  base.num_iters = 2000;
  base.sh_degree = 2;
  base.deterministic = true;

  setup.init_psnr = heldout_psnr(init_gaussians(setup.inputs.cloud, base.sh_degree), setup.fx);

  double full_sum = 0.0, ablation_sum = 0.0, seed0_full = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    const TrainResult full = train(setup.inputs, cfg);
    const double full_db = heldout_psnr(full.set, setup.fx);
    full_sum += full_db;
    if (seed == 0) seed0_full = full_db;

    TrainConfig ab = cfg;
    ab.num_unseen_poses = 0;  // L_fwd ablation
    const TrainResult abl = train(setup.inputs, ab);
    ablation_sum += heldout_psnr(abl.set, setup.fx);
  }
  *secs = sw.seconds();

  const double gain = seed0_full - setup.init_psnr;
  const double mean_full = full_sum / 5.0, mean_ab = ablation_sum / 5.0;
  detail("init %.2f dB, trained %.2f dB (gain %.2f); 5-seed mean full %.2f vs no-fwd %.2f",
         setup.init_psnr, seed0_full, gain, mean_full, mean_ab);
  return gain >= 3.0 && mean_full >= mean_ab && *secs < 300.0;
}

// ---------------------------------------------------------------- criterion 8
bool criterion_determinism(double* secs) {
  testutil::Stopwatch sw;
  testutil::TempDir tmp("accept8");
  const std::string scene = tmp / "scene";
  save_fixture_scene(scene, generate_scene("three_planes", 8, 32, 32));

  TrainConfig cfg;
  cfg.num_iters = 150;
  cfg.sh_degree = 1;
  cfg.sh_promote_every = 50;
  cfg.densify_from = 50;
  cfg.densify_every = 50;
  cfg.densify_until_prune = 100;
  cfg.densify_until = 120;
  cfg.num_unseen_poses = 6;
  cfg.seed = 17;
  cfg.weights.rank_batch = 64;
  ConsistencyConfig ccfg;
  ccfg.downsample_rate = 0.15;

  run_pipeline(scene, tmp / "a", cfg, ccfg);
  run_pipeline(scene, tmp / "b", cfg, ccfg);
  bool ok = true;
  for (const char* rel : {"ckpt.mvpg", "metrics.json"}) {
    const auto a = read_file(tmp / "a" + ("/" + std::string(rel)));
    const auto b = read_file(tmp / "b" + ("/" + std::string(rel)));
    if (a != b) {
      ok = false;
      detail("%s differs between identical runs", rel);
    }
  }
  *secs = sw.seconds();
  return ok;
}

// ---------------------------------------------------------------- criterion 9
bool criterion_codecs(double* secs) {
  testutil::Stopwatch sw;
  testutil::TempDir tmp;
  Rng rng(9);
  bool ok = true;

  for (int trial = 0; trial < 6 && ok; ++trial) {
    const int w = 1 + static_cast<int>(rng.below(33));
    const int h = 1 + static_cast<int>(rng.below(29));

    Image img(w, h);
    for (float& v : img.data) v = static_cast<float>(rng.below(256)) / 255.0f;
    const std::string ppm = tmp / ("t" + std::to_string(trial) + ".ppm");
    write_ppm(ppm, img);
    const auto ppm_bytes = read_file(ppm);
    write_ppm(ppm, read_image(ppm));
    if (read_file(ppm) != ppm_bytes) {
      ok = false;
      detail("ppm round trip not byte-exact");
    }

    DepthMap d(w, h, DepthRole::Mvs);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (rng.below(5)) d.set(x, y, static_cast<float>(rng.uniform(0.01, 50.0)));
    const std::string pfm = tmp / ("t" + std::to_string(trial) + ".pfm");
    write_pfm(pfm, d);
    const auto pfm_bytes = read_file(pfm);
    write_pfm(pfm, read_pfm(pfm, DepthRole::Mvs));
    if (read_file(pfm) != pfm_bytes) {
      ok = false;
      detail("pfm round trip not byte-exact");
    }

    PointCloud cloud;
    const int n = 1 + static_cast<int>(rng.below(200));
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3f p(static_cast<float>(rng.uniform(-5, 5)),
                              static_cast<float>(rng.uniform(-5, 5)),
                              static_cast<float>(rng.uniform(-5, 5)));
      cloud.positions.push_back(p.cast<double>());
      cloud.colors.push_back(Eigen::Vector3d(static_cast<double>(rng.below(256)) / 255.0,
                                             static_cast<double>(rng.below(256)) / 255.0,
                                             static_cast<double>(rng.below(256)) / 255.0));
    }
    const std::string ply = tmp / ("t" + std::to_string(trial) + ".ply");
    write_ply(ply, cloud);
    const auto ply_bytes = read_file(ply);
    write_ply(ply, read_ply(ply));
    if (read_file(ply) != ply_bytes) {
      ok = false;
      detail("ply round trip not byte-exact");
    }

    GaussianSet g;
    g.sh_degree = static_cast<int>(rng.below(4));
    g.resize(1 + rng.below(40));
    auto f32 = [&](double lo, double hi) {
      return static_cast<double>(static_cast<float>(rng.uniform(lo, hi)));
    };
    for (std::size_t i = 0; i < g.size(); ++i) {
      g.set_position(i, Eigen::Vector3d(f32(-4, 4), f32(-4, 4), f32(1, 8)));
      g.set_scale_log(i, Eigen::Vector3d(f32(-5, 0), f32(-5, 0), f32(-5, 0)));
      g.set_quat(i,
                 Eigen::Vector4d(f32(0.5, 1), f32(-0.5, 0.5), f32(-0.5, 0.5), f32(-0.5, 0.5)));
      g.opacities_raw[i] = f32(-3, 3);
    }
    for (double& v : g.sh) v = f32(-0.5, 0.5);
    const std::string ck = tmp / ("t" + std::to_string(trial) + ".mvpg");
    save_checkpoint(ck, g);
    const auto ck_bytes = read_file(ck);
    save_checkpoint(ck, load_checkpoint(ck));
    if (read_file(ck) != ck_bytes) {
      ok = false;
      detail("checkpoint round trip not byte-exact");
    }
  }
  *secs = sw.seconds();
  return ok;
}

}  // namespace

int main() {
  // Reductions are canonical for any thread count (unit-tested), so threading
  // here cannot change results, only wall time.
  ::setenv("MVPGS_THREADS", "4", 1);

  double secs = 0.0;
  bool ok;

  ok = criterion_gradients(&secs);
  report(1, "analytic gradients match finite differences (rtol 1e-3, 20 scenes)", ok, secs);

  ok = criterion_oracle_equivalence(&secs);
  report(2, "tile renderer equals brute-force compositor (1e-6, 10 scenes)", ok, secs);

  ok = criterion_warp(&secs);
  report(3, "identity warp bit-exact; held-out warps >= 30 dB at >= 70% coverage", ok, secs);

  ok = criterion_weight_algebra(&secs);
  report(4, "stencil weights sum to 1; two-contributor blend matches hand value", ok, secs);

  ok = criterion_filter_fusion(&secs);
  report(5, "filter excludes corruption, keeps co-visible; fused cloud on surfaces", ok,
         secs);

  ok = criterion_loss_identities(&secs);
  report(6, "loss identities and rank-loss monotone invariance", ok, secs);

  ok = criterion_training(&secs);
  report(7, "training gains >= 3 dB and full config beats no-fwd ablation", ok, secs);

  ok = criterion_determinism(&secs);
  report(8, "identical seeds give bit-identical checkpoints and metrics", ok, secs);

  ok = criterion_codecs(&secs);
  report(9, "codec round trips are byte-exact on fuzzed payloads", ok, secs);

  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all 9 criteria passed\n");
  return 0;
}
