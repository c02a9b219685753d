// SPDX-License-Identifier: Apache-2.0
//
// mvpgs command line. Subcommands mirror the pipeline stages; every stage is
// also runnable standalone against a scene directory. Exit codes: 0 success,
// 2 validation error (bad flags or malformed inputs), 3 numerical abort.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvpgs/fixtures.hpp"
#include "mvpgs/pipeline.hpp"
#include "mvpgs/warp.hpp"

namespace {

using namespace mvpgs;

std::string sibling_path(const std::string& ckpt, const char* name) {
  std::filesystem::path p(ckpt);
  return (p.parent_path() / name).string();
}

void add_consistency_flags(CLI::App* cmd, ConsistencyConfig* cfg) {
  cmd->add_option("--pixel-thresh", cfg->pixel_thresh, "reprojection error bound, px");
  cmd->add_option("--depth-thresh", cfg->rel_depth_thresh, "relative depth error bound");
  cmd->add_option("--min-views", cfg->min_consistent_views, "agreeing views required");
  cmd->add_option("--downsample", cfg->downsample_rate, "fused-point keep rate (0,1]");
  cmd->add_option("--fuse-seed", cfg->seed, "downsample RNG seed");
}

// Reads per-view mask sidecars written by `filter`. Missing sidecar: all
// valid MVS pixels pass through.
std::vector<std::vector<std::uint8_t>> masks_or_default(const SceneData& scene) {
  std::vector<std::vector<std::uint8_t>> masks;
  for (std::size_t i = 0; i < scene.train_idx.size(); ++i) {
    const int idx = scene.train_idx[i];
    const View& v = scene.views[static_cast<std::size_t>(idx)];
    if (!scene.masks[static_cast<std::size_t>(idx)].empty()) {
      masks.push_back(scene.masks[static_cast<std::size_t>(idx)]);
      continue;
    }
    const DepthMap* d = v.depth(DepthRole::Mvs);
    require(d != nullptr,
            "view " + std::to_string(idx) + ": missing MVS depth; run `fixture` or add PFMs");
    masks.push_back(d->valid);
  }
  return masks;
}

int cmd_fixture(const std::string& preset, std::uint64_t seed, const std::string& out,
                int width, int height, double corrupt_fraction, double corrupt_magnitude,
                const std::string& mono) {
  const SceneFixture fx = generate_scene(preset, seed, width, height);
  save_fixture_scene(out, fx, corrupt_fraction, corrupt_magnitude,
                     mono_preset_from_string(mono));
  std::printf("fixture %s seed=%llu -> %s (%zu train, %zu held-out)\n", preset.c_str(),
              static_cast<unsigned long long>(seed), out.c_str(), fx.train.size(),
              fx.held_out.size());
  return 0;
}

int cmd_filter(const std::string& scene_dir, const ConsistencyConfig& ccfg) {
  const SceneData scene = load_scene(scene_dir);
  const auto masks = filter_stage(scene, ccfg, scene_dir);
  std::size_t kept = 0, total = 0;
  for (const auto& m : masks) {
    total += m.size();
    for (std::uint8_t b : m) kept += b != 0;
  }
  std::printf("filter: kept %zu / %zu pixels across %zu views\n", kept, total, masks.size());
  return 0;
}

int cmd_fuse(const std::string& scene_dir, const std::string& out,
             const ConsistencyConfig& ccfg) {
  const SceneData scene = load_scene(scene_dir);
  const PointCloud cloud = fuse_stage(scene, masks_or_default(scene), ccfg, out);
  std::printf("fuse: %zu points -> %s\n", cloud.positions.size(), out.c_str());
  return 0;
}

int cmd_warp(const std::string& scene_dir, int src, const std::string& tgt_pose,
             const std::string& out, const std::string& coverage) {
  const SceneData scene = load_scene(scene_dir);
  require(src >= 0 && static_cast<std::size_t>(src) < scene.views.size(),
          "--src view index out of range");
  const View& v = scene.views[static_cast<std::size_t>(src)];
  const DepthMap* d = v.depth(DepthRole::Mvs);
  require(d != nullptr, "view " + std::to_string(src) + ": no MVS depth to warp");
  DepthMap masked = *d;
  const auto& mask = scene.masks[static_cast<std::size_t>(src)];
  if (!mask.empty())
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (!mask[i]) masked.valid[i] = 0;

  Intrinsics tk;
  Pose tp;
  view_from_json(json_from_file(tgt_pose, "target pose"), &tk, &tp);
  const WarpResult w = forward_warp(v.image, masked, v.pose, tp, tk);
  write_ppm(out, w.image);
  if (!coverage.empty())
    write_pgm_mask(coverage, w.coverage, w.image.width, w.image.height);
  std::size_t cov = 0;
  for (std::uint8_t b : w.coverage) cov += b != 0;
  std::printf("warp: view %d -> %s, coverage %.1f%%\n", src, out.c_str(),
              100.0 * static_cast<double>(cov) / static_cast<double>(w.coverage.size()));
  return 0;
}

int cmd_train(const std::string& scene_dir, const std::string& config_path,
              const std::string& out, bool deterministic, const ConsistencyConfig& ccfg) {
  TrainConfig cfg =
      config_path.empty() ? TrainConfig{} : load_train_config(config_path);
  if (deterministic) cfg.deterministic = true;

  const SceneData scene = load_scene(scene_dir);
  const auto masks = masks_or_default(scene);
  PointCloud cloud = fuse_stage(scene, masks, ccfg);
  TrainResult result = train_stage(scene, masks, std::move(cloud), cfg);
  save_checkpoint(out, result.set);
  {
    std::ofstream csv(sibling_path(out, "telemetry.csv"));
    if (!csv) throw IoError("cannot write telemetry.csv next to " + out);
    csv << telemetry_csv(result.telemetry);
  }
  EvalReport report;
  const EvalReport* report_ptr = nullptr;
  if (!scene.test_idx.empty()) {
    const auto renders = render_stage(result.set, scene, cfg.render);
    report = eval_stage(renders, scene);
    report_ptr = &report;
  }
  json_to_file(sibling_path(out, "manifest.json"), run_manifest(cfg, report_ptr));
  std::printf("train: %zu gaussians after %d iters -> %s\n", result.final_count,
              cfg.num_iters, out.c_str());
  if (report_ptr)
    std::printf("train: held-out PSNR %.3f dB, SSIM %.4f\n", report.mean_psnr,
                report.mean_ssim);
  return 0;
}

int cmd_render(const std::string& ckpt, const std::string& view_path,
               const std::string& out_color, const std::string& out_depth) {
  const GaussianSet g = load_checkpoint(ckpt);
  View v;
  view_from_json(json_from_file(view_path, "view"), &v.intrinsics, &v.pose);
  const RenderOutput r = render(g, v, RenderConfig{});
  write_ppm(out_color, r.color);
  if (!out_depth.empty()) write_pfm(out_depth, r.depth);
  std::printf("render: %zu gaussians -> %s\n", g.size(), out_color.c_str());
  return 0;
}

int cmd_eval(const std::string& scene_dir, const std::string& renders_dir,
             const std::string& out) {
  const SceneData scene = load_scene(scene_dir);
  std::vector<Image> pred, gt;
  std::vector<int> indices;
  for (int idx : scene.test_idx) {
    const std::string stem = renders_dir + "/" + view_stem(idx);
    std::string path = stem + ".ppm";
    if (!std::filesystem::exists(path)) path = stem + ".png";
    if (!std::filesystem::exists(path))
      throw MissingInput("no render for test view " + std::to_string(idx) + ": " + stem +
                         ".ppm|.png");
    pred.push_back(read_image(path));
    gt.push_back(scene.views[static_cast<std::size_t>(idx)].image);
    indices.push_back(idx);
  }
  const EvalReport report = evaluate(pred, gt, indices);
  write_metrics(out, report);
  std::printf("eval: %zu views, mean PSNR %.3f dB, mean SSIM %.4f -> %s\n",
              report.views.size(), report.mean_psnr, report.mean_ssim, out.c_str());
  return 0;
}

int cmd_pipeline(const std::string& scene_dir, const std::string& config_path,
                 const std::string& out_dir, bool deterministic,
                 const ConsistencyConfig& ccfg) {
  TrainConfig cfg =
      config_path.empty() ? TrainConfig{} : load_train_config(config_path);
  if (deterministic) cfg.deterministic = true;
  const PipelineResult r = run_pipeline(scene_dir, out_dir, cfg, ccfg);
  std::printf("pipeline: %zu fused points, %zu gaussians, mean PSNR %.3f dB, SSIM %.4f\n",
              r.cloud_points, r.training.final_count, r.report.mean_psnr,
              r.report.mean_ssim);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-shot gaussian splatting pipeline"};
  app.require_subcommand(1);

  // fixture generate
  auto* fixture = app.add_subcommand("fixture", "synthetic scene generation");
  fixture->require_subcommand(1);
  auto* fgen = fixture->add_subcommand("generate", "write a synthetic scene directory");
  std::string f_preset = "three_planes", f_out, f_mono = "power";
  std::uint64_t f_seed = 0;
  int f_width = 48, f_height = 48;
  double f_cfrac = 0.0, f_cmag = 0.0;
  fgen->add_option("--preset", f_preset, "three_planes|plane_and_spheres|steep_parallax");
  fgen->add_option("--seed", f_seed, "generator seed");
  fgen->add_option("--out", f_out, "output scene directory")->required();
  fgen->add_option("--width", f_width, "image width");
  fgen->add_option("--height", f_height, "image height");
  fgen->add_option("--corrupt-fraction", f_cfrac, "fraction of MVS pixels to corrupt");
  fgen->add_option("--corrupt-magnitude", f_cmag, "corruption scale factor minus one");
  fgen->add_option("--mono", f_mono, "mono depth distortion: identity|affine|power|log");

  // filter
  auto* filter = app.add_subcommand("filter", "write consistency mask PGMs");
  std::string fl_scene;
  ConsistencyConfig fl_cfg;
  filter->add_option("--scene", fl_scene, "scene directory")->required();
  add_consistency_flags(filter, &fl_cfg);

  // fuse
  auto* fuse = app.add_subcommand("fuse", "fuse masked depths into a PLY point cloud");
  std::string fu_scene, fu_out = "cloud.ply";
  ConsistencyConfig fu_cfg;
  fuse->add_option("--scene", fu_scene, "scene directory")->required();
  fuse->add_option("--out", fu_out, "output PLY path");
  add_consistency_flags(fuse, &fu_cfg);

  // warp
  auto* warp = app.add_subcommand("warp", "forward-warp a view to a target pose");
  std::string w_scene, w_pose, w_out, w_cov;
  int w_src = 0;
  warp->add_option("--scene", w_scene, "scene directory")->required();
  warp->add_option("--src", w_src, "source view index")->required();
  warp->add_option("--tgt-pose", w_pose, "target view JSON")->required();
  warp->add_option("--out", w_out, "warped image PPM")->required();
  warp->add_option("--coverage", w_cov, "coverage mask PGM");

  // train
  auto* train_cmd = app.add_subcommand("train", "optimize gaussians on a scene");
  std::string t_scene, t_config, t_out;
  bool t_det = false;
  ConsistencyConfig t_cfg;
  train_cmd->add_option("--scene", t_scene, "scene directory")->required();
  train_cmd->add_option("--config", t_config, "train config JSON");
  train_cmd->add_option("--out", t_out, "output checkpoint")->required();
  train_cmd->add_flag("--deterministic", t_det, "force canonical reductions");
  add_consistency_flags(train_cmd, &t_cfg);

  // render
  auto* render_cmd = app.add_subcommand("render", "render a checkpoint from a pose");
  std::string r_ckpt, r_view, r_color, r_depth;
  render_cmd->add_option("--ckpt", r_ckpt, "checkpoint file")->required();
  render_cmd->add_option("--view", r_view, "view JSON (intrinsics + pose)")->required();
  render_cmd->add_option("--out-color", r_color, "output PPM")->required();
  render_cmd->add_option("--out-depth", r_depth, "output PFM");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score renders against the test split");
  std::string e_scene, e_renders, e_out = "metrics.json";
  eval_cmd->add_option("--scene", e_scene, "scene directory")->required();
  eval_cmd->add_option("--renders", e_renders, "directory of NNN.ppm renders")->required();
  eval_cmd->add_option("--out", e_out, "metrics JSON path");

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "filter, fuse, train, render, eval");
  std::string p_scene, p_config, p_out;
  bool p_det = false;
  ConsistencyConfig p_cfg;
  pipe->add_option("--scene", p_scene, "scene directory")->required();
  pipe->add_option("--config", p_config, "train config JSON");
  pipe->add_option("--out", p_out, "output artifact directory")->required();
  pipe->add_flag("--deterministic", p_det, "force canonical reductions");
  add_consistency_flags(pipe, &p_cfg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (fgen->parsed())
      return cmd_fixture(f_preset, f_seed, f_out, f_width, f_height, f_cfrac, f_cmag, f_mono);
    if (filter->parsed()) return cmd_filter(fl_scene, fl_cfg);
    if (fuse->parsed()) return cmd_fuse(fu_scene, fu_out, fu_cfg);
    if (warp->parsed()) return cmd_warp(w_scene, w_src, w_pose, w_out, w_cov);
    if (train_cmd->parsed()) return cmd_train(t_scene, t_config, t_out, t_det, t_cfg);
    if (render_cmd->parsed()) return cmd_render(r_ckpt, r_view, r_color, r_depth);
    if (eval_cmd->parsed()) return cmd_eval(e_scene, e_renders, e_out);
    if (pipe->parsed()) return cmd_pipeline(p_scene, p_config, p_out, p_det, p_cfg);
    std::fprintf(stderr, "error: no subcommand\n");
    return 2;
  } catch (const mvpgs::NumericalAbort& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return 3;
  } catch (const mvpgs::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
