// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end orchestration: filter -> fuse -> train -> render -> eval.
// Every stage failure is rethrown with a "stage[name]" prefix but keeps its
// class, so exit codes stay meaningful at the CLI boundary.

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "mvpgs/common.hpp"
#include "mvpgs/geometry.hpp"
#include "mvpgs/metrics.hpp"
#include "mvpgs/mvs_fusion.hpp"
#include "mvpgs/renderer.hpp"
#include "mvpgs/scene_io.hpp"
#include "mvpgs/trainer.hpp"

namespace mvpgs {

namespace detail {

template <typename Fn>
auto run_stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("stage[") + name + "]: " + e.what());
  } catch (const NumericalAbort& e) {
    throw NumericalAbort(std::string("stage[") + name + "]: " + e.what());
  }
}

}  // namespace detail

// Train views in scene order, with their MVS depths copied out for the
// fusion stages.
inline std::vector<View> gather_train_views(const SceneData& scene) {
  std::vector<View> out;
  for (int idx : scene.train_idx) out.push_back(scene.views[static_cast<std::size_t>(idx)]);
  return out;
}

inline std::vector<DepthMap> gather_depths(const std::vector<View>& views, DepthRole role) {
  std::vector<DepthMap> out;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const DepthMap* d = views[i].depth(role);
    require(d != nullptr, "view " + std::to_string(i) + ": missing depth (role " +
                              std::to_string(static_cast<int>(role)) + ")");
    out.push_back(*d);
  }
  return out;
}

// With n views a pixel can agree with at most n-1 others.
inline ConsistencyConfig clamp_consistency(ConsistencyConfig cfg, std::size_t n_views) {
  if (n_views >= 2 && cfg.min_consistent_views > static_cast<int>(n_views) - 1)
    cfg.min_consistent_views = static_cast<int>(n_views) - 1;
  return cfg;
}

// filter: geometric-consistency masks for the train views' MVS depths.
// Writes depth_mvs/NNN.pgm next to the inputs when scene_dir is non-empty.
inline std::vector<std::vector<std::uint8_t>> filter_stage(const SceneData& scene,
                                                           const ConsistencyConfig& ccfg,
                                                           const std::string& scene_dir = "") {
  return detail::run_stage("filter", [&] {
    const std::vector<View> train = gather_train_views(scene);
    const std::vector<DepthMap> depths = gather_depths(train, DepthRole::Mvs);
    const ConsistencyConfig cfg = clamp_consistency(ccfg, train.size());
    auto masks = consistency_masks(train, depths, cfg);
    if (!scene_dir.empty()) {
      for (std::size_t i = 0; i < masks.size(); ++i) {
        const int view_index = scene.train_idx[i];
        write_pgm_mask(scene_dir + "/depth_mvs/" + view_stem(view_index) + ".pgm", masks[i],
                       train[i].intrinsics.width, train[i].intrinsics.height);
      }
    }
    return masks;
  });
}

// fuse: masked backprojection into a downsampled colored point cloud.
inline PointCloud fuse_stage(const SceneData& scene,
                             const std::vector<std::vector<std::uint8_t>>& masks,
                             const ConsistencyConfig& ccfg, const std::string& ply_out = "") {
  return detail::run_stage("fuse", [&] {
    const std::vector<View> train = gather_train_views(scene);
    const std::vector<DepthMap> depths = gather_depths(train, DepthRole::Mvs);
    PointCloud cloud =
        fuse_point_cloud(train, depths, masks, clamp_consistency(ccfg, train.size()));
    if (!ply_out.empty()) write_ply(ply_out, cloud);
    return cloud;
  });
}

inline TrainResult train_stage(const SceneData& scene,
                               const std::vector<std::vector<std::uint8_t>>& masks,
                               PointCloud cloud, const TrainConfig& cfg,
                               CheckpointHook on_checkpoint = {}) {
  return detail::run_stage("train", [&] {
    TrainInputs in;
    in.train_views = gather_train_views(scene);
    in.masks = masks;
    in.cloud = std::move(cloud);
    return train(in, cfg, std::move(on_checkpoint));
  });
}

struct RenderedView {
  int index = 0;
  Image color;
  DepthMap depth;
};

inline std::vector<RenderedView> render_stage(const GaussianSet& g, const SceneData& scene,
                                              const RenderConfig& rcfg,
                                              const std::string& out_dir = "") {
  return detail::run_stage("render", [&] {
    std::vector<RenderedView> out;
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    for (int idx : scene.test_idx) {
      const View& v = scene.views[static_cast<std::size_t>(idx)];
      RenderOutput r = render(g, v, rcfg);
      if (!out_dir.empty()) {
        write_ppm(out_dir + "/" + view_stem(idx) + ".ppm", r.color);
        write_pfm(out_dir + "/" + view_stem(idx) + ".pfm", r.depth);
      }
      out.push_back({idx, std::move(r.color), std::move(r.depth)});
    }
    return out;
  });
}

inline EvalReport eval_stage(const std::vector<RenderedView>& renders, const SceneData& scene,
                             const std::string& metrics_out = "") {
  return detail::run_stage("eval", [&] {
    std::vector<Image> pred, gt;
    std::vector<int> indices;
    for (const RenderedView& r : renders) {
      pred.push_back(r.color);
      gt.push_back(scene.views[static_cast<std::size_t>(r.index)].image);
      indices.push_back(r.index);
    }
    EvalReport report = evaluate(pred, gt, indices);
    if (!metrics_out.empty()) write_metrics(metrics_out, report);
    return report;
  });
}

struct PipelineResult {
  std::size_t mask_kept = 0;    // masked-in pixels across train views
  std::size_t cloud_points = 0;
  TrainResult training;
  EvalReport report;
};

// Artifacts under out_dir: cloud.ply, ckpt.mvpg, telemetry.csv, manifest.json,
// renders/NNN.{ppm,pfm}, metrics.json. Masks land beside the input depths.
inline PipelineResult run_pipeline(const std::string& scene_dir, const std::string& out_dir,
                                   const TrainConfig& cfg, const ConsistencyConfig& ccfg) {
  std::filesystem::create_directories(out_dir);
  const SceneData scene = detail::run_stage("load", [&] { return load_scene(scene_dir); });

  PipelineResult result;
  const auto masks = filter_stage(scene, ccfg, scene_dir);
  for (const auto& m : masks)
    for (std::uint8_t b : m) result.mask_kept += b != 0;

  PointCloud cloud = fuse_stage(scene, masks, ccfg, out_dir + "/cloud.ply");
  result.cloud_points = cloud.positions.size();

  result.training = train_stage(scene, masks, std::move(cloud), cfg);
  save_checkpoint(out_dir + "/ckpt.mvpg", result.training.set);
  {
    std::ofstream csv(out_dir + "/telemetry.csv");
    if (!csv) throw IoError("cannot open for writing: " + out_dir + "/telemetry.csv");
    csv << telemetry_csv(result.training.telemetry);
  }

  const auto renders =
      render_stage(result.training.set, scene, cfg.render, out_dir + "/renders");
  result.report = eval_stage(renders, scene, out_dir + "/metrics.json");
  json_to_file(out_dir + "/manifest.json", run_manifest(cfg, &result.report));
  return result;
}

}  // namespace mvpgs
