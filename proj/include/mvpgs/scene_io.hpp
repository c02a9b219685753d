// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scene directory layout, camera/split/config/metrics JSON, run manifests.
//
// Layout under a scene root:
//   images/NNN.ppm (or .png)     one per view
//   depth_mvs/NNN.pfm            per train view; sidecar NNN.pgm mask after filtering
//   depth_mono/NNN.pfm           per train view
//   cameras.json                 {"version":1,"views":[{fx,fy,cx,cy,width,height,R,t}]}
//   split.json                   {"train":[...],"test":[...]}
// R (row-major) and t are camera-to-world.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvpgs/common.hpp"
#include "mvpgs/fixtures.hpp"
#include "mvpgs/geometry.hpp"
#include "mvpgs/image_io.hpp"
#include "mvpgs/metrics.hpp"
#include "mvpgs/trainer.hpp"

#ifndef MVPGS_GIT_DESCRIBE
#define MVPGS_GIT_DESCRIBE "unknown"
#endif

namespace mvpgs {

inline const char* build_describe() { return MVPGS_GIT_DESCRIBE; }

inline std::string view_stem(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", index);
  return buf;
}

// ------------------------------- JSON plumbing -----------------------------

inline nlohmann::json json_from_file(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw MissingInput(std::string(what) + ": cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string(what) + ": malformed JSON in " + path + ": " + e.what());
  }
}

inline void json_to_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

// ------------------------------ cameras.json -------------------------------

inline nlohmann::json view_to_json(const Intrinsics& k, const Pose& p) {
  nlohmann::json j;
  j["fx"] = k.fx;
  j["fy"] = k.fy;
  j["cx"] = k.cx;
  j["cy"] = k.cy;
  j["width"] = k.width;
  j["height"] = k.height;
  nlohmann::json r = nlohmann::json::array();
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) r.push_back(p.rotation(row, col));
  j["R"] = r;
  j["t"] = {p.translation.x(), p.translation.y(), p.translation.z()};
  return j;
}

inline void view_from_json(const nlohmann::json& j, Intrinsics* k, Pose* p) {
  try {
    k->fx = j.at("fx").get<double>();
    k->fy = j.at("fy").get<double>();
    k->cx = j.at("cx").get<double>();
    k->cy = j.at("cy").get<double>();
    k->width = j.at("width").get<int>();
    k->height = j.at("height").get<int>();
    const auto& r = j.at("R");
    const auto& t = j.at("t");
    require(r.size() == 9 && t.size() == 3, "camera record: R must have 9 entries, t 3");
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col)
        p->rotation(row, col) = r.at(static_cast<std::size_t>(row) * 3 + col).get<double>();
    for (int i = 0; i < 3; ++i) p->translation[i] = t.at(i).get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("camera record: ") + e.what());
  }
  k->validate();
  require(p->is_valid(1e-6), "camera record: R is not a rotation");
}

inline void write_cameras(const std::string& path,
                          const std::vector<std::pair<Intrinsics, Pose>>& cams) {
  nlohmann::json j;
  j["version"] = 1;
  nlohmann::json views = nlohmann::json::array();
  for (const auto& [k, p] : cams) views.push_back(view_to_json(k, p));
  j["views"] = views;
  json_to_file(path, j);
}

inline std::vector<std::pair<Intrinsics, Pose>> read_cameras(const std::string& path) {
  const nlohmann::json j = json_from_file(path, "cameras.json");
  require(j.contains("views") && j["views"].is_array(), "cameras.json: missing views array");
  std::vector<std::pair<Intrinsics, Pose>> cams;
  for (const auto& rec : j["views"]) {
    Intrinsics k;
    Pose p;
    view_from_json(rec, &k, &p);
    cams.emplace_back(k, p);
  }
  return cams;
}

// ------------------------------- split.json --------------------------------

inline void write_split(const std::string& path, const std::vector<int>& train,
                        const std::vector<int>& test) {
  nlohmann::json j;
  j["train"] = train;
  j["test"] = test;
  json_to_file(path, j);
}

inline void read_split(const std::string& path, std::vector<int>* train,
                       std::vector<int>* test) {
  const nlohmann::json j = json_from_file(path, "split.json");
  try {
    *train = j.at("train").get<std::vector<int>>();
    *test = j.at("test").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("split.json: ") + e.what());
  }
}

// ------------------------------ scene directory ----------------------------

struct SceneData {
  std::vector<View> views;  // images + whatever depths were on disk
  std::vector<int> train_idx, test_idx;
  std::vector<std::vector<std::uint8_t>> masks;  // per view; empty if absent
};

inline std::string find_view_image(const std::string& dir, int index) {
  const std::string stem = dir + "/images/" + view_stem(index);
  for (const char* ext : {".ppm", ".png"}) {
    if (std::filesystem::exists(stem + ext)) return stem + ext;
  }
  throw MissingInput("missing image for view " + std::to_string(index) + ": " + stem +
                     ".ppm|.png");
}

inline SceneData load_scene(const std::string& dir) {
  SceneData scene;
  const auto cams = read_cameras(dir + "/cameras.json");
  read_split(dir + "/split.json", &scene.train_idx, &scene.test_idx);
  for (int idx : scene.train_idx)
    require(idx >= 0 && static_cast<std::size_t>(idx) < cams.size(),
            "split.json: train index out of range");
  for (int idx : scene.test_idx)
    require(idx >= 0 && static_cast<std::size_t>(idx) < cams.size(),
            "split.json: test index out of range");

  scene.masks.resize(cams.size());
  for (std::size_t i = 0; i < cams.size(); ++i) {
    View v;
    v.intrinsics = cams[i].first;
    v.pose = cams[i].second;
    v.image = read_image(find_view_image(dir, static_cast<int>(i)));
    require(v.image.width == v.intrinsics.width && v.image.height == v.intrinsics.height,
            "view " + std::to_string(i) + ": image size disagrees with cameras.json");
    const std::string stem = view_stem(static_cast<int>(i));
    const std::string mvs = dir + "/depth_mvs/" + stem + ".pfm";
    if (std::filesystem::exists(mvs)) {
      DepthMap d = read_pfm(mvs, DepthRole::Mvs);
      require(d.width == v.intrinsics.width && d.height == v.intrinsics.height,
              "view " + std::to_string(i) + ": MVS depth size mismatch");
      v.attach(std::move(d));
    }
    const std::string mono = dir + "/depth_mono/" + stem + ".pfm";
    if (std::filesystem::exists(mono)) {
      DepthMap d = read_pfm(mono, DepthRole::Mono);
      require(d.width == v.intrinsics.width && d.height == v.intrinsics.height,
              "view " + std::to_string(i) + ": mono depth size mismatch");
      v.attach(std::move(d));
    }
    const std::string mask = dir + "/depth_mvs/" + stem + ".pgm";
    if (std::filesystem::exists(mask)) {
      int mw = 0, mh = 0;
      scene.masks[i] = read_pgm_mask(mask, &mw, &mh);
      require(mw == v.intrinsics.width && mh == v.intrinsics.height,
              "view " + std::to_string(i) + ": mask size mismatch");
    }
    scene.views.push_back(std::move(v));
  }
  return scene;
}

// Materializes a synthetic fixture as a scene directory. Views are indexed
// train-first, then held-out; train views carry MVS and mono depths.
inline void save_fixture_scene(const std::string& dir, const SceneFixture& fx,
                               double corrupt_fraction = 0.0, double corrupt_magnitude = 0.0,
                               MonoPreset mono = MonoPreset::Power) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "depth_mvs");
  fs::create_directories(fs::path(dir) / "depth_mono");

  std::vector<std::pair<Intrinsics, Pose>> cams;
  std::vector<int> train_idx, test_idx;
  int index = 0;
  for (const View& v : fx.train) {
    const std::string stem = view_stem(index);
    write_ppm(dir + "/images/" + stem + ".ppm", v.image);
    const DepthMap* gt = v.depth(DepthRole::GroundTruth);
    require(gt != nullptr, "fixture train view lacks ground-truth depth");
    DepthMap mvs = mvs_from_gt(*gt);
    if (corrupt_fraction > 0.0) {
      const CorruptionResult c = corrupt_depth(mvs, corrupt_fraction, corrupt_magnitude,
                                               fx.seed + static_cast<std::uint64_t>(index));
      mvs = c.depth;
    }
    write_pfm(dir + "/depth_mvs/" + stem + ".pfm", mvs);
    DepthMap md = synth_mono_depth(*gt, mono);
    write_pfm(dir + "/depth_mono/" + stem + ".pfm", md);
    cams.emplace_back(v.intrinsics, v.pose);
    train_idx.push_back(index);
    ++index;
  }
  for (const View& v : fx.held_out) {
    write_ppm(dir + "/images/" + view_stem(index) + ".ppm", v.image);
    cams.emplace_back(v.intrinsics, v.pose);
    test_idx.push_back(index);
    ++index;
  }
  write_cameras(dir + "/cameras.json", cams);
  write_split(dir + "/split.json", train_idx, test_idx);
}

// ------------------------------- metrics.json ------------------------------

inline nlohmann::json psnr_to_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

// Versioned schema; fields other than the ones written here are preserved
// from `existing` for forward compatibility.
inline nlohmann::json metrics_to_json(const EvalReport& report,
                                      nlohmann::json existing = nlohmann::json::object()) {
  nlohmann::json j = std::move(existing);
  j["version"] = 1;
  j["mean_psnr"] = psnr_to_json(report.mean_psnr);
  j["mean_ssim"] = report.mean_ssim;
  nlohmann::json views = nlohmann::json::array();
  for (const ViewMetrics& m : report.views) {
    nlohmann::json v;
    v["index"] = m.index;
    v["psnr"] = psnr_to_json(m.psnr);
    v["ssim"] = m.ssim;
    views.push_back(v);
  }
  j["per_view"] = views;
  j["lpips"] = nullptr;
  j["lpips_reason"] = "requires pretrained network";
  return j;
}

inline void write_metrics(const std::string& path, const EvalReport& report) {
  nlohmann::json existing = nlohmann::json::object();
  if (std::filesystem::exists(path)) existing = json_from_file(path, "metrics.json");
  json_to_file(path, metrics_to_json(report, std::move(existing)));
}

// --------------------------- train config JSON -----------------------------

namespace detail {

template <typename T>
inline void take(const nlohmann::json& j, const char* key, T* dst,
                 std::vector<std::string>* seen) {
  seen->push_back(key);
  if (!j.contains(key)) return;
  try {
    *dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& seen,
                           const char* scope) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const std::string& s : seen)
      if (s == item.key()) {
        known = true;
        break;
      }
    if (!known)
      throw ValidationError(std::string("config: unknown key '") + item.key() + "' in " +
                            scope);
  }
}

}  // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  std::vector<std::string> seen;
  detail::take(j, "num_iters", &cfg.num_iters, &seen);
  detail::take(j, "unseen_interval", &cfg.unseen_interval, &seen);
  detail::take(j, "densify_from", &cfg.densify_from, &seen);
  detail::take(j, "densify_every", &cfg.densify_every, &seen);
  detail::take(j, "densify_until_prune", &cfg.densify_until_prune, &seen);
  detail::take(j, "densify_until", &cfg.densify_until, &seen);
  detail::take(j, "swap_densify_schedule", &cfg.swap_densify_schedule, &seen);
  detail::take(j, "densify_grad_thresh", &cfg.densify_grad_thresh, &seen);
  detail::take(j, "densify_scale_frac", &cfg.densify_scale_frac, &seen);
  detail::take(j, "split_scale_shrink", &cfg.split_scale_shrink, &seen);
  detail::take(j, "prune_opacity", &cfg.prune_opacity, &seen);
  detail::take(j, "prune_max_screen", &cfg.prune_max_screen, &seen);
  detail::take(j, "sh_degree", &cfg.sh_degree, &seen);
  detail::take(j, "sh_promote_every", &cfg.sh_promote_every, &seen);
  detail::take(j, "num_unseen_poses", &cfg.num_unseen_poses, &seen);
  detail::take(j, "seed", &cfg.seed, &seen);
  detail::take(j, "deterministic", &cfg.deterministic, &seen);
  detail::take(j, "checkpoint_every", &cfg.checkpoint_every, &seen);

  seen.push_back("weights");
  if (j.contains("weights")) {
    const nlohmann::json& w = j.at("weights");
    std::vector<std::string> wseen;
    detail::take(w, "lambda1", &cfg.weights.lambda1, &wseen);
    detail::take(w, "lambda2", &cfg.weights.lambda2, &wseen);
    detail::take(w, "beta1", &cfg.weights.beta1, &wseen);
    detail::take(w, "beta2", &cfg.weights.beta2, &wseen);
    detail::take(w, "rank_batch", &cfg.weights.rank_batch, &wseen);
    detail::take(w, "rank_margin", &cfg.weights.rank_margin, &wseen);
    detail::reject_unknown(w, wseen, "weights");
  }
  seen.push_back("lr");
  if (j.contains("lr")) {
    const nlohmann::json& l = j.at("lr");
    std::vector<std::string> lseen;
    detail::take(l, "position_init", &cfg.lr.position_init, &lseen);
    detail::take(l, "position_final", &cfg.lr.position_final, &lseen);
    detail::take(l, "sh_dc", &cfg.lr.sh_dc, &lseen);
    detail::take(l, "sh_rest", &cfg.lr.sh_rest, &lseen);
    detail::take(l, "opacity", &cfg.lr.opacity, &lseen);
    detail::take(l, "scale", &cfg.lr.scale, &lseen);
    detail::take(l, "rotation", &cfg.lr.rotation, &lseen);
    detail::reject_unknown(l, lseen, "lr");
  }
  seen.push_back("render");
  if (j.contains("render")) {
    const nlohmann::json& r = j.at("render");
    std::vector<std::string> rseen;
    detail::take(r, "tile_size", &cfg.render.tile_size, &rseen);
    detail::take(r, "alpha_cap", &cfg.render.alpha_cap, &rseen);
    detail::take(r, "alpha_skip", &cfg.render.alpha_skip, &rseen);
    detail::take(r, "t_stop", &cfg.render.t_stop, &rseen);
    detail::take(r, "z_near", &cfg.render.z_near, &rseen);
    detail::take(r, "dilation", &cfg.render.dilation, &rseen);
    detail::take(r, "normalize_depth", &cfg.render.normalize_depth, &rseen);
    detail::reject_unknown(r, rseen, "render");
  }
  detail::reject_unknown(j, seen, "config");
  cfg.validate();
  return cfg;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["num_iters"] = cfg.num_iters;
  j["unseen_interval"] = cfg.unseen_interval;
  j["densify_from"] = cfg.densify_from;
  j["densify_every"] = cfg.densify_every;
  j["densify_until_prune"] = cfg.densify_until_prune;
  j["densify_until"] = cfg.densify_until;
  j["swap_densify_schedule"] = cfg.swap_densify_schedule;
  j["densify_grad_thresh"] = cfg.densify_grad_thresh;
  j["densify_scale_frac"] = cfg.densify_scale_frac;
  j["split_scale_shrink"] = cfg.split_scale_shrink;
  j["prune_opacity"] = cfg.prune_opacity;
  j["prune_max_screen"] = cfg.prune_max_screen;
  j["sh_degree"] = cfg.sh_degree;
  j["sh_promote_every"] = cfg.sh_promote_every;
  j["num_unseen_poses"] = cfg.num_unseen_poses;
  j["seed"] = cfg.seed;
  j["deterministic"] = cfg.deterministic;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["weights"] = {{"lambda1", cfg.weights.lambda1},   {"lambda2", cfg.weights.lambda2},
                  {"beta1", cfg.weights.beta1},       {"beta2", cfg.weights.beta2},
                  {"rank_batch", cfg.weights.rank_batch}, {"rank_margin", cfg.weights.rank_margin}};
  j["lr"] = {{"position_init", cfg.lr.position_init}, {"position_final", cfg.lr.position_final},
             {"sh_dc", cfg.lr.sh_dc},                 {"sh_rest", cfg.lr.sh_rest},
             {"opacity", cfg.lr.opacity},             {"scale", cfg.lr.scale},
             {"rotation", cfg.lr.rotation}};
  j["render"] = {{"tile_size", cfg.render.tile_size}, {"alpha_cap", cfg.render.alpha_cap},
                 {"alpha_skip", cfg.render.alpha_skip}, {"t_stop", cfg.render.t_stop},
                 {"z_near", cfg.render.z_near},       {"dilation", cfg.render.dilation},
                 {"normalize_depth", cfg.render.normalize_depth}};
  return j;
}

inline TrainConfig load_train_config(const std::string& path) {
  return train_config_from_json(json_from_file(path, "train config"));
}

// Stable hash of the canonical (sorted-key) serialization.
inline std::uint64_t config_hash(const TrainConfig& cfg) {
  return fnv1a(train_config_to_json(cfg).dump());
}

inline nlohmann::json run_manifest(const TrainConfig& cfg, const EvalReport* final_metrics) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016" PRIx64, config_hash(cfg));
  j["config_hash"] = hex;
  j["git_describe"] = build_describe();
  if (final_metrics)
    j["final_metrics"] = metrics_to_json(*final_metrics);
  else
    j["final_metrics"] = nullptr;
  return j;
}

}  // namespace mvpgs
