#ifndef GEODEPTH_CLI_HPP
#define GEODEPTH_CLI_HPP

// Command-line front end: one binary, subcommands
//   synth | preprocess | train | infer | eval | ab
// Exit codes: 0 success, 1 bad input (validation, missing files, bad
// flags), 2 runtime failure.
//
// Default directory chain under --out:
//   synth/  ->  dataset/  ->  train/{checkpoint.ckpt,loss_log.csv}
//           ->  pred/%06d.{pfm,png}  ->  metrics.json
// and ab/ for the location experiment.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "geodepth/checkpoint.hpp"
#include "geodepth/config.hpp"
#include "geodepth/dataset.hpp"
#include "geodepth/experiment.hpp"
#include "geodepth/pipeline.hpp"
#include "geodepth/synthetic.hpp"
#include "geodepth/training.hpp"

namespace geodepth::cli {

/// Keys of the synth subcommand.
inline const std::set<std::string>& synth_keys() {
  static const std::set<std::string> k{"synth_family",  "synth_frames",      "synth_sequences", "synth_tilt",
                                       "synth_plane_depth", "synth_corridor_slope", "synth_speed",
                                       "synth_frame_interval", "synth_texture_terms"};
  return k;
}

inline const std::set<std::string>& preprocess_keys() {
  static const std::set<std::string> k{"sampling_interval", "match_tolerance", "bounds_margin", "max_gap",
                                       "fx", "fy", "cx", "cy", "width", "height"};
  return k;
}

inline std::set<std::string> all_config_keys() {
  std::set<std::string> k{"seed"};
  for (const auto* s : {&synth_keys(), &preprocess_keys(), &TrainConfig::keys(), &AbConfig::keys()}) {
    k.insert(s->begin(), s->end());
  }
  return k;
}

inline std::string config_key_help() {
  std::string out = "\nConfig keys (`key = value` in --config, or key=value arguments):\n";
  auto line = [&](const char* title, const std::set<std::string>& keys) {
    out += std::string("  ") + title + ":";
    for (const auto& k : keys) out += " " + k;
    out += "\n";
  };
  line("general", {"seed"});
  line("synth", synth_keys());
  line("preprocess", preprocess_keys());
  line("train", TrainConfig::keys());
  line("ab", AbConfig::keys());
  return out;
}

struct Common {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::int64_t> seed;
  std::optional<std::int64_t> steps;
  std::string geotag;  // "", "on", "off"
  std::vector<std::string> overrides;
};

inline std::string resolve(const Common& c, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (std::filesystem::path(c.out_dir) / path).string();
}

/// Config file, then key=value arguments, then explicit flags.
inline Config effective_config(const Common& c) {
  Config cfg;
  if (!c.config_path.empty()) cfg = Config::load(require_file(c.config_path));
  for (const auto& kv : c.overrides) cfg.apply_override(kv);
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  if (c.steps) cfg.set("steps", std::to_string(*c.steps));
  if (!c.geotag.empty()) cfg.set("geotag", c.geotag);
  cfg.require_known(all_config_keys());
  if (cfg.get_int("seed", 0) < 0) throw ValidationError("seed must be non-negative");
  return cfg;
}

inline void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "flat key = value config file");
  app->add_option("--out", c.out_dir, "output root; relative paths resolve against it")->capture_default_str();
  app->add_option("--seed", c.seed, "seed for every random choice (recorded in outputs)");
  app->add_option("--steps", c.steps, "training steps (train, ab)");
  app->add_option("--geotag", c.geotag, "alpha geotag input: on or off")->check(CLI::IsMember({"on", "off"}));
  app->add_option("overrides", c.overrides, "config overrides as key=value");
  app->footer(config_key_help());
}

inline std::vector<int> parse_frame_list(const std::string& s, const DatasetManifest& m) {
  if (s.empty() || s == "all") return all_frames(m);
  std::vector<int> out;
  for (auto f : detail::split_csv(s)) {
    double v = 0;
    if (!detail::parse_double(f, v) || v != static_cast<int>(v)) throw ValidationError("bad frame index: " + std::string(f));
    const int idx = static_cast<int>(v);
    if (idx < 0 || idx >= static_cast<int>(m.frames.size())) {
      throw ValidationError("frame " + std::to_string(idx) + " not in dataset");
    }
    out.push_back(idx);
  }
  return out;
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_synth(const Common& c, int frames_flag, const std::string& family_flag, std::ostream& log) {
  const Config cfg = effective_config(c);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
  SyntheticSpec base;
  base.family = parse_scene_family(family_flag.empty() ? cfg.get_string("synth_family", "plane") : family_flag);
  base.n_frames = frames_flag > 0 ? frames_flag : static_cast<int>(cfg.get_int("synth_frames", 12));
  base.tilt = cfg.get_double("synth_tilt", base.family == SceneFamily::plane ? 1.0 : 0.0);
  base.plane_depth = cfg.get_double("synth_plane_depth", base.plane_depth);
  base.corridor_slope = cfg.get_double("synth_corridor_slope", base.corridor_slope);
  base.velocity = Vec3{cfg.get_double("synth_speed", 0.2), 0, 0};
  base.frame_interval = cfg.get_double("synth_frame_interval", base.frame_interval);
  base.texture_terms = static_cast<int>(cfg.get_int("synth_texture_terms", base.texture_terms));
  if (auto k = intrinsics_from_config(cfg)) base.intrinsics = *k;
  const int sequences = static_cast<int>(cfg.get_int("synth_sequences", 1));
  if (sequences < 1) throw ValidationError("synth_sequences must be >= 1");
  std::vector<SequencePlan> plans;
  for (int s = 0; s < sequences; ++s) {
    SyntheticSpec spec = base;
    spec.location.lat0 += 1e-3 * s;
    plans.push_back(SequencePlan{spec, derive_seed(seed, 100 + s), "seq-" + std::to_string(s)});
  }
  const std::string dir = resolve(c, "synth");
  const double gap = 10.0 * base.frame_interval + 10.0;
  const auto info = write_synthetic_dataset(plans, gap, seed, dir);
  log << "synth: " << info.total_frames << " frames -> " << dir << "\n";
}

inline void cmd_preprocess(const Common& c, const std::string& input, const std::string& dataset, std::ostream& log) {
  const Config cfg = effective_config(c);
  PreprocessConfig pc;
  pc.sampling_interval = cfg.get_double("sampling_interval", pc.sampling_interval);
  pc.match_tolerance = cfg.get_double("match_tolerance", pc.match_tolerance);
  pc.bounds_margin = cfg.get_double("bounds_margin", pc.bounds_margin);
  pc.max_gap = cfg.get_double("max_gap", pc.max_gap);
  pc.intrinsics = intrinsics_from_config(cfg);
  const std::string in_dir = resolve(c, input);
  if (!std::filesystem::is_directory(in_dir)) throw LoadError("input directory not found: " + in_dir);
  const auto m = preprocess_directory(in_dir, pc, resolve(c, dataset));
  log << "preprocess: " << m.frames.size() << " frames, " << m.triplets.size() << " triplets -> "
      << resolve(c, dataset) << "\n";
}

inline void cmd_train(const Common& c, const std::string& dataset, const std::string& checkpoint,
                      const std::string& loss_log, const std::string& resume, std::ostream& log) {
  const Config cfg = effective_config(c);
  const std::string root = resolve(c, dataset);
  const DatasetManifest m = read_manifest(require_file((std::filesystem::path(root) / "manifest.json").string()));
  const TrainConfig tc = TrainConfig::from_config(cfg, m.width, m.height);
  TrainOptions opts;
  opts.checkpoint_path = resolve(c, checkpoint);
  opts.loss_log_path = resolve(c, loss_log);
  if (!resume.empty()) opts.resume_from = require_file(resolve(c, resume));
  opts.run_config = cfg.entries();
  std::filesystem::create_directories(std::filesystem::path(opts.checkpoint_path).parent_path());
  std::filesystem::create_directories(std::filesystem::path(opts.loss_log_path).parent_path());
  opts.on_step = [&](std::int64_t step, const LossReport& r) {
    if (step % 100 == 0 || step == tc.steps) log << "step " << step << " " << describe(r) << "\n";
  };
  const auto result = train(m, root, tc, opts);
  log << "train: " << result.reports.size() << " steps -> " << opts.checkpoint_path << "\n";
}

inline void cmd_infer(const Common& c, const std::string& dataset, const std::string& checkpoint,
                      const std::string& frames, const std::string& pred, std::ostream& log) {
  effective_config(c);
  const Checkpoint ck = load_checkpoint(require_file(resolve(c, checkpoint)));
  const std::string root = resolve(c, dataset);
  const DatasetManifest m = read_manifest(require_file((std::filesystem::path(root) / "manifest.json").string()));
  if (m.width != ck.model.depth.width || m.height != ck.model.depth.height) {
    throw ValidationError("checkpoint image size does not match dataset");
  }
  const bool geotag = c.geotag.empty() ? ck.geotag_enabled : c.geotag == "on";
  const auto list = parse_frame_list(frames, m);
  const auto depths = predict_frames(ck.state.params, ck.model, m, root, list, geotag);
  write_predictions(depths, list, resolve(c, pred));
  log << "infer: " << list.size() << " depth maps -> " << resolve(c, pred) << "\n";
}

inline void cmd_eval(const Common& c, const std::string& dataset, const std::string& pred, const std::string& gt,
                     const std::string& report, std::ostream& log) {
  const Config cfg = effective_config(c);
  const std::string root = resolve(c, dataset);
  const DatasetManifest m = read_manifest(require_file((std::filesystem::path(root) / "manifest.json").string()));
  const std::string pred_dir = resolve(c, pred);
  if (!std::filesystem::is_directory(pred_dir)) throw LoadError("prediction directory not found: " + pred_dir);
  std::vector<int> frames;
  std::vector<Tensor<float>> depths;
  for (int i = 0; i < static_cast<int>(m.frames.size()); ++i) {
    const auto path = std::filesystem::path(pred_dir) / depth_file_name(i);
    if (!std::filesystem::is_regular_file(path)) continue;
    frames.push_back(i);
    depths.push_back(read_pfm(path.string()));
  }
  if (frames.empty()) throw LoadError("no predicted depth maps in " + pred_dir);
  const auto result = evaluate_depths(depths, m, frames, resolve(c, gt));
  nlohmann::json per_frame = nlohmann::json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto j = metrics_to_json(result.per_frame[i]);
    j["frame"] = frames[i];
    per_frame.push_back(j);
  }
  write_json(resolve(c, report), {{"seed", cfg.get_int("seed", 0)},
                                  {"frames", frames.size()},
                                  {"metrics", metrics_to_json(result.mean)},
                                  {"per_frame", per_frame}});
  log << "eval: AbsRel " << result.mean.abs_rel << " RMSE " << result.mean.rmse << " delta1 " << result.mean.delta1
      << " -> " << resolve(c, report) << "\n";
}

inline void cmd_ab(const Common& c, const std::string& dir, std::ostream& log) {
  const Config cfg = effective_config(c);
  const AbConfig ab = AbConfig::from_config(cfg);
  Config train_cfg;
  for (const auto& [k, v] : cfg.entries()) {
    if (TrainConfig::keys().count(k)) train_cfg.set(k, v);
  }
  train_cfg.set("seed", std::to_string(ab.seed));
  const auto report = run_ab_experiment(ab, train_cfg, resolve(c, dir), [&](const std::string& s) { log << s << "\n"; });
  log << "ab: geotag AbsRel " << report.geotag_on.metrics.abs_rel << " vs ablation "
      << report.geotag_off.metrics.abs_rel << " -> " << resolve(c, dir) << "/report.json\n";
}

// ---------------------------------------------------------------------------

/// Parses argv and runs one subcommand.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"geodepth: self-supervised monocular depth with geotagged frames"};
  app.require_subcommand(1);
  app.footer(config_key_help());

  Common common;
  int synth_frames = 0;
  std::string synth_family;
  std::string input = "synth", dataset = "dataset", checkpoint = "train/checkpoint.ckpt",
              loss_log = "train/loss_log.csv", resume, frames, pred = "pred", gt = "synth", report = "metrics.json",
              ab_dir = "ab";

  auto* synth = app.add_subcommand("synth", "render a synthetic geotagged sequence into <out>/synth");
  add_common(synth, common);
  synth->add_option("--frames", synth_frames, "frames per sequence (default 12)");
  synth->add_option("--family", synth_family, "scene family: plane or corridor");

  auto* pre = app.add_subcommand("preprocess", "sample frames, geotag the alpha channel, index triplets");
  add_common(pre, common);
  pre->add_option("--input", input, "capture directory (frames/, timestamps.csv, locations.csv, intrinsics.cfg)")
      ->capture_default_str();
  pre->add_option("--dataset", dataset, "dataset output directory")->capture_default_str();

  auto* tr = app.add_subcommand("train", "train depth and pose networks");
  add_common(tr, common);
  tr->add_option("--dataset", dataset, "dataset directory")->capture_default_str();
  tr->add_option("--checkpoint", checkpoint, "checkpoint output path")->capture_default_str();
  tr->add_option("--log", loss_log, "loss log CSV path")->capture_default_str();
  tr->add_option("--resume", resume, "continue from this checkpoint");

  auto* inf = app.add_subcommand("infer", "write PFM and PNG depth maps for dataset frames");
  add_common(inf, common);
  inf->add_option("--dataset", dataset, "dataset directory")->capture_default_str();
  inf->add_option("--checkpoint", checkpoint, "checkpoint to load")->capture_default_str();
  inf->add_option("--frames", frames, "comma-separated frame indices (default all)");
  inf->add_option("--pred", pred, "prediction output directory")->capture_default_str();

  auto* ev = app.add_subcommand("eval", "median-scaled depth metrics against synthetic ground truth");
  add_common(ev, common);
  ev->add_option("--dataset", dataset, "dataset directory")->capture_default_str();
  ev->add_option("--pred", pred, "directory of predicted PFM depth maps")->capture_default_str();
  ev->add_option("--gt", gt, "synthetic output directory holding depth/")->capture_default_str();
  ev->add_option("--report", report, "metrics JSON path")->capture_default_str();

  auto* ab = app.add_subcommand("ab", "with/without geotag comparison on a two-cluster synthetic dataset");
  add_common(ab, common);
  ab->add_option("--dir", ab_dir, "experiment directory")->capture_default_str();

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) cmd_synth(common, synth_frames, synth_family, out);
    else if (*pre) cmd_preprocess(common, input, dataset, out);
    else if (*tr) cmd_train(common, dataset, checkpoint, loss_log, resume, out);
    else if (*inf) cmd_infer(common, dataset, checkpoint, frames, pred, out);
    else if (*ev) cmd_eval(common, dataset, pred, gt, report, out);
    else if (*ab) cmd_ab(common, ab_dir, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace geodepth::cli

#endif  // GEODEPTH_CLI_HPP
