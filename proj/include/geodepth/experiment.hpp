#ifndef GEODEPTH_EXPERIMENT_HPP
#define GEODEPTH_EXPERIMENT_HPP

// With/without-location comparison on synthetic data.
//
// Two location clusters share texture statistics but differ in scene
// layout: cluster A views a plane whose top recedes (ground-like), cluster B
// one whose bottom recedes (ceiling-like). Median scaling removes any global
// depth scale at evaluation, so the layout is what location must explain.
// The clusters sit at opposite corners of the geo bounds, so both alpha
// halves carry the cluster identity.
//
// Both arms train from the same seed on the same triplets in the same order;
// only the alpha channel differs (geotag vs constant 0.5).

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodepth/config.hpp"
#include "geodepth/dataset.hpp"
#include "geodepth/metrics.hpp"
#include "geodepth/pipeline.hpp"
#include "geodepth/synthetic.hpp"
#include "geodepth/training.hpp"

namespace geodepth {

struct AbConfig {
  std::uint64_t seed = 0;
  int train_sequences_per_cluster = 2;
  int test_sequences_per_cluster = 1;
  int frames_per_sequence = 52;
  double tilt = 1.0;
  double plane_depth = 5.0;
  double speed = 0.2;
  double cluster_separation = 0.01;  // degrees, in both lat and lon
  int eval_stride = 1;               // every n-th held-out frame

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k{"ab_train_sequences", "ab_test_sequences", "ab_frames_per_sequence",
                                         "ab_tilt",            "ab_plane_depth",    "ab_speed",
                                         "ab_cluster_separation", "ab_eval_stride"};
    return k;
  }

  static AbConfig from_config(const Config& c) {
    AbConfig a;
    a.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
    a.train_sequences_per_cluster = static_cast<int>(c.get_int("ab_train_sequences", a.train_sequences_per_cluster));
    a.test_sequences_per_cluster = static_cast<int>(c.get_int("ab_test_sequences", a.test_sequences_per_cluster));
    a.frames_per_sequence = static_cast<int>(c.get_int("ab_frames_per_sequence", a.frames_per_sequence));
    a.tilt = c.get_double("ab_tilt", a.tilt);
    a.plane_depth = c.get_double("ab_plane_depth", a.plane_depth);
    a.speed = c.get_double("ab_speed", a.speed);
    a.cluster_separation = c.get_double("ab_cluster_separation", a.cluster_separation);
    a.eval_stride = static_cast<int>(c.get_int("ab_eval_stride", a.eval_stride));
    a.validate();
    return a;
  }

  void validate() const {
    if (train_sequences_per_cluster < 1 || test_sequences_per_cluster < 1) {
      throw ValidationError("A/B experiment needs at least one train and one test sequence per cluster");
    }
    if (frames_per_sequence < 3) throw ValidationError("ab_frames_per_sequence must be >= 3");
    if (!(cluster_separation > 0)) throw ValidationError("ab_cluster_separation must be positive");
    if (eval_stride < 1) throw ValidationError("ab_eval_stride must be >= 1");
  }
};

/// FNV-1a over the 8-bit RGB values of the listed frames.
inline std::uint64_t rgb_checksum(const std::vector<Tensor<float>>& frames) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& f : frames) {
    for (int c = 0; c < 3; ++c) {
      for (float v : f.channel(c)) {
        h ^= static_cast<std::uint64_t>(std::lround(static_cast<double>(v) * 255.0));
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

struct AbPlan {
  std::vector<SequencePlan> sequences;
  std::vector<bool> held_out;  // per sequence
  std::vector<int> cluster;    // 0 = A, 1 = B
};

inline AbPlan plan_ab_sequences(const AbConfig& cfg) {
  AbPlan plan;
  int counter = 0;
  for (int split = 0; split < 2; ++split) {
    const int per_cluster = split == 0 ? cfg.train_sequences_per_cluster : cfg.test_sequences_per_cluster;
    for (int i = 0; i < per_cluster; ++i) {
      for (int cluster = 0; cluster < 2; ++cluster) {
        SyntheticSpec spec;
        spec.family = SceneFamily::plane;
        spec.n_frames = cfg.frames_per_sequence;
        spec.plane_depth = cfg.plane_depth;
        spec.tilt = cluster == 0 ? cfg.tilt : -cfg.tilt;
        spec.velocity = Vec3{cfg.speed, 0, 0};
        spec.location.lat0 = 45.0 + cluster * cfg.cluster_separation;
        spec.location.lon0 = 9.0 + cluster * cfg.cluster_separation;
        spec.location.lat_step = 1e-7;
        spec.location.lon_step = 1e-7;
        const std::string label = std::string(cluster == 0 ? "A" : "B") + (split == 0 ? "-train-" : "-test-") +
                                  std::to_string(i);
        plan.sequences.push_back(SequencePlan{spec, derive_seed(cfg.seed, 1000 + counter++), label});
        plan.held_out.push_back(split == 1);
        plan.cluster.push_back(cluster);
      }
    }
  }
  return plan;
}

struct AbArmResult {
  bool geotag_enabled = true;
  MetricsReport metrics;
  std::array<MetricsReport, 2> per_cluster;
  std::uint64_t rgb_checksum = 0;
  LossReport final_loss;
};

struct AbReport {
  AbArmResult geotag_on;
  AbArmResult geotag_off;
  nlohmann::json json;
  bool geotag_not_worse() const { return geotag_on.metrics.abs_rel <= geotag_off.metrics.abs_rel; }
};

/// Synthesizes the two-cluster dataset under out_dir, trains both arms and
/// writes out_dir/report.json. `train_config` supplies the training keys
/// (steps, lr, ...); its seed must equal cfg.seed.
inline AbReport run_ab_experiment(const AbConfig& cfg, const Config& train_config, const std::string& out_dir,
                                  const std::function<void(const std::string&)>& progress = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  const AbPlan plan = plan_ab_sequences(cfg);
  const std::string synth_dir = (fs::path(out_dir) / "synth").string();
  const std::string data_dir = (fs::path(out_dir) / "dataset").string();
  const SyntheticDatasetInfo info = write_synthetic_dataset(plan.sequences, 10.0, cfg.seed, synth_dir);
  const DatasetManifest full = preprocess_directory(synth_dir, PreprocessConfig{}, data_dir);

  auto sequence_of = [&](int source_index) {
    int s = 0;
    while (s + 1 < static_cast<int>(info.first_frame.size()) && source_index >= info.first_frame[s + 1]) ++s;
    return s;
  };
  DatasetManifest train_manifest = full;
  train_manifest.triplets.clear();
  for (const auto& t : full.triplets) {
    if (!plan.held_out[sequence_of(full.frames[t.target].source_index)]) train_manifest.triplets.push_back(t);
  }
  std::vector<int> eval_frames;
  std::array<std::vector<int>, 2> eval_by_cluster;
  int held_out_count = 0;
  for (const auto& f : full.frames) {
    const int s = sequence_of(f.source_index);
    if (!plan.held_out[s]) continue;
    if (held_out_count++ % cfg.eval_stride != 0) continue;
    eval_frames.push_back(f.index);
    eval_by_cluster[plan.cluster[s]].push_back(f.index);
  }

  AbReport report;
  nlohmann::json arms = nlohmann::json::object();
  for (bool geotag : {true, false}) {
    Config c = train_config;
    c.set("geotag", geotag ? "on" : "off");
    const TrainConfig tc = TrainConfig::from_config(c, full.width, full.height);
    if (tc.seed != cfg.seed) throw ValidationError("A/B train config seed differs from experiment seed");
    const std::string arm_name = geotag ? "geotag_on" : "geotag_off";
    const std::string arm_dir = (fs::path(out_dir) / arm_name).string();
    fs::create_directories(arm_dir);
    if (progress) progress("training arm " + arm_name);
    TrainOptions opts;
    opts.checkpoint_path = (fs::path(arm_dir) / "checkpoint.ckpt").string();
    opts.loss_log_path = (fs::path(arm_dir) / "loss_log.csv").string();
    opts.run_config = c.entries();
    const TrainResult tr = train(train_manifest, data_dir, tc, opts);

    AbArmResult arm;
    arm.geotag_enabled = geotag;
    arm.rgb_checksum = rgb_checksum(load_all_frames(full, data_dir, geotag));
    arm.final_loss = tr.reports.empty() ? LossReport{} : tr.reports.back();
    const auto depths = predict_frames(tr.state.params, tc.model, full, data_dir, eval_frames, geotag);
    write_predictions(depths, eval_frames, (fs::path(arm_dir) / "pred").string());
    arm.metrics = evaluate_depths(depths, full, eval_frames, synth_dir).mean;
    for (int cl = 0; cl < 2; ++cl) {
      std::vector<Tensor<float>> sub;
      for (std::size_t i = 0; i < eval_frames.size(); ++i) {
        if (std::find(eval_by_cluster[cl].begin(), eval_by_cluster[cl].end(), eval_frames[i]) != eval_by_cluster[cl].end()) {
          sub.push_back(depths[i]);
        }
      }
      arm.per_cluster[cl] = evaluate_depths(sub, full, eval_by_cluster[cl], synth_dir).mean;
    }
    arms[arm_name] = {{"geotag_enabled", geotag},
                      {"metrics", metrics_to_json(arm.metrics)},
                      {"metrics_cluster_a", metrics_to_json(arm.per_cluster[0])},
                      {"metrics_cluster_b", metrics_to_json(arm.per_cluster[1])},
                      {"rgb_checksum", arm.rgb_checksum},
                      {"final_loss", arm.final_loss.total},
                      {"steps", tc.steps}};
    (geotag ? report.geotag_on : report.geotag_off) = arm;
  }

  const auto& on = report.geotag_on.metrics;
  const auto& off = report.geotag_off.metrics;
  nlohmann::json echo = train_config.entries();
  report.json = {{"seed", cfg.seed},
                 {"config", echo},
                 {"experiment",
                  {{"train_sequences_per_cluster", cfg.train_sequences_per_cluster},
                   {"test_sequences_per_cluster", cfg.test_sequences_per_cluster},
                   {"frames_per_sequence", cfg.frames_per_sequence},
                   {"tilt", cfg.tilt},
                   {"plane_depth", cfg.plane_depth},
                   {"speed", cfg.speed},
                   {"cluster_separation", cfg.cluster_separation},
                   {"train_triplets", train_manifest.triplets.size()},
                   {"eval_frames", eval_frames.size()}}},
                 {"arms", arms},
                 {"delta",
                  {{"abs_rel", on.abs_rel - off.abs_rel},
                   {"rmse", on.rmse - off.rmse},
                   {"delta1", on.delta1 - off.delta1}}},
                 {"rgb_inputs_identical", report.geotag_on.rgb_checksum == report.geotag_off.rgb_checksum},
                 {"geotag_abs_rel_not_worse", report.geotag_not_worse()}};
  std::ofstream((fs::path(out_dir) / "report.json").string()) << report.json.dump(2) << "\n";
  return report;
}

}  // namespace geodepth

#endif  // GEODEPTH_EXPERIMENT_HPP
