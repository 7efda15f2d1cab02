#ifndef GEODEPTH_TRAINING_HPP
#define GEODEPTH_TRAINING_HPP

// Adam training loop over the triplets of a dataset manifest.
//
// Batches come from a stateless stream: sample j of step k sits at stream
// position p = k*B + j, epoch p / N, slot p % N of that epoch's seeded
// permutation. Resuming at any step therefore reproduces the exact batch
// sequence without storing loader state.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "geodepth/checkpoint.hpp"
#include "geodepth/config.hpp"
#include "geodepth/dataset.hpp"
#include "geodepth/errors.hpp"
#include "geodepth/networks.hpp"
#include "geodepth/objective.hpp"
#include "geodepth/rng.hpp"

namespace geodepth {

struct TrainConfig {
  ModelConfig model;
  LossWeights loss;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 4;
  std::int64_t steps = 2000;
  std::int64_t checkpoint_every = 500;
  // Steps at the start of training with automasking off. A zero pose head
  // predicts the identity motion exactly, so every warped error equals its
  // identity error and the strict automask would reject every pixel.
  std::int64_t automask_warmup = 5;
  std::uint64_t seed = 0;
  bool geotag_enabled = true;
  int threads = 1;

  void validate() const {
    model.validate();
    loss.validate();
    if (!(lr >= 0) || !std::isfinite(lr)) throw ValidationError("lr must be finite and >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ValidationError("Adam betas must be in [0, 1)");
    if (!(epsilon > 0)) throw ValidationError("Adam epsilon must be positive");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (steps < 0) throw ValidationError("steps must be >= 0");
    if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
    if (automask_warmup < 0) throw ValidationError("automask_warmup must be >= 0");
    if (threads < 1) throw ValidationError("threads must be >= 1");
  }

  /// Config keys read by from_config.
  static const std::set<std::string>& keys() {
    static const std::set<std::string> k{"lr",          "adam_beta1",       "adam_beta2",     "adam_epsilon",
                                         "batch_size",  "steps",            "checkpoint_every", "automask_warmup",
                                         "seed",        "geotag",           "threads",        "ssim_alpha",
                                         "smoothness_lambda", "scales",     "automask",       "depth_widths",
                                         "pose_widths", "pose_output_scale", "min_depth",     "max_depth"};
    return k;
  }

  /// Model image size comes from the dataset, not the config.
  static TrainConfig from_config(const Config& c, int width, int height) {
    TrainConfig t;
    t.lr = c.get_double("lr", t.lr);
    t.beta1 = c.get_double("adam_beta1", t.beta1);
    t.beta2 = c.get_double("adam_beta2", t.beta2);
    t.epsilon = c.get_double("adam_epsilon", t.epsilon);
    t.batch_size = static_cast<int>(c.get_int("batch_size", t.batch_size));
    t.steps = c.get_int("steps", t.steps);
    t.checkpoint_every = c.get_int("checkpoint_every", t.checkpoint_every);
    t.automask_warmup = c.get_int("automask_warmup", t.automask_warmup);
    t.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
    t.geotag_enabled = c.get_bool("geotag", t.geotag_enabled);
    t.threads = static_cast<int>(c.get_int("threads", t.threads));
    t.loss.ssim_alpha = c.get_double("ssim_alpha", t.loss.ssim_alpha);
    t.loss.smoothness_lambda = c.get_double("smoothness_lambda", t.loss.smoothness_lambda);
    t.loss.automask = c.get_bool("automask", t.loss.automask);
    t.model.depth.widths = c.get_int_list("depth_widths", t.model.depth.widths);
    t.model.depth.scales = static_cast<int>(c.get_int("scales", t.model.depth.scales));
    t.loss.scales = t.model.depth.scales;
    t.model.pose.widths = c.get_int_list("pose_widths", t.model.pose.widths);
    t.model.pose.output_scale = c.get_double("pose_output_scale", t.model.pose.output_scale);
    t.model.min_depth = c.get_double("min_depth", t.model.min_depth);
    t.model.max_depth = c.get_double("max_depth", t.model.max_depth);
    t.model.depth.width = width;
    t.model.depth.height = height;
    t.validate();
    return t;
  }
};

// ---------------------------------------------------------------------------
// One optimizer step

inline LossReport average_reports(const std::vector<LossReport>& reports) {
  LossReport r;
  for (const auto& x : reports) {
    r.total += x.total;
    r.photometric += x.photometric;
    r.smoothness += x.smoothness;
    r.mask_fraction += x.mask_fraction;
    r.all_masked = r.all_masked || x.all_masked;
  }
  const double n = static_cast<double>(reports.size());
  r.total /= n;
  r.photometric /= n;
  r.smoothness /= n;
  r.mask_fraction /= n;
  return r;
}

inline std::string describe(const LossReport& r) {
  std::ostringstream os;
  os << "total=" << r.total << " photometric=" << r.photometric << " smoothness=" << r.smoothness
     << " mask_fraction=" << r.mask_fraction;
  return os.str();
}

/// Loss weights in effect at `step` (automask off during warm-up).
inline LossWeights weights_at(const TrainConfig& cfg, std::int64_t step) {
  LossWeights w = cfg.loss;
  if (step < cfg.automask_warmup) w.automask = false;
  return w;
}

/// Mean gradient over the batch, Adam update, step += 1. Per-sample
/// gradients are reduced in batch order, so the result does not depend on
/// `cfg.threads`.
inline LossReport training_step(TrainingState& state, const std::vector<TripletTensors<float>>& batch,
                                const CameraIntrinsics& k, const TrainConfig& cfg) {
  if (batch.empty()) throw ValidationError("training_step: empty batch");
  const LossWeights w = weights_at(cfg, state.step);
  std::vector<std::optional<LossAndGradient<float>>> results(batch.size());
  std::vector<std::exception_ptr> failures(batch.size());
  auto run = [&](std::size_t i) {
    try {
      results[i] = loss_and_gradient(state.params, cfg.model, batch[i], k, w);
    } catch (...) {
      failures[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), batch.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < batch.size(); i += workers) run(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& f : failures)
    if (f) std::rethrow_exception(f);

  std::vector<LossReport> reports;
  for (const auto& r : results) reports.push_back(r->report);
  const LossReport report = average_reports(reports);
  if (!std::isfinite(report.total) || !std::isfinite(report.photometric) || !std::isfinite(report.smoothness)) {
    throw TrainingError("non-finite loss at step " + std::to_string(state.step) + ": " + describe(report));
  }

  const double t = static_cast<double>(state.step + 1);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  auto& entries = state.params.entries();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    Tensor<float>& p = entries[e].second;
    Tensor<float>& m = state.first_moment.entries()[e].second;
    Tensor<float>& v = state.second_moment.entries()[e].second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double g = 0;
      for (const auto& r : results) g += double(r->gradient.entries()[e].second[i]);
      g *= inv_batch;
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient for " + entries[e].first + " at step " + std::to_string(state.step));
      }
      const double mi = cfg.beta1 * double(m[i]) + (1 - cfg.beta1) * g;
      const double vi = cfg.beta2 * double(v[i]) + (1 - cfg.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = cfg.lr * (mi / correction1) / (std::sqrt(vi / correction2) + cfg.epsilon);
      p[i] = static_cast<float>(double(p[i]) - update);
    }
  }
  ++state.step;
  return report;
}

// ---------------------------------------------------------------------------
// Batch stream

class BatchStream {
 public:
  BatchStream(std::size_t triplet_count, int batch_size, std::uint64_t seed)
      : n_(triplet_count), batch_(batch_size), seed_(seed) {
    if (n_ == 0) throw ValidationError("dataset has no training triplets");
  }

  /// Triplet indices of batch `step`.
  std::vector<std::size_t> batch(std::int64_t step) {
    std::vector<std::size_t> out;
    for (int j = 0; j < batch_; ++j) {
      const std::uint64_t p = static_cast<std::uint64_t>(step) * batch_ + j;
      const std::uint64_t epoch = p / n_;
      if (epoch != cached_epoch_ || order_.empty()) {
        order_ = seeded_permutation(n_, derive_seed(seed_, 0x5348554646ULL + epoch));
        cached_epoch_ = epoch;
      }
      out.push_back(order_[p % n_]);
    }
    return out;
  }

 private:
  std::size_t n_;
  int batch_;
  std::uint64_t seed_;
  std::uint64_t cached_epoch_ = ~0ULL;
  std::vector<std::size_t> order_;
};

// ---------------------------------------------------------------------------
// Loss log

inline constexpr const char* kLossLogHeader = "step,total,photometric,smoothness,mask_fraction";

inline std::string loss_log_row(std::int64_t step, const LossReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(step), r.total, r.photometric,
                r.smoothness, r.mask_fraction);
  return buf;
}

/// Rows of an existing log with step <= `max_step`, header excluded.
inline std::vector<std::string> read_loss_log_prefix(const std::string& path, std::int64_t max_step) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const long long step = std::stoll(line.substr(0, line.find(',')));
    if (step <= max_step) rows.push_back(line);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training driver

struct TrainOptions {
  std::string checkpoint_path;            // written every checkpoint_every steps and at the end
  std::string loss_log_path;              // CSV
  std::optional<std::string> resume_from; // checkpoint to continue from
  std::map<std::string, std::string> run_config;
  std::function<void(std::int64_t, const LossReport&)> on_step;
};

struct TrainResult {
  TrainingState state;
  std::vector<LossReport> reports;  // this run's steps only
};

inline TrainResult train(const DatasetManifest& manifest, const std::string& dataset_root, const TrainConfig& cfg,
                         const TrainOptions& opts) {
  cfg.validate();
  if (manifest.triplets.empty()) throw ValidationError("dataset has no training triplets");
  if (manifest.width != cfg.model.depth.width || manifest.height != cfg.model.depth.height) {
    throw ValidationError("model image size does not match dataset");
  }

  TrainingState state;
  if (opts.resume_from) {
    Checkpoint ck = load_checkpoint(*opts.resume_from);
    if (!(model_config_to_json(ck.model) == model_config_to_json(cfg.model))) {
      throw ValidationError("resume checkpoint model config differs from the requested one");
    }
    if (ck.geotag_enabled != cfg.geotag_enabled) throw ValidationError("resume checkpoint geotag flag differs");
    if (ck.state.seed != cfg.seed) throw ValidationError("resume checkpoint seed differs");
    state = std::move(ck.state);
  } else {
    state = TrainingState::fresh(init_params(cfg.model, derive_seed(cfg.seed, 1)));
    state.seed = cfg.seed;
  }

  const auto frames = load_all_frames(manifest, dataset_root, cfg.geotag_enabled);
  BatchStream stream(manifest.triplets.size(), cfg.batch_size, derive_seed(cfg.seed, 2));

  std::vector<std::string> log_rows;
  if (opts.resume_from && !opts.loss_log_path.empty()) log_rows = read_loss_log_prefix(opts.loss_log_path, state.step);

  auto write_log = [&] {
    if (opts.loss_log_path.empty()) return;
    std::ofstream out(opts.loss_log_path, std::ios::trunc);
    if (!out) throw Error("cannot write loss log " + opts.loss_log_path);
    out << kLossLogHeader << "\n";
    for (const auto& row : log_rows) out << row << "\n";
  };
  auto write_checkpoint = [&] {
    if (opts.checkpoint_path.empty()) return;
    save_checkpoint(opts.checkpoint_path, Checkpoint{cfg.model, state, cfg.geotag_enabled, opts.run_config});
  };

  TrainResult result;
  std::vector<TripletTensors<float>> batch;
  while (state.step < cfg.steps) {
    batch.clear();
    for (std::size_t idx : stream.batch(state.step)) {
      const auto& t = manifest.triplets[idx];
      batch.push_back(TripletTensors<float>{frames[t.sources[0]], frames[t.target], frames[t.sources[1]]});
    }
    const LossReport r = training_step(state, batch, manifest.intrinsics, cfg);
    result.reports.push_back(r);
    log_rows.push_back(loss_log_row(state.step, r));
    if (opts.on_step) opts.on_step(state.step, r);
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.steps) {
      write_checkpoint();
      write_log();
    }
  }
  write_checkpoint();
  write_log();
  result.state = std::move(state);
  return result;
}

}  // namespace geodepth

#endif  // GEODEPTH_TRAINING_HPP
