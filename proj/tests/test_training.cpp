#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "geodepth/pipeline.hpp"
#include "geodepth/synthetic.hpp"
#include "geodepth/training.hpp"
#include "test_support.hpp"

using namespace geodepth;
namespace fs = std::filesystem;

namespace {

const CameraIntrinsics kK{28, 28, 15.5, 11.5, 32, 24};

TrainConfig small_config() {
  TrainConfig c;
  c.model.depth.widths = {8, 16, 16};
  c.model.depth.scales = 3;
  c.model.depth.width = kK.width;
  c.model.depth.height = kK.height;
  c.model.pose.widths = {8, 16};
  c.loss.scales = 3;
  c.batch_size = 2;
  c.steps = 10;
  c.checkpoint_every = 0;
  c.seed = 5;
  return c;
}

/// Small synthetic capture + preprocessed dataset, built once per process.
struct Fixture {
  std::string root;
  DatasetManifest manifest;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture out;
    out.root = oracle::scratch_dir("training");
    SyntheticSpec spec;
    spec.intrinsics = kK;
    spec.n_frames = 8;
    spec.tilt = 1.0;
    spec.supersample = 2;
    write_synthetic_dataset({SequencePlan{spec, 3, "a"}}, 10.0, 3, out.root + "/synth");
    out.manifest = preprocess_directory(out.root + "/synth", PreprocessConfig{}, out.root + "/dataset");
    return out;
  }();
  return f;
}

std::vector<TripletTensors<float>> first_batch(bool geotag = true) {
  const auto& f = fixture();
  std::vector<TripletTensors<float>> b;
  for (int i = 0; i < 2; ++i) b.push_back(load_triplet(f.manifest, f.root + "/dataset", f.manifest.triplets[i], geotag));
  return b;
}

TrainingState fresh_state(const TrainConfig& c) {
  return TrainingState::fresh(init_params(c.model, derive_seed(c.seed, 1)));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(TrainConfigParse, ReadsKeysAndValidates) {
  const Config c = Config::parse("lr = 0.001\nbatch_size = 3\ndepth_widths = 8,16\nscales = 2\ngeotag = false\n");
  const TrainConfig t = TrainConfig::from_config(c, 32, 24);
  EXPECT_EQ(t.lr, 0.001);
  EXPECT_EQ(t.batch_size, 3);
  EXPECT_EQ(t.model.depth.widths, (std::vector<int>{8, 16}));
  EXPECT_EQ(t.loss.scales, 2);
  EXPECT_FALSE(t.geotag_enabled);
  EXPECT_EQ(t.model.depth.width, 32);
  EXPECT_THROW(TrainConfig::from_config(Config::parse("lr = -1\n"), 64, 48), ValidationError);
  EXPECT_THROW(TrainConfig::from_config(Config::parse("batch_size = 0\n"), 64, 48), ValidationError);
  EXPECT_THROW(TrainConfig::from_config(Config::parse("adam_beta1 = 1\n"), 64, 48), ValidationError);
  const TrainConfig d = TrainConfig::from_config(Config{}, 64, 48);
  EXPECT_EQ(d.lr, 1e-4);
  EXPECT_EQ(d.beta1, 0.9);
  EXPECT_EQ(d.beta2, 0.999);
  EXPECT_EQ(d.epsilon, 1e-8);
}

TEST(TrainingStep, ZeroLearningRateLeavesParametersUnchanged) {
  TrainConfig c = small_config();
  c.lr = 0;
  TrainingState s = fresh_state(c);
  const auto before = s.params;
  training_step(s, first_batch(), kK, c);
  EXPECT_TRUE(s.params == before);
  EXPECT_EQ(s.step, 1);
  EXPECT_FALSE(s.first_moment == before.zeros_like());
}

TEST(TrainingStep, DeterministicAndThreadIndependent) {
  TrainConfig c = small_config();
  TrainingState a = fresh_state(c), b = fresh_state(c), t = fresh_state(c);
  const auto batch = first_batch();
  const auto ra = training_step(a, batch, kK, c);
  const auto rb = training_step(b, batch, kK, c);
  c.threads = 2;
  const auto rt = training_step(t, batch, kK, c);
  EXPECT_TRUE(a.params == b.params);
  EXPECT_TRUE(a.first_moment == b.first_moment);
  EXPECT_TRUE(a.params == t.params);
  EXPECT_EQ(ra.total, rb.total);
  EXPECT_EQ(ra.total, rt.total);
}

TEST(TrainingStep, AdamFirstStepMatchesClosedForm) {
  // First bias-corrected step: p -= lr * g / (|g| + eps), g = batch-mean gradient.
  TrainConfig c = small_config();
  c.lr = 1e-3;
  TrainingState s = fresh_state(c);
  const auto before = s.params;
  const auto batch = first_batch();
  std::vector<ParamSet<float>> grads;
  for (const auto& t : batch) grads.push_back(loss_and_gradient(before, c.model, t, kK, weights_at(c, 0)).gradient);
  training_step(s, batch, kK, c);
  int moved = 0;
  for (std::size_t e = 0; e < before.entries().size(); ++e) {
    const auto& p0 = before.entries()[e].second;
    const auto& p1 = s.params.entries()[e].second;
    for (std::size_t i = 0; i < p0.size(); ++i) {
      double g = 0;
      for (const auto& gr : grads) g += double(gr.entries()[e].second[i]);
      g /= double(grads.size());
      const double expect = double(p0[i]) - c.lr * g / (std::fabs(g) + c.epsilon);
      EXPECT_NEAR(double(p1[i]), expect, 1e-7) << before.entries()[e].first << "[" << i << "]";
      if (std::fabs(g) > 1e-6) {
        EXPECT_NEAR(std::fabs(double(p1[i]) - double(p0[i])), c.lr, 2e-5);
        ++moved;
      }
    }
  }
  EXPECT_GT(moved, 100);
}

TEST(TrainingStep, LossDecreasesOnFixedBatch) {
  TrainConfig c = small_config();
  c.lr = 5e-4;
  TrainingState s = fresh_state(c);
  const auto batch = first_batch();
  std::vector<double> totals;
  for (int i = 0; i < 50; ++i) totals.push_back(training_step(s, batch, kK, c).total);
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += totals[5 + i];  // after the automask warm-up
    tail += totals[45 + i];
  }
  EXPECT_LT(tail, head);
}

TEST(TrainingStep, NonFiniteLossAborts) {
  TrainConfig c = small_config();
  TrainingState s = fresh_state(c);
  auto batch = first_batch();
  batch[0].target.at(0, 3, 3) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(training_step(s, batch, kK, c), TrainingError);
  EXPECT_THROW(training_step(s, {}, kK, c), ValidationError);
}

TEST(TrainingStep, AutomaskWarmup) {
  TrainConfig c = small_config();
  EXPECT_FALSE(weights_at(c, 0).automask);
  EXPECT_FALSE(weights_at(c, 4).automask);
  EXPECT_TRUE(weights_at(c, 5).automask);
  c.automask_warmup = 0;
  EXPECT_TRUE(weights_at(c, 0).automask);
}

TEST(BatchStreamOrder, EachEpochIsAPermutation) {
  BatchStream s(7, 3, 42);
  std::vector<std::size_t> seen;
  for (int step = 0; step < 14; ++step)
    for (auto i : s.batch(step)) seen.push_back(i);
  for (int epoch = 0; epoch < 6; ++epoch) {
    std::set<std::size_t> e(seen.begin() + epoch * 7, seen.begin() + epoch * 7 + 7);
    EXPECT_EQ(e.size(), 7u);
  }
  BatchStream again(7, 3, 42);
  EXPECT_EQ(again.batch(9), s.batch(9));  // stateless in the step index
  EXPECT_NE(BatchStream(7, 3, 43).batch(0), BatchStream(7, 3, 42).batch(0));
  EXPECT_THROW(BatchStream(0, 1, 1), ValidationError);
}

TEST(CheckpointFile, RoundTripIsBitExact) {
  TrainConfig c = small_config();
  TrainingState s = fresh_state(c);
  training_step(s, first_batch(), kK, c);
  const std::string dir = oracle::scratch_dir("ckpt");
  save_checkpoint(dir + "/a.ckpt", Checkpoint{c.model, s, false, {{"lr", "0.0001"}}});
  const Checkpoint back = load_checkpoint(dir + "/a.ckpt");
  EXPECT_TRUE(back.state.params == s.params);
  EXPECT_TRUE(back.state.first_moment == s.first_moment);
  EXPECT_TRUE(back.state.second_moment == s.second_moment);
  EXPECT_EQ(back.state.step, 1);
  EXPECT_EQ(back.state.seed, s.seed);
  EXPECT_FALSE(back.geotag_enabled);
  EXPECT_EQ(back.run_config.at("lr"), "0.0001");
  EXPECT_EQ(model_config_to_json(back.model), model_config_to_json(c.model));
  const auto frame = first_batch()[0].target;
  EXPECT_EQ(predict_depth(back.state.params, back.model, frame), predict_depth(s.params, c.model, frame));
  // Saving again yields the same bytes.
  save_checkpoint(dir + "/b.ckpt", back);
  EXPECT_EQ(slurp(dir + "/a.ckpt"), slurp(dir + "/b.ckpt"));
}

TEST(CheckpointFile, CorruptOrMissingIsLoadError) {
  const std::string dir = oracle::scratch_dir("ckpt_bad");
  EXPECT_THROW(load_checkpoint(dir + "/missing.ckpt"), LoadError);
  std::ofstream(dir + "/junk.ckpt") << "definitely not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir + "/junk.ckpt"), LoadError);
  TrainConfig c = small_config();
  save_checkpoint(dir + "/ok.ckpt", Checkpoint{c.model, fresh_state(c), true, {}});
  const std::string bytes = slurp(dir + "/ok.ckpt");
  std::ofstream(dir + "/trunc.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 16);
  EXPECT_THROW(load_checkpoint(dir + "/trunc.ckpt"), LoadError);
}

TEST(Train, OneTripletTenStepsGivesTenRows) {
  const auto& f = fixture();
  DatasetManifest m = f.manifest;
  m.triplets.resize(1);
  TrainConfig c = small_config();
  const std::string dir = oracle::scratch_dir("train_rows");
  TrainOptions o;
  o.checkpoint_path = dir + "/c.ckpt";
  o.loss_log_path = dir + "/log.csv";
  const auto r = train(m, f.root + "/dataset", c, o);
  EXPECT_EQ(r.reports.size(), 10u);
  std::ifstream in(o.loss_log_path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, kLossLogHeader);
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 10);
  EXPECT_EQ(load_checkpoint(o.checkpoint_path).state.step, 10);
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  const auto& f = fixture();
  TrainConfig c = small_config();
  const std::string dir = oracle::scratch_dir("train_resume");
  TrainOptions full;
  full.checkpoint_path = dir + "/full.ckpt";
  full.loss_log_path = dir + "/full.csv";
  train(f.manifest, f.root + "/dataset", c, full);

  TrainConfig first = c;
  first.steps = 4;
  TrainOptions part;
  part.checkpoint_path = dir + "/part.ckpt";
  part.loss_log_path = dir + "/part.csv";
  train(f.manifest, f.root + "/dataset", first, part);
  part.resume_from = part.checkpoint_path;
  train(f.manifest, f.root + "/dataset", c, part);

  EXPECT_EQ(slurp(full.loss_log_path), slurp(part.loss_log_path));
  EXPECT_EQ(slurp(full.checkpoint_path), slurp(part.checkpoint_path));
}

TEST(Train, GeotagFlagRecordedAndResumeMismatchRejected) {
  const auto& f = fixture();
  TrainConfig c = small_config();
  c.steps = 2;
  c.geotag_enabled = false;
  const std::string dir = oracle::scratch_dir("train_flag");
  TrainOptions o;
  o.checkpoint_path = dir + "/c.ckpt";
  train(f.manifest, f.root + "/dataset", c, o);
  EXPECT_FALSE(load_checkpoint(o.checkpoint_path).geotag_enabled);
  c.geotag_enabled = true;
  c.steps = 3;
  o.resume_from = o.checkpoint_path;
  EXPECT_THROW(train(f.manifest, f.root + "/dataset", c, o), ValidationError);
}

TEST(Train, GeotagOffChangesOnlyAlpha) {
  const auto on = first_batch(true), off = first_batch(false);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < kK.height; ++y)
      for (int x = 0; x < kK.width; ++x) ASSERT_EQ(on[0].target.at(c, y, x), off[0].target.at(c, y, x));
  EXPECT_NE(on[0].target.at(3, 0, 0), 0.5f);
}

TEST(Train, EmptyDatasetRejected) {
  DatasetManifest m = fixture().manifest;
  m.triplets.clear();
  EXPECT_THROW(train(m, fixture().root + "/dataset", small_config(), TrainOptions{}), ValidationError);
}
