#ifndef GEODEPTH_PIPELINE_HPP
#define GEODEPTH_PIPELINE_HPP

// Stage glue shared by the command-line tool and the experiment harness:
// directory-level preprocessing, depth prediction output and evaluation
// against synthetic ground truth.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "geodepth/checkpoint.hpp"
#include "geodepth/config.hpp"
#include "geodepth/dataset.hpp"
#include "geodepth/image_io.hpp"
#include "geodepth/metrics.hpp"
#include "geodepth/networks.hpp"
#include "geodepth/synthetic.hpp"

namespace geodepth {

inline std::string require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw LoadError("missing input file: " + path);
  return path;
}

/// Preprocesses a capture directory holding frames/, timestamps.csv,
/// locations.csv and (unless `cfg.intrinsics` is set) intrinsics.cfg.
inline DatasetManifest preprocess_directory(const std::string& input_dir, PreprocessConfig cfg,
                                            const std::string& out_dir) {
  namespace fs = std::filesystem;
  const std::string frames = (fs::path(input_dir) / "frames").string();
  const std::string ts = require_file((fs::path(input_dir) / "timestamps.csv").string());
  const std::string loc = require_file((fs::path(input_dir) / "locations.csv").string());
  if (!cfg.intrinsics) {
    cfg.intrinsics = intrinsics_from_config(Config::load(require_file((fs::path(input_dir) / "intrinsics.cfg").string())));
  }
  const FrameSource source = read_frame_source(frames, ts);
  return assemble_dataset(source, parse_location_log(loc), cfg, out_dir);
}

/// Depth from the finest disparity output for each listed manifest frame.
inline std::vector<Tensor<float>> predict_frames(const ParamSet<float>& params, const ModelConfig& model,
                                                 const DatasetManifest& m, const std::string& dataset_root,
                                                 const std::vector<int>& frames, bool geotag_enabled) {
  std::vector<Tensor<float>> out;
  for (int idx : frames) out.push_back(predict_depth(params, model, load_frame(m, dataset_root, idx, geotag_enabled)));
  return out;
}

/// 8-bit disparity visualization: near is bright.
inline Image8 depth_visualization(const Tensor<float>& depth) {
  double lo = 0, hi = 0;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double d = 1.0 / depth[i];
    if (i == 0 || d < lo) lo = d;
    if (i == 0 || d > hi) hi = d;
  }
  Tensor<float> vis(depth.shape());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    vis[i] = hi > lo ? static_cast<float>((1.0 / depth[i] - lo) / (hi - lo)) : 0.5f;
  }
  return tensor_to_image(vis);
}

inline std::string pfm_name(int index) { return depth_file_name(index); }

/// Writes pred/%06d.pfm and pred/%06d.png under out_dir.
inline void write_predictions(const std::vector<Tensor<float>>& depths, const std::vector<int>& frames,
                              const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    write_pfm((fs::path(out_dir) / pfm_name(frames[i])).string(), depths[i]);
    write_png((fs::path(out_dir) / frame_file_name(frames[i])).string(), depth_visualization(depths[i]));
  }
}

/// Ground-truth depth of a manifest frame: gt_dir/depth/<source_index>.pfm.
inline Tensor<float> load_ground_truth(const DatasetManifest& m, const std::string& gt_dir, int frame) {
  const std::string path =
      (std::filesystem::path(gt_dir) / "depth" / depth_file_name(m.frames.at(frame).source_index)).string();
  return read_pfm(require_file(path));
}

struct EvaluationResult {
  MetricsReport mean;
  std::vector<MetricsReport> per_frame;
};

inline EvaluationResult evaluate_depths(const std::vector<Tensor<float>>& depths, const DatasetManifest& m,
                                        const std::vector<int>& frames, const std::string& gt_dir) {
  EvaluationResult r;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    r.per_frame.push_back(depth_metrics(depths[i], load_ground_truth(m, gt_dir, frames[i])));
  }
  r.mean = mean_metrics(r.per_frame);
  return r;
}

inline std::vector<int> all_frames(const DatasetManifest& m) {
  std::vector<int> f(m.frames.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<int>(i);
  return f;
}

}  // namespace geodepth

#endif  // GEODEPTH_PIPELINE_HPP
