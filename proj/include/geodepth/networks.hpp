#ifndef GEODEPTH_NETWORKS_HPP
#define GEODEPTH_NETWORKS_HPP

// Toy-scale depth encoder-decoder and pose regressor.
//
// Depth net: encoder stage i is conv3x3 + ELU (stage 0 at full resolution,
// later stages stride 2). The decoder walks back up with nearest-neighbour
// upsampling and skip concatenation; level s < scales emits a sigmoid
// disparity map at 1/2^s resolution.
//
// Pose net: stride-2 conv3x3 + ELU stack over the channel-stacked
// (target, source) pair, global average pool, zero-initialized affine head,
// output scaled by `output_scale` -> (axis_angle, translation).

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "geodepth/autodiff.hpp"
#include "geodepth/errors.hpp"
#include "geodepth/geometry.hpp"
#include "geodepth/rng.hpp"
#include "geodepth/tensor.hpp"

namespace geodepth {

struct DepthNetConfig {
  std::vector<int> widths{16, 32, 64, 128};
  int input_channels = 4;
  int scales = 4;
  int width = 64;
  int height = 48;

  void validate() const {
    if (widths.size() < 2) throw ValidationError("depth net needs at least 2 encoder stages");
    for (int w : widths)
      if (w <= 0) throw ValidationError("depth net widths must be positive");
    if (scales < 1 || scales > static_cast<int>(widths.size())) {
      throw ValidationError("depth net scales must be in [1, number of encoder stages]");
    }
    if (input_channels <= 0) throw ValidationError("depth net input channels must be positive");
    const int div = 1 << (widths.size() - 1);
    if (width <= 0 || height <= 0 || width % div != 0 || height % div != 0) {
      throw ValidationError("image size must be divisible by " + std::to_string(div));
    }
  }
};

struct PoseNetConfig {
  std::vector<int> widths{16, 32, 64};
  int input_channels = 8;
  double output_scale = 0.01;

  void validate() const {
    if (widths.empty()) throw ValidationError("pose net needs at least one conv stage");
    for (int w : widths)
      if (w <= 0) throw ValidationError("pose net widths must be positive");
  }
};

struct ModelConfig {
  DepthNetConfig depth;
  PoseNetConfig pose;
  double min_depth = 0.1;
  double max_depth = 100.0;

  void validate() const {
    depth.validate();
    pose.validate();
    if (!(min_depth > 0 && min_depth < max_depth)) throw ValidationError("need 0 < min_depth < max_depth");
    if (pose.input_channels != 2 * depth.input_channels) {
      throw ValidationError("pose net input must stack two frames");
    }
  }
};

/// Ordered, named parameter arrays.
template <typename T>
class ParamSet {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  void add(std::string name, Tensor<T> value) {
    index_[name] = entries_.size();
    entries_.emplace_back(std::move(name), std::move(value));
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& get(const std::string& name) const { return entries_.at(lookup(name)).second; }
  Tensor<T>& get(const std::string& name) { return entries_.at(lookup(name)).second; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }
  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, t] : entries_) out.add(name, tensor_cast<U>(t));
    return out;
  }

  /// Same names and shapes, all zero.
  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& [name, t] : entries_) out.add(name, Tensor<T>(t.shape()));
    return out;
  }

  bool operator==(const ParamSet& o) const { return entries_ == o.entries_; }

 private:
  std::size_t lookup(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
  }
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

struct NetworkParams {
  std::uint64_t seed = 0;
  ParamSet<float> tensors;
};

namespace detail {

inline void add_conv(ParamSet<float>& ps, Rng& rng, const std::string& name, int out_c, int in_c, int k, bool zero) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_c * k * k));
  Tensor<float> w(Shape{out_c, in_c, k, k});
  Tensor<float> b(Shape{1, out_c, 1, 1});
  if (!zero) {
    for (auto& v : w.values()) v = static_cast<float>(rng.uniform(-bound, bound));
    for (auto& v : b.values()) v = static_cast<float>(rng.uniform(-bound, bound));
  }
  ps.add(name + ".weight", std::move(w));
  ps.add(name + ".bias", std::move(b));
}

inline int decoder_input_channels(const DepthNetConfig& c, int level) {
  const int n = static_cast<int>(c.widths.size());
  return level == n - 1 ? c.widths[n - 1] : c.widths[level + 1] + c.widths[level];
}

}  // namespace detail

/// Deterministic initialization: conv weights and biases uniform in
/// +-1/sqrt(fan_in); the pose head is all zeros.
inline NetworkParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  NetworkParams p;
  p.seed = seed;
  const auto& dc = cfg.depth;
  const int n = static_cast<int>(dc.widths.size());
  for (int i = 0; i < n; ++i) {
    const int in_c = i == 0 ? dc.input_channels : dc.widths[i - 1];
    detail::add_conv(p.tensors, rng, "depth.enc" + std::to_string(i), dc.widths[i], in_c, 3, false);
  }
  for (int i = n - 1; i >= 0; --i) {
    detail::add_conv(p.tensors, rng, "depth.dec" + std::to_string(i), dc.widths[i],
                     detail::decoder_input_channels(dc, i), 3, false);
  }
  for (int s = 0; s < dc.scales; ++s) {
    detail::add_conv(p.tensors, rng, "depth.disp" + std::to_string(s), 1, dc.widths[s], 3, false);
  }
  const auto& pc = cfg.pose;
  for (std::size_t i = 0; i < pc.widths.size(); ++i) {
    const int in_c = i == 0 ? pc.input_channels : pc.widths[i - 1];
    detail::add_conv(p.tensors, rng, "pose.conv" + std::to_string(i), pc.widths[i], in_c, 3, false);
  }
  detail::add_conv(p.tensors, rng, "pose.head", 6, pc.widths.back(), 1, true);
  return p;
}

/// Parameter nodes on a tape, by name.
template <typename T>
class ParamVars {
 public:
  ParamVars(ad::Tape<T>& tape, const ParamSet<T>& params, bool differentiable) {
    for (const auto& [name, t] : params.entries()) {
      vars_.emplace(name, differentiable ? tape.leaf(t) : tape.constant(t));
      order_.push_back(name);
    }
  }
  ad::Var<T> operator[](const std::string& name) const {
    const auto it = vars_.find(name);
    if (it == vars_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
  }
  const std::vector<std::string>& names() const { return order_; }

 private:
  std::map<std::string, ad::Var<T>> vars_;
  std::vector<std::string> order_;
};

namespace detail {
template <typename T>
ad::Var<T> conv_layer(const ParamVars<T>& pv, const std::string& name, ad::Var<T> x, int stride) {
  const ad::Var<T> w = pv[name + ".weight"];
  const int k = w.shape().h;
  return ad::conv2d(x, w, pv[name + ".bias"], stride, k / 2);
}
}  // namespace detail

/// Disparity pyramid on a tape: element s has size H/2^s x W/2^s.
template <typename T>
std::vector<ad::Var<T>> depth_net_forward(const ParamVars<T>& pv, const ModelConfig& cfg, ad::Var<T> frame) {
  const auto& dc = cfg.depth;
  const Shape s = frame.shape();
  if (s.c != dc.input_channels || s.h != dc.height || s.w != dc.width) {
    throw ShapeError("depth net expects (" + std::to_string(dc.input_channels) + "," + std::to_string(dc.height) +
                     "," + std::to_string(dc.width) + ") input, got " + s.str());
  }
  const int n = static_cast<int>(dc.widths.size());
  std::vector<ad::Var<T>> enc;
  ad::Var<T> x = frame;
  for (int i = 0; i < n; ++i) {
    x = ad::elu(detail::conv_layer(pv, "depth.enc" + std::to_string(i), x, i == 0 ? 1 : 2));
    enc.push_back(x);
  }
  std::vector<ad::Var<T>> disp(dc.scales);
  for (int i = n - 1; i >= 0; --i) {
    if (i < n - 1) x = ad::concat_channels(ad::upsample_nearest2x(x), enc[i]);
    x = ad::elu(detail::conv_layer(pv, "depth.dec" + std::to_string(i), x, 1));
    if (i < dc.scales) disp[i] = ad::sigmoid(detail::conv_layer(pv, "depth.disp" + std::to_string(i), x, 1));
  }
  return disp;
}

/// Pose node (1,6,1,1) = (axis_angle, translation) of the motion that maps
/// points from frame_a's camera into frame_b's.
template <typename T>
ad::Var<T> pose_net_forward(const ParamVars<T>& pv, const ModelConfig& cfg, ad::Var<T> frame_a, ad::Var<T> frame_b) {
  const auto& pc = cfg.pose;
  if (!(frame_a.shape() == frame_b.shape())) {
    throw ShapeError("pose net frames differ: " + frame_a.shape().str() + " vs " + frame_b.shape().str());
  }
  ad::Var<T> x = ad::concat_channels(frame_a, frame_b);
  if (x.shape().c != pc.input_channels) throw ShapeError("pose net expects " + std::to_string(pc.input_channels) + " channels");
  for (std::size_t i = 0; i < pc.widths.size(); ++i) {
    x = ad::elu(detail::conv_layer(pv, "pose.conv" + std::to_string(i), x, 2));
  }
  x = ad::global_avg_pool(x);
  x = detail::conv_layer(pv, "pose.head", x, 1);
  return ad::affine(x, static_cast<T>(pc.output_scale), T(0));
}

/// sigma in (0,1) -> depth in [min_depth, max_depth], decreasing in sigma.
inline double disparity_to_depth(double sigma, double min_depth, double max_depth) {
  const double min_disp = 1.0 / max_depth;
  const double max_disp = 1.0 / min_depth;
  return 1.0 / (min_disp + (max_disp - min_disp) * sigma);
}

namespace ad {
template <typename T>
Var<T> disparity_to_depth(Var<T> sigma, double min_depth, double max_depth) {
  const double min_disp = 1.0 / max_depth;
  const double max_disp = 1.0 / min_depth;
  return reciprocal(affine(sigma, static_cast<T>(max_disp - min_disp), static_cast<T>(min_disp)));
}
}  // namespace ad

using DisparityPyramid = std::vector<Tensor<float>>;

template <typename T>
std::vector<Tensor<T>> depth_net_forward(const ParamSet<T>& params, const ModelConfig& cfg, const Tensor<T>& frame) {
  ad::Tape<T> tape;
  ParamVars<T> pv(tape, params, false);
  const auto vars = depth_net_forward(pv, cfg, tape.constant(frame));
  std::vector<Tensor<T>> out;
  for (const auto& v : vars) out.push_back(v.value());
  return out;
}

template <typename T>
Pose pose_net_forward(const ParamSet<T>& params, const ModelConfig& cfg, const Tensor<T>& frame_a,
                      const Tensor<T>& frame_b) {
  ad::Tape<T> tape;
  ParamVars<T> pv(tape, params, false);
  const Tensor<T>& v = pose_net_forward(pv, cfg, tape.constant(frame_a), tape.constant(frame_b)).value();
  return Pose{Vec3{double(v[0]), double(v[1]), double(v[2])}, Vec3{double(v[3]), double(v[4]), double(v[5])}};
}

/// Full-resolution depth map from the finest disparity output.
template <typename T>
Tensor<T> predict_depth(const ParamSet<T>& params, const ModelConfig& cfg, const Tensor<T>& frame) {
  const auto pyramid = depth_net_forward(params, cfg, frame);
  Tensor<T> depth(pyramid.front().shape());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    depth[i] = static_cast<T>(disparity_to_depth(double(pyramid.front()[i]), cfg.min_depth, cfg.max_depth));
  }
  return depth;
}

}  // namespace geodepth

#endif  // GEODEPTH_NETWORKS_HPP
