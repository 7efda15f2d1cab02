#ifndef GEODEPTH_OBJECTIVE_HPP
#define GEODEPTH_OBJECTIVE_HPP

// View-synthesis objective: target frame t is reconstructed from t-1 and t+1
// through the predicted depth and poses; the loss is the per-pixel minimum
// photometric error over sources, auto-masked against the unwarped sources,
// plus an edge-aware disparity smoothness term at every output scale.

#include <cmath>
#include <limits>
#include <vector>

#include "geodepth/autodiff.hpp"
#include "geodepth/dataset.hpp"
#include "geodepth/errors.hpp"
#include "geodepth/geometry.hpp"
#include "geodepth/networks.hpp"
#include "geodepth/tensor.hpp"
#include "geodepth/warp.hpp"

namespace geodepth {

struct LossWeights {
  double ssim_alpha = 0.85;
  double smoothness_lambda = 1e-3;
  int scales = 4;
  bool automask = true;

  void validate() const {
    if (!(ssim_alpha >= 0 && ssim_alpha <= 1)) throw ValidationError("ssim_alpha must be in [0, 1]");
    if (!(smoothness_lambda >= 0)) throw ValidationError("smoothness_lambda must be non-negative");
    if (scales < 1) throw ValidationError("scales must be >= 1");
  }
};

/// Per-step loss breakdown. total = photometric + smoothness_lambda * smoothness.
struct LossReport {
  double total = 0;
  double photometric = 0;
  double smoothness = 0;
  double mask_fraction = 0;  // fraction of pixels excluded from the photometric mean
  bool all_masked = false;   // some scale had no pixel left to supervise
};

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace ad {

/// Channel-averaged SSIM over 3x3 reflect-padded windows: (1,1,H,W).
template <typename T>
Var<T> ssim_map(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "ssim_map");
  Tape<T>& tape = *a.tape;
  const Shape s = a.shape();
  auto constant = [&](double v) { return tape.constant(Tensor<T>(s, static_cast<T>(v))); };
  const Var<T> mu_a = avg_pool3x3(a);
  const Var<T> mu_b = avg_pool3x3(b);
  const Var<T> mu_a2 = mul(mu_a, mu_a);
  const Var<T> mu_b2 = mul(mu_b, mu_b);
  const Var<T> mu_ab = mul(mu_a, mu_b);
  const Var<T> sigma_a = sub(avg_pool3x3(mul(a, a)), mu_a2);
  const Var<T> sigma_b = sub(avg_pool3x3(mul(b, b)), mu_b2);
  const Var<T> sigma_ab = sub(avg_pool3x3(mul(a, b)), mu_ab);
  const Var<T> num = mul(add(affine(mu_ab, T(2), T(0)), constant(kSsimC1)), add(affine(sigma_ab, T(2), T(0)), constant(kSsimC2)));
  const Var<T> den = mul(add(add(mu_a2, mu_b2), constant(kSsimC1)), add(add(sigma_a, sigma_b), constant(kSsimC2)));
  return channel_mean(div(num, den));
}

/// alpha/2 (1 - SSIM) + (1 - alpha) |pred - target|, channel-averaged. Both
/// inputs must already be restricted to RGB.
template <typename T>
Var<T> photometric_error(Var<T> pred, Var<T> target, double alpha) {
  require_same_shape(pred.shape(), target.shape(), "photometric_error");
  const Var<T> dssim = affine(ssim_map(pred, target), static_cast<T>(-alpha / 2), static_cast<T>(alpha / 2));
  const Var<T> l1 = channel_mean(abs(sub(pred, target)));
  return add(dssim, affine(l1, static_cast<T>(1 - alpha), T(0)));
}

template <typename T>
struct MinReprojection {
  Var<T> error;     // (1,1,H,W)
  Tensor<T> mask;   // 1 = supervised pixel
};

/// Pointwise minimum over per-source errors (sources invalid at a pixel are
/// skipped there). With automasking, a pixel is kept only when its minimum
/// warped error is strictly below the minimum identity (unwarped) error.
template <typename T>
MinReprojection<T> min_reprojection_with_automask(const std::vector<Var<T>>& errors,
                                                  const std::vector<Tensor<T>>& identity_errors,
                                                  const std::vector<Tensor<T>>& validity, bool automask) {
  if (errors.empty()) throw ValidationError("min_reprojection needs at least one source");
  if (automask && identity_errors.size() != errors.size()) {
    throw ValidationError("min_reprojection: one identity error per source required");
  }
  if (!validity.empty() && validity.size() != errors.size()) {
    throw ValidationError("min_reprojection: one validity mask per source required");
  }
  const Shape s = errors.front().shape();
  for (const auto& e : errors) require_same_shape(e.shape(), s, "min_reprojection");
  const std::size_t n = s.size();
  Tensor<T> out(s);
  Tensor<T> mask(s);
  std::vector<int> argmin(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    int best = -1;
    bool any_valid = false;
    for (std::size_t k = 0; k < errors.size(); ++k) {
      const bool valid = validity.empty() || validity[k][i] > T(0);
      if (!valid) continue;
      if (!any_valid || errors[k].value()[i] < errors[best].value()[i]) best = static_cast<int>(k);
      any_valid = true;
    }
    if (!any_valid) {
      best = 0;
      for (std::size_t k = 1; k < errors.size(); ++k)
        if (errors[k].value()[i] < errors[best].value()[i]) best = static_cast<int>(k);
    }
    argmin[i] = best;
    out[i] = errors[best].value()[i];
    bool keep = any_valid;
    if (keep && automask) {
      T min_identity = identity_errors[0][i];
      for (std::size_t k = 1; k < identity_errors.size(); ++k) min_identity = std::min(min_identity, identity_errors[k][i]);
      keep = out[i] < min_identity;
    }
    mask[i] = keep ? T(1) : T(0);
  }
  Tape<T>& tape = *errors.front().tape;
  Var<T> v = tape.record(std::move(out), errors, [errors, argmin](Tape<T>& tp, const Tensor<T>& g) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Var<T>& src = errors[argmin[i]];
      if (tp.requires_grad(src.id)) tp.grad(src.id)[i] += g[i];
    }
  });
  return MinReprojection<T>{v, std::move(mask)};
}

/// mean |dx d*| exp(-|dx I|) + mean |dy d*| exp(-|dy I|), d* = d / (mean d + 1e-7),
/// image gradients averaged over channels.
template <typename T>
Var<T> edge_aware_smoothness(Var<T> disp, const Tensor<T>& image) {
  const Shape ds = disp.shape();
  if (ds.c != 1 || ds.h != image.height() || ds.w != image.width()) {
    throw ShapeError("edge_aware_smoothness: disparity " + ds.str() + " vs image " + image.shape().str());
  }
  Tape<T>& tape = *disp.tape;
  const Var<T> normalized = div_by_scalar(disp, mean(disp), static_cast<T>(1e-7));

  auto edge_weight = [&](bool along_x) {
    const int h = along_x ? image.height() : image.height() - 1;
    const int w = along_x ? image.width() - 1 : image.width();
    Tensor<T> wt(image_shape(1, h, w));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        T acc = 0;
        for (int c = 0; c < image.channels(); ++c) {
          const T d = along_x ? image.at(c, y, x + 1) - image.at(c, y, x) : image.at(c, y + 1, x) - image.at(c, y, x);
          acc += std::abs(d);
        }
        wt.at(0, y, x) = std::exp(-acc / static_cast<T>(image.channels()));
      }
    return tape.constant(std::move(wt));
  };
  Var<T> total = tape.constant(Tensor<T>(Shape{1, 1, 1, 1}));
  if (ds.w > 1) total = add(total, mean(mul(abs(diff_x(normalized)), edge_weight(true))));
  if (ds.h > 1) total = add(total, mean(mul(abs(diff_y(normalized)), edge_weight(false))));
  return total;
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Plain-tensor entry points

template <typename T>
Tensor<T> ssim_map(const Tensor<T>& a, const Tensor<T>& b) {
  ad::Tape<T> tape;
  return ad::ssim_map(tape.constant(a), tape.constant(b)).value();
}

/// Photometric error map over the RGB channels of pred/target.
template <typename T>
Tensor<T> photometric_error(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& w) {
  require_same_shape(pred.shape(), target.shape(), "photometric_error");
  const int c = std::min(3, pred.channels());
  ad::Tape<T> tape;
  return ad::photometric_error(tape.constant(slice_channels(pred, 0, c)), tape.constant(slice_channels(target, 0, c)),
                               w.ssim_alpha)
      .value();
}

template <typename T>
struct MinReprojectionResult {
  Tensor<T> error;
  Tensor<T> mask;
};

template <typename T>
MinReprojectionResult<T> min_reprojection_with_automask(const std::vector<Tensor<T>>& errors,
                                                        const std::vector<Tensor<T>>& identity_errors,
                                                        bool automask = true) {
  ad::Tape<T> tape;
  std::vector<ad::Var<T>> vars;
  for (const auto& e : errors) vars.push_back(tape.constant(e));
  auto r = ad::min_reprojection_with_automask(vars, identity_errors, {}, automask);
  return MinReprojectionResult<T>{r.error.value(), std::move(r.mask)};
}

template <typename T>
T edge_aware_smoothness(const Tensor<T>& disp, const Tensor<T>& image) {
  ad::Tape<T> tape;
  return ad::edge_aware_smoothness(tape.constant(disp), image).value()[0];
}

// ---------------------------------------------------------------------------
// Total loss

template <typename T>
struct LossOutput {
  ad::Var<T> loss;
  LossReport report;
};

/// Builds the full objective for one triplet on `pv`'s tape.
template <typename T>
LossOutput<T> compute_total_loss(const ParamVars<T>& pv, ad::Tape<T>& tape, const ModelConfig& cfg,
                                 const TripletTensors<T>& frames, const CameraIntrinsics& k, const LossWeights& w) {
  w.validate();
  if (w.scales > cfg.depth.scales) throw ValidationError("loss scales exceed network output scales");
  const ad::Var<T> target = tape.constant(frames.target);
  const ad::Var<T> prev = tape.constant(frames.prev);
  const ad::Var<T> next = tape.constant(frames.next);
  const auto disparities = depth_net_forward(pv, cfg, target);
  const ad::Var<T> pose_prev = pose_net_forward(pv, cfg, target, prev);
  const ad::Var<T> pose_next = pose_net_forward(pv, cfg, target, next);

  const Tensor<T> rgb_target = slice_channels(frames.target, 0, 3);
  const std::vector<Tensor<T>> rgb_sources{slice_channels(frames.prev, 0, 3), slice_channels(frames.next, 0, 3)};
  const std::vector<ad::Var<T>> poses{pose_prev, pose_next};
  const ad::Var<T> target_var = tape.constant(rgb_target);

  std::vector<Tensor<T>> identity;
  for (const auto& src : rgb_sources) {
    identity.push_back(ad::photometric_error(tape.constant(src), target_var, w.ssim_alpha).value());
  }

  const int h = frames.target.height();
  const int wd = frames.target.width();
  LossReport report;
  std::vector<ad::Var<T>> photo_terms;
  std::vector<ad::Var<T>> smooth_terms;
  double masked_total = 0;
  for (int s = 0; s < w.scales; ++s) {
    const ad::Var<T> disp_full = ad::resize_bilinear(disparities[s], h, wd);
    const ad::Var<T> depth = ad::disparity_to_depth(disp_full, cfg.min_depth, cfg.max_depth);
    std::vector<ad::Var<T>> errors;
    std::vector<Tensor<T>> valid;
    for (std::size_t src = 0; src < rgb_sources.size(); ++src) {
      auto warped = ad::inverse_warp(rgb_sources[src], depth, poses[src], k);
      errors.push_back(ad::photometric_error(warped.image, target_var, w.ssim_alpha));
      valid.push_back(std::move(warped.mask));
    }
    auto reproj = ad::min_reprojection_with_automask(errors, identity, valid, w.automask);
    double kept = 0;
    for (T m : reproj.mask.values()) kept += double(m);
    if (kept == 0) report.all_masked = true;
    masked_total += 1.0 - kept / static_cast<double>(reproj.mask.size());
    photo_terms.push_back(ad::masked_mean(reproj.error, reproj.mask));

    const int factor = 1 << s;
    const Tensor<T> image_s = downsample_area(rgb_target, factor);
    const ad::Var<T> smooth = ad::edge_aware_smoothness(disparities[s], image_s);
    smooth_terms.push_back(ad::affine(smooth, static_cast<T>(1.0 / factor), T(0)));
  }

  const T inv_scales = static_cast<T>(1.0 / w.scales);
  ad::Var<T> photo_sum = photo_terms.front();
  ad::Var<T> smooth_sum = smooth_terms.front();
  for (int s = 1; s < w.scales; ++s) {
    photo_sum = ad::add(photo_sum, photo_terms[s]);
    smooth_sum = ad::add(smooth_sum, smooth_terms[s]);
  }
  const ad::Var<T> photometric = ad::affine(photo_sum, inv_scales, T(0));
  const ad::Var<T> smoothness = ad::affine(smooth_sum, inv_scales, T(0));
  const ad::Var<T> total = ad::add(photometric, ad::affine(smoothness, static_cast<T>(w.smoothness_lambda), T(0)));

  report.photometric = double(photometric.value()[0]);
  report.smoothness = double(smoothness.value()[0]);
  report.total = double(total.value()[0]);
  report.mask_fraction = masked_total / w.scales;
  return LossOutput<T>{total, report};
}

template <typename T>
struct LossAndGradient {
  LossReport report;
  ParamSet<T> gradient;
};

/// Loss report and d(total)/d(parameter) for one triplet.
template <typename T>
LossAndGradient<T> loss_and_gradient(const ParamSet<T>& params, const ModelConfig& cfg, const TripletTensors<T>& frames,
                                     const CameraIntrinsics& k, const LossWeights& w) {
  ad::Tape<T> tape;
  ParamVars<T> pv(tape, params, true);
  auto out = compute_total_loss(pv, tape, cfg, frames, k, w);
  tape.backward(out.loss);
  LossAndGradient<T> r{out.report, params.zeros_like()};
  for (auto& [name, g] : r.gradient.entries()) {
    const int id = pv[name].id;
    if (tape.has_grad(id)) g = tape.grad(id);
  }
  return r;
}

/// Loss value only (no gradient bookkeeping).
template <typename T>
LossReport evaluate_loss(const ParamSet<T>& params, const ModelConfig& cfg, const TripletTensors<T>& frames,
                         const CameraIntrinsics& k, const LossWeights& w) {
  ad::Tape<T> tape;
  ParamVars<T> pv(tape, params, false);
  return compute_total_loss(pv, tape, cfg, frames, k, w).report;
}

}  // namespace geodepth

#endif  // GEODEPTH_OBJECTIVE_HPP
