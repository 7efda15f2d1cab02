#ifndef GEODEPTH_METRICS_HPP
#define GEODEPTH_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodepth/errors.hpp"
#include "geodepth/tensor.hpp"

namespace geodepth {

struct MetricsReport {
  double abs_rel = 0;
  double rmse = 0;
  double delta1 = 0;  // fraction with max(p/g, g/p) < 1.25
  double scale = 1;   // median(gt) / median(pred) applied to pred
};

namespace detail {
inline double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}
}  // namespace detail

/// Median-scaled depth error of `pred` against `gt` over all pixels.
template <typename T>
MetricsReport depth_metrics(const Tensor<T>& pred, const Tensor<T>& gt) {
  require_same_shape(pred.shape(), gt.shape(), "depth_metrics");
  if (gt.empty()) throw ValidationError("depth_metrics: empty maps");
  std::vector<double> p(pred.size());
  std::vector<double> g(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    g[i] = static_cast<double>(gt[i]);
    p[i] = static_cast<double>(pred[i]);
    if (!(g[i] > 0) || !std::isfinite(g[i])) throw ValidationError("depth_metrics: ground truth must be positive");
    if (!(p[i] > 0) || !std::isfinite(p[i])) throw ValidationError("depth_metrics: prediction must be positive");
  }
  MetricsReport r;
  r.scale = detail::median_of(g) / detail::median_of(p);
  double abs_rel = 0, sq = 0, good = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double ps = p[i] * r.scale;
    abs_rel += std::abs(ps - g[i]) / g[i];
    sq += (ps - g[i]) * (ps - g[i]);
    if (std::max(ps / g[i], g[i] / ps) < 1.25) good += 1;
  }
  const double n = static_cast<double>(g.size());
  r.abs_rel = abs_rel / n;
  r.rmse = std::sqrt(sq / n);
  r.delta1 = good / n;
  return r;
}

/// Per-frame metrics averaged field by field.
inline MetricsReport mean_metrics(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ValidationError("no metrics to average");
  MetricsReport m{0, 0, 0, 0};
  for (const auto& r : reports) {
    m.abs_rel += r.abs_rel;
    m.rmse += r.rmse;
    m.delta1 += r.delta1;
    m.scale += r.scale;
  }
  const double n = static_cast<double>(reports.size());
  m.abs_rel /= n;
  m.rmse /= n;
  m.delta1 /= n;
  m.scale /= n;
  return m;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
  return {{"abs_rel", r.abs_rel}, {"rmse", r.rmse}, {"delta1", r.delta1}, {"median_scale", r.scale}};
}

}  // namespace geodepth

#endif  // GEODEPTH_METRICS_HPP
