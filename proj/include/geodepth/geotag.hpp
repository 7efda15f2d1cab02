#ifndef GEODEPTH_GEOTAG_HPP
#define GEODEPTH_GEOTAG_HPP

// Location logs, frame/fix matching, and the alpha-channel geotag.
//
// Geotag layout: the alpha plane is split at column width/2. Every pixel of
// the left half stores the quantized latitude, every pixel of the right half
// the quantized longitude, each normalized to the dataset's GeoBounds and
// rounded half-up to 8 bits.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "geodepth/errors.hpp"

namespace geodepth {

struct LocationFix {
  double timestamp = 0;  // seconds
  double lat = 0;        // degrees
  double lon = 0;        // degrees
  bool operator==(const LocationFix&) const = default;
};

struct GeoBounds {
  double lat_min = 0;
  double lat_max = 0;
  double lon_min = 0;
  double lon_max = 0;

  void validate() const {
    if (!(lat_min < lat_max) || !(lon_min < lon_max)) throw ValidationError("geo bounds must have min < max");
  }
  bool contains(double lat, double lon) const {
    return lat >= lat_min && lat <= lat_max && lon >= lon_min && lon <= lon_max;
  }
  bool operator==(const GeoBounds&) const = default;
};

/// 8-bit alpha plane, row-major H x W.
struct AlphaPlane {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;

  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const AlphaPlane&) const = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

/// Parses `timestamp_s,lat_deg,lon_deg` rows (header optional, blank lines
/// ignored). Result is sorted by timestamp; duplicate timestamps are rejected.
inline std::vector<LocationFix> parse_location_csv(std::string_view text) {
  std::vector<LocationFix> fixes;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool first_content = true;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = detail::trim(raw);
    if (line.empty()) continue;
    const auto fields = detail::split_csv(line);
    LocationFix f;
    const bool numeric = fields.size() == 3 && detail::parse_double(fields[0], f.timestamp) &&
                         detail::parse_double(fields[1], f.lat) && detail::parse_double(fields[2], f.lon);
    if (!numeric) {
      if (first_content && fields.size() == 3 && !detail::parse_double(fields[0], f.timestamp)) {
        first_content = false;  // header row
        continue;
      }
      throw ParseError("expected timestamp_s,lat_deg,lon_deg", line_no);
    }
    first_content = false;
    if (f.lat < -90.0 || f.lat > 90.0) {
      throw ValidationError("line " + std::to_string(line_no) + ": latitude out of range [-90, 90]");
    }
    if (f.lon < -180.0 || f.lon > 180.0) {
      throw ValidationError("line " + std::to_string(line_no) + ": longitude out of range [-180, 180]");
    }
    fixes.push_back(f);
  }
  std::stable_sort(fixes.begin(), fixes.end(),
                   [](const LocationFix& a, const LocationFix& b) { return a.timestamp < b.timestamp; });
  for (std::size_t i = 1; i < fixes.size(); ++i) {
    if (fixes[i].timestamp == fixes[i - 1].timestamp) {
      throw ValidationError("duplicate location timestamp " + std::to_string(fixes[i].timestamp));
    }
  }
  return fixes;
}

inline std::vector<LocationFix> parse_location_log(const std::string& path) {
  return parse_location_csv(detail::read_text_file(path));
}

/// Min/max over the fixes, widened by margin_frac of the range on each side.
/// A zero range is widened to 2e-4 degrees around the value.
inline GeoBounds compute_bounds(const std::vector<LocationFix>& fixes, double margin_frac) {
  if (fixes.empty()) throw ValidationError("compute_bounds: no location fixes");
  if (!(margin_frac >= 0)) throw ValidationError("compute_bounds: margin must be non-negative");
  constexpr double kDegenerateHalfWidth = 1e-4;
  auto span = [&](auto member, double& lo, double& hi) {
    lo = hi = fixes.front().*member;
    for (const auto& f : fixes) {
      lo = std::min(lo, f.*member);
      hi = std::max(hi, f.*member);
    }
    const double range = hi - lo;
    if (range <= 0.0) {
      lo -= kDegenerateHalfWidth;
      hi += kDegenerateHalfWidth;
    } else {
      lo -= margin_frac * range;
      hi += margin_frac * range;
    }
  };
  GeoBounds b;
  span(&LocationFix::lat, b.lat_min, b.lat_max);
  span(&LocationFix::lon, b.lon_min, b.lon_max);
  return b;
}

struct FrameFixMatch {
  std::size_t frame_index = 0;
  std::size_t fix_index = 0;
  bool operator==(const FrameFixMatch&) const = default;
};

/// Assigns each frame the fix nearest in time (ties go to the earlier fix).
/// Frames whose nearest fix is further than `tolerance` are left out.
inline std::vector<FrameFixMatch> match_frames_to_fixes(const std::vector<double>& frame_timestamps,
                                                        const std::vector<LocationFix>& fixes, double tolerance) {
  for (std::size_t i = 1; i < fixes.size(); ++i) {
    if (!(fixes[i - 1].timestamp < fixes[i].timestamp)) {
      throw ValidationError("match_frames_to_fixes: fixes must be strictly increasing in time");
    }
  }
  std::vector<FrameFixMatch> out;
  if (fixes.empty()) return out;
  for (std::size_t fi = 0; fi < frame_timestamps.size(); ++fi) {
    const double t = frame_timestamps[fi];
    const auto it = std::lower_bound(fixes.begin(), fixes.end(), t,
                                     [](const LocationFix& f, double v) { return f.timestamp < v; });
    std::size_t best = 0;
    double best_dt = 0;
    bool found = false;
    if (it != fixes.begin()) {
      best = static_cast<std::size_t>(std::prev(it) - fixes.begin());
      best_dt = t - fixes[best].timestamp;
      found = true;
    }
    if (it != fixes.end()) {
      const double dt = it->timestamp - t;
      if (!found || dt < best_dt) {
        best = static_cast<std::size_t>(it - fixes.begin());
        best_dt = dt;
        found = true;
      }
    }
    if (found && best_dt <= tolerance) out.push_back(FrameFixMatch{fi, best});
  }
  return out;
}

/// Round-half-up of value * 255 for value in [0, 1]. Products within 1e-9 of
/// a .5 boundary count as ties, so decimal inputs such as 30.05 within
/// (30.0, 30.1) quantize the way they read.
inline std::uint8_t quantize_unit(double unit) {
  const double scaled = unit * 255.0;
  const double q = std::floor(scaled + 0.5 + 1e-9);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

inline AlphaPlane encode_location_alpha(double lat, double lon, const GeoBounds& bounds, int width, int height) {
  bounds.validate();
  if (width < 2 || height < 1) throw ValidationError("alpha plane needs width >= 2 and height >= 1");
  if (!bounds.contains(lat, lon)) {
    throw ValidationError("location fix outside geo bounds; recompute bounds for this log");
  }
  const std::uint8_t q_lat = quantize_unit((lat - bounds.lat_min) / (bounds.lat_max - bounds.lat_min));
  const std::uint8_t q_lon = quantize_unit((lon - bounds.lon_min) / (bounds.lon_max - bounds.lon_min));
  AlphaPlane plane{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height)};
  const int split = width / 2;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) plane.values[static_cast<std::size_t>(y) * width + x] = x < split ? q_lat : q_lon;
  return plane;
}

struct DecodedLocation {
  double lat = 0;
  double lon = 0;
};

/// Inverse of encode_location_alpha. Throws IntegrityError when either half
/// is not constant.
inline DecodedLocation decode_location_alpha(const AlphaPlane& plane, const GeoBounds& bounds) {
  bounds.validate();
  if (plane.width < 2 || plane.height < 1 ||
      plane.values.size() != static_cast<std::size_t>(plane.width) * plane.height) {
    throw IntegrityError("alpha plane has inconsistent dimensions");
  }
  const int split = plane.width / 2;
  const std::uint8_t q_lat = plane.at(0, 0);
  const std::uint8_t q_lon = plane.at(0, plane.width - 1);
  for (int y = 0; y < plane.height; ++y)
    for (int x = 0; x < plane.width; ++x) {
      const std::uint8_t expect = x < split ? q_lat : q_lon;
      if (plane.at(y, x) != expect) {
        throw IntegrityError(std::string("geotag corrupted: ") + (x < split ? "latitude" : "longitude") +
                             " half is not constant");
      }
    }
  return DecodedLocation{bounds.lat_min + (q_lat / 255.0) * (bounds.lat_max - bounds.lat_min),
                         bounds.lon_min + (q_lon / 255.0) * (bounds.lon_max - bounds.lon_min)};
}

}  // namespace geodepth

#endif  // GEODEPTH_GEOTAG_HPP
