#ifndef GEODEPTH_DATASET_HPP
#define GEODEPTH_DATASET_HPP

// Preprocessing: frame sampling, geotag assembly, triplet indexing and
// tensor loading.
//
// Dataset layout on disk:
//   frames/%06d.png   RGBA, 8-bit, alpha = geotag
//   manifest.json     frame records, triplets, intrinsics, bounds, scheme
//   timestamps.csv    index,timestamp_s

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodepth/config.hpp"
#include "geodepth/errors.hpp"
#include "geodepth/geometry.hpp"
#include "geodepth/geotag.hpp"
#include "geodepth/image_io.hpp"
#include "geodepth/tensor.hpp"

namespace geodepth {

inline constexpr const char* kGeotagScheme = "alpha-halves-u8-v1";

struct FrameRecord {
  int index = 0;
  double timestamp = 0;
  std::string image_path;  // relative to the dataset root
  double lat = 0;
  double lon = 0;
  int source_index = 0;    // row of the ingested frame list
  bool operator==(const FrameRecord&) const = default;
};

/// Frame t reconstructed from its neighbours (t-1, t+1).
struct TrainingTriplet {
  int target = 0;
  std::array<int, 2> sources{0, 0};
  bool operator==(const TrainingTriplet&) const = default;
};

struct PreprocessConfig {
  double sampling_interval = 0.5;  // seconds
  double match_tolerance = 0.5;    // seconds
  double bounds_margin = 0.05;     // fraction of the logged range
  double max_gap = 1.0;            // seconds between triplet neighbours
  std::optional<CameraIntrinsics> intrinsics;
  std::optional<GeoBounds> bounds;  // reuse a training dataset's normalization
};

struct DatasetManifest {
  std::vector<FrameRecord> frames;
  std::vector<TrainingTriplet> triplets;
  CameraIntrinsics intrinsics;
  GeoBounds bounds;
  int width = 0;
  int height = 0;
  std::string scheme = kGeotagScheme;
  double sampling_interval = 0.5;
  double match_tolerance = 0.5;
  double bounds_margin = 0.05;
  double max_gap = 1.0;
};

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json intrinsics_to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}
inline CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  CameraIntrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                     j.at("cy").get<double>(), j.at("width").get<int>(), j.at("height").get<int>()};
  k.validate();
  return k;
}
inline nlohmann::json bounds_to_json(const GeoBounds& b) {
  return {{"lat_min", b.lat_min}, {"lat_max", b.lat_max}, {"lon_min", b.lon_min}, {"lon_max", b.lon_max}};
}
inline GeoBounds bounds_from_json(const nlohmann::json& j) {
  GeoBounds b{j.at("lat_min").get<double>(), j.at("lat_max").get<double>(), j.at("lon_min").get<double>(),
              j.at("lon_max").get<double>()};
  b.validate();
  return b;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : m.frames) {
    frames.push_back({{"index", f.index},
                      {"timestamp", f.timestamp},
                      {"image_path", f.image_path},
                      {"lat", f.lat},
                      {"lon", f.lon},
                      {"source_index", f.source_index}});
  }
  nlohmann::json triplets = nlohmann::json::array();
  for (const auto& t : m.triplets) triplets.push_back({{"target", t.target}, {"sources", {t.sources[0], t.sources[1]}}});
  return {{"scheme", m.scheme},
          {"image", {{"width", m.width}, {"height", m.height}}},
          {"intrinsics", intrinsics_to_json(m.intrinsics)},
          {"bounds", bounds_to_json(m.bounds)},
          {"preprocess",
           {{"sampling_interval", m.sampling_interval},
            {"match_tolerance", m.match_tolerance},
            {"bounds_margin", m.bounds_margin},
            {"max_gap", m.max_gap}}},
          {"frames", frames},
          {"triplets", triplets}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.scheme = j.at("scheme").get<std::string>();
    m.width = j.at("image").at("width").get<int>();
    m.height = j.at("image").at("height").get<int>();
    m.intrinsics = intrinsics_from_json(j.at("intrinsics"));
    m.bounds = bounds_from_json(j.at("bounds"));
    const auto& pp = j.at("preprocess");
    m.sampling_interval = pp.at("sampling_interval").get<double>();
    m.match_tolerance = pp.at("match_tolerance").get<double>();
    m.bounds_margin = pp.at("bounds_margin").get<double>();
    m.max_gap = pp.at("max_gap").get<double>();
    for (const auto& f : j.at("frames")) {
      m.frames.push_back(FrameRecord{f.at("index").get<int>(), f.at("timestamp").get<double>(),
                                     f.at("image_path").get<std::string>(), f.at("lat").get<double>(),
                                     f.at("lon").get<double>(), f.at("source_index").get<int>()});
    }
    for (const auto& t : j.at("triplets")) {
      m.triplets.push_back(TrainingTriplet{t.at("target").get<int>(),
                                           {t.at("sources").at(0).get<int>(), t.at("sources").at(1).get<int>()}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
  if (m.scheme != kGeotagScheme) throw ValidationError("unsupported geotag scheme: " + m.scheme);
  const int n = static_cast<int>(m.frames.size());
  for (int i = 0; i < n; ++i) {
    if (m.frames[i].index != i) throw ValidationError("manifest frame indices must be contiguous from 0");
  }
  for (const auto& t : m.triplets) {
    for (int idx : {t.sources[0], t.target, t.sources[1]}) {
      if (idx < 0 || idx >= n) throw ValidationError("manifest triplet references a missing frame");
    }
  }
  return m;
}

inline void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write manifest " + path);
  out << manifest_to_json(m).dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open manifest " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest " + path + ": " + e.what());
  }
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// Operations

/// Greedy subsampling: keep the first frame, then every frame at least
/// `target_interval` after the last kept one.
inline std::vector<std::size_t> sample_frames(const std::vector<double>& timestamps, double target_interval) {
  if (!(target_interval > 0)) throw ValidationError("sampling interval must be positive");
  std::vector<std::size_t> kept;
  if (timestamps.empty()) return kept;
  kept.push_back(0);
  double last = timestamps[0];
  // Tolerance absorbs accumulated decimal error, e.g. 0.1 * 5 vs 0.5.
  constexpr double kSlack = 1e-9;
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (timestamps[i] >= last + target_interval - kSlack) {
      kept.push_back(i);
      last = timestamps[i];
    }
  }
  return kept;
}

/// One triplet per interior frame whose neighbours lie within max_gap.
inline std::vector<TrainingTriplet> build_triplets(const std::vector<FrameRecord>& frames, double max_gap) {
  std::vector<TrainingTriplet> out;
  if (frames.size() < 3) return out;
  for (std::size_t i = 1; i + 1 < frames.size(); ++i) {
    const double before = frames[i].timestamp - frames[i - 1].timestamp;
    const double after = frames[i + 1].timestamp - frames[i].timestamp;
    if (before <= max_gap && after <= max_gap) {
      out.push_back(TrainingTriplet{static_cast<int>(i), {static_cast<int>(i - 1), static_cast<int>(i + 1)}});
    }
  }
  return out;
}

inline std::vector<TrainingTriplet> build_triplets(const DatasetManifest& m) {
  return build_triplets(m.frames, m.max_gap);
}

/// Ingested frames: image files in name order, paired row-by-row with
/// `index,timestamp_s` entries.
struct FrameSource {
  std::vector<std::string> image_paths;
  std::vector<double> timestamps;
};

inline std::vector<std::pair<int, double>> parse_timestamps_csv(std::string_view text) {
  std::vector<std::pair<int, double>> rows;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool first = true;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        detail::trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    double idx = 0;
    double ts = 0;
    if (f.size() != 2 || !detail::parse_double(f[0], idx) || !detail::parse_double(f[1], ts)) {
      if (first) {
        first = false;
        continue;
      }
      throw ParseError("expected index,timestamp_s", line_no);
    }
    first = false;
    rows.emplace_back(static_cast<int>(idx), ts);
  }
  return rows;
}

inline FrameSource read_frame_source(const std::string& frames_dir, const std::string& timestamps_csv) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(frames_dir)) throw LoadError("frame directory not found: " + frames_dir);
  FrameSource src;
  for (const auto& e : fs::directory_iterator(frames_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") src.image_paths.push_back(e.path().string());
  }
  std::sort(src.image_paths.begin(), src.image_paths.end());
  auto rows = parse_timestamps_csv(detail::read_text_file(timestamps_csv));
  std::sort(rows.begin(), rows.end());
  if (rows.size() != src.image_paths.size()) {
    throw ValidationError("timestamps.csv has " + std::to_string(rows.size()) + " rows but " + frames_dir + " has " +
                          std::to_string(src.image_paths.size()) + " PNG frames");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != static_cast<int>(i)) throw ValidationError("timestamps.csv indices must run 0..N-1");
    if (i > 0 && !(rows[i].second > rows[i - 1].second)) {
      throw ValidationError("frame timestamps must be strictly increasing");
    }
    src.timestamps.push_back(rows[i].second);
  }
  return src;
}

inline std::string frame_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.png", index);
  return buf;
}

/// Samples, geotags and writes the dataset under out_dir.
inline DatasetManifest assemble_dataset(const FrameSource& source, const std::vector<LocationFix>& fixes,
                                        const PreprocessConfig& config, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (!config.intrinsics) throw ValidationError("preprocess: camera intrinsics are required");
  const CameraIntrinsics k = *config.intrinsics;
  k.validate();
  if (source.image_paths.size() != source.timestamps.size()) {
    throw ValidationError("preprocess: frame and timestamp counts differ");
  }
  if (fixes.empty()) throw ValidationError("preprocess: location log is empty");

  const auto kept = sample_frames(source.timestamps, config.sampling_interval);
  std::vector<double> kept_ts;
  for (auto i : kept) kept_ts.push_back(source.timestamps[i]);
  const auto matches = match_frames_to_fixes(kept_ts, fixes, config.match_tolerance);
  if (matches.empty()) throw ValidationError("preprocess: no frame matched a location fix");

  const GeoBounds bounds = config.bounds ? *config.bounds : compute_bounds(fixes, config.bounds_margin);
  bounds.validate();

  DatasetManifest m;
  m.intrinsics = k;
  m.bounds = bounds;
  m.width = k.width;
  m.height = k.height;
  m.sampling_interval = config.sampling_interval;
  m.match_tolerance = config.match_tolerance;
  m.bounds_margin = config.bounds_margin;
  m.max_gap = config.max_gap;

  fs::create_directories(fs::path(out_dir) / "frames");
  for (const auto& match : matches) {
    const std::size_t src_row = kept[match.frame_index];
    const LocationFix& fix = fixes[match.fix_index];
    const Image8 rgb = read_png(source.image_paths[src_row], 3);
    if (rgb.width != k.width || rgb.height != k.height) {
      throw ValidationError("frame " + source.image_paths[src_row] + " is " + std::to_string(rgb.width) + "x" +
                            std::to_string(rgb.height) + ", intrinsics expect " + std::to_string(k.width) + "x" +
                            std::to_string(k.height));
    }
    const AlphaPlane alpha = encode_location_alpha(fix.lat, fix.lon, bounds, k.width, k.height);
    Image8 rgba{k.width, k.height, 4, std::vector<std::uint8_t>(static_cast<std::size_t>(k.width) * k.height * 4)};
    for (int y = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x) {
        for (int c = 0; c < 3; ++c) rgba.at(y, x, c) = rgb.at(y, x, c);
        rgba.at(y, x, 3) = alpha.at(y, x);
      }
    const int index = static_cast<int>(m.frames.size());
    const std::string rel = "frames/" + frame_file_name(index);
    write_png((fs::path(out_dir) / rel).string(), rgba);
    m.frames.push_back(FrameRecord{index, source.timestamps[src_row], rel, fix.lat, fix.lon, static_cast<int>(src_row)});
  }
  m.triplets = build_triplets(m);

  write_manifest((fs::path(out_dir) / "manifest.json").string(), m);
  std::ofstream ts((fs::path(out_dir) / "timestamps.csv").string(), std::ios::binary);
  ts << "index,timestamp_s\n";
  char buf[64];
  for (const auto& f : m.frames) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g\n", f.index, f.timestamp);
    ts << buf;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Loading

/// Constant alpha used when geotags are disabled.
inline constexpr float kAblationAlpha = 0.5f;

/// RGBA tensor in [0,1]; with geotags disabled the alpha plane is 0.5.
inline Tensor<float> load_frame(const DatasetManifest& m, const std::string& root, int index, bool geotag_enabled) {
  if (index < 0 || index >= static_cast<int>(m.frames.size())) {
    throw LoadError("frame " + std::to_string(index) + " not in manifest");
  }
  const std::string path = (std::filesystem::path(root) / m.frames[index].image_path).string();
  Image8 img;
  try {
    img = read_png(path, 4);
  } catch (const LoadError& e) {
    throw LoadError("frame " + std::to_string(index) + ": " + e.what());
  }
  if (img.width != m.width || img.height != m.height) {
    throw LoadError("frame " + std::to_string(index) + " (" + path + ") has unexpected size");
  }
  Tensor<float> t = image_to_tensor(img);
  if (!geotag_enabled) {
    for (auto& v : t.channel(3)) v = kAblationAlpha;
  }
  return t;
}

template <typename T>
struct TripletTensors {
  Tensor<T> prev;    // t-1
  Tensor<T> target;  // t
  Tensor<T> next;    // t+1
};

inline TripletTensors<float> load_triplet(const DatasetManifest& m, const std::string& root,
                                          const TrainingTriplet& triplet, bool geotag_enabled) {
  return TripletTensors<float>{load_frame(m, root, triplet.sources[0], geotag_enabled),
                               load_frame(m, root, triplet.target, geotag_enabled),
                               load_frame(m, root, triplet.sources[1], geotag_enabled)};
}

/// Every frame of the dataset, loaded once.
inline std::vector<Tensor<float>> load_all_frames(const DatasetManifest& m, const std::string& root,
                                                  bool geotag_enabled) {
  std::vector<Tensor<float>> frames;
  frames.reserve(m.frames.size());
  for (int i = 0; i < static_cast<int>(m.frames.size()); ++i) frames.push_back(load_frame(m, root, i, geotag_enabled));
  return frames;
}

/// Intrinsics from `fx, fy, cx, cy, width, height` config keys.
inline std::optional<CameraIntrinsics> intrinsics_from_config(const Config& cfg) {
  const char* keys[] = {"fx", "fy", "cx", "cy", "width", "height"};
  bool any = false;
  bool all = true;
  for (const char* key : keys) {
    any = any || cfg.has(key);
    all = all && cfg.has(key);
  }
  if (!any) return std::nullopt;
  if (!all) throw ValidationError("intrinsics need all of fx, fy, cx, cy, width, height");
  CameraIntrinsics k{cfg.get_double("fx", 0), cfg.get_double("fy", 0), cfg.get_double("cx", 0),
                     cfg.get_double("cy", 0), static_cast<int>(cfg.get_int("width", 0)),
                     static_cast<int>(cfg.get_int("height", 0))};
  k.validate();
  return k;
}

}  // namespace geodepth

#endif  // GEODEPTH_DATASET_HPP
