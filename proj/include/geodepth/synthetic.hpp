#ifndef GEODEPTH_SYNTHETIC_HPP
#define GEODEPTH_SYNTHETIC_HPP

// Synthetic sequences with analytically known depth and motion.
//
// Each scene is one or two textured planes. A frame is rendered by mapping
// every sub-pixel sample through the inverse plane-induced homography
// H = K [R a | R b | R o + t] to plane coordinates and evaluating a smooth
// procedural texture there. Depth comes from the same plane parameters.
// Nothing here uses the warping code, so renderer and warper can be
// cross-checked against each other.
//
// World frame = camera frame of frame 0. Camera n sits at n * velocity with
// orientation exp(n * angular_velocity) (camera-to-world).

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geodepth/dataset.hpp"
#include "geodepth/errors.hpp"
#include "geodepth/geometry.hpp"
#include "geodepth/geotag.hpp"
#include "geodepth/image_io.hpp"
#include "geodepth/rng.hpp"
#include "geodepth/tensor.hpp"

namespace geodepth {

enum class SceneFamily { plane, corridor };

inline SceneFamily parse_scene_family(const std::string& s) {
  if (s == "plane") return SceneFamily::plane;
  if (s == "corridor") return SceneFamily::corridor;
  throw ValidationError("unknown scene family: " + s + " (expected plane or corridor)");
}

inline std::string to_string(SceneFamily f) { return f == SceneFamily::plane ? "plane" : "corridor"; }

/// Frame index -> location fix: a straight track from (lat0, lon0).
struct LocationRule {
  double lat0 = 45.0;
  double lon0 = 9.0;
  double lat_step = 1e-5;  // degrees per frame
  double lon_step = 1e-5;
  double fix_offset = 0.05;  // seconds between a frame and its fix

  LocationFix at(int frame, double timestamp) const {
    return LocationFix{timestamp + fix_offset, lat0 + lat_step * frame, lon0 + lon_step * frame};
  }
};

struct SyntheticSpec {
  SceneFamily family = SceneFamily::plane;
  int n_frames = 12;
  CameraIntrinsics intrinsics{56, 56, 31.5, 23.5, 64, 48};
  double plane_depth = 5.0;  // depth of the scene along the optical axis of frame 0
  // plane: tan of the tilt about the camera x axis; positive puts the top of
  // the image farther away. 0 = fronto-parallel.
  double tilt = 0.0;
  // corridor: two planes meeting on a vertical line at plane_depth, each
  // receding toward the camera with this slope (|dz/dx|).
  double corridor_slope = 0.6;
  Vec3 velocity{0.2, 0.0, 0.0};      // camera motion per frame, world units
  Vec3 angular_velocity{0, 0, 0};    // axis-angle per frame
  double frame_interval = 0.5;       // seconds
  double start_time = 0.0;
  LocationRule location;
  int texture_terms = 10;
  double min_wavelength = 0.5;  // plane units
  double max_wavelength = 3.0;
  int supersample = 4;
  double min_depth = 0.1;
  double max_depth = 100.0;

  void validate() const {
    intrinsics.validate();
    if (n_frames < 3) throw ValidationError("synthetic sequence needs at least 3 frames");
    if (!(plane_depth > 0)) throw ValidationError("plane_depth must be positive");
    if (!(corridor_slope >= 0)) throw ValidationError("corridor_slope must be >= 0");
    if (!(frame_interval > 0)) throw ValidationError("frame_interval must be positive");
    if (texture_terms < 1) throw ValidationError("texture_terms must be >= 1");
    if (!(min_wavelength > 0 && min_wavelength <= max_wavelength)) {
      throw ValidationError("need 0 < min_wavelength <= max_wavelength");
    }
    if (supersample < 1) throw ValidationError("supersample must be >= 1");
  }
};

/// Ground truth of a rendered sequence.
struct SyntheticScene {
  SceneFamily family = SceneFamily::plane;
  std::uint64_t texture_seed = 0;
  std::vector<Tensor<float>> depth;     // (1,1,H,W) per frame
  std::vector<Pose> camera_to_world;    // per frame
  std::vector<double> timestamps;
  std::vector<LocationFix> fixes;

  /// Motion mapping camera-n coordinates into camera-m coordinates.
  Pose relative_pose(int n, int m) const { return compose(pose_inverse(camera_to_world[m]), camera_to_world[n]); }
};

struct SyntheticSequence {
  std::vector<Tensor<float>> frames;  // RGB (1,3,H,W) in [0,1]
  SyntheticScene scene;
};

namespace detail {

struct Wave {
  double kx, ky, phase, amplitude;
};

/// Smooth band-limited texture, one sum of plane waves per channel,
/// squashed into (0.05, 0.95).
class ProceduralTexture {
 public:
  ProceduralTexture(std::uint64_t seed, int terms, double min_wavelength, double max_wavelength) {
    Rng rng(seed);
    const double amp = 1.5 / std::sqrt(static_cast<double>(terms));
    for (auto& channel : waves_) {
      for (int i = 0; i < terms; ++i) {
        const double wavelength = min_wavelength * std::pow(max_wavelength / min_wavelength, rng.uniform());
        const double angle = rng.uniform(0, std::numbers::pi);
        const double k = 2 * std::numbers::pi / wavelength;
        channel.push_back(Wave{k * std::cos(angle), k * std::sin(angle), rng.uniform(0, 2 * std::numbers::pi), amp});
      }
    }
    offset_ = {rng.uniform(-50, 50), rng.uniform(-50, 50)};
  }

  double eval(int c, double a, double b) const {
    double s = 0;
    for (const auto& w : waves_[c]) s += w.amplitude * std::sin(w.kx * (a + offset_[0]) + w.ky * (b + offset_[1]) + w.phase);
    return 0.5 + 0.45 * std::tanh(s);
  }

 private:
  std::array<std::vector<Wave>, 3> waves_;
  std::array<double, 2> offset_{};
};

/// Textured plane: origin o, orthonormal in-plane axes a, b.
struct ScenePlane {
  Eigen::Vector3d origin, axis_a, axis_b;
  double texture_shift = 0;  // plane-coordinate offset so the two corridor walls differ
};

inline std::vector<ScenePlane> build_planes(const SyntheticSpec& spec) {
  const Eigen::Vector3d o(0, 0, spec.plane_depth);
  if (spec.family == SceneFamily::plane) {
    // z = Z0 - tilt * y: top of the image (y < 0) is farther for tilt > 0.
    const Eigen::Vector3d b = Eigen::Vector3d(0, 1, -spec.tilt).normalized();
    return {ScenePlane{o, Eigen::Vector3d(1, 0, 0), b, 0}};
  }
  // Left wall z = Z0 + s x (x < 0), right wall z = Z0 - s x (x > 0).
  const double s = spec.corridor_slope;
  return {ScenePlane{o, Eigen::Vector3d(1, 0, s).normalized(), Eigen::Vector3d(0, 1, 0), 0},
          ScenePlane{o, Eigen::Vector3d(1, 0, -s).normalized(), Eigen::Vector3d(0, 1, 0), 137.0}};
}

struct PlaneView {
  Eigen::Matrix3d h_inv;        // pixel -> homogeneous plane coords
  Eigen::Matrix3d plane_to_cam;  // plane coords (a, b, 1) -> camera point
};

inline PlaneView plane_view(const ScenePlane& p, const Eigen::Matrix3d& k, const Eigen::Matrix3d& r_wc,
                            const Eigen::Vector3d& t_wc) {
  Eigen::Matrix3d m;
  m.col(0) = r_wc * p.axis_a;
  m.col(1) = r_wc * p.axis_b;
  m.col(2) = r_wc * p.origin + t_wc;
  const Eigen::Matrix3d h = k * m;
  return PlaneView{h.inverse(), m};
}

/// Camera-frame depth of the visible plane point under pixel (u, v), and its
/// plane coordinates. Concave scenes: the visible surface is the nearest
/// positive intersection.
inline bool trace(const std::vector<PlaneView>& views, const std::vector<ScenePlane>& planes, double u, double v,
                  double& depth, double& a, double& b, int& which) {
  bool hit = false;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const Eigen::Vector3d q = views[i].h_inv * Eigen::Vector3d(u, v, 1);
    if (std::abs(q.z()) < 1e-15) continue;
    const double pa = q.x() / q.z();
    const double pb = q.y() / q.z();
    const double z = (views[i].plane_to_cam * Eigen::Vector3d(pa, pb, 1)).z();
    if (!(z > 0)) continue;
    if (!hit || z < depth) {
      depth = z;
      a = pa + planes[i].texture_shift;
      b = pb;
      which = static_cast<int>(i);
      hit = true;
    }
  }
  return hit;
}

inline Eigen::Matrix3d to_eigen(const Mat3& m) {
  Eigen::Matrix3d e;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) e(r, c) = m[r * 3 + c];
  return e;
}

}  // namespace detail

/// Renders one sequence. Bit-identical for equal (spec, seed).
inline SyntheticSequence generate_synthetic_sequence(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto& kin = spec.intrinsics;
  Eigen::Matrix3d k;
  k << kin.fx, 0, kin.cx, 0, kin.fy, kin.cy, 0, 0, 1;
  const auto planes = detail::build_planes(spec);
  const detail::ProceduralTexture texture(derive_seed(seed, 11), spec.texture_terms, spec.min_wavelength,
                                          spec.max_wavelength);

  SyntheticSequence seq;
  seq.scene.family = spec.family;
  seq.scene.texture_seed = seed;
  const int w = kin.width;
  const int h = kin.height;
  const int ss = spec.supersample;
  for (int n = 0; n < spec.n_frames; ++n) {
    Pose c2w;
    for (int i = 0; i < 3; ++i) {
      c2w.translation[i] = spec.velocity[i] * n;
      c2w.axis_angle[i] = spec.angular_velocity[i] * n;
    }
    const Eigen::Vector3d aa(c2w.axis_angle[0], c2w.axis_angle[1], c2w.axis_angle[2]);
    const Eigen::Matrix3d r_cw =
        aa.norm() > 0 ? Eigen::AngleAxisd(aa.norm(), aa.normalized()).toRotationMatrix() : Eigen::Matrix3d::Identity();
    const Eigen::Vector3d c(c2w.translation[0], c2w.translation[1], c2w.translation[2]);
    const Eigen::Matrix3d r_wc = r_cw.transpose();
    const Eigen::Vector3d t_wc = -(r_wc * c);
    std::vector<detail::PlaneView> views;
    for (const auto& p : planes) views.push_back(detail::plane_view(p, k, r_wc, t_wc));

    Tensor<float> rgb(image_shape(3, h, w));
    Tensor<float> depth(image_shape(1, h, w));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double z = 0, a = 0, b = 0;
        int which = 0;
        if (!detail::trace(views, planes, x, y, z, a, b, which)) {
          throw ValidationError("synthetic scene: pixel ray misses every plane");
        }
        if (!(z >= spec.min_depth && z <= spec.max_depth)) {
          throw ValidationError("synthetic scene depth " + std::to_string(z) + " outside [min_depth, max_depth]");
        }
        depth.at(0, y, x) = static_cast<float>(z);
        std::array<double, 3> acc{0, 0, 0};
        for (int sy = 0; sy < ss; ++sy) {
          for (int sx = 0; sx < ss; ++sx) {
            const double u = x - 0.5 + (sx + 0.5) / ss;
            const double v = y - 0.5 + (sy + 0.5) / ss;
            double zs = 0, pa = 0, pb = 0;
            int wh = 0;
            if (!detail::trace(views, planes, u, v, zs, pa, pb, wh)) continue;
            for (int ch = 0; ch < 3; ++ch) acc[ch] += texture.eval(ch, pa, pb);
          }
        }
        for (int ch = 0; ch < 3; ++ch) rgb.at(ch, y, x) = static_cast<float>(acc[ch] / (ss * ss));
      }
    }
    const double ts = spec.start_time + n * spec.frame_interval;
    seq.frames.push_back(std::move(rgb));
    seq.scene.depth.push_back(std::move(depth));
    seq.scene.camera_to_world.push_back(c2w);
    seq.scene.timestamps.push_back(ts);
    seq.scene.fixes.push_back(spec.location.at(n, ts));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// On-disk layout written by write_synthetic_dataset:
//   frames/%06d.png   RGB
//   depth/%06d.pfm    ground-truth depth
//   timestamps.csv    index,timestamp_s
//   locations.csv     timestamp_s,lat_deg,lon_deg
//   poses.csv         index,sequence,rx,ry,rz,tx,ty,tz (camera-to-world)
//   intrinsics.cfg    fx, fy, cx, cy, width, height
//   scene.json        seed and per-sequence description

struct SequencePlan {
  SyntheticSpec spec;
  std::uint64_t seed = 0;
  std::string label;  // free-form tag echoed in scene.json
};

struct SyntheticDatasetInfo {
  int total_frames = 0;
  std::vector<int> first_frame;  // global index of each sequence's first frame
};

inline std::string depth_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.pfm", index);
  return buf;
}

/// Renders the sequences back to back. Each sequence's start time is moved
/// `sequence_gap` seconds past the previous one's last frame so triplets
/// never straddle two sequences.
inline SyntheticDatasetInfo write_synthetic_dataset(const std::vector<SequencePlan>& plans, double sequence_gap,
                                                    std::uint64_t seed, const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (plans.empty()) throw ValidationError("no synthetic sequences requested");
  const CameraIntrinsics k = plans.front().spec.intrinsics;
  for (const auto& p : plans) {
    if (!(p.spec.intrinsics == k)) throw ValidationError("all synthetic sequences must share intrinsics");
  }
  fs::create_directories(fs::path(out_dir) / "frames");
  fs::create_directories(fs::path(out_dir) / "depth");

  std::ofstream ts_out(fs::path(out_dir) / "timestamps.csv");
  std::ofstream loc_out(fs::path(out_dir) / "locations.csv");
  std::ofstream pose_out(fs::path(out_dir) / "poses.csv");
  if (!ts_out || !loc_out || !pose_out) throw Error("cannot write synthetic dataset under " + out_dir);
  ts_out << "index,timestamp_s\n";
  loc_out << "timestamp_s,lat_deg,lon_deg\n";
  pose_out << "index,sequence,rx,ry,rz,tx,ty,tz\n";

  SyntheticDatasetInfo info;
  nlohmann::json seqs = nlohmann::json::array();
  double next_start = 0;
  char buf[256];
  for (std::size_t s = 0; s < plans.size(); ++s) {
    SyntheticSpec spec = plans[s].spec;
    spec.start_time = next_start;
    const auto seq = generate_synthetic_sequence(spec, plans[s].seed);
    info.first_frame.push_back(info.total_frames);
    for (int n = 0; n < spec.n_frames; ++n) {
      const int idx = info.total_frames + n;
      write_png((fs::path(out_dir) / "frames" / frame_file_name(idx)).string(), tensor_to_image(seq.frames[n]));
      write_pfm((fs::path(out_dir) / "depth" / depth_file_name(idx)).string(), seq.scene.depth[n]);
      std::snprintf(buf, sizeof(buf), "%d,%.17g\n", idx, seq.scene.timestamps[n]);
      ts_out << buf;
      const auto& f = seq.scene.fixes[n];
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", f.timestamp, f.lat, f.lon);
      loc_out << buf;
      const auto& p = seq.scene.camera_to_world[n];
      std::snprintf(buf, sizeof(buf), "%d,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", idx, s, p.axis_angle[0],
                    p.axis_angle[1], p.axis_angle[2], p.translation[0], p.translation[1], p.translation[2]);
      pose_out << buf;
    }
    seqs.push_back({{"label", plans[s].label},
                    {"seed", plans[s].seed},
                    {"family", to_string(spec.family)},
                    {"first_frame", info.total_frames},
                    {"frames", spec.n_frames},
                    {"plane_depth", spec.plane_depth},
                    {"tilt", spec.tilt},
                    {"corridor_slope", spec.corridor_slope},
                    {"velocity", spec.velocity},
                    {"angular_velocity", spec.angular_velocity},
                    {"start_time", spec.start_time},
                    {"frame_interval", spec.frame_interval},
                    {"lat0", spec.location.lat0},
                    {"lon0", spec.location.lon0}});
    info.total_frames += spec.n_frames;
    next_start = spec.start_time + (spec.n_frames - 1) * spec.frame_interval + sequence_gap;
  }

  std::ofstream k_out(fs::path(out_dir) / "intrinsics.cfg");
  std::snprintf(buf, sizeof(buf), "fx = %.17g\nfy = %.17g\ncx = %.17g\ncy = %.17g\nwidth = %d\nheight = %d\n", k.fx, k.fy,
                k.cx, k.cy, k.width, k.height);
  k_out << buf;
  const nlohmann::json scene{{"seed", seed}, {"total_frames", info.total_frames}, {"sequences", seqs}};
  std::ofstream(fs::path(out_dir) / "scene.json") << scene.dump(2) << "\n";
  return info;
}

}  // namespace geodepth

#endif  // GEODEPTH_SYNTHETIC_HPP
