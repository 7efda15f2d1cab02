#ifndef GEODEPTH_GEOMETRY_HPP
#define GEODEPTH_GEOMETRY_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "geodepth/errors.hpp"

namespace geodepth {

/// Pinhole intrinsics in pixels. Integer pixel coordinates address pixel
/// centres.
struct CameraIntrinsics {
  double fx = 0;
  double fy = 0;
  double cx = 0;
  double cy = 0;
  int width = 0;
  int height = 0;

  void validate() const {
    if (!(fx > 0) || !(fy > 0)) throw ValidationError("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ValidationError("intrinsics: image size must be positive");
    if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height)) {
      throw ValidationError("intrinsics: principal point outside the image");
    }
  }
  bool operator==(const CameraIntrinsics&) const = default;
};

template <typename T>
struct PixelCoord {
  T u = 0;
  T v = 0;
};

template <typename T>
struct Point3 {
  T x = 0;
  T y = 0;
  T z = 0;
};

using Vec3 = std::array<double, 3>;
/// Row-major 3x3.
using Mat3 = std::array<double, 9>;

/// Rigid motion as axis-angle rotation plus translation: X' = R(aa) X + t.
struct Pose {
  Vec3 axis_angle{0, 0, 0};
  Vec3 translation{0, 0, 0};

  static Pose identity() { return Pose{}; }
  bool operator==(const Pose&) const = default;
};

/// Forward-mode dual number with N tangent directions.
template <int N>
struct Jet {
  double a = 0;
  std::array<double, N> v{};

  Jet() = default;
  Jet(double value) : a(value) {}  // NOLINT(google-explicit-constructor)
  static Jet variable(double value, int k) {
    Jet j(value);
    j.v[k] = 1;
    return j;
  }

  friend Jet operator+(const Jet& x, const Jet& y) {
    Jet r(x.a + y.a);
    for (int i = 0; i < N; ++i) r.v[i] = x.v[i] + y.v[i];
    return r;
  }
  friend Jet operator-(const Jet& x, const Jet& y) {
    Jet r(x.a - y.a);
    for (int i = 0; i < N; ++i) r.v[i] = x.v[i] - y.v[i];
    return r;
  }
  friend Jet operator-(const Jet& x) {
    Jet r(-x.a);
    for (int i = 0; i < N; ++i) r.v[i] = -x.v[i];
    return r;
  }
  friend Jet operator*(const Jet& x, const Jet& y) {
    Jet r(x.a * y.a);
    for (int i = 0; i < N; ++i) r.v[i] = x.v[i] * y.a + x.a * y.v[i];
    return r;
  }
  friend Jet operator/(const Jet& x, const Jet& y) {
    Jet r(x.a / y.a);
    for (int i = 0; i < N; ++i) r.v[i] = (x.v[i] - r.a * y.v[i]) / y.a;
    return r;
  }
  friend Jet sin(const Jet& x) {
    Jet r(std::sin(x.a));
    const double d = std::cos(x.a);
    for (int i = 0; i < N; ++i) r.v[i] = d * x.v[i];
    return r;
  }
  friend Jet cos(const Jet& x) {
    Jet r(std::cos(x.a));
    const double d = -std::sin(x.a);
    for (int i = 0; i < N; ++i) r.v[i] = d * x.v[i];
    return r;
  }
  friend Jet sqrt(const Jet& x) {
    Jet r(std::sqrt(x.a));
    const double d = 0.5 / r.a;
    for (int i = 0; i < N; ++i) r.v[i] = d * x.v[i];
    return r;
  }
};

namespace detail {

inline double scalar_value(double x) { return x; }
template <int N>
double scalar_value(const Jet<N>& x) {
  return x.a;
}

/// Rodrigues' formula, R = I + A [w]x + B [w]x^2 with
/// A = sin(th)/th and B = (1 - cos th)/th^2 = 2 sin^2(th/2)/th^2.
template <typename S>
std::array<S, 9> rodrigues(const S& wx, const S& wy, const S& wz) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S th2 = wx * wx + wy * wy + wz * wz;
  S a_coef;
  S b_coef;
  if (scalar_value(th2) < 1e-8) {
    a_coef = S(1.0) - th2 * S(1.0 / 6.0) + th2 * th2 * S(1.0 / 120.0);
    b_coef = S(0.5) - th2 * S(1.0 / 24.0) + th2 * th2 * S(1.0 / 720.0);
  } else {
    const S th = sqrt(th2);
    const S half = sin(th * S(0.5));
    a_coef = sin(th) / th;
    b_coef = S(2.0) * half * half / th2;
  }
  // [w]x and its square
  const std::array<S, 9> k{S(0.0), -wz, wy, wz, S(0.0), -wx, -wy, wx, S(0.0)};
  std::array<S, 9> k2;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      S acc(0.0);
      for (int m = 0; m < 3; ++m) acc = acc + k[r * 3 + m] * k[m * 3 + c];
      k2[r * 3 + c] = acc;
    }
  std::array<S, 9> rot;
  for (int i = 0; i < 9; ++i) {
    const S eye((i % 4 == 0) ? 1.0 : 0.0);
    rot[i] = eye + a_coef * k[i] + b_coef * k2[i];
  }
  return rot;
}

}  // namespace detail

inline Mat3 axis_angle_to_rotation(const Vec3& aa) {
  return detail::rodrigues<double>(aa[0], aa[1], aa[2]);
}

/// Rotation plus its derivatives with respect to each axis-angle component.
struct RotationJacobian {
  Mat3 rotation{};
  std::array<Mat3, 3> d_rotation{};
};

inline RotationJacobian axis_angle_to_rotation_with_jacobian(const Vec3& aa) {
  using J = Jet<3>;
  const auto r = detail::rodrigues<J>(J::variable(aa[0], 0), J::variable(aa[1], 1), J::variable(aa[2], 2));
  RotationJacobian out;
  for (int i = 0; i < 9; ++i) {
    out.rotation[i] = r[i].a;
    for (int k = 0; k < 3; ++k) out.d_rotation[k][i] = r[i].v[k];
  }
  return out;
}

inline Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return r;
}

inline Mat3 transpose(const Mat3& a) {
  return Mat3{a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

inline Vec3 mat_vec(const Mat3& m, const Vec3& x) {
  return Vec3{m[0] * x[0] + m[1] * x[1] + m[2] * x[2], m[3] * x[0] + m[4] * x[1] + m[5] * x[2],
              m[6] * x[0] + m[7] * x[1] + m[8] * x[2]};
}

inline double determinant(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

/// Inverse of Rodrigues, returning the canonical vector with norm in [0, pi].
inline Vec3 rotation_to_axis_angle(const Mat3& r) {
  const double cos_th = std::clamp((r[0] + r[4] + r[8] - 1.0) * 0.5, -1.0, 1.0);
  const Vec3 skew{(r[7] - r[5]) * 0.5, (r[2] - r[6]) * 0.5, (r[3] - r[1]) * 0.5};
  const double sin_th = std::sqrt(skew[0] * skew[0] + skew[1] * skew[1] + skew[2] * skew[2]);
  const double th = std::atan2(sin_th, cos_th);
  if (th < 1e-6) {
    const double f = 1.0 + th * th / 6.0;
    return Vec3{skew[0] * f, skew[1] * f, skew[2] * f};
  }
  if (cos_th > 0) {
    const double f = th / sin_th;
    return Vec3{skew[0] * f, skew[1] * f, skew[2] * f};
  }
  // Obtuse angles: axis from the symmetric part (1 - cos) n n^T, sign from skew.
  const double omc = 1.0 - cos_th;
  double b[9];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) b[i * 3 + j] = (0.5 * (r[i * 3 + j] + r[j * 3 + i]) - (i == j ? cos_th : 0.0)) / omc;
  const int big = b[0] >= b[4] && b[0] >= b[8] ? 0 : (b[4] >= b[8] ? 1 : 2);
  Vec3 n{b[big * 3], b[big * 3 + 1], b[big * 3 + 2]};
  double norm = std::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
  if (n[0] * skew[0] + n[1] * skew[1] + n[2] * skew[2] < 0) norm = -norm;
  return Vec3{n[0] / norm * th, n[1] / norm * th, n[2] / norm * th};
}

/// Precomputed rotation matrix form of a Pose.
struct RigidTransform {
  Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation{0, 0, 0};

  static RigidTransform from_pose(const Pose& p) {
    return RigidTransform{axis_angle_to_rotation(p.axis_angle), p.translation};
  }
  Pose to_pose() const { return Pose{rotation_to_axis_angle(rotation), translation}; }

  template <typename T>
  Point3<T> apply(const Point3<T>& x) const {
    const Vec3 r = mat_vec(rotation, Vec3{double(x.x), double(x.y), double(x.z)});
    return Point3<T>{static_cast<T>(r[0] + translation[0]), static_cast<T>(r[1] + translation[1]),
                     static_cast<T>(r[2] + translation[2])};
  }
};

/// X' = R X + t.
template <typename T>
Point3<T> transform_point(const Pose& pose, const Point3<T>& x) {
  return RigidTransform::from_pose(pose).apply(x);
}

/// compose(a, b) applies b first, then a.
inline Pose compose(const Pose& a, const Pose& b) {
  const Mat3 ra = axis_angle_to_rotation(a.axis_angle);
  const Mat3 rb = axis_angle_to_rotation(b.axis_angle);
  const Vec3 tb = mat_vec(ra, b.translation);
  return Pose{rotation_to_axis_angle(mat_mul(ra, rb)),
              Vec3{tb[0] + a.translation[0], tb[1] + a.translation[1], tb[2] + a.translation[2]}};
}

inline Pose pose_inverse(const Pose& p) {
  const Mat3 rt = transpose(axis_angle_to_rotation(p.axis_angle));
  const Vec3 t = mat_vec(rt, p.translation);
  return Pose{Vec3{-p.axis_angle[0], -p.axis_angle[1], -p.axis_angle[2]}, Vec3{-t[0], -t[1], -t[2]}};
}

/// Lifts pixel p at depth d to the camera frame: d * K^-1 [u v 1]^T.
template <typename T>
Point3<T> backproject(const PixelCoord<T>& p, T depth, const CameraIntrinsics& k) {
  if (!(depth > T(0))) throw std::domain_error("backproject: depth must be positive");
  return Point3<T>{static_cast<T>((p.u - k.cx) / k.fx * depth), static_cast<T>((p.v - k.cy) / k.fy * depth),
                   depth};
}

template <typename T>
struct Projection {
  PixelCoord<T> pixel;
  bool valid = false;
};

/// Pinhole projection; points with z <= 0 come back flagged invalid.
template <typename T>
Projection<T> project(const Point3<T>& x, const CameraIntrinsics& k) {
  if (!(x.z > T(0))) return Projection<T>{PixelCoord<T>{T(0), T(0)}, false};
  return Projection<T>{PixelCoord<T>{static_cast<T>(k.fx * x.x / x.z + k.cx), static_cast<T>(k.fy * x.y / x.z + k.cy)},
                       true};
}

/// Points closer than this to the camera plane count as behind it.
inline constexpr double kMinProjectedDepth = 1e-6;

inline bool inside_image(double u, double v, int width, int height) {
  return u >= 0.0 && u <= width - 1.0 && v >= 0.0 && v <= height - 1.0;
}

/// Maps a target pixel with known depth into the source view:
/// K T D(p) K^-1 p, dehomogenised.
template <typename T>
Projection<T> reproject_pixel(const PixelCoord<T>& p, T depth, const CameraIntrinsics& k, const Pose& pose) {
  const Point3<T> q = transform_point(pose, backproject(p, depth, k));
  if (!(q.z > T(kMinProjectedDepth))) return Projection<T>{PixelCoord<T>{T(0), T(0)}, false};
  Projection<T> out = project(q, k);
  out.valid = out.valid && inside_image(double(out.pixel.u), double(out.pixel.v), k.width, k.height);
  return out;
}

}  // namespace geodepth

#endif  // GEODEPTH_GEOMETRY_HPP
