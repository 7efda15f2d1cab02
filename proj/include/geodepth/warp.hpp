#ifndef GEODEPTH_WARP_HPP
#define GEODEPTH_WARP_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "geodepth/autodiff.hpp"
#include "geodepth/geometry.hpp"
#include "geodepth/tensor.hpp"

namespace geodepth {

/// H x W grid of continuous sampling positions.
template <typename T>
struct CoordGrid {
  int height = 0;
  int width = 0;
  std::vector<PixelCoord<T>> coords;

  CoordGrid(int h, int w) : height(h), width(w), coords(static_cast<std::size_t>(h) * w) {}
  PixelCoord<T>& at(int y, int x) { return coords[static_cast<std::size_t>(y) * width + x]; }
  const PixelCoord<T>& at(int y, int x) const { return coords[static_cast<std::size_t>(y) * width + x]; }
};

/// Warped image together with its (1,1,H,W) validity mask.
template <typename T>
struct Sampled {
  Tensor<T> image;
  Tensor<T> mask;
};

namespace detail {

/// Bilinear tap positions for one sampling location. Out-of-range (or
/// non-finite) coordinates are clamped to the border.
struct BilinearTap {
  int x0, x1, y0, y1;
  double ax, ay;
  bool inside;
  bool clamped_u, clamped_v;  // coordinate pinned to the border (locally constant)
};

inline BilinearTap bilinear_tap(double u, double v, int width, int height) {
  BilinearTap t{};
  t.inside = std::isfinite(u) && std::isfinite(v) && inside_image(u, v, width, height);
  if (!std::isfinite(u)) u = 0.0;
  if (!std::isfinite(v)) v = 0.0;
  const double uc = std::clamp(u, 0.0, width - 1.0);
  const double vc = std::clamp(v, 0.0, height - 1.0);
  t.clamped_u = uc != u;
  t.clamped_v = vc != v;
  t.x0 = static_cast<int>(std::floor(uc));
  t.y0 = static_cast<int>(std::floor(vc));
  t.x1 = std::min(t.x0 + 1, width - 1);
  t.y1 = std::min(t.y0 + 1, height - 1);
  t.ax = uc - t.x0;
  t.ay = vc - t.y0;
  return t;
}

template <typename T>
T bilinear_value(const Tensor<T>& img, int c, const BilinearTap& t) {
  const T ax = static_cast<T>(t.ax);
  const T ay = static_cast<T>(t.ay);
  const T top = img.at(c, t.y0, t.x0) * (T(1) - ax) + img.at(c, t.y0, t.x1) * ax;
  const T bot = img.at(c, t.y1, t.x0) * (T(1) - ax) + img.at(c, t.y1, t.x1) * ax;
  return top * (T(1) - ay) + bot * ay;
}

/// Sampled value derivatives with respect to (u, v); zero along a clamped axis.
template <typename T>
std::pair<T, T> bilinear_gradient(const Tensor<T>& img, int c, const BilinearTap& t) {
  const T ax = static_cast<T>(t.ax);
  const T ay = static_cast<T>(t.ay);
  const T i00 = img.at(c, t.y0, t.x0);
  const T i01 = img.at(c, t.y0, t.x1);
  const T i10 = img.at(c, t.y1, t.x0);
  const T i11 = img.at(c, t.y1, t.x1);
  const T du = t.clamped_u ? T(0) : (T(1) - ay) * (i01 - i00) + ay * (i11 - i10);
  const T dv = t.clamped_v ? T(0) : (T(1) - ax) * (i10 - i00) + ax * (i11 - i01);
  return {du, dv};
}

/// Per-pixel reprojection of a target pixel into the source view.
struct PixelReprojection {
  double u = 0, v = 0;
  bool valid = false;    // in front of the camera and inside the source image
  bool in_front = false;
  Vec3 p{0, 0, 0};       // backprojected point (target frame)
  Vec3 q{0, 0, 0};       // transformed point (source frame)
};

inline PixelReprojection reproject_for_warp(int x, int y, double depth, const CameraIntrinsics& k,
                                            const RigidTransform& rt) {
  PixelReprojection r;
  r.p = Vec3{(x - k.cx) / k.fx * depth, (y - k.cy) / k.fy * depth, depth};
  // Q = P + ((R - I) P + t) and u = x + fx (Qx/Qz - Px/Pz): algebraically the
  // usual projection, but bit-exact at the identity motion.
  const Mat3& rot = rt.rotation;
  const Mat3 r_minus_i{rot[0] - 1.0, rot[1], rot[2], rot[3], rot[4] - 1.0, rot[5], rot[6], rot[7], rot[8] - 1.0};
  const Vec3 delta = mat_vec(r_minus_i, r.p);
  r.q = Vec3{r.p[0] + (delta[0] + rt.translation[0]), r.p[1] + (delta[1] + rt.translation[1]),
             r.p[2] + (delta[2] + rt.translation[2])};
  r.in_front = r.q[2] > kMinProjectedDepth;
  if (r.in_front) {
    r.u = x + k.fx * (r.q[0] / r.q[2] - r.p[0] / r.p[2]);
    r.v = y + k.fy * (r.q[1] / r.q[2] - r.p[1] / r.p[2]);
  } else {
    r.u = std::numeric_limits<double>::quiet_NaN();
    r.v = std::numeric_limits<double>::quiet_NaN();
  }
  r.valid = r.in_front && inside_image(r.u, r.v, k.width, k.height);
  return r;
}

}  // namespace detail

/// Bilinear interpolation of img at every grid position. Positions outside
/// [0, W-1] x [0, H-1] sample the clamped border and get mask 0.
template <typename T>
Sampled<T> bilinear_sample(const Tensor<T>& img, const CoordGrid<T>& grid) {
  Sampled<T> out{Tensor<T>(image_shape(img.channels(), grid.height, grid.width)),
                 Tensor<T>(image_shape(1, grid.height, grid.width))};
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) {
      const auto& p = grid.at(y, x);
      const auto tap = detail::bilinear_tap(double(p.u), double(p.v), img.width(), img.height());
      for (int c = 0; c < img.channels(); ++c) out.image.at(c, y, x) = detail::bilinear_value(img, c, tap);
      out.mask.at(0, y, x) = tap.inside ? T(1) : T(0);
    }
  return out;
}

namespace detail {
inline void check_warp_inputs(const Shape& src, const Shape& depth, const CameraIntrinsics& k) {
  if (depth.c != 1 || depth.h != src.h || depth.w != src.w || k.width != src.w || k.height != src.h) {
    throw ShapeError("inverse_warp: source " + src.str() + ", depth " + depth.str() + " and intrinsics " +
                     std::to_string(k.width) + "x" + std::to_string(k.height) + " disagree");
  }
}
}  // namespace detail

/// Reconstructs the target view by sampling `source` at the reprojection of
/// each target pixel. Mask = in front of the camera and inside the source.
template <typename T>
Sampled<T> inverse_warp(const Tensor<T>& source, const Tensor<T>& target_depth, const Pose& pose,
                        const CameraIntrinsics& k) {
  detail::check_warp_inputs(source.shape(), target_depth.shape(), k);
  const RigidTransform rt = RigidTransform::from_pose(pose);
  const int h = source.height();
  const int w = source.width();
  Sampled<T> out{Tensor<T>(image_shape(source.channels(), h, w)), Tensor<T>(image_shape(1, h, w))};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto r = detail::reproject_for_warp(x, y, double(target_depth.at(0, y, x)), k, rt);
      const auto tap = detail::bilinear_tap(r.u, r.v, w, h);
      for (int c = 0; c < source.channels(); ++c) out.image.at(c, y, x) = detail::bilinear_value(source, c, tap);
      out.mask.at(0, y, x) = r.valid ? T(1) : T(0);
    }
  return out;
}

namespace ad {

template <typename T>
struct WarpResult {
  Var<T> image;
  Tensor<T> mask;
};

/// Differentiable inverse warp. `pose6` holds (axis_angle, translation) as a
/// (1,6,1,1) node; gradients flow to depth and pose, the source is constant.
template <typename T>
WarpResult<T> inverse_warp(const Tensor<T>& source, Var<T> depth, Var<T> pose6, const CameraIntrinsics& k) {
  geodepth::detail::check_warp_inputs(source.shape(), depth.shape(), k);
  if (pose6.value().size() != 6) throw ShapeError("inverse_warp: pose node must hold 6 values");
  const Tensor<T>& pv = pose6.value();
  const Vec3 aa{double(pv[0]), double(pv[1]), double(pv[2])};
  const Vec3 tr{double(pv[3]), double(pv[4]), double(pv[5])};
  const RotationJacobian rj = axis_angle_to_rotation_with_jacobian(aa);
  const RigidTransform rt{rj.rotation, tr};

  const int h = source.height();
  const int w = source.width();
  const Tensor<T>& dv = depth.value();
  Tensor<T> warped(image_shape(source.channels(), h, w));
  Tensor<T> mask(image_shape(1, h, w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto r = geodepth::detail::reproject_for_warp(x, y, double(dv.at(0, y, x)), k, rt);
      const auto tap = geodepth::detail::bilinear_tap(r.u, r.v, w, h);
      for (int c = 0; c < source.channels(); ++c)
        warped.at(c, y, x) = geodepth::detail::bilinear_value(source, c, tap);
      mask.at(0, y, x) = r.valid ? T(1) : T(0);
    }

  Var<T> out = depth.tape->record(
      std::move(warped), {depth, pose6}, [source, depth, pose6, k, rj, rt](Tape<T>& tape, const Tensor<T>& g) {
        const int hh = source.height();
        const int ww = source.width();
        const Tensor<T>& dval = tape.value(depth.id);
        const bool want_depth = tape.requires_grad(depth.id);
        const bool want_pose = tape.requires_grad(pose6.id);
        Tensor<T>* gd = want_depth ? &tape.grad(depth.id) : nullptr;
        std::array<double, 6> gp{};
        for (int y = 0; y < hh; ++y)
          for (int x = 0; x < ww; ++x) {
            const auto r = geodepth::detail::reproject_for_warp(x, y, double(dval.at(0, y, x)), k, rt);
            // Out-of-view pixels still feed neighbouring SSIM windows, so they
            // keep the gradient of their clamped sample.
            if (!r.in_front) continue;
            const auto tap = geodepth::detail::bilinear_tap(r.u, r.v, ww, hh);
            double gu = 0, gv = 0;
            for (int c = 0; c < source.channels(); ++c) {
              const auto [du, dvv] = geodepth::detail::bilinear_gradient(source, c, tap);
              const double go = double(g.at(c, y, x));
              gu += go * double(du);
              gv += go * double(dvv);
            }
            if (gu == 0.0 && gv == 0.0) continue;
            // d(u,v)/dQ
            const double iz = 1.0 / r.q[2];
            const Vec3 du_dq{k.fx * iz, 0.0, -k.fx * r.q[0] * iz * iz};
            const Vec3 dv_dq{0.0, k.fy * iz, -k.fy * r.q[1] * iz * iz};
            const Vec3 gq{gu * du_dq[0] + gv * dv_dq[0], gu * du_dq[1] + gv * dv_dq[1],
                          gu * du_dq[2] + gv * dv_dq[2]};
            if (want_depth) {
              // dQ/dd = R * K^-1 [x y 1]^T = R p / d
              const double d = r.p[2];
              const Vec3 ray{r.p[0] / d, r.p[1] / d, 1.0};
              const Vec3 dq = mat_vec(rt.rotation, ray);
              gd->at(0, y, x) += static_cast<T>(gq[0] * dq[0] + gq[1] * dq[1] + gq[2] * dq[2]);
            }
            if (want_pose) {
              for (int i = 0; i < 3; ++i) {
                const Vec3 dq = mat_vec(rj.d_rotation[i], r.p);
                gp[i] += gq[0] * dq[0] + gq[1] * dq[1] + gq[2] * dq[2];
              }
              gp[3] += gq[0];
              gp[4] += gq[1];
              gp[5] += gq[2];
            }
          }
        if (want_pose) {
          Tensor<T>& gpt = tape.grad(pose6.id);
          for (int i = 0; i < 6; ++i) gpt[i] += static_cast<T>(gp[i]);
        }
      });
  return WarpResult<T>{out, std::move(mask)};
}

}  // namespace ad
}  // namespace geodepth

#endif  // GEODEPTH_WARP_HPP
