#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "geodepth/geometry.hpp"
#include "test_support.hpp"

using namespace geodepth;

namespace {

const CameraIntrinsics kK{100, 100, 64, 48, 128, 96};

Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3{u(rng), u(rng), u(rng)};
}

Pose random_pose(std::mt19937_64& rng) {
  Vec3 aa = random_vec(rng, 1.5);
  return Pose{aa, random_vec(rng, 3.0)};
}

}  // namespace

TEST(Intrinsics, ValidationRejectsBadValues) {
  EXPECT_NO_THROW(kK.validate());
  EXPECT_THROW((CameraIntrinsics{0, 1, 1, 1, 4, 4}.validate()), ValidationError);
  EXPECT_THROW((CameraIntrinsics{1, -1, 1, 1, 4, 4}.validate()), ValidationError);
  EXPECT_THROW((CameraIntrinsics{1, 1, 4, 1, 4, 4}.validate()), ValidationError);
  EXPECT_THROW((CameraIntrinsics{1, 1, 1, -0.5, 4, 4}.validate()), ValidationError);
}

TEST(Backproject, PrincipalRay) {
  const auto p = backproject(PixelCoord<double>{kK.cx, kK.cy}, 10.0, kK);
  EXPECT_EQ(p.x, 0.0);
  EXPECT_EQ(p.y, 0.0);
  EXPECT_EQ(p.z, 10.0);
}

TEST(Backproject, HandExample) {
  const auto p = backproject(PixelCoord<double>{74, 48}, 10.0, kK);
  EXPECT_NEAR(p.x, 1.0, 1e-12);
  EXPECT_NEAR(p.y, 0.0, 1e-12);
  EXPECT_NEAR(p.z, 10.0, 1e-12);
}

TEST(Backproject, NonPositiveDepthIsDomainError) {
  EXPECT_THROW(backproject(PixelCoord<double>{1, 1}, 0.0, kK), std::domain_error);
  EXPECT_THROW(backproject(PixelCoord<double>{1, 1}, -2.0, kK), std::domain_error);
}

TEST(Project, Examples) {
  auto a = project(Point3<double>{0, 0, 5}, kK);
  EXPECT_TRUE(a.valid);
  EXPECT_DOUBLE_EQ(a.pixel.u, 64);
  EXPECT_DOUBLE_EQ(a.pixel.v, 48);
  auto b = project(Point3<double>{1, 0, 10}, kK);
  EXPECT_TRUE(b.valid);
  EXPECT_NEAR(b.pixel.u, 74, 1e-12);
  EXPECT_NEAR(b.pixel.v, 48, 1e-12);
  EXPECT_FALSE(project(Point3<double>{0, 0, -1}, kK).valid);
  EXPECT_FALSE(project(Point3<double>{0, 0, 0}, kK).valid);
}

TEST(Project, RoundTripProperty) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, kK.width - 1), v(0, kK.height - 1), d(0.1, 100);
  for (int i = 0; i < 2000; ++i) {
    const PixelCoord<double> p{u(rng), v(rng)};
    const auto q = project(backproject(p, d(rng), kK), kK);
    ASSERT_TRUE(q.valid);
    EXPECT_NEAR(q.pixel.u, p.u, 1e-9);
    EXPECT_NEAR(q.pixel.v, p.v, 1e-9);
  }
}

TEST(Rotation, ZeroIsIdentity) {
  const Mat3 r = axis_angle_to_rotation(Vec3{0, 0, 0});
  const Mat3 id{1, 0, 0, 0, 1, 0, 0, 0, 1};
  EXPECT_EQ(r, id);
}

TEST(Rotation, QuarterTurnAboutZ) {
  const Mat3 r = axis_angle_to_rotation(Vec3{0, 0, std::numbers::pi / 2});
  const Mat3 expected{0, -1, 0, 1, 0, 0, 0, 0, 1};
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(r[i], expected[i], 1e-12);
}

TEST(Rotation, OrthonormalWithUnitDeterminant) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 500; ++i) {
    Vec3 aa = random_vec(rng, 3.0);
    if (i % 5 == 0) aa = random_vec(rng, 1e-5);  // small-angle branch
    const Mat3 r = axis_angle_to_rotation(aa);
    const Mat3 rrt = mat_mul(r, transpose(r));
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) EXPECT_NEAR(rrt[a * 3 + b], a == b ? 1.0 : 0.0, 1e-9);
    EXPECT_NEAR(determinant(r), 1.0, 1e-9);
  }
}

TEST(Rotation, MatchesEigenAngleAxis) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Vec3 aa = random_vec(rng, 1.8);
    const Mat3 r = axis_angle_to_rotation(aa);
    const Eigen::Matrix3d e = oracle::rotation(aa);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) EXPECT_NEAR(r[a * 3 + b], e(a, b), 1e-12);
  }
}

TEST(Rotation, LogMapInvertsExpMap) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ang(0, std::numbers::pi - 1e-3);
  for (int i = 0; i < 300; ++i) {
    Vec3 axis = random_vec(rng, 1.0);
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    double th = ang(rng);
    if (i % 10 == 0) th = 1e-7;
    if (i % 10 == 1) th = std::numbers::pi - 1e-7;
    const Vec3 aa{axis[0] / n * th, axis[1] / n * th, axis[2] / n * th};
    const Vec3 back = rotation_to_axis_angle(axis_angle_to_rotation(aa));
    // Compare rotations: near pi the vector may flip sign.
    const Mat3 r1 = axis_angle_to_rotation(aa), r2 = axis_angle_to_rotation(back);
    for (int k = 0; k < 9; ++k) EXPECT_NEAR(r1[k], r2[k], 1e-9);
  }
}

TEST(Rotation, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    Vec3 aa = random_vec(rng, 1.5);
    if (i % 7 == 0) aa = Vec3{0, 0, 0};
    const auto rj = axis_angle_to_rotation_with_jacobian(aa);
    for (int k = 0; k < 3; ++k) {
      Vec3 ap = aa, am = aa;
      ap[k] += 1e-6;
      am[k] -= 1e-6;
      const Mat3 rp = axis_angle_to_rotation(ap), rm = axis_angle_to_rotation(am);
      for (int e = 0; e < 9; ++e) EXPECT_NEAR(rj.d_rotation[k][e], (rp[e] - rm[e]) / 2e-6, 1e-7);
    }
  }
}

TEST(TransformPoint, Examples) {
  const Point3<double> x{0.3, -2, 7};
  const auto same = transform_point(Pose::identity(), x);
  EXPECT_EQ(same.x, x.x);
  EXPECT_EQ(same.y, x.y);
  EXPECT_EQ(same.z, x.z);
  const auto moved = transform_point(Pose{{0, 0, 0}, {0, 0, -1}}, Point3<double>{0, 0, 10});
  EXPECT_DOUBLE_EQ(moved.z, 9.0);
  const auto rot = transform_point(Pose{{0, 0, std::numbers::pi / 2}, {0, 0, 0}}, Point3<double>{1, 0, 0});
  EXPECT_NEAR(rot.x, 0, 1e-12);
  EXPECT_NEAR(rot.y, 1, 1e-12);
  EXPECT_NEAR(rot.z, 0, 1e-12);
}

TEST(PoseInverse, Examples) {
  const Pose id = pose_inverse(Pose::identity());
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(std::abs(id.axis_angle[i]), 0.0);
    EXPECT_EQ(std::abs(id.translation[i]), 0.0);
  }
  const Pose inv = pose_inverse(Pose{{0, 0, 0}, {1, 2, 3}});
  EXPECT_DOUBLE_EQ(inv.translation[0], -1);
  EXPECT_DOUBLE_EQ(inv.translation[1], -2);
  EXPECT_DOUBLE_EQ(inv.translation[2], -3);
}

TEST(PoseInverse, ComposeWithInverseFixesPoints) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose t = random_pose(rng);
    const Pose round = compose(t, pose_inverse(t));
    const Pose round2 = compose(pose_inverse(t), t);
    double worst = 0;
    for (int i = 0; i < 100; ++i) {
      const Vec3 v = random_vec(rng, 10.0);
      const Point3<double> x{v[0], v[1], v[2]};
      for (const Pose& p : {round, round2}) {
        const auto y = transform_point(p, x);
        worst = std::max({worst, std::abs(y.x - x.x), std::abs(y.y - x.y), std::abs(y.z - x.z)});
      }
      // Apply T then T^-1 directly.
      const auto z = transform_point(pose_inverse(t), transform_point(t, x));
      worst = std::max({worst, std::abs(z.x - x.x), std::abs(z.y - x.y), std::abs(z.z - x.z)});
    }
    EXPECT_LT(worst, 1e-9);
  }
}

TEST(Compose, AppliesRightOperandFirst) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    const Pose ab = compose(a, b);
    const Vec3 v = random_vec(rng, 5.0);
    const Point3<double> x{v[0], v[1], v[2]};
    const auto expect = transform_point(a, transform_point(b, x));
    const auto got = transform_point(ab, x);
    EXPECT_NEAR(got.x, expect.x, 1e-9);
    EXPECT_NEAR(got.y, expect.y, 1e-9);
    EXPECT_NEAR(got.z, expect.z, 1e-9);
  }
}

TEST(ReprojectPixel, IdentityPoseIsIdentityMap) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, kK.width - 1), v(0, kK.height - 1), d(0.1, 100);
  for (int i = 0; i < 1000; ++i) {
    const PixelCoord<double> p{u(rng), v(rng)};
    const auto r = reproject_pixel(p, d(rng), kK, Pose::identity());
    ASSERT_TRUE(r.valid);
    EXPECT_NEAR(r.pixel.u, p.u, 1e-9);
    EXPECT_NEAR(r.pixel.v, p.v, 1e-9);
  }
}

TEST(ReprojectPixel, HandExample) {
  const auto r = reproject_pixel(PixelCoord<double>{64, 48}, 10.0, kK, Pose{{0, 0, 0}, {1, 0, 0}});
  EXPECT_TRUE(r.valid);
  EXPECT_NEAR(r.pixel.u, 74, 1e-12);
  EXPECT_NEAR(r.pixel.v, 48, 1e-12);
}

TEST(ReprojectPixel, BehindCameraIsInvalid) {
  EXPECT_FALSE(reproject_pixel(PixelCoord<double>{0, 0}, 0.1, kK, Pose{{0, 0, 0}, {0, 0, -5}}).valid);
}

TEST(ReprojectPixel, OutsideImageIsInvalid) {
  EXPECT_FALSE(reproject_pixel(PixelCoord<double>{120, 48}, 1.0, kK, Pose{{0, 0, 0}, {1, 0, 0}}).valid);
}
