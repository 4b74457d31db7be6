#include <catch2/catch_amalgamated.hpp>

#include "nvde/geometry.hpp"
#include "nvde/metrics.hpp"
#include "nvde/rng.hpp"
#include "nvde/synthoracle.hpp"

using namespace nvde;
using Catch::Approx;

namespace {

PoseSE3 random_pose(Rng& rng, double rot_scale, double trans_scale) {
  PoseSE3 p;
  p.R = so3_exp(Vec3{rng.uniform(-rot_scale, rot_scale), rng.uniform(-rot_scale, rot_scale),
                     rng.uniform(-rot_scale, rot_scale)});
  p.t = Vec3{rng.uniform(-trans_scale, trans_scale), rng.uniform(-trans_scale, trans_scale),
             rng.uniform(-trans_scale, trans_scale)};
  return p;
}

}  // namespace

TEST_CASE("exponential schedule closed form") {
  auto s = make_exponential_schedule(1, 16, 5);
  REQUIRE(s.distances.size() == 5);
  CHECK(s.distances[0] == 16.0);
  CHECK(s.distances[1] == 8.0);
  CHECK(s.distances[2] == 4.0);
  CHECK(s.distances[3] == 2.0);
  CHECK(s.distances[4] == 1.0);

  auto two = make_exponential_schedule(0.7, 9.3, 2);
  CHECK(two.distances[0] == 9.3);
  CHECK(two.distances[1] == 0.7);

  auto dflt = make_exponential_schedule(1, 16, 32);
  CHECK(dflt.count == 32);
  for (int i = 1; i < 32; ++i) CHECK(dflt.distances[i] < dflt.distances[i - 1]);
  CHECK(dflt.distances[0] == 16.0);
  CHECK(dflt.distances[31] == 1.0);

  CHECK_THROWS(make_exponential_schedule(0, 16, 5));
  CHECK_THROWS(make_exponential_schedule(2, 1, 5));
  CHECK_THROWS(make_exponential_schedule(1, 16, 1));
}

TEST_CASE("epipolar projection hand example") {
  Camera cam{1, 1, 0, 0, 8, 8};
  PoseSE3 pose;
  pose.t = Vec3{1, 0, 0};
  auto p = epipolar_project(0, 0, 2, pose, cam);
  CHECK(p.u == Approx(-0.5));
  CHECK(p.v == Approx(0.0));
  CHECK(p.depth == Approx(2.0));
  CHECK_FALSE(p.degenerate);
}

TEST_CASE("identity pose projects to itself") {
  Camera cam{50, 55, 31.5, 23.5, 64, 48};
  for (double d : {0.5, 3.0, -2.0}) {
    auto p = epipolar_project(12.25, 40.5, d, PoseSE3::identity(), cam);
    CHECK(p.u == Approx(12.25).margin(1e-12));
    CHECK(p.v == Approx(40.5).margin(1e-12));
    CHECK(p.depth == Approx(d));
  }
}

TEST_CASE("pure rotation projection is depth independent") {
  Camera cam{60, 60, 31.5, 31.5, 64, 64};
  PoseSE3 pose;
  pose.R = so3_exp(Vec3{0.03, -0.05, 0.02});
  auto a = epipolar_project(20, 30, 1.0, pose, cam);
  auto b = epipolar_project(20, 30, 100.0, pose, cam);
  CHECK(a.u == Approx(b.u).margin(1e-9));
  CHECK(a.v == Approx(b.v).margin(1e-9));
}

TEST_CASE("projection round trip returns the source pixel") {
  Camera cam{70, 65, 31.5, 31.5, 64, 64};
  Rng rng(99);
  int checked = 0;
  for (int i = 0; i < 20000; ++i) {
    PoseSE3 pose = random_pose(rng, 0.3, 0.5);
    double u = rng.uniform(0, 63), v = rng.uniform(0, 63);
    double d = rng.uniform() < 0.3 ? rng.uniform(-8, -0.5) : rng.uniform(0.5, 12);
    auto fwd = epipolar_project(u, v, d, pose, cam);
    if (fwd.degenerate) continue;
    auto back = epipolar_project(fwd.u, fwd.v, fwd.depth, pose_inverse(pose), cam);
    REQUIRE_FALSE(back.degenerate);
    CHECK(std::abs(back.u - u) < 1e-9);
    CHECK(std::abs(back.v - v) < 1e-9);
    CHECK(std::abs(back.depth - d) < 1e-9);
    ++checked;
  }
  CHECK(checked > 15000);
}

TEST_CASE("projected points of one pixel are collinear across depths") {
  Camera cam{64, 64, 31.5, 31.5, 64, 64};
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    PoseSE3 pose = random_pose(rng, 0.2, 0.8);
    double u = rng.uniform(5, 58), v = rng.uniform(5, 58);
    std::vector<std::pair<double, double>> pts;
    for (double d : {0.8, 1.7, 3.0, 6.5, 14.0}) {
      auto p = epipolar_project(u, v, d, pose, cam);
      if (!p.degenerate) pts.emplace_back(p.u, p.v);
    }
    if (pts.size() < 3) continue;
    double dx = pts[1].first - pts[0].first, dy = pts[1].second - pts[0].second;
    double n = std::hypot(dx, dy);
    if (n < 1e-12) continue;  // pure-rotation-like: all projections coincide
    dx /= n;
    dy /= n;
    for (size_t k = 2; k < pts.size(); ++k) {
      double ex = pts[k].first - pts[0].first, ey = pts[k].second - pts[0].second;
      double m = std::hypot(ex, ey);
      if (m < 1e-12) continue;
      double cross = std::abs((ex / m) * dy - (ey / m) * dx);
      CHECK(cross < 1e-9);
    }
  }
}

TEST_CASE("so3 exponential and pose group laws") {
  CHECK(so3_exp(Vec3{}).m == Mat3::identity().m);

  Mat3 q = so3_exp(Vec3{0, 0, 1.5707963267948966});
  // rotates x-axis to y-axis
  Vec3 e1 = matvec(q, Vec3{1, 0, 0});
  CHECK(e1.x == Approx(0.0).margin(1e-12));
  CHECK(e1.y == Approx(1.0).margin(1e-12));

  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    PoseSE3 a = random_pose(rng, 1.5, 2.0);
    PoseSE3 id = pose_compose(a, pose_inverse(a));
    for (int k = 0; k < 9; ++k)
      CHECK(id.R.m[static_cast<size_t>(k)] ==
            Approx(Mat3::identity().m[static_cast<size_t>(k)]).margin(1e-12));
    CHECK(std::abs(id.t.x) < 1e-12);
    CHECK(std::abs(id.t.y) < 1e-12);
    CHECK(std::abs(id.t.z) < 1e-12);

    // orthonormality of generated rotations
    Mat3 rtr = matmul(transpose(a.R), a.R);
    for (int k = 0; k < 9; ++k)
      CHECK(rtr.m[static_cast<size_t>(k)] ==
            Approx(Mat3::identity().m[static_cast<size_t>(k)]).margin(1e-9));
  }
}

TEST_CASE("so3 log inverts exp") {
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    Vec3 w{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    Vec3 back = so3_log(so3_exp(w));
    CHECK(back.x == Approx(w.x).margin(1e-8));
    CHECK(back.y == Approx(w.y).margin(1e-8));
    CHECK(back.z == Approx(w.z).margin(1e-8));
  }
  Vec3 tiny = so3_log(so3_exp(Vec3{1e-9, -2e-9, 5e-10}));
  CHECK(std::abs(tiny.x - 1e-9) < 1e-12);
}

TEST_CASE("rotation alignment warp") {
  Camera cam{64, 64, 31.5, 31.5, 64, 64};
  // smooth synthetic texture
  Tensor<double> img({64, 64, 3});
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      for (int c = 0; c < 3; ++c)
        img.at(i, j, c) =
            0.3 * std::sin(0.21 * i + 0.5 * c) * std::cos(0.17 * j - 0.2 * c);

  SECTION("identity rotation is the identity warp") {
    auto out = rotation_align_warp(img, Mat3::identity(), cam);
    CHECK(max_abs_diff(out, img) == 0.0);
  }

  SECTION("forward then inverse recovers the interior") {
    Mat3 r = so3_exp(Vec3{0.02, 0.04, 0.01});
    auto fwd = rotation_align_warp(img, r, cam);
    auto back = rotation_align_warp(fwd, transpose(r), cam);
    // compare away from the border where the zero padding crept in
    Tensor<double> a({40, 40, 3}), b({40, 40, 3});
    for (int i = 0; i < 40; ++i)
      for (int j = 0; j < 40; ++j)
        for (int c = 0; c < 3; ++c) {
          a.at(i, j, c) = img.at(i + 12, j + 12, c);
          b.at(i, j, c) = back.at(i + 12, j + 12, c);
        }
    CHECK(psnr(a, b) > 35.0);
  }

  SECTION("small yaw shifts the center by fx tan(theta)") {
    double theta = 0.02;
    Mat3 r = so3_exp(Vec3{0, theta, 0});  // yaw about the vertical axis
    // track where the center pixel samples from
    Vec3 d{(31.5 - cam.cx) / cam.fx, (31.5 - cam.cy) / cam.fy, 1.0};
    Vec3 q = matvec(r, d);
    double u = cam.fx * q.x / q.z + cam.cx;
    CHECK(u - 31.5 == Approx(cam.fx * std::tan(theta)).epsilon(1e-6));
  }
}
