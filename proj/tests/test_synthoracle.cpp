#include <catch2/catch_amalgamated.hpp>

#include "nvde/metrics.hpp"
#include "test_helpers.hpp"

using namespace nvde;
using namespace nvde_test;
using Catch::Approx;

namespace {

SceneSpec two_plane_scene() {
  SceneSpec spec;
  spec.cam = Camera{60, 60, 31.5, 31.5, 64, 64};
  PlaneSpec far_plane;
  far_plane.depth = 8.0;
  far_plane.texture.scale = 2.0;
  far_plane.texture.seed = 5;
  PlaneSpec near_plane;
  near_plane.depth = 3.0;
  near_plane.bounded = true;
  near_plane.x0 = -1.2;
  near_plane.x1 = 1.2;
  near_plane.y0 = -1.0;
  near_plane.y1 = 1.0;
  near_plane.texture.scale = 0.8;
  near_plane.texture.seed = 6;
  spec.planes = {far_plane, near_plane};
  return spec;
}

}  // namespace

TEST_CASE("generation is deterministic") {
  auto spec = two_plane_scene();
  PoseSE3 t;
  t.t = Vec3{0.2, 0.05, 0.0};
  auto a = generate_scene<double>(spec, {PoseSE3::identity(), t});
  auto b = generate_scene<double>(spec, {PoseSE3::identity(), t});
  CHECK(max_abs_diff(a.images[0], b.images[0]) == 0.0);
  CHECK(max_abs_diff(a.images[1], b.images[1]) == 0.0);
  CHECK(max_abs_diff(a.gt_depth[1], b.gt_depth[1]) == 0.0);
}

TEST_CASE("identity pose frame reproduces the source") {
  auto spec = two_plane_scene();
  auto frames = generate_scene<double>(spec, {PoseSE3::identity(), PoseSE3::identity()});
  CHECK(max_abs_diff(frames.images[0], frames.images[1]) == 0.0);
}

TEST_CASE("translation shifts surfaces by the pinhole flow") {
  SceneSpec spec;
  spec.cam = Camera{60, 60, 31.5, 31.5, 64, 64};
  PlaneSpec plane;
  plane.depth = 4.0;
  plane.texture.scale = 1.2;
  plane.texture.seed = 9;
  spec.planes = {plane};
  PoseSE3 t;
  t.t = Vec3{0.2, 0, 0};  // exactly 3 px of flow at this depth
  auto frames = generate_scene<double>(spec, {PoseSE3::identity(), t});

  double shift = 60.0 * 0.2 / 4.0;
  REQUIRE(shift == Approx(3.0));
  double worst = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 60; ++j)  // keep the lookup inside the source frame
      for (int c = 0; c < 3; ++c)
        worst = std::max(worst, std::abs(frames.images[0].at(i, j + 3, c) -
                                         frames.images[1].at(i, j, c)));
  CHECK(worst < 1e-9);
}

TEST_CASE("highlight disparity is opposite and proportional to the surface flow") {
  SceneSpec spec;
  spec.cam = Camera{60, 60, 31.5, 31.5, 64, 64};
  PlaneSpec plane;
  plane.depth = 4.0;
  plane.texture.kind = TextureKind::flat;
  spec.planes = {plane};
  HighlightSpec hl;
  hl.plane = 0;
  hl.center_u = 32;
  hl.center_v = 32;
  hl.radius_px = 4;
  hl.intensity = 0.3;
  hl.gain = 0.5;
  spec.highlight = hl;

  PoseSE3 t;
  t.t = Vec3{0.4, 0, 0};
  auto frames = generate_scene<double>(spec, {PoseSE3::identity(), t});

  // sub-pixel centroid of (frame - lambertian render)
  SceneSpec plain = spec;
  plain.highlight.reset();
  auto base = generate_scene<double>(plain, {PoseSE3::identity(), t});
  auto locate = [&](int f) {
    double num = 0, den = 0;
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) {
        double d = frames.images[static_cast<size_t>(f)].at(i, j, 0) -
                   base.images[static_cast<size_t>(f)].at(i, j, 0);
        if (d > 0.01) {
          num += d * j;
          den += d;
        }
      }
    return num / den;
  };
  double u0 = locate(0), u1 = locate(1);
  double surface_flow = -60.0 * 0.4 / 4.0;  // -6 px

  // absolute motion follows the surface attenuated by the gain; relative to
  // the surface the displacement is opposite and proportional to the flow
  CHECK(u0 == Approx(32.0).margin(0.2));
  CHECK(u1 - u0 == Approx((1.0 - hl.gain) * surface_flow).margin(0.35));
  double relative = (u1 - u0) - surface_flow;
  CHECK(relative == Approx(-hl.gain * surface_flow).margin(0.35));
  CHECK(relative * surface_flow < 0);  // strictly opposite direction
}

TEST_CASE("pure rotation leaves the highlight fixed on its surface") {
  SceneSpec spec;
  spec.cam = Camera{60, 60, 31.5, 31.5, 64, 64};
  PlaneSpec plane;
  plane.depth = 4.0;
  plane.texture.kind = TextureKind::flat;
  spec.planes = {plane};
  HighlightSpec hl;
  hl.center_u = 30;
  hl.center_v = 34;
  hl.radius_px = 4;
  hl.gain = 0.6;
  spec.highlight = hl;

  PoseSE3 rot;
  rot.R = so3_exp(Vec3{0, 0.04, 0});
  auto frames = generate_scene<double>(spec, {PoseSE3::identity(), rot});
  SceneSpec plain = spec;
  plain.highlight.reset();
  auto base = generate_scene<double>(plain, {PoseSE3::identity(), rot});

  // surface point and highlight should project to the same place: the
  // residual centroid must sit at the projection of the surface point
  Vec3 X{4.0 * (30 - 31.5) / 60.0, 4.0 * (34 - 31.5) / 60.0, 4.0};
  Vec3 pc = matvec(transpose(rot.R), X);
  double qu = 60.0 * pc.x / pc.z + 31.5;
  double qv = 60.0 * pc.y / pc.z + 31.5;
  double nu = 0, nv = 0, den = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      double d = frames.images[1].at(i, j, 0) - base.images[1].at(i, j, 0);
      if (d > 0.01) {
        nu += d * j;
        nv += d * i;
        den += d;
      }
    }
  REQUIRE(den > 0);
  CHECK(nu / den == Approx(qu).margin(0.35));
  CHECK(nv / den == Approx(qv).margin(0.35));
}

TEST_CASE("ground truth depth and poses are photometrically consistent") {
  auto spec = two_plane_scene();
  PoseSE3 t;
  t.R = so3_exp(Vec3{0.01, 0.02, 0.0});
  t.t = Vec3{0.15, -0.05, 0.1};
  auto frames = generate_scene<double>(spec, {PoseSE3::identity(), t});
  auto masks = classify_visibility<double>(spec, t);

  // warp the source into the target view through the GT depth
  PoseSE3 proj = pose_inverse(t);
  Tensor<double> warped({64, 64, 3});
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      auto pr = epipolar_project(j, i, frames.gt_depth[1].at(i, j, 0), proj, spec.cam);
      for (int c = 0; c < 3; ++c)
        warped.at(i, j, c) = detail::sample_bilinear_scalar(frames.images[0], pr.u, pr.v, c);
    }
  Tensor<double> a = warped, b = frames.images[1];
  for (auto& v : a.data) v += 0.5;
  for (auto& v : b.data) v += 0.5;
  CHECK(psnr(a, b, &masks.visible) > 40.0);
}

TEST_CASE("scalar oracle reduces to the input at identity") {
  Rng rng(12);
  auto in = random_inputs<double>(rng, 12, 12, 5, 4);
  auto ref = oracle::render_coarse(in.image, in.depth_logits, in.sched, PoseSE3::identity(),
                                   in.cam);
  CHECK(max_abs_diff(ref, in.image) < 1e-9);

  Tensor<double> dhat = oracle::depth_estimate(in.depth_logits, in.sched);
  auto infused = oracle::infuse(in.image, in.vde_logits, dhat, in.n_vde, in.eps, Vec3{}, in.cam);
  CHECK(max_abs_diff(infused, in.image) < 1e-12);  // literal path, no identity shortcut
}
