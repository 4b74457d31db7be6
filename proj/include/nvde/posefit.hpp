#pragma once

#include <limits>
#include <vector>

#include "nvde/objective.hpp"
#include "nvde/optim.hpp"
#include "nvde/projection.hpp"

namespace nvde {

// Direct photometric pose estimation. All fitted poses are expressed in the
// projection convention of epipolar_project: the returned (R,t) warps the
// source image onto the target raster, i.e. it is the camera-to-world pose
// of the source view in the target frame.
struct PoseFitConfig {
  int pyramid_levels = 3;
  int iters_per_level = 200;
  int refine_iters = 200;
  double lr = 1e-2;
  double initial_depth = 4.0;
  uint64_t seed = 0;
};

struct PoseEstimate {
  PoseSE3 coarse;
  Vec3 residual_rotation;     // axis-angle of the residual applied after alignment
  Vec3 residual_translation;  // expressed in the rotation-aligned frame
  PoseSE3 final;              // = compose(coarse, residual)
  bool diverged = false;
  double coarse_loss = 0;
  double final_loss = 0;
};

namespace detail {

template <typename T>
Tensor<T> downsample_half(const Tensor<T>& img) {
  int H = img.height() / 2, W = img.width() / 2, C = img.channels();
  Tensor<T> out({H, W, C});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < C; ++c)
        out.at(i, j, c) = (img.at(2 * i, 2 * j, c) + img.at(2 * i, 2 * j + 1, c) +
                           img.at(2 * i + 1, 2 * j, c) + img.at(2 * i + 1, 2 * j + 1, c)) /
                          T(4);
  return out;
}

inline Camera camera_half(const Camera& cam) {
  Camera c = cam;
  c.fx /= 2;
  c.fy /= 2;
  c.cx = (cam.cx - 0.5) / 2;
  c.cy = (cam.cy - 0.5) / 2;
  c.width = cam.width / 2;
  c.height = cam.height / 2;
  return c;
}

template <typename T>
struct PoseStageResult {
  Vec3 omega, trans;
  Tensor<T> log_depth;  // [1] or [H,W,1]
  double best_loss = 0;
  bool diverged = false;
};

// One optimization stage: warp the source onto the target raster through a
// trainable pose and (log-)depth, minimize the masked mean absolute
// photometric residual with Adam. Returns the best-so-far parameters; fifty
// consecutive non-improving steps count as divergence.
template <typename T>
PoseStageResult<T> run_pose_stage(const Tensor<T>& src, const Tensor<T>& tgt, const Camera& cam,
                                  Vec3 omega0, Vec3 trans0, Tensor<T> log_depth0, int iters,
                                  double lr, int freeze_pose_iters = 0) {
  Tensor<T> omega = Tensor<T>::from({3}, {static_cast<T>(omega0.x), static_cast<T>(omega0.y),
                                          static_cast<T>(omega0.z)});
  Tensor<T> trans = Tensor<T>::from({3}, {static_cast<T>(trans0.x), static_cast<T>(trans0.y),
                                          static_cast<T>(trans0.z)});
  Tensor<T> log_depth = std::move(log_depth0);
  AdamOptimizer<T> opt({&omega, &trans, &log_depth}, lr);

  PoseStageResult<T> best;
  best.best_loss = std::numeric_limits<double>::infinity();
  double prev_loss = std::numeric_limits<double>::infinity();
  int rising = 0;
  int h = cam.height, w = cam.width;

  for (int it = 0; it < iters; ++it) {
    double decayed = lr;
    if (it >= iters / 2) decayed *= 0.5;
    if (it >= (3 * iters) / 4) decayed *= 0.5;
    if (it >= (9 * iters) / 10) decayed *= 0.5;
    opt.set_lr(decayed);
    Graph<T> g;
    auto wleaf = g.leaf(omega);
    auto tleaf = g.leaf(trans);
    auto dleaf = g.leaf(log_depth);
    auto pose = PoseRef<T>::trainable(wleaf, tleaf);
    typename Graph<T>::Id depth_map;
    if (log_depth.numel() == 1)
      depth_map = g.broadcast_to_pixels(g.exp(dleaf), h, w);
    else
      depth_map = g.exp(dleaf);
    ProjectionContext<T> ctx(g, pose, cam);
    CoordMap<T> cm = ctx.at_depth_node(depth_map);
    auto src_node = g.constant(src);
    auto sampled = cm.is_node ? g.bilinear_sample(src_node, cm.node)
                              : g.bilinear_sample(src_node, cm.constant);
    Tensor<T> mask = Tensor<T>::uninit({h, w, 3});
    double count = 0;
    for (int64_t p = 0; p < sampled.validity.numel(); ++p) {
      T v = (sampled.validity[p] * cm.z_valid[p] >= T(1) - T(1e-6)) ? T(1) : T(0);
      for (int c = 0; c < 3; ++c) mask[p * 3 + c] = v;
      count += 3.0 * static_cast<double>(v);
    }
    if (count == 0) break;  // no overlap at this pose
    auto diff = g.abs(g.sub(sampled.value, g.constant(tgt)));
    auto loss = g.affine(g.sum_all(g.mul_const(diff, mask)), static_cast<T>(1.0 / count), T(0));
    double lv = static_cast<double>(g.value(loss)[0]);

    if (lv < best.best_loss) {
      best.best_loss = lv;
      best.omega = Vec3{double(omega[0]), double(omega[1]), double(omega[2])};
      best.trans = Vec3{double(trans[0]), double(trans[1]), double(trans[2])};
      best.log_depth = log_depth;
    }
    // fifty consecutive loss increases count as divergence
    rising = lv > prev_loss ? rising + 1 : 0;
    prev_loss = lv;
    if (rising >= 50) {
      best.diverged = true;
      return best;
    }

    g.backward(loss);
    if (it < freeze_pose_iters) {
      // let the depth settle before the pose starts moving
      Tensor<T> zero3 = Tensor<T>::zeros({3});
      opt.step({&zero3, &zero3, &g.grad(dleaf)});
    } else {
      opt.step({&g.grad(wleaf), &g.grad(tleaf), &g.grad(dleaf)});
    }
  }
  if (!std::isfinite(best.best_loss)) {
    best.omega = omega0;
    best.trans = trans0;
    best.log_depth = log_depth;
    best.best_loss = 0;
    best.diverged = true;
  }
  return best;
}

template <typename T>
struct Pyramid {
  std::vector<Tensor<T>> src, tgt;
  std::vector<Camera> cams;  // [0] = full resolution
};

template <typename T>
Pyramid<T> build_pyramid(const Tensor<T>& src, const Tensor<T>& tgt, const Camera& cam,
                         int levels) {
  Pyramid<T> p;
  p.src.push_back(src);
  p.tgt.push_back(tgt);
  p.cams.push_back(cam);
  for (int l = 1; l < levels; ++l) {
    if (p.cams.back().width < 12 || p.cams.back().height < 12) break;
    p.src.push_back(downsample_half(p.src.back()));
    p.tgt.push_back(downsample_half(p.tgt.back()));
    p.cams.push_back(camera_half(p.cams.back()));
  }
  return p;
}

}  // namespace detail

template <typename T>
struct CoarsePoseFit {
  PoseSE3 pose;
  double depth = 4.0;  // fitted fronto-parallel proxy depth
  double loss = 0;
  bool diverged = false;
};

// Stage one: six pose parameters plus a single fronto-parallel depth,
// optimized coarse-to-fine over an image pyramid from the identity.
template <typename T>
CoarsePoseFit<T> fit_pose_coarse_full(const Tensor<T>& src, const Tensor<T>& tgt,
                                      const Camera& cam, const PoseFitConfig& cfg) {
  auto pyr = detail::build_pyramid(src, tgt, cam, cfg.pyramid_levels);
  Vec3 omega{}, trans{};
  Tensor<T> logd = Tensor<T>::scalar(static_cast<T>(std::log(cfg.initial_depth)));
  CoarsePoseFit<T> out;
  for (int l = static_cast<int>(pyr.cams.size()) - 1; l >= 0; --l) {
    auto r = detail::run_pose_stage(pyr.src[static_cast<size_t>(l)],
                                    pyr.tgt[static_cast<size_t>(l)],
                                    pyr.cams[static_cast<size_t>(l)], omega, trans, logd,
                                    cfg.iters_per_level, cfg.lr);
    omega = r.omega;
    trans = r.trans;
    logd = r.log_depth;
    out.loss = r.best_loss;
    out.diverged = r.diverged;
  }
  out.pose.R = so3_exp(omega);
  out.pose.t = trans;
  out.depth = std::exp(static_cast<double>(logd[0]));
  return out;
}

template <typename T>
PoseSE3 fit_pose_coarse(const Tensor<T>& src, const Tensor<T>& tgt, const Camera& cam,
                        const PoseFitConfig& cfg = {}) {
  return fit_pose_coarse_full(src, tgt, cam, cfg).pose;
}

// Stage two: the target is rotation-aligned by the coarse rotation, then a
// residual pose and a full per-pixel depth map are fitted on the aligned
// pair. The residual translation lives in the aligned frame, so the final
// pose is compose(coarse, residual).
template <typename T>
PoseEstimate refine_pose_rotation_aligned(const Tensor<T>& src, const Tensor<T>& tgt,
                                          const Camera& cam, const CoarsePoseFit<T>& coarse,
                                          const PoseFitConfig& cfg = {}) {
  Tensor<T> aligned = rotation_align_warp(tgt, coarse.pose.R, cam);
  Vec3 ta0 = matvec(transpose(coarse.pose.R), coarse.pose.t);
  Tensor<T> logd({cam.height, cam.width, 1});
  for (auto& v : logd.data) v = static_cast<T>(std::log(coarse.depth));
  auto r = detail::run_pose_stage(src, aligned, cam, Vec3{}, ta0, std::move(logd),
                                  cfg.refine_iters, cfg.lr, cfg.refine_iters / 4);
  PoseEstimate est;
  est.coarse = coarse.pose;
  est.coarse_loss = coarse.loss;
  est.residual_rotation = r.omega;
  est.residual_translation = r.trans - ta0;
  PoseSE3 residual;
  residual.R = so3_exp(r.omega);
  residual.t = est.residual_translation;
  est.final = pose_compose(coarse.pose, residual);
  est.final.R = orthonormalize(est.final.R);
  est.final_loss = r.best_loss;
  est.diverged = r.diverged;
  return est;
}

template <typename T>
PoseEstimate fit_pose_two_stage(const Tensor<T>& src, const Tensor<T>& tgt, const Camera& cam,
                                const PoseFitConfig& cfg = {}) {
  auto coarse = fit_pose_coarse_full(src, tgt, cam, cfg);
  return refine_pose_rotation_aligned(src, tgt, cam, coarse, cfg);
}

// Baseline with the same iteration budget and no alignment stage: the full
// warp model (pose + per-pixel depth at the finest level) is optimized
// coarse-to-fine directly from the identity.
template <typename T>
PoseEstimate fit_pose_single_stage(const Tensor<T>& src, const Tensor<T>& tgt, const Camera& cam,
                                   const PoseFitConfig& cfg = {}) {
  auto pyr = detail::build_pyramid(src, tgt, cam, cfg.pyramid_levels);
  Vec3 omega{}, trans{};
  Tensor<T> logd = Tensor<T>::scalar(static_cast<T>(std::log(cfg.initial_depth)));
  double loss = 0;
  bool diverged = false;
  for (int l = static_cast<int>(pyr.cams.size()) - 1; l >= 0; --l) {
    auto r = detail::run_pose_stage(pyr.src[static_cast<size_t>(l)],
                                    pyr.tgt[static_cast<size_t>(l)],
                                    pyr.cams[static_cast<size_t>(l)], omega, trans, logd,
                                    cfg.iters_per_level, cfg.lr);
    omega = r.omega;
    trans = r.trans;
    logd = r.log_depth;
    loss = r.best_loss;
    diverged = r.diverged;
  }
  Tensor<T> logd_map({cam.height, cam.width, 1});
  for (auto& v : logd_map.data) v = logd[0];
  auto r = detail::run_pose_stage(src, tgt, cam, omega, trans, std::move(logd_map),
                                  cfg.refine_iters, cfg.lr, cfg.refine_iters / 4);
  PoseEstimate est;
  est.coarse.R = so3_exp(omega);
  est.coarse.t = trans;
  est.coarse_loss = loss;
  est.final.R = orthonormalize(so3_exp(r.omega));
  est.final.t = r.trans;
  est.final_loss = r.best_loss;
  est.diverged = diverged || r.diverged;
  return est;
}

}  // namespace nvde
