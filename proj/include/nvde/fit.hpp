#pragma once

#include <string>
#include <vector>

#include "nvde/io.hpp"
#include "nvde/optim.hpp"
#include "nvde/pipeline.hpp"
#include "nvde/posefit.hpp"

namespace nvde {

enum class PoseSource { ground_truth, estimated };

// Per-scene fitting configuration. Optimizer settings follow the reference
// training recipe (Adam 0.9/0.999, learning rate halved at 50/75/90% of the
// run); the iteration budget and learning rate are per-scene knobs.
struct FitConfig {
  int n_depth = 32;
  int n_vde = 32;
  int n_fine = 16;
  int feat_channels = 32;
  double t_near = 1.0;
  double t_far = 16.0;
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int iters = 2000;
  std::vector<double> lr_halving_points{0.5, 0.75, 0.9};
  uint64_t seed = 0;
  GammaMode gamma_mode = GammaMode::learnable;
  int gamma_frequencies = 4;
  double epsilon_vde = 1e-4;
  double alpha_sm = 0.05;
  double alpha_p = 0.01;  // perceptual weight, inert in this build
  double lambda_s = 0.0;
  bool vde_enabled = true;
  PoseSource pose_source = PoseSource::ground_truth;
  PoseFitConfig pose_cfg;

  PipelineConfig pipeline() const {
    PipelineConfig p;
    p.n_depth = n_depth;
    p.n_vde = n_vde;
    p.n_fine = n_fine;
    p.feat_channels = feat_channels;
    p.t_near = t_near;
    p.t_far = t_far;
    p.epsilon_vde = epsilon_vde;
    p.vde_enabled = vde_enabled;
    p.encoding.mode = gamma_mode;
    p.encoding.frequencies = gamma_frequencies;
    return p;
  }

  LossWeights loss_weights() const {
    LossWeights w;
    w.alpha_p = alpha_p;
    w.alpha_sm = alpha_sm;
    w.lambda_s = lambda_s;
    return w;
  }
};

template <typename T>
struct FitResult {
  SceneParams<T> params;
  std::vector<PoseSE3> target_poses;  // projection poses actually used (one per target)
  std::vector<double> loss_trace;
  bool diverged = false;
};

// Fits the per-scene parameters against the two neighbor views of frame 0.
// Frame 0 is the source; frames 1 and 2 are the supervised targets. Any
// further frames are ignored (useful as held-out views).
template <typename T>
FitResult<T> fit_scene(const FrameSet<T>& frames, const FitConfig& cfg) {
  check(frames.images.size() >= 3, "fit_scene: need a source and two target frames");
  const Camera& cam = frames.cam;
  int h = cam.height, w = cam.width;
  PipelineConfig pcfg = cfg.pipeline();
  SampleSchedule sched = pcfg.schedule();
  LossWeights lw = cfg.loss_weights();

  FitResult<T> out;
  Rng rng(cfg.seed);
  out.params = init_scene_params<T>(h, w, cfg.feat_channels, cfg.n_depth, cfg.n_vde, cfg.n_fine,
                                    pcfg.encoding, rng);

  std::vector<int> target_ids{1, 2};
  for (int tid : target_ids) {
    if (cfg.pose_source == PoseSource::ground_truth) {
      out.target_poses.push_back(pose_inverse(frames.poses[static_cast<size_t>(tid)]));
    } else {
      auto est = fit_pose_two_stage(frames.images[0], frames.images[static_cast<size_t>(tid)],
                                    cam, cfg.pose_cfg);
      out.target_poses.push_back(est.final);
    }
  }

  auto lr_at = [&](int iter) {
    double lr = cfg.lr;
    for (double frac : cfg.lr_halving_points)
      if (iter >= static_cast<int>(frac * cfg.iters)) lr *= 0.5;
    return lr;
  };

  AdamOptimizer<T> opt(out.params.all(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  out.loss_trace.reserve(static_cast<size_t>(cfg.iters));

  for (int iter = 0; iter < cfg.iters; ++iter) {
    opt.set_lr(lr_at(iter));
    Graph<T> g;
    auto leaves = register_scene_leaves(g, out.params);
    auto source = g.constant(frames.images[0]);
    typename Graph<T>::Id loss = -1;
    for (size_t k = 0; k < target_ids.size(); ++k) {
      auto pose = PoseRef<T>::fixed_pose(out.target_poses[k]);
      auto rn = build_render(g, leaves, source, cam, sched, pose, pcfg);
      auto gt = g.constant(frames.images[static_cast<size_t>(target_ids[k])]);
      auto lt = total_loss(g, rn.coarse, rn.fine, gt, rn.occlusion, rn.dhat, frames.images[0],
                           rn.validity, lw);
      loss = (loss < 0) ? lt : g.add(loss, lt);
    }
    loss = g.affine(loss, T(1) / static_cast<T>(target_ids.size()), T(0));
    double lv = static_cast<double>(g.value(loss)[0]);
    out.loss_trace.push_back(lv);
    if (!std::isfinite(lv)) {
      out.diverged = true;
      return out;
    }
    g.backward(loss);
    std::vector<const Tensor<T>*> grads;
    grads.reserve(leaves.ids.size());
    for (auto id : leaves.ids) grads.push_back(&g.grad(id));
    opt.step(grads);
  }
  return out;
}

// ----------------------------------------------------------- inference

template <typename T>
struct RenderOutputs {
  Tensor<T> novel;        // fine render, clamped to the color range
  Tensor<T> coarse;
  Tensor<T> depth;        // source-view depth estimate
  Tensor<T> novel_depth;  // novel-view depth from the fine samples
  Tensor<T> vde_map;      // VDE activation (zeros when VDE is disabled)
  Tensor<T> occlusion;
  Tensor<T> validity;
};

// Renders a novel view for a user pose given as camera-to-world extrinsics
// of the target view (identity reproduces the source image).
template <typename T>
RenderOutputs<T> render_novel_view(SceneParams<T>& params, const Tensor<T>& source,
                                   const Camera& cam, const FitConfig& cfg,
                                   const PoseSE3& target_cam_to_world) {
  PipelineConfig pcfg = cfg.pipeline();
  SampleSchedule sched = pcfg.schedule();
  Graph<T> g;
  auto leaves = register_scene_leaves(g, params);
  auto src = g.constant(source);
  auto pose = PoseRef<T>::fixed_pose(pose_inverse(target_cam_to_world));
  auto rn = build_render(g, leaves, src, cam, sched, pose, pcfg);
  RenderOutputs<T> out;
  out.novel = emit_image(g.value(rn.fine));
  out.coarse = emit_image(g.value(rn.coarse));
  out.depth = g.value(rn.dhat);
  out.novel_depth = g.value(rn.dhat_novel);
  out.vde_map = rn.vhat >= 0 ? g.value(rn.vhat) : Tensor<T>::zeros({cam.height, cam.width, 1});
  out.occlusion = g.value(rn.occlusion);
  out.validity = rn.validity;
  return out;
}

// ----------------------------------------------------------- checkpoints

inline Tensor<double> fit_config_tensor(const FitConfig& c) {
  std::vector<double> v{
      static_cast<double>(c.n_depth), static_cast<double>(c.n_vde),
      static_cast<double>(c.n_fine), static_cast<double>(c.feat_channels),
      c.t_near, c.t_far, c.lr, c.beta1, c.beta2, static_cast<double>(c.iters),
      static_cast<double>(c.seed), c.gamma_mode == GammaMode::learnable ? 0.0 : 1.0,
      static_cast<double>(c.gamma_frequencies), c.epsilon_vde, c.alpha_sm, c.alpha_p,
      c.lambda_s, c.vde_enabled ? 1.0 : 0.0};
  int n = static_cast<int>(v.size());
  return Tensor<double>::from({n}, std::move(v));
}

inline FitConfig fit_config_from_tensor(const Tensor<double>& t) {
  check(t.numel() >= 18, "checkpoint: bad config tensor");
  FitConfig c;
  c.n_depth = static_cast<int>(t[0]);
  c.n_vde = static_cast<int>(t[1]);
  c.n_fine = static_cast<int>(t[2]);
  c.feat_channels = static_cast<int>(t[3]);
  c.t_near = t[4];
  c.t_far = t[5];
  c.lr = t[6];
  c.beta1 = t[7];
  c.beta2 = t[8];
  c.iters = static_cast<int>(t[9]);
  c.seed = static_cast<uint64_t>(t[10]);
  c.gamma_mode = t[11] == 0.0 ? GammaMode::learnable : GammaMode::periodic;
  c.gamma_frequencies = static_cast<int>(t[12]);
  c.epsilon_vde = t[13];
  c.alpha_sm = t[14];
  c.alpha_p = t[15];
  c.lambda_s = t[16];
  c.vde_enabled = t[17] != 0.0;
  return c;
}

template <typename T>
Checkpoint make_checkpoint(const FitResult<T>& fit, const FrameSet<T>& frames,
                           const FitConfig& cfg) {
  Checkpoint ckpt;
  auto names = SceneParams<T>::names();
  auto tensors = const_cast<FitResult<T>&>(fit).params.all();
  for (size_t i = 0; i < tensors.size(); ++i) ckpt.add(names[i], *tensors[i]);

  Tensor<double> poses({static_cast<int>(fit.target_poses.size()), 12});
  for (size_t i = 0; i < fit.target_poses.size(); ++i) {
    const PoseSE3& p = fit.target_poses[i];
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) poses[static_cast<int64_t>(i) * 12 + 4 * r + c] = p.R(r, c);
      poses[static_cast<int64_t>(i) * 12 + 4 * r + 3] = p.t[r];
    }
  }
  ckpt.add("poses", std::move(poses));
  ckpt.add("source_image", frames.images[0]);
  ckpt.add("camera",
           Tensor<double>::from({6}, {frames.cam.fx, frames.cam.fy, frames.cam.cx, frames.cam.cy,
                                      static_cast<double>(frames.cam.width),
                                      static_cast<double>(frames.cam.height)}));
  Tensor<double> config = fit_config_tensor(cfg);
  ckpt.add("config_hash", hash_tensor(config));
  ckpt.add("config", std::move(config));
  return ckpt;
}

template <typename T>
struct LoadedScene {
  SceneParams<T> params;
  Tensor<T> source;
  Camera cam;
  FitConfig cfg;
};

template <typename T>
LoadedScene<T> scene_from_checkpoint(const Checkpoint& ckpt) {
  LoadedScene<T> s;
  Tensor<double> config = ckpt.get<double>("config");
  Tensor<double> stored_hash = ckpt.get<double>("config_hash");
  Tensor<double> computed = hash_tensor(config);
  check(std::memcmp(&stored_hash[0], &computed[0], sizeof(double)) == 0,
        "checkpoint: config hash mismatch");
  s.cfg = fit_config_from_tensor(config);
  s.source = ckpt.get<T>("source_image");
  Tensor<double> cam = ckpt.get<double>("camera");
  s.cam = Camera{cam[0], cam[1], cam[2], cam[3], static_cast<int>(cam[4]),
                 static_cast<int>(cam[5])};
  auto names = SceneParams<T>::names();
  auto tensors = s.params.all();
  for (size_t i = 0; i < tensors.size(); ++i) *tensors[i] = ckpt.get<T>(names[i]);
  return s;
}

// Poses are row-major [R|t] blocks, one row per target.
inline std::vector<PoseSE3> poses_from_checkpoint(const Checkpoint& ckpt) {
  Tensor<double> poses = ckpt.get<double>("poses");
  std::vector<PoseSE3> out;
  for (int i = 0; i < poses.dim(0); ++i) {
    PoseSE3 p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.R(r, c) = poses[static_cast<int64_t>(i) * 12 + 4 * r + c];
      p.t[r] = poses[static_cast<int64_t>(i) * 12 + 4 * r + 3];
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace nvde
