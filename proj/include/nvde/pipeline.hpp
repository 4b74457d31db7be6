#pragma once

#include "nvde/heads.hpp"
#include "nvde/objective.hpp"
#include "nvde/vde.hpp"

namespace nvde {

struct PipelineConfig {
  int n_depth = 32;
  int n_vde = 32;
  int n_fine = 16;
  int feat_channels = 32;
  double t_near = 1.0;
  double t_far = 16.0;
  double epsilon_vde = 1e-4;
  bool vde_enabled = true;
  PosEncodingConfig encoding;

  SampleSchedule schedule() const {
    return make_exponential_schedule(t_near, t_far, n_depth);
  }
};

// Every interesting node of one target-view render.
template <typename T>
struct RenderNodes {
  using Id = typename Graph<T>::Id;
  Id depth_logits = -1;  // D^L on the source raster
  Id vde_logits = -1;    // V^L
  Id dhat = -1;          // expected source depth
  Id disparities = -1;   // VDE schedule v_j
  Id vhat = -1;          // VDE activation map
  Id infused = -1;       // I^v
  Id coarse = -1;        // fixed-schedule render
  Id occlusion = -1;     // O in [0,1]
  Id tstar = -1, wstar = -1;
  Id fine = -1;          // adaptive-schedule render
  Id dhat_novel = -1;    // novel-view depth
  Tensor<T> validity;    // projection validity of the geometry samples
};

// Runs the full single-image rendering pipeline for one target pose:
// recalibrated logit volumes, VDE infusion, coarse render, sampler head and
// fine render. `source_image` must be a node (normally a constant leaf).
template <typename T>
RenderNodes<T> build_render(Graph<T>& g, const SceneLeaves<T>& leaves,
                            typename Graph<T>::Id source_image, const Camera& cam,
                            const SampleSchedule& sched, const PoseRef<T>& pose,
                            const PipelineConfig& cfg) {
  RenderNodes<T> out;
  auto gamma = positional_encoding(g, cam, pose, cfg.encoding, &leaves);
  out.depth_logits = recalibrate(g, leaves.feat_depth(), gamma, leaves.ids[2], leaves.ids[3],
                                 leaves.ids[4], leaves.ids[5]);
  out.vde_logits = recalibrate(g, leaves.feat_vde(), gamma, leaves.ids[6], leaves.ids[7],
                               leaves.ids[8], leaves.ids[9]);
  out.dhat = depth_from_logits(g, out.depth_logits, sched);

  if (cfg.vde_enabled) {
    out.disparities =
        vde_disparity_schedule(g, out.dhat, cfg.n_vde, static_cast<T>(cfg.epsilon_vde));
    PoseRef<T> tpose = translation_only(g, pose);
    auto vcoords = vde_coords(g, out.disparities, tpose, cam);
    auto vp = project_vde_logits(g, out.vde_logits, vcoords);
    auto low = low_pass(g, source_image);
    out.infused = infuse_vde(g, source_image, low, vp, vcoords);
    out.vhat = vde_activation(g, out.vde_logits, out.disparities);
  } else {
    out.infused = source_image;
  }

  ProjectionContext<T> ctx(g, pose, cam);
  auto coords = schedule_coords(ctx, sched);
  auto dp = project_logit_volume(g, out.depth_logits, coords);
  auto colors = sample_colors(g, out.infused, coords);
  out.coarse = weighted_color_sum(g, dp.probs, colors);
  out.occlusion = occlusion_mask(g, out.depth_logits, coords);
  auto fs = sampler_head(g, dp.probs, colors, leaves, sched);
  out.tstar = fs.tstar;
  out.wstar = fs.wstar;
  out.fine = fine_synthesize(g, out.infused, out.tstar, out.wstar, ctx);
  out.dhat_novel = novel_view_depth(g, out.tstar, out.wstar);
  out.validity = dp.validity;
  return out;
}

// Colors are kept unbounded inside the graph; clamping happens only when an
// image leaves the differentiable pipeline.
template <typename T>
Tensor<T> emit_image(const Tensor<T>& img) {
  Tensor<T> out = img;
  for (auto& v : out.data) v = std::min(T(0.5), std::max(T(-0.5), v));
  return out;
}

}  // namespace nvde
