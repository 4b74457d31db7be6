#pragma once

#include <array>
#include <vector>

#include "nvde/renderer.hpp"
#include "nvde/rng.hpp"

namespace nvde {

enum class GammaMode { learnable, periodic };

// Positional encoding configuration. Inputs are always the 8 scalars
// (normalized pixel coords, axis-angle of the pose rotation, translation);
// the learnable head maps them to 16 channels, the periodic mode emits
// sin/cos pairs for `frequencies` octaves (8*2*L channels).
struct PosEncodingConfig {
  GammaMode mode = GammaMode::learnable;
  int frequencies = 4;

  int output_width() const {
    return mode == GammaMode::learnable ? 16 : 8 * 2 * frequencies;
  }
};

inline constexpr int kGammaInputs = 8;
inline constexpr int kGammaHidden = 16;
inline constexpr int kHeadHidden = 32;     // F_D / F_V hidden units
inline constexpr int kSamplerHidden = 64;  // F_S hidden units

// Per-scene trainable state: pixel-aligned feature grids plus the
// recalibration, sampler and encoding heads.
template <typename T>
struct SceneParams {
  Tensor<T> feat_depth, feat_vde;                     // [H,W,C] grids
  Tensor<T> fd_w1, fd_b1, fd_w2, fd_b2;               // F_D
  Tensor<T> fv_w1, fv_b1, fv_w2, fv_b2;               // F_V
  Tensor<T> fs_w1, fs_b1, fs_w2, fs_b2, fs_w3, fs_b3; // F_S
  Tensor<T> gm_w1, gm_b1, gm_w2, gm_b2;               // learnable gamma

  std::vector<Tensor<T>*> all() {
    return {&feat_depth, &feat_vde, &fd_w1, &fd_b1, &fd_w2, &fd_b2,
            &fv_w1, &fv_b1, &fv_w2, &fv_b2, &fs_w1, &fs_b1, &fs_w2,
            &fs_b2, &fs_w3, &fs_b3, &gm_w1, &gm_b1, &gm_w2, &gm_b2};
  }
  static std::vector<const char*> names() {
    return {"W_D", "W_V", "F_D.w1", "F_D.b1", "F_D.w2", "F_D.b2",
            "F_V.w1", "F_V.b1", "F_V.w2", "F_V.b2", "F_S.w1", "F_S.b1",
            "F_S.w2", "F_S.b2", "F_S.w3", "F_S.b3", "gamma.w1", "gamma.b1",
            "gamma.w2", "gamma.b2"};
  }
};

// Graph ids of the registered parameter leaves, same order as
// SceneParams::all().
template <typename T>
struct SceneLeaves {
  std::array<typename Graph<T>::Id, 20> ids;
  typename Graph<T>::Id feat_depth() const { return ids[0]; }
  typename Graph<T>::Id feat_vde() const { return ids[1]; }
};

namespace detail {
template <typename T>
Tensor<T> fan_in_init(Rng& rng, int rows, int cols) {
  T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rows)));
  return rng.uniform_tensor<T>({rows, cols}, -bound, bound);
}
}  // namespace detail

// Uniform +-1/sqrt(fan_in) weights, zero biases. The final sampler layer is
// zero-initialized so fitting starts from uniform fine sampling.
template <typename T>
SceneParams<T> init_scene_params(int h, int w, int feat_channels, int n_depth, int n_vde,
                                 int n_fine, const PosEncodingConfig& enc, Rng& rng) {
  SceneParams<T> p;
  p.feat_depth = rng.normal_tensor<T>({h, w, feat_channels}, T(0), T(0.01));
  p.feat_vde = rng.normal_tensor<T>({h, w, feat_channels}, T(0), T(0.01));
  int gin = feat_channels + enc.output_width();
  p.fd_w1 = detail::fan_in_init<T>(rng, gin, kHeadHidden);
  p.fd_b1 = Tensor<T>::zeros({kHeadHidden});
  p.fd_w2 = detail::fan_in_init<T>(rng, kHeadHidden, n_depth);
  p.fd_b2 = Tensor<T>::zeros({n_depth});
  p.fv_w1 = detail::fan_in_init<T>(rng, gin, kHeadHidden);
  p.fv_b1 = Tensor<T>::zeros({kHeadHidden});
  p.fv_w2 = detail::fan_in_init<T>(rng, kHeadHidden, n_vde);
  p.fv_b2 = Tensor<T>::zeros({n_vde});
  p.fs_w1 = detail::fan_in_init<T>(rng, 4 * n_depth, kSamplerHidden);
  p.fs_b1 = Tensor<T>::zeros({kSamplerHidden});
  p.fs_w2 = detail::fan_in_init<T>(rng, kSamplerHidden, kSamplerHidden);
  p.fs_b2 = Tensor<T>::zeros({kSamplerHidden});
  p.fs_w3 = Tensor<T>::zeros({kSamplerHidden, 2 * n_fine});
  p.fs_b3 = Tensor<T>::zeros({2 * n_fine});
  p.gm_w1 = detail::fan_in_init<T>(rng, kGammaInputs, kGammaHidden);
  p.gm_b1 = Tensor<T>::zeros({kGammaHidden});
  p.gm_w2 = detail::fan_in_init<T>(rng, kGammaHidden, 16);
  p.gm_b2 = Tensor<T>::zeros({16});
  return p;
}

template <typename T>
SceneLeaves<T> register_scene_leaves(Graph<T>& g, SceneParams<T>& p) {
  SceneLeaves<T> l;
  auto tensors = p.all();
  for (size_t i = 0; i < tensors.size(); ++i) l.ids[i] = g.leaf(*tensors[i]);
  return l;
}

// Raw 8-channel encoding input: pixel coords normalized to [-1,1] by the
// image extents, then the pose parameters.
template <typename T>
typename Graph<T>::Id encoding_inputs(Graph<T>& g, const Camera& cam, const PoseRef<T>& pose) {
  int h = cam.height, w = cam.width;
  Tensor<T> coords({h, w, 2});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      coords.at(i, j, 0) = static_cast<T>(w > 1 ? 2.0 * j / (w - 1) - 1.0 : 0.0);
      coords.at(i, j, 1) = static_cast<T>(h > 1 ? 2.0 * i / (h - 1) - 1.0 : 0.0);
    }
  if (pose.fixed) {
    auto params = pose.params(g);
    Tensor<T> full({h, w, kGammaInputs});
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        full.at(i, j, 0) = coords.at(i, j, 0);
        full.at(i, j, 1) = coords.at(i, j, 1);
        for (int k = 0; k < 6; ++k) full.at(i, j, 2 + k) = static_cast<T>(params[k]);
      }
    return g.constant(std::move(full));
  }
  auto c = g.constant(std::move(coords));
  auto wmap = g.broadcast_to_pixels(pose.omega, h, w);
  auto tmap = g.broadcast_to_pixels(pose.trans, h, w);
  return g.concat_channels({c, wmap, tmap});
}

// gamma(p, pose): learnable Linear-ELU-Linear head or sine-cosine bands.
template <typename T>
typename Graph<T>::Id positional_encoding(Graph<T>& g, const Camera& cam, const PoseRef<T>& pose,
                                          const PosEncodingConfig& cfg,
                                          const SceneLeaves<T>* leaves) {
  auto base = encoding_inputs(g, cam, pose);
  if (cfg.mode == GammaMode::learnable) {
    check(leaves != nullptr, "positional_encoding: learnable mode needs parameters");
    auto h1 = g.elu(g.linear(base, leaves->ids[16], leaves->ids[17]));
    return g.linear(h1, leaves->ids[18], leaves->ids[19]);
  }
  std::vector<typename Graph<T>::Id> bands;
  const double pi = 3.14159265358979323846;
  for (int l = 0; l < cfg.frequencies; ++l) {
    auto scaled = g.affine(base, static_cast<T>(std::ldexp(pi, l)), T(0));
    bands.push_back(g.sin(scaled));
    bands.push_back(g.cos(scaled));
  }
  return g.concat_channels(std::span<const typename Graph<T>::Id>(bands.data(), bands.size()));
}

// Recalibration head: per-pixel logits from the feature grid and the pose
// encoding, D^L(p) = F(W(p), gamma(p)).
template <typename T>
typename Graph<T>::Id recalibrate(Graph<T>& g, typename Graph<T>::Id features,
                                  typename Graph<T>::Id gamma, typename Graph<T>::Id w1,
                                  typename Graph<T>::Id b1, typename Graph<T>::Id w2,
                                  typename Graph<T>::Id b2) {
  auto x = g.concat_channels({features, gamma});
  return g.linear(g.elu(g.linear(x, w1, b1)), w2, b2);
}

template <typename T>
struct FineSampling {
  typename Graph<T>::Id tstar;  // [H,W,N*] distances in (t_n, t_f)
  typename Graph<T>::Id wstar;  // [H,W,N*] softmaxed weights
};

// Sampler head: maps the projected probabilities and the N projected colors
// (sample-major, [DP_0..DP_{N-1}, c_0.rgb, ..., c_{N-1}.rgb], width 4N) to N*
// refined distances and weights. Raw output is split distances-first;
// distances are squashed into the coarse schedule's range log-space,
// t* = t_n (t_f/t_n)^sigmoid(raw).
template <typename T>
FineSampling<T> sampler_head(Graph<T>& g, typename Graph<T>::Id probs,
                             const std::vector<typename Graph<T>::Id>& colors,
                             const SceneLeaves<T>& leaves, const SampleSchedule& sched) {
  std::vector<typename Graph<T>::Id> parts{probs};
  parts.insert(parts.end(), colors.begin(), colors.end());
  auto x = g.concat_channels(std::span<const typename Graph<T>::Id>(parts.data(), parts.size()));
  auto h1 = g.elu(g.linear(x, leaves.ids[10], leaves.ids[11]));
  auto h2 = g.elu(g.linear(h1, leaves.ids[12], leaves.ids[13]));
  auto raw = g.linear(h2, leaves.ids[14], leaves.ids[15]);
  int n_fine = g.value(raw).channels() / 2;
  auto draw = g.slice_channels(raw, 0, n_fine);
  auto wraw = g.slice_channels(raw, n_fine, n_fine);
  T log_ratio = static_cast<T>(std::log(sched.t_far / sched.t_near));
  T log_tn = static_cast<T>(std::log(sched.t_near));
  FineSampling<T> out;
  out.tstar = g.exp(g.affine(g.sigmoid(draw), log_ratio, log_tn));
  out.wstar = g.softmax_channels(wraw);
  return out;
}

// Fine-grained relaxed volumetric rendering: per-pixel adaptive distances
// replace the fixed schedule.
template <typename T>
typename Graph<T>::Id fine_synthesize(Graph<T>& g, typename Graph<T>::Id infused_image,
                                      typename Graph<T>::Id tstar, typename Graph<T>::Id wstar,
                                      const ProjectionContext<T>& ctx) {
  const Tensor<T>& tv = g.value(tstar);
  int n = tv.channels();
  int c = g.value(infused_image).channels();
  std::vector<T> ones(static_cast<size_t>(c), T(1));
  typename Graph<T>::Id acc = -1;
  for (int k = 0; k < n; ++k) {
    auto depth = g.slice_channels(tstar, k, 1);
    CoordMap<T> cm = ctx.at_depth_node(depth);
    auto sampled = cm.is_node ? g.bilinear_sample(infused_image, cm.node)
                              : g.bilinear_sample(infused_image, cm.constant);
    typename Graph<T>::Id color = sampled.value;
    if (cm.z_valid.min_value() < T(1))
      color = g.mul_const(color, detail::replicate_channels(cm.z_valid, c));
    auto w = g.broadcast_channels(g.slice_channels(wstar, k, 1), ones);
    auto term = g.mul(w, color);
    acc = (acc < 0) ? term : g.add(acc, term);
  }
  return acc;
}

template <typename T>
typename Graph<T>::Id fine_synthesize(Graph<T>& g, typename Graph<T>::Id infused_image,
                                      typename Graph<T>::Id tstar, typename Graph<T>::Id wstar,
                                      const PoseRef<T>& pose, const Camera& cam) {
  ProjectionContext<T> ctx(g, pose, cam);
  return fine_synthesize(g, infused_image, tstar, wstar, ctx);
}

}  // namespace nvde
