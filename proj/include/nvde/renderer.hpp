#pragma once

#include <vector>

#include "nvde/projection.hpp"

namespace nvde {

// Logit filler for samples that fall outside the source or hit a degenerate
// projection. Large enough to vanish under softmax, finite so gradients stay
// usable.
inline constexpr double kOutOfBoundsLogit = -30.0;

// A probability volume on the target raster plus the per-pixel validity of
// the projection that produced it.
template <typename T>
struct ProjectedVolume {
  typename Graph<T>::Id probs;  // [H,W,N], channel softmax applied
  Tensor<T> validity;           // [H,W,1] = max over samples of in-bounds weight
};

namespace detail {

// Samples one single-channel node at projected coordinates. The effective
// logit is z*s + (1 - z*b)*kOutOfBoundsLogit where s is the zero-padded
// sample, b its in-bounds bilinear weight and z the depth-validity bit.
template <typename T>
struct LogitSample {
  typename Graph<T>::Id logit;
  Tensor<T> combined_validity;  // z*b
};

template <typename T>
LogitSample<T> sample_logit_channel(Graph<T>& g, typename Graph<T>::Id channel,
                                    const CoordMap<T>& cm) {
  auto sampled = cm.is_node ? g.bilinear_sample(channel, cm.node)
                            : g.bilinear_sample(channel, cm.constant);
  Tensor<T> combined = sampled.validity;
  for (int64_t i = 0; i < combined.numel(); ++i) combined[i] *= cm.z_valid[i];
  Tensor<T> filler = Tensor<T>::uninit(combined.shape);
  for (int64_t i = 0; i < filler.numel(); ++i)
    filler[i] = (T(1) - combined[i]) * static_cast<T>(kOutOfBoundsLogit);
  return {g.fma_const(sampled.value, cm.z_valid, filler), std::move(combined)};
}

template <typename T>
Tensor<T> replicate_channels(const Tensor<T>& m, int c) {
  Tensor<T> out = Tensor<T>::uninit({m.height(), m.width(), c});
  for (int64_t p = 0; p < m.numel(); ++p)
    for (int k = 0; k < c; ++k) out[p * c + k] = m[p];
  return out;
}

}  // namespace detail

// Per-sample projected coordinates for a fixed ray schedule.
template <typename T>
std::vector<CoordMap<T>> schedule_coords(const ProjectionContext<T>& ctx,
                                         const SampleSchedule& sched) {
  std::vector<CoordMap<T>> out;
  out.reserve(sched.distances.size());
  for (double d : sched.distances) out.push_back(ctx.at_const_depth(d));
  return out;
}

// Projected depth probability volume: channel i of the source logit volume is
// sampled at the epipolar position for distance t_i, out-of-bounds samples
// receive the filler logit, then a channel softmax is taken on the target
// raster.
template <typename T>
ProjectedVolume<T> project_logit_volume(Graph<T>& g, typename Graph<T>::Id logits,
                                        const std::vector<CoordMap<T>>& coords) {
  const Tensor<T>& lv = g.value(logits);
  check(lv.rank() == 3 && lv.channels() == static_cast<int>(coords.size()),
        "project_logit_volume: channel count does not match sample count");
  std::vector<typename Graph<T>::Id> projected;
  Tensor<T> validity({lv.height(), lv.width(), 1});
  for (size_t i = 0; i < coords.size(); ++i) {
    auto ch = g.slice_channels(logits, static_cast<int>(i), 1);
    auto ls = detail::sample_logit_channel(g, ch, coords[i]);
    projected.push_back(ls.logit);
    for (int64_t p = 0; p < validity.numel(); ++p)
      validity[p] = std::max(validity[p], ls.combined_validity[p]);
  }
  ProjectedVolume<T> out;
  out.probs = g.softmax_channels(g.concat_channels(
      std::span<const typename Graph<T>::Id>(projected.data(), projected.size())));
  out.validity = std::move(validity);
  return out;
}

template <typename T>
ProjectedVolume<T> project_depth_logits(Graph<T>& g, typename Graph<T>::Id depth_logits,
                                        const SampleSchedule& sched, const PoseRef<T>& pose,
                                        const Camera& cam) {
  ProjectionContext<T> ctx(g, pose, cam);
  auto coords = schedule_coords(ctx, sched);
  return project_logit_volume(g, depth_logits, coords);
}

// Per-sample colors of an image node at the projected coordinates,
// zero-padded outside, masked where the projection is degenerate.
template <typename T>
std::vector<typename Graph<T>::Id> sample_colors(Graph<T>& g, typename Graph<T>::Id image,
                                                 const std::vector<CoordMap<T>>& coords) {
  int c = g.value(image).channels();
  std::vector<typename Graph<T>::Id> out;
  out.reserve(coords.size());
  for (const CoordMap<T>& cm : coords) {
    auto sampled = cm.is_node ? g.bilinear_sample(image, cm.node)
                              : g.bilinear_sample(image, cm.constant);
    typename Graph<T>::Id id = sampled.value;
    if (cm.z_valid.min_value() < T(1))
      id = g.mul_const(id, detail::replicate_channels(cm.z_valid, c));
    out.push_back(id);
  }
  return out;
}

// sum_i weights[...,i] * colors_i
template <typename T>
typename Graph<T>::Id weighted_color_sum(Graph<T>& g, typename Graph<T>::Id weights,
                                         const std::vector<typename Graph<T>::Id>& colors) {
  const Tensor<T>& wv = g.value(weights);
  check(wv.channels() == static_cast<int>(colors.size()),
        "weighted_color_sum: weight/sample count mismatch");
  int c = g.value(colors[0]).channels();
  std::vector<T> ones(static_cast<size_t>(c), T(1));
  typename Graph<T>::Id acc = -1;
  for (size_t i = 0; i < colors.size(); ++i) {
    auto w = g.broadcast_channels(g.slice_channels(weights, static_cast<int>(i), 1), ones);
    auto term = g.mul(w, colors[i]);
    acc = (acc < 0) ? term : g.add(acc, term);
  }
  return acc;
}

// Relaxed volumetric rendering with fixed ray samples: the coarse synthetic
// view is the projected-probability-weighted sum of projected colors.
template <typename T>
typename Graph<T>::Id coarse_synthesize(Graph<T>& g, typename Graph<T>::Id infused_image,
                                        const ProjectedVolume<T>& probs,
                                        const std::vector<CoordMap<T>>& coords) {
  auto colors = sample_colors(g, infused_image, coords);
  return weighted_color_sum(g, probs.probs, colors);
}

template <typename T>
typename Graph<T>::Id coarse_synthesize(Graph<T>& g, typename Graph<T>::Id infused_image,
                                        typename Graph<T>::Id depth_logits,
                                        const SampleSchedule& sched, const PoseRef<T>& pose,
                                        const Camera& cam) {
  ProjectionContext<T> ctx(g, pose, cam);
  auto coords = schedule_coords(ctx, sched);
  auto probs = project_logit_volume(g, depth_logits, coords);
  return coarse_synthesize(g, infused_image, probs, coords);
}

// Expected ray distance under the channel softmax of the source logits.
template <typename T>
typename Graph<T>::Id depth_from_logits(Graph<T>& g, typename Graph<T>::Id depth_logits,
                                        const SampleSchedule& sched) {
  std::vector<T> t(sched.distances.size());
  for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(sched.distances[i]);
  return g.sum_channels(g.scale_channels(g.softmax_channels(depth_logits), t));
}

// Occlusion mask: source-raster softmax first, then each channel is sampled
// at its epipolar position (out-of-bounds contributes zero) and the channel
// sum is clamped to [0,1].
template <typename T>
typename Graph<T>::Id occlusion_mask(Graph<T>& g, typename Graph<T>::Id depth_logits,
                                     const std::vector<CoordMap<T>>& coords) {
  auto probs = g.softmax_channels(depth_logits);
  typename Graph<T>::Id acc = -1;
  for (size_t i = 0; i < coords.size(); ++i) {
    auto ch = g.slice_channels(probs, static_cast<int>(i), 1);
    const CoordMap<T>& cm = coords[i];
    auto sampled = cm.is_node ? g.bilinear_sample(ch, cm.node)
                              : g.bilinear_sample(ch, cm.constant);
    typename Graph<T>::Id id = sampled.value;
    if (cm.z_valid.min_value() < T(1)) id = g.mul_const(id, cm.z_valid);
    acc = (acc < 0) ? id : g.add(acc, id);
  }
  return g.clamp(acc, T(0), T(1));
}

template <typename T>
typename Graph<T>::Id occlusion_mask(Graph<T>& g, typename Graph<T>::Id depth_logits,
                                     const SampleSchedule& sched, const PoseRef<T>& pose,
                                     const Camera& cam) {
  ProjectionContext<T> ctx(g, pose, cam);
  auto coords = schedule_coords(ctx, sched);
  return occlusion_mask(g, depth_logits, coords);
}

// Novel-view depth from fine sampling distances and weights.
template <typename T>
typename Graph<T>::Id novel_view_depth(Graph<T>& g, typename Graph<T>::Id tstar,
                                       typename Graph<T>::Id wstar) {
  const Tensor<T>& w = g.value(wstar);
  int n = w.channels();
  int64_t rows = w.numel() / n;
  for (int64_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (int i = 0; i < n; ++i) s += w[r * n + i];
    check(std::abs(s - T(1)) <= T(1e-4), "novel_view_depth: weights are not normalized");
  }
  return g.sum_channels(g.mul(tstar, wstar));
}

}  // namespace nvde
