#pragma once

#include <vector>

#include "nvde/renderer.hpp"

namespace nvde {

template <typename T>
Tensor<T> box_kernel(int size) {
  Tensor<T> k({size, size});
  T w = T(1) / static_cast<T>(size * size);
  for (auto& v : k.data) v = w;
  return k;
}

template <typename T>
Tensor<T> gaussian_kernel(int size, double sigma) {
  Tensor<T> k({size, size});
  int r = size / 2;
  double sum = 0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      double d2 = double(i - r) * (i - r) + double(j - r) * (j - r);
      double v = std::exp(-d2 / (2.0 * sigma * sigma));
      k.data[static_cast<size_t>(i * size + j)] = static_cast<T>(v);
      sum += v;
    }
  for (auto& v : k.data) v = static_cast<T>(double(v) / sum);
  return k;
}

template <typename T>
typename Graph<T>::Id low_pass(Graph<T>& g, typename Graph<T>::Id image) {
  return g.conv2d_fixed(image, box_kernel<T>(5));
}

// I_H = I - box5(I): the residual that roughly carries the high-frequency
// detail of the input.
template <typename T>
typename Graph<T>::Id high_freq_residual(Graph<T>& g, typename Graph<T>::Id image) {
  return g.sub(image, low_pass(g, image));
}

// Per-pixel negative disparity schedule
//   v_j(p) = -(j/(N_v-1)) (1/Dhat(p) - eps) - eps,
// running from -eps down to -1/Dhat(p). The magnitude never exceeds the
// scene disparity at p. Depths used for projection are 1/v_j (negative).
template <typename T>
typename Graph<T>::Id vde_disparity_schedule(Graph<T>& g, typename Graph<T>::Id depth_map,
                                             int n_vde, T eps) {
  check(n_vde >= 2, "vde_disparity_schedule: need at least two samples");
  check(eps > T(0), "vde_disparity_schedule: eps must be positive");
  const Tensor<T>& d = g.value(depth_map);
  check(d.channels() == 1, "vde_disparity_schedule: depth map must be single channel");
  check(d.min_value() > T(0), "vde_disparity_schedule: nonpositive depth");
  auto inv_minus_eps = g.affine(g.rcp(depth_map), T(1), -eps);
  std::vector<T> coeff(static_cast<size_t>(n_vde));
  for (int j = 0; j < n_vde; ++j)
    coeff[static_cast<size_t>(j)] = -static_cast<T>(j) / static_cast<T>(n_vde - 1);
  return g.affine(g.broadcast_channels(inv_minus_eps, coeff), T(1), -eps);
}

// Projection coordinates for every VDE sample: channel j lifts the pixel at
// depth 1/v_j(p) through a rotation-free pose (pure rotations cannot induce
// view-dependent effects).
template <typename T>
std::vector<CoordMap<T>> vde_coords(Graph<T>& g, typename Graph<T>::Id disparities,
                                    const PoseRef<T>& translation_pose, const Camera& cam) {
  ProjectionContext<T> ctx(g, translation_pose, cam);
  const Tensor<T>& v = g.value(disparities);
  std::vector<CoordMap<T>> out;
  out.reserve(static_cast<size_t>(v.channels()));
  for (int j = 0; j < v.channels(); ++j) {
    auto depth = g.rcp(g.slice_channels(disparities, j, 1));
    out.push_back(ctx.at_depth_node(depth));
  }
  return out;
}

// Strips the rotation off a pose, keeping its translation.
template <typename T>
PoseRef<T> translation_only(Graph<T>& g, const PoseRef<T>& pose) {
  if (pose.fixed) {
    PoseSE3 p;
    p.t = pose.pose.t;
    return PoseRef<T>::fixed_pose(p);
  }
  auto zero = g.constant(Tensor<T>::zeros({3}));
  return PoseRef<T>::trainable(zero, pose.trans);
}

// Projected VDE probabilities from the VDE logit volume.
template <typename T>
ProjectedVolume<T> project_vde_logits(Graph<T>& g, typename Graph<T>::Id vde_logits,
                                      const std::vector<CoordMap<T>>& coords) {
  return project_logit_volume(g, vde_logits, coords);
}

// VDE-infused image. The weighted sum displaces the low-pass content along
// the negative-disparity epipolar positions while the high-frequency residual
// stays in place:
//   I_v = I_H + sum_j VP_j * lowpass(I)(g_j)
// computed in the equivalent delta form
//   I_v = I + sum_j VP_j * (lowpass(I)(g_j) - lowpass(I))
// which reproduces I bit-exactly when the projection is the identity.
template <typename T>
typename Graph<T>::Id infuse_vde(Graph<T>& g, typename Graph<T>::Id image,
                                 typename Graph<T>::Id image_low,
                                 const ProjectedVolume<T>& vde_probs,
                                 const std::vector<CoordMap<T>>& coords) {
  int c = g.value(image).channels();
  std::vector<T> ones(static_cast<size_t>(c), T(1));
  auto samples = sample_colors(g, image_low, coords);
  typename Graph<T>::Id acc = image;
  for (size_t j = 0; j < samples.size(); ++j) {
    auto delta = g.sub(samples[j], image_low);
    auto w = g.broadcast_channels(g.slice_channels(vde_probs.probs, static_cast<int>(j), 1), ones);
    acc = g.add(acc, g.mul(w, delta));
  }
  return acc;
}

// Activation map: expected disparity under the VDE softmax, always in
// [-1/Dhat, -eps].
template <typename T>
typename Graph<T>::Id vde_activation(Graph<T>& g, typename Graph<T>::Id vde_logits,
                                     typename Graph<T>::Id disparities) {
  return g.sum_channels(g.mul(disparities, g.softmax_channels(vde_logits)));
}

}  // namespace nvde
