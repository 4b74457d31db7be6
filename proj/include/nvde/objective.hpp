#pragma once

#include "nvde/vde.hpp"

namespace nvde {

// alpha_p is carried for interface fidelity: the perceptual term it would
// weight needs a pretrained classifier and is disabled in this build.
// lambda_s optionally enables a structural (SSIM) surrogate.
struct LossWeights {
  double alpha_p = 0.01;
  double alpha_sm = 0.05;
  double lambda_s = 0.0;
};

// I_o = (1-O) gt + O pred. Low occlusion confidence swaps in the ground
// truth, so no gradient flows through unseen content.
template <typename T>
typename Graph<T>::Id occlusion_blend(Graph<T>& g, typename Graph<T>::Id pred,
                                      typename Graph<T>::Id gt, typename Graph<T>::Id occ) {
  check(g.value(pred).same_shape(g.value(gt)), "occlusion_blend: shape mismatch");
  int c = g.value(pred).channels();
  std::vector<T> ones(static_cast<size_t>(c), T(1));
  auto o = g.broadcast_channels(occ, ones);
  auto om = g.broadcast_channels(g.affine(occ, T(-1), T(1)), ones);
  return g.add(g.mul(om, gt), g.mul(o, pred));
}

namespace detail {
template <typename T>
Tensor<T> binary_valid_mask(const Tensor<T>& validity, int channels) {
  Tensor<T> m({validity.height(), validity.width(), channels});
  for (int64_t p = 0; p < validity.numel(); ++p) {
    T v = validity[p] > T(0) ? T(1) : T(0);
    for (int c = 0; c < channels; ++c) m[p * channels + c] = v;
  }
  return m;
}
}  // namespace detail

// Mean SSIM between two image nodes (11x11 Gaussian window, standard
// constants on the [0,1] range). Differentiable; used only as the optional
// structural surrogate.
template <typename T>
typename Graph<T>::Id ssim_mean(Graph<T>& g, typename Graph<T>::Id a, typename Graph<T>::Id b) {
  Tensor<T> win = gaussian_kernel<T>(11, 1.5);
  auto x = g.affine(a, T(1), T(0.5));
  auto y = g.affine(b, T(1), T(0.5));
  auto mx = g.conv2d_fixed(x, win);
  auto my = g.conv2d_fixed(y, win);
  auto mx2 = g.mul(mx, mx);
  auto my2 = g.mul(my, my);
  auto mxy = g.mul(mx, my);
  auto sx = g.sub(g.conv2d_fixed(g.mul(x, x), win), mx2);
  auto sy = g.sub(g.conv2d_fixed(g.mul(y, y), win), my2);
  auto sxy = g.sub(g.conv2d_fixed(g.mul(x, y), win), mxy);
  T c1 = T(0.01 * 0.01), c2 = T(0.03 * 0.03);
  auto num = g.mul(g.affine(mxy, T(2), c1), g.affine(sxy, T(2), c2));
  auto den = g.mul(g.affine(g.add(mx2, my2), T(1), c1), g.affine(g.add(sx, sy), T(1), c2));
  return g.mean_all(g.div(num, den));
}

// L1 photometric loss averaged over valid pixels (validity > 0). The
// perceptual term of the reference formulation is out of scope; lambda_s
// optionally adds (1-SSIM)/2.
template <typename T>
typename Graph<T>::Id synthesis_loss(Graph<T>& g, typename Graph<T>::Id blended,
                                     typename Graph<T>::Id gt, const Tensor<T>& validity,
                                     double lambda_s = 0.0) {
  int c = g.value(blended).channels();
  Tensor<T> mask = detail::binary_valid_mask(validity, c);
  double count = 0;
  for (const T& v : mask.data) count += static_cast<double>(v);
  check(count > 0, "synthesis_loss: zero valid pixels");
  auto diff = g.abs(g.sub(blended, gt));
  auto loss = g.affine(g.sum_all(g.mul_const(diff, mask)), static_cast<T>(1.0 / count), T(0));
  if (lambda_s > 0.0) {
    auto dssim = g.affine(ssim_mean(g, blended, gt), static_cast<T>(-0.5 * lambda_s),
                          static_cast<T>(0.5 * lambda_s));
    loss = g.add(loss, dssim);
  }
  return loss;
}

// Edge-aware smoothness on the mean-normalized disparity d = (1/Dhat)/mean:
//   mean |dx d| exp(-|dx Ibar|) + mean |dy d| exp(-|dy Ibar|)
// with forward differences; Ibar is the channel-mean intensity of the
// (constant) conditioning image.
template <typename T>
typename Graph<T>::Id smoothness_loss(Graph<T>& g, typename Graph<T>::Id depth_map,
                                      const Tensor<T>& image) {
  const Tensor<T>& dv = g.value(depth_map);
  check(dv.min_value() > T(0), "smoothness_loss: depth must be positive");
  int h = dv.height(), w = dv.width();
  check(image.height() == h && image.width() == w, "smoothness_loss: shape mismatch");

  Tensor<T> intensity({h, w, 1});
  int c = image.channels();
  for (int64_t p = 0; p < intensity.numel(); ++p) {
    T acc = T(0);
    for (int k = 0; k < c; ++k) acc += image[p * c + k];
    intensity[p] = acc / static_cast<T>(c);
  }
  Tensor<T> wx({h, w - 1, 1}), wy({h - 1, w, 1});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j + 1 < w; ++j)
      wx.at(i, j, 0) = std::exp(-std::abs(intensity.at(i, j + 1, 0) - intensity.at(i, j, 0)));
  for (int i = 0; i + 1 < h; ++i)
    for (int j = 0; j < w; ++j)
      wy.at(i, j, 0) = std::exp(-std::abs(intensity.at(i + 1, j, 0) - intensity.at(i, j, 0)));

  auto disp = g.rcp(depth_map);
  auto mean_disp = g.broadcast_to_pixels(g.mean_all(disp), h, w);
  auto d = g.div(disp, mean_disp);
  auto tx = g.mean_all(g.mul_const(g.abs(g.diff_x(d)), wx));
  auto ty = g.mean_all(g.mul_const(g.abs(g.diff_y(d)), wy));
  return g.add(tx, ty);
}

// l_total = l_syn(coarse) + l_syn(fine) + alpha_sm * l_sm for one target
// view. Both rendering stages are supervised.
template <typename T>
typename Graph<T>::Id total_loss(Graph<T>& g, typename Graph<T>::Id coarse,
                                 typename Graph<T>::Id fine, typename Graph<T>::Id gt,
                                 typename Graph<T>::Id occ, typename Graph<T>::Id depth_map,
                                 const Tensor<T>& image, const Tensor<T>& validity,
                                 const LossWeights& w) {
  auto lc = synthesis_loss(g, occlusion_blend(g, coarse, gt, occ), gt, validity, w.lambda_s);
  auto lf = synthesis_loss(g, occlusion_blend(g, fine, gt, occ), gt, validity, w.lambda_s);
  auto ls = smoothness_loss(g, depth_map, image);
  return g.add(g.add(lc, lf), g.affine(ls, static_cast<T>(w.alpha_sm), T(0)));
}

}  // namespace nvde
