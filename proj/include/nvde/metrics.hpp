#pragma once

#include <cmath>
#include <optional>

#include "nvde/tensor.hpp"
#include "nvde/vde.hpp"

namespace nvde {

// Quality metrics over images in [0,1]. PSNR values cap at 99 dB for
// (near-)identical inputs.
struct MetricReport {
  double mae = 0, rmse = 0, psnr = 0, psnr_lf = 0, ssim = 0;
  double valid_fraction = 1;
};

inline constexpr double kPsnrCap = 99.0;

namespace detail {

template <typename T>
double masked_mse(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>* mask) {
  check(a.same_shape(b), "metrics: shape mismatch");
  double sum = 0;
  int64_t count = 0;
  int c = a.channels();
  int64_t pixels = a.numel() / c;
  for (int64_t p = 0; p < pixels; ++p) {
    if (mask && (*mask)[p] <= T(0)) continue;
    for (int k = 0; k < c; ++k) {
      double d = static_cast<double>(a[p * c + k]) - static_cast<double>(b[p * c + k]);
      sum += d * d;
      ++count;
    }
  }
  check(count > 0, "metrics: no valid pixels");
  return sum / static_cast<double>(count);
}

template <typename T>
Tensor<T> convolve_reflect(const Tensor<T>& img, const Tensor<T>& kernel) {
  int H = img.height(), W = img.width(), C = img.channels();
  int kh = kernel.dim(0), kw = kernel.dim(1);
  check(kh <= H && kw <= W, "metrics: image smaller than kernel");
  int rh = kh / 2, rw = kw / 2;
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return i;
  };
  Tensor<T> out({H, W, C});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < C; ++c) {
        double acc = 0;
        for (int a = 0; a < kh; ++a)
          for (int b = 0; b < kw; ++b)
            acc += static_cast<double>(kernel.data[static_cast<size_t>(a * kw + b)]) *
                   static_cast<double>(img.at(reflect(i + a - rh, H), reflect(j + b - rw, W), c));
        out.at(i, j, c) = static_cast<T>(acc);
      }
  return out;
}

template <typename T>
Tensor<T> luminance(const Tensor<T>& img) {
  int c = img.channels();
  Tensor<T> out({img.height(), img.width(), 1});
  for (int64_t p = 0; p < out.numel(); ++p) {
    double acc = 0;
    for (int k = 0; k < c; ++k) acc += static_cast<double>(img[p * c + k]);
    out[p] = static_cast<T>(acc / c);
  }
  return out;
}

}  // namespace detail

template <typename T>
double mae(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>* mask = nullptr) {
  check(a.same_shape(b), "mae: shape mismatch");
  double sum = 0;
  int64_t count = 0;
  int c = a.channels();
  int64_t pixels = a.numel() / c;
  for (int64_t p = 0; p < pixels; ++p) {
    if (mask && (*mask)[p] <= T(0)) continue;
    for (int k = 0; k < c; ++k) {
      sum += std::abs(static_cast<double>(a[p * c + k]) - static_cast<double>(b[p * c + k]));
      ++count;
    }
  }
  check(count > 0, "mae: no valid pixels");
  return sum / static_cast<double>(count);
}

template <typename T>
double rmse(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>* mask = nullptr) {
  return std::sqrt(detail::masked_mse(a, b, mask));
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>* mask = nullptr) {
  double mse = detail::masked_mse(a, b, mask);
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// PSNR after low-pass Gaussian filtering both images; sensitive to smooth,
// low-frequency differences that plain PSNR dilutes.
template <typename T>
double psnr_lf(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>* mask = nullptr,
               int kernel_size = 21, double sigma = 3.5) {
  Tensor<T> k = gaussian_kernel<T>(kernel_size, sigma);
  Tensor<T> fa = detail::convolve_reflect(a, k);
  Tensor<T> fb = detail::convolve_reflect(b, k);
  return psnr(fa, fb, mask);
}

// Mean local SSIM, luminance-only, 11x11 Gaussian window (sigma 1.5),
// C1 = 0.01^2, C2 = 0.03^2 on the [0,1] range.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>* mask = nullptr) {
  check(a.same_shape(b), "ssim: shape mismatch");
  Tensor<T> x = detail::luminance(a);
  Tensor<T> y = detail::luminance(b);
  Tensor<T> win = gaussian_kernel<T>(11, 1.5);
  Tensor<T> mx = detail::convolve_reflect(x, win);
  Tensor<T> my = detail::convolve_reflect(y, win);
  Tensor<T> xx = x, yy = y, xy = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  Tensor<T> sxx = detail::convolve_reflect(xx, win);
  Tensor<T> syy = detail::convolve_reflect(yy, win);
  Tensor<T> sxy = detail::convolve_reflect(xy, win);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double sum = 0;
  int64_t count = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (mask && (*mask)[i] <= T(0)) continue;
    double mxi = mx[i], myi = my[i];
    double vx = static_cast<double>(sxx[i]) - mxi * mxi;
    double vy = static_cast<double>(syy[i]) - myi * myi;
    double cxy = static_cast<double>(sxy[i]) - mxi * myi;
    double num = (2 * mxi * myi + c1) * (2 * cxy + c2);
    double den = (mxi * mxi + myi * myi + c1) * (vx + vy + c2);
    sum += num / den;
    ++count;
  }
  check(count > 0, "ssim: no valid pixels");
  return sum / static_cast<double>(count);
}

// Convenience: full report for images in the library's native [-0.5,0.5]
// range, rescaled to [0,1] before measuring.
template <typename T>
MetricReport evaluate_images(const Tensor<T>& a_raw, const Tensor<T>& b_raw,
                             const Tensor<T>* mask = nullptr) {
  Tensor<T> a = a_raw, b = b_raw;
  for (auto& v : a.data) v += T(0.5);
  for (auto& v : b.data) v += T(0.5);
  MetricReport r;
  r.mae = mae(a, b, mask);
  r.rmse = rmse(a, b, mask);
  r.psnr = psnr(a, b, mask);
  r.psnr_lf = psnr_lf(a, b, mask);
  r.ssim = ssim(a, b, mask);
  if (mask) {
    double valid = 0;
    for (const T& v : mask->data) valid += v > T(0) ? 1.0 : 0.0;
    r.valid_fraction = valid / static_cast<double>(mask->numel());
  }
  return r;
}

}  // namespace nvde
