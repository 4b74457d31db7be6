#include <catch2/catch_amalgamated.hpp>

#include "nvde/metrics.hpp"
#include "nvde/rng.hpp"

using namespace nvde;
using Catch::Approx;

TEST_CASE("psnr examples") {
  Rng rng(1);
  Tensor<double> a = rng.uniform_tensor<double>({24, 24, 3}, 0.0, 1.0);
  CHECK(psnr(a, a) == 99.0);

  Tensor<double> b = a;
  for (auto& v : b.data) v += 0.1;  // uniform MSE 0.01
  CHECK(psnr(a, b) == Approx(20.0).margin(1e-9));

  Tensor<double> c = a;
  for (auto& v : c.data) v += 1.0;  // MSE 1
  CHECK(psnr(a, c) == Approx(0.0).margin(1e-9));
}

TEST_CASE("mae and rmse") {
  Rng rng(2);
  Tensor<double> a = rng.uniform_tensor<double>({10, 10, 1}, 0.0, 1.0);
  CHECK(mae(a, a) == 0.0);
  CHECK(rmse(a, a) == 0.0);

  Tensor<double> b = a;
  for (auto& v : b.data) v += 0.1;
  CHECK(mae(a, b) == Approx(0.1).margin(1e-12));
  CHECK(rmse(a, b) == Approx(0.1).margin(1e-12));

  Tensor<double> c = a;
  c[0] += 0.5;  // single-pixel error e on n pixels
  int64_t n = a.numel();
  CHECK(mae(a, c) == Approx(0.5 / n).margin(1e-12));
  CHECK(rmse(a, c) == Approx(0.5 / std::sqrt(static_cast<double>(n))).margin(1e-12));

  CHECK_THROWS(mae(a, Tensor<double>::zeros({9, 10, 1})));
}

TEST_CASE("psnr_lf behavior") {
  Rng rng(3);
  Tensor<double> a({32, 32, 1});
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j)
      a.at(i, j, 0) = 0.5 + 0.3 * std::sin(0.3 * i) * std::cos(0.25 * j);

  SECTION("identical images hit the cap") { CHECK(psnr_lf(a, a) == 99.0); }

  SECTION("high-frequency noise is filtered away") {
    Tensor<double> noisy = a;
    for (auto& v : noisy.data) v += rng.uniform(-0.1, 0.1);
    CHECK(psnr_lf(a, noisy) >= psnr(a, noisy));
  }

  SECTION("a constant offset passes the unit-sum filter unchanged") {
    Tensor<double> shifted = a;
    for (auto& v : shifted.data) v += 0.07;
    CHECK(psnr_lf(a, shifted) == Approx(psnr(a, shifted)).margin(1e-9));
  }

  SECTION("filtering then psnr equals psnr of the filtered images") {
    Tensor<double> noisy = a;
    for (auto& v : noisy.data) v += rng.uniform(-0.05, 0.05);
    auto k = gaussian_kernel<double>(21, 3.5);
    auto fa = detail::convolve_reflect(a, k);
    auto fn = detail::convolve_reflect(noisy, k);
    CHECK(psnr_lf(a, noisy) == Approx(psnr(fa, fn)).margin(1e-12));
  }

  SECTION("images smaller than the kernel are rejected") {
    Tensor<double> tiny = Tensor<double>::zeros({16, 16, 1});
    CHECK_THROWS(psnr_lf(tiny, tiny));
  }
}

TEST_CASE("ssim behavior") {
  Rng rng(4);
  Tensor<double> a({32, 32, 3});
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j)
      for (int c = 0; c < 3; ++c)
        a.at(i, j, c) = 0.5 + 0.35 * std::sin(0.4 * i + c) * std::cos(0.3 * j);

  CHECK(ssim(a, a) == Approx(1.0).margin(1e-12));

  SECTION("inversion destroys structure") {
    Tensor<double> inv = a;
    for (auto& v : inv.data) v = 1.0 - v;
    CHECK(ssim(a, inv) < 0.5);
  }
  SECTION("continuity for small perturbations") {
    Tensor<double> b = a;
    for (auto& v : b.data) v += 1e-5;
    CHECK(ssim(a, b) == Approx(1.0).margin(1e-4));
  }
  SECTION("symmetry") {
    Tensor<double> b = a;
    for (auto& v : b.data) v += rng.uniform(-0.1, 0.1);
    CHECK(ssim(a, b) == Approx(ssim(b, a)).margin(1e-12));
  }
}

TEST_CASE("metric report on shifted ranges") {
  Rng rng(5);
  Tensor<double> a = rng.uniform_tensor<double>({32, 32, 3}, -0.45, 0.45);
  MetricReport r = evaluate_images(a, a);
  CHECK(r.mae == 0.0);
  CHECK(r.psnr == 99.0);
  CHECK(r.psnr_lf == 99.0);
  CHECK(r.ssim == Approx(1.0).margin(1e-12));
  CHECK(r.valid_fraction == 1.0);
}
