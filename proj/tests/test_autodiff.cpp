#include <catch2/catch_amalgamated.hpp>

#include "nvde/autodiff.hpp"

using namespace nvde;
using Catch::Approx;

namespace {

// Gradient of a scalar function of one leaf against central differences.
template <typename BuildFn>
double grad_check(BuildFn build, Tensor<double> x, double eps = 1e-5) {
  auto eval = [&]() {
    Graph<double> g;
    auto id = g.leaf(x);
    auto loss = build(g, id);
    return g.value(loss)[0];
  };
  Graph<double> g;
  auto id = g.leaf(x);
  auto loss = build(g, id);
  g.backward(loss);
  Tensor<double> analytic = g.grad(id);
  return finite_diff_check<double>(eval, {&x}, {analytic}, eps);
}

}  // namespace

TEST_CASE("elementwise examples") {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>::from({2}, {1, 2}));
  auto b = g.leaf(Tensor<double>::from({2}, {3, 4}));
  auto sum = g.add(a, b);
  CHECK(g.value(sum)[0] == 4.0);
  CHECK(g.value(sum)[1] == 6.0);

  auto e0 = g.elu(g.constant(Tensor<double>::scalar(0)));
  CHECK(g.value(e0)[0] == 0.0);
  auto elarge = g.elu(g.constant(Tensor<double>::scalar(-40)));
  CHECK(g.value(elarge)[0] == Approx(-1.0).margin(1e-12));

  auto s = g.sigmoid(g.constant(Tensor<double>::scalar(0)));
  CHECK(g.value(s)[0] == 0.5);
}

TEST_CASE("division by zero is a hard error") {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>::from({2}, {1, 2}));
  auto b = g.leaf(Tensor<double>::from({2}, {1, 0}));
  CHECK_THROWS(g.div(a, b));
  CHECK_THROWS(g.rcp(b));
}

TEST_CASE("shape mismatch is rejected") {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>::zeros({2, 2, 1}));
  auto b = g.leaf(Tensor<double>::zeros({2, 2, 2}));
  CHECK_THROWS(g.add(a, b));
}

TEST_CASE("linear identity and arithmetic") {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>::from({1, 2}, {1, 0}));
  auto w = g.leaf(Tensor<double>::from({2, 2}, {1, 0, 0, 1}));
  auto b = g.leaf(Tensor<double>::zeros({2}));
  auto y = g.linear(x, w, b);
  CHECK(g.value(y)[0] == 1.0);
  CHECK(g.value(y)[1] == 0.0);

  auto x2 = g.leaf(Tensor<double>::from({1, 2}, {1, 1}));
  auto w2 = g.leaf(Tensor<double>::from({2, 1}, {1, 1}));
  auto b2 = g.leaf(Tensor<double>::from({1}, {-2}));
  auto y2 = g.linear(x2, w2, b2);
  CHECK(g.value(y2)[0] == 0.0);

  // gradient of sum(linear) wrt bias is the row count
  auto x3 = g.leaf(Tensor<double>::from({3, 2}, {1, 2, 3, 4, 5, 6}));
  auto y3 = g.sum_all(g.linear(x3, w, b));
  g.backward(y3);
  for (int i = 0; i < 2; ++i) CHECK(g.grad(b)[i] == 3.0);
}

TEST_CASE("softmax examples and invariants") {
  Graph<double> g;
  auto u = g.softmax_channels(g.leaf(Tensor<double>::from({1, 1, 2}, {0, 0})));
  CHECK(g.value(u)[0] == Approx(0.5));
  CHECK(g.value(u)[1] == Approx(0.5));

  auto big = g.softmax_channels(g.leaf(Tensor<double>::from({1, 1, 2}, {20, 0})));
  CHECK(g.value(big)[0] == Approx(1.0).epsilon(1e-8));
  CHECK(g.value(big)[1] == Approx(std::exp(-20.0) / (1 + std::exp(-20.0))).epsilon(1e-9));
  CHECK(g.value(big)[1] == Approx(2.0611536e-9).epsilon(1e-4));

  Rng rng(7);
  auto x = rng.uniform_tensor<double>({3, 2, 5}, -4, 4);
  Graph<double> g2;
  auto sm = g2.softmax_channels(g2.leaf(x));
  Tensor<double> shifted = x;
  for (int64_t r = 0; r < x.numel() / 5; ++r)
    for (int i = 0; i < 5; ++i) shifted[r * 5 + i] += 3.25;
  auto sm2 = g2.softmax_channels(g2.leaf(shifted));
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(g2.value(sm)[i] == Approx(g2.value(sm2)[i]).margin(1e-12));
  for (int64_t r = 0; r < x.numel() / 5; ++r) {
    double s = 0;
    for (int i = 0; i < 5; ++i) s += g2.value(sm)[r * 5 + i];
    CHECK(s == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("bilinear sampling semantics") {
  Graph<double> g;
  Tensor<double> src({2, 2, 1});
  src.at(0, 0, 0) = 0;
  src.at(0, 1, 0) = 1;
  src.at(1, 0, 0) = 2;
  src.at(1, 1, 0) = 3;
  auto id = g.leaf(src);

  SECTION("integer coordinates hit pixels exactly") {
    Tensor<double> coords({1, 1, 2});
    coords[0] = 1;
    coords[1] = 0;
    auto s = g.bilinear_sample(id, coords);
    CHECK(g.value(s.value)[0] == 1.0);
    CHECK(s.validity[0] == 1.0);
  }
  SECTION("center of a 2x2 block averages it") {
    Tensor<double> coords({1, 1, 2});
    coords[0] = 0.5;
    coords[1] = 0.5;
    auto s = g.bilinear_sample(id, coords);
    CHECK(g.value(s.value)[0] == Approx(1.5));
  }
  SECTION("far out of bounds is zero with zero validity") {
    Tensor<double> coords({1, 1, 2});
    coords[0] = -10;
    coords[1] = -10;
    auto s = g.bilinear_sample(id, coords);
    CHECK(g.value(s.value)[0] == 0.0);
    CHECK(s.validity[0] == 0.0);
  }
  SECTION("linear along each axis between nodes") {
    for (double t : {0.1, 0.35, 0.8}) {
      Tensor<double> coords({1, 1, 2});
      coords[0] = t;
      coords[1] = 0.0;
      auto s = g.bilinear_sample(id, coords);
      CHECK(g.value(s.value)[0] == Approx(t));  // row 0 is [0, 1]
    }
  }
}

TEST_CASE("fixed convolution") {
  Tensor<double> box({5, 5});
  for (auto& v : box.data) v = 1.0 / 25.0;

  Graph<double> g;
  auto c = g.conv2d_fixed(g.leaf(Tensor<double>::full({7, 7, 2}, 0.3)), box);
  for (int64_t i = 0; i < g.value(c).numel(); ++i)
    CHECK(g.value(c)[i] == Approx(0.3).margin(1e-12));

  Tensor<double> impulse = Tensor<double>::zeros({9, 9, 1});
  impulse.at(4, 4, 0) = 1;
  auto r = g.conv2d_fixed(g.leaf(impulse), box);
  for (int i = 2; i <= 6; ++i)
    for (int j = 2; j <= 6; ++j) CHECK(g.value(r).at(i, j, 0) == Approx(1.0 / 25.0));
  CHECK(g.value(r).at(0, 0, 0) == 0.0);

  CHECK_THROWS(g.conv2d_fixed(g.leaf(Tensor<double>::zeros({3, 3, 1})), box));
}

TEST_CASE("backward basics") {
  Graph<double> g;
  Rng rng(3);
  auto xt = rng.uniform_tensor<double>({4, 3}, -1, 1);
  auto x = g.leaf(xt);
  auto loss = g.sum_all(x);
  g.backward(loss);
  for (int64_t i = 0; i < xt.numel(); ++i) CHECK(g.grad(x)[i] == 1.0);

  Graph<double> g2;
  auto x2 = g2.leaf(xt);
  auto loss2 = g2.sum_all(g2.mul(x2, x2));
  g2.backward(loss2);
  for (int64_t i = 0; i < xt.numel(); ++i) CHECK(g2.grad(x2)[i] == Approx(2 * xt[i]));
}

TEST_CASE("non-participating leaves get exactly zero gradients") {
  Graph<double> g;
  auto used = g.leaf(Tensor<double>::from({2}, {1, 2}));
  auto unused = g.leaf(Tensor<double>::from({3}, {5, 6, 7}));
  auto loss = g.sum_all(used);
  g.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(g.grad(unused)[i] == 0.0);
}

TEST_CASE("backward requires a scalar loss inside the graph") {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>::from({2}, {1, 2}));
  CHECK_THROWS(g.backward(x));
  CHECK_THROWS(g.backward(999));
}

TEST_CASE("softmax-weighted sum gradient matches finite differences") {
  Rng rng(11);
  Tensor<double> x = rng.uniform_tensor<double>({2, 2, 4}, -2, 2);
  double err = grad_check(
      [&](Graph<double>& g, int id) {
        auto sm = g.softmax_channels(id);
        std::vector<double> w{0.3, -1.2, 2.0, 0.7};
        return g.sum_all(g.scale_channels(sm, w));
      },
      x);
  CHECK(err < 1e-6);
}

TEST_CASE("every primitive gradient matches central differences") {
  Rng rng(17);
  auto small = [&](double lo, double hi) { return rng.uniform_tensor<double>({2, 3, 4}, lo, hi); };

  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.abs(id)); },
                   small(0.2, 2.0)) < 1e-5);
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.elu(id)); },
                   small(-2.5, 2.5)) < 1e-5);
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.sigmoid(id)); },
                   small(-3, 3)) < 1e-5);
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.exp(id)); },
                   small(-1, 1)) < 1e-5);
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.sin(id)); },
                   small(-3, 3)) < 1e-5);
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.cos(id)); },
                   small(-3, 3)) < 1e-5);
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.rcp(id)); },
                   small(0.5, 2.0)) < 1e-5);
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.affine(id, -1.7, 0.4)); },
                   small(-1, 1)) < 1e-5);
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.clamp(id, -0.5, 0.5)); },
                   small(0.6, 2.0)) < 1e-5);

  // binary ops against a constant second operand
  Tensor<double> other = rng.uniform_tensor<double>({2, 3, 4}, 0.5, 1.5);
  CHECK(grad_check([&](auto& g, int id) { return g.sum_all(g.mul(id, g.constant(other))); },
                   small(-1, 1)) < 1e-5);
  CHECK(grad_check([&](auto& g, int id) { return g.sum_all(g.div(id, g.constant(other))); },
                   small(-1, 1)) < 1e-5);
  CHECK(grad_check([&](auto& g, int id) { return g.sum_all(g.div(g.constant(other), id)); },
                   small(0.5, 1.5)) < 1e-5);
  CHECK(grad_check([&](auto& g, int id) { return g.sum_all(g.sub(g.constant(other), id)); },
                   small(-1, 1)) < 1e-5);

  // rotation coefficients, including near zero
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.rot_coef_a(id)); },
                   rng.uniform_tensor<double>({8}, 1e-9, 2.0)) < 1e-5);
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.rot_coef_b(id)); },
                   rng.uniform_tensor<double>({8}, 1e-9, 2.0)) < 1e-5);

  // shape plumbing
  CHECK(grad_check(
            [](auto& g, int id) {
              auto a = g.slice_channels(id, 1, 2);
              auto b = g.concat_channels({a, id});
              return g.sum_all(g.mul(b, b));
            },
            small(-1, 1)) < 1e-5);
  CHECK(grad_check(
            [](auto& g, int id) {
              std::vector<double> w{1.5, -0.5, 2.0};
              return g.sum_all(g.broadcast_channels(g.sum_channels(id), w));
            },
            small(-1, 1)) < 1e-5);
  CHECK(grad_check([](auto& g, int id) { return g.sum_all(g.diff_x(id)); },
                   small(-1, 1)) < 1e-5);
  CHECK(grad_check(
            [](auto& g, int id) {
              auto m = g.diff_y(id);
              return g.sum_all(g.mul(m, m));
            },
            small(-1, 1)) < 1e-5);
  CHECK(grad_check(
            [](auto& g, int id) {
              auto b = g.broadcast_to_pixels(id, 3, 5);
              return g.sum_all(g.mul(b, b));
            },
            rng.uniform_tensor<double>({4}, -1, 1)) < 1e-5);

  // linear wrt every operand
  {
    Tensor<double> x = rng.uniform_tensor<double>({5, 3}, -1, 1);
    Tensor<double> w = rng.uniform_tensor<double>({3, 2}, -1, 1);
    Tensor<double> b = rng.uniform_tensor<double>({2}, -1, 1);
    auto eval = [&]() {
      Graph<double> g;
      auto y = g.linear(g.leaf(x), g.leaf(w), g.leaf(b));
      return g.value(g.sum_all(g.mul(y, y)))[0];
    };
    Graph<double> g;
    auto xi = g.leaf(x), wi = g.leaf(w), bi = g.leaf(b);
    auto y = g.linear(xi, wi, bi);
    g.backward(g.sum_all(g.mul(y, y)));
    double err = finite_diff_check<double>(eval, {&x, &w, &b},
                                           {g.grad(xi), g.grad(wi), g.grad(bi)}, 1e-5);
    CHECK(err < 1e-5);
  }

  // bilinear sample wrt source and coords (coords away from the integer kinks)
  {
    Tensor<double> src = rng.uniform_tensor<double>({5, 5, 2}, -1, 1);
    Tensor<double> coords({3, 3, 2});
    for (int64_t p = 0; p < 9; ++p) {
      coords[2 * p] = rng.uniform(0.2, 3.8) + 0.01;
      coords[2 * p + 1] = rng.uniform(0.2, 3.8) + 0.01;
    }
    auto eval = [&]() {
      Graph<double> g;
      auto s = g.bilinear_sample(g.leaf(src), g.leaf(coords));
      return g.value(g.sum_all(g.mul(s.value, s.value)))[0];
    };
    Graph<double> g;
    auto si = g.leaf(src), ci = g.leaf(coords);
    auto s = g.bilinear_sample(si, ci);
    g.backward(g.sum_all(g.mul(s.value, s.value)));
    double err =
        finite_diff_check<double>(eval, {&src, &coords}, {g.grad(si), g.grad(ci)}, 1e-5);
    CHECK(err < 1e-5);
  }

  // fixed convolution adjoint including the border reflection
  {
    Tensor<double> x = rng.uniform_tensor<double>({6, 6, 1}, -1, 1);
    Tensor<double> k({3, 3});
    for (auto& v : k.data) v = rng.uniform(-0.3, 0.3);
    auto eval = [&]() {
      Graph<double> g;
      auto y = g.conv2d_fixed(g.leaf(x), k);
      return g.value(g.sum_all(g.mul(y, y)))[0];
    };
    Graph<double> g;
    auto xi = g.leaf(x);
    auto y = g.conv2d_fixed(xi, k);
    g.backward(g.sum_all(g.mul(y, y)));
    CHECK(finite_diff_check<double>(eval, {&x}, {g.grad(xi)}, 1e-5) < 1e-5);
  }

  // softmax
  CHECK(grad_check(
            [](auto& g, int id) {
              auto sm = g.softmax_channels(id);
              return g.sum_all(g.mul(sm, sm));
            },
            small(-2, 2)) < 1e-5);
}

TEST_CASE("finite_diff_check on a quadratic is exact to roundoff") {
  Rng rng(5);
  Tensor<double> x = rng.uniform_tensor<double>({6}, -1, 1);
  auto eval = [&]() {
    double s = 0;
    for (int i = 0; i < 6; ++i) s += (i + 1) * x[i] * x[i];
    return s;
  };
  Tensor<double> analytic({6});
  for (int i = 0; i < 6; ++i) analytic[i] = 2.0 * (i + 1) * x[i];
  CHECK(finite_diff_check<double>(eval, {&x}, {analytic}, 1e-5) < 1e-9);
}

TEST_CASE("finite_diff_check handles constant functions") {
  Tensor<double> x = Tensor<double>::from({3}, {1, 2, 3});
  auto eval = [&]() { return 42.0; };
  CHECK(finite_diff_check<double>(eval, {&x}, {Tensor<double>::zeros({3})}, 1e-5) == 0.0);
}

TEST_CASE("deterministic sum is invariant to content layout") {
  Rng rng(23);
  std::vector<double> v(200000);
  for (auto& x : v) x = rng.uniform(-1, 1);
  double s1 = deterministic_sum(v.data(), static_cast<int64_t>(v.size()));
  double s2 = deterministic_sum(v.data(), static_cast<int64_t>(v.size()));
  CHECK(s1 == s2);
}
