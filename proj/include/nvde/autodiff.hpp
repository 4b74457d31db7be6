#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <deque>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nvde/parallel.hpp"
#include "nvde/rng.hpp"
#include "nvde/tensor.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace nvde {

namespace detail {
// Per-iteration graphs churn tens of megabytes; keep freed arena pages
// resident so rebuilt graphs do not re-fault them in.
inline void keep_allocator_warm() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_MMAP_THRESHOLD, 64 * 1024 * 1024);
    return true;
  }();
  (void)done;
#endif
}
}  // namespace detail

// Reverse-mode tape over whole-tensor primitives. Nodes are appended in
// evaluation order; backward walks them once in reverse. Forward primitives
// are pure; a Graph itself is single-owner (no concurrent mutation).
//
// Reductions use the deterministic pairwise scheme from parallel.hpp and all
// parallel loops assign each output element to exactly one worker, so both
// passes are bit-reproducible regardless of NVDE_THREADS.
template <typename T>
class Graph {
 public:
  using Id = int;

  struct SampleResult {
    Id value;
    Tensor<T> validity;  // in-bounds bilinear weight per pixel, not differentiated
  };

  Graph() { detail::keep_allocator_warm(); }

  Id leaf(Tensor<T> v) { return push(std::move(v), {}, nullptr, "leaf", true); }

  // A constant participates in forward math but never receives gradients.
  Id constant(Tensor<T> v) { return push(std::move(v), {}, nullptr, "constant", false); }

  const Tensor<T>& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
  size_t size() const { return nodes_.size(); }
  void set_finite_checks(bool on) { check_finite_ = on; }

  // ---------------------------------------------------------------- unary

  Id neg(Id a) {
    return unary(a, "neg", [](T x) { return -x; }, [](T, T) { return T(-1); });
  }
  Id abs(Id a) {
    return unary(a, "abs", [](T x) { return std::abs(x); },
                 [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
  }
  Id exp(Id a) {
    return unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
  }
  Id sin(Id a) {
    return unary(a, "sin", [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
  }
  Id cos(Id a) {
    return unary(a, "cos", [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
  }
  // ELU with alpha = 1
  Id elu(Id a) {
    return unary(a, "elu", [](T x) { return x > T(0) ? x : std::expm1(x); },
                 [](T x, T y) { return x > T(0) ? T(1) : y + T(1); });
  }
  Id sigmoid(Id a) {
    return unary(a, "sigmoid",
                 [](T x) {
                   if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
                   T e = std::exp(x);
                   return e / (T(1) + e);
                 },
                 [](T, T y) { return y * (T(1) - y); });
  }
  Id rcp(Id a) {
    require_nonzero(a, "rcp");
    return unary(a, "rcp", [](T x) { return T(1) / x; }, [](T, T y) { return -y * y; });
  }
  // y = scale*x + shift
  Id affine(Id a, T scale, T shift) {
    return unary(a, "affine", [=](T x) { return scale * x + shift; },
                 [=](T, T) { return scale; });
  }
  Id clamp(Id a, T lo, T hi) {
    return unary(a, "clamp", [=](T x) { return std::min(hi, std::max(lo, x)); },
                 [=](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
  }
  // Pushes values away from zero so a following division is safe. Gradient
  // is passed through only where the input was untouched.
  Id stabilize_nonzero(Id a, T eps) {
    return unary(a, "stabilize_nonzero",
                 [=](T x) { return std::abs(x) >= eps ? x : (x >= T(0) ? eps : -eps); },
                 [=](T x, T) { return std::abs(x) >= eps ? T(1) : T(0); });
  }

  // Rotation coefficients as analytic functions of s = theta^2:
  //   rot_coef_a(s) = sin(sqrt(s))/sqrt(s),  rot_coef_b(s) = (1-cos(sqrt(s)))/s.
  // Series fallbacks keep values and derivatives finite at s = 0, which lets
  // axis-angle parameters be optimized through the exact-zero rotation.
  Id rot_coef_a(Id s) {
    return unary(s, "rot_coef_a",
                 [](T x) {
                   if (x < T(1e-4))
                     return T(1) - x / T(6) + x * x / T(120) - x * x * x / T(5040);
                   T th = std::sqrt(x);
                   return std::sin(th) / th;
                 },
                 [](T x, T y) {
                   if (x < T(1e-4))
                     return T(-1) / T(6) + x / T(60) - x * x / T(1680);
                   return (std::cos(std::sqrt(x)) - y) / (T(2) * x);
                 });
  }
  Id rot_coef_b(Id s) {
    return unary(s, "rot_coef_b",
                 [](T x) {
                   if (x < T(1e-4))
                     return T(0.5) - x / T(24) + x * x / T(720) - x * x * x / T(40320);
                   return (T(1) - std::cos(std::sqrt(x))) / x;
                 },
                 [](T x, T y) {
                   if (x < T(1e-4))
                     return T(-1) / T(24) + x / T(360) - x * x / T(13440);
                   T th = std::sqrt(x);
                   T a = std::sin(th) / th;
                   return (a - T(2) * y) / (T(2) * x);
                 });
  }

  // --------------------------------------------------------------- binary

  Id add(Id a, Id b) {
    return binary(a, b, "add", [](T x, T y) { return x + y; },
                  [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
  }
  Id sub(Id a, Id b) {
    return binary(a, b, "sub", [](T x, T y) { return x - y; },
                  [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
  }
  Id mul(Id a, Id b) {
    return binary(a, b, "mul", [](T x, T y) { return x * y; },
                  [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
  }
  Id div(Id a, Id b) {
    require_nonzero(b, "div");
    return binary(a, b, "div", [](T x, T y) { return x / y; },
                  [](T, T y, T) { return T(1) / y; },
                  [](T, T y, T z) { return -z / y; });
  }

  // y = a .* m + b with constant tensors, fused
  Id fma_const(Id a, const Tensor<T>& m, const Tensor<T>& b) {
    auto mp = std::make_shared<Tensor<T>>(m);
    auto bp = std::make_shared<Tensor<T>>(b);
    shape_check(value(a).same_shape(*mp) && value(a).same_shape(*bp), "fma_const", a);
    const Tensor<T>& av = value(a);
    Tensor<T> out = Tensor<T>::uninit(av.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * (*mp)[i] + (*bp)[i];
    return push(std::move(out), {a}, [a, mp](Graph& g, Id self) {
      if (Tensor<T>* ga = g.grad_ptr(a)) {
        const Tensor<T>& gy = g.grad_of(self);
        for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * (*mp)[i];
      }
    }, "fma_const");
  }

  Id add_const(Id a, const Tensor<T>& c) {
    auto cp = std::make_shared<Tensor<T>>(c);
    shape_check(value(a).same_shape(*cp), "add_const", a);
    Tensor<T> out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += (*cp)[i];
    return push(std::move(out), {a}, [a](Graph& g, Id self) {
      g.accumulate_identity(a, self);
    }, "add_const");
  }
  Id mul_const(Id a, const Tensor<T>& c) {
    auto cp = std::make_shared<Tensor<T>>(c);
    shape_check(value(a).same_shape(*cp), "mul_const", a);
    Tensor<T> out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= (*cp)[i];
    return push(std::move(out), {a}, [a, cp](Graph& g, Id self) {
      if (Tensor<T>* ga = g.grad_ptr(a)) {
        const Tensor<T>& gy = g.grad_of(self);
        for (int64_t i = 0; i < gy.numel(); ++i) (*ga)[i] += gy[i] * (*cp)[i];
      }
    }, "mul_const");
  }

  // ------------------------------------------------------ linear algebra

  // y[r,:] = x[r,:] W + b over rows of the flattened leading dims.
  Id linear(Id x, Id W, Id b) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& wv = value(W);
    const Tensor<T>& bv = value(b);
    shape_check(xv.rank() >= 1 && wv.rank() == 2, "linear", x);
    int din = xv.shape.back();
    shape_check(wv.dim(0) == din, "linear", x);
    int dout = wv.dim(1);
    shape_check(bv.rank() == 1 && bv.dim(0) == dout, "linear", b);
    int64_t rows = xv.numel() / din;

    Shape out_shape = xv.shape;
    out_shape.back() = dout;
    Tensor<T> out = Tensor<T>::uninit(out_shape);
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const T* xr = xv.data.data() + r * din;
        T* yr = out.data.data() + r * dout;
        for (int j = 0; j < dout; ++j) yr[j] = bv[j];
        for (int k = 0; k < din; ++k) {
          T xk = xr[k];
          const T* wk = wv.data.data() + static_cast<int64_t>(k) * dout;
          for (int j = 0; j < dout; ++j) yr[j] += xk * wk[j];
        }
      }
    }, 256);

    return push(std::move(out), {x, W, b}, [x, W, b, din, dout, rows](Graph& g, Id self) {
      const Tensor<T>& gy = g.grad_of(self);
      const Tensor<T>& xv = g.value(x);
      const Tensor<T>& wv = g.value(W);
      if (Tensor<T>* gx = g.grad_ptr(x)) {
        Tensor<T> wt = Tensor<T>::uninit({dout, din});
        for (int k = 0; k < din; ++k)
          for (int j = 0; j < dout; ++j)
            wt.data[static_cast<int64_t>(j) * din + k] =
                wv.data[static_cast<int64_t>(k) * dout + j];
        parallel_for(rows, [&](int64_t r0, int64_t r1) {
          for (int64_t r = r0; r < r1; ++r) {
            const T* gyr = gy.data.data() + r * dout;
            T* gxr = gx->data.data() + r * din;
            for (int j = 0; j < dout; ++j) {
              T gj = gyr[j];
              const T* wtr = wt.data.data() + static_cast<int64_t>(j) * din;
              for (int k = 0; k < din; ++k) gxr[k] += gj * wtr[k];
            }
          }
        }, 256);
      }
      if (Tensor<T>* gw = g.grad_ptr(W)) {
        parallel_for(din, [&](int64_t k0, int64_t k1) {
          for (int64_t k = k0; k < k1; ++k) {
            T* gwk = gw->data.data() + k * dout;
            for (int64_t r = 0; r < rows; ++r) {
              T xk = xv.data[r * din + k];
              const T* gyr = gy.data.data() + r * dout;
              for (int j = 0; j < dout; ++j) gwk[j] += xk * gyr[j];
            }
          }
        }, 4);
      }
      if (Tensor<T>* gb = g.grad_ptr(b)) {
        for (int64_t r = 0; r < rows; ++r) {
          const T* gyr = gy.data.data() + r * dout;
          for (int j = 0; j < dout; ++j) (*gb)[j] += gyr[j];
        }
      }
    }, "linear");
  }

  // ------------------------------------------------------------- softmax

  // Channel-wise softmax over the last dimension, max-subtracted.
  Id softmax_channels(Id x) {
    const Tensor<T>& xv = value(x);
    int n = xv.shape.back();
    int64_t rows = xv.numel() / n;
    Tensor<T> out = Tensor<T>::uninit(xv.shape);
    parallel_for(rows, [&](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r) {
        const T* xr = xv.data.data() + r * n;
        T* yr = out.data.data() + r * n;
        T m = xr[0];
        for (int i = 1; i < n; ++i) m = std::max(m, xr[i]);
        T sum = T(0);
        for (int i = 0; i < n; ++i) {
          yr[i] = std::exp(xr[i] - m);
          sum += yr[i];
        }
        T inv = T(1) / sum;
        for (int i = 0; i < n; ++i) yr[i] *= inv;
      }
    }, 1024);

    return push(std::move(out), {x}, [x, n, rows](Graph& g, Id self) {
      Tensor<T>* gx = g.grad_ptr(x);
      if (!gx) return;
      const Tensor<T>& gy = g.grad_of(self);
      const Tensor<T>& y = g.value(self);
      parallel_for(rows, [&](int64_t r0, int64_t r1) {
        for (int64_t r = r0; r < r1; ++r) {
          const T* yr = y.data.data() + r * n;
          const T* gyr = gy.data.data() + r * n;
          T* gxr = gx->data.data() + r * n;
          T dot = T(0);
          for (int i = 0; i < n; ++i) dot += yr[i] * gyr[i];
          for (int i = 0; i < n; ++i) gxr[i] += yr[i] * (gyr[i] - dot);
        }
      }, 1024);
    }, "softmax_channels");
  }

  // ------------------------------------------------------------ sampling

  // Bilinear sampling of src [H,W,C] at coords [H',W',2] given in pixel
  // units, (u,v) = (column,row), origin at the center of the top-left pixel.
  // Out-of-bounds contributions are zero-padded; validity reports the
  // fraction of bilinear weight that landed inside the source.
  SampleResult bilinear_sample(Id src, Id coords) {
    return bilinear_impl(src, coords, nullptr);
  }
  SampleResult bilinear_sample(Id src, const Tensor<T>& coords) {
    return bilinear_impl(src, -1, &coords);
  }

  // ---------------------------------------------------------- fixed conv

  // Per-channel correlation with a fixed (non-trainable) odd-sized stencil,
  // symmetric reflect padding at borders. Differentiable wrt x only; the
  // backward pass is the exact adjoint including the border reflection.
  Id conv2d_fixed(Id x, const Tensor<T>& kernel) {
    const Tensor<T>& xv = value(x);
    shape_check(xv.rank() == 3, "conv2d_fixed", x);
    check(kernel.rank() == 2 && kernel.dim(0) % 2 == 1 && kernel.dim(1) % 2 == 1,
          "conv2d_fixed: kernel must be odd-sized 2-D");
    int H = xv.height(), W = xv.width(), C = xv.channels();
    int kh = kernel.dim(0), kw = kernel.dim(1);
    check(kh <= H && kw <= W, "conv2d_fixed: kernel larger than image");
    auto kp = std::make_shared<Tensor<T>>(kernel);
    int rh = kh / 2, rw = kw / 2;

    auto reflect = [](int i, int n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - i - 1;
      return i;
    };

    Tensor<T> out = Tensor<T>::uninit(xv.shape);
    parallel_for(H, [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i)
        for (int j = 0; j < W; ++j)
          for (int c = 0; c < C; ++c) {
            T acc = T(0);
            for (int a = 0; a < kh; ++a) {
              int si = reflect(static_cast<int>(i) + a - rh, H);
              for (int b = 0; b < kw; ++b) {
                int sj = reflect(j + b - rw, W);
                acc += (*kp)[static_cast<int64_t>(a) * kw + b] * xv.at(si, sj, c);
              }
            }
            out.at(static_cast<int>(i), j, c) = acc;
          }
    }, 4);

    return push(std::move(out), {x}, [x, kp, H, W, C, kh, kw, rh, rw, reflect](Graph& g, Id self) {
      Tensor<T>* gx = g.grad_ptr(x);
      if (!gx) return;
      const Tensor<T>& gy = g.grad_of(self);
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          for (int a = 0; a < kh; ++a) {
            int si = reflect(i + a - rh, H);
            for (int b = 0; b < kw; ++b) {
              int sj = reflect(j + b - rw, W);
              T k = (*kp)[static_cast<int64_t>(a) * kw + b];
              for (int c = 0; c < C; ++c) gx->at(si, sj, c) += k * gy.at(i, j, c);
            }
          }
    }, "conv2d_fixed");
  }

  // ------------------------------------------------------- shape plumbing

  Id concat_channels(std::span<const Id> parts) {
    check(!parts.empty(), "concat_channels: no inputs");
    const Tensor<T>& first = value(parts[0]);
    Shape lead(first.shape.begin(), first.shape.end() - 1);
    int total = 0;
    for (Id p : parts) {
      const Tensor<T>& v = value(p);
      Shape l(v.shape.begin(), v.shape.end() - 1);
      shape_check(l == lead, "concat_channels", p);
      total += v.shape.back();
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    int64_t rows = shape_numel(lead);
    Tensor<T> out = Tensor<T>::uninit(out_shape);
    std::vector<Id> ps(parts.begin(), parts.end());
    int64_t off = 0;
    for (Id p : ps) {
      const Tensor<T>& v = value(p);
      int c = v.shape.back();
      for (int64_t r = 0; r < rows; ++r)
        std::copy_n(v.data.data() + r * c, c, out.data.data() + r * total + off);
      off += c;
    }
    return push(std::move(out), ps, [ps, rows, total](Graph& g, Id self) {
      const Tensor<T>& gy = g.grad_of(self);
      int64_t off = 0;
      for (Id p : ps) {
        int c = g.value(p).shape.back();
        if (Tensor<T>* gp = g.grad_ptr(p)) {
          for (int64_t r = 0; r < rows; ++r) {
            const T* s = gy.data.data() + r * total + off;
            T* d = gp->data.data() + r * c;
            for (int i = 0; i < c; ++i) d[i] += s[i];
          }
        }
        off += c;
      }
    }, "concat_channels");
  }
  Id concat_channels(std::initializer_list<Id> parts) {
    return concat_channels(std::span<const Id>(parts.begin(), parts.size()));
  }

  Id slice_channels(Id x, int start, int len) {
    const Tensor<T>& xv = value(x);
    int c = xv.shape.back();
    check(start >= 0 && len >= 1 && start + len <= c, "slice_channels: range out of bounds");
    Shape out_shape = xv.shape;
    out_shape.back() = len;
    int64_t rows = xv.numel() / c;
    Tensor<T> out = Tensor<T>::uninit(out_shape);
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(xv.data.data() + r * c + start, len, out.data.data() + r * len);
    return push(std::move(out), {x}, [x, start, len, c, rows](Graph& g, Id self) {
      if (Tensor<T>* gx = g.grad_ptr(x)) {
        const Tensor<T>& gy = g.grad_of(self);
        for (int64_t r = 0; r < rows; ++r) {
          const T* s = gy.data.data() + r * len;
          T* d = gx->data.data() + r * c + start;
          for (int i = 0; i < len; ++i) d[i] += s[i];
        }
      }
    }, "slice_channels");
  }

  // y[..., j] = w[j] * x[..., 0]
  Id broadcast_channels(Id x, const std::vector<T>& weights) {
    const Tensor<T>& xv = value(x);
    check(xv.shape.back() == 1, "broadcast_channels: input must have one channel");
    int n = static_cast<int>(weights.size());
    check(n >= 1, "broadcast_channels: empty weights");
    Shape out_shape = xv.shape;
    out_shape.back() = n;
    int64_t rows = xv.numel();
    Tensor<T> out = Tensor<T>::uninit(out_shape);
    auto wp = std::make_shared<std::vector<T>>(weights);
    for (int64_t r = 0; r < rows; ++r) {
      T v = xv[r];
      T* yr = out.data.data() + r * n;
      for (int j = 0; j < n; ++j) yr[j] = (*wp)[j] * v;
    }
    return push(std::move(out), {x}, [x, wp, n, rows](Graph& g, Id self) {
      if (Tensor<T>* gx = g.grad_ptr(x)) {
        const Tensor<T>& gy = g.grad_of(self);
        for (int64_t r = 0; r < rows; ++r) {
          const T* gyr = gy.data.data() + r * n;
          T acc = T(0);
          for (int j = 0; j < n; ++j) acc += (*wp)[j] * gyr[j];
          (*gx)[r] += acc;
        }
      }
    }, "broadcast_channels");
  }

  // y[..., j] = w[j] * x[..., j]
  Id scale_channels(Id x, const std::vector<T>& weights) {
    const Tensor<T>& xv = value(x);
    int n = xv.shape.back();
    check(static_cast<int>(weights.size()) == n, "scale_channels: weight count mismatch");
    int64_t rows = xv.numel() / n;
    Tensor<T> out = Tensor<T>::uninit(xv.shape);
    auto wp = std::make_shared<std::vector<T>>(weights);
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < n; ++j) out.data[r * n + j] = (*wp)[j] * xv.data[r * n + j];
    return push(std::move(out), {x}, [x, wp, n, rows](Graph& g, Id self) {
      if (Tensor<T>* gx = g.grad_ptr(x)) {
        const Tensor<T>& gy = g.grad_of(self);
        for (int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < n; ++j) gx->data[r * n + j] += (*wp)[j] * gy.data[r * n + j];
      }
    }, "scale_channels");
  }

  // Repeats a rank-1 tensor [K] across an HxW raster -> [H,W,K].
  Id broadcast_to_pixels(Id x, int h, int w) {
    const Tensor<T>& xv = value(x);
    check(xv.rank() == 1, "broadcast_to_pixels: rank-1 input expected");
    int k = xv.dim(0);
    Tensor<T> out = Tensor<T>::uninit({h, w, k});
    int64_t pixels = static_cast<int64_t>(h) * w;
    for (int64_t p = 0; p < pixels; ++p)
      std::copy_n(xv.data.data(), k, out.data.data() + p * k);
    return push(std::move(out), {x}, [x, k, pixels](Graph& g, Id self) {
      if (Tensor<T>* gx = g.grad_ptr(x)) {
        const Tensor<T>& gy = g.grad_of(self);
        for (int64_t p = 0; p < pixels; ++p)
          for (int j = 0; j < k; ++j) (*gx)[j] += gy.data[p * k + j];
      }
    }, "broadcast_to_pixels");
  }

  // ----------------------------------------------------------- reductions

  Id sum_channels(Id x) {
    const Tensor<T>& xv = value(x);
    int n = xv.shape.back();
    int64_t rows = xv.numel() / n;
    Shape out_shape = xv.shape;
    out_shape.back() = 1;
    Tensor<T> out = Tensor<T>::uninit(out_shape);
    for (int64_t r = 0; r < rows; ++r) {
      T acc = T(0);
      const T* xr = xv.data.data() + r * n;
      for (int i = 0; i < n; ++i) acc += xr[i];
      out[r] = acc;
    }
    return push(std::move(out), {x}, [x, n, rows](Graph& g, Id self) {
      if (Tensor<T>* gx = g.grad_ptr(x)) {
        const Tensor<T>& gy = g.grad_of(self);
        for (int64_t r = 0; r < rows; ++r) {
          T gr = gy[r];
          T* d = gx->data.data() + r * n;
          for (int i = 0; i < n; ++i) d[i] += gr;
        }
      }
    }, "sum_channels");
  }

  Id sum_all(Id x) {
    const Tensor<T>& xv = value(x);
    Tensor<T> out = Tensor<T>::scalar(deterministic_sum(xv.data.data(), xv.numel()));
    return push(std::move(out), {x}, [x](Graph& g, Id self) {
      if (Tensor<T>* gx = g.grad_ptr(x)) {
        T gr = g.grad_of(self)[0];
        for (int64_t i = 0; i < gx->numel(); ++i) (*gx)[i] += gr;
      }
    }, "sum_all");
  }

  Id mean_all(Id x) {
    int64_t n = value(x).numel();
    return affine(sum_all(x), T(1) / static_cast<T>(n), T(0));
  }

  // Forward differences along width / height; output loses one column/row.
  Id diff_x(Id x) {
    const Tensor<T>& xv = value(x);
    shape_check(xv.rank() == 3 && xv.width() >= 2, "diff_x", x);
    int H = xv.height(), W = xv.width(), C = xv.channels();
    Tensor<T> out = Tensor<T>::uninit({H, W - 1, C});
    for (int i = 0; i < H; ++i)
      for (int j = 0; j + 1 < W; ++j)
        for (int c = 0; c < C; ++c) out.at(i, j, c) = xv.at(i, j + 1, c) - xv.at(i, j, c);
    return push(std::move(out), {x}, [x, H, W, C](Graph& g, Id self) {
      if (Tensor<T>* gx = g.grad_ptr(x)) {
        const Tensor<T>& gy = g.grad_of(self);
        for (int i = 0; i < H; ++i)
          for (int j = 0; j + 1 < W; ++j)
            for (int c = 0; c < C; ++c) {
              T v = gy.at(i, j, c);
              gx->at(i, j + 1, c) += v;
              gx->at(i, j, c) -= v;
            }
      }
    }, "diff_x");
  }
  Id diff_y(Id x) {
    const Tensor<T>& xv = value(x);
    shape_check(xv.rank() == 3 && xv.height() >= 2, "diff_y", x);
    int H = xv.height(), W = xv.width(), C = xv.channels();
    Tensor<T> out = Tensor<T>::uninit({H - 1, W, C});
    for (int i = 0; i + 1 < H; ++i)
      for (int j = 0; j < W; ++j)
        for (int c = 0; c < C; ++c) out.at(i, j, c) = xv.at(i + 1, j, c) - xv.at(i, j, c);
    return push(std::move(out), {x}, [x, H, W, C](Graph& g, Id self) {
      if (Tensor<T>* gx = g.grad_ptr(x)) {
        const Tensor<T>& gy = g.grad_of(self);
        for (int i = 0; i + 1 < H; ++i)
          for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c) {
              T v = gy.at(i, j, c);
              gx->at(i + 1, j, c) += v;
              gx->at(i, j, c) -= v;
            }
      }
    }, "diff_y");
  }

  // Escape hatch for fused module-level primitives: the module supplies the
  // forward value and the matching backward rule.
  Id custom(Tensor<T> out, std::vector<Id> parents, std::function<void(Graph&, Id)> bw,
            const char* name) {
    return push(std::move(out), std::move(parents), std::move(bw), name);
  }

  // ------------------------------------------------------------- backward

  void backward(Id loss) {
    check(loss >= 0 && static_cast<size_t>(loss) < nodes_.size(), "backward: node not in graph");
    check(value(loss).numel() == 1, "backward: loss must be scalar");
    Tensor<T>* gl = grad_ptr(loss);
    check(gl != nullptr, "backward: loss does not depend on any leaf");
    (*gl)[0] += T(1);
    for (Id i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  // Zero tensor if the node never participated in the loss.
  const Tensor<T>& grad(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
    return n.grad;
  }

  // Internal accessors used by backward rules.
  Tensor<T>* grad_ptr(Id id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.tracked) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape);
    return &n.grad;
  }
  const Tensor<T>& grad_of(Id id) const { return nodes_[static_cast<size_t>(id)].grad; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Graph&, Id)> backward;
    const char* op;
    bool tracked;
  };

  std::deque<Node> nodes_;  // deque: node references stay valid as the graph grows
  bool check_finite_ = true;

  void shape_check(bool ok, const char* op, Id node) const {
    if (!ok)
      throw std::runtime_error(std::string(op) + ": shape mismatch at node " +
                               std::to_string(node));
  }

  void require_nonzero(Id b, const char* op) const {
    const Tensor<T>& bv = value(b);
    for (int64_t i = 0; i < bv.numel(); ++i)
      if (bv[i] == T(0) || !std::isfinite(static_cast<double>(bv[i])))
        throw std::runtime_error(std::string(op) + ": division by zero at node " +
                                 std::to_string(b));
  }

  Id push(Tensor<T> v, std::vector<Id> parents, std::function<void(Graph&, Id)> bw,
          const char* op, bool force_tracked = false) {
    bool tracked = force_tracked;
    for (Id p : parents)
      if (nodes_[static_cast<size_t>(p)].tracked) tracked = true;
    if (check_finite_ && !v.all_finite())
      throw std::runtime_error(std::string(op) + ": non-finite value at node " +
                               std::to_string(nodes_.size()));
    nodes_.push_back(Node{std::move(v), {}, tracked ? std::move(bw) : nullptr, op, tracked});
    return static_cast<Id>(nodes_.size()) - 1;
  }

  void accumulate_identity(Id parent, Id self) {
    if (Tensor<T>* gp = grad_ptr(parent)) {
      const Tensor<T>& gy = grad_of(self);
      for (int64_t i = 0; i < gy.numel(); ++i) (*gp)[i] += gy[i];
    }
  }

  template <typename F, typename DF>
  Id unary(Id a, const char* op, F f, DF df) {
    const Tensor<T>& av = value(a);
    Tensor<T> out = Tensor<T>::uninit(av.shape);
    parallel_for(av.numel(), [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) out[i] = f(av[i]);
    });
    return push(std::move(out), {a}, [a, df](Graph& g, Id self) {
      if (Tensor<T>* ga = g.grad_ptr(a)) {
        const Tensor<T>& gy = g.grad_of(self);
        const Tensor<T>& av2 = g.value(a);
        const Tensor<T>& yv = g.value(self);
        parallel_for(gy.numel(), [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) (*ga)[i] += df(av2[i], yv[i]) * gy[i];
        });
      }
    }, op);
  }

  template <typename F, typename DA, typename DB>
  Id binary(Id a, Id b, const char* op, F f, DA da, DB db) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    shape_check(av.same_shape(bv), op, b);
    Tensor<T> out = Tensor<T>::uninit(av.shape);
    parallel_for(av.numel(), [&](int64_t i0, int64_t i1) {
      for (int64_t i = i0; i < i1; ++i) out[i] = f(av[i], bv[i]);
    });
    return push(std::move(out), {a, b}, [a, b, da, db](Graph& g, Id self) {
      const Tensor<T>& gy = g.grad_of(self);
      const Tensor<T>& av2 = g.value(a);
      const Tensor<T>& bv2 = g.value(b);
      const Tensor<T>& yv = g.value(self);
      if (Tensor<T>* ga = g.grad_ptr(a)) {
        parallel_for(gy.numel(), [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) (*ga)[i] += da(av2[i], bv2[i], yv[i]) * gy[i];
        });
      }
      if (Tensor<T>* gb = g.grad_ptr(b)) {
        parallel_for(gy.numel(), [&](int64_t i0, int64_t i1) {
          for (int64_t i = i0; i < i1; ++i) (*gb)[i] += db(av2[i], bv2[i], yv[i]) * gy[i];
        });
      }
    }, op);
  }

  SampleResult bilinear_impl(Id src, Id coords_id, const Tensor<T>* coords_const) {
    const Tensor<T>& sv = value(src);
    shape_check(sv.rank() == 3, "bilinear_sample", src);
    Id cid = coords_id;
    if (coords_const) cid = constant(*coords_const);
    const Tensor<T>& cv = value(cid);
    shape_check(cv.rank() == 3 && cv.channels() == 2, "bilinear_sample", cid);
    int H = sv.height(), W = sv.width(), C = sv.channels();
    int OH = cv.height(), OW = cv.width();
    int64_t pix = static_cast<int64_t>(OH) * OW;

    Tensor<T> out = Tensor<T>::uninit({OH, OW, C});
    Tensor<T> validity = Tensor<T>::uninit({OH, OW, 1});
    parallel_for(pix, [&](int64_t p0, int64_t p1) {
      for (int64_t p = p0; p < p1; ++p) {
        T u = cv[2 * p], v = cv[2 * p + 1];
        T fu = std::floor(u), fv = std::floor(v);
        int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
        T au = u - fu, av = v - fv;
        T w00 = (T(1) - au) * (T(1) - av), w01 = au * (T(1) - av);
        T w10 = (T(1) - au) * av, w11 = au * av;
        T* yp = out.data.data() + p * C;
        T valid = T(0);
        for (int c = 0; c < C; ++c) yp[c] = T(0);
        auto corner = [&](int vv, int uu, T w) {
          if (w == T(0)) return;
          if (uu < 0 || uu >= W || vv < 0 || vv >= H) return;
          valid += w;
          const T* s = sv.data.data() + (static_cast<int64_t>(vv) * W + uu) * C;
          for (int c = 0; c < C; ++c) yp[c] += w * s[c];
        };
        corner(v0, u0, w00);
        corner(v0, u0 + 1, w01);
        corner(v0 + 1, u0, w10);
        corner(v0 + 1, u0 + 1, w11);
        validity[p] = valid;
      }
    }, 2048);

    Id out_id = push(std::move(out), {src, cid}, [src, cid, H, W, C, pix](Graph& g, Id self) {
      const Tensor<T>& gy = g.grad_of(self);
      const Tensor<T>& sv2 = g.value(src);
      const Tensor<T>& cv2 = g.value(cid);
      Tensor<T>* gs = g.grad_ptr(src);
      Tensor<T>* gc = g.grad_ptr(cid);
      // scatter into the source stays serial so accumulation order is fixed
      for (int64_t p = 0; p < pix; ++p) {
        T u = cv2[2 * p], v = cv2[2 * p + 1];
        T fu = std::floor(u), fv = std::floor(v);
        int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
        T au = u - fu, av = v - fv;
        const T* gyp = gy.data.data() + p * C;
        auto val = [&](int vv, int uu, int c) -> T {
          if (uu < 0 || uu >= W || vv < 0 || vv >= H) return T(0);
          return sv2.data[(static_cast<int64_t>(vv) * W + uu) * C + c];
        };
        if (gs) {
          auto scatter = [&](int vv, int uu, T w) {
            if (w == T(0) || uu < 0 || uu >= W || vv < 0 || vv >= H) return;
            T* d = gs->data.data() + (static_cast<int64_t>(vv) * W + uu) * C;
            for (int c = 0; c < C; ++c) d[c] += w * gyp[c];
          };
          scatter(v0, u0, (T(1) - au) * (T(1) - av));
          scatter(v0, u0 + 1, au * (T(1) - av));
          scatter(v0 + 1, u0, (T(1) - au) * av);
          scatter(v0 + 1, u0 + 1, au * av);
        }
        if (gc) {
          T du = T(0), dv = T(0);
          for (int c = 0; c < C; ++c) {
            T v00 = val(v0, u0, c), v01 = val(v0, u0 + 1, c);
            T v10 = val(v0 + 1, u0, c), v11 = val(v0 + 1, u0 + 1, c);
            du += gyp[c] * ((v01 - v00) * (T(1) - av) + (v11 - v10) * av);
            dv += gyp[c] * ((v10 - v00) * (T(1) - au) + (v11 - v01) * au);
          }
          gc->data[2 * p] += du;
          gc->data[2 * p + 1] += dv;
        }
      }
    }, "bilinear_sample");
    return SampleResult{out_id, std::move(validity)};
  }
};

// ------------------------------------------------------------------ sugar

// Thin expression handle so pipeline code reads like the math it implements.
template <typename T>
struct Expr {
  Graph<T>* g = nullptr;
  typename Graph<T>::Id id = -1;
  const Tensor<T>& val() const { return g->value(id); }
};

template <typename T>
Expr<T> wrap(Graph<T>& g, typename Graph<T>::Id id) { return Expr<T>{&g, id}; }

template <typename T> Expr<T> operator+(Expr<T> a, Expr<T> b) { return {a.g, a.g->add(a.id, b.id)}; }
template <typename T> Expr<T> operator-(Expr<T> a, Expr<T> b) { return {a.g, a.g->sub(a.id, b.id)}; }
template <typename T> Expr<T> operator*(Expr<T> a, Expr<T> b) { return {a.g, a.g->mul(a.id, b.id)}; }
template <typename T> Expr<T> operator/(Expr<T> a, Expr<T> b) { return {a.g, a.g->div(a.id, b.id)}; }
template <typename T> Expr<T> operator-(Expr<T> a) { return {a.g, a.g->neg(a.id)}; }
template <typename T> Expr<T> operator*(Expr<T> a, T s) { return {a.g, a.g->affine(a.id, s, T(0))}; }
template <typename T> Expr<T> operator*(T s, Expr<T> a) { return a * s; }
template <typename T> Expr<T> operator+(Expr<T> a, T s) { return {a.g, a.g->affine(a.id, T(1), s)}; }
template <typename T> Expr<T> operator-(Expr<T> a, T s) { return a + (-s); }

// --------------------------------------------------------- gradient check

// Max over all parameter coordinates of
//   |analytic - central difference| / max(1, |analytic|).
// `f` re-evaluates the scalar objective at the current parameter values.
// When max_coords_per_param > 0, a seeded subset of coordinates is probed.
template <typename T, typename F>
T finite_diff_check(F&& f, const std::vector<Tensor<T>*>& params,
                    const std::vector<Tensor<T>>& analytic, T eps,
                    int max_coords_per_param = 0, uint64_t seed = 0) {
  check(eps >= T(1e-7) && eps <= T(1e-3), "finite_diff_check: eps out of range");
  check(params.size() == analytic.size(), "finite_diff_check: param/gradient count mismatch");
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  T worst = T(0);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = *params[pi];
    const Tensor<T>& g = analytic[pi];
    check(p.same_shape(g), "finite_diff_check: gradient shape mismatch");
    std::vector<int64_t> coords;
    if (max_coords_per_param > 0 && p.numel() > max_coords_per_param) {
      for (int k = 0; k < max_coords_per_param; ++k)
        coords.push_back(static_cast<int64_t>(rng.uniform() * static_cast<double>(p.numel())));
    } else {
      coords.resize(static_cast<size_t>(p.numel()));
      for (int64_t i = 0; i < p.numel(); ++i) coords[static_cast<size_t>(i)] = i;
    }
    for (int64_t i : coords) {
      T saved = p[i];
      p[i] = saved + eps;
      T fp = f();
      p[i] = saved - eps;
      T fm = f();
      p[i] = saved;
      check(std::isfinite(static_cast<double>(fp)) && std::isfinite(static_cast<double>(fm)),
            "finite_diff_check: objective not finite");
      T fd = (fp - fm) / (T(2) * eps);
      T err = std::abs(g[i] - fd) / std::max(T(1), std::abs(g[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace nvde
