#pragma once

#include <array>
#include <cmath>

#include "nvde/autodiff.hpp"
#include "nvde/tensor.hpp"

namespace nvde {

// Conventions used everywhere in this library:
//  - pixel origin at the center of the top-left pixel, u right, v down;
//  - poses are camera-to-world;
//  - projecting a pixel p lifted at depth d through pose (R,t) computes
//      p_w = d K^-1 (u,v,1),  p_c = R^T p_w - R^T t,  p' = K p_c / z_c,
//    i.e. (R,t) are the extrinsics of the view being sampled, expressed in
//    the frame of the view that owns p.

struct Vec3 {
  double x = 0, y = 0, z = 0;
  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

struct Mat3 {
  // row-major
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
  static Mat3 identity() { return Mat3{}; }
  double& operator()(int r, int c) { return m[static_cast<size_t>(3 * r + c)]; }
  double operator()(int r, int c) const { return m[static_cast<size_t>(3 * r + c)]; }
};

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      r(i, j) = s;
    }
  return r;
}

inline Vec3 matvec(const Mat3& a, Vec3 v) {
  return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
          a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
          a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

inline Mat3 transpose(const Mat3& a) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = a(j, i);
  return r;
}

// Pinhole intrinsics.
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;
};

struct PoseSE3 {
  Mat3 R;
  Vec3 t;
  static PoseSE3 identity() { return PoseSE3{}; }
  bool is_identity() const {
    Mat3 eye = Mat3::identity();
    for (int i = 0; i < 9; ++i)
      if (R.m[static_cast<size_t>(i)] != eye.m[static_cast<size_t>(i)]) return false;
    return t.x == 0 && t.y == 0 && t.z == 0;
  }
};

// compose(a, b): apply b, then a (X -> a.R (b.R X + b.t) + a.t).
inline PoseSE3 pose_compose(const PoseSE3& a, const PoseSE3& b) {
  PoseSE3 r;
  r.R = matmul(a.R, b.R);
  r.t = matvec(a.R, b.t) + a.t;
  return r;
}

inline PoseSE3 pose_inverse(const PoseSE3& a) {
  PoseSE3 r;
  r.R = transpose(a.R);
  r.t = -1.0 * matvec(r.R, a.t);
  return r;
}

// Rodrigues formula, series-guarded near zero.
inline Mat3 so3_exp(Vec3 w) {
  double s = dot(w, w);
  double a, b;
  if (s < 1e-8) {
    a = 1.0 - s / 6.0 + s * s / 120.0;
    b = 0.5 - s / 24.0 + s * s / 720.0;
  } else {
    double th = std::sqrt(s);
    a = std::sin(th) / th;
    b = (1.0 - std::cos(th)) / s;
  }
  Mat3 r;
  r(0, 0) = 1.0 - b * (w.y * w.y + w.z * w.z);
  r(0, 1) = -a * w.z + b * w.x * w.y;
  r(0, 2) = a * w.y + b * w.x * w.z;
  r(1, 0) = a * w.z + b * w.x * w.y;
  r(1, 1) = 1.0 - b * (w.x * w.x + w.z * w.z);
  r(1, 2) = -a * w.x + b * w.y * w.z;
  r(2, 0) = -a * w.y + b * w.x * w.z;
  r(2, 1) = a * w.x + b * w.y * w.z;
  r(2, 2) = 1.0 - b * (w.x * w.x + w.y * w.y);
  return r;
}

// Axis-angle of a rotation matrix.
inline Vec3 so3_log(const Mat3& R) {
  double tr = R(0, 0) + R(1, 1) + R(2, 2);
  double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
  double th = std::acos(c);
  Vec3 skew{R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1)};
  if (th < 1e-7) return 0.5 * skew;
  if (th > 3.141592653589793 - 1e-4) {
    // near pi the skew part vanishes; recover the axis from the diagonal
    Vec3 axis;
    int k = 0;
    double best = R(0, 0);
    for (int i = 1; i < 3; ++i)
      if (R(i, i) > best) { best = R(i, i); k = i; }
    axis[k] = std::sqrt(std::max(0.0, (R(k, k) + 1.0) / 2.0));
    for (int i = 0; i < 3; ++i)
      if (i != k) axis[i] = R(k, i) / (2.0 * axis[k] + 1e-300);
    double n = norm(axis);
    return (th / (n + 1e-300)) * axis;
  }
  return (th / (2.0 * std::sin(th))) * skew;
}

// Re-projects a nearly-orthonormal matrix onto SO(3) (Gram-Schmidt on rows).
inline Mat3 orthonormalize(const Mat3& R) {
  Vec3 r0{R(0, 0), R(0, 1), R(0, 2)};
  Vec3 r1{R(1, 0), R(1, 1), R(1, 2)};
  r0 = (1.0 / norm(r0)) * r0;
  r1 = r1 - dot(r1, r0) * r0;
  r1 = (1.0 / norm(r1)) * r1;
  Vec3 r2 = cross(r0, r1);
  Mat3 out;
  for (int j = 0; j < 3; ++j) {
    out(0, j) = r0[j];
    out(1, j) = r1[j];
    out(2, j) = r2[j];
  }
  return out;
}

inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  return norm(so3_log(matmul(a, transpose(b))));
}

inline double angle_between_vectors(Vec3 a, Vec3 b) {
  double na = norm(a), nb = norm(b);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return std::acos(std::clamp(dot(a, b) / (na * nb), -1.0, 1.0));
}

// ------------------------------------------------------------- schedules

// Ray sample distances t_i = t_n (t_f/t_n)^(1 - i/(N-1)), index 0 at the far
// bound, strictly decreasing toward t_n. Computed in exp2/log2 so that exact
// power-of-two ratios produce exact distances.
struct SampleSchedule {
  double t_near = 1, t_far = 16;
  int count = 0;
  std::vector<double> distances;
};

inline SampleSchedule make_exponential_schedule(double t_near, double t_far, int n) {
  check(t_near > 0, "make_exponential_schedule: t_near must be positive");
  check(t_far > t_near, "make_exponential_schedule: t_far must exceed t_near");
  check(n >= 2, "make_exponential_schedule: need at least two samples");
  SampleSchedule s;
  s.t_near = t_near;
  s.t_far = t_far;
  s.count = n;
  s.distances.resize(static_cast<size_t>(n));
  double log_ratio = std::log2(t_far / t_near);
  s.distances[0] = t_far;
  s.distances[static_cast<size_t>(n - 1)] = t_near;
  for (int i = 1; i < n - 1; ++i) {
    double e = 1.0 - static_cast<double>(i) / (n - 1);
    s.distances[static_cast<size_t>(i)] = t_near * std::exp2(e * log_ratio);
  }
  return s;
}

// ------------------------------------------------------------ projection

struct Projected {
  double u = 0, v = 0;
  double depth = 0;       // z component in the sampled view
  bool degenerate = false;  // |z| below threshold; caller treats as invalid
};

inline constexpr double kDegenerateZ = 1e-9;

// Negative depths are legal inputs (sampling behind the camera); only
// |z_c| ~ 0 is rejected.
inline Projected epipolar_project(double u, double v, double depth, const PoseSE3& pose,
                                  const Camera& cam) {
  Vec3 pw{depth * (u - cam.cx) / cam.fx, depth * (v - cam.cy) / cam.fy, depth};
  Mat3 rt = transpose(pose.R);
  Vec3 pc = matvec(rt, pw) - matvec(rt, pose.t);
  Projected out;
  out.depth = pc.z;
  if (std::abs(pc.z) < kDegenerateZ) {
    out.degenerate = true;
    double z = pc.z >= 0 ? kDegenerateZ : -kDegenerateZ;
    out.u = cam.fx * pc.x / z + cam.cx;
    out.v = cam.fy * pc.y / z + cam.cy;
    return out;
  }
  out.u = cam.fx * pc.x / pc.z + cam.cx;
  out.v = cam.fy * pc.y / pc.z + cam.cy;
  return out;
}

// -------------------------------------------------------- rotation warps

namespace detail {
template <typename T>
inline T sample_bilinear_scalar(const Tensor<T>& img, double u, double v, int c) {
  int W = img.width(), H = img.height(), C = img.channels();
  double fu = std::floor(u), fv = std::floor(v);
  int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
  T au = static_cast<T>(u - fu), av = static_cast<T>(v - fv);
  auto val = [&](int vv, int uu) -> T {
    if (uu < 0 || uu >= W || vv < 0 || vv >= H) return T(0);
    return img.data[(static_cast<int64_t>(vv) * W + uu) * C + c];
  };
  return (T(1) - au) * (T(1) - av) * val(v0, u0) + au * (T(1) - av) * val(v0, u0 + 1) +
         (T(1) - au) * av * val(v0 + 1, u0) + au * av * val(v0 + 1, u0 + 1);
}
}  // namespace detail

// Resamples img through the pure-rotation homography K R K^-1, zero outside
// bounds. out(p) = img(proj(K R K^-1 [u,v,1])).
template <typename T>
Tensor<T> rotation_align_warp(const Tensor<T>& img, const Mat3& R, const Camera& cam) {
  int H = img.height(), W = img.width(), C = img.channels();
  Tensor<T> out({H, W, C});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      Vec3 d{(j - cam.cx) / cam.fx, (i - cam.cy) / cam.fy, 1.0};
      Vec3 q = matvec(R, d);
      if (std::abs(q.z) < kDegenerateZ) continue;
      double u = cam.fx * q.x / q.z + cam.cx;
      double v = cam.fy * q.y / q.z + cam.cy;
      for (int c = 0; c < C; ++c)
        out.at(i, j, c) = detail::sample_bilinear_scalar(img, u, v, c);
    }
  return out;
}

}  // namespace nvde
