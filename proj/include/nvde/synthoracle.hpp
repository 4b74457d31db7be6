#pragma once

#include <optional>
#include <vector>

#include "nvde/geometry.hpp"
#include "nvde/rng.hpp"

namespace nvde {

// --------------------------------------------------------------- textures

enum class TextureKind { checker, noise, flat };

struct TextureSpec {
  TextureKind kind = TextureKind::noise;
  double scale = 1.0;  // feature size in world units
  uint64_t seed = 0;
};

namespace detail {

inline uint64_t hash_mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline double hash01(int64_t ix, int64_t iy, uint64_t seed) {
  uint64_t h = hash_mix(static_cast<uint64_t>(ix) * 0x632be59bd9b4e019ull ^
                        hash_mix(static_cast<uint64_t>(iy) ^ seed));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// Multi-octave value noise on the plane, deterministic per seed.
inline double value_noise(double x, double y, uint64_t seed) {
  double sum = 0.0, amp = 1.0, freq = 1.0, total = 0.0;
  for (int oct = 0; oct < 4; ++oct) {
    double fx = x * freq, fy = y * freq;
    double gx = std::floor(fx), gy = std::floor(fy);
    int64_t ix = static_cast<int64_t>(gx), iy = static_cast<int64_t>(gy);
    double tx = smooth(fx - gx), ty = smooth(fy - gy);
    uint64_t s = seed + 0x51ull * static_cast<uint64_t>(oct + 1);
    double v00 = hash01(ix, iy, s), v01 = hash01(ix + 1, iy, s);
    double v10 = hash01(ix, iy + 1, s), v11 = hash01(ix + 1, iy + 1, s);
    double v = (1 - tx) * (1 - ty) * v00 + tx * (1 - ty) * v01 + (1 - tx) * ty * v10 +
               tx * ty * v11;
    sum += amp * v;
    total += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum / total;  // [0,1]
}

}  // namespace detail

// Color of a plane texture at world coordinates (x,y), in [-0.4, 0.4].
inline void texture_color(const TextureSpec& tex, double x, double y, double rgb[3]) {
  if (tex.kind == TextureKind::flat) {
    for (int c = 0; c < 3; ++c) rgb[c] = -0.2 + 0.05 * c;
    return;
  }
  if (tex.kind == TextureKind::checker) {
    double u = std::floor(x / tex.scale), v = std::floor(y / tex.scale);
    int64_t cell = static_cast<int64_t>(u) + static_cast<int64_t>(v);
    bool on = ((cell % 2) + 2) % 2 == 0;
    for (int c = 0; c < 3; ++c) {
      double base = detail::hash01(c, on ? 1 : 2, tex.seed) - 0.5;
      rgb[c] = 0.8 * base * (on ? 1.0 : -1.0);
      rgb[c] = std::clamp(rgb[c] + (on ? 0.15 : -0.15), -0.4, 0.4);
    }
    return;
  }
  for (int c = 0; c < 3; ++c) {
    double n = detail::value_noise(x / tex.scale, y / tex.scale, tex.seed + 977u * c);
    rgb[c] = 0.8 * (n - 0.5);
  }
}

// ----------------------------------------------------------------- scenes

// Fronto-parallel plane z = depth (in the source camera frame), optionally
// limited to a world-space rectangle.
struct PlaneSpec {
  double depth = 8.0;
  bool bounded = false;
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  TextureSpec texture;
};

// A Gaussian blob on one surface that moves opposite its surface's rigid
// flow, relative to that surface, by gain * flow: the negative-disparity
// behaviour of a glossy reflection. Pure camera rotations leave it fixed on
// the surface. The displacement rule is exactly the one the renderer's
// negative-disparity sampling reproduces with |v| = gain / depth.
struct HighlightSpec {
  int plane = 0;
  double center_u = 0, center_v = 0;  // source-frame pixel
  double radius_px = 5.0;
  double intensity = 0.35;
  double gain = 0.5;  // in (0,1]
};

struct SceneSpec {
  Camera cam;
  double t_near = 1.0, t_far = 16.0;
  std::vector<PlaneSpec> planes;  // ordered far to near
  std::optional<HighlightSpec> highlight;
  uint64_t seed = 0;
};

template <typename T>
struct FrameSet {
  Camera cam;
  double t_near = 1.0, t_far = 16.0;
  std::vector<Tensor<T>> images;    // [H,W,3] in [-0.5, 0.5]
  std::vector<PoseSE3> poses;       // camera-to-world, poses[0] = identity
  std::vector<Tensor<T>> gt_depth;  // [H,W,1]
  Tensor<T> highlight_mask;         // [H,W,1], source frame
};

namespace detail {

struct RayHit {
  bool hit = false;
  double depth = 0;  // camera-frame depth
  double x = 0, y = 0;
  int plane = -1;
};

inline RayHit cast_ray(const SceneSpec& spec, const PoseSE3& pose, double u, double v) {
  Vec3 dir_cam{(u - spec.cam.cx) / spec.cam.fx, (v - spec.cam.cy) / spec.cam.fy, 1.0};
  Vec3 dir = matvec(pose.R, dir_cam);
  Vec3 origin = pose.t;
  RayHit best;
  for (size_t k = 0; k < spec.planes.size(); ++k) {
    const PlaneSpec& pl = spec.planes[k];
    if (std::abs(dir.z) < 1e-12) continue;
    double s = (pl.depth - origin.z) / dir.z;
    if (s <= 1e-6) continue;
    double x = origin.x + s * dir.x;
    double y = origin.y + s * dir.y;
    if (pl.bounded && (x < pl.x0 || x > pl.x1 || y < pl.y0 || y > pl.y1)) continue;
    if (!best.hit || s < best.depth) {
      best.hit = true;
      best.depth = s;
      best.x = x;
      best.y = y;
      best.plane = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace detail

// Renders the frame set with z-buffered planes and the displaced highlight.
// Deterministic: identical spec and poses give bit-identical frames.
template <typename T>
FrameSet<T> generate_scene(const SceneSpec& spec, const std::vector<PoseSE3>& poses) {
  check(!spec.planes.empty(), "generate_scene: empty plane list");
  check(!poses.empty(), "generate_scene: no poses");
  int H = spec.cam.height, W = spec.cam.width;
  FrameSet<T> fs;
  fs.cam = spec.cam;
  fs.t_near = spec.t_near;
  fs.t_far = spec.t_far;
  fs.poses = poses;
  fs.highlight_mask = Tensor<T>::zeros({H, W, 1});

  // highlight geometry: surface point in the source frame
  Vec3 hl_point{};
  bool has_hl = spec.highlight.has_value();
  if (has_hl) {
    const HighlightSpec& hl = *spec.highlight;
    double d = spec.planes[static_cast<size_t>(hl.plane)].depth;
    hl_point = Vec3{d * (hl.center_u - spec.cam.cx) / spec.cam.fx,
                    d * (hl.center_v - spec.cam.cy) / spec.cam.fy, d};
  }

  for (size_t f = 0; f < poses.size(); ++f) {
    const PoseSE3& pose = poses[f];
    Tensor<T> img({H, W, 3});
    Tensor<T> depth({H, W, 1});

    double hu = 0, hv = 0;
    int hl_plane = -1;
    double sigma = 1.0;
    if (has_hl) {
      const HighlightSpec& hl = *spec.highlight;
      // Where the blob content sits on the source raster after the
      // negative-disparity resampling: solving the translation-only
      // epipolar sample position for the blob origin.
      Vec3 t_p = -1.0 * matvec(transpose(pose.R), pose.t);
      double v = -hl.gain / hl_point.z;
      double denom = 1.0 - t_p.z * v;
      double x_inf = (hl_point.x / hl_point.z) * denom + t_p.x * v;
      double y_inf = (hl_point.y / hl_point.z) * denom + t_p.y * v;
      // That source position, lifted to the surface and projected into this
      // frame, is where the rendered highlight lands.
      Vec3 x_world{x_inf * hl_point.z, y_inf * hl_point.z, hl_point.z};
      Vec3 pc = matvec(transpose(pose.R), x_world - pose.t);
      hu = spec.cam.fx * pc.x / pc.z + spec.cam.cx;
      hv = spec.cam.fy * pc.y / pc.z + spec.cam.cy;
      hl_plane = hl.plane;
      sigma = hl.radius_px;
    }

    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        auto hit = detail::cast_ray(spec, pose, j, i);
        double rgb[3] = {0, 0, 0};
        double d = spec.t_far;
        if (hit.hit) {
          texture_color(spec.planes[static_cast<size_t>(hit.plane)].texture, hit.x, hit.y, rgb);
          d = hit.depth;
        }
        if (has_hl && hit.hit && hit.plane == hl_plane) {
          double du = j - hu, dv = i - hv;
          double wgt = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
          for (double& c : rgb) c += spec.highlight->intensity * wgt;
          if (f == 0 && wgt > 0.1) fs.highlight_mask.at(i, j, 0) = T(1);
        }
        for (int c = 0; c < 3; ++c)
          img.at(i, j, c) = static_cast<T>(std::clamp(rgb[c], -0.5, 0.5));
        depth.at(i, j, 0) = static_cast<T>(d);
      }
    fs.images.push_back(std::move(img));
    fs.gt_depth.push_back(std::move(depth));
  }
  return fs;
}

// Per-pixel view classification of a target pose against the source view.
template <typename T>
struct VisibilityMasks {
  Tensor<T> disoccluded;  // visible here, hidden in the source
  Tensor<T> visible;      // seen consistently in both views
};

template <typename T>
VisibilityMasks<T> classify_visibility(const SceneSpec& spec, const PoseSE3& target_pose) {
  int H = spec.cam.height, W = spec.cam.width;
  VisibilityMasks<T> m{Tensor<T>::zeros({H, W, 1}), Tensor<T>::zeros({H, W, 1})};
  PoseSE3 src = PoseSE3::identity();
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      auto hit = detail::cast_ray(spec, target_pose, j, i);
      if (!hit.hit) continue;
      Vec3 X{hit.x, hit.y, spec.planes[static_cast<size_t>(hit.plane)].depth};
      double zs = X.z;  // source camera depth (source at identity)
      double qu = spec.cam.fx * X.x / zs + spec.cam.cx;
      double qv = spec.cam.fy * X.y / zs + spec.cam.cy;
      bool inside = qu >= 0 && qu <= W - 1 && qv >= 0 && qv <= H - 1;
      if (!inside) continue;
      auto src_hit = detail::cast_ray(spec, src, qu, qv);
      if (!src_hit.hit) continue;
      if (zs > src_hit.depth * 1.02)
        m.disoccluded.at(i, j, 0) = T(1);
      else
        m.visible.at(i, j, 0) = T(1);
    }
  return m;
}

// -------------------------------------------------------------- reference

// Scalar brute-force renderer: per-pixel loops implementing the rendering
// equations literally, sharing nothing with the vectorized pipeline. Serves
// as the equivalence oracle in the test suites.
namespace oracle {

struct ScalarProjected {
  double u = 0, v = 0;
  double z_valid = 1;
};

inline ScalarProjected project(double u, double v, double depth, const PoseSE3& pose,
                               const Camera& cam) {
  double xw = depth * (u - cam.cx) / cam.fx;
  double yw = depth * (v - cam.cy) / cam.fy;
  double zw = depth;
  ScalarProjected out;
  double xc = pose.R(0, 0) * (xw - pose.t.x) + pose.R(1, 0) * (yw - pose.t.y) +
              pose.R(2, 0) * (zw - pose.t.z);
  double yc = pose.R(0, 1) * (xw - pose.t.x) + pose.R(1, 1) * (yw - pose.t.y) +
              pose.R(2, 1) * (zw - pose.t.z);
  double zc = pose.R(0, 2) * (xw - pose.t.x) + pose.R(1, 2) * (yw - pose.t.y) +
              pose.R(2, 2) * (zw - pose.t.z);
  if (std::abs(zc) < 1e-9) {
    out.z_valid = 0;
    zc = zc >= 0 ? 1e-9 : -1e-9;
  }
  out.u = cam.fx * xc / zc + cam.cx;
  out.v = cam.fy * yc / zc + cam.cy;
  return out;
}

template <typename T>
struct ScalarSample {
  T value = T(0);
  T inside = T(0);  // in-bounds bilinear weight
};

template <typename T>
ScalarSample<T> sample(const Tensor<T>& img, double u, double v, int c) {
  int H = img.height(), W = img.width(), C = img.channels();
  double fu = std::floor(u), fv = std::floor(v);
  int u0 = static_cast<int>(fu), v0 = static_cast<int>(fv);
  T au = static_cast<T>(u - fu), av = static_cast<T>(v - fv);
  ScalarSample<T> out;
  auto corner = [&](int vv, int uu, T w) {
    if (w == T(0)) return;
    if (uu < 0 || uu >= W || vv < 0 || vv >= H) return;
    out.inside += w;
    out.value += w * img.data[(static_cast<int64_t>(vv) * W + uu) * C + c];
  };
  corner(v0, u0, (T(1) - au) * (T(1) - av));
  corner(v0, u0 + 1, au * (T(1) - av));
  corner(v0 + 1, u0, (T(1) - au) * av);
  corner(v0 + 1, u0 + 1, au * av);
  return out;
}

template <typename T>
void softmax_inplace(std::vector<T>& x) {
  T m = x[0];
  for (T v : x) m = std::max(m, v);
  T sum = T(0);
  for (T& v : x) {
    v = std::exp(v - m);
    sum += v;
  }
  for (T& v : x) v /= sum;
}

template <typename T>
Tensor<T> box5_reflect(const Tensor<T>& img) {
  int H = img.height(), W = img.width(), C = img.channels();
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return i;
  };
  Tensor<T> out({H, W, C});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < C; ++c) {
        T acc = T(0);
        for (int a = -2; a <= 2; ++a)
          for (int b = -2; b <= 2; ++b)
            acc += T(1.0 / 25.0) * img.at(reflect(i + a, H), reflect(j + b, W), c);
        out.at(i, j, c) = acc;
      }
  return out;
}

template <typename T>
Tensor<T> depth_estimate(const Tensor<T>& depth_logits, const SampleSchedule& sched) {
  int H = depth_logits.height(), W = depth_logits.width(), N = depth_logits.channels();
  Tensor<T> out({H, W, 1});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      std::vector<T> p(static_cast<size_t>(N));
      for (int k = 0; k < N; ++k) p[static_cast<size_t>(k)] = depth_logits.at(i, j, k);
      softmax_inplace(p);
      T d = T(0);
      for (int k = 0; k < N; ++k)
        d += static_cast<T>(sched.distances[static_cast<size_t>(k)]) * p[static_cast<size_t>(k)];
      out.at(i, j, 0) = d;
    }
  return out;
}

inline constexpr double kFillLogit = -30.0;

// VDE-infused image (delta form over the low-pass image).
template <typename T>
Tensor<T> infuse(const Tensor<T>& image, const Tensor<T>& vde_logits, const Tensor<T>& dhat,
                 int n_vde, T eps, const Vec3& translation, const Camera& cam) {
  int H = image.height(), W = image.width();
  Tensor<T> low = box5_reflect(image);
  Tensor<T> out = image;
  PoseSE3 tpose;
  tpose.t = translation;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      std::vector<T> logits(static_cast<size_t>(n_vde));
      std::vector<double> su(static_cast<size_t>(n_vde)), sv(static_cast<size_t>(n_vde));
      std::vector<T> zval(static_cast<size_t>(n_vde));
      for (int k = 0; k < n_vde; ++k) {
        T vk = -static_cast<T>(k) / static_cast<T>(n_vde - 1) *
                   (T(1) / dhat.at(i, j, 0) - eps) -
               eps;
        double depth = 1.0 / static_cast<double>(vk);
        auto pr = project(j, i, depth, tpose, cam);
        su[static_cast<size_t>(k)] = pr.u;
        sv[static_cast<size_t>(k)] = pr.v;
        zval[static_cast<size_t>(k)] = static_cast<T>(pr.z_valid);
        auto s = sample(vde_logits, pr.u, pr.v, k);
        T zs = static_cast<T>(pr.z_valid);
        logits[static_cast<size_t>(k)] =
            zs * s.value + (T(1) - zs * s.inside) * static_cast<T>(kFillLogit);
      }
      softmax_inplace(logits);
      for (int c = 0; c < 3; ++c) {
        T acc = image.at(i, j, c);
        for (int k = 0; k < n_vde; ++k) {
          auto s = sample(low, su[static_cast<size_t>(k)], sv[static_cast<size_t>(k)], c);
          T delta = zval[static_cast<size_t>(k)] * s.value - low.at(i, j, c);
          acc += logits[static_cast<size_t>(k)] * delta;
        }
        out.at(i, j, c) = acc;
      }
    }
  return out;
}

// Coarse relaxed volumetric render of an already-infused image.
template <typename T>
Tensor<T> render_coarse(const Tensor<T>& infused, const Tensor<T>& depth_logits,
                        const SampleSchedule& sched, const PoseSE3& pose, const Camera& cam) {
  int H = infused.height(), W = infused.width();
  int N = depth_logits.channels();
  Tensor<T> out({H, W, 3});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      std::vector<T> logits(static_cast<size_t>(N));
      std::vector<double> su(static_cast<size_t>(N)), sv(static_cast<size_t>(N));
      std::vector<T> zval(static_cast<size_t>(N));
      for (int k = 0; k < N; ++k) {
        auto pr = project(j, i, sched.distances[static_cast<size_t>(k)], pose, cam);
        su[static_cast<size_t>(k)] = pr.u;
        sv[static_cast<size_t>(k)] = pr.v;
        zval[static_cast<size_t>(k)] = static_cast<T>(pr.z_valid);
        auto s = sample(depth_logits, pr.u, pr.v, k);
        T zs = static_cast<T>(pr.z_valid);
        logits[static_cast<size_t>(k)] =
            zs * s.value + (T(1) - zs * s.inside) * static_cast<T>(kFillLogit);
      }
      softmax_inplace(logits);
      for (int c = 0; c < 3; ++c) {
        T acc = T(0);
        for (int k = 0; k < N; ++k) {
          auto s = sample(infused, su[static_cast<size_t>(k)], sv[static_cast<size_t>(k)], c);
          acc += logits[static_cast<size_t>(k)] * (zval[static_cast<size_t>(k)] * s.value);
        }
        out.at(i, j, c) = acc;
      }
    }
  return out;
}

// Fine render from per-pixel distances and weights.
template <typename T>
Tensor<T> render_fine(const Tensor<T>& infused, const Tensor<T>& tstar, const Tensor<T>& wstar,
                      const PoseSE3& pose, const Camera& cam) {
  int H = infused.height(), W = infused.width();
  int N = tstar.channels();
  Tensor<T> out({H, W, 3});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < 3; ++c) {
        T acc = T(0);
        for (int k = 0; k < N; ++k) {
          auto pr = project(j, i, static_cast<double>(tstar.at(i, j, k)), pose, cam);
          auto s = sample(infused, pr.u, pr.v, c);
          acc += wstar.at(i, j, k) * (static_cast<T>(pr.z_valid) * s.value);
        }
        out.at(i, j, c) = acc;
      }
  return out;
}

// Occlusion mask: source-raster softmax, projected channel sum, clamped.
template <typename T>
Tensor<T> occlusion(const Tensor<T>& depth_logits, const SampleSchedule& sched,
                    const PoseSE3& pose, const Camera& cam) {
  int H = depth_logits.height(), W = depth_logits.width(), N = depth_logits.channels();
  Tensor<T> probs = depth_logits;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      std::vector<T> p(static_cast<size_t>(N));
      for (int k = 0; k < N; ++k) p[static_cast<size_t>(k)] = probs.at(i, j, k);
      softmax_inplace(p);
      for (int k = 0; k < N; ++k) probs.at(i, j, k) = p[static_cast<size_t>(k)];
    }
  Tensor<T> out({H, W, 1});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      T acc = T(0);
      for (int k = 0; k < N; ++k) {
        auto pr = project(j, i, sched.distances[static_cast<size_t>(k)], pose, cam);
        auto s = sample(probs, pr.u, pr.v, k);
        acc += static_cast<T>(pr.z_valid) * s.value;
      }
      out.at(i, j, 0) = std::min(T(1), std::max(T(0), acc));
    }
  return out;
}

}  // namespace oracle
}  // namespace nvde
