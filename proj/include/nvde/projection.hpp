#pragma once

#include <vector>

#include "nvde/autodiff.hpp"
#include "nvde/geometry.hpp"

namespace nvde {

// A pose as seen by the differentiable pipeline: either a fixed PoseSE3 or a
// pair of [3] leaves (axis-angle, translation) living in the graph.
template <typename T>
struct PoseRef {
  using Id = typename Graph<T>::Id;
  bool fixed = true;
  PoseSE3 pose;        // valid when fixed
  Id omega = -1;       // [3] axis-angle leaf when trainable
  Id trans = -1;       // [3] translation leaf when trainable

  static PoseRef fixed_pose(const PoseSE3& p) {
    PoseRef r;
    r.fixed = true;
    r.pose = p;
    return r;
  }
  static PoseRef trainable(Id omega_leaf, Id trans_leaf) {
    PoseRef r;
    r.fixed = false;
    r.omega = omega_leaf;
    r.trans = trans_leaf;
    return r;
  }

  bool exact_identity() const { return fixed && pose.is_identity(); }

  // Current numeric pose (reads leaf values when trainable).
  PoseSE3 current(const Graph<T>& g) const {
    if (fixed) return pose;
    const Tensor<T>& w = g.value(omega);
    const Tensor<T>& t = g.value(trans);
    PoseSE3 p;
    p.R = so3_exp(Vec3{double(w[0]), double(w[1]), double(w[2])});
    p.t = Vec3{double(t[0]), double(t[1]), double(t[2])};
    return p;
  }

  // Axis-angle + translation as 6 scalars (gamma encoding input).
  std::array<double, 6> params(const Graph<T>& g) const {
    PoseSE3 p = current(g);
    Vec3 w = so3_log(p.R);
    return {w.x, w.y, w.z, p.t.x, p.t.y, p.t.z};
  }
};

// Coordinates produced by a projection: either a constant tensor (fixed pose,
// fixed depth) or a graph node.
template <typename T>
struct CoordMap {
  bool is_node = false;
  typename Graph<T>::Id node = -1;
  Tensor<T> constant;       // [H,W,2] when !is_node
  Tensor<T> z_valid;        // [H,W,1], zero where |z_c| < kDegenerateZ
};

// Shared per-(graph, pose, camera) projection state. The camera-frame
// coordinates of a pixel lifted at depth d decompose as
//   x_c = d*A - s0,  y_c = d*B - s1,  z_c = d*C - s2
// with A,B,C per-pixel maps and s = R^T t; both sides are precomputed once
// here, as constants for a fixed pose or as graph nodes (built from an
// in-graph Rodrigues expansion) for a trainable one.
template <typename T>
class ProjectionContext {
 public:
  using Id = typename Graph<T>::Id;

  ProjectionContext(Graph<T>& g, const PoseRef<T>& pose, const Camera& cam)
      : g_(&g), pose_(pose), cam_(cam), h_(cam.height), w_(cam.width) {
    if (pose.exact_identity()) {
      identity_ = true;
      identity_coords_ = pixel_centers();
      return;
    }
    if (pose.fixed) {
      Mat3 m = transpose(pose.pose.R);
      Vec3 s = matvec(m, pose.pose.t);
      auto terms = std::make_shared<FixedTerms>();
      terms->s = {s.x, s.y, s.z};
      terms->cam = cam;
      Tensor<T>* maps[3] = {&terms->a, &terms->b, &terms->c};
      for (int row = 0; row < 3; ++row) {
        *maps[row] = Tensor<T>::uninit({h_, w_, 1});
        for (int i = 0; i < h_; ++i)
          for (int j = 0; j < w_; ++j) {
            double xt = (j - cam.cx) / cam.fx;
            double yt = (i - cam.cy) / cam.fy;
            maps[row]->at(i, j, 0) =
                static_cast<T>(m(row, 0) * xt + m(row, 1) * yt + m(row, 2));
          }
      }
      fixed_terms_ = std::move(terms);
      return;
    }
    build_trainable();
  }

  bool exact_identity() const { return identity_; }
  int height() const { return h_; }
  int width() const { return w_; }

  // Coordinates for one constant sample depth.
  CoordMap<T> at_const_depth(double depth) const {
    CoordMap<T> out;
    if (identity_) {
      out.constant = identity_coords_;
      out.z_valid = Tensor<T>::full({h_, w_, 1}, T(1));
      return out;
    }
    if (pose_.fixed) {
      const FixedTerms& ft = *fixed_terms_;
      out.constant = Tensor<T>::uninit({h_, w_, 2});
      out.z_valid = Tensor<T>::uninit({h_, w_, 1});
      for (int i = 0; i < h_; ++i)
        for (int j = 0; j < w_; ++j) {
          double xc = depth * double(ft.a.at(i, j, 0)) - ft.s[0];
          double yc = depth * double(ft.b.at(i, j, 0)) - ft.s[1];
          double zc = depth * double(ft.c.at(i, j, 0)) - ft.s[2];
          bool ok = std::abs(zc) >= kDegenerateZ;
          double zs = ok ? zc : (zc >= 0 ? kDegenerateZ : -kDegenerateZ);
          out.constant.at(i, j, 0) = static_cast<T>(cam_.fx * xc / zs + cam_.cx);
          out.constant.at(i, j, 1) = static_cast<T>(cam_.fy * yc / zs + cam_.cy);
          out.z_valid.at(i, j, 0) = ok ? T(1) : T(0);
        }
      return out;
    }
    Id d = g_->constant(Tensor<T>::full({h_, w_, 1}, static_cast<T>(depth)));
    return at_depth_node(d);
  }

  // Coordinates for a per-pixel depth map node [H,W,1].
  CoordMap<T> at_depth_node(Id depth) const {
    CoordMap<T> out;
    if (identity_) {
      // the projection collapses to the pixel itself for every depth
      out.constant = identity_coords_;
      out.z_valid = Tensor<T>::full({h_, w_, 1}, T(1));
      return out;
    }
    if (pose_.fixed) return fixed_pose_coords(depth);
    Id xc = g_->sub(g_->mul(depth, abc_node_[0]), s_node_[0]);
    Id yc = g_->sub(g_->mul(depth, abc_node_[1]), s_node_[1]);
    Id zc = g_->sub(g_->mul(depth, abc_node_[2]), s_node_[2]);
    const Tensor<T>& zv = g_->value(zc);
    out.z_valid = Tensor<T>::uninit({h_, w_, 1});
    for (int64_t i = 0; i < zv.numel(); ++i)
      out.z_valid[i] = std::abs(zv[i]) >= static_cast<T>(kDegenerateZ) ? T(1) : T(0);
    Id zs = g_->stabilize_nonzero(zc, static_cast<T>(kDegenerateZ));
    Id u = g_->affine(g_->div(xc, zs), static_cast<T>(cam_.fx), static_cast<T>(cam_.cx));
    Id v = g_->affine(g_->div(yc, zs), static_cast<T>(cam_.fy), static_cast<T>(cam_.cy));
    out.is_node = true;
    out.node = g_->concat_channels({u, v});
    return out;
  }

  Tensor<T> pixel_centers() const {
    Tensor<T> c = Tensor<T>::uninit({h_, w_, 2});
    for (int i = 0; i < h_; ++i)
      for (int j = 0; j < w_; ++j) {
        c.at(i, j, 0) = static_cast<T>(j);
        c.at(i, j, 1) = static_cast<T>(i);
      }
    return c;
  }

 private:
  struct FixedTerms {
    Tensor<T> a, b, c;
    std::array<double, 3> s{0, 0, 0};
    Camera cam;
  };

  // Fixed-pose projection of a per-pixel depth map fused into one node:
  //   u = fx (d A - s0)/zs + cx,  v = fy (d B - s1)/zs + cy,
  // zs the away-from-zero stabilized z. The backward rule matches the
  // stabilized composition: no gradient flows through a clamped z.
  CoordMap<T> fixed_pose_coords(Id depth) const {
    Graph<T>& g = *g_;
    const Tensor<T>& dv = g.value(depth);
    check(dv.rank() == 3 && dv.channels() == 1 && dv.height() == h_ && dv.width() == w_,
          "projection: depth map shape mismatch");
    auto ctx = fixed_terms_;
    int64_t pix = static_cast<int64_t>(h_) * w_;
    Tensor<T> coords = Tensor<T>::uninit({h_, w_, 2});
    CoordMap<T> out;
    out.z_valid = Tensor<T>::uninit({h_, w_, 1});
    const T eps = static_cast<T>(kDegenerateZ);
    for (int64_t p = 0; p < pix; ++p) {
      T d = dv[p];
      T z = d * ctx->c[p] - static_cast<T>(ctx->s[2]);
      bool ok = std::abs(z) >= eps;
      T zs = ok ? z : (z >= T(0) ? eps : -eps);
      coords[2 * p] = static_cast<T>(ctx->cam.fx) * (d * ctx->a[p] - static_cast<T>(ctx->s[0])) / zs +
                      static_cast<T>(ctx->cam.cx);
      coords[2 * p + 1] =
          static_cast<T>(ctx->cam.fy) * (d * ctx->b[p] - static_cast<T>(ctx->s[1])) / zs +
          static_cast<T>(ctx->cam.cy);
      out.z_valid[p] = ok ? T(1) : T(0);
    }
    out.is_node = true;
    out.node = g.custom(std::move(coords), {depth},
                        [depth, ctx, pix, eps](Graph<T>& gg, Id self) {
      Tensor<T>* gd = gg.grad_ptr(depth);
      if (!gd) return;
      const Tensor<T>& gy = gg.grad_of(self);
      const Tensor<T>& dv2 = gg.value(depth);
      T fx = static_cast<T>(ctx->cam.fx), fy = static_cast<T>(ctx->cam.fy);
      T s0 = static_cast<T>(ctx->s[0]), s1 = static_cast<T>(ctx->s[1]),
        s2 = static_cast<T>(ctx->s[2]);
      for (int64_t p = 0; p < pix; ++p) {
        T d = dv2[p];
        T a = ctx->a[p], b = ctx->b[p], c = ctx->c[p];
        T z = d * c - s2;
        bool ok = std::abs(z) >= eps;
        T zs = ok ? z : (z >= T(0) ? eps : -eps);
        T inv = T(1) / zs;
        T pass = ok ? T(1) : T(0);
        T x = d * a - s0, y = d * b - s1;
        T du_dd = fx * (a * inv - x * c * pass * inv * inv);
        T dv_dd = fy * (b * inv - y * c * pass * inv * inv);
        (*gd)[p] += gy[2 * p] * du_dd + gy[2 * p + 1] * dv_dd;
      }
    }, "project_coords");
    return out;
  }

  void build_trainable() {
    Graph<T>& g = *g_;
    Id wx = g.slice_channels(pose_.omega, 0, 1);
    Id wy = g.slice_channels(pose_.omega, 1, 1);
    Id wz = g.slice_channels(pose_.omega, 2, 1);
    Id s2 = g.add(g.add(g.mul(wx, wx), g.mul(wy, wy)), g.mul(wz, wz));
    Id a = g.rot_coef_a(s2);
    Id b = g.rot_coef_b(s2);
    auto A = [&](Id p, Id q) { return g.mul(p, q); };
    // R = I + a [w]_x + b [w]_x^2, entries as [1] nodes
    Id R[3][3];
    R[0][0] = g.affine(g.mul(b, g.add(A(wy, wy), A(wz, wz))), T(-1), T(1));
    R[0][1] = g.sub(A(b, A(wx, wy)), A(a, wz));
    R[0][2] = g.add(A(a, wy), A(b, A(wx, wz)));
    R[1][0] = g.add(A(a, wz), A(b, A(wx, wy)));
    R[1][1] = g.affine(g.mul(b, g.add(A(wx, wx), A(wz, wz))), T(-1), T(1));
    R[1][2] = g.sub(A(b, A(wy, wz)), A(a, wx));
    R[2][0] = g.sub(A(b, A(wx, wz)), A(a, wy));
    R[2][1] = g.add(A(a, wx), A(b, A(wy, wz)));
    R[2][2] = g.affine(g.mul(b, g.add(A(wx, wx), A(wy, wy))), T(-1), T(1));

    Id tx = g.slice_channels(pose_.trans, 0, 1);
    Id ty = g.slice_channels(pose_.trans, 1, 1);
    Id tz = g.slice_channels(pose_.trans, 2, 1);

    Tensor<T> xt({h_, w_, 1}), yt({h_, w_, 1});
    for (int i = 0; i < h_; ++i)
      for (int j = 0; j < w_; ++j) {
        xt.at(i, j, 0) = static_cast<T>((j - cam_.cx) / cam_.fx);
        yt.at(i, j, 0) = static_cast<T>((i - cam_.cy) / cam_.fy);
      }
    for (int row = 0; row < 3; ++row) {
      // rows of M = R^T are columns of R
      Id m0 = R[0][row], m1 = R[1][row], m2 = R[2][row];
      Id term = g.add(g.add(g.mul_const(g.broadcast_to_pixels(m0, h_, w_), xt),
                            g.mul_const(g.broadcast_to_pixels(m1, h_, w_), yt)),
                      g.broadcast_to_pixels(m2, h_, w_));
      abc_node_[static_cast<size_t>(row)] = term;
      Id s = g.add(g.add(g.mul(m0, tx), g.mul(m1, ty)), g.mul(m2, tz));
      s_node_[static_cast<size_t>(row)] = g.broadcast_to_pixels(s, h_, w_);
    }
  }

  Graph<T>* g_;
  PoseRef<T> pose_;
  Camera cam_;
  int h_, w_;
  bool identity_ = false;
  Tensor<T> identity_coords_;
  std::shared_ptr<const FixedTerms> fixed_terms_;
  std::array<typename Graph<T>::Id, 3> abc_node_{-1, -1, -1};
  std::array<typename Graph<T>::Id, 3> s_node_{-1, -1, -1};
};

}  // namespace nvde
