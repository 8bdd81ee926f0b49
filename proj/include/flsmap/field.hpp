#pragma once

#include "flsmap/hash_encoding.hpp"
#include "flsmap/mlp.hpp"
#include "flsmap/sh.hpp"
#include "flsmap/types.hpp"

namespace flsmap {

/// Everything one batched height evaluation keeps for its reverse pass.
template <typename S>
struct HeightSaved {
  EncodeSaved<S> enc;
  MlpSaved<S> mlp;
};

/// Trainable heightmap N(x,y): hash-encoded features into a small MLP with a
/// single linear height output [m].
template <typename S>
struct HeightField {
  HashGrid<S> grid;
  Mlp<S> mlp;
  int active_levels = -1;  // progressive training mask; -1 = all

  void init(const HashGridConfig& gc, int hidden_layers, int hidden_width,
            Rng& rng, S table_init_scale = S(1e-4)) {
    grid.init(gc, rng, table_init_scale);
    MlpSpec ms;
    ms.input_dim = gc.feature_dim();
    ms.hidden_layers = hidden_layers;
    ms.hidden_width = hidden_width;
    ms.output_dim = 1;
    ms.hidden_act = Activation::kRelu;
    ms.output_act = Activation::kIdentity;
    mlp.init(ms, rng);
  }

  void register_params(ParamStore<S>& store) {
    store.add("height.tables", grid.tables, grid.grad);
    mlp.register_params(store, "height.mlp");
  }

  /// Heights for a 2 x n batch of world (x,y).
  VecX<S> forward(const MatX<S>& xy, HeightSaved<S>* saved = nullptr) const {
    MatX<S> feats;
    EncodeSaved<S> enc;
    encode_batch(grid, xy, active_levels, feats, enc);
    if (!saved) return mlp_forward(mlp, feats).row(0);
    saved->enc = std::move(enc);
    VecX<S> h = mlp_forward(mlp, feats, &saved->mlp).row(0);
    return h;
  }

  /// Accumulate d(loss)/d(height) into MLP and table gradients.
  void backward(const HeightSaved<S>& saved, const VecX<S>& dh) {
    MatX<S> up = dh.transpose();
    MatX<S> dfeat = mlp_backward(mlp, saved.mlp, up);
    encode_backward(grid, saved.enc, dfeat);
  }

  /// Feature gradients dh/df for every column (scalar head).
  MatX<S> feature_gradients(const HeightSaved<S>& saved) const {
    MatX<S> ones = MatX<S>::Ones(1, saved.mlp.input.cols());
    return mlp_input_gradient(mlp, saved.mlp, ones);
  }
};

template <typename S>
S query_height(const HeightField<S>& hf, const Vec2<S>& xy) {
  MatX<S> p(2, 1);
  p.col(0) = xy;
  return hf.forward(p)(0);
}

/// Batched surface probe at 3D world points: height, vertical signed distance,
/// raw normal (-dN/dx, -dN/dy, 1), features, and the internals needed to push
/// gradients back through both the values and the normals.
template <typename S>
struct FieldQueryBatch {
  MatX<S> points;   // 3 x n
  VecX<S> h;        // n
  VecX<S> delta;    // z - h
  MatX<S> grad_n;   // 2 x n, (dN/dx, dN/dy)
  MatX<S> normal;   // 3 x n, raw Eq-style normal
  MatX<S> features; // feature_dim x n
  MatX<S> g_e;      // feature gradients dh/df, feature_dim x n
  HeightSaved<S> saved;
};

template <typename S>
FieldQueryBatch<S> query_delta_normal(const HeightField<S>& hf, const MatX<S>& pts) {
  FieldQueryBatch<S> q;
  q.points = pts;
  const int n = int(pts.cols());
  MatX<S> xy = pts.topRows(2);
  q.h = hf.forward(xy, &q.saved);
  q.features = q.saved.mlp.input;
  q.delta = pts.row(2).transpose() - q.h;
  q.g_e = hf.feature_gradients(q.saved);
  q.grad_n.resize(2, n);
  q.normal.resize(3, n);
  for (int i = 0; i < n; ++i) {
    const Vec2<S> g =
        encode_spatial_gradient(hf.grid, q.saved.enc, i, VecX<S>(q.g_e.col(i)));
    q.grad_n.col(i) = g;
    q.normal.col(i) = Vec3<S>(-g.x(), -g.y(), S(1));
  }
  return q;
}

/// Push upstream gradients on the raw normals of a query batch into the field
/// parameters. d_normal's z-row is ignored (n_z == 1 by construction).
template <typename S>
void normal_backward(HeightField<S>& hf, const FieldQueryBatch<S>& q,
                     const MatX<S>& d_normal) {
  const int n = int(q.points.cols());
  MatX<S> tangents(hf.grid.cfg.feature_dim(), n);
  for (int i = 0; i < n; ++i) {
    // dL/d(gradN) = -dL/d(n_xy)
    const Vec2<S> w(-d_normal(0, i), -d_normal(1, i));
    tangents.col(i) = encode_tangent(hf.grid, q.saved.enc, i, w);
    encode_tangent_backward(hf.grid, q.saved.enc, i, w, VecX<S>(q.g_e.col(i)));
  }
  mlp_input_gradient_backward(hf.mlp, q.saved.mlp, tangents);
}

/// Per-point radiance in [0,1], conditioned on rescaled position, hash
/// features, unit normal, and SH-encoded view direction.
template <typename S>
struct RadianceField {
  Mlp<S> mlp;
  Bounds2d xy_bounds{};
  double z_lo = -10.0, z_hi = 10.0;
  int feature_dim = 0;

  static constexpr int kPosDim = 3;
  static constexpr int kNormalDim = 3;

  int input_dim() const { return kPosDim + feature_dim + kNormalDim + kShDim; }

  void init(int features, const Bounds2d& bounds, double zlo, double zhi,
            int hidden_layers, int hidden_width, Rng& rng) {
    feature_dim = features;
    xy_bounds = bounds;
    z_lo = zlo;
    z_hi = zhi;
    MlpSpec ms;
    ms.input_dim = input_dim();
    ms.hidden_layers = hidden_layers;
    ms.hidden_width = hidden_width;
    ms.output_dim = 1;
    ms.hidden_act = Activation::kRelu;
    ms.output_act = Activation::kSigmoid;
    mlp.init(ms, rng);
  }

  void register_params(ParamStore<S>& store) { mlp.register_params(store, "radiance.mlp"); }

  Vec3<S> rescale_position(const Vec3<S>& p) const {
    const double cx = 0.5 * (xy_bounds.lo.x() + xy_bounds.hi.x());
    const double cy = 0.5 * (xy_bounds.lo.y() + xy_bounds.hi.y());
    const double cz = 0.5 * (z_lo + z_hi);
    const double hx = 0.5 * xy_bounds.extent_x();
    const double hy = 0.5 * xy_bounds.extent_y();
    const double hz = 0.5 * std::max(z_hi - z_lo, 1e-9);
    return Vec3<S>(S((double(p.x()) - cx) / hx), S((double(p.y()) - cy) / hy),
                   S((double(p.z()) - cz) / hz));
  }

  /// Assemble the network input for one sample.
  VecX<S> make_input(const Vec3<S>& p_world, const VecX<S>& features,
                     const Vec3<S>& raw_normal, const Vec3<S>& view) const {
    VecX<S> in(input_dim());
    in.template segment<3>(0) = rescale_position(p_world);
    in.segment(kPosDim, feature_dim) = features;
    in.template segment<3>(kPosDim + feature_dim) = raw_normal.normalized();
    in.segment(kPosDim + feature_dim + kNormalDim, kShDim) = sh_encode(view);
    return in;
  }

  MatX<S> forward(const MatX<S>& inputs, MlpSaved<S>* saved = nullptr) const {
    return mlp_forward(mlp, inputs, saved);
  }
};

/// Gradient of dL/d(unit normal) back to the raw normal via the normalization
/// Jacobian (I - u u^T)/|n|.
template <typename S>
Vec3<S> unit_normal_backward(const Vec3<S>& raw_normal, const Vec3<S>& d_unit) {
  const S len = raw_normal.norm();
  const Vec3<S> u = raw_normal / len;
  return (d_unit - u * u.dot(d_unit)) / len;
}

}  // namespace flsmap
