#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "flsmap/rng.hpp"
#include "flsmap/types.hpp"

namespace flsmap {

/// Multi-resolution 2D feature grid. Levels coarse enough to be collision-free
/// get a dense table; finer levels share a hashed table of `table_size` entries.
struct HashGridConfig {
  int levels = 15;
  int table_size = 1 << 15;  // entries per hashed level, power of two
  int features = 2;          // per entry
  int n_min = 16;
  int n_max = 1024;
  Bounds2d bounds{};

  double growth() const {
    if (levels <= 1) return 1.0;
    return std::exp((std::log(double(n_max)) - std::log(double(n_min))) /
                    double(levels - 1));
  }
  int level_resolution(int level) const {
    return int(std::floor(double(n_min) * std::pow(growth(), level)));
  }
  bool level_dense(int level) const {
    const int64_t n = level_resolution(level) + 1;
    return n * n <= int64_t(table_size);
  }
  int level_entries(int level) const {
    const int64_t n = level_resolution(level) + 1;
    return level_dense(level) ? int(n * n) : table_size;
  }
  int feature_dim() const { return levels * features; }

  void validate() const {
    if (levels < 1) throw std::invalid_argument("hash grid: levels must be >= 1");
    if (table_size < 1 || (table_size & (table_size - 1)) != 0)
      throw std::invalid_argument("hash grid: table_size must be a power of two");
    if (n_min < 1 || (levels > 1 && n_max < n_min))
      throw std::invalid_argument("hash grid: need 1 <= n_min <= n_max");
    if (!(bounds.lo.x() < bounds.hi.x() && bounds.lo.y() < bounds.hi.y()))
      throw std::invalid_argument("hash grid: degenerate domain bounds");
  }
};

/// Spatial hash of a 2D integer cell, masked to a power-of-two table.
inline uint32_t hash_index(uint32_t ix, uint32_t iy, uint32_t table_size) {
  return (ix ^ (iy * 2654435761u)) & (table_size - 1u);
}

/// Per-point per-level interpolation record kept by the forward pass; enough
/// to replay table scatter, the position Jacobian, and its weight-derivatives.
template <typename S>
struct EncodeSaved {
  int n = 0;
  int levels = 0;
  int active_levels = 0;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> idx;  // (4*levels) x n
  MatX<S> aux;  // (4*levels) x n, rows per level: fx, fy, sx, sy

  static constexpr int kCorners = 4;
};

template <typename S>
struct HashGrid {
  HashGridConfig cfg;
  MatX<S> tables;  // features x total_entries
  MatX<S> grad;    // same shape
  std::vector<int> level_offset;  // entry offset of each level
  std::vector<int> level_res;

  void init(const HashGridConfig& c, Rng& rng, S scale = S(1e-4)) {
    c.validate();
    cfg = c;
    level_offset.assign(cfg.levels + 1, 0);
    level_res.assign(cfg.levels, 0);
    for (int l = 0; l < cfg.levels; ++l) {
      level_res[l] = cfg.level_resolution(l);
      level_offset[l + 1] = level_offset[l] + cfg.level_entries(l);
    }
    tables.setZero(cfg.features, level_offset.back());
    for (Eigen::Index i = 0; i < tables.size(); ++i)
      tables.data()[i] = S(rng.uniform(-double(scale), double(scale)));
    grad.setZero(cfg.features, level_offset.back());
  }

  int total_entries() const { return level_offset.empty() ? 0 : level_offset.back(); }

  int entry_index(int level, int cx, int cy) const {
    const int res = level_res[level];
    if (cfg.level_dense(level)) return level_offset[level] + cx + cy * (res + 1);
    return level_offset[level] +
           int(hash_index(uint32_t(cx), uint32_t(cy), uint32_t(cfg.table_size)));
  }
};

/// Bilinear corner weights from fractional cell coordinates.
/// Corner order: (0,0), (1,0), (0,1), (1,1).
template <typename S>
inline void bilinear_weights(S fx, S fy, S w[4]) {
  w[0] = (S(1) - fx) * (S(1) - fy);
  w[1] = fx * (S(1) - fy);
  w[2] = (S(1) - fx) * fy;
  w[3] = fx * fy;
}

template <typename S>
inline void bilinear_weight_gradients(S fx, S fy, S sx, S sy, S dwdx[4], S dwdy[4]) {
  dwdx[0] = -(S(1) - fy) * sx;
  dwdy[0] = -(S(1) - fx) * sy;
  dwdx[1] = (S(1) - fy) * sx;
  dwdy[1] = -fx * sy;
  dwdx[2] = -fy * sx;
  dwdy[2] = (S(1) - fx) * sy;
  dwdx[3] = fy * sx;
  dwdy[3] = fx * sy;
}

/// Encode a batch of 2D points. Output has feature_dim rows; rows of levels at
/// or above `active_levels` are zeroed (progressive training) and take no part
/// in any backward pass. Out-of-domain points clamp to the domain box.
template <typename S>
void encode_batch(const HashGrid<S>& g, const MatX<S>& points, int active_levels,
                  MatX<S>& features, EncodeSaved<S>& saved) {
  const int n = int(points.cols());
  const int L = g.cfg.levels;
  const int F = g.cfg.features;
  if (active_levels < 0 || active_levels > L) active_levels = L;

  features.setZero(L * F, n);
  saved.n = n;
  saved.levels = L;
  saved.active_levels = active_levels;
  saved.idx.setZero(4 * L, n);
  saved.aux.setZero(4 * L, n);

  const double x0 = g.cfg.bounds.lo.x(), y0 = g.cfg.bounds.lo.y();
  const double ex = g.cfg.bounds.extent_x(), ey = g.cfg.bounds.extent_y();

  for (int i = 0; i < n; ++i) {
    double ux = (double(points(0, i)) - x0) / ex;
    double uy = (double(points(1, i)) - y0) / ey;
    const bool cx_clamped = ux < 0.0 || ux > 1.0;
    const bool cy_clamped = uy < 0.0 || uy > 1.0;
    ux = std::min(std::max(ux, 0.0), 1.0);
    uy = std::min(std::max(uy, 0.0), 1.0);

    for (int l = 0; l < active_levels; ++l) {
      const int res = g.level_res[l];
      const double gx = ux * res, gy = uy * res;
      int cx = std::min(int(gx), res - 1);
      int cy = std::min(int(gy), res - 1);
      const S fx = S(gx - cx), fy = S(gy - cy);
      const S sx = cx_clamped ? S(0) : S(res / ex);
      const S sy = cy_clamped ? S(0) : S(res / ey);

      int* id = &saved.idx(4 * l, i);
      id[0] = g.entry_index(l, cx, cy);
      id[1] = g.entry_index(l, cx + 1, cy);
      id[2] = g.entry_index(l, cx, cy + 1);
      id[3] = g.entry_index(l, cx + 1, cy + 1);
      saved.aux(4 * l + 0, i) = fx;
      saved.aux(4 * l + 1, i) = fy;
      saved.aux(4 * l + 2, i) = sx;
      saved.aux(4 * l + 3, i) = sy;

      S w[4];
      bilinear_weights(fx, fy, w);
      auto dst = features.col(i).segment(l * F, F);
      for (int c = 0; c < 4; ++c) dst += w[c] * g.tables.col(id[c]);
    }
  }
}

/// Convenience single-point encode.
template <typename S>
VecX<S> encode_position(const HashGrid<S>& g, const Vec2<S>& p,
                        int active_levels = -1) {
  MatX<S> pts(2, 1);
  pts.col(0) = p;
  MatX<S> feats;
  EncodeSaved<S> saved;
  encode_batch(g, pts, active_levels, feats, saved);
  return feats.col(0);
}

/// Scatter feature gradients into the table gradient accumulator; optionally
/// also produce the gradient w.r.t. the input positions.
template <typename S>
void encode_backward(HashGrid<S>& g, const EncodeSaved<S>& saved,
                     const MatX<S>& d_features, MatX<S>* d_points = nullptr) {
  const int F = g.cfg.features;
  if (d_points) d_points->setZero(2, saved.n);
  for (int i = 0; i < saved.n; ++i) {
    for (int l = 0; l < saved.active_levels; ++l) {
      const S fx = saved.aux(4 * l + 0, i), fy = saved.aux(4 * l + 1, i);
      const S sx = saved.aux(4 * l + 2, i), sy = saved.aux(4 * l + 3, i);
      S w[4], dwdx[4], dwdy[4];
      bilinear_weights(fx, fy, w);
      const auto up = d_features.col(i).segment(l * F, F);
      for (int c = 0; c < 4; ++c) {
        const int id = saved.idx(4 * l + c, i);
        g.grad.col(id) += w[c] * up;
      }
      if (d_points) {
        bilinear_weight_gradients(fx, fy, sx, sy, dwdx, dwdy);
        S gx = S(0), gy = S(0);
        for (int c = 0; c < 4; ++c) {
          const int id = saved.idx(4 * l + c, i);
          const S dot = g.tables.col(id).dot(up);
          gx += dwdx[c] * dot;
          gy += dwdy[c] * dot;
        }
        (*d_points)(0, i) += gx;
        (*d_points)(1, i) += gy;
      }
    }
  }
}

/// Spatial gradient of a scalar head through the encoding: J^T g_e where J is
/// the feature Jacobian w.r.t. position and g_e the head's feature gradient.
template <typename S>
Vec2<S> encode_spatial_gradient(const HashGrid<S>& g, const EncodeSaved<S>& saved,
                                int col, const VecX<S>& g_e) {
  const int F = g.cfg.features;
  S gx = S(0), gy = S(0);
  for (int l = 0; l < saved.active_levels; ++l) {
    const S fx = saved.aux(4 * l + 0, col), fy = saved.aux(4 * l + 1, col);
    const S sx = saved.aux(4 * l + 2, col), sy = saved.aux(4 * l + 3, col);
    S dwdx[4], dwdy[4];
    bilinear_weight_gradients(fx, fy, sx, sy, dwdx, dwdy);
    const auto ge = g_e.segment(l * F, F);
    for (int c = 0; c < 4; ++c) {
      const S dot = g.tables.col(saved.idx(4 * l + c, col)).dot(ge);
      gx += dwdx[c] * dot;
      gy += dwdy[c] * dot;
    }
  }
  return Vec2<S>(gx, gy);
}

/// Feature-space tangent J·w of a position tangent w (forward-mode through the
/// interpolation weights).
template <typename S>
VecX<S> encode_tangent(const HashGrid<S>& g, const EncodeSaved<S>& saved, int col,
                       const Vec2<S>& w) {
  const int F = g.cfg.features;
  VecX<S> v = VecX<S>::Zero(saved.levels * F);
  for (int l = 0; l < saved.active_levels; ++l) {
    const S fx = saved.aux(4 * l + 0, col), fy = saved.aux(4 * l + 1, col);
    const S sx = saved.aux(4 * l + 2, col), sy = saved.aux(4 * l + 3, col);
    S dwdx[4], dwdy[4];
    bilinear_weight_gradients(fx, fy, sx, sy, dwdx, dwdy);
    for (int c = 0; c < 4; ++c) {
      const S dw = dwdx[c] * w.x() + dwdy[c] * w.y();
      v.segment(l * F, F) += dw * g.tables.col(saved.idx(4 * l + c, col));
    }
  }
  return v;
}

/// Backward of (w · J^T g_e) w.r.t. the table entries, g_e held fixed: the
/// second-order path that carries normal/slope losses into the tables.
template <typename S>
void encode_tangent_backward(HashGrid<S>& g, const EncodeSaved<S>& saved, int col,
                             const Vec2<S>& w, const VecX<S>& g_e) {
  const int F = g.cfg.features;
  for (int l = 0; l < saved.active_levels; ++l) {
    const S fx = saved.aux(4 * l + 0, col), fy = saved.aux(4 * l + 1, col);
    const S sx = saved.aux(4 * l + 2, col), sy = saved.aux(4 * l + 3, col);
    S dwdx[4], dwdy[4];
    bilinear_weight_gradients(fx, fy, sx, sy, dwdx, dwdy);
    const auto ge = g_e.segment(l * F, F);
    for (int c = 0; c < 4; ++c) {
      const S dw = dwdx[c] * w.x() + dwdy[c] * w.y();
      g.grad.col(saved.idx(4 * l + c, col)) += dw * ge;
    }
  }
}

}  // namespace flsmap
