#pragma once

#include <stdexcept>

#include "flsmap/field.hpp"
#include "flsmap/types.hpp"

namespace flsmap {

/// Mean absolute intensity error over a pixel batch.
template <typename S>
S loss_intensity(const VecX<S>& predicted, const VecX<S>& observed) {
  if (predicted.size() == 0 || predicted.size() != observed.size())
    throw std::invalid_argument("loss_intensity: empty or mismatched batch");
  return (predicted - observed).cwiseAbs().mean();
}

/// Mean squared deviation of normal length from 1 over a batch of raw normals.
template <typename S>
S loss_regularizer(const MatX<S>& normals) {
  if (normals.cols() == 0 || normals.rows() != 3)
    throw std::invalid_argument("loss_regularizer: empty batch or bad shape");
  S acc = S(0);
  for (Eigen::Index i = 0; i < normals.cols(); ++i) {
    const S d = normals.col(i).norm() - S(1);
    acc += d * d;
  }
  return acc / S(normals.cols());
}

/// Upstream on each raw normal for the regularizer, already weighted by
/// weight/count: d/dn mean (||n||-1)^2.
template <typename S>
MatX<S> loss_regularizer_backward(const MatX<S>& normals, S weight_over_count) {
  MatX<S> d(3, normals.cols());
  for (Eigen::Index i = 0; i < normals.cols(); ++i) {
    const S len = normals.col(i).norm();
    d.col(i) = (S(2) * (len - S(1)) / len * weight_over_count) * normals.col(i);
  }
  return d;
}

/// Mean |z - N(x,y)| over a set of surface points (altimeter or prior cloud).
/// If `field_out` is given, the L1 gradient is pushed into the field scaled by
/// weight/count.
template <typename S>
S loss_altimeter(const MatX<S>& points, const HeightField<S>& hf,
                 HeightField<S>* field_out = nullptr, S weight = S(1)) {
  const int n = int(points.cols());
  if (n == 0 || points.rows() != 3)
    throw std::invalid_argument("loss_altimeter: empty point set or bad shape");
  HeightSaved<S> saved;
  MatX<S> xy = points.topRows(2);
  const VecX<S> h = field_out ? hf.forward(xy, &saved) : hf.forward(xy);
  const VecX<S> delta = points.row(2).transpose() - h;
  if (field_out) {
    VecX<S> dh(n);
    const S c = weight / S(n);
    for (int i = 0; i < n; ++i)
      dh[i] = delta[i] > S(0) ? -c : (delta[i] < S(0) ? c : S(0));
    field_out->backward(saved, dh);
  }
  return delta.cwiseAbs().mean();
}

/// Weighted variant: sum w|delta| / sum w. Unit weights reduce it to
/// loss_altimeter. An empty weight vector also means unit weights.
template <typename S>
S loss_altimeter_weighted(const MatX<S>& points, const VecX<S>& weights,
                          const HeightField<S>& hf, HeightField<S>* field_out = nullptr,
                          S loss_weight = S(1)) {
  const int n = int(points.cols());
  if (n == 0 || points.rows() != 3)
    throw std::invalid_argument("loss_altimeter: empty point set or bad shape");
  if (weights.size() != 0 && weights.size() != n)
    throw std::invalid_argument("loss_altimeter: weight count mismatch");
  const bool unit = weights.size() == 0;
  const S wsum = unit ? S(n) : weights.sum();
  if (!(wsum > S(0))) throw std::invalid_argument("loss_altimeter: zero total weight");
  HeightSaved<S> saved;
  MatX<S> xy = points.topRows(2);
  const VecX<S> h = field_out ? hf.forward(xy, &saved) : hf.forward(xy);
  const VecX<S> delta = points.row(2).transpose() - h;
  S acc = S(0);
  for (int i = 0; i < n; ++i) acc += (unit ? S(1) : weights[i]) * std::abs(delta[i]);
  if (field_out) {
    VecX<S> dh(n);
    for (int i = 0; i < n; ++i) {
      const S c = loss_weight * (unit ? S(1) : weights[i]) / wsum;
      dh[i] = delta[i] > S(0) ? -c : (delta[i] < S(0) ? c : S(0));
    }
    field_out->backward(saved, dh);
  }
  return acc / wsum;
}

}  // namespace flsmap
