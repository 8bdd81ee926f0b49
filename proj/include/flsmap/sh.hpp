#pragma once

#include <cmath>

#include "flsmap/types.hpp"

namespace flsmap {

inline constexpr int kShDim = 16;  // real SH basis, degrees 0..3

/// Real spherical harmonics basis evaluated at a direction. Non-unit input is
/// normalized first. Layout: degree 0, then degrees 1..3 in m = -l..l order.
template <typename S>
Eigen::Matrix<S, kShDim, 1> sh_encode(Vec3<S> v) {
  const S n = v.norm();
  if (n > S(0)) v /= n;
  const S x = v.x(), y = v.y(), z = v.z();
  const S xx = x * x, yy = y * y, zz = z * z;

  Eigen::Matrix<S, kShDim, 1> out;
  out[0] = S(0.28209479177387814);
  out[1] = S(0.4886025119029199) * y;
  out[2] = S(0.4886025119029199) * z;
  out[3] = S(0.4886025119029199) * x;
  out[4] = S(1.0925484305920792) * x * y;
  out[5] = S(1.0925484305920792) * y * z;
  out[6] = S(0.9461746957575601) * zz - S(0.31539156525252005);
  out[7] = S(1.0925484305920792) * x * z;
  out[8] = S(0.5462742152960396) * (xx - yy);
  out[9] = S(0.5900435899266435) * y * (S(3) * xx - yy);
  out[10] = S(2.890611442640554) * x * y * z;
  out[11] = S(0.4570457994644658) * y * (S(5) * zz - S(1));
  out[12] = S(0.3731763325901154) * z * (S(5) * zz - S(3));
  out[13] = S(0.4570457994644658) * x * (S(5) * zz - S(1));
  out[14] = S(1.445305721320277) * z * (xx - yy);
  out[15] = S(0.5900435899266435) * x * (xx - S(3) * yy);
  return out;
}

/// Jacobian of sh_encode w.r.t. the raw (possibly non-unit) direction,
/// including the normalization step.
template <typename S>
Eigen::Matrix<S, kShDim, 3> sh_jacobian(const Vec3<S>& v) {
  const S n = v.norm();
  Vec3<S> u = v;
  if (n > S(0)) u /= n;
  const S x = u.x(), y = u.y(), z = u.z();
  const S xx = x * x, yy = y * y, zz = z * z;

  Eigen::Matrix<S, kShDim, 3> j;  // w.r.t. the unit direction
  j.setZero();
  j(1, 1) = S(0.4886025119029199);
  j(2, 2) = S(0.4886025119029199);
  j(3, 0) = S(0.4886025119029199);
  j(4, 0) = S(1.0925484305920792) * y;
  j(4, 1) = S(1.0925484305920792) * x;
  j(5, 1) = S(1.0925484305920792) * z;
  j(5, 2) = S(1.0925484305920792) * y;
  j(6, 2) = S(2) * S(0.9461746957575601) * z;
  j(7, 0) = S(1.0925484305920792) * z;
  j(7, 2) = S(1.0925484305920792) * x;
  j(8, 0) = S(2) * S(0.5462742152960396) * x;
  j(8, 1) = S(-2) * S(0.5462742152960396) * y;
  j(9, 0) = S(0.5900435899266435) * S(6) * x * y;
  j(9, 1) = S(0.5900435899266435) * (S(3) * xx - S(3) * yy);
  j(10, 0) = S(2.890611442640554) * y * z;
  j(10, 1) = S(2.890611442640554) * x * z;
  j(10, 2) = S(2.890611442640554) * x * y;
  j(11, 1) = S(0.4570457994644658) * (S(5) * zz - S(1));
  j(11, 2) = S(0.4570457994644658) * S(10) * y * z;
  j(12, 2) = S(0.3731763325901154) * (S(15) * zz - S(3));
  j(13, 0) = S(0.4570457994644658) * (S(5) * zz - S(1));
  j(13, 2) = S(0.4570457994644658) * S(10) * x * z;
  j(14, 0) = S(1.445305721320277) * S(2) * x * z;
  j(14, 1) = S(-1.445305721320277) * S(2) * y * z;
  j(14, 2) = S(1.445305721320277) * (xx - yy);
  j(15, 0) = S(0.5900435899266435) * (S(3) * xx - S(3) * yy);
  j(15, 1) = S(-0.5900435899266435) * S(6) * x * y;

  if (n <= S(0)) return j;
  // d(unit)/d(raw) = (I - u u^T) / n
  const Mat3<S> dudv = (Mat3<S>::Identity() - u * u.transpose()) / n;
  return j * dudv;
}

}  // namespace flsmap
