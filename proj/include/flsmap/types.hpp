#pragma once

#include <Eigen/Dense>

namespace flsmap {

template <typename S> using Vec2 = Eigen::Matrix<S, 2, 1>;
template <typename S> using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S> using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S> using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S> using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S> using ArrX = Eigen::Array<S, Eigen::Dynamic, 1>;

/// Axis-aligned 2D box in world meters (survey domain).
template <typename S>
struct Bounds2 {
  Vec2<S> lo{S(0), S(0)};
  Vec2<S> hi{S(1), S(1)};

  S extent_x() const { return hi.x() - lo.x(); }
  S extent_y() const { return hi.y() - lo.y(); }
  bool contains(const Vec2<S>& p) const {
    return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
  }
  template <typename T>
  Bounds2<T> cast() const {
    return Bounds2<T>{lo.template cast<T>(), hi.template cast<T>()};
  }
};

using Bounds2d = Bounds2<double>;

}  // namespace flsmap
