#pragma once

#include <cmath>
#include <stdexcept>

#include "flsmap/types.hpp"

namespace flsmap {

/// Rigid transform sonar->world. World frame is z-up; heights are measured
/// along +z, so a down-tilted sonar looks at negative elevation angles.
template <typename S>
struct Pose {
  Mat3<S> rotation = Mat3<S>::Identity();
  Vec3<S> translation = Vec3<S>::Zero();

  bool is_valid(S tol = S(1e-9)) const {
    const Mat3<S> e = rotation.transpose() * rotation - Mat3<S>::Identity();
    return e.cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - S(1)) <= tol;
  }

  static Pose from_quaternion(const Vec3<S>& t, S qw, S qx, S qy, S qz) {
    Eigen::Quaternion<S> q(qw, qx, qy, qz);
    q.normalize();
    return Pose{q.toRotationMatrix(), t};
  }

  template <typename T>
  Pose<T> cast() const {
    return Pose<T>{rotation.template cast<T>(), translation.template cast<T>()};
  }
};

/// A 3D point in the sonar's spherical coordinates: range r [m], azimuth
/// theta [rad] (positive toward +y of the sonar frame), elevation phi [rad]
/// (positive up; depression is negative).
template <typename S>
struct PolarPoint {
  S r = S(0);
  S theta = S(0);
  S phi = S(0);
};

struct SonarIntrinsics {
  double r_min = 1.0;
  double r_max = 30.0;
  double hfov = 2.0 * M_PI / 3.0;  // radians
  double phi_min = -25.0 * M_PI / 180.0;
  double phi_max = -5.0 * M_PI / 180.0;
  int n_beams = 256;
  int n_bins = 256;

  bool is_valid() const {
    return r_min < r_max && phi_min < phi_max && n_beams >= 1 && n_bins >= 1 &&
           hfov > 0.0;
  }
  double bin_width() const { return (r_max - r_min) / n_bins; }
  double beam_width() const { return hfov / n_beams; }
};

template <typename S>
Vec3<S> polar_to_local(const PolarPoint<S>& p) {
  const S cp = std::cos(p.phi);
  return Vec3<S>(p.r * std::cos(p.theta) * cp, p.r * std::sin(p.theta) * cp,
                 p.r * std::sin(p.phi));
}

template <typename S>
Vec3<S> local_to_world(const Vec3<S>& v, const Pose<S>& pose) {
  return pose.rotation * v + pose.translation;
}

template <typename S>
Vec3<S> world_to_local(const Vec3<S>& v, const Pose<S>& pose) {
  return pose.rotation.transpose() * (v - pose.translation);
}

/// Center (range, azimuth) of an image pixel. Bins index range, beams azimuth.
inline std::pair<double, double> pixel_to_polar(const SonarIntrinsics& k,
                                                int bin, int beam) {
  if (bin < 0 || bin >= k.n_bins || beam < 0 || beam >= k.n_beams)
    throw std::out_of_range("pixel_to_polar: bin/beam index out of range");
  const double r = k.r_min + (bin + 0.5) * (k.r_max - k.r_min) / k.n_bins;
  const double theta = -0.5 * k.hfov + (beam + 0.5) * k.hfov / k.n_beams;
  return {r, theta};
}

/// Rotation about +z (yaw), then about +y so that positive pitch_down tilts
/// the sonar's forward axis below the horizon.
template <typename S>
Mat3<S> yaw_pitch_rotation(S yaw, S pitch_down) {
  Mat3<S> rz, ry;
  const S cy = std::cos(yaw), sy = std::sin(yaw);
  const S cp = std::cos(pitch_down), sp = std::sin(pitch_down);
  rz << cy, -sy, 0, sy, cy, 0, 0, 0, 1;
  ry << cp, 0, sp, 0, 1, 0, -sp, 0, cp;
  return rz * ry;
}

}  // namespace flsmap
