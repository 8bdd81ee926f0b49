#pragma once

#include <cmath>
#include <vector>

#include "flsmap/param_store.hpp"
#include "flsmap/types.hpp"

namespace flsmap {

/// Separable kernel-density beam pattern beta(theta, phi) =
/// max(beta_theta(theta) * beta_phi(phi), 0). Kernel centers are fixed and
/// evenly spread over each angular span; only the weights train. A disabled
/// pattern is the constant gain 1.
template <typename S>
struct BeamPattern {
  bool enabled = false;
  std::vector<double> theta_centers, phi_centers;
  double sigma_theta = 1.0, sigma_phi = 1.0;
  MatX<S> theta_weights, phi_weights;  // K x 1
  MatX<S> theta_grad, phi_grad;

  static std::vector<double> spread_centers(int k, double lo, double hi) {
    std::vector<double> c(k);
    if (k == 1) {
      c[0] = 0.5 * (lo + hi);
    } else {
      for (int i = 0; i < k; ++i) c[i] = lo + i * (hi - lo) / (k - 1);
    }
    return c;
  }

  void init(int k_theta, double theta_lo, double theta_hi, int k_phi, double phi_lo,
            double phi_hi, S initial_weight = S(1)) {
    enabled = true;
    theta_centers = spread_centers(k_theta, theta_lo, theta_hi);
    phi_centers = spread_centers(k_phi, phi_lo, phi_hi);
    sigma_theta = (theta_hi - theta_lo) / k_theta;
    sigma_phi = (phi_hi - phi_lo) / k_phi;
    theta_weights = MatX<S>::Constant(k_theta, 1, initial_weight);
    phi_weights = MatX<S>::Constant(k_phi, 1, initial_weight);
    theta_grad = MatX<S>::Zero(k_theta, 1);
    phi_grad = MatX<S>::Zero(k_phi, 1);
  }

  void register_params(ParamStore<S>& store) {
    if (!enabled) return;
    store.add("beam.theta", theta_weights, theta_grad);
    store.add("beam.phi", phi_weights, phi_grad);
  }

  static S kernel(double center, double sigma, S angle) {
    const S d = angle - S(center);
    return std::exp(-d * d / (S(2) * S(sigma) * S(sigma)));
  }

  S gain_theta(S theta) const {
    if (!enabled) return S(1);
    S g = S(0);
    for (size_t i = 0; i < theta_centers.size(); ++i)
      g += theta_weights(i, 0) * kernel(theta_centers[i], sigma_theta, theta);
    return g;
  }

  S gain_phi(S phi) const {
    if (!enabled) return S(1);
    S g = S(0);
    for (size_t i = 0; i < phi_centers.size(); ++i)
      g += phi_weights(i, 0) * kernel(phi_centers[i], sigma_phi, phi);
    return g;
  }

  /// Accumulate upstream gradients on the two factors at a query angle pair.
  /// The caller applies the clamp gate and the cross factor.
  void accumulate(S theta, S phi, S d_gain_theta, S d_gain_phi) {
    if (!enabled) return;
    for (size_t i = 0; i < theta_centers.size(); ++i)
      theta_grad(i, 0) += d_gain_theta * kernel(theta_centers[i], sigma_theta, theta);
    for (size_t i = 0; i < phi_centers.size(); ++i)
      phi_grad(i, 0) += d_gain_phi * kernel(phi_centers[i], sigma_phi, phi);
  }
};

/// Clamped separable gain; the renderer's per-arc-point weighting.
template <typename S>
S beam_gain(const BeamPattern<S>& bp, S theta, S phi) {
  return std::max(bp.gain_theta(theta) * bp.gain_phi(phi), S(0));
}

}  // namespace flsmap
