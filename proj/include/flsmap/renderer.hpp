#pragma once

#include <algorithm>
#include <vector>

#include "flsmap/beam_pattern.hpp"
#include "flsmap/field.hpp"
#include "flsmap/geometry.hpp"
#include "flsmap/rng.hpp"

namespace flsmap {

/// Numerically stable logistic of s*delta; exact for |s*delta| up to ~1e3.
template <typename S>
S sigmoid_phi(S delta, S s) {
  const S x = s * delta;
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

/// S-density: derivative of sigmoid_phi w.r.t. delta. Even in delta, peak s/4.
template <typename S>
S s_density(S delta, S s) {
  const S t = std::exp(-s * std::abs(delta));
  const S d = S(1) + t;
  return s * t / (d * d);
}

/// Trainable sharpness of the S-density, stored in log space.
template <typename S>
struct Sharpness {
  MatX<S> log_s{1, 1};
  MatX<S> grad{1, 1};

  explicit Sharpness(S init = S(20)) {
    log_s(0, 0) = std::log(init);
    grad(0, 0) = S(0);
  }
  S value() const { return std::exp(log_s(0, 0)); }
  void accumulate_ds(S ds) { grad(0, 0) += ds * value(); }
  void register_params(ParamStore<S>& store) { store.add("sharpness.log_s", log_s, grad); }
};

struct SamplingConfig {
  int n_arc_stratified = 15;
  int n_arc_importance = 15;
  int n_ray = 60;
  double phi_min = -25.0 * M_PI / 180.0;  // modeled vertical aperture
  double phi_max = -5.0 * M_PI / 180.0;
  double r_min_render = 0.5;  // skip the sensor near field

  int arc_samples() const { return n_arc_stratified + n_arc_importance; }
  void validate() const {
    if (n_arc_stratified < 1 || n_arc_importance < 0 || n_ray < 2)
      throw std::invalid_argument("sampling: counts out of range");
    if (!(phi_min < phi_max)) throw std::invalid_argument("sampling: phi range");
  }
};

/// One uniform draw per equal sub-interval of [phi_min, phi_max]; ascending.
template <typename S>
VecX<S> sample_arc_stratified(const SamplingConfig& cfg, Rng& rng) {
  const int n = cfg.n_arc_stratified;
  VecX<S> phis(n);
  const double w = (cfg.phi_max - cfg.phi_min) / n;
  for (int i = 0; i < n; ++i)
    phis[i] = S(cfg.phi_min + (i + rng.uniform()) * w);
  return phis;
}

/// Inverse-CDF draws from the piecewise-constant PDF over the stratification
/// bins, with bin mass proportional to the S-density of the bin's coarse
/// sample. Degenerates to uniform when every density is below 1e-12.
template <typename S>
VecX<S> sample_arc_importance(const VecX<S>& coarse_deltas, S s, int n,
                              double phi_lo, double phi_hi, Rng& rng) {
  const int bins = int(coarse_deltas.size());
  std::vector<double> cdf(bins + 1, 0.0);
  double total = 0.0;
  for (int i = 0; i < bins; ++i) {
    const double w = double(s_density(coarse_deltas[i], s));
    total += w;
    cdf[i + 1] = total;
  }
  if (!(total > 1e-12)) {
    for (int i = 0; i <= bins; ++i) cdf[i] = double(i) / bins;
    total = 1.0;
  }
  const double bw = (phi_hi - phi_lo) / bins;
  VecX<S> out(n);
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform() * total;
    int idx = int(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()) - 1;
    idx = std::min(std::max(idx, 0), bins - 1);
    const double lo = cdf[idx], hi = cdf[idx + 1];
    const double f = (hi > lo) ? (u - lo) / (hi - lo) : 0.5;
    out[k] = S(phi_lo + (idx + f) * bw);
  }
  return out;
}

/// Ranges of one acoustic ray: n-1 stratified samples in [r_lo, r) plus the
/// arc point exactly at the end. Strictly increasing.
template <typename S>
VecX<S> sample_ray_ranges(S r, int n, double r_lo, Rng* rng) {
  VecX<S> out(n);
  double lo = r_lo;
  if (!(double(r) > lo)) lo = 0.05 * double(r);
  const double w = (double(r) - lo) / (n - 1);
  for (int i = 0; i < n - 1; ++i) {
    const double u = rng ? rng->uniform() : 0.5;
    out[i] = S(lo + (i + u) * w);
  }
  out[n - 1] = r;
  return out;
}

/// Discrete opacity between consecutive ray samples (ratio of sigmoid drop).
template <typename S>
S opacity(S delta_i, S delta_next, S s) {
  const S a = sigmoid_phi(delta_i, s);
  const S b = sigmoid_phi(delta_next, s);
  const S d = std::max(a, S(1e-12));
  return std::max((a - b) / d, S(0));
}

/// Product of survival over the given alphas (those strictly before the
/// endpoint's own interval).
template <typename S>
S transmittance(const VecX<S>& alphas) {
  S t = S(1);
  for (Eigen::Index i = 0; i < alphas.size(); ++i) t *= S(1) - alphas[i];
  return t;
}

/// Fixed elevation/range sample positions for one pixel; rendering from a
/// frozen set of samples is what makes finite-difference checks well posed.
template <typename S>
struct ArcSamples {
  VecX<S> phis;    // M ascending
  MatX<S> ranges;  // n_ray x M, ascending per column, last row == pixel range
};

/// Hierarchical sampling for one pixel: stratified coarse pass, S-density
/// importance pass, merged and sorted, then per-arc-point ray ranges.
template <typename S>
ArcSamples<S> sample_pixel_arcs(const HeightField<S>& hf, const SamplingConfig& cfg,
                                S s, const Pose<S>& pose, S r, S theta, Rng& rng,
                                bool jitter_rays) {
  VecX<S> coarse = sample_arc_stratified<S>(cfg, rng);

  VecX<S> merged(cfg.arc_samples());
  merged.head(coarse.size()) = coarse;
  if (cfg.n_arc_importance > 0) {
    MatX<S> xy(2, coarse.size());
    VecX<S> z(coarse.size());
    for (int i = 0; i < coarse.size(); ++i) {
      const Vec3<S> p = local_to_world(polar_to_local(PolarPoint<S>{r, theta, coarse[i]}), pose);
      xy(0, i) = p.x();
      xy(1, i) = p.y();
      z[i] = p.z();
    }
    const VecX<S> h = hf.forward(xy);
    const VecX<S> deltas = z - h;
    merged.tail(cfg.n_arc_importance) = sample_arc_importance<S>(
        deltas, s, cfg.n_arc_importance, cfg.phi_min, cfg.phi_max, rng);
  }
  std::sort(merged.data(), merged.data() + merged.size());

  ArcSamples<S> out;
  out.phis = merged;
  out.ranges.resize(cfg.n_ray, merged.size());
  for (int k = 0; k < merged.size(); ++k)
    out.ranges.col(k) =
        sample_ray_ranges<S>(r, cfg.n_ray, cfg.r_min_render, jitter_rays ? &rng : nullptr);
  return out;
}

/// One pixel of a render group.
template <typename S>
struct PixelRequest {
  S r = S(1);
  S theta = S(0);
  uint64_t seed = 0;  // per-pixel sampling stream
};

/// All retained state of a batched forward render over pixels sharing a pose.
/// Arc point j of pixel k lives at flat index k*M + j; its ray samples occupy
/// columns [ (k*M+j)*n_ray, ... ) of the ray batch.
template <typename S>
struct RenderGroup {
  SamplingConfig cfg;
  Pose<S> pose;
  std::vector<PixelRequest<S>> pixels;
  S s = S(20);

  VecX<S> phis;         // arc elevations, n_pixels*M
  MatX<S> ray_xy;       // 2 x (n_pixels*M*n_ray)
  VecX<S> ray_z;        // z of every ray sample
  VecX<S> ray_h;        // field height at every ray sample
  VecX<S> ray_delta;    // z - h
  VecX<S> ray_sigmoid;  // sigmoid_phi(delta, s)
  MatX<S> alphas;       // (n_ray-1) x (n_pixels*M), consecutive-pair opacities
  VecX<S> trans;        // endpoint transmittance per arc point
  VecX<S> alpha_end;    // endpoint opacity per arc point
  HeightSaved<S> ray_saved;
  bool has_saved = false;

  FieldQueryBatch<S> endpoints;  // n_pixels*M columns
  MatX<S> view_dirs;             // 3 x (n_pixels*M)
  MatX<S> rad_inputs;
  MlpSaved<S> rad_saved;
  VecX<S> radiance;  // per arc point

  VecX<S> beta;       // per arc point (clamped product)
  VecX<S> beta_th;    // horizontal factor per arc point
  VecX<S> beta_ph;    // vertical factor per arc point
  VecX<S> intensity;  // per pixel

  int n_pixels() const { return int(pixels.size()); }
  int arc_count() const { return cfg.arc_samples(); }
};

/// Differentiable evaluation from frozen sample positions.
template <typename S>
RenderGroup<S> render_group_from_samples(const HeightField<S>& hf,
                                         const RadianceField<S>& rf,
                                         const BeamPattern<S>& bp,
                                         const SamplingConfig& cfg, S s,
                                         const Pose<S>& pose,
                                         const std::vector<PixelRequest<S>>& pixels,
                                         const std::vector<ArcSamples<S>>& samples,
                                         bool save_for_backward) {
  RenderGroup<S> g;
  g.cfg = cfg;
  g.pose = pose;
  g.pixels = pixels;
  g.s = s;
  const int P = int(pixels.size());
  const int M = cfg.arc_samples();
  const int NR = cfg.n_ray;
  const int A = P * M;

  g.phis.resize(A);
  g.ray_xy.resize(2, A * NR);
  g.ray_z.resize(A * NR);
  MatX<S> end_pts(3, A);
  g.view_dirs.resize(3, A);

  for (int k = 0; k < P; ++k) {
    const auto& sm = samples[k];
    for (int j = 0; j < M; ++j) {
      const int a = k * M + j;
      g.phis[a] = sm.phis[j];
      for (int i = 0; i < NR; ++i) {
        const Vec3<S> p = local_to_world(
            polar_to_local(PolarPoint<S>{sm.ranges(i, j), pixels[k].theta, sm.phis[j]}),
            pose);
        const int col = a * NR + i;
        g.ray_xy(0, col) = p.x();
        g.ray_xy(1, col) = p.y();
        g.ray_z[col] = p.z();
        if (i == NR - 1) {
          end_pts.col(a) = p;
          g.view_dirs.col(a) = (p - pose.translation).normalized();
        }
      }
    }
  }

  // Heights and vertical signed distances along every ray.
  g.ray_h = hf.forward(g.ray_xy, save_for_backward ? &g.ray_saved : nullptr);
  g.has_saved = save_for_backward;
  g.ray_delta = g.ray_z - g.ray_h;
  g.ray_sigmoid.resize(A * NR);
  for (int i = 0; i < A * NR; ++i) g.ray_sigmoid[i] = sigmoid_phi(g.ray_delta[i], s);

  g.alphas.resize(NR - 1, A);
  g.trans.resize(A);
  g.alpha_end.resize(A);
  for (int a = 0; a < A; ++a) {
    S t = S(1);
    for (int i = 0; i < NR - 1; ++i) {
      const S num = g.ray_sigmoid[a * NR + i] - g.ray_sigmoid[a * NR + i + 1];
      const S den = std::max(g.ray_sigmoid[a * NR + i], S(1e-12));
      const S al = std::max(num / den, S(0));
      g.alphas(i, a) = al;
      if (i < NR - 2) t *= S(1) - al;
    }
    g.trans[a] = t;
    g.alpha_end[a] = g.alphas(NR - 2, a);
  }

  // Endpoint surface probes and radiance.
  g.endpoints = query_delta_normal(hf, end_pts);
  g.rad_inputs.resize(rf.input_dim(), A);
  for (int a = 0; a < A; ++a)
    g.rad_inputs.col(a) =
        rf.make_input(Vec3<S>(end_pts.col(a)), VecX<S>(g.endpoints.features.col(a)),
                      Vec3<S>(g.endpoints.normal.col(a)), Vec3<S>(g.view_dirs.col(a)));
  g.radiance =
      rf.forward(g.rad_inputs, save_for_backward ? &g.rad_saved : nullptr).row(0);

  // Beam gains and the rendered intensity.
  g.beta.resize(A);
  g.beta_th.resize(A);
  g.beta_ph.resize(A);
  g.intensity.setZero(P);
  for (int k = 0; k < P; ++k) {
    const S bt = bp.gain_theta(pixels[k].theta);
    for (int j = 0; j < M; ++j) {
      const int a = k * M + j;
      const S bph = bp.gain_phi(g.phis[a]);
      g.beta_th[a] = bt;
      g.beta_ph[a] = bph;
      g.beta[a] = std::max(bt * bph, S(0));
      g.intensity[k] += g.beta[a] * g.trans[a] * g.alpha_end[a] * g.radiance[a];
    }
  }
  return g;
}

/// Hierarchical sampling + differentiable evaluation for a batch of pixels
/// sharing one pose. Per-pixel RNG streams make the result independent of how
/// pixels are grouped into batches.
template <typename S>
RenderGroup<S> render_group(const HeightField<S>& hf, const RadianceField<S>& rf,
                            const BeamPattern<S>& bp, const SamplingConfig& cfg,
                            S s, const Pose<S>& pose,
                            const std::vector<PixelRequest<S>>& pixels,
                            bool jitter_rays, bool save_for_backward) {
  std::vector<ArcSamples<S>> samples(pixels.size());
  for (size_t k = 0; k < pixels.size(); ++k) {
    Rng rng(pixels[k].seed);
    samples[k] = sample_pixel_arcs(hf, cfg, s, pose, pixels[k].r, pixels[k].theta,
                                   rng, jitter_rays);
  }
  return render_group_from_samples(hf, rf, bp, cfg, s, pose, pixels, samples,
                                   save_for_backward);
}

/// Reverse pass over a saved render group. Sample positions are constants.
/// d_intensity: one upstream per pixel. d_normal_extra (3 x A, optional) adds
/// upstream on the raw endpoint normals (the smoothness regularizer's path).
template <typename S>
void render_group_backward(RenderGroup<S>& g, HeightField<S>& hf, RadianceField<S>& rf,
                           BeamPattern<S>& bp, Sharpness<S>& sharp,
                           const VecX<S>& d_intensity,
                           const MatX<S>* d_normal_extra = nullptr) {
  if (!g.has_saved) throw std::logic_error("render_group_backward: no saved state");
  const int P = g.n_pixels();
  const int M = g.arc_count();
  const int NR = g.cfg.n_ray;
  const int A = P * M;
  const S s = g.s;

  MatX<S> d_rad = MatX<S>::Zero(1, A);
  VecX<S> d_sigmoid = VecX<S>::Zero(A * NR);
  S ds_total = S(0);

  for (int k = 0; k < P; ++k) {
    const S u = d_intensity[k];
    if (u == S(0)) continue;
    for (int j = 0; j < M; ++j) {
      const int a = k * M + j;
      const S w = g.trans[a] * g.alpha_end[a];
      const S contrib_wo_beta = w * g.radiance[a];

      // Beam pattern path (clamped product).
      if (g.beta_th[a] * g.beta_ph[a] > S(0)) {
        bp.accumulate(g.pixels[k].theta, g.phis[a], u * contrib_wo_beta * g.beta_ph[a],
                      u * contrib_wo_beta * g.beta_th[a]);
      }

      // Radiance path.
      d_rad(0, a) += u * g.beta[a] * w;

      // Opacity / transmittance path.
      const S d_alpha_end = u * g.beta[a] * g.trans[a] * g.radiance[a];
      const S d_trans = u * g.beta[a] * g.alpha_end[a] * g.radiance[a];

      VecX<S> d_alpha = VecX<S>::Zero(NR - 1);
      d_alpha[NR - 2] = d_alpha_end;
      if (NR > 2 && d_trans != S(0)) {
        // d(prod)/d(alpha_i) = -prod of the other survival factors.
        VecX<S> pre(NR - 2), suf(NR - 2);
        S acc = S(1);
        for (int i = 0; i < NR - 2; ++i) {
          pre[i] = acc;
          acc *= S(1) - g.alphas(i, a);
        }
        acc = S(1);
        for (int i = NR - 3; i >= 0; --i) {
          suf[i] = acc;
          acc *= S(1) - g.alphas(i, a);
        }
        for (int i = 0; i < NR - 2; ++i)
          d_alpha[i] -= d_trans * pre[i] * suf[i];
      }

      for (int i = 0; i < NR - 1; ++i) {
        const S da = d_alpha[i];
        if (da == S(0)) continue;
        const S phi_i = g.ray_sigmoid[a * NR + i];
        const S phi_n = g.ray_sigmoid[a * NR + i + 1];
        if (phi_i <= S(1e-12)) continue;                 // numerically dead region
        if ((phi_i - phi_n) / phi_i <= S(0)) continue;   // clamped at zero
        d_sigmoid[a * NR + i] += da * phi_n / (phi_i * phi_i);
        d_sigmoid[a * NR + i + 1] -= da / phi_i;
      }
    }
  }

  // Sigmoid -> (delta, s).
  VecX<S> d_h = VecX<S>::Zero(A * NR);
  for (int c = 0; c < A * NR; ++c) {
    const S dphi = d_sigmoid[c];
    if (dphi == S(0)) continue;
    const S sig = g.ray_sigmoid[c];
    const S bell = sig * (S(1) - sig);
    d_h[c] = -dphi * s * bell;  // delta = z - h
    ds_total += dphi * g.ray_delta[c] * bell;
  }
  sharp.accumulate_ds(ds_total);
  hf.backward(g.ray_saved, d_h);

  // Radiance network and its inputs.
  MatX<S> d_inputs = mlp_backward(rf.mlp, g.rad_saved, d_rad);
  const int F = rf.feature_dim;
  MatX<S> d_feat = d_inputs.middleRows(RadianceField<S>::kPosDim, F);
  encode_backward(hf.grid, g.endpoints.saved.enc, d_feat);

  MatX<S> d_raw_normal = MatX<S>::Zero(3, A);
  for (int a = 0; a < A; ++a) {
    const Vec3<S> d_unit =
        d_inputs.col(a).template segment<3>(RadianceField<S>::kPosDim + F);
    d_raw_normal.col(a) =
        unit_normal_backward(Vec3<S>(g.endpoints.normal.col(a)), d_unit);
  }
  if (d_normal_extra) d_raw_normal += *d_normal_extra;
  normal_backward(hf, g.endpoints, d_raw_normal);
}

/// The sampled elevation arc of one rendered pixel with all intermediates.
template <typename S>
struct ArcRenderBundle {
  S r = S(0), theta = S(0);
  VecX<S> phis;       // ascending arc elevations
  MatX<S> points;     // 3 x M world endpoints
  VecX<S> delta;      // vertical signed distance at endpoints
  MatX<S> normal;     // raw normals at endpoints
  VecX<S> trans;      // endpoint transmittance, in [0,1]
  VecX<S> alpha;      // endpoint opacity, in [0,1]
  VecX<S> radiance;   // in [0,1]
  VecX<S> beta;       // beam gain per arc point
  S intensity = S(0);
  MatX<S> ray_ranges;   // n_ray x M
  MatX<S> ray_delta;    // n_ray x M
  MatX<S> ray_sigmoid;  // n_ray x M
  MatX<S> ray_alphas;   // (n_ray-1) x M
};

template <typename S>
ArcRenderBundle<S> extract_bundle(const RenderGroup<S>& g, int pixel,
                                  const std::vector<ArcSamples<S>>* samples = nullptr) {
  const int M = g.arc_count();
  const int NR = g.cfg.n_ray;
  ArcRenderBundle<S> b;
  b.r = g.pixels[pixel].r;
  b.theta = g.pixels[pixel].theta;
  b.phis = g.phis.segment(pixel * M, M);
  b.points = g.endpoints.points.middleCols(pixel * M, M);
  b.delta = g.endpoints.delta.segment(pixel * M, M);
  b.normal = g.endpoints.normal.middleCols(pixel * M, M);
  b.trans = g.trans.segment(pixel * M, M);
  b.alpha = g.alpha_end.segment(pixel * M, M);
  b.radiance = g.radiance.segment(pixel * M, M);
  b.beta = g.beta.segment(pixel * M, M);
  b.intensity = g.intensity[pixel];
  b.ray_delta.resize(NR, M);
  b.ray_sigmoid.resize(NR, M);
  b.ray_alphas.resize(NR - 1, M);
  for (int j = 0; j < M; ++j) {
    const int a = pixel * M + j;
    b.ray_delta.col(j) = g.ray_delta.segment(a * NR, NR);
    b.ray_sigmoid.col(j) = g.ray_sigmoid.segment(a * NR, NR);
    b.ray_alphas.col(j) = g.alphas.col(a);
  }
  if (samples) b.ray_ranges = (*samples)[pixel].ranges;
  return b;
}

/// Render one pixel; the spec-level entry point (training uses render_group).
template <typename S>
ArcRenderBundle<S> render_pixel(const HeightField<S>& hf, const RadianceField<S>& rf,
                                const BeamPattern<S>& bp, const SamplingConfig& cfg,
                                S s, const Pose<S>& pose, S r, S theta, Rng& rng,
                                bool jitter_rays = true) {
  std::vector<PixelRequest<S>> px(1);
  px[0].r = r;
  px[0].theta = theta;
  std::vector<ArcSamples<S>> samples(1);
  samples[0] = sample_pixel_arcs(hf, cfg, s, pose, r, theta, rng, jitter_rays);
  RenderGroup<S> g =
      render_group_from_samples(hf, rf, bp, cfg, s, pose, px, samples, false);
  return extract_bundle(g, 0, &samples);
}

}  // namespace flsmap
