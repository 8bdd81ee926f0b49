#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "flsmap/checkpoint.hpp"
#include "flsmap/config.hpp"
#include "flsmap/dataset_io.hpp"
#include "flsmap/losses.hpp"
#include "flsmap/renderer.hpp"
#include "flsmap/simulator.hpp"

namespace flsmap {

struct LossConfig {
  double w_int = 1.0;
  double w_reg = 0.1;
  double w_alt = 1.0;
  bool altimeter_enabled = true;

  static LossConfig from_config(const Config& c) {
    LossConfig lc;
    lc.w_int = c.get_double("losses.w_int", lc.w_int);
    lc.w_reg = c.get_double("losses.w_reg", lc.w_reg);
    lc.w_alt = c.get_double("losses.w_alt", lc.w_alt);
    lc.altimeter_enabled = c.get_bool("losses.altimeter_enabled", true);
    return lc;
  }
};

struct ProgressiveSchedule {
  int start_levels = 4;
  long long unlock_interval = 1500;
};

/// Coarse-to-fine unlock: non-decreasing in step, from start_levels up to all.
inline int active_level_count(const ProgressiveSchedule& sched, long long step,
                              int total_levels) {
  if (sched.unlock_interval <= 0 || sched.start_levels >= total_levels)
    return total_levels;
  const long long active = sched.start_levels + step / sched.unlock_interval;
  return int(std::min<long long>(active, total_levels));
}

struct TrainConfig {
  long long total_steps = 60000;
  int batch_frames = 64;
  uint64_t seed = 1;
  double base_lr = 5e-2;
  double lr_decay = 0.97;
  long long lr_interval = 600;
  ProgressiveSchedule progressive;
  long long checkpoint_interval = 10000;
  long long log_interval = 10;
  double min_range_mask = 0.0;  // exclude bins closer than this from L_int
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;

  static TrainConfig from_config(const Config& c) {
    TrainConfig tc;
    tc.total_steps = c.get_int64("train.steps", tc.total_steps);
    tc.batch_frames = c.get_int("train.batch_frames", tc.batch_frames);
    tc.seed = uint64_t(c.get_int64("train.seed", 1));
    tc.base_lr = c.get_double("train.base_lr", tc.base_lr);
    tc.lr_decay = c.get_double("train.lr_decay", tc.lr_decay);
    tc.lr_interval = c.get_int64("train.lr_interval", tc.lr_interval);
    tc.progressive.start_levels = c.get_int("train.start_levels", 4);
    tc.progressive.unlock_interval = c.get_int64("train.unlock_interval", 1500);
    tc.checkpoint_interval = c.get_int64("train.checkpoint_interval", tc.checkpoint_interval);
    tc.log_interval = c.get_int64("train.log_interval", tc.log_interval);
    tc.min_range_mask = c.get_double("train.min_range_mask", 0.0);
    return tc;
  }
};

/// All trainable state plus the sampling geometry, buildable from a config
/// (and rebuildable from the config text embedded in a checkpoint).
template <typename S>
struct Model {
  HeightField<S> hf;
  RadianceField<S> rf;
  BeamPattern<S> bp;
  Sharpness<S> sharp{S(20)};
  SamplingConfig sampling;
  SonarIntrinsics intrinsics;
  ParamStore<S> store;

  static Model build(const Config& c) {
    Model m;
    m.intrinsics = intrinsics_from_config(c);

    HashGridConfig gc;
    gc.levels = c.get_int("encoding.levels", 15);
    gc.table_size = 1 << c.get_int("encoding.table_size_log2", 15);
    gc.features = c.get_int("encoding.features", 2);
    gc.n_min = c.get_int("encoding.n_min", 16);
    gc.n_max = c.get_int("encoding.n_max", 1024);
    gc.bounds.lo = {c.get_double("encoding.x0", 0), c.get_double("encoding.y0", 0)};
    gc.bounds.hi = {c.get_double("encoding.x1", 20), c.get_double("encoding.y1", 20)};

    Rng rng = Rng::derive(uint64_t(c.get_int64("train.seed", 1)), 0xC0DE);
    const double table_init = c.get_double("train.table_init", 1e-4);
    m.hf.init(gc, c.get_int("mlp.height_hidden_layers", 2),
              c.get_int("mlp.height_hidden_width", 64), rng, S(table_init));
    m.rf.init(gc.feature_dim(), gc.bounds, c.get_double("encoding.z_lo", -10),
              c.get_double("encoding.z_hi", 10), c.get_int("mlp.radiance_hidden_layers", 2),
              c.get_int("mlp.radiance_hidden_width", 64), rng);

    m.sampling.n_arc_stratified = c.get_int("sampling.n_arc_stratified", 15);
    m.sampling.n_arc_importance = c.get_int("sampling.n_arc_importance", 15);
    m.sampling.n_ray = c.get_int("sampling.n_ray", 60);
    m.sampling.r_min_render = c.get_double("sampling.r_min_render", 0.5);
    m.sampling.phi_min = m.intrinsics.phi_min;
    m.sampling.phi_max = m.intrinsics.phi_max;
    m.sampling.validate();

    if (c.get_bool("beampattern.enabled", false)) {
      m.bp.init(c.get_int("beampattern.k_theta", 30), -0.5 * m.intrinsics.hfov,
                0.5 * m.intrinsics.hfov, c.get_int("beampattern.k_phi", 10),
                m.intrinsics.phi_min, m.intrinsics.phi_max,
                S(c.get_double("beampattern.init_weight", 1.0)));
    }
    m.sharp = Sharpness<S>(S(c.get_double("train.s_init", 20.0)));

    m.hf.register_params(m.store);
    m.rf.register_params(m.store);
    m.bp.register_params(m.store);
    m.sharp.register_params(m.store);
    return m;
  }
};

/// One (frame, beam) draw: every valid range bin of that beam becomes a pixel.
template <typename S>
struct BatchItem {
  int frame_index = 0;
  int beam = 0;
  Pose<S> pose;
  std::vector<PixelRequest<S>> pixels;
  VecX<S> observed;
  std::vector<ArcSamples<S>> samples;
};

template <typename S>
struct StepStats {
  S l_int = S(0), l_reg = S(0), l_alt = S(0), total = S(0);
  long long n_pixels = 0;
};

/// Uniform frame draw (with replacement) and one uniform beam per frame.
/// Sampling streams are derived per (step, item, bin) so results do not depend
/// on batching internals.
template <typename S>
std::vector<BatchItem<S>> sample_batch(const Model<S>& model, const Dataset& data,
                                       const TrainConfig& tc, long long step,
                                       Rng& rng, bool make_samples = true) {
  if (data.poses.empty()) throw std::runtime_error("sample_batch: empty dataset");
  const SonarIntrinsics& k = data.intrinsics;
  std::vector<BatchItem<S>> items(tc.batch_frames);
  const S s = model.sharp.value();
  for (int b = 0; b < tc.batch_frames; ++b) {
    BatchItem<S>& item = items[b];
    item.frame_index = int(rng.below(data.poses.size()));
    item.beam = int(rng.below(uint64_t(k.n_beams)));
    item.pose = data.poses[item.frame_index].pose.template cast<S>();
    std::vector<S> obs;
    for (int bin = 0; bin < k.n_bins; ++bin) {
      const auto [r, theta] = pixel_to_polar(k, bin, item.beam);
      if (r < tc.min_range_mask) continue;
      PixelRequest<S> px;
      px.r = S(r);
      px.theta = S(theta);
      px.seed = Rng::derive(tc.seed, uint64_t(step), uint64_t(b), uint64_t(bin)).next_u64();
      item.pixels.push_back(px);
      obs.push_back(data.frames.empty()
                        ? S(0)
                        : S(data.frames[item.frame_index].intensity(bin, item.beam)));
    }
    item.observed = Eigen::Map<VecX<S>>(obs.data(), Eigen::Index(obs.size()));
    if (make_samples) {
      item.samples.resize(item.pixels.size());
      for (size_t p = 0; p < item.pixels.size(); ++p) {
        Rng prng(item.pixels[p].seed);
        item.samples[p] = sample_pixel_arcs(model.hf, model.sampling, s, item.pose,
                                            item.pixels[p].r, item.pixels[p].theta,
                                            prng, true);
      }
    }
  }
  return items;
}

/// Total loss over a batch with frozen samples; optionally accumulates all
/// parameter gradients. The same routine backs the training loop and the
/// finite-difference harness.
template <typename S>
StepStats<S> batch_loss(Model<S>& model, const std::vector<BatchItem<S>>& items,
                        const MatX<S>& alt_points, const VecX<S>& alt_weights,
                        const LossConfig& lc, bool with_grads) {
  StepStats<S> st;
  const bool need_render = (lc.w_int > 0 || lc.w_reg > 0) && !items.empty();
  long long total_pixels = 0;
  for (const auto& it : items) total_pixels += (long long)it.pixels.size();
  const long long total_arcs = total_pixels * model.sampling.arc_samples();
  st.n_pixels = total_pixels;

  if (need_render && total_pixels > 0) {
    const S s = model.sharp.value();
    for (const auto& it : items) {
      if (it.pixels.empty()) continue;
      RenderGroup<S> g =
          render_group_from_samples(model.hf, model.rf, model.bp, model.sampling, s,
                                    it.pose, it.pixels, it.samples, with_grads);
      st.l_int += (g.intensity - it.observed).cwiseAbs().sum();
      for (Eigen::Index a = 0; a < g.endpoints.normal.cols(); ++a) {
        const S d = g.endpoints.normal.col(a).norm() - S(1);
        st.l_reg += d * d;
      }
      if (with_grads) {
        VecX<S> d_int(g.intensity.size());
        const S ci = S(lc.w_int) / S(total_pixels);
        for (Eigen::Index p = 0; p < g.intensity.size(); ++p) {
          const S e = g.intensity[p] - it.observed[p];
          d_int[p] = e > S(0) ? ci : (e < S(0) ? -ci : S(0));
        }
        MatX<S> d_norm = loss_regularizer_backward(
            g.endpoints.normal, S(lc.w_reg) / S(total_arcs));
        render_group_backward(g, model.hf, model.rf, model.bp, model.sharp, d_int,
                              lc.w_reg > 0 ? &d_norm : nullptr);
      }
    }
    st.l_int /= S(total_pixels);
    st.l_reg /= S(total_arcs);
  }

  if (lc.altimeter_enabled && lc.w_alt > 0 && alt_points.cols() > 0) {
    st.l_alt = loss_altimeter_weighted(alt_points, alt_weights, model.hf,
                                       with_grads ? &model.hf : nullptr, S(lc.w_alt));
  }
  st.total = S(lc.w_int) * st.l_int + S(lc.w_reg) * st.l_reg + S(lc.w_alt) * st.l_alt;
  return st;
}

template <typename S>
struct TrainOutcome {
  StepStats<S> final_stats;
  std::string checkpoint_path;
};

/// Abort carrying the diagnostic dump for a non-finite loss.
struct TrainAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename S>
MatX<S> altimeter_matrix(const std::vector<AltimeterPoint>& pts, VecX<S>* weights) {
  MatX<S> m(3, Eigen::Index(pts.size()));
  if (weights) weights->resize(Eigen::Index(pts.size()));
  for (size_t i = 0; i < pts.size(); ++i) {
    m.col(Eigen::Index(i)) = pts[i].point.cast<S>();
    if (weights) (*weights)[Eigen::Index(i)] = S(pts[i].weight);
  }
  return m;
}

template <typename S>
TrainOutcome<S> train(Model<S>& model, const Dataset& data, const Config& full_config,
                      const TrainConfig& tc, const LossConfig& lc,
                      const std::string& out_dir, std::ostream* progress = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  const SonarIntrinsics& dk = data.intrinsics;
  const SonarIntrinsics& mk = model.intrinsics;
  if (dk.n_beams != mk.n_beams || dk.n_bins != mk.n_bins ||
      std::abs(dk.hfov - mk.hfov) > 1e-9 || std::abs(dk.r_min - mk.r_min) > 1e-9 ||
      std::abs(dk.r_max - mk.r_max) > 1e-9 ||
      std::abs(dk.phi_min - mk.phi_min) > 1e-9 ||
      std::abs(dk.phi_max - mk.phi_max) > 1e-9)
    throw std::runtime_error("train: dataset intrinsics disagree with [sonar] config");

  VecX<S> alt_w;
  MatX<S> alt_pts = altimeter_matrix<S>(data.altimeter, &alt_w);
  if (lc.altimeter_enabled && lc.w_alt > 0 && alt_pts.cols() > 0) {
    // Start the surface at the measured mean depth.
    model.hf.mlp.biases.back()(0, 0) = S(alt_pts.row(2).mean());
  }

  std::ofstream log(out_dir + "/loss_log.csv");
  if (!log) throw std::runtime_error("cannot write loss log in " + out_dir);
  log << "step,lr,L_int,L_reg,L_alt,total\n";

  Rng batch_rng = Rng::derive(tc.seed, 0xba7c4);
  StepStats<S> st;
  char buf[256];
  for (long long step = 0; step < tc.total_steps; ++step) {
    const double lr = lr_schedule(step, tc.base_lr, tc.lr_decay, tc.lr_interval);
    model.hf.active_levels =
        active_level_count(tc.progressive, step, model.hf.grid.cfg.levels);
    model.store.zero_grads();

    const bool need_render = lc.w_int > 0 || lc.w_reg > 0;
    std::vector<BatchItem<S>> items;
    if (need_render) items = sample_batch(model, data, tc, step, batch_rng, true);
    st = batch_loss(model, items, alt_pts, alt_w, lc, true);

    if (!std::isfinite(double(st.total))) {
      std::string dump = "non-finite loss at step " + std::to_string(step) + ":";
      for (const auto& it : items)
        dump += " (frame " + std::to_string(it.frame_index) + ", beam " +
                std::to_string(it.beam) + ")";
      for (const auto& b : model.store.blocks())
        dump += "\n  |" + b.name + "| = " + std::to_string(double(b.value->norm()));
      throw TrainAbort(dump);
    }

    model.store.adam_step(S(lr), S(tc.adam_beta1), S(tc.adam_beta2), S(tc.adam_eps),
                          step + 1);

    if (step % tc.log_interval == 0 || step + 1 == tc.total_steps) {
      std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n", step, lr,
                    double(st.l_int), double(st.l_reg), double(st.l_alt),
                    double(st.total));
      log << buf;
    }
    if (tc.checkpoint_interval > 0 && step > 0 && step % tc.checkpoint_interval == 0) {
      std::snprintf(buf, sizeof(buf), "%s/checkpoint_%07lld.ckpt", out_dir.c_str(), step);
      save_checkpoint(buf, full_config.to_text(), model.store);
    }
    if (progress && (step % 500 == 0 || step + 1 == tc.total_steps)) {
      std::snprintf(buf, sizeof(buf),
                    "train: step %lld/%lld total %.5f (int %.5f reg %.5f alt %.5f)\n",
                    step, tc.total_steps, double(st.total), double(st.l_int),
                    double(st.l_reg), double(st.l_alt));
      (*progress) << buf << std::flush;
    }
  }

  TrainOutcome<S> out;
  out.final_stats = st;
  out.checkpoint_path = out_dir + "/checkpoint_final.ckpt";
  save_checkpoint(out.checkpoint_path, full_config.to_text(), model.store);
  return out;
}

}  // namespace flsmap
