#include "flsmap/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "flsmap/checkpoint.hpp"
#include "flsmap/raster.hpp"
#include "flsmap/simulator.hpp"
#include "flsmap/trainer.hpp"

namespace flsmap {

namespace {

const char* kUsage =
    "usage: flsmap <verb> [args]\n"
    "\n"
    "  simulate <config> <out_dir>\n"
    "      Generate a synthetic survey dataset (poses, frames, altimeter,\n"
    "      ground-truth raster) from a scene/survey config.\n"
    "  train <config> <dataset_dir> <out_dir>\n"
    "      Optimize heightmap, radiance and beam pattern against the dataset.\n"
    "  render <checkpoint> <dataset_dir> <frame_id> <out.img>\n"
    "      Render the predicted sonar image for one dataset frame.\n"
    "  grid <checkpoint> <x0,y0,x1,y1> <resolution_m> <out.grid>\n"
    "       [--mask-dataset <dir>] [--min-count N] [--gradient exact|fd]\n"
    "      Sample the trained heightmap onto a raster (optionally masked by\n"
    "      ensonification counts, or exporting the slope-magnitude map).\n"
    "  eval <est.grid> <truth.grid> [--inner margin_m]\n"
    "      Print MAE, STD and SSIM between two rasters (tab separated).\n"
    "  beampattern <checkpoint> <out.csv>\n"
    "      Dump the estimated beam-pattern curves sampled at 1 degree.\n";

int usage_error(const std::string& msg) {
  if (!msg.empty()) std::cerr << "flsmap: " << msg << "\n\n";
  std::cerr << kUsage;
  return 2;
}

struct LoadedModel {
  Config config;
  Model<float> model;
};

LoadedModel load_model(const std::string& checkpoint_path) {
  LoadedModel lm{Config::parse(load_checkpoint_config(checkpoint_path)), {}};
  lm.model = Model<float>::build(lm.config);
  lm.model.hf.active_levels = -1;  // checkpoints hold fully unlocked weights
  load_checkpoint_params(checkpoint_path, lm.model.store);
  return lm;
}

bool parse_bounds(const std::string& text, Bounds2d& out) {
  std::string t = text;
  std::replace(t.begin(), t.end(), ',', ' ');
  std::istringstream in(t);
  double x0, y0, x1, y1;
  if (!(in >> x0 >> y0 >> x1 >> y1)) return false;
  out.lo = {x0, y0};
  out.hi = {x1, y1};
  return x1 > x0 && y1 > y0;
}

int cmd_simulate(const std::vector<std::string>& args) {
  if (args.size() != 2) return usage_error("simulate needs <config> <out_dir>");
  run_simulation(Config::load(args[0]), args[1], &std::cout);
  return 0;
}

int cmd_train(const std::vector<std::string>& args) {
  if (args.size() != 3) return usage_error("train needs <config> <dataset> <out_dir>");
  const Config cfg = Config::load(args[0]);
  const std::string alt_file = cfg.get_str("paths.altimeter", "altimeter.txt");
  const Dataset data = Dataset::load(args[1], true, alt_file);
  Model<float> model = Model<float>::build(cfg);
  const TrainConfig tc = TrainConfig::from_config(cfg);
  const LossConfig lc = LossConfig::from_config(cfg);
  const auto outcome = train(model, data, cfg, tc, lc, args[2], &std::cout);
  std::cout << "final checkpoint: " << outcome.checkpoint_path << "\n";
  return 0;
}

int cmd_render(const std::vector<std::string>& args) {
  if (args.size() != 4)
    return usage_error("render needs <checkpoint> <dataset> <frame_id> <out.img>");
  LoadedModel lm = load_model(args[0]);
  const Dataset data = Dataset::load(args[1], false);
  const int64_t frame_id = std::stoll(args[2]);
  const int idx = data.frame_index_of(frame_id);
  if (idx < 0) throw std::runtime_error("frame id not in dataset: " + args[2]);
  const SonarIntrinsics& k = data.intrinsics;
  const Pose<float> pose = data.poses[idx].pose.cast<float>();
  const float s = lm.model.sharp.value();

  Eigen::MatrixXf img(k.n_bins, k.n_beams);
  for (int beam = 0; beam < k.n_beams; ++beam) {
    std::vector<PixelRequest<float>> px(k.n_bins);
    for (int bin = 0; bin < k.n_bins; ++bin) {
      const auto [r, theta] = pixel_to_polar(k, bin, beam);
      px[bin].r = float(r);
      px[bin].theta = float(theta);
      px[bin].seed =
          Rng::derive(0xE7A1, uint64_t(frame_id), uint64_t(beam), uint64_t(bin))
              .next_u64();
    }
    const RenderGroup<float> g =
        render_group(lm.model.hf, lm.model.rf, lm.model.bp, lm.model.sampling, s, pose,
                     px, /*jitter_rays=*/false, /*save_for_backward=*/false);
    img.col(beam) = g.intensity;
  }
  write_frame(args[3], SonarFrame::quantize(img));
  return 0;
}

int cmd_grid(const std::vector<std::string>& args) {
  if (args.size() < 4) return usage_error("grid needs <checkpoint> <bounds> <res> <out>");
  Bounds2d bounds;
  if (!parse_bounds(args[1], bounds)) return usage_error("bad bounds: " + args[1]);
  const double res = std::stod(args[2]);
  if (!(res > 0)) return usage_error("resolution must be positive");
  std::string mask_dataset, gradient_mode;
  int min_count = 2;
  for (size_t i = 4; i < args.size(); ++i) {
    if (args[i] == "--mask-dataset" && i + 1 < args.size())
      mask_dataset = args[++i];
    else if (args[i] == "--min-count" && i + 1 < args.size())
      min_count = std::stoi(args[++i]);
    else if (args[i] == "--gradient" && i + 1 < args.size())
      gradient_mode = args[++i];
    else
      return usage_error("unknown grid option: " + args[i]);
  }
  LoadedModel lm = load_model(args[0]);

  HeightRaster g;
  if (gradient_mode.empty()) {
    g = grid_heightfield(lm.model.hf, bounds, res);
  } else if (gradient_mode == "exact") {
    g = HeightRaster::make(bounds, res);
    MatX<float> pts(3, g.cols());
    for (int r = 0; r < g.rows(); ++r) {
      for (int c = 0; c < g.cols(); ++c)
        pts.col(c) = Vec3<float>(float(g.cx(c)), float(g.cy(r)), 0.0f);
      const auto q = query_delta_normal(lm.model.hf, pts);
      for (int c = 0; c < g.cols(); ++c) g.values(r, c) = q.grad_n.col(c).norm();
    }
  } else if (gradient_mode == "fd") {
    const HeightRaster h = grid_heightfield(lm.model.hf, bounds, res);
    g = HeightRaster::make(bounds, res);
    for (int r = 1; r + 1 < h.rows(); ++r)
      for (int c = 1; c + 1 < h.cols(); ++c) {
        const double gx = (h.values(r, c + 1) - h.values(r, c - 1)) / (2 * res);
        const double gy = (h.values(r + 1, c) - h.values(r - 1, c)) / (2 * res);
        g.values(r, c) = std::hypot(gx, gy);
      }
  } else {
    return usage_error("--gradient must be 'exact' or 'fd'");
  }

  if (!mask_dataset.empty()) {
    const Dataset data = Dataset::load(mask_dataset, false);
    if (data.altimeter.empty())
      throw std::runtime_error("grid: mask dataset has no altimeter readings");
    std::vector<double> zs;
    for (const auto& p : data.altimeter) zs.push_back(p.point.z());
    std::nth_element(zs.begin(), zs.begin() + zs.size() / 2, zs.end());
    const double ground_z = zs[zs.size() / 2];
    std::vector<Pose<double>> poses;
    for (const auto& fp : data.poses) poses.push_back(fp.pose);
    const Eigen::MatrixXi counts =
        ensonification_count(poses, data.intrinsics, bounds, res, ground_z);
    apply_ensonification_mask(g, counts, min_count);
  }
  write_grid(args[3], g);
  return 0;
}

int cmd_eval(const std::vector<std::string>& args) {
  if (args.size() < 2) return usage_error("eval needs <est.grid> <truth.grid>");
  double inner = -1;
  for (size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--inner" && i + 1 < args.size())
      inner = std::stod(args[++i]);
    else
      return usage_error("unknown eval option: " + args[i]);
  }
  HeightRaster est = read_grid(args[0]);
  HeightRaster truth = read_grid(args[1]);
  if (inner > 0) {
    apply_inner_crop(est, inner);
    apply_inner_crop(truth, inner);
  }
  const auto [mae, sd] = mae_std(est, truth);
  const double s = ssim(est, truth);
  std::printf("%.6f\t%.6f\t%.6f\n", mae, sd, s);
  return 0;
}

int cmd_beampattern(const std::vector<std::string>& args) {
  if (args.size() != 2) return usage_error("beampattern needs <checkpoint> <out.csv>");
  LoadedModel lm = load_model(args[0]);
  const auto& bp = lm.model.bp;
  std::ofstream out(args[1]);
  if (!out) throw std::runtime_error("cannot write " + args[1]);
  out << "curve,angle_deg,value\n";
  const SonarIntrinsics& k = lm.model.intrinsics;
  char buf[128];
  const double step = M_PI / 180.0;
  for (double a = -0.5 * k.hfov; a <= 0.5 * k.hfov + 1e-12; a += step) {
    std::snprintf(buf, sizeof(buf), "theta,%.4f,%.9g\n", a * 180.0 / M_PI,
                  double(bp.gain_theta(float(a))));
    out << buf;
  }
  for (double a = k.phi_min; a <= k.phi_max + 1e-12; a += step) {
    std::snprintf(buf, sizeof(buf), "phi,%.4f,%.9g\n", a * 180.0 / M_PI,
                  double(bp.gain_phi(float(a))));
    out << buf;
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  if (argc < 2) return usage_error("");
  const std::string verb = argv[1];
  std::vector<std::string> args(argv + 2, argv + argc);
  try {
    if (verb == "simulate") return cmd_simulate(args);
    if (verb == "train") return cmd_train(args);
    if (verb == "render") return cmd_render(args);
    if (verb == "grid") return cmd_grid(args);
    if (verb == "eval") return cmd_eval(args);
    if (verb == "beampattern") return cmd_beampattern(args);
    if (verb == "--help" || verb == "-h" || verb == "help") {
      std::cout << kUsage;
      return 0;
    }
    return usage_error("unknown verb: " + verb);
  } catch (const std::invalid_argument& e) {
    std::cerr << "flsmap " << verb << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "flsmap " << verb << ": " << e.what() << "\n";
    return 1;
  }
}

}  // namespace flsmap
