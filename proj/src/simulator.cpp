#include "flsmap/simulator.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace flsmap {

double Scene::height(double x, double y) const {
  if (use_raster) return raster.interpolate(x, y);
  double h = base;
  for (const auto& b : bumps) {
    const double dx = x - b.x, dy = y - b.y;
    h += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
  }
  for (const auto& r : ridges)
    if (x >= r.x0 && x <= r.x1) h += r.height;
  return h;
}

Vec2<double> Scene::height_gradient(double x, double y, double eps) const {
  return Vec2<double>((height(x + eps, y) - height(x - eps, y)) / (2 * eps),
                      (height(x, y + eps) - height(x, y - eps)) / (2 * eps));
}

double Scene::max_height() const {
  if (use_raster) return raster_max;
  double m = base;
  for (const auto& b : bumps) m += std::max(b.amplitude, 0.0);
  for (const auto& r : ridges) m += std::max(r.height, 0.0);
  return m;
}

static double raster_max_value(const HeightRaster& raster) {
  double m = -1e300;
  for (int r = 0; r < raster.rows(); ++r)
    for (int c = 0; c < raster.cols(); ++c)
      if (raster.valid(r, c)) m = std::max(m, raster.values(r, c));
  return m;
}

Scene Scene::rasterized(double cell) const {
  Scene s = *this;
  s.use_raster = true;
  s.raster = HeightRaster::make(bounds, cell);
  for (int r = 0; r < s.raster.rows(); ++r)
    for (int c = 0; c < s.raster.cols(); ++c)
      s.raster.values(r, c) = height(s.raster.cx(c), s.raster.cy(r));
  s.raster_max = raster_max_value(s.raster);
  return s;
}

Scene Scene::from_config(const Config& c) {
  Scene s;
  s.bounds.lo = {c.get_double("scene.x0", 0), c.get_double("scene.y0", 0)};
  s.bounds.hi = {c.get_double("scene.x1", 20), c.get_double("scene.y1", 20)};
  s.base = c.get_double("scene.base", 0);
  s.reflectivity = c.get_double("scene.reflectivity", 1.0);
  // bumps = "x y sigma amp; x y sigma amp; ..."
  {
    std::istringstream in(c.get_str("scene.bumps"));
    std::string part;
    while (std::getline(in, part, ';')) {
      std::istringstream p(part);
      SceneBump b;
      if (p >> b.x >> b.y >> b.sigma >> b.amplitude) s.bumps.push_back(b);
    }
  }
  {
    std::istringstream in(c.get_str("scene.ridges"));
    std::string part;
    while (std::getline(in, part, ';')) {
      std::istringstream p(part);
      SceneRidge r;
      if (p >> r.x0 >> r.x1 >> r.height) s.ridges.push_back(r);
    }
  }
  const std::string raster_path = c.get_str("scene.raster");
  if (!raster_path.empty()) {
    s.use_raster = true;
    s.raster = read_grid(raster_path);
    s.raster_max = raster_max_value(s.raster);
    s.bounds.lo = {s.raster.origin_x, s.raster.origin_y};
    s.bounds.hi = {s.raster.origin_x + s.raster.cols() * s.raster.cell,
                   s.raster.origin_y + s.raster.rows() * s.raster.cell};
  }
  return s;
}

SurveyPlan SurveyPlan::from_config(const Config& c, const Bounds2d& scene_box) {
  SurveyPlan p;
  p.box = scene_box;
  if (c.has("survey.x0"))
    p.box.lo.x() = c.get_double("survey.x0", scene_box.lo.x());
  if (c.has("survey.y0"))
    p.box.lo.y() = c.get_double("survey.y0", scene_box.lo.y());
  if (c.has("survey.x1"))
    p.box.hi.x() = c.get_double("survey.x1", scene_box.hi.x());
  if (c.has("survey.y1"))
    p.box.hi.y() = c.get_double("survey.y1", scene_box.hi.y());
  p.line_spacing = c.get_double("survey.line_spacing", p.line_spacing);
  p.altitude = c.get_double("survey.altitude", p.altitude);
  p.speed = c.get_double("survey.speed", p.speed);
  p.frame_rate = c.get_double("survey.frame_rate", p.frame_rate);
  p.pitch_down = c.get_double("survey.pitch_down_deg", 15.0) * M_PI / 180.0;
  return p;
}

std::vector<FramePose> make_lawnmower(const Scene& scene, const SurveyPlan& plan) {
  if (!(plan.line_spacing > 0) || !(plan.box.extent_x() > 0) ||
      !(plan.box.extent_y() > 0) || !(plan.speed > 0) || !(plan.frame_rate > 0))
    throw std::invalid_argument("make_lawnmower: degenerate survey plan");

  std::vector<FramePose> out;
  const double ds = plan.speed / plan.frame_rate;
  const double x0 = plan.box.lo.x(), x1 = plan.box.hi.x();
  int64_t id = 0;
  int line = 0;
  for (double y = plan.box.lo.y(); y <= plan.box.hi.y() + 1e-9;
       y += plan.line_spacing, ++line) {
    const bool forward = (line % 2 == 0);
    const double yaw = forward ? 0.0 : M_PI;
    const int n_steps = int(std::floor((x1 - x0) / ds));
    for (int i = 0; i <= n_steps; ++i) {
      const double x = forward ? x0 + i * ds : x1 - i * ds;
      FramePose fp;
      fp.frame_id = id;
      fp.time = double(id) / plan.frame_rate;
      Pose<double> pose;
      pose.rotation = yaw_pitch_rotation<double>(yaw, plan.pitch_down);
      pose.translation = {x, y, scene.height(x, y) + plan.altitude};
      fp.set_pose(pose);
      out.push_back(fp);
      ++id;
    }
  }
  return out;
}

std::optional<double> raycast_first_hit(const Scene& scene, const Vec3<double>& origin,
                                        const Vec3<double>& dir, double r_max,
                                        double step, int bisections) {
  if (scene.use_raster) step = std::min(step, scene.raster.cell);
  const double h_max = scene.max_height();

  auto above = [&](double r) {
    const Vec3<double> p = origin + r * dir;
    return p.z() - scene.height(p.x(), p.y());
  };

  double r = 0.0;
  if (dir.z() < 0.0) {
    // No crossing is possible while the ray is above the global maximum.
    const double r_skip = (origin.z() - h_max) / (-dir.z());
    if (r_skip > 0.0) r = std::max(0.0, r_skip - step);
  } else if (origin.z() > h_max) {
    return std::nullopt;  // level or climbing ray that starts above everything
  }

  double f_prev = above(r);
  if (f_prev <= 0.0) return r;  // starts at or below the surface
  double r_prev = r;
  while (r < r_max) {
    r = std::min(r + step, r_max);
    const double f = above(r);
    if (f <= 0.0) {
      double lo = r_prev, hi = r;
      for (int i = 0; i < bisections; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (above(mid) <= 0.0)
          hi = mid;
        else
          lo = mid;
      }
      return 0.5 * (lo + hi);
    }
    f_prev = f;
    r_prev = r;
    if (r >= r_max) break;
  }
  return std::nullopt;
}

namespace {

struct FanNode {
  double phi = 0;
  bool hit = false;
  double range = 0;
  double energy = 0;  // per-radian deposit density
};

struct BeamContext {
  const Scene* scene;
  const Pose<double>* pose;
  const SonarIntrinsics* intr;
  const BeamPattern<double>* bp;
  double theta;
  double bin_width;
  Eigen::MatrixXf* image;
  int beam;
};

FanNode cast_node(const BeamContext& ctx, double phi) {
  FanNode n;
  n.phi = phi;
  const Vec3<double> dir_local =
      polar_to_local(PolarPoint<double>{1.0, ctx.theta, phi});
  const Vec3<double> dir = ctx.pose->rotation * dir_local;
  const auto hit =
      raycast_first_hit(*ctx.scene, ctx.pose->translation, dir, ctx.intr->r_max);
  if (!hit || *hit < ctx.intr->r_min) return n;
  n.hit = true;
  n.range = *hit;
  const Vec3<double> p = ctx.pose->translation + n.range * dir;
  const Vec2<double> g = ctx.scene->height_gradient(p.x(), p.y());
  Vec3<double> normal(-g.x(), -g.y(), 1.0);
  normal.normalize();
  const double cos_inc = std::max(0.0, -dir.dot(normal));
  const double beta =
      ctx.bp ? std::max(ctx.bp->gain_theta(ctx.theta) * ctx.bp->gain_phi(phi), 0.0)
             : 1.0;
  n.energy = cos_inc * ctx.scene->reflectivity * beta;
  return n;
}

void deposit_bin(const BeamContext& ctx, double range, double amount) {
  const int bin =
      int((range - ctx.intr->r_min) / (ctx.intr->r_max - ctx.intr->r_min) *
          ctx.intr->n_bins);
  if (bin >= 0 && bin < ctx.intr->n_bins)
    (*ctx.image)(bin, ctx.beam) += float(amount);
}

void deposit_segment(const BeamContext& ctx, const FanNode& a, const FanNode& b) {
  const double dphi = b.phi - a.phi;
  if (a.hit && b.hit) {
    const double r0 = std::min(a.range, b.range);
    const double r1 = std::max(a.range, b.range);
    if (r1 - r0 > 4.0 * ctx.bin_width) {
      // Unresolved discontinuity (occlusion or layover edge): keep the energy
      // at the endpoints instead of smearing it across the gap.
      deposit_bin(ctx, a.range, 0.5 * a.energy * dphi);
      deposit_bin(ctx, b.range, 0.5 * b.energy * dphi);
      return;
    }
    const double energy = 0.5 * (a.energy + b.energy) * dphi;
    if (r1 - r0 < 1e-9) {
      deposit_bin(ctx, 0.5 * (r0 + r1), energy);
      return;
    }
    // Spread across covered bins proportional to overlap.
    const double w = ctx.bin_width;
    int b0 = int((r0 - ctx.intr->r_min) / w);
    int b1 = int((r1 - ctx.intr->r_min) / w);
    b0 = std::max(b0, 0);
    b1 = std::min(b1, ctx.intr->n_bins - 1);
    for (int bin = b0; bin <= b1; ++bin) {
      const double lo = ctx.intr->r_min + bin * w;
      const double hi = lo + w;
      const double overlap = std::min(hi, r1) - std::max(lo, r0);
      if (overlap > 0) (*ctx.image)(bin, ctx.beam) += float(energy * overlap / (r1 - r0));
    }
  } else if (a.hit) {
    deposit_bin(ctx, a.range, a.energy * dphi);
  } else if (b.hit) {
    deposit_bin(ctx, b.range, b.energy * dphi);
  }
}

void refine_segment(const BeamContext& ctx, const FanNode& a, const FanNode& b,
                    int depth, int max_depth) {
  if (!a.hit && !b.hit) return;
  const bool resolved = a.hit && b.hit && std::abs(a.range - b.range) <= ctx.bin_width;
  if (resolved || depth >= max_depth) {
    deposit_segment(ctx, a, b);
    return;
  }
  const FanNode mid = cast_node(ctx, 0.5 * (a.phi + b.phi));
  refine_segment(ctx, a, mid, depth + 1, max_depth);
  refine_segment(ctx, mid, b, depth + 1, max_depth);
}

}  // namespace

Eigen::MatrixXf synthesize_intensities(const Scene& scene, const Pose<double>& pose,
                                       const SonarIntrinsics& intr,
                                       const BeamPattern<double>* bp_true,
                                       const SimParams& params, Rng& rng) {
  Eigen::MatrixXf image = Eigen::MatrixXf::Zero(intr.n_bins, intr.n_beams);
  const int fan = std::max(params.base_fan, 2);
  std::vector<FanNode> nodes(fan + 1);

  for (int beam = 0; beam < intr.n_beams; ++beam) {
    const double theta = -0.5 * intr.hfov + (beam + 0.5) * intr.hfov / intr.n_beams;
    BeamContext ctx{&scene, &pose, &intr, bp_true, theta, intr.bin_width(), &image, beam};
    for (int i = 0; i <= fan; ++i) {
      const double phi = intr.phi_min + (intr.phi_max - intr.phi_min) * i / fan;
      nodes[i] = cast_node(ctx, phi);
    }
    for (int i = 0; i < fan; ++i)
      refine_segment(ctx, nodes[i], nodes[i + 1], 0, params.max_subdiv);
  }

  image *= float(params.intensity_scale);
  if (params.noise.speckle_sigma > 0 || params.noise.floor != 0) {
    for (int b = 0; b < intr.n_bins; ++b)
      for (int m = 0; m < intr.n_beams; ++m) {
        double v = image(b, m);
        if (params.noise.speckle_sigma > 0)
          v *= std::max(0.0, 1.0 + params.noise.speckle_sigma * rng.normal());
        image(b, m) = float(v + params.noise.floor);
      }
  }
  image = image.cwiseMax(0.0f).cwiseMin(1.0f);
  return image;
}

std::vector<AltimeterPoint> synthesize_altimeter(const Scene& scene,
                                                 const std::vector<FramePose>& poses,
                                                 double rate, double sigma_z, Rng& rng) {
  std::vector<AltimeterPoint> out;
  double acc = 0;
  for (const auto& fp : poses) {
    acc += rate;
    if (acc < 1.0) continue;
    acc -= 1.0;
    const Vec3<double>& t = fp.pose.translation;
    if (!scene.bounds.contains({t.x(), t.y()})) continue;
    // The nadir ray of a single-valued heightmap hits exactly at the height.
    const double h = scene.height(t.x(), t.y());
    if (t.z() <= h) continue;
    AltimeterPoint p;
    p.point = {t.x(), t.y(), h};
    if (sigma_z > 0) p.point.z() += sigma_z * rng.normal();
    out.push_back(p);
  }
  return out;
}

std::vector<AltimeterPoint> export_prior_pointcloud(const Scene& scene,
                                                    double resolution,
                                                    int supersample) {
  if (!(resolution > 0))
    throw std::invalid_argument("export_prior_pointcloud: resolution must be > 0");
  std::vector<AltimeterPoint> out;
  const int nx = int(std::lround(scene.bounds.extent_x() / resolution));
  const int ny = int(std::lround(scene.bounds.extent_y() / resolution));
  const int ss = std::max(supersample, 1);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const double cx = scene.bounds.lo.x() + (i + 0.5) * resolution;
      const double cy = scene.bounds.lo.y() + (j + 0.5) * resolution;
      double sum = 0;
      for (int a = 0; a < ss; ++a)
        for (int b = 0; b < ss; ++b) {
          const double x = cx + ((a + 0.5) / ss - 0.5) * resolution;
          const double y = cy + ((b + 0.5) / ss - 0.5) * resolution;
          sum += scene.height(x, y);
        }
      AltimeterPoint p;
      p.point = {cx, cy, sum / (ss * ss)};
      out.push_back(p);
    }
  return out;
}

SonarIntrinsics intrinsics_from_config(const Config& c) {
  SonarIntrinsics k;
  k.r_min = c.get_double("sonar.r_min", k.r_min);
  k.r_max = c.get_double("sonar.r_max", k.r_max);
  k.hfov = c.get_double("sonar.hfov_deg", 120.0) * M_PI / 180.0;
  k.phi_min = c.get_double("sonar.phi_min_deg", -25.0) * M_PI / 180.0;
  k.phi_max = c.get_double("sonar.phi_max_deg", -5.0) * M_PI / 180.0;
  k.n_beams = c.get_int("sonar.n_beams", k.n_beams);
  k.n_bins = c.get_int("sonar.n_bins", k.n_bins);
  if (!k.is_valid()) throw std::runtime_error("invalid [sonar] configuration");
  return k;
}

void run_simulation(const Config& cfg, const std::string& out_dir,
                    std::ostream* progress) {
  namespace fs = std::filesystem;
  const Scene scene_exact = Scene::from_config(cfg);
  const double raster_cell = cfg.get_double("sim.scene_raster_cell", 0.05);
  const Scene scene = (raster_cell > 0 && !scene_exact.use_raster)
                          ? scene_exact.rasterized(raster_cell)
                          : scene_exact;
  const SurveyPlan plan = SurveyPlan::from_config(cfg, scene_exact.bounds);
  const SonarIntrinsics intr = intrinsics_from_config(cfg);

  SimParams params;
  params.base_fan = cfg.get_int("sim.fan", params.base_fan);
  params.max_subdiv = cfg.get_int("sim.max_subdiv", params.max_subdiv);
  params.intensity_scale = cfg.get_double("sim.intensity_scale", params.intensity_scale);
  params.noise.speckle_sigma = cfg.get_double("sim.speckle_sigma", 0.0);
  params.noise.floor = cfg.get_double("sim.noise_floor", 0.0);
  const uint64_t seed = uint64_t(cfg.get_int64("sim.seed", 1));

  BeamPattern<double> bp_true;
  const auto phi_w = cfg.get_doubles("sim.bp_phi_weights");
  const auto theta_w = cfg.get_doubles("sim.bp_theta_weights");
  const bool have_bp = !phi_w.empty() || !theta_w.empty();
  if (have_bp) {
    bp_true.init(std::max<int>(1, int(theta_w.size())), -0.5 * intr.hfov,
                 0.5 * intr.hfov, std::max<int>(1, int(phi_w.size())), intr.phi_min,
                 intr.phi_max);
    if (theta_w.empty()) bp_true.theta_weights.setConstant(1.0);
    for (size_t i = 0; i < theta_w.size(); ++i) bp_true.theta_weights(i, 0) = theta_w[i];
    if (phi_w.empty()) bp_true.phi_weights.setConstant(1.0);
    for (size_t i = 0; i < phi_w.size(); ++i) bp_true.phi_weights(i, 0) = phi_w[i];
  }

  fs::create_directories(out_dir + "/frames");
  const std::vector<FramePose> poses = make_lawnmower(scene_exact, plan);
  write_pose_file(out_dir + "/poses.txt", poses);
  write_intrinsics(out_dir + "/intrinsics.txt", intr);

  for (size_t i = 0; i < poses.size(); ++i) {
    Rng rng = Rng::derive(seed, uint64_t(poses[i].frame_id));
    const Eigen::MatrixXf img = synthesize_intensities(
        scene, poses[i].pose, intr, have_bp ? &bp_true : nullptr, params, rng);
    write_frame(out_dir + "/frames/" + frame_filename(poses[i].frame_id),
                SonarFrame::quantize(img));
    if (progress && (i % 100 == 0 || i + 1 == poses.size()))
      (*progress) << "simulate: frame " << (i + 1) << "/" << poses.size() << "\n";
  }

  {
    Rng rng = Rng::derive(seed, 0xa171);
    const double rate = cfg.get_double("sim.altimeter_rate", 1.0);
    const double sigma = cfg.get_double("sim.altimeter_sigma", 0.0);
    write_altimeter(out_dir + "/altimeter.txt",
                    synthesize_altimeter(scene_exact, poses, rate, sigma, rng));
  }

  const double prior_res = cfg.get_double("sim.prior_resolution", 0.0);
  if (prior_res > 0) {
    write_altimeter(out_dir + "/prior.txt",
                    export_prior_pointcloud(scene_exact, prior_res,
                                            cfg.get_int("sim.prior_supersample", 8)));
  }

  const double truth_res = cfg.get_double("sim.truth_resolution", 0.1);
  HeightRaster truth = HeightRaster::make(scene_exact.bounds, truth_res);
  for (int r = 0; r < truth.rows(); ++r)
    for (int c = 0; c < truth.cols(); ++c)
      truth.values(r, c) = scene_exact.height(truth.cx(c), truth.cy(r));
  write_grid(out_dir + "/scene_truth.grid", truth);
}

}  // namespace flsmap
