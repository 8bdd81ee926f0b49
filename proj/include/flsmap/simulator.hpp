#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flsmap/beam_pattern.hpp"
#include "flsmap/config.hpp"
#include "flsmap/dataset_io.hpp"
#include "flsmap/geometry.hpp"
#include "flsmap/raster.hpp"
#include "flsmap/rng.hpp"

namespace flsmap {

struct SceneBump {
  double x = 0, y = 0, sigma = 1, amplitude = 1;
};

/// A raised strip with vertical faces: height added for x0 <= x <= x1.
struct SceneRidge {
  double x0 = 0, x1 = 0, height = 0;
};

/// Ground-truth seabed: analytic primitives over a box, or a gridded raster
/// with bilinear interpolation. Height queries are total over the box.
struct Scene {
  Bounds2d bounds{{0, 0}, {20, 20}};
  double base = 0;
  std::vector<SceneBump> bumps;
  std::vector<SceneRidge> ridges;
  double reflectivity = 1.0;

  bool use_raster = false;
  HeightRaster raster;
  double raster_max = 0;  // cached by rasterized()/from_config()

  double height(double x, double y) const;
  Vec2<double> height_gradient(double x, double y, double eps = 0.01) const;
  double max_height() const;

  /// Bake the analytic scene into a raster for fast ray marching.
  Scene rasterized(double cell) const;

  static Scene from_config(const Config& c);
};

struct SurveyPlan {
  Bounds2d box{{0, 0}, {20, 20}};
  double line_spacing = 5.0;
  double altitude = 4.0;  // above local seabed (terrain-following)
  double speed = 0.5;
  double frame_rate = 7.5;
  double pitch_down = 15.0 * M_PI / 180.0;

  static SurveyPlan from_config(const Config& c, const Bounds2d& scene_box);
};

/// Parallel lines along x with alternating heading, constant altitude above
/// the local seabed, yaw aligned with travel, fixed sonar pitch.
std::vector<FramePose> make_lawnmower(const Scene& scene, const SurveyPlan& plan);

/// First crossing of the ray with the seabed: smallest r with
/// z(origin + r*dir) <= height(x,y), by fixed-step marching plus bisection.
std::optional<double> raycast_first_hit(const Scene& scene, const Vec3<double>& origin,
                                        const Vec3<double>& dir, double r_max,
                                        double step = 0.05, int bisections = 20);

struct SimNoise {
  double speckle_sigma = 0.0;  // multiplicative, mean 1
  double floor = 0.0;          // additive
};

struct SimParams {
  int base_fan = 96;     // elevation nodes of the dense fan
  int max_subdiv = 6;    // adaptive refinement depth at range discontinuities
  double intensity_scale = 300.0;
  SimNoise noise;
};

/// Forward-render one frame by dense elevation ray casting with adaptive
/// refinement: Lambertian shading, true beam pattern, geometric shadows and
/// layover, speckle and noise floor, clipped to [0,1].
Eigen::MatrixXf synthesize_intensities(const Scene& scene, const Pose<double>& pose,
                                       const SonarIntrinsics& intr,
                                       const BeamPattern<double>* bp_true,
                                       const SimParams& params, Rng& rng);

/// One nadir raycast per sampled pose; optionally vertical noise.
std::vector<AltimeterPoint> synthesize_altimeter(const Scene& scene,
                                                 const std::vector<FramePose>& poses,
                                                 double rate, double sigma_z, Rng& rng);

/// Block-averaged grid of the scene: the low-resolution prior map as a point
/// cloud of dense altimeter readings.
std::vector<AltimeterPoint> export_prior_pointcloud(const Scene& scene,
                                                    double resolution,
                                                    int supersample = 8);

/// The `simulate` verb: build scene + survey from config, write the dataset
/// directory (poses, intrinsics, frames, altimeter, optional prior cloud,
/// ground-truth raster).
void run_simulation(const Config& cfg, const std::string& out_dir,
                    std::ostream* progress = nullptr);

SonarIntrinsics intrinsics_from_config(const Config& c);

}  // namespace flsmap
