#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "flsmap/field.hpp"
#include "flsmap/geometry.hpp"
#include "flsmap/types.hpp"

namespace flsmap {

/// Gridded heightmap. Row r, column c covers the cell centered at
/// (origin_x + (c+0.5)*cell, origin_y + (r+0.5)*cell); NaN marks invalid cells.
struct HeightRaster {
  double origin_x = 0, origin_y = 0;
  double cell = 0.1;
  Eigen::MatrixXd values;  // rows x cols, row-major semantics over y,x

  int rows() const { return int(values.rows()); }
  int cols() const { return int(values.cols()); }
  double cx(int c) const { return origin_x + (c + 0.5) * cell; }
  double cy(int r) const { return origin_y + (r + 0.5) * cell; }
  bool valid(int r, int c) const { return std::isfinite(values(r, c)); }
  static double invalid_value() { return std::numeric_limits<double>::quiet_NaN(); }

  static HeightRaster make(const Bounds2d& bounds, double resolution) {
    HeightRaster g;
    g.origin_x = bounds.lo.x();
    g.origin_y = bounds.lo.y();
    g.cell = resolution;
    const int w = int(std::lround(bounds.extent_x() / resolution));
    const int h = int(std::lround(bounds.extent_y() / resolution));
    g.values.setConstant(std::max(h, 1), std::max(w, 1), invalid_value());
    return g;
  }

  /// Bilinear sample between cell centers; clamps to the border.
  double interpolate(double x, double y) const;
};

/// Evaluate the height field at every cell center of a raster over `bounds`.
template <typename S>
HeightRaster grid_heightfield(const HeightField<S>& hf, const Bounds2d& bounds,
                              double resolution) {
  if (!(resolution > 0)) throw std::invalid_argument("grid_heightfield: resolution");
  HeightRaster g = HeightRaster::make(bounds, resolution);
  MatX<S> xy(2, g.cols());
  for (int r = 0; r < g.rows(); ++r) {
    for (int c = 0; c < g.cols(); ++c) {
      xy(0, c) = S(g.cx(c));
      xy(1, c) = S(g.cy(r));
    }
    const VecX<S> h = hf.forward(xy);
    for (int c = 0; c < g.cols(); ++c) g.values(r, c) = double(h[c]);
  }
  return g;
}

/// Number of frames whose nominal ground footprint covers each cell. The
/// footprint is the beam fan intersected with the horizontal plane z = ground_z
/// (training-independent by construction).
Eigen::MatrixXi ensonification_count(const std::vector<Pose<double>>& poses,
                                     const SonarIntrinsics& intr,
                                     const Bounds2d& bounds, double resolution,
                                     double ground_z);

/// Mask raster cells with fewer than min_count ensonifications.
void apply_ensonification_mask(HeightRaster& g, const Eigen::MatrixXi& counts,
                               int min_count);

/// Keep only cells at least `margin` meters inside the raster's outer edge.
void apply_inner_crop(HeightRaster& g, double margin);

/// MAE and population STD of signed errors (est - truth) over jointly valid
/// cells. Throws if no cell is jointly valid.
std::pair<double, double> mae_std(const HeightRaster& est, const HeightRaster& truth);

/// SSIM between the two rasters treated as 16-bit grayscale images: jointly
/// min-max normalized, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// dynamic range 65535, averaged over fully valid windows inside the joint
/// valid crop.
double ssim(const HeightRaster& est, const HeightRaster& truth);

void write_grid(const std::string& path, const HeightRaster& g);
HeightRaster read_grid(const std::string& path);

}  // namespace flsmap
