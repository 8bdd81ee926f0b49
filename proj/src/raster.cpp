#include "flsmap/raster.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace flsmap {

double HeightRaster::interpolate(double x, double y) const {
  // Sample between cell centers; clamp at the border.
  double gx = (x - origin_x) / cell - 0.5;
  double gy = (y - origin_y) / cell - 0.5;
  gx = std::min(std::max(gx, 0.0), double(cols() - 1));
  gy = std::min(std::max(gy, 0.0), double(rows() - 1));
  const int c0 = std::min(int(gx), cols() - 2 >= 0 ? cols() - 2 : 0);
  const int r0 = std::min(int(gy), rows() - 2 >= 0 ? rows() - 2 : 0);
  const int c1 = std::min(c0 + 1, cols() - 1);
  const int r1 = std::min(r0 + 1, rows() - 1);
  const double fx = gx - c0, fy = gy - r0;
  return values(r0, c0) * (1 - fx) * (1 - fy) + values(r0, c1) * fx * (1 - fy) +
         values(r1, c0) * (1 - fx) * fy + values(r1, c1) * fx * fy;
}

Eigen::MatrixXi ensonification_count(const std::vector<Pose<double>>& poses,
                                     const SonarIntrinsics& intr,
                                     const Bounds2d& bounds, double resolution,
                                     double ground_z) {
  HeightRaster grid = HeightRaster::make(bounds, resolution);
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(grid.rows(), grid.cols());
  Eigen::MatrixXi stamp = Eigen::MatrixXi::Constant(grid.rows(), grid.cols(), -1);

  const int n_phi = 128;
  auto mark = [&](double x, double y, int frame) {
    const int c = int((x - grid.origin_x) / resolution);
    const int r = int((y - grid.origin_y) / resolution);
    if (c < 0 || c >= grid.cols() || r < 0 || r >= grid.rows()) return;
    if (stamp(r, c) == frame) return;
    stamp(r, c) = frame;
    counts(r, c) += 1;
  };

  for (size_t f = 0; f < poses.size(); ++f) {
    const Pose<double>& pose = poses[f];
    for (int beam = 0; beam < intr.n_beams; ++beam) {
      const double theta =
          -0.5 * intr.hfov + (beam + 0.5) * intr.hfov / intr.n_beams;
      // Walk the elevation fan; each depressed direction meets the nominal
      // ground plane at one range. Stamp points between consecutive crossings.
      double px = 0, py = 0;
      bool have_prev = false;
      for (int i = 0; i <= n_phi; ++i) {
        const double phi = intr.phi_min + (intr.phi_max - intr.phi_min) * i / n_phi;
        const Vec3<double> dir =
            pose.rotation * polar_to_local(PolarPoint<double>{1.0, theta, phi});
        if (dir.z() >= -1e-9) {
          have_prev = false;
          continue;
        }
        const double r = (pose.translation.z() - ground_z) / (-dir.z());
        if (r < intr.r_min || r > intr.r_max) {
          have_prev = false;
          continue;
        }
        const double x = pose.translation.x() + r * dir.x();
        const double y = pose.translation.y() + r * dir.y();
        if (have_prev) {
          const double dist = std::hypot(x - px, y - py);
          const int steps = std::max(1, int(dist / (0.5 * resolution)));
          for (int s = 1; s <= steps; ++s)
            mark(px + (x - px) * s / steps, py + (y - py) * s / steps, int(f));
        } else {
          mark(x, y, int(f));
        }
        px = x;
        py = y;
        have_prev = true;
      }
    }
  }
  return counts;
}

void apply_ensonification_mask(HeightRaster& g, const Eigen::MatrixXi& counts,
                               int min_count) {
  if (counts.rows() != g.values.rows() || counts.cols() != g.values.cols())
    throw std::invalid_argument("ensonification mask: shape mismatch");
  for (int r = 0; r < g.rows(); ++r)
    for (int c = 0; c < g.cols(); ++c)
      if (counts(r, c) < min_count) g.values(r, c) = HeightRaster::invalid_value();
}

void apply_inner_crop(HeightRaster& g, double margin) {
  const int m = int(std::lround(margin / g.cell));
  for (int r = 0; r < g.rows(); ++r)
    for (int c = 0; c < g.cols(); ++c)
      if (r < m || c < m || r >= g.rows() - m || c >= g.cols() - m)
        g.values(r, c) = HeightRaster::invalid_value();
}

static void check_aligned(const HeightRaster& a, const HeightRaster& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() ||
      std::abs(a.cell - b.cell) > 1e-12 || std::abs(a.origin_x - b.origin_x) > 1e-9 ||
      std::abs(a.origin_y - b.origin_y) > 1e-9)
    throw std::invalid_argument("rasters are not aligned");
}

std::pair<double, double> mae_std(const HeightRaster& est, const HeightRaster& truth) {
  check_aligned(est, truth);
  double sum_abs = 0, sum = 0, sum_sq = 0;
  int64_t n = 0;
  for (int r = 0; r < est.rows(); ++r)
    for (int c = 0; c < est.cols(); ++c) {
      if (!est.valid(r, c) || !truth.valid(r, c)) continue;
      const double e = est.values(r, c) - truth.values(r, c);
      sum_abs += std::abs(e);
      sum += e;
      sum_sq += e * e;
      ++n;
    }
  if (n == 0) throw std::runtime_error("mae_std: no jointly valid cells");
  const double mean = sum / double(n);
  const double var = std::max(0.0, sum_sq / double(n) - mean * mean);
  return {sum_abs / double(n), std::sqrt(var)};
}

double ssim(const HeightRaster& est, const HeightRaster& truth) {
  check_aligned(est, truth);

  // Joint valid crop rectangle; per-raster value ranges over jointly valid
  // cells (a shared offset or scale then maps both to the same image).
  int r0 = est.rows(), r1 = -1, c0 = est.cols(), c1 = -1;
  double lo_a = 1e300, hi_a = -1e300, lo_b = 1e300, hi_b = -1e300;
  for (int r = 0; r < est.rows(); ++r)
    for (int c = 0; c < est.cols(); ++c) {
      if (!est.valid(r, c) || !truth.valid(r, c)) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
      lo_a = std::min(lo_a, est.values(r, c));
      hi_a = std::max(hi_a, est.values(r, c));
      lo_b = std::min(lo_b, truth.values(r, c));
      hi_b = std::max(hi_b, truth.values(r, c));
    }
  if (r1 < r0) throw std::runtime_error("ssim: no jointly valid cells");

  const int rows = r1 - r0 + 1, cols = c1 - c0 + 1;
  const double span_a = hi_a - lo_a, span_b = hi_b - lo_b;
  // Quantize each to 16-bit grayscale over its own range.
  Eigen::MatrixXd a(rows, cols), b(rows, cols);
  Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic> ok(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const bool v = est.valid(r0 + r, c0 + c) && truth.valid(r0 + r, c0 + c);
      ok(r, c) = v ? 1 : 0;
      if (!v) {
        a(r, c) = b(r, c) = 0;
        continue;
      }
      const double ea = span_a > 0 ? (est.values(r0 + r, c0 + c) - lo_a) / span_a : 0.0;
      const double eb = span_b > 0 ? (truth.values(r0 + r, c0 + c) - lo_b) / span_b : 0.0;
      a(r, c) = std::round(ea * 65535.0);
      b(r, c) = std::round(eb * 65535.0);
    }

  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kRange = 65535.0;
  const double c1v = (0.01 * kRange) * (0.01 * kRange);
  const double c2v = (0.03 * kRange) * (0.03 * kRange);
  double w[kWin];
  double wsum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - (kWin - 1) / 2.0;
    w[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    wsum += w[i];
  }
  for (double& v : w) v /= wsum;

  double acc = 0;
  int64_t windows = 0;
  for (int r = 0; r + kWin <= rows; ++r) {
    for (int c = 0; c + kWin <= cols; ++c) {
      bool all_ok = true;
      for (int i = 0; i < kWin && all_ok; ++i)
        for (int j = 0; j < kWin; ++j)
          if (!ok(r + i, c + j)) {
            all_ok = false;
            break;
          }
      if (!all_ok) continue;
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double ww = w[i] * w[j];
          const double va = a(r + i, c + j);
          const double vb = b(r + i, c + j);
          mx += ww * va;
          my += ww * vb;
          sxx += ww * va * va;
          syy += ww * vb * vb;
          sxy += ww * va * vb;
        }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cxy = sxy - mx * my;
      const double s = ((2 * mx * my + c1v) * (2 * cxy + c2v)) /
                       ((mx * mx + my * my + c1v) * (vx + vy + c2v));
      acc += s;
      ++windows;
    }
  }
  if (windows == 0) {
    // Region smaller than one window: fall back to a single global window.
    double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
    int64_t n = 0;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        if (!ok(r, c)) continue;
        mx += a(r, c);
        my += b(r, c);
        ++n;
      }
    mx /= double(n);
    my /= double(n);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        if (!ok(r, c)) continue;
        sxx += (a(r, c) - mx) * (a(r, c) - mx);
        syy += (b(r, c) - my) * (b(r, c) - my);
        sxy += (a(r, c) - mx) * (b(r, c) - my);
      }
    sxx /= double(n);
    syy /= double(n);
    sxy /= double(n);
    return ((2 * mx * my + c1v) * (2 * sxy + c2v)) /
           ((mx * mx + my * my + c1v) * (sxx + syy + c2v));
  }
  return acc / double(windows);
}

static constexpr char kGridMagic[4] = {'F', 'L', 'S', 'G'};

void write_grid(const std::string& path, const HeightRaster& g) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write grid: " + path);
  f.write(kGridMagic, 4);
  const uint32_t w = uint32_t(g.cols()), h = uint32_t(g.rows());
  const float cell = float(g.cell);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&cell), 4);
  const float ox = float(g.origin_x), oy = float(g.origin_y);
  f.write(reinterpret_cast<const char*>(&ox), 4);
  f.write(reinterpret_cast<const char*>(&oy), 4);
  std::vector<float> row(g.cols());
  for (int r = 0; r < g.rows(); ++r) {
    for (int c = 0; c < g.cols(); ++c) row[c] = float(g.values(r, c));
    f.write(reinterpret_cast<const char*>(row.data()),
            std::streamsize(row.size() * sizeof(float)));
  }
}

HeightRaster read_grid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open grid: " + path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, kGridMagic, 4) != 0)
    throw std::runtime_error("bad grid magic: " + path);
  uint32_t w = 0, h = 0;
  float cell = 0, ox = 0, oy = 0;
  f.read(reinterpret_cast<char*>(&w), 4);
  f.read(reinterpret_cast<char*>(&h), 4);
  f.read(reinterpret_cast<char*>(&cell), 4);
  f.read(reinterpret_cast<char*>(&ox), 4);
  f.read(reinterpret_cast<char*>(&oy), 4);
  if (w == 0 || h == 0 || w > (1u << 20) || h > (1u << 20) || !(cell > 0))
    throw std::runtime_error("bad grid header: " + path);
  HeightRaster g;
  g.cell = cell;
  g.origin_x = ox;
  g.origin_y = oy;
  g.values.resize(h, w);
  std::vector<float> row(w);
  for (uint32_t r = 0; r < h; ++r) {
    f.read(reinterpret_cast<char*>(row.data()),
           std::streamsize(row.size() * sizeof(float)));
    for (uint32_t c = 0; c < w; ++c) g.values(r, c) = row[c];
  }
  if (!f) throw std::runtime_error("truncated grid: " + path);
  return g;
}

}  // namespace flsmap
