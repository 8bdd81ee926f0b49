#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "flsmap/checkpoint.hpp"
#include "flsmap/cli.hpp"
#include "flsmap/config.hpp"
#include "flsmap/dataset_io.hpp"
#include "flsmap/raster.hpp"
#include "test_utils.hpp"

using namespace flsmap;

namespace {

std::string slurp(const std::string& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

HeightRaster noisy_raster(int rows, int cols, uint64_t seed, double scale = 1.0) {
  HeightRaster g;
  g.origin_x = 0;
  g.origin_y = 0;
  g.cell = 0.1;
  g.values.resize(rows, cols);
  Rng rng(seed);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      g.values(r, c) = scale * std::sin(0.3 * r) * std::cos(0.2 * c) +
                       0.1 * scale * rng.uniform(-1, 1);
  return g;
}

/// Independently coded direct-convolution SSIM for the oracle comparison:
/// quantizes with the same joint range rule, then walks windows explicitly.
double ssim_oracle(const HeightRaster& est, const HeightRaster& truth) {
  const int rows = int(est.values.rows()), cols = int(est.values.cols());
  double lo_a = 1e300, hi_a = -1e300, lo_b = 1e300, hi_b = -1e300;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      lo_a = std::min(lo_a, est.values(r, c));
      hi_a = std::max(hi_a, est.values(r, c));
      lo_b = std::min(lo_b, truth.values(r, c));
      hi_b = std::max(hi_b, truth.values(r, c));
    }
  const double span_a = hi_a > lo_a ? hi_a - lo_a : 1.0;
  const double span_b = hi_b > lo_b ? hi_b - lo_b : 1.0;
  auto quant_a = [&](double v) { return std::round((v - lo_a) / span_a * 65535.0); };
  auto quant_b = [&](double v) { return std::round((v - lo_b) / span_b * 65535.0); };

  double gw[11][11];
  double tot = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      const double di = i - 5.0, dj = j - 5.0;
      gw[i][j] = std::exp(-(di * di) / (2 * 1.5 * 1.5)) * std::exp(-(dj * dj) / (2 * 1.5 * 1.5));
      tot += gw[i][j];
    }
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) gw[i][j] /= tot;

  const double C1 = (0.01 * 65535) * (0.01 * 65535);
  const double C2 = (0.03 * 65535) * (0.03 * 65535);
  double acc = 0;
  int n = 0;
  for (int r = 0; r + 11 <= rows; ++r)
    for (int c = 0; c + 11 <= cols; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          mx += gw[i][j] * quant_a(est.values(r + i, c + j));
          my += gw[i][j] * quant_b(truth.values(r + i, c + j));
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double dx = quant_a(est.values(r + i, c + j)) - mx;
          const double dy = quant_b(truth.values(r + i, c + j)) - my;
          vx += gw[i][j] * dx * dx;
          vy += gw[i][j] * dy * dy;
          cxy += gw[i][j] * dx * dy;
        }
      acc += ((2 * mx * my + C1) * (2 * cxy + C2)) /
             ((mx * mx + my * my + C1) * (vx + vy + C2));
      ++n;
    }
  return acc / n;
}

}  // namespace

TEST_SUITE("evalcli") {

TEST_CASE("config parsing, typed getters, and round trip") {
  const std::string text =
      "# comment\n[sonar]\nr_min = 1.5\nn_beams = 256\n\n[train]\nsteps = 60000\n"
      "flag = true\nweights = 0.5 1 2.5  ; inline comment\n";
  const Config c = Config::parse(text);
  CHECK(c.get_double("sonar.r_min", 0) == 1.5);
  CHECK(c.get_int("sonar.n_beams", 0) == 256);
  CHECK(c.get_int64("train.steps", 0) == 60000);
  CHECK(c.get_bool("train.flag", false));
  CHECK(c.get_doubles("train.weights") == std::vector<double>{0.5, 1, 2.5});
  CHECK(c.get_double("missing.key", 7.0) == 7.0);

  const Config c2 = Config::parse(c.to_text());
  CHECK(c2.to_text() == c.to_text());

  CHECK_THROWS(Config::parse("[unterminated\n"));
  CHECK_THROWS(Config::parse("keyonly\n"));
  CHECK_THROWS(Config::parse("[a]\nx = notanumber\n").get_double("a.x", 0));
}

TEST_CASE("pose file round trip is byte identical") {
  namespace fs = std::filesystem;
  std::vector<FramePose> poses;
  Rng rng(5);
  for (int i = 0; i < 7; ++i) {
    FramePose p;
    p.frame_id = i;
    p.time = i * 0.25;
    const Eigen::Quaterniond q =
        Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal())
            .normalized();
    Pose<double> pose;
    pose.rotation = q.toRotationMatrix();
    pose.translation = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0, 6)};
    p.set_pose(pose);
    poses.push_back(p);
  }
  const std::string p1 = "/tmp/flsmap_poses1.txt", p2 = "/tmp/flsmap_poses2.txt";
  write_pose_file(p1, poses);
  const auto loaded = read_pose_file(p1);
  REQUIRE(loaded.size() == poses.size());
  for (size_t i = 0; i < poses.size(); ++i) {
    CHECK((loaded[i].pose.rotation - poses[i].pose.rotation).norm() < 1e-12);
    CHECK((loaded[i].pose.translation - poses[i].pose.translation).norm() < 1e-12);
  }
  write_pose_file(p2, loaded);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("intrinsics, frame, altimeter, and grid files round trip") {
  SonarIntrinsics k;
  k.r_min = 0.75;
  k.n_bins = 48;
  k.n_beams = 24;
  write_intrinsics("/tmp/flsmap_intr1.txt", k);
  const SonarIntrinsics k2 = read_intrinsics("/tmp/flsmap_intr1.txt");
  write_intrinsics("/tmp/flsmap_intr2.txt", k2);
  CHECK(slurp("/tmp/flsmap_intr1.txt") == slurp("/tmp/flsmap_intr2.txt"));
  CHECK(k2.r_min == doctest::Approx(0.75));

  Eigen::MatrixXf img(5, 4);
  Rng rng(9);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = float(rng.uniform(0, 1));
  const SonarFrame f = SonarFrame::quantize(img);
  write_frame("/tmp/flsmap_f1.img", f);
  const SonarFrame f2 = read_frame("/tmp/flsmap_f1.img");
  write_frame("/tmp/flsmap_f2.img", f2);
  CHECK(slurp("/tmp/flsmap_f1.img") == slurp("/tmp/flsmap_f2.img"));
  CHECK(std::abs(f2.intensity(2, 1) - img(2, 1)) < 1.0f / 65535.0f + 1e-6f);

  std::vector<AltimeterPoint> pts(3);
  pts[0].point = {1, 2, 3};
  pts[1].point = {4, 5, -0.25};
  pts[1].weight = 0.5;
  pts[2].point = {0.1, 0.2, 0.3};
  write_altimeter("/tmp/flsmap_a1.txt", pts);
  const auto pts2 = read_altimeter("/tmp/flsmap_a1.txt");
  write_altimeter("/tmp/flsmap_a2.txt", pts2);
  CHECK(slurp("/tmp/flsmap_a1.txt") == slurp("/tmp/flsmap_a2.txt"));
  CHECK(pts2[1].weight == doctest::Approx(0.5));

  HeightRaster g = noisy_raster(12, 9, 13);
  g.values(3, 4) = HeightRaster::invalid_value();
  write_grid("/tmp/flsmap_g1.grid", g);
  const HeightRaster g2 = read_grid("/tmp/flsmap_g1.grid");
  write_grid("/tmp/flsmap_g2.grid", g2);
  CHECK(slurp("/tmp/flsmap_g1.grid") == slurp("/tmp/flsmap_g2.grid"));
  CHECK_FALSE(g2.valid(3, 4));
  CHECK(g2.valid(0, 0));
}

TEST_CASE("checkpoint stores config text and restores parameters") {
  MatX<float> w(3, 2), wg(3, 2), b(1, 1), bg(1, 1);
  w << 1, 2, 3, 4, 5, 6;
  b << -0.5;
  wg.setZero();
  bg.setZero();
  ParamStore<float> store;
  store.add("w", w, wg);
  store.add("b", b, bg);
  save_checkpoint("/tmp/flsmap_ck.ckpt", "[x]\nkey = 1\n", store);

  CHECK(load_checkpoint_config("/tmp/flsmap_ck.ckpt") == "[x]\nkey = 1\n");
  MatX<float> w2(3, 2), wg2(3, 2), b2(1, 1), bg2(1, 1);
  w2.setZero();
  b2.setZero();
  ParamStore<float> store2;
  store2.add("w", w2, wg2);
  store2.add("b", b2, bg2);
  load_checkpoint_params("/tmp/flsmap_ck.ckpt", store2);
  CHECK((w2 - w).norm() == 0);
  CHECK(b2(0, 0) == -0.5f);
}

TEST_CASE("grid_heightfield matches direct queries") {
  HashGridConfig gc;
  gc.levels = 4;
  gc.table_size = 1 << 8;
  gc.n_min = 4;
  gc.n_max = 32;
  gc.bounds = {{0, 0}, {10, 10}};
  HeightField<float> hf;
  Rng rng(3);
  hf.init(gc, 2, 16, rng, 0.3f);

  const Bounds2d box{{0, 0}, {10, 10}};
  const HeightRaster g = grid_heightfield(hf, box, 0.1);
  CHECK(g.rows() == 100);
  CHECK(g.cols() == 100);
  for (const auto [r, c] : {std::pair{3, 7}, std::pair{50, 50}, std::pair{99, 0}}) {
    MatX<float> row_xy(2, g.cols());
    for (int cc = 0; cc < g.cols(); ++cc) {
      row_xy(0, cc) = float(g.cx(cc));
      row_xy(1, cc) = float(g.cy(r));
    }
    const VecX<float> row = hf.forward(row_xy);
    CHECK(g.values(r, c) == double(row[c]));  // same batched code path
    const float single = query_height(hf, Vec2<float>(float(g.cx(c)), float(g.cy(r))));
    CHECK(g.values(r, c) == doctest::Approx(double(single)).epsilon(1e-5));
  }

  // Constant field -> constant raster.
  HeightField<float> flat;
  Rng rng2(4);
  flat.init(gc, 2, 16, rng2, 0.0f);
  flat.mlp.biases.back()(0, 0) = 2.5f;
  const HeightRaster cg = grid_heightfield(flat, box, 0.5);
  CHECK((cg.values.array() - 2.5).abs().maxCoeff() < 1e-6);
}

TEST_CASE("ensonification counts: empty, single frame, additivity") {
  SonarIntrinsics k;
  k.r_min = 1;
  k.r_max = 30;
  k.hfov = 120 * M_PI / 180.0;
  k.phi_min = -25 * M_PI / 180.0;
  k.phi_max = -5 * M_PI / 180.0;
  const Bounds2d box{{0, 0}, {20, 20}};

  const Eigen::MatrixXi zero = ensonification_count({}, k, box, 0.5, 0.0);
  CHECK(zero.maxCoeff() == 0);

  Pose<double> pose;
  pose.translation = {2, 10, 4};
  const Eigen::MatrixXi one = ensonification_count({pose}, k, box, 0.5, 0.0);
  CHECK(one.maxCoeff() == 1);
  CHECK(one.sum() > 100);

  const Eigen::MatrixXi two = ensonification_count({pose, pose}, k, box, 0.5, 0.0);
  CHECK((two - 2 * one).cwiseAbs().maxCoeff() == 0);
}

TEST_CASE("mae/std values, oracle, and symmetry") {
  HeightRaster a = noisy_raster(30, 30, 5);
  HeightRaster b = noisy_raster(30, 30, 6);

  CHECK(mae_std(a, a).first == 0.0);
  CHECK(mae_std(a, a).second == 0.0);

  HeightRaster two = a, zero = a;
  two.values.setZero();
  zero.values.setZero();
  two.values(0, 0) = 1;
  two.values(0, 1) = -1;
  zero.values(0, 0) = 0;
  zero.values(0, 1) = 0;
  // restrict to the two cells
  for (int r = 0; r < 30; ++r)
    for (int c = 0; c < 30; ++c)
      if (!(r == 0 && c <= 1)) {
        two.values(r, c) = HeightRaster::invalid_value();
        zero.values(r, c) = HeightRaster::invalid_value();
      }
  const auto [mae2, std2] = mae_std(two, zero);
  CHECK(mae2 == doctest::Approx(1.0));
  CHECK(std2 == doctest::Approx(1.0));

  // Streaming oracle.
  const auto [mae, sd] = mae_std(a, b);
  double sum_abs = 0, sum = 0, sumsq = 0;
  int n = 0;
  for (int r = 0; r < 30; ++r)
    for (int c = 0; c < 30; ++c) {
      const double e = a.values(r, c) - b.values(r, c);
      sum_abs += std::abs(e);
      sum += e;
      sumsq += e * e;
      ++n;
    }
  CHECK(mae == doctest::Approx(sum_abs / n).epsilon(1e-12));
  CHECK(sd == doctest::Approx(std::sqrt(sumsq / n - (sum / n) * (sum / n))).epsilon(1e-12));

  const auto [mab, sab] = mae_std(b, a);
  CHECK(mab == doctest::Approx(mae).epsilon(1e-15));
  CHECK(sab == doctest::Approx(sd).epsilon(1e-12));
}

TEST_CASE("ssim: identity, offsets, degenerate constants, and the conv oracle") {
  HeightRaster a = noisy_raster(64, 64, 7);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

  HeightRaster shifted = a;
  shifted.values.array() += 0.35;
  CHECK(ssim(shifted, a) >= 0.99);

  HeightRaster ca = a, cb = a;
  ca.values.setConstant(5.0);
  cb.values.setConstant(5.0);
  CHECK(ssim(ca, cb) == doctest::Approx(1.0));

  HeightRaster b = noisy_raster(64, 64, 8);
  b.values = 0.7 * a.values + 0.3 * b.values;
  const double mine = ssim(a, b);
  const double oracle = ssim_oracle(a, b);
  CHECK(mine == doctest::Approx(oracle).epsilon(1e-6));
  CHECK(mine < 1.0);
  CHECK(mine > -1.0);
}

TEST_CASE("inner crop never reads outside cells") {
  HeightRaster a = noisy_raster(50, 50, 9);
  HeightRaster b = noisy_raster(50, 50, 10);
  HeightRaster ac = a, bc = b;
  apply_inner_crop(ac, 1.0);  // 10 cells at 0.1 m
  apply_inner_crop(bc, 1.0);
  const auto m1 = mae_std(ac, bc);
  // Corrupt everything outside the crop; metrics must not move.
  HeightRaster a2 = a, b2 = b;
  for (int r = 0; r < 50; ++r)
    for (int c = 0; c < 50; ++c)
      if (r < 10 || c < 10 || r >= 40 || c >= 40) {
        a2.values(r, c) = 1e6;
        b2.values(r, c) = -1e6;
      }
  apply_inner_crop(a2, 1.0);
  apply_inner_crop(b2, 1.0);
  const auto m2 = mae_std(a2, b2);
  CHECK(m1.first == m2.first);
  CHECK(m1.second == m2.second);
  CHECK(ssim(ac, bc) == ssim(a2, b2));
}

TEST_CASE("cli exit codes") {
  const char* bad_verb[] = {"flsmap", "frobnicate"};
  CHECK(run_cli(2, bad_verb) == 2);
  const char* no_args[] = {"flsmap"};
  CHECK(run_cli(1, no_args) == 2);
  const char* bad_eval[] = {"flsmap", "eval", "/tmp/definitely_missing.grid",
                            "/tmp/also_missing.grid"};
  CHECK(run_cli(4, bad_eval) == 1);
  const char* help[] = {"flsmap", "--help"};
  CHECK(run_cli(2, help) == 0);

  HeightRaster g = noisy_raster(40, 40, 11);
  write_grid("/tmp/flsmap_eval_self.grid", g);
  const char* eval_self[] = {"flsmap", "eval", "/tmp/flsmap_eval_self.grid",
                             "/tmp/flsmap_eval_self.grid"};
  CHECK(run_cli(4, eval_self) == 0);
}

}  // TEST_SUITE
