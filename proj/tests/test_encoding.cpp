#include "doctest.h"
#include "flsmap/hash_encoding.hpp"
#include "flsmap/sh.hpp"
#include "test_utils.hpp"

using namespace flsmap;

namespace {

HashGrid<double> make_grid(int levels, int table_size, int n_min, int n_max,
                           uint64_t seed, double init = 0.5) {
  HashGridConfig gc;
  gc.levels = levels;
  gc.table_size = table_size;
  gc.features = 2;
  gc.n_min = n_min;
  gc.n_max = n_max;
  gc.bounds = {{0, 0}, {1, 1}};
  HashGrid<double> g;
  Rng rng(seed);
  g.init(gc, rng, init);
  return g;
}

}  // namespace

TEST_SUITE("encoding") {

TEST_CASE("hash_index basics") {
  CHECK(hash_index(0, 0, 1 << 15) == 0);
  CHECK(hash_index(1, 0, 1 << 15) == 1);
  for (int i = 0; i < 100; ++i)
    CHECK(hash_index(uint32_t(i), uint32_t(2 * i + 1), 256) ==
          hash_index(uint32_t(i), uint32_t(2 * i + 1), 256));
}

TEST_CASE("hash_index occupancy is near uniform") {
  const uint32_t T = 1 << 12;
  const int n = 400000;
  std::vector<int> counts(T, 0);
  Rng rng(17);
  for (int i = 0; i < n; ++i)
    counts[hash_index(uint32_t(rng.below(1 << 20)), uint32_t(rng.below(1 << 20)), T)]++;
  const double expected = double(n) / T;
  double stat = 0;
  for (const int c : counts) stat += (c - expected) * (c - expected) / expected;
  const double p = testutil::chi2_pvalue(stat, int(T) - 1);
  CHECK(p > 0.01);
}

TEST_CASE("encode is exact at vertices and averages at cell centers") {
  for (int res : {4, 7, 16}) {
    HashGrid<double> g = make_grid(1, 1 << 10, res, res, 5);
    REQUIRE(g.cfg.level_dense(0));
    const int cx = res / 2, cy = res / 3;
    const Vec2<double> vertex(double(cx) / res, double(cy) / res);
    const VecX<double> f = encode_position(g, vertex);
    const auto expect = g.tables.col(g.entry_index(0, cx, cy));
    CHECK((f - expect).norm() == doctest::Approx(0).epsilon(1e-15));

    const Vec2<double> center((cx + 0.5) / res, (cy + 0.5) / res);
    const VecX<double> fc = encode_position(g, center);
    VecX<double> mean = VecX<double>::Zero(2);
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        mean += g.tables.col(g.entry_index(0, cx + dx, cy + dy));
    mean /= 4;
    CHECK((fc - mean).norm() < 1e-14);
  }
}

TEST_CASE("encode is continuous across cell boundaries") {
  HashGrid<double> g = make_grid(4, 1 << 8, 4, 32, 9);
  Rng rng(21);
  const double eps = 1e-7;
  for (int i = 0; i < 100; ++i) {
    // Segment deliberately crossing a lattice line of the finest level.
    const int res = g.level_res.back();
    const double bx = double(1 + int(rng.below(res - 1))) / res;
    const double y = rng.uniform(0.05, 0.95);
    const VecX<double> a = encode_position(g, {bx - eps, y});
    const VecX<double> b = encode_position(g, {bx + eps, y});
    CHECK((a - b).norm() < 1e-3);  // Lipschitz bound ~ |t|max * res * 4 * eps
  }
}

TEST_CASE("encode_backward matches finite differences on touched entries") {
  HashGrid<double> g = make_grid(3, 1 << 6, 4, 16, 33);
  MatX<double> pts(2, 2);
  pts << 0.37, 0.81, 0.62, 0.15;
  MatX<double> feats;
  EncodeSaved<double> saved;
  encode_batch(g, pts, -1, feats, saved);

  Rng rng(5);
  MatX<double> upstream(feats.rows(), feats.cols());
  for (Eigen::Index i = 0; i < upstream.size(); ++i)
    upstream.data()[i] = rng.uniform(-1, 1);

  g.grad.setZero();
  MatX<double> d_pts;
  encode_backward(g, saved, upstream, &d_pts);

  auto loss = [&]() {
    MatX<double> f;
    EncodeSaved<double> s2;
    encode_batch(g, pts, -1, f, s2);
    return (f.array() * upstream.array()).sum();
  };

  const double h = 1e-4;
  double worst = 0;
  for (int c = 0; c < saved.n; ++c)
    for (int l = 0; l < saved.levels; ++l)
      for (int corner = 0; corner < 4; ++corner) {
        const int id = saved.idx(4 * l + corner, c);
        for (int fdim = 0; fdim < 2; ++fdim) {
          const double orig = g.tables(fdim, id);
          g.tables(fdim, id) = orig + h;
          const double lp = loss();
          g.tables(fdim, id) = orig - h;
          const double lm = loss();
          g.tables(fdim, id) = orig;
          const double fd = (lp - lm) / (2 * h);
          const double an = g.grad(fdim, id);
          worst = std::max(worst,
                           std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-9}));
        }
      }
  CHECK(worst < 1e-5);

  // Position gradient against finite differences.
  for (int c = 0; c < 2; ++c)
    for (int axis = 0; axis < 2; ++axis) {
      const double orig = pts(axis, c);
      pts(axis, c) = orig + h;
      const double lp = loss();
      pts(axis, c) = orig - h;
      const double lm = loss();
      pts(axis, c) = orig;
      const double fd = (lp - lm) / (2 * h);
      CHECK(std::abs(fd - d_pts(axis, c)) <
            1e-5 * std::max({std::abs(fd), std::abs(d_pts(axis, c)), 1e-6}));
    }
}

TEST_CASE("encode_backward trivial cases") {
  HashGrid<double> g = make_grid(2, 1 << 6, 4, 8, 3);
  MatX<double> pts(2, 1);
  pts << 0.25, 0.5;  // exact vertex of the 4-res level
  MatX<double> feats;
  EncodeSaved<double> saved;
  encode_batch(g, pts, -1, feats, saved);

  g.grad.setZero();
  const MatX<double> zero_up = MatX<double>::Zero(feats.rows(), 1);
  encode_backward(g, saved, zero_up);
  CHECK(g.grad.norm() == 0);

  MatX<double> up = MatX<double>::Zero(feats.rows(), 1);
  up(0, 0) = 1.0;  // level 0, feature 0
  g.grad.setZero();
  encode_backward(g, saved, up);
  const int vertex_id = g.entry_index(0, 1, 2);
  CHECK(g.grad(0, vertex_id) == doctest::Approx(1.0));
  double off_vertex = 0;
  for (int c = 0; c < 4; ++c) {
    const int id = saved.idx(c, 0);
    if (id != vertex_id) off_vertex += std::abs(g.grad(0, id));
  }
  CHECK(off_vertex == doctest::Approx(0.0));
}

TEST_CASE("progressive masking zeroes inactive levels") {
  HashGrid<double> g = make_grid(4, 1 << 8, 4, 32, 13);
  MatX<double> pts(2, 1);
  pts << 0.3, 0.7;
  MatX<double> feats;
  EncodeSaved<double> saved;
  encode_batch(g, pts, 2, feats, saved);
  CHECK(feats.col(0).segment(0, 4).norm() > 0);
  CHECK(feats.col(0).segment(4, 4).norm() == 0);

  g.grad.setZero();
  const MatX<double> ones_up = MatX<double>::Ones(feats.rows(), 1);
  encode_backward(g, saved, ones_up);
  // Entries of levels 2,3 receive no gradient.
  for (int l = 2; l < 4; ++l)
    CHECK(g.grad.middleCols(g.level_offset[l], g.level_offset[l + 1] - g.level_offset[l])
              .norm() == 0);
}

TEST_CASE("sh degree-0 and z-axis values") {
  CHECK(sh_encode(Vec3<double>(0.3, -0.8, 0.52))[0] == doctest::Approx(0.282095).epsilon(1e-5));
  const auto y = sh_encode(Vec3<double>(0, 0, 1));
  CHECK(y[2] == doctest::Approx(0.488603).epsilon(1e-5));
  // Non-unit input is normalized first.
  const auto y2 = sh_encode(Vec3<double>(0, 0, 7.0));
  CHECK((y - y2).norm() < 1e-14);
}

TEST_CASE("sh rotation average vanishes for degree >= 1") {
  Rng rng(29);
  const int n = 10000;
  Eigen::Matrix<double, kShDim, 1> mean = Eigen::Matrix<double, kShDim, 1>::Zero();
  Eigen::Matrix<double, kShDim, 1> sq = Eigen::Matrix<double, kShDim, 1>::Zero();
  for (int i = 0; i < n; ++i) {
    Vec3<double> v(rng.normal(), rng.normal(), rng.normal());
    const auto s = sh_encode(v);
    mean += s;
    sq += s.cwiseProduct(s);
  }
  mean /= n;
  sq /= n;
  for (int k = 1; k < kShDim; ++k) {
    const double sd = std::sqrt(std::max(sq[k] - mean[k] * mean[k], 0.0) / n);
    CHECK(std::abs(mean[k]) < 3.5 * sd + 1e-12);
  }
}

TEST_CASE("sh basis is orthonormal under Monte Carlo integration") {
  Rng rng(31);
  const int n = 1000000;
  Eigen::Matrix<double, kShDim, kShDim> gram = Eigen::Matrix<double, kShDim, kShDim>::Zero();
  for (int i = 0; i < n; ++i) {
    Vec3<double> v(rng.normal(), rng.normal(), rng.normal());
    v.normalize();
    const auto s = sh_encode(v);
    gram += s * s.transpose();
  }
  gram *= 4.0 * M_PI / n;
  for (int a = 0; a < kShDim; ++a)
    for (int b = 0; b < kShDim; ++b) {
      const double expect = a == b ? 1.0 : 0.0;
      CHECK(std::abs(gram(a, b) - expect) < 0.02);
    }
}

TEST_CASE("sh jacobian matches finite differences") {
  Rng rng(37);
  for (int i = 0; i < 20; ++i) {
    Vec3<double> v(rng.normal(), rng.normal(), rng.normal());
    const auto j = sh_jacobian(v);
    const double h = 1e-6;
    for (int axis = 0; axis < 3; ++axis) {
      Vec3<double> vp = v, vm = v;
      vp[axis] += h;
      vm[axis] -= h;
      const auto fd = ((sh_encode(vp) - sh_encode(vm)) / (2 * h)).eval();
      for (int k = 0; k < kShDim; ++k)
        CHECK(std::abs(fd[k] - j(k, axis)) <
              1e-6 * std::max({std::abs(fd[k]), std::abs(j(k, axis)), 1.0}));
    }
  }
}

}  // TEST_SUITE
