#include "doctest.h"
#include "flsmap/mlp.hpp"
#include "test_utils.hpp"

using namespace flsmap;

namespace {

Mlp<double> make_mlp(int in, int layers, int width, int out, Activation out_act,
                     uint64_t seed) {
  MlpSpec spec;
  spec.input_dim = in;
  spec.hidden_layers = layers;
  spec.hidden_width = width;
  spec.output_dim = out;
  spec.output_act = out_act;
  Mlp<double> m;
  Rng rng(seed);
  m.init(spec, rng);
  return m;
}

/// Naive forward with explicit index loops, independent of the Eigen path.
MatX<double> naive_forward(const Mlp<double>& m, const MatX<double>& x) {
  MatX<double> a = x;
  for (int l = 0; l < m.layer_count(); ++l) {
    MatX<double> z(m.weights[l].rows(), a.cols());
    for (Eigen::Index c = 0; c < a.cols(); ++c)
      for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r) {
        double acc = m.biases[l](r, 0);
        for (Eigen::Index k = 0; k < a.rows(); ++k) acc += m.weights[l](r, k) * a(k, c);
        z(r, c) = acc;
      }
    const bool last = l == m.layer_count() - 1;
    const Activation act = last ? m.spec.output_act : m.spec.hidden_act;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      double& v = z.data()[i];
      if (act == Activation::kRelu) v = std::max(v, 0.0);
      if (act == Activation::kSigmoid) v = 1.0 / (1.0 + std::exp(-v));
    }
    a = z;
  }
  return a;
}

}  // namespace

TEST_SUITE("gradnet") {

TEST_CASE("mlp forward trivial cases") {
  Mlp<double> m = make_mlp(2, 1, 4, 1, Activation::kSigmoid, 1);
  for (auto& w : m.weights) w.setZero();
  m.biases.back()(0, 0) = 0.7;
  MatX<double> x = MatX<double>::Random(2, 3);
  const MatX<double> y = mlp_forward(m, x);
  for (int c = 0; c < 3; ++c)
    CHECK(y(0, c) == doctest::Approx(1.0 / (1.0 + std::exp(-0.7))));

  Mlp<double> lin = make_mlp(1, 0, 0, 1, Activation::kIdentity, 2);
  lin.weights[0](0, 0) = 2.0;
  lin.biases[0](0, 0) = 0.0;
  MatX<double> x3(1, 1);
  x3 << 3.0;
  CHECK(mlp_forward(lin, x3)(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("mlp forward matches naive oracle") {
  Mlp<double> m = make_mlp(5, 2, 64, 1, Activation::kIdentity, 3);
  Rng rng(9);
  MatX<double> x(5, 7);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-2, 2);
  const MatX<double> y = mlp_forward(m, x);
  const MatX<double> ref = naive_forward(m, x);
  CHECK((y - ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mlp backward: zero upstream and linear case") {
  Mlp<double> m = make_mlp(3, 2, 8, 2, Activation::kSigmoid, 4);
  MlpSaved<double> saved;
  MatX<double> x = MatX<double>::Random(3, 5);
  mlp_forward(m, x, &saved);
  const MatX<double> zero_up = MatX<double>::Zero(2, 5);
  const MatX<double> dx = mlp_backward(m, saved, zero_up);
  CHECK(dx.norm() == 0);
  for (const auto& g : m.w_grad) CHECK(g.norm() == 0);

  Mlp<double> lin = make_mlp(1, 0, 0, 1, Activation::kIdentity, 5);
  lin.weights[0](0, 0) = 2.0;
  MlpSaved<double> ls;
  MatX<double> x1(1, 1);
  x1 << 1.5;
  mlp_forward(lin, x1, &ls);
  const MatX<double> one_up = MatX<double>::Ones(1, 1);
  const MatX<double> dx1 = mlp_backward(lin, ls, one_up);
  CHECK(dx1(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("mlp backward matches finite differences on every parameter") {
  Mlp<double> m = make_mlp(4, 2, 8, 1, Activation::kIdentity, 6);
  ParamStore<double> store;
  m.register_params(store, "m");

  Rng rng(13);
  MatX<double> x(4, 6);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.5, 1.5);
  MatX<double> up(1, 6);
  for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = rng.uniform(-1, 1);

  store.zero_grads();
  MlpSaved<double> saved;
  mlp_forward(m, x, &saved);
  mlp_backward(m, saved, up);

  auto loss = [&]() { return (mlp_forward(m, x).array() * up.array()).sum(); };
  const auto rep = testutil::finite_difference_check(store, loss, 1e-5, 1, 1e-8);
  CHECK(rep.max_rel_err < 1e-6);
  CHECK(rep.nonzero > 0);
}

TEST_CASE("mlp sigmoid output backward matches finite differences") {
  Mlp<double> m = make_mlp(3, 2, 6, 1, Activation::kSigmoid, 61);
  ParamStore<double> store;
  m.register_params(store, "m");
  Rng rng(62);
  MatX<double> x(3, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);

  store.zero_grads();
  MlpSaved<double> saved;
  mlp_forward(m, x, &saved);
  const MatX<double> ones_up = MatX<double>::Ones(1, 4);
  mlp_backward(m, saved, ones_up);
  auto loss = [&]() { return mlp_forward(m, x).sum(); };
  const auto rep = testutil::finite_difference_check(store, loss, 1e-5, 1, 1e-8);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("input gradient and its parameter backward") {
  Mlp<double> m = make_mlp(3, 2, 8, 1, Activation::kIdentity, 7);
  ParamStore<double> store;
  m.register_params(store, "m");

  Rng rng(15);
  MatX<double> x(3, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  MatX<double> tangents(3, 2);
  for (Eigen::Index i = 0; i < tangents.size(); ++i)
    tangents.data()[i] = rng.uniform(-1, 1);

  // Input gradient agrees with the gradient returned by mlp_backward.
  MlpSaved<double> saved;
  mlp_forward(m, x, &saved);
  const MatX<double> ones2 = MatX<double>::Ones(1, 2);
  const MatX<double> gi = mlp_input_gradient(m, saved, ones2);
  Mlp<double> copy = m;
  MlpSaved<double> s2;
  mlp_forward(copy, x, &s2);
  const MatX<double> gb = mlp_backward(copy, s2, ones2);
  CHECK((gi - gb).norm() < 1e-14);

  // d(sum_cols v . dy/dx)/dW against finite differences.
  store.zero_grads();
  mlp_input_gradient_backward(m, saved, tangents);
  auto loss = [&]() {
    MlpSaved<double> s;
    mlp_forward(m, x, &s);
    const MatX<double> g = mlp_input_gradient(m, s, ones2);
    return (g.array() * tangents.array()).sum();
  };
  const auto rep = testutil::finite_difference_check(store, loss, 1e-6, 1, 1e-8);
  CHECK(rep.max_rel_err < 1e-5);
  CHECK(rep.nonzero > 0);
}

TEST_CASE("adam first step and zero-gradient behavior") {
  MatX<double> p(1, 1), g(1, 1);
  p(0, 0) = 1.0;
  g(0, 0) = 1.0;
  ParamStore<double> store;
  store.add("p", p, g);
  store.adam_step(0.05, 0.9, 0.999, 1e-8, 1);
  CHECK(p(0, 0) == doctest::Approx(1.0 - 0.05 / (1.0 + 1e-8)).epsilon(1e-12));

  g(0, 0) = 0.0;
  MatX<double> q(2, 2), qg(2, 2);
  q.setConstant(3.0);
  qg.setZero();
  ParamStore<double> s2;
  s2.add("q", q, qg);
  for (int t = 1; t <= 10; ++t) s2.adam_step(0.05, 0.9, 0.999, 1e-8, t);
  CHECK((q.array() == 3.0).all());
}

TEST_CASE("adam minimizes x^2 and matches a scalar recurrence") {
  MatX<double> x(1, 1), g(1, 1);
  x(0, 0) = 1.0;
  ParamStore<double> store;
  store.add("x", x, g);

  // Independent recurrence.
  double xr = 1.0, m = 0, v = 0;
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 100; ++t) {
    g(0, 0) = 2.0 * x(0, 0);
    store.adam_step(lr, b1, b2, eps, t);

    const double gr = 2.0 * xr;
    m = b1 * m + (1 - b1) * gr;
    v = b2 * v + (1 - b2) * gr * gr;
    xr -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    CHECK(x(0, 0) == doctest::Approx(xr).epsilon(1e-12));
  }
  CHECK(std::abs(x(0, 0)) < 0.05);
}

TEST_CASE("adam update direction is -sign(g) for fresh moments") {
  for (const double g0 : {3.0, -0.25, 1e-6}) {
    MatX<double> p(1, 1), g(1, 1);
    p(0, 0) = 0.0;
    g(0, 0) = g0;
    ParamStore<double> store;
    store.add("p", p, g);
    store.adam_step(0.01, 0.9, 0.999, 1e-12, 1);
    CHECK(p(0, 0) * g0 < 0);
  }
}

TEST_CASE("lr schedule") {
  CHECK(lr_schedule(0) == doctest::Approx(0.05));
  CHECK(lr_schedule(599) == doctest::Approx(0.05));
  CHECK(lr_schedule(600) == doctest::Approx(0.0485));
  CHECK(lr_schedule(1200) == doctest::Approx(0.05 * 0.97 * 0.97));
  CHECK_THROWS(lr_schedule(-1));
}

TEST_CASE("param store shapes and zero_grads") {
  MatX<double> a(2, 3), ag(2, 3), b(4, 1), bg(4, 1);
  a.setRandom();
  ag.setRandom();
  b.setRandom();
  bg.setRandom();
  ParamStore<double> store;
  store.add("a", a, ag);
  store.add("b", b, bg);
  CHECK(store.total_params() == 10);
  store.zero_grads();
  CHECK(ag.norm() == 0);
  CHECK(bg.norm() == 0);
  MatX<double> bad(1, 1), badg(2, 1);
  CHECK_THROWS(store.add("bad", bad, badg));
}

}  // TEST_SUITE
