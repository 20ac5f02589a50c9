#include "cura/nn.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace cura::nn;

namespace {

Mlp random_net(std::vector<int> sizes, std::uint64_t seed) {
  Rng rng(seed);
  Mlp net(std::move(sizes));
  std::normal_distribution<double> n(0.0, 0.5);
  for (Eigen::Index i = 0; i < net.params().size(); ++i) net.params()[i] = n(rng);
  return net;
}

Vector random_vec(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

}  // namespace

TEST_CASE("zero weights give the bias") {
  Mlp net({3, 2});
  net.params().setZero();
  net.bias(0) << 0.25, -1.5;
  Vector x(3);
  x << 4, 5, 6;
  const Vector y = forward(net, x);
  CHECK(y[0] == 0.25);
  CHECK(y[1] == -1.5);
}

TEST_CASE("single linear layer is W x + b exactly") {
  auto net = random_net({4, 3}, 1);
  Rng rng(2);
  const Vector x = random_vec(4, rng);
  const Vector want = net.weight(0) * x + net.bias(0);
  CHECK(forward(net, x) == want);
}

TEST_CASE("deep forward matches the loop evaluator") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto net = random_net({5, 7, 6, 3}, s);
    Rng rng(s + 100);
    const Vector x = random_vec(5, rng);
    CHECK((forward(net, x) - oracle::loop_forward(net, x)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("dimension mismatch is rejected") {
  auto net = random_net({3, 2}, 1);
  CHECK_THROWS_AS(forward(net, Vector(Vector::Zero(4))), std::invalid_argument);
}

TEST_CASE("backward without a cached forward is an error") {
  auto net = random_net({3, 2}, 1);
  Vector g = Vector::Zero(net.params().size());
  CHECK_THROWS_AS(backward(net, MlpCache{}, Matrix::Ones(2, 1), g), std::logic_error);
}

TEST_CASE("parameter and input gradients match finite differences") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto net = random_net({4, 6, 5, 3}, s);
    Rng rng(s + 7);
    const Matrix x = Matrix::NullaryExpr(4, 3, [&]() { return std::normal_distribution<double>(0, 1)(rng); });
    const Matrix w = Matrix::NullaryExpr(3, 3, [&]() { return std::normal_distribution<double>(0, 1)(rng); });
    auto loss = [&](const Mlp& n, const Matrix& in) { return (forward(n, in).array() * w.array()).sum(); };

    MlpCache cache;
    forward(net, x, &cache);
    Vector g = Vector::Zero(net.params().size());
    const Matrix gx = backward(net, cache, w, g);

    const Vector fd = oracle::finite_diff(
        [&](const Vector& p) {
          Mlp n = net;
          n.params() = p;
          return loss(n, x);
        },
        net.params());
    CHECK(oracle::rel_error(g, fd) < 1e-4);

    Vector flat_x = Eigen::Map<const Vector>(x.data(), x.size());
    const Vector fdx = oracle::finite_diff(
        [&](const Vector& v) { return loss(net, Eigen::Map<const Matrix>(v.data(), 4, 3)); }, flat_x);
    CHECK(oracle::rel_error(Eigen::Map<const Vector>(gx.data(), gx.size()), fdx) < 1e-4);
  }
}

TEST_CASE("zero output gradient gives zero gradients; batch gradient is the per-sample sum") {
  auto net = random_net({3, 4, 2}, 3);
  Rng rng(4);
  const Vector a = random_vec(3, rng), b = random_vec(3, rng);
  Matrix both(3, 2);
  both << a, b;
  MlpCache cache;
  forward(net, both, &cache);
  Vector g0 = Vector::Zero(net.params().size());
  backward(net, cache, Matrix::Zero(2, 2), g0);
  CHECK(g0.cwiseAbs().maxCoeff() == 0.0);

  const Matrix og = Matrix::Ones(2, 2);
  Vector g_both = Vector::Zero(net.params().size());
  backward(net, cache, og, g_both);
  Vector g_sep = Vector::Zero(net.params().size());
  for (const Vector* v : {&a, &b}) {
    MlpCache c;
    forward(net, Matrix(*v), &c);
    backward(net, c, Matrix::Ones(2, 1), g_sep);
  }
  CHECK((g_both - g_sep).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gaussian log-prob at the mean with unit std") {
  const Vector mean = Vector::Constant(4, 0.3), log_std = Vector::Zero(4);
  CHECK(gaussian_log_prob(mean, log_std, mean) == doctest::Approx(-2.0 * std::log(2.0 * M_PI)).epsilon(1e-14));
}

TEST_CASE("gaussian log-prob gradients match finite differences") {
  Rng rng(8);
  for (int k = 0; k < 20; ++k) {
    const Vector mean = random_vec(4, rng), log_std = 0.3 * random_vec(4, rng), action = random_vec(4, rng);
    Vector dm, dls;
    gaussian_log_prob_grad(mean, log_std, action, dm, dls);
    CHECK(oracle::rel_error(dm, oracle::finite_diff([&](const Vector& m) { return gaussian_log_prob(m, log_std, action); },
                                                    mean)) < 1e-4);
    CHECK(oracle::rel_error(dls, oracle::finite_diff([&](const Vector& l) { return gaussian_log_prob(mean, l, action); },
                                                     log_std)) < 1e-4);
  }
}

TEST_CASE("sampling is reproducible and the log-prob is for the returned action") {
  GaussianPolicy pol;
  Rng init(1);
  pol.mean_net = Mlp::initialized({3, 8, 2}, init);
  pol.log_std = Vector::Constant(2, -0.5);
  const Vector f = Vector::Constant(3, 0.2);
  Rng r1(42), r2(42);
  const auto a = log_prob_and_sample(pol, f, r1);
  const auto b = log_prob_and_sample(pol, f, r2);
  CHECK(a.action == b.action);
  CHECK(a.log_prob == gaussian_log_prob(a.mean, pol.log_std, a.action));
}

TEST_CASE("log std clamp") {
  GaussianPolicy pol;
  pol.log_std = Vector(3);
  pol.log_std << -9, 0.5, 7;
  pol.clamp_log_std();
  CHECK(pol.log_std[0] == -5.0);
  CHECK(pol.log_std[1] == 0.5);
  CHECK(pol.log_std[2] == 2.0);
}

TEST_CASE("adam: zero gradient is a fixed point, first step is -lr * sign(g)") {
  Vector p(3);
  p << 1, -2, 3;
  auto st = AdamState::for_size(3, 0.01);
  const Vector keep = p;
  adam_step(p, Vector::Zero(3), st);
  CHECK(p == keep);

  auto st2 = AdamState::for_size(3, 0.01);
  Vector q = keep;
  Vector g(3);
  g << 0.5, -2.0, 1e-3;
  adam_step(q, g, st2);
  for (int i = 0; i < 3; ++i) {
    // Closed form after one step: m_hat = g, v_hat = g^2.
    const double want = keep[i] - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
    CHECK(q[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("adam on a quadratic bowl decreases monotonically after warm-up") {
  Vector p = Vector::Constant(5, 3.0);
  auto st = AdamState::for_size(5, 0.05);
  double prev = p.squaredNorm();
  for (int t = 1; t <= 200; ++t) {
    adam_step(p, 2.0 * p, st);
    const double now = p.squaredNorm();
    if (t > 10 && prev > 1e-2) CHECK(now <= prev);
    prev = now;
  }
  CHECK(prev < 1e-2 * 45.0);
}

TEST_CASE("adam rejects non-finite gradients") {
  Vector p = Vector::Zero(2);
  auto st = AdamState::for_size(2, 0.01);
  Vector g(2);
  g << 1.0, std::nan("");
  CHECK_THROWS_AS(adam_step(p, g, st), DivergenceError);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  auto net = random_net({4, 9, 2}, 77);
  Vector extra(2);
  extra << 0.1, -0.2;
  const auto path = std::filesystem::temp_directory_path() / "cura_test_ck.bin";
  save_checkpoint(path, net, extra);
  const auto ck = load_checkpoint(path);
  CHECK(ck.net.layer_sizes() == net.layer_sizes());
  CHECK(ck.net.params() == net.params());
  CHECK(ck.extra == extra);
  Rng rng(3);
  const Vector x = random_vec(4, rng);
  CHECK(forward(ck.net, x) == forward(net, x));

  auto st = AdamState::for_size(net.params().size(), 1e-3);
  adam_step(net.params(), Vector::Ones(net.params().size()), st);
  save_adam(path, st);
  const auto st2 = load_adam(path);
  CHECK(st2.step == st.step);
  CHECK(st2.m == st.m);
  CHECK(st2.v == st.v);
  CHECK(st2.lr == st.lr);

  std::ofstream(path) << "garbage";
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
}
