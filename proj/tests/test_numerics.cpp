#include <doctest.h>

#include <cmath>
#include <random>

#include "bsml/errors.hpp"
#include "bsml/numerics.hpp"
#include "oracles.hpp"

using namespace bsml;

namespace {

Architecture net(std::vector<std::size_t> widths, Activation a = Activation::Relu) {
  return Architecture{std::move(widths), a};
}

ParamVector seeded_params(const Architecture& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return initialize_params(arch, rng);
}

}  // namespace

TEST_CASE("ParamVector arithmetic") {
  ParamVector a{1.0, 2.0, 3.0};
  ParamVector b{0.5, -1.0, 2.0};
  CHECK((a + b) == ParamVector{1.5, 1.0, 5.0});
  CHECK((a - b) == ParamVector{0.5, 3.0, 1.0});
  CHECK((2.0 * a) == ParamVector{2.0, 4.0, 6.0});
  CHECK(a.dot(b) == 4.5);
  CHECK(ParamVector{3.0, 4.0}.norm() == 5.0);
  a.axpy(-2.0, b);
  CHECK(a == ParamVector{0.0, 4.0, -1.0});
  CHECK(a.all_finite());
  a[1] = std::nan("");
  CHECK_FALSE(a.all_finite());
  CHECK_THROWS_AS(a.axpy(1.0, ParamVector{1.0}), DimensionError);
}

TEST_CASE("architecture layout and validation") {
  const auto arch = net({2, 4, 2});
  CHECK(arch.param_count() == 2 * 4 + 4 + 4 * 2 + 2);
  CHECK(arch.layer_offset(0) == 0);
  CHECK(arch.layer_offset(1) == 12);
  CHECK_NOTHROW(arch.validate());
  CHECK_THROWS_AS(net({2, 2}).validate(), ConfigError);
  CHECK_THROWS_AS(net({2, 4, 1}).validate(), ConfigError);
  CHECK_THROWS_AS(net({2, 0, 2}).validate(), ConfigError);
  CHECK(parse_activation(to_string(Activation::Tanh)) == Activation::Tanh);
  CHECK_THROWS_AS(parse_activation("sigmoid"), ConfigError);
}

TEST_CASE("initialisation is seeded and bounded by 1/sqrt(fan_in)") {
  const auto arch = net({16, 32, 2});
  const auto p = seeded_params(arch, 7);
  CHECK(p == seeded_params(arch, 7));
  CHECK_FALSE(p == seeded_params(arch, 8));
  for (std::size_t i = 0; i < arch.layer_offset(1); ++i) CHECK(std::abs(p[i]) <= 0.25);
  for (std::size_t i = arch.layer_offset(1); i < p.size(); ++i) CHECK(std::abs(p[i]) <= 1.0 / std::sqrt(32.0));
}

TEST_CASE("forward: identity layer passes the input through") {
  const auto arch = net({2, 2}, Activation::Identity);
  const ParamVector p{1.0, 0.0, 0.0, 1.0, 0.0, 0.0};
  const Matrix logits = forward(arch, p, Matrix::from_rows({{0.3, -0.2}}));
  CHECK(logits(0, 0) == 0.3);
  CHECK(logits(0, 1) == -0.2);
}

TEST_CASE("forward: zero parameters give zero logits") {
  const auto arch = net({3, 5, 2});
  const Matrix logits = forward(arch, ParamVector(arch.param_count()), Matrix::from_rows({{1, -2, 3}, {9, 9, 9}}));
  for (double v : logits.data) CHECK(v == 0.0);
}

TEST_CASE("forward matches a straight-line re-evaluation") {
  for (Activation a : {Activation::Relu, Activation::Tanh, Activation::Identity}) {
    const auto arch = net({2, 4, 2}, a);
    const auto p = seeded_params(arch, 11);
    std::mt19937_64 rng(5);
    const Batch b = oracle::random_batch(5, 2, 2, rng);
    const Matrix got = forward(arch, p, b.inputs);
    const Matrix want = oracle::net_forward(arch, p, b.inputs);
    REQUIRE(got.rows == 5);
    for (std::size_t i = 0; i < got.data.size(); ++i) CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-14));
  }
}

TEST_CASE("forward rejects mismatched inputs and parameter counts") {
  const auto arch = net({2, 4, 2});
  const auto p = seeded_params(arch, 1);
  CHECK_THROWS_AS(forward(arch, p, Matrix(3, 3)), DimensionError);
  CHECK_THROWS_AS(forward(arch, ParamVector(5), Matrix(3, 2)), DimensionError);
}

TEST_CASE("cross entropy examples") {
  const std::vector<int> zero{0};
  CHECK(cross_entropy(Matrix::from_rows({{0.0, 0.0}}), zero) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double saturated = cross_entropy(Matrix::from_rows({{1000.0, 0.0}}), zero);
  CHECK(std::isfinite(saturated));
  CHECK(saturated == doctest::Approx(0.0));

  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 2.0);
  Matrix logits(3, 2);
  for (double& v : logits.data) v = g(rng);
  const std::vector<int> labels{1, 0, 1};
  CHECK(cross_entropy(logits, labels) == doctest::Approx(oracle::softmax_loss(logits, labels)).epsilon(1e-13));
}

TEST_CASE("cross entropy errors") {
  CHECK_THROWS_AS(cross_entropy(Matrix(0, 2), std::vector<int>{}), DimensionError);
  CHECK_THROWS_AS(cross_entropy(Matrix(2, 2), std::vector<int>{0}), DimensionError);
  CHECK_THROWS_AS(cross_entropy(Matrix(1, 2), std::vector<int>{2}), DimensionError);
}

TEST_CASE("cross entropy stays finite for logits up to 1e4") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1e4, 1e4);
  for (int trial = 0; trial < 1000; ++trial) {
    Matrix logits(4, 3);
    for (double& v : logits.data) v = u(rng);
    const double l = cross_entropy(logits, std::vector<int>{0, 1, 2, 1});
    REQUIRE(std::isfinite(l));
    REQUIRE(l >= 0.0);
  }
  CHECK(std::isfinite(cross_entropy(Matrix::from_rows({{-1e4, 1e4}}), std::vector<int>{0})));
}

TEST_CASE("gradient matches central differences on a 2-4-2 network") {
  const auto arch = net({2, 4, 2});
  const auto p = seeded_params(arch, 21);
  std::mt19937_64 rng(22);
  const Batch b = oracle::random_batch(6, 2, 2, rng);
  const auto fd = oracle::fd_gradient([&](const ParamVector& q) { return oracle::net_loss(arch, q, b); }, p, 1e-5);
  const auto cmp = oracle::compare(grad(arch, p, b), fd, 1e-8);
  CHECK(cmp.ok(1e-5, 1e-8));
}

TEST_CASE("dead rectifier unit has zero gradient") {
  const auto arch = net({2, 3, 2});
  auto p = seeded_params(arch, 4);
  // Hidden unit 1: zero incoming weights and a negative bias, so it never fires.
  p[1 * 2 + 0] = 0.0;
  p[1 * 2 + 1] = 0.0;
  p[6 + 1] = -1.0;
  std::mt19937_64 rng(1);
  const Batch b = oracle::random_batch(8, 2, 2, rng);
  const auto g = grad(arch, p, b);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
  CHECK(g[7] == 0.0);
  const std::size_t w2 = arch.layer_offset(1);
  CHECK(g[w2 + 0 * 3 + 1] == 0.0);
  CHECK(g[w2 + 1 * 3 + 1] == 0.0);
}

TEST_CASE("duplicating every sample leaves the mean gradient unchanged") {
  const auto arch = net({3, 5, 2}, Activation::Tanh);
  const auto p = seeded_params(arch, 8);
  std::mt19937_64 rng(2);
  const Batch b = oracle::random_batch(7, 3, 2, rng);
  Batch twice;
  twice.inputs = Matrix(14, 3);
  for (std::size_t r = 0; r < 14; ++r) {
    for (std::size_t c = 0; c < 3; ++c) twice.inputs(r, c) = b.inputs(r % 7, c);
    twice.labels.push_back(b.labels[r % 7]);
  }
  const auto cmp = oracle::compare(grad(arch, p, b), grad(arch, p, twice), 1e-12);
  CHECK(cmp.ok(1e-12, 1e-14));
}

TEST_CASE("gradient rejects dimension mismatches") {
  const auto arch = net({2, 4, 2});
  std::mt19937_64 rng(0);
  const Batch b = oracle::random_batch(4, 2, 2, rng);
  CHECK_THROWS_AS(grad(arch, ParamVector(3), b), DimensionError);
  Batch bad = b;
  bad.labels.pop_back();
  CHECK_THROWS_AS(grad(arch, seeded_params(arch, 0), bad), DimensionError);
  CHECK_THROWS_AS(grad(arch, seeded_params(arch, 0), Batch{Matrix(0, 2), {}}), DimensionError);
}

TEST_CASE("Hessian-vector product") {
  const auto arch = net({3, 4, 2}, Activation::Tanh);
  const auto p = seeded_params(arch, 31);
  std::mt19937_64 rng(32);
  const Batch b = oracle::random_batch(6, 3, 2, rng);
  std::normal_distribution<double> g(0.0, 1.0);
  auto random_vec = [&] {
    ParamVector v(p.size());
    for (double& x : v) x = g(rng);
    return v;
  };

  SUBCASE("zero direction") {
    const auto hv = hessian_vector_product(arch, p, b, ParamVector(p.size()));
    for (double x : hv) CHECK(x == 0.0);
  }
  SUBCASE("matches differences of gradients") {
    const auto v = random_vec();
    const double eps = 1e-4;
    auto fd = grad(arch, p + eps * v, b) - grad(arch, p - eps * v, b);
    fd *= 1.0 / (2.0 * eps);
    CHECK(oracle::compare(hessian_vector_product(arch, p, b, v), fd, 1e-8).ok(1e-4, 1e-8));
  }
  SUBCASE("linear in the direction") {
    const auto v = random_vec();
    const auto hv = hessian_vector_product(arch, p, b, v);
    const auto h3v = hessian_vector_product(arch, p, b, 3.0 * v);
    CHECK(oracle::compare(h3v, 3.0 * hv, 1e-12).ok(1e-12, 1e-14));
  }
  SUBCASE("symmetric as a bilinear form") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto u = random_vec();
      const auto v = random_vec();
      CHECK(std::abs(u.dot(hessian_vector_product(arch, p, b, v)) - v.dot(hessian_vector_product(arch, p, b, u))) <
            1e-10);
    }
  }
  SUBCASE("rejects mismatched direction") {
    CHECK_THROWS_AS(hessian_vector_product(arch, p, b, ParamVector(2)), DimensionError);
  }
}

TEST_CASE("Hessian-vector product with ReLU matches differences of gradients") {
  const auto arch = net({2, 4, 2});
  const auto p = seeded_params(arch, 41);
  std::mt19937_64 rng(42);
  const Batch b = oracle::random_batch(5, 2, 2, rng);
  ParamVector v(p.size());
  std::normal_distribution<double> g(0.0, 1.0);
  for (double& x : v) x = g(rng);
  const double eps = 1e-5;
  auto fd = grad(arch, p + eps * v, b) - grad(arch, p - eps * v, b);
  fd *= 1.0 / (2.0 * eps);
  CHECK(oracle::compare(hessian_vector_product(arch, p, b, v), fd, 1e-8).ok(1e-4, 1e-8));
}

TEST_CASE("forward, loss and gradient are pure") {
  const auto arch = net({4, 6, 3});
  const auto p = seeded_params(arch, 50);
  std::mt19937_64 rng(51);
  const Batch b = oracle::random_batch(9, 4, 3, rng);
  const auto g1 = grad(arch, p, b);
  const double l1 = batch_loss(arch, p, b);
  const Matrix f1 = forward(arch, p, b.inputs);
  for (int i = 0; i < 3; ++i) {
    CHECK(grad(arch, p, b) == g1);
    CHECK(batch_loss(arch, p, b) == l1);
    CHECK(forward(arch, p, b.inputs) == f1);
  }
}

TEST_CASE("BatchLoss forwards to the free functions") {
  const auto arch = net({2, 3, 2});
  const auto p = seeded_params(arch, 60);
  std::mt19937_64 rng(61);
  const Batch b = oracle::random_batch(4, 2, 2, rng);
  const BatchLoss loss(arch, b);
  CHECK(loss.value(p) == batch_loss(arch, p, b));
  CHECK(loss.gradient(p) == grad(arch, p, b));
  CHECK(loss.hessian_vector_product(p, p) == hessian_vector_product(arch, p, b, p));
}
