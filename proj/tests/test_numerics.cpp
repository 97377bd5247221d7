#include <doctest.h>

#include <cmath>
#include <limits>

#include "support.hpp"
#include "treeot/error.hpp"
#include "treeot/numerics.hpp"

using namespace treeot;
using testutil::errc_of;

namespace {
Vector vec(std::initializer_list<double> xs) {
  Vector v(xs.size());
  int i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}
}  // namespace

TEST_CASE("kl_divergence") {
  CHECK(kl_divergence(vec({0.3, 0.7}), vec({0.3, 0.7})) == doctest::Approx(0.0));
  CHECK(kl_divergence(vec({1.0}), vec({std::exp(1.0)})) == doctest::Approx(std::exp(1.0) - 2.0).epsilon(1e-14));
  CHECK(std::isinf(kl_divergence(vec({1.0, 0.0}), vec({0.0, 1.0}))));
  CHECK(errc_of([] { kl_divergence(vec({1.0}), vec({1.0, 2.0})); }) == Errc::ShapeMismatch);
}

TEST_CASE("neg_entropy") {
  CHECK(neg_entropy(vec({1.0, 1.0})) == doctest::Approx(0.0));
  CHECK(neg_entropy(vec({2.0})) == doctest::Approx(2.0 * std::log(2.0) - 1.0).epsilon(1e-14));
  CHECK(neg_entropy(vec({0.0})) == doctest::Approx(1.0));
  CHECK(shannon_entropy(vec({1.0, 1.0})) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("gibbs_kernel") {
  CHECK(gibbs_kernel(Matrix::Zero(2, 2), 0.3) == Matrix::Ones(2, 2));
  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  Matrix k = gibbs_kernel(c, 1.0);
  CHECK(k(0, 1) == doctest::Approx(std::exp(-1.0)));
  CHECK(k(0, 0) == 1.0);
  CHECK(errc_of([&] { gibbs_kernel(c, 0.0); }) == Errc::EpsilonNonPositive);
  CHECK(errc_of([&] { gibbs_kernel(c, -1.0); }) == Errc::EpsilonNonPositive);
}

TEST_CASE("euclidean_cost") {
  Matrix two = euclidean_cost(line_grid(2));
  CHECK(two(0, 1) == doctest::Approx(1.0));
  Matrix three = euclidean_cost(line_grid(3));
  Matrix expected(3, 3);
  expected << 0, .5, 1, .5, 0, .5, 1, .5, 0;
  CHECK(testutil::l1(three, expected) < 1e-15);
}

TEST_CASE("check_mass_balance") {
  MassBalance mb = check_mass_balance({vec({1, 1}), vec({2, 0})});
  CHECK(mb.mass == doctest::Approx(2.0));
  CHECK(testutil::l1(mb.normalized[0], vec({.5, .5})) < 1e-15);
  CHECK(testutil::l1(mb.normalized[1], vec({1, 0})) < 1e-15);
  CHECK(errc_of([] { check_mass_balance({vec({1}), vec({1.5})}, 1e-9); }) == Errc::MassMismatch);
  MassBalance single = check_mass_balance({vec({3, 1})});
  CHECK(testutil::l1(single.normalized[0], vec({.75, .25})) < 1e-15);
}

TEST_CASE("log_sum_exp and log matvec agree with direct evaluation") {
  std::mt19937_64 rng(3);
  const Matrix k = testutil::random_matrix(rng, 4, 3, 0.1, 2.0);
  const Vector x = testutil::random_vector(rng, 3);
  const Vector direct = (k * x).array().log();
  const Vector via_log = log_matvec(k.array().log().matrix(), x.array().log().matrix());
  CHECK(testutil::rel_err(via_log, direct) < 1e-13);
  const Vector y = testutil::random_vector(rng, 4);
  const Vector direct_t = (k.transpose() * y).array().log();
  CHECK(testutil::rel_err(log_matvec_transposed(k.array().log().matrix(), y.array().log().matrix()), direct_t) <
        1e-13);
  CHECK(log_sum_exp(vec({1000.0, 1000.0})) == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("numerics properties") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = testutil::uniform_int(rng, 1, 6);
    const Vector p = testutil::random_vector(rng, n, 0.0, 2.0);
    const Vector q = testutil::random_vector(rng, n, 0.01, 2.0);
    CHECK(kl_divergence(p, q) >= 0.0);
    CHECK(kl_divergence(p, p) == doctest::Approx(0.0));

    std::vector<Vector> pts;
    for (int i = 0; i < n; ++i) pts.push_back(testutil::random_vector(rng, 2, 0.0, 1.0));
    const double eps = testutil::uniform(rng, 0.05, 2.0);
    const Matrix k = gibbs_kernel(euclidean_cost(pts), eps);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((k.diagonal().array() == 1.0).all());

    const Matrix a = testutil::random_stochastic(rng, n, n + 1);
    const Matrix round_trip = gibbs_kernel(-eps * a.array().log().matrix(), eps);
    CHECK(testutil::rel_err(round_trip, a) < 1e-14);
  }
}
