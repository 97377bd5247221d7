#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "treeot/error.hpp"
#include "treeot/oracle.hpp"
#include "treeot/solver.hpp"

using namespace treeot;
using testutil::errc_of;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

TreeOTProblem swap_problem() {
  TreeOTProblem p;
  p.tree = testutil::path_tree(2);
  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  p.edge_costs[{1, 2}] = c;
  p.epsilon = 1.0;
  p.constraints = {{1, vec2(.5, .5)}, {2, vec2(.5, .5)}};
  return p;
}

// Every node marginal and every pair projection against a tight dense solve.
void check_against_oracle(const TreeOTProblem& p, const SolveReport& r, double tol) {
  const auto dense = oracle::dense_sinkhorn(testutil::dense_problem(p), 1e-13, 100000);
  const int count = p.tree.node_count();
  for (Node j = 1; j <= count; ++j) {
    CHECK(testutil::l1(extract_marginal(r, p, j), oracle::project(dense.plan, j)) <= tol);
    for (Node k = j + 1; k <= count; ++k) {
      CHECK(testutil::l1(extract_plan(r, p, j, k), oracle::project_pair(dense.plan, j, k)) <= tol);
    }
  }
}

}  // namespace

TEST_CASE("preprocess splits at constrained internal nodes and prunes free leaves") {
  std::mt19937_64 rng(41);
  TreeOTProblem p = testutil::random_problem(rng, testutil::path_tree(3), testutil::uniform_sizes(3, 2), 1.0);

  p.constraints[2] = vec2(.4, .6);
  auto split = preprocess(p);
  REQUIRE(split.size() == 2);
  for (const auto& piece : split) {
    CHECK(piece.problem.tree.node_count() == 2);
    CHECK(piece.problem.constraints.size() == 2);
  }

  p.constraints.erase(2);
  auto whole = preprocess(p);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].problem.tree.node_count() == 3);

  p.constraints.erase(3);
  p.constraints[2] = vec2(.4, .6);
  auto pruned = preprocess(p);
  REQUIRE(pruned.size() == 1);
  CHECK(pruned[0].problem.tree.node_count() == 2);
  const SolveReport r = solve(p, {1e-12});
  check_against_oracle(p, r, 1e-9);

  p.constraints.clear();
  CHECK(errc_of([&] { preprocess(p); }) == Errc::NoConstraints);
}

TEST_CASE("two-node closed form") {
  const TreeOTProblem p = swap_problem();
  const SolveReport r = solve(p);
  const double e = std::exp(1.0);
  Matrix expected(2, 2);
  expected << e, 1, 1, e;
  expected /= 2 * (1 + e);
  CHECK(testutil::l1(extract_plan(r, p, 1, 2), expected) < 1e-12);
  CHECK(expected(0, 0) == doctest::Approx(0.36552).epsilon(1e-4));
  CHECK(expected(0, 1) == doctest::Approx(0.13448).epsilon(1e-4));

  // Bi-marginal plan is diag(u1) K diag(u2).
  const Matrix k = gibbs_kernel(p.edge_costs.at({1, 2}), 1.0);
  const Matrix direct = scaling_vector(r, 1).asDiagonal() * k * scaling_vector(r, 2).asDiagonal();
  CHECK(testutil::l1(extract_plan(r, p, 1, 2), direct) < 1e-12);
}

TEST_CASE("masses other than one are restored on extraction") {
  TreeOTProblem p = swap_problem();
  for (auto& [j, mu] : p.constraints) mu *= 3.0;
  const SolveReport r = solve(p);
  CHECK(r.mass == doctest::Approx(3.0));
  CHECK(extract_plan(r, p, 1, 2).sum() == doctest::Approx(3.0));
  CHECK(testutil::l1(extract_marginal(r, p, 1), vec2(1.5, 1.5)) < 1e-10);
}

TEST_CASE("example tree matches the dense solve") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const TreeOTProblem p = testutil::random_problem(rng, testutil::example_tree(), testutil::uniform_sizes(4, 3), 0.5);
    const SolveReport r = solve(p, {1e-12});
    check_against_oracle(p, r, 1e-6);
    for (const auto& [j, mu] : p.constraints) CHECK(testutil::l1(extract_marginal(r, p, j), mu) <= 1e-12);
  }
}

TEST_CASE("primal objective") {
  std::mt19937_64 rng(43);
  // Two nodes: trace(C'M) + eps H(M).
  const TreeOTProblem two = testutil::random_problem(rng, testutil::path_tree(2), {0, 3, 2}, 0.4);
  const SolveReport r2 = solve(two, {1e-12});
  const Matrix m = extract_plan(r2, two, 1, 2);
  const double direct = (two.edge_costs.at({1, 2}).transpose() * m).trace() + 0.4 * neg_entropy(m);
  CHECK(primal_objective(r2, two) == doctest::Approx(direct).epsilon(1e-12));

  for (int trial = 0; trial < 10; ++trial) {
    const TreeOTProblem p = testutil::random_problem(rng, testutil::path_tree(3), testutil::uniform_sizes(3, 2), 0.7);
    const SolveReport r = solve(p, {1e-12});
    const auto dense = oracle::dense_sinkhorn(testutil::dense_problem(p), 1e-13);
    const double reference = oracle::dense_objective(dense.plan, oracle::assemble_cost_tensor(p.tree, p.edge_costs), 0.7);
    CHECK(std::abs(primal_objective(r, p) - reference) < 1e-8);
  }

  // Zero cost with uniform leaves: the optimum is the uniform product tensor,
  // so sum M log M is the sum of the per-node terms.
  TreeOTProblem zero;
  zero.tree = testutil::example_tree();
  zero.epsilon = 0.3;
  const std::vector<int> sizes{0, 2, 3, 2, 4};
  for (const auto& [a, b] : zero.tree.edges()) zero.edge_costs[{a, b}] = Matrix::Zero(sizes[a], sizes[b]);
  for (Node j : {3, 4}) zero.constraints[j] = Vector::Constant(sizes[j], 1.0 / sizes[j]);
  const SolveReport rz = solve(zero);
  double xlogx_sum = 0.0;
  int entries = 1;
  for (Node j = 1; j <= 4; ++j) {
    xlogx_sum += std::log(1.0 / sizes[j]);
    entries *= sizes[j];
  }
  const double closed = 0.3 * (xlogx_sum - 1.0 + entries);
  CHECK(primal_objective(rz, zero) == doctest::Approx(closed).epsilon(1e-12));
  oracle::DenseTensor product(std::vector<int>(sizes.begin() + 1, sizes.end()), 1.0 / entries);
  CHECK(0.3 * neg_entropy(Vector(Eigen::Map<const Vector>(product.data().data(), product.size()))) ==
        doctest::Approx(closed).epsilon(1e-12));
}

TEST_CASE("path reversal symmetry") {
  std::mt19937_64 rng(44);
  TreeOTProblem p;
  p.tree = testutil::path_tree(4);
  p.epsilon = 0.3;
  Matrix c = testutil::random_matrix(rng, 3, 3);
  c = (c + c.transpose()).eval();
  for (const auto& [a, b] : p.tree.edges()) p.edge_costs[{a, b}] = c;
  const Vector mu = testutil::random_vector(rng, 3).normalized().cwiseAbs2();
  p.constraints = {{1, mu}, {4, mu}};
  const SolveReport r = solve(p, {1e-12});
  CHECK(testutil::l1(extract_marginal(r, p, 2), extract_marginal(r, p, 3)) < 1e-10);
  CHECK(testutil::l1(extract_plan(r, p, 1, 2), extract_plan(r, p, 4, 3)) < 1e-10);
}

TEST_CASE("dual ascent, log domain and scaling class") {
  std::mt19937_64 rng(45);
  for (int trial = 0; trial < 30; ++trial) {
    const int count = testutil::uniform_int(rng, 2, 6);
    const TreeOTProblem p = testutil::random_problem(rng, testutil::random_tree(rng, count),
                                                     testutil::random_sizes(rng, count, 2, 4), 0.3);
    const SolveReport lin = solve(p, {1e-11, 10000, LogDomainMode::Off});
    for (size_t i = 1; i < lin.dual_history.size(); ++i) {
      CHECK(lin.dual_history[i] >= lin.dual_history[i - 1] - 1e-12);
    }
    const SolveReport lg = solve(p, {1e-11, 10000, LogDomainMode::On});
    CHECK(lg.pieces.front().domain == Domain::Log);
    for (Node j = 1; j <= count; ++j) {
      CHECK(testutil::l1(extract_marginal(lin, p, j), extract_marginal(lg, p, j)) < 1e-9);
    }

    // Moving a constant between two leaves leaves the tensor unchanged.
    const auto lv = leaves(p.tree);
    if (lv.size() < 2 || lin.scaling.domain != Domain::Linear) continue;
    SolveReport shifted = lin;
    shifted.scaling.u[lv[0]] *= 7.0;
    shifted.scaling.u[lv[1]] /= 7.0;
    mark_all_dirty(shifted.scaling);
    refresh_all(shifted.scaling, *shifted.kernels);
    for (Node j = 1; j <= count; ++j) {
      CHECK(testutil::rel_err(project_marginal(shifted.scaling, *shifted.kernels, j),
                              project_marginal(lin.scaling, *lin.kernels, j)) < 1e-12);
    }
    for (const auto& [a, b] : p.tree.edges()) {
      CHECK(testutil::rel_err(project_pair(shifted.scaling, *shifted.kernels, a, b),
                              project_pair(lin.scaling, *lin.kernels, a, b)) < 1e-12);
    }
  }
}

TEST_CASE("residuals contract linearly") {
  std::mt19937_64 rng(46);
  int checked = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int count = testutil::uniform_int(rng, 3, 6);
    const TreeOTProblem p = testutil::random_problem(rng, testutil::random_tree(rng, count),
                                                     testutil::uniform_sizes(count, 4), 0.1);
    const SolveReport r = solve(p, {1e-11});
    const auto& h = r.residual_history;
    if (h.size() < 7) continue;
    ++checked;
    for (size_t i = h.size() - 5; i < h.size(); ++i) CHECK(h[i] / h[i - 1] <= 0.999);
  }
  CHECK(checked >= 20);
}

TEST_CASE("solver errors") {
  std::mt19937_64 rng(47);
  TreeOTProblem p = testutil::random_problem(rng, testutil::path_tree(3), testutil::uniform_sizes(3, 3), 0.05, 2.0);
  try {
    solve(p, {1e-14, 2});
    FAIL("expected non-convergence");
  } catch (const SolveNotConverged& e) {
    CHECK(e.code() == Errc::MaxSweepsExceeded);
    CHECK(e.partial().sweeps == 2);
    CHECK_FALSE(e.partial().converged);
    CHECK(extract_marginal(e.partial(), p, 2, true).size() == 3);
    CHECK(errc_of([&] { extract_marginal(e.partial(), p, 2); }) == Errc::NotConverged);
  }

  // Every kernel entry on one edge sits below the double range.
  TreeOTProblem tiny = testutil::random_problem(rng, testutil::path_tree(3), testutil::uniform_sizes(3, 3), 1.0);
  tiny.edge_costs[{1, 2}].array() += 800.0;
  CHECK(errc_of([&] { solve(tiny, {1e-8, 10000, LogDomainMode::Off}); }) == Errc::NumericalUnderflow);
  const SolveReport rescued = solve(tiny, {1e-8, 10000, LogDomainMode::Auto});
  CHECK(rescued.converged);

  TreeOTProblem bad_eps = p;
  bad_eps.epsilon = 0.0;
  CHECK(errc_of([&] { solve(bad_eps); }) == Errc::EpsilonNonPositive);
  TreeOTProblem unbalanced = p;
  unbalanced.constraints[1] *= 2.0;
  CHECK(errc_of([&] { solve(unbalanced); }) == Errc::MassMismatch);
  TreeOTProblem wrong_shape = p;
  wrong_shape.constraints[1] = vec2(.5, .5);
  CHECK(errc_of([&] { solve(wrong_shape); }) == Errc::ShapeMismatch);
}

TEST_CASE("zero entries in a marginal are allowed") {
  TreeOTProblem p = swap_problem();
  p.constraints[1] = vec2(1.0, 0.0);
  const SolveReport r = solve(p);
  const Matrix m = extract_plan(r, p, 1, 2);
  CHECK(m.row(1).sum() == 0.0);
  CHECK(testutil::l1(Vector(m.colwise().sum().transpose()), vec2(.5, .5)) < 1e-10);
}
