#include <doctest.h>

#include <set>

#include "support.hpp"
#include "treeot/error.hpp"
#include "treeot/oracle.hpp"
#include "treeot/projections.hpp"

using namespace treeot;
using testutil::errc_of;

namespace {

struct Instance {
  Tree tree;
  EdgeMatrices kernels;
  EdgeKernels edge_kernels;
  std::map<Node, Vector> u;
};

Instance random_instance(std::mt19937_64& rng, int count, int lo, int hi, bool scale_all_nodes) {
  Instance in;
  in.tree = testutil::random_tree(rng, count);
  const auto sizes = testutil::random_sizes(rng, count, lo, hi);
  for (const auto& [a, b] : in.tree.edges()) in.kernels[{a, b}] = testutil::random_matrix(rng, sizes[a], sizes[b], 0.05, 1.0);
  in.edge_kernels = EdgeKernels::from_kernels(in.tree, in.kernels);
  for (Node j = 1; j <= count; ++j) {
    if (scale_all_nodes || in.tree.is_leaf(j)) in.u[j] = testutil::random_vector(rng, sizes[j], 0.1, 2.0);
  }
  return in;
}

ScalingState solved_state(const Instance& in, Domain domain) {
  ScalingState s = make_state(in.edge_kernels, domain);
  for (const auto& [j, u] : in.u) s.u[j] = domain == Domain::Linear ? u : Vector(u.array().log());
  refresh_all(s, in.edge_kernels);
  return s;
}

std::set<Edge> dirty_set(const ScalingState& s, const Tree& t) {
  std::set<Edge> out;
  for (const auto& [a, b] : t.edges()) {
    if (s.dirty[t.slot(a, b)]) out.insert({a, b});
    if (s.dirty[t.slot(b, a)]) out.insert({b, a});
  }
  return out;
}

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

}  // namespace

TEST_CASE("recompute_alpha by hand") {
  const double q = 0.3;
  Tree pair = testutil::path_tree(2);
  EdgeKernels k = EdgeKernels::from_kernels(pair, {{{1, 2}, mat2(1, q, q, 1)}});
  ScalingState s = make_state(k, Domain::Linear);
  recompute_alpha(s, k, 1, 2);
  CHECK(testutil::l1(s.alpha[pair.slot(1, 2)], Vector::Constant(2, 1 + q)) < 1e-15);

  std::mt19937_64 rng(31);
  const Tree fig = testutil::example_tree();
  EdgeMatrices km;
  for (const auto& [a, b] : fig.edges()) km[{a, b}] = testutil::random_matrix(rng, 2, 2, 0.1, 1.0);
  EdgeKernels ek = EdgeKernels::from_kernels(fig, km);
  ScalingState fs = make_state(ek, Domain::Linear);
  for (Node j = 1; j <= 4; ++j) fs.u[j] = testutil::random_vector(rng, 2);
  CHECK(errc_of([&] { recompute_alpha(fs, ek, 1, 2); }) == Errc::StaleDependency);
  recompute_alpha(fs, ek, 2, 3);
  recompute_alpha(fs, ek, 1, 2);
  const Vector by_hand = km[{1, 2}] * fs.u[2].cwiseProduct(km[{2, 3}] * fs.u[3]);
  CHECK(testutil::rel_err(fs.alpha[fig.slot(1, 2)], by_hand) < 1e-15);

  // Star with centre 1: the message into leaf 2 passes through the centre.
  const Tree star = treeot::validate_tree(3, {{1, 2}, {1, 3}});
  EdgeMatrices sk = {{{1, 2}, testutil::random_matrix(rng, 2, 3, 0.1, 1.0)},
                     {{1, 3}, testutil::random_matrix(rng, 2, 2, 0.1, 1.0)}};
  EdgeKernels sek = EdgeKernels::from_kernels(star, sk);
  ScalingState ss = make_state(sek, Domain::Linear);
  ss.u[1] = testutil::random_vector(rng, 2);
  ss.u[3] = testutil::random_vector(rng, 2);
  refresh_alpha(ss, sek, 2, 1);
  const Vector star_hand = sk[{1, 2}].transpose() * ss.u[1].cwiseProduct(sk[{1, 3}] * ss.u[3]);
  CHECK(testutil::rel_err(ss.alpha[star.slot(2, 1)], star_hand) < 1e-15);
}

TEST_CASE("project_marginal small cases") {
  std::mt19937_64 rng(32);
  const Tree pair = testutil::path_tree(2);
  const Matrix k = testutil::random_matrix(rng, 3, 2, 0.1, 1.0);
  EdgeKernels ek = EdgeKernels::from_kernels(pair, {{{1, 2}, k}});
  ScalingState s = make_state(ek, Domain::Linear);
  s.u[1] = testutil::random_vector(rng, 3);
  s.u[2] = testutil::random_vector(rng, 2);
  refresh_all(s, ek);
  CHECK(testutil::rel_err(project_marginal(s, ek, 1), Vector(s.u[1].cwiseProduct(k * s.u[2]))) < 1e-15);
  const Matrix direct = s.u[1].asDiagonal() * k * s.u[2].asDiagonal();
  CHECK(testutil::rel_err(project_pair(s, ek, 1, 2), direct) < 1e-15);

  const Tree fig = testutil::example_tree();
  EdgeMatrices km;
  for (const auto& [a, b] : fig.edges()) km[{a, b}] = testutil::random_matrix(rng, 2, 2, 0.1, 1.0);
  EdgeKernels fk = EdgeKernels::from_kernels(fig, km);
  ScalingState fs = make_state(fk, Domain::Linear);
  for (Node j : {3, 4}) fs.u[j] = testutil::random_vector(rng, 2);
  refresh_all(fs, fk);
  const Vector a12 = fs.alpha[fig.slot(1, 2)], a14 = fs.alpha[fig.slot(1, 4)];
  CHECK(testutil::rel_err(project_marginal(fs, fk, 1), Vector(a12.cwiseProduct(a14))) < 1e-15);
  CHECK(errc_of([&] { project_pair(fs, fk, 2, 2); }) == Errc::EqualNodes);

  // Unit scalings on a path: the pair projection is the kernel product.
  const Tree path = testutil::path_tree(3);
  EdgeMatrices pk = {{{1, 2}, testutil::random_matrix(rng, 2, 3, 0.1, 1.0)},
                     {{2, 3}, testutil::random_matrix(rng, 3, 2, 0.1, 1.0)}};
  EdgeKernels pek = EdgeKernels::from_kernels(path, pk);
  ScalingState ps = make_state(pek, Domain::Linear);
  refresh_all(ps, pek);
  CHECK(testutil::rel_err(project_pair(ps, pek, 1, 3), Matrix(pk[{1, 2}] * pk[{2, 3}])) < 1e-15);
}

TEST_CASE("stale messages are refused") {
  std::mt19937_64 rng(33);
  Instance in = random_instance(rng, 4, 2, 3, false);
  ScalingState s = make_state(in.edge_kernels, Domain::Linear);
  CHECK(errc_of([&] { project_marginal(s, in.edge_kernels, 1); }) == Errc::StaleDependency);
}

TEST_CASE("mark_path_dirty") {
  const Tree path = testutil::path_tree(3);
  EdgeKernels k = EdgeKernels::from_kernels(path, {{{1, 2}, Matrix::Ones(2, 2)}, {{2, 3}, Matrix::Ones(2, 2)}});
  ScalingState s = make_state(k, Domain::Linear);
  refresh_all(s, k);
  CHECK(dirty_set(s, path).empty());
  mark_path_dirty(s, path, 1, 3);
  CHECK(dirty_set(s, path) == std::set<Edge>{{2, 1}, {3, 2}});
  refresh_all(s, k);
  mark_path_dirty(s, path, 3, 3);
  CHECK(dirty_set(s, path).empty());

  const Tree fig = testutil::example_tree();
  EdgeMatrices km;
  for (const auto& [a, b] : fig.edges()) km[{a, b}] = Matrix::Ones(2, 2);
  EdgeKernels fk = EdgeKernels::from_kernels(fig, km);
  ScalingState fs = make_state(fk, Domain::Linear);
  refresh_all(fs, fk);
  mark_path_dirty(fs, fig, 3, 4);
  CHECK(dirty_set(fs, fig) == std::set<Edge>{{2, 3}, {1, 2}, {4, 1}});
}

TEST_CASE("message passing agrees with dense projections") {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 150; ++trial) {
    const int count = testutil::uniform_int(rng, 2, 5);
    const Instance in = random_instance(rng, count, 1, 4, trial % 2 == 0);
    const auto tensor = oracle::assemble_kernel_tensor(in.tree, in.kernels, in.u);
    for (Domain domain : {Domain::Linear, Domain::Log}) {
      const ScalingState s = solved_state(in, domain);
      double total = -1.0;
      for (Node j = 1; j <= count; ++j) {
        const Vector mp = project_marginal(s, in.edge_kernels, j);
        CHECK(testutil::rel_err(mp, oracle::project(tensor, j)) < 1e-10);
        if (total < 0) total = mp.sum();
        CHECK(mp.sum() == doctest::Approx(total).epsilon(1e-12));
        for (Node k = 1; k <= count; ++k) {
          if (k == j) continue;
          const Matrix pp = project_pair(s, in.edge_kernels, j, k);
          CHECK(testutil::rel_err(pp, oracle::project_pair(tensor, j, k)) < 1e-10);
          CHECK(testutil::rel_err(Vector(pp.rowwise().sum()), mp) < 1e-12);
          CHECK(testutil::rel_err(Vector(pp.colwise().sum().transpose()), project_marginal(s, in.edge_kernels, k)) <
                1e-12);
        }
      }
    }
  }
}

TEST_CASE("slices of a triple projection through a middle node are rank one") {
  std::mt19937_64 rng(35);
  for (int trial = 0; trial < 30; ++trial) {
    const int count = testutil::uniform_int(rng, 3, 5);
    const Instance in = random_instance(rng, count, 2, 3, true);
    // Pick a node of degree at least two and two of its neighbours.
    Node mid = 0;
    for (Node j = 1; j <= count && !mid; ++j) {
      if (in.tree.degree(j) >= 2) mid = j;
    }
    const Node a = in.tree.neighbors(mid)[0], b = in.tree.neighbors(mid)[1];
    const auto tensor = oracle::assemble_kernel_tensor(in.tree, in.kernels, in.u);
    const ScalingState s = solved_state(in, Domain::Linear);
    const Matrix pam = project_pair(s, in.edge_kernels, a, mid);
    const Matrix pmb = project_pair(s, in.edge_kernels, mid, b);
    const Vector pm = project_marginal(s, in.edge_kernels, mid);
    // Triple projection summed directly from the tensor.
    const auto& shape = tensor.shape();
    std::vector<double> triple(static_cast<size_t>(shape[a - 1] * shape[mid - 1] * shape[b - 1]), 0.0);
    for (size_t f = 0; f < tensor.size(); ++f) {
      const int ia = tensor.index_of(f, a), im = tensor.index_of(f, mid), ib = tensor.index_of(f, b);
      triple[(size_t(ia) * shape[mid - 1] + im) * shape[b - 1] + ib] += tensor[f];
    }
    double worst = 0.0;
    for (int ia = 0; ia < shape[a - 1]; ++ia) {
      for (int im = 0; im < shape[mid - 1]; ++im) {
        for (int ib = 0; ib < shape[b - 1]; ++ib) {
          const double lhs = triple[(size_t(ia) * shape[mid - 1] + im) * shape[b - 1] + ib] * pm[im];
          const double rhs = pam(ia, im) * pmb(im, ib);
          worst = std::max(worst, std::abs(lhs - rhs) / rhs);
        }
      }
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("log and linear messages agree") {
  std::mt19937_64 rng(36);
  const Instance in = random_instance(rng, 5, 2, 4, false);
  const ScalingState lin = solved_state(in, Domain::Linear);
  const ScalingState lg = solved_state(in, Domain::Log);
  for (int slot = 0; slot < in.tree.slot_count(); ++slot) {
    CHECK(testutil::rel_err(Vector(lg.alpha[slot].array().exp()), lin.alpha[slot]) < 1e-12);
  }
  CHECK_FALSE(in.edge_kernels.linear_underflows());
  Matrix c = Matrix::Constant(2, 2, 1.0);
  c(0, 0) = 0.0;
  CHECK(EdgeKernels::from_costs(testutil::path_tree(2), {{{1, 2}, c}}, 1e-3).linear_underflows());
}
