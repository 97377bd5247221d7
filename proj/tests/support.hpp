#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "treeot/graph.hpp"
#include "treeot/numerics.hpp"
#include "treeot/oracle.hpp"
#include "treeot/solver.hpp"

namespace testutil {

// Error code raised by f, or nullopt when it returns normally.
template <class F>
std::optional<treeot::Errc> errc_of(F&& f) {
  try {
    f();
  } catch (const treeot::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

using treeot::Edge;
using treeot::Matrix;
using treeot::Node;
using treeot::Tree;
using treeot::TreeOTProblem;
using treeot::Vector;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double lo = 0.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = uniform(rng, lo, hi);
  }
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, int n, double lo = 0.1, double hi = 1.0) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = uniform(rng, lo, hi);
  return v;
}

inline Matrix random_stochastic(std::mt19937_64& rng, int rows, int cols) {
  Matrix m = random_matrix(rng, rows, cols, 0.05, 1.0);
  for (int i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

// Random labelled tree: node j > 1 attaches to a uniformly chosen earlier node,
// then labels are shuffled so node 1 is not always the hub.
inline Tree random_tree(std::mt19937_64& rng, int node_count) {
  std::vector<Node> relabel(node_count + 1);
  for (int j = 1; j <= node_count; ++j) relabel[j] = j;
  std::shuffle(relabel.begin() + 1, relabel.end(), rng);
  std::vector<Edge> edges;
  for (int j = 2; j <= node_count; ++j) edges.push_back({relabel[uniform_int(rng, 1, j - 1)], relabel[j]});
  return treeot::validate_tree(node_count, edges);
}

inline Tree example_tree() { return treeot::validate_tree(4, {{1, 2}, {2, 3}, {1, 4}}); }

inline Tree path_tree(int node_count) {
  std::vector<Edge> edges;
  for (int j = 1; j < node_count; ++j) edges.push_back({j, j + 1});
  return treeot::validate_tree(node_count, edges);
}

// Random costs on every edge and unit-mass marginals on the leaves.
inline TreeOTProblem random_problem(std::mt19937_64& rng, const Tree& tree, const std::vector<int>& sizes,
                                    double epsilon, double cost_scale = 1.0) {
  TreeOTProblem p;
  p.tree = tree;
  p.epsilon = epsilon;
  for (const auto& [a, b] : tree.edges()) p.edge_costs[{a, b}] = random_matrix(rng, sizes[a], sizes[b], 0.0, cost_scale);
  for (Node j : treeot::leaves(tree)) {
    Vector mu = random_vector(rng, sizes[j]);
    p.constraints[j] = mu / mu.sum();
  }
  return p;
}

inline std::vector<int> uniform_sizes(int node_count, int n) { return std::vector<int>(node_count + 1, n); }

inline std::vector<int> random_sizes(std::mt19937_64& rng, int node_count, int lo, int hi) {
  std::vector<int> s(node_count + 1, 0);
  for (int j = 1; j <= node_count; ++j) s[j] = uniform_int(rng, lo, hi);
  return s;
}

inline double l1(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().sum(); }
inline double l1(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().sum(); }

inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}
inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

inline treeot::oracle::TensorProblem dense_problem(const TreeOTProblem& p) {
  return {treeot::oracle::assemble_cost_tensor(p.tree, p.edge_costs), p.epsilon, p.constraints};
}

}  // namespace testutil
