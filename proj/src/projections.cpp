#include "treeot/projections.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "treeot/error.hpp"

namespace treeot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTiny = 1e-290;
constexpr double kHuge = 1e290;

Vector ones(Eigen::Index n, Domain domain) {
  return domain == Domain::Linear ? Vector::Ones(n) : Vector::Zero(n);
}

void multiply_into(Vector& acc, const Vector& v, Domain domain) {
  if (domain == Domain::Linear) {
    acc.array() *= v.array();
  } else {
    acc += v;
  }
}

std::string edge_name(Node j, Node k) {
  return "(" + std::to_string(j) + "," + std::to_string(k) + ")";
}

void require_clean(const ScalingState& state, const Tree& tree, Node j, Node k) {
  if (state.dirty[tree.slot(j, k)]) {
    throw Error(Errc::StaleDependency, "message " + edge_name(j, k) + " is stale");
  }
}

// Log-domain matrix product: out(i,m) = log sum_l exp(a(i,l) + b(l,m)).
Matrix log_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    out.row(i) = log_matvec_transposed(b, a.row(i).transpose()).transpose();
  }
  return out;
}

}  // namespace

EdgeKernels EdgeKernels::from_costs(const Tree& tree, const EdgeMatrices& costs, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw Error(Errc::EpsilonNonPositive, "epsilon = " + std::to_string(epsilon));
  }
  EdgeKernels k;
  k.tree_ = tree;
  for (const auto& [a, b] : tree.edges()) {
    Matrix c = oriented(costs, a, b);
    if ((c.array().isNaN()).any() || (c.array() == -kInf).any()) {
      throw Error(Errc::InvalidArgument, "cost on edge " + edge_name(a, b) + " is not a number");
    }
    Matrix lg = -c / epsilon;
    k.linear_.push_back(exp_of(lg));
    k.log_.push_back(std::move(lg));
  }
  k.finish();
  return k;
}

EdgeKernels EdgeKernels::from_kernels(const Tree& tree, const EdgeMatrices& kernels) {
  EdgeKernels k;
  k.tree_ = tree;
  for (const auto& [a, b] : tree.edges()) {
    Matrix m = oriented(kernels, a, b);
    if ((m.array() < 0.0).any() || !m.allFinite()) {
      throw Error(Errc::NonPositiveEntry, "kernel on edge " + edge_name(a, b) +
                                              " has negative or non-finite entries");
    }
    k.log_.push_back(log_of(m));
    k.linear_.push_back(std::move(m));
  }
  k.finish();
  return k;
}

void EdgeKernels::finish() {
  sizes_.assign(tree_.node_count() + 1, 0);
  const auto& edges = tree_.edges();
  for (size_t e = 0; e < edges.size(); ++e) {
    const auto [a, b] = edges[e];
    for (auto [node, n] : {std::pair{a, linear_[e].rows()}, std::pair{b, linear_[e].cols()}}) {
      if (sizes_[node] != 0 && sizes_[node] != n) {
        throw Error(Errc::ShapeMismatch, "node " + std::to_string(node) +
                                             " has inconsistent sizes across its edges");
      }
      sizes_[node] = static_cast<int>(n);
    }
  }
}

void EdgeKernels::set_isolated_size(Node j, int n) {
  if (!tree_.contains(j) || tree_.degree(j) != 0) {
    throw Error(Errc::InvalidArgument, "node " + std::to_string(j) + " is not isolated");
  }
  sizes_[j] = n;
}

Matrix EdgeKernels::linear(Node j, Node k) const {
  const int e = tree_.edge_index(j, k);
  if (e < 0) throw Error(Errc::UnknownNode, edge_name(j, k) + " is not an edge");
  return tree_.edges()[e].first == j ? linear_[e] : Matrix(linear_[e].transpose());
}

Matrix EdgeKernels::log(Node j, Node k) const {
  const int e = tree_.edge_index(j, k);
  if (e < 0) throw Error(Errc::UnknownNode, edge_name(j, k) + " is not an edge");
  return tree_.edges()[e].first == j ? log_[e] : Matrix(log_[e].transpose());
}

Vector EdgeKernels::apply(Domain domain, Node j, Node k, const Vector& x) const {
  const int e = tree_.edge_index(j, k);
  if (e < 0) throw Error(Errc::UnknownNode, edge_name(j, k) + " is not an edge");
  const bool forward = tree_.edges()[e].first == j;
  if (domain == Domain::Linear) {
    return forward ? Vector(linear_[e] * x) : Vector(linear_[e].transpose() * x);
  }
  return forward ? log_matvec(log_[e], x) : log_matvec_transposed(log_[e], x);
}

bool EdgeKernels::linear_underflows() const {
  for (size_t e = 0; e < linear_.size(); ++e) {
    const auto lin = linear_[e].array();
    const auto lg = log_[e].array();
    if (((lin < kTiny) && (lg > -kInf)).any() || (lin > kHuge).any()) return true;
  }
  return false;
}

ScalingState make_state(const EdgeKernels& kernels, Domain domain) {
  const Tree& tree = kernels.tree();
  ScalingState s;
  s.domain = domain;
  s.u.assign(tree.node_count() + 1, Vector());
  s.potential.assign(tree.node_count() + 1, Vector());
  s.alpha.assign(tree.slot_count(), Vector());
  s.dirty.assign(tree.slot_count(), 1);
  return s;
}

Vector local_factor(const ScalingState& state, const EdgeKernels& kernels, Node j) {
  Vector f = ones(kernels.node_size(j), state.domain);
  if (state.u[j].size() > 0) multiply_into(f, state.u[j], state.domain);
  if (state.potential[j].size() > 0) multiply_into(f, state.potential[j], state.domain);
  return f;
}

void recompute_alpha(ScalingState& state, const EdgeKernels& kernels, Node j, Node k) {
  const Tree& tree = kernels.tree();
  const int target = tree.slot(j, k);
  Vector w = local_factor(state, kernels, k);
  for (Node l : tree.neighbors(k)) {
    if (l == j) continue;
    require_clean(state, tree, k, l);
    multiply_into(w, state.alpha[tree.slot(k, l)], state.domain);
  }
  state.alpha[target] = kernels.apply(state.domain, j, k, w);
  state.dirty[target] = 0;
}

void refresh_alpha(ScalingState& state, const EdgeKernels& kernels, Node j, Node k) {
  const Tree& tree = kernels.tree();
  for (Node l : tree.neighbors(k)) {
    if (l != j && state.dirty[tree.slot(k, l)]) refresh_alpha(state, kernels, k, l);
  }
  recompute_alpha(state, kernels, j, k);
}

void refresh_all(ScalingState& state, const EdgeKernels& kernels) {
  const auto& edges = kernels.tree().edges();
  for (size_t e = 0; e < edges.size(); ++e) {
    const auto [a, b] = edges[e];
    if (state.dirty[2 * e]) refresh_alpha(state, kernels, a, b);
    if (state.dirty[2 * e + 1]) refresh_alpha(state, kernels, b, a);
  }
}

void mark_all_dirty(ScalingState& state) { std::fill(state.dirty.begin(), state.dirty.end(), 1); }

void mark_path_dirty(ScalingState& state, const Tree& tree, Node from, Node to) {
  const auto path = path_between(tree, from, to);
  for (size_t i = 0; i + 1 < path.size(); ++i) state.dirty[tree.slot(path[i + 1], path[i])] = 1;
}

Vector project_marginal_domain(const ScalingState& state, const EdgeKernels& kernels, Node j) {
  const Tree& tree = kernels.tree();
  Vector p = local_factor(state, kernels, j);
  for (Node k : tree.neighbors(j)) {
    require_clean(state, tree, j, k);
    multiply_into(p, state.alpha[tree.slot(j, k)], state.domain);
  }
  return p;
}

Vector project_marginal(const ScalingState& state, const EdgeKernels& kernels, Node j) {
  Vector p = project_marginal_domain(state, kernels, j);
  return state.domain == Domain::Linear ? p : exp_of(p);
}

Matrix project_pair(const ScalingState& state, const EdgeKernels& kernels, Node first, Node last) {
  const Tree& tree = kernels.tree();
  if (first == last) throw Error(Errc::EqualNodes, "pair projection needs two distinct nodes");
  const auto path = path_between(tree, first, last);
  const size_t len = path.size();

  // Diagonal factor at path position i: u times all off-path messages.
  auto diagonal = [&](size_t i) {
    Vector d = local_factor(state, kernels, path[i]);
    for (Node k : tree.neighbors(path[i])) {
      if ((i > 0 && k == path[i - 1]) || (i + 1 < len && k == path[i + 1])) continue;
      require_clean(state, tree, path[i], k);
      multiply_into(d, state.alpha[tree.slot(path[i], k)], state.domain);
    }
    return d;
  };

  if (state.domain == Domain::Linear) {
    Matrix r = diagonal(0).asDiagonal() * kernels.linear(path[0], path[1]);
    for (size_t i = 1; i < len; ++i) {
      r = r * diagonal(i).asDiagonal();
      if (i + 1 < len) r = r * kernels.linear(path[i], path[i + 1]);
    }
    return r;
  }
  Matrix r = kernels.log(path[0], path[1]);
  r.colwise() += diagonal(0);
  for (size_t i = 1; i < len; ++i) {
    r.rowwise() += diagonal(i).transpose();
    if (i + 1 < len) r = log_matmul(r, kernels.log(path[i], path[i + 1]));
  }
  return exp_of(r);
}

bool out_of_range(const Vector& v, Domain domain) {
  if (domain == Domain::Log) return v.array().isNaN().any() || (v.array() == kInf).any();
  for (double x : v) {
    if (!std::isfinite(x) || x > kHuge || (x > 0.0 && x < kTiny)) return true;
  }
  return false;
}

}  // namespace treeot
