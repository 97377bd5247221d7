#include "treeot/bridge.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace treeot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRowTol = 1e-12;

std::string edge_name(Node j, Node k) {
  return "(" + std::to_string(j) + "," + std::to_string(k) + ")";
}

const Matrix& transition(const MarkovTreeProblem& p, Node parent, Node child) {
  auto it = p.transitions.find({parent, child});
  if (it == p.transitions.end()) {
    throw Error(Errc::MissingEdgeCost, "no transition for " + edge_name(parent, child));
  }
  return it->second;
}

// mu ./ denom with 0/0 = 0; mass on an unreachable state is an error.
Vector divide_checked(const Vector& mu, const Vector& denom, Node j) {
  Vector out(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    if (mu[i] == 0.0) {
      out[i] = 0.0;
    } else if (denom[i] > 0.0 && std::isfinite(denom[i])) {
      out[i] = mu[i] / denom[i];
    } else {
      throw Error(Errc::NumericalUnderflow, "state " + std::to_string(i) + " of node " +
                                                std::to_string(j) +
                                                " carries mass but receives none from the prior");
    }
    if (!std::isfinite(out[i])) {
      throw Error(Errc::NumericalUnderflow,
                  "scaling of node " + std::to_string(j) + " left the representable range");
    }
  }
  return out;
}

// 1 ./ x with 1/0 = inf and 1/inf = 0.
Vector reciprocal(const Vector& x) {
  Vector out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    out[i] = x[i] == kInf ? 0.0 : (x[i] == 0.0 ? kInf : 1.0 / x[i]);
  }
  return out;
}

// Incremental evaluation of the phi / phi_hat recursions. Upward messages
// A phi_c are cached per child and invalidated along leaf-to-root paths.
class Engine {
 public:
  Engine(const MarkovTreeProblem& p, const std::vector<int>& sizes) : p_(p), rt_(p.rooted) {
    const int n = rt_.base.node_count();
    a_.assign(n + 1, Matrix());
    w_.assign(n + 1, Vector());
    v_.assign(n + 1, Vector());
    up_.assign(n + 1, Vector());
    dirty_.assign(n + 1, 1);
    for (Node j = 1; j <= n; ++j) {
      if (j != rt_.root) a_[j] = transition(p, rt_.parent_of(j), j);
      auto it = p.node_weights.find(j);
      w_[j] = it != p.node_weights.end() ? it->second : Vector::Ones(sizes[j]);
      if (j != rt_.root && rt_.base.is_leaf(j)) v_[j] = Vector::Ones(sizes[j]);
    }
    root_hat_ = Vector::Ones(sizes[rt_.root]);
  }

  Vector& v(Node j) { return v_[j]; }
  Vector& root_hat() { return root_hat_; }

  Vector phi(Node j) {
    if (j != rt_.root && rt_.base.is_leaf(j)) return v_[j];
    Vector f = j == rt_.root ? Vector::Ones(w_[j].size()) : w_[j];
    for (Node c : rt_.children_of(j)) f.array() *= up(c).array();
    return f;
  }

  const Vector& up(Node c) {
    if (dirty_[c]) {
      up_[c] = a_[c] * phi(c);
      dirty_[c] = 0;
    }
    return up_[c];
  }

  Vector excl(Node p, Node c) {
    Vector f = p == rt_.root ? Vector::Ones(w_[p].size()) : w_[p];
    for (Node k : rt_.children_of(p)) {
      if (k != c) f.array() *= up(k).array();
    }
    return f;
  }

  // phi_hat at j, walking down from the root.
  Vector phi_hat(Node j) {
    std::vector<Node> chain;
    for (Node k = j; k != rt_.root; k = rt_.parent_of(k)) chain.push_back(k);
    Vector h = root_hat_;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      const Node c = *it;
      const Node p = rt_.parent_of(c);
      h = a_[c].transpose() * Vector(h.array() * excl(p, c).array());
    }
    return h;
  }

  void touch(Node j) {
    for (Node k = j; k != rt_.root; k = rt_.parent_of(k)) dirty_[k] = 1;
  }

 private:
  const MarkovTreeProblem& p_;
  const RootedTree& rt_;
  std::vector<Matrix> a_;  // by child label
  std::vector<Vector> w_;
  std::vector<Vector> v_;
  std::vector<Vector> up_;
  std::vector<char> dirty_;
  Vector root_hat_;
};

std::map<Node, Vector> leaf_vectors(const MarkovTreeProblem& p, const std::vector<int>& sizes,
                                    const std::map<Node, Vector>& v) {
  std::map<Node, Vector> out;
  for (Node j : leaves(p.rooted.base)) {
    auto it = v.find(j);
    if (it == v.end()) {
      out[j] = Vector::Ones(sizes[j]);
      continue;
    }
    if (it->second.size() != sizes[j]) {
      throw Error(Errc::ShapeMismatch, "v of node " + std::to_string(j) + " has wrong length");
    }
    if ((it->second.array() < 0.0).any() || it->second.array().isNaN().any()) {
      throw Error(Errc::NonPositiveEntry, "v of node " + std::to_string(j) + " is negative");
    }
    if (j != p.rooted.root && !it->second.allFinite()) {
      throw Error(Errc::NonPositiveEntry, "v of node " + std::to_string(j) + " is not finite");
    }
    out[j] = it->second;
  }
  return out;
}

}  // namespace

std::vector<int> validate_bridge_problem(const MarkovTreeProblem& problem) {
  const RootedTree& rt = problem.rooted;
  const Tree& tree = rt.base;
  if (!tree.contains(rt.root) || !tree.is_leaf(rt.root)) {
    throw Error(Errc::RootNotLeaf, "bridge root must be a leaf");
  }
  std::vector<int> sizes(tree.node_count() + 1, 0);
  auto set_size = [&](Node j, Eigen::Index n) {
    if (sizes[j] != 0 && sizes[j] != n) {
      throw Error(Errc::ShapeMismatch, "node " + std::to_string(j) + " has inconsistent sizes");
    }
    sizes[j] = static_cast<int>(n);
  };
  if (problem.transitions.size() != static_cast<size_t>(tree.edge_count())) {
    throw Error(Errc::ShapeMismatch, "expected one transition per tree edge");
  }
  for (Node c = 1; c <= tree.node_count(); ++c) {
    if (c == rt.root) continue;
    const Node p = rt.parent_of(c);
    const Matrix& a = transition(problem, p, c);
    if (a.size() == 0) throw Error(Errc::ShapeMismatch, "empty transition " + edge_name(p, c));
    if (!a.allFinite() || (a.array() < 0.0).any()) {
      throw Error(Errc::NonPositiveEntry, "transition " + edge_name(p, c) + " has invalid entries");
    }
    if (((a.rowwise().sum().array() - 1.0).abs() > kRowTol).any()) {
      throw Error(Errc::NonPositiveEntry, "transition " + edge_name(p, c) + " is not row-stochastic");
    }
    set_size(p, a.rows());
    set_size(c, a.cols());
  }
  if (tree.node_count() == 1) {
    auto it = problem.leaf_marginals.find(rt.root);
    if (it != problem.leaf_marginals.end()) sizes[rt.root] = static_cast<int>(it->second.size());
  }
  if (!problem.leaf_marginals.count(rt.root)) {
    throw Error(Errc::NoConstraints, "the root leaf needs a marginal");
  }
  std::vector<Vector> mus;
  for (const auto& [j, mu] : problem.leaf_marginals) {
    if (!tree.contains(j)) throw Error(Errc::UnknownNode, "marginal for unknown node " + std::to_string(j));
    if (!tree.is_leaf(j)) {
      throw Error(Errc::InvalidArgument, "marginal on internal node " + std::to_string(j));
    }
    if (mu.size() != sizes[j]) {
      throw Error(Errc::ShapeMismatch, "marginal of node " + std::to_string(j) + " has wrong length");
    }
    if (!mu.allFinite() || (mu.array() < 0.0).any()) {
      throw Error(Errc::NonPositiveEntry, "marginal of node " + std::to_string(j) + " is invalid");
    }
    mus.push_back(mu);
  }
  check_mass_balance(mus, 1e-9);
  for (const auto& [j, w] : problem.node_weights) {
    if (!tree.contains(j) || tree.is_leaf(j)) {
      throw Error(Errc::InvalidArgument, "node weights are only allowed on internal nodes");
    }
    if (w.size() != sizes[j]) {
      throw Error(Errc::ShapeMismatch, "weights of node " + std::to_string(j) + " have wrong length");
    }
    if (!w.allFinite() || (w.array() <= 0.0).any()) {
      throw Error(Errc::NonPositiveEntry, "weights of node " + std::to_string(j) + " must be positive");
    }
  }
  return sizes;
}

std::vector<Vector> backward_pass(const MarkovTreeProblem& problem, const std::map<Node, Vector>& v) {
  const auto sizes = validate_bridge_problem(problem);
  const auto leaf_v = leaf_vectors(problem, sizes, v);
  Engine engine(problem, sizes);
  for (const auto& [j, vj] : leaf_v) {
    if (j != problem.rooted.root) engine.v(j) = vj;
  }
  std::vector<Vector> phi(problem.rooted.base.node_count() + 1);
  for (Node j : problem.rooted.preorder) phi[j] = engine.phi(j);
  return phi;
}

ForwardFactors forward_pass(const MarkovTreeProblem& problem, const std::map<Node, Vector>& v,
                            const std::vector<Vector>& phi) {
  const auto sizes = validate_bridge_problem(problem);
  const auto leaf_v = leaf_vectors(problem, sizes, v);
  const RootedTree& rt = problem.rooted;
  if (phi.size() != static_cast<size_t>(rt.base.node_count() + 1)) {
    throw Error(Errc::ShapeMismatch, "phi must hold one vector per node");
  }
  ForwardFactors out;
  out.phi_hat.assign(rt.base.node_count() + 1, Vector());
  out.phi_hat[rt.root] = reciprocal(leaf_v.at(rt.root));
  for (Node p : rt.preorder) {
    const auto& kids = rt.children_of(p);
    std::vector<Vector> ups;
    for (Node c : kids) ups.push_back(transition(problem, p, c) * phi[c]);
    for (size_t i = 0; i < kids.size(); ++i) {
      Vector f = Vector::Ones(sizes[p]);
      auto it = problem.node_weights.find(p);
      if (p != rt.root && it != problem.node_weights.end()) f = it->second;
      for (size_t k = 0; k < kids.size(); ++k) {
        if (k != i) f.array() *= ups[k].array();
      }
      const Node c = kids[i];
      out.phi_hat[c] =
          transition(problem, p, c).transpose() * Vector(out.phi_hat[p].array() * f.array());
      out.phi_excl[{p, c}] = std::move(f);
    }
  }
  return out;
}

BridgeSolution assemble_bridge(const MarkovTreeProblem& problem, const std::map<Node, Vector>& v) {
  const auto sizes = validate_bridge_problem(problem);
  BridgeSolution s;
  s.v = leaf_vectors(problem, sizes, v);
  s.phi = backward_pass(problem, s.v);
  auto fwd = forward_pass(problem, s.v, s.phi);
  s.phi_hat = std::move(fwd.phi_hat);
  s.phi_excl = std::move(fwd.phi_excl);
  const RootedTree& rt = problem.rooted;
  s.mu.assign(rt.base.node_count() + 1, Vector());
  for (Node j : rt.preorder) s.mu[j] = s.phi[j].cwiseProduct(s.phi_hat[j]);
  for (const auto& [edge, excl] : s.phi_excl) {
    const auto [p, c] = edge;
    s.plans[edge] = Vector(s.phi_hat[p].array() * excl.array()).asDiagonal() *
                    transition(problem, p, c) * s.phi[c].asDiagonal();
  }
  return s;
}

BridgeSolution bridge_sinkhorn(const MarkovTreeProblem& problem, const BridgeOptions& options) {
  const auto sizes = validate_bridge_problem(problem);
  const RootedTree& rt = problem.rooted;
  const Node root = rt.root;
  const Vector& mu_root = problem.leaf_marginals.at(root);
  const double mass = mu_root.sum();

  std::vector<Node> schedule;
  for (Node j : leaf_schedule(rt.base)) {
    if (j != root && problem.leaf_marginals.count(j)) schedule.push_back(j);
  }
  const Node gauge_leaf = schedule.empty() ? 0 : schedule.front();

  Engine engine(problem, sizes);
  std::vector<double> history;
  auto finish = [&](int sweeps, bool converged) {
    std::map<Node, Vector> v;
    v[root] = reciprocal(engine.root_hat());
    for (Node j : leaves(rt.base)) {
      if (j != root) v[j] = engine.v(j);
    }
    BridgeSolution s = assemble_bridge(problem, v);
    s.sweeps = sweeps;
    s.converged = converged;
    s.residual_history = history;
    return s;
  };

  if (mass == 0.0) return finish(0, true);

  const Node top = rt.base.node_count() == 1 ? 0 : rt.children_of(root).front();
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    const Vector phi_root = top ? engine.up(top) : Vector::Ones(sizes[root]);
    engine.root_hat() = divide_checked(mu_root, phi_root, root);
    for (Node j : schedule) {
      engine.v(j) = divide_checked(problem.leaf_marginals.at(j), engine.phi_hat(j), j);
      engine.touch(j);
    }
    if (gauge_leaf) {
      const double total = engine.up(top).sum();
      if (total > 0.0 && std::isfinite(total)) {
        engine.v(gauge_leaf) /= total;
        engine.root_hat() *= total;
        engine.touch(gauge_leaf);
      }
    }

    const Vector phi_now = top ? engine.up(top) : Vector::Ones(sizes[root]);
    double residual = (phi_now.cwiseProduct(engine.root_hat()) - mu_root).lpNorm<1>();
    for (Node j : schedule) {
      const Vector mu_j = engine.v(j).cwiseProduct(engine.phi_hat(j));
      residual = std::max(residual, (mu_j - problem.leaf_marginals.at(j)).lpNorm<1>());
    }
    residual /= mass;
    if (!std::isfinite(residual)) {
      throw Error(Errc::NumericalUnderflow, "bridge residual is not finite");
    }
    history.push_back(residual);
    if (residual <= options.tol) return finish(sweep, true);
  }
  throw BridgeNotConverged(Errc::MaxSweepsExceeded,
                           "bridge did not reach tol " + std::to_string(options.tol) + " in " +
                               std::to_string(options.max_sweeps) + " sweeps",
                           finish(options.max_sweeps, false));
}

BridgeObjective bridge_objective(const MarkovTreeProblem& problem, const BridgeSolution& solution) {
  validate_bridge_problem(problem);
  const RootedTree& rt = problem.rooted;
  if (solution.mu.size() != static_cast<size_t>(rt.base.node_count() + 1)) {
    throw Error(Errc::ProblemMismatch, "solution does not match the problem's tree");
  }
  BridgeObjective obj;
  for (Node c = 1; c <= rt.base.node_count(); ++c) {
    if (c == rt.root) continue;
    const Node p = rt.parent_of(c);
    auto it = solution.plans.find({p, c});
    if (it == solution.plans.end()) throw Error(Errc::ProblemMismatch, "missing plan " + edge_name(p, c));
    const Matrix& a = transition(problem, p, c);
    const Matrix& m = it->second;
    const double weighted = kl_divergence(m, Matrix(solution.mu[p].asDiagonal() * a));
    const double plain = kl_divergence(m, a);
    if (!std::isfinite(weighted) || !std::isfinite(plain)) {
      throw Error(Errc::SupportViolation, "plan " + edge_name(p, c) + " charges a forbidden transition");
    }
    obj.kl_form += weighted;
    obj.degree_form += plain;
  }
  for (Node j = 1; j <= rt.base.node_count(); ++j) {
    if (j == rt.root) {
      obj.degree_form -= neg_entropy(solution.mu[j]);
    } else if (!rt.base.is_leaf(j)) {
      obj.degree_form -= (rt.base.degree(j) - 1) * neg_entropy(solution.mu[j]);
    }
  }
  return obj;
}

MarkovTreeProblem reroot_problem(const MarkovTreeProblem& problem, Node new_root) {
  validate_bridge_problem(problem);
  const Node old_root = problem.rooted.root;
  MarkovTreeProblem out;
  out.rooted = root_at(problem.rooted.base, new_root);
  out.leaf_marginals = problem.leaf_marginals;
  out.node_weights = problem.node_weights;
  if (!out.leaf_marginals.count(new_root)) {
    throw Error(Errc::NoConstraints, "the new root leaf needs a marginal");
  }
  const auto path = path_between(problem.rooted.base, old_root, new_root);
  std::map<Edge, Matrix> reversed;
  // Reversal weights propagate the all-ones vector down the old orientation;
  // their factors cancel at interior path nodes and are absorbed at the ends.
  Vector a = Vector::Ones(transition(problem, path[0], path[1]).rows());
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    const Matrix& fwd = transition(problem, path[i], path[i + 1]);
    const Vector next = fwd.transpose() * a;
    if ((next.array() <= 0.0).any()) {
      throw Error(Errc::NonPositiveEntry, "node " + std::to_string(path[i + 1]) +
                                              " has a state no transition reaches");
    }
    reversed[{path[i + 1], path[i]}] =
        next.cwiseInverse().asDiagonal() * fwd.transpose() * a.asDiagonal();
    a = next;
  }
  for (const auto& [edge, m] : problem.transitions) {
    const bool on_path = reversed.count({edge.second, edge.first}) > 0;
    if (!on_path) out.transitions[edge] = m;
  }
  for (auto& [edge, m] : reversed) out.transitions[edge] = std::move(m);
  return out;
}

BridgeSolution reroot_solution(const MarkovTreeProblem& problem, const BridgeSolution& solution,
                               Node new_root) {
  const MarkovTreeProblem target = reroot_problem(problem, new_root);
  const Node old_root = problem.rooted.root;
  const auto path = path_between(problem.rooted.base, old_root, new_root);

  // Leaf vectors for the new orientation: the old root trades 1/v for v and
  // the new root absorbs the reversal weight accumulated along the path.
  Vector a = Vector::Ones(transition(problem, path[0], path[1]).rows());
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    a = transition(problem, path[i], path[i + 1]).transpose() * a;
  }
  std::map<Node, Vector> v = solution.v;
  v[old_root] = reciprocal(solution.v.at(old_root));
  v[new_root] = reciprocal(Vector(solution.v.at(new_root).cwiseProduct(a)));

  BridgeSolution out = assemble_bridge(target, v);
  out.mu = solution.mu;
  out.plans.clear();
  std::map<Edge, bool> flip;
  for (size_t i = 0; i + 1 < path.size(); ++i) flip[{path[i], path[i + 1]}] = true;
  for (const auto& [edge, m] : solution.plans) {
    if (flip.count(edge)) {
      out.plans[{edge.second, edge.first}] = m.transpose();
    } else {
      out.plans[edge] = m;
    }
  }
  out.sweeps = solution.sweeps;
  out.converged = solution.converged;
  out.residual_history = solution.residual_history;
  return out;
}

PathBridge path_bridge(const std::vector<Matrix>& transitions, const Vector& first,
                       const Vector& last, const BridgeOptions& options) {
  if (transitions.empty()) throw Error(Errc::InvalidArgument, "a path bridge needs at least one step");
  const int steps = static_cast<int>(transitions.size());
  std::vector<Edge> edges;
  for (int t = 1; t <= steps; ++t) edges.push_back({t, t + 1});
  MarkovTreeProblem problem;
  problem.rooted = root_at(validate_tree(steps + 1, edges), 1);
  for (int t = 1; t <= steps; ++t) problem.transitions[{t, t + 1}] = transitions[t - 1];
  problem.leaf_marginals[1] = first;
  problem.leaf_marginals[steps + 1] = last;

  PathBridge out;
  out.solution = bridge_sinkhorn(problem, options);
  out.zero_mass_rows.assign(steps, {});
  for (int t = 1; t <= steps; ++t) {
    const Matrix& m = out.solution.plans.at({t, t + 1});
    out.plans.push_back(m);
    const Vector rows = m.rowwise().sum();
    Matrix bar(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (rows[i] > 0.0) {
        bar.row(i) = m.row(i) / rows[i];
      } else {
        bar.row(i).setConstant(1.0 / static_cast<double>(m.cols()));
        out.zero_mass_rows[t - 1].push_back(static_cast<int>(i));
      }
    }
    out.transitions.push_back(std::move(bar));
  }
  out.marginals.push_back(out.plans.front().rowwise().sum());
  for (int t = 0; t < steps; ++t) {
    out.marginals.push_back(out.transitions[t].transpose() * out.marginals.back());
  }
  return out;
}

OtBridge ot_to_bridge(const TreeOTProblem& problem, Node root) {
  validate_problem(problem);
  const Tree& tree = problem.tree;
  OtBridge out;
  MarkovTreeProblem& mp = out.problem;
  mp.rooted = root_at(tree, root);
  for (const auto& [j, mu] : problem.constraints) {
    if (!tree.is_leaf(j)) {
      throw Error(Errc::InvalidArgument, "constraint on internal node " + std::to_string(j) +
                                             "; split the problem first");
    }
    mp.leaf_marginals[j] = mu;
  }
  for (Node p : mp.rooted.preorder) {
    const auto& kids = mp.rooted.children_of(p);
    for (Node c : kids) {
      const Matrix cost = oriented(problem.edge_costs, p, c);
      const Matrix k = exp_of(Matrix(-cost / problem.epsilon));
      const Vector sums = k.rowwise().sum();
      if (!(sums.array() > 0.0).all() || !sums.allFinite()) {
        throw Error(Errc::NonPositiveEntry, "kernel " + edge_name(p, c) + " has a zero or infinite row");
      }
      const Vector b = sums.cwiseInverse();
      auto it = out.row_scaling.find(p);
      if (it == out.row_scaling.end()) {
        out.row_scaling[p] = b;
      } else {
        const double gap = ((it->second - b).array().abs() /
                            it->second.array().abs().max(b.array().abs())).maxCoeff();
        if (gap > 1e-9) {
          throw Error(Errc::IncompatibleRowSums,
                      "out-edges of node " + std::to_string(p) + " have different row sums");
        }
      }
      mp.transitions[{p, c}] = b.asDiagonal() * k;
    }
    if (p != mp.rooted.root && !kids.empty()) {
      const int out_degree = static_cast<int>(kids.size());
      mp.node_weights[p] = out.row_scaling.at(p).cwiseInverse().array().pow(out_degree).matrix();
    }
  }
  return out;
}

double bethe_objective(const OtBridge& bridge, const BridgeSolution& solution) {
  const MarkovTreeProblem& p = bridge.problem;
  validate_bridge_problem(p);
  const RootedTree& rt = p.rooted;
  double value = 0.0;
  for (Node c = 1; c <= rt.base.node_count(); ++c) {
    if (c == rt.root) continue;
    const Node parent = rt.parent_of(c);
    auto it = solution.plans.find({parent, c});
    if (it == solution.plans.end()) {
      throw Error(Errc::ProblemMismatch, "missing plan " + edge_name(parent, c));
    }
    const double h = kl_divergence(it->second, transition(p, parent, c));
    if (!std::isfinite(h)) {
      throw Error(Errc::SupportViolation, "plan " + edge_name(parent, c) + " charges a forbidden transition");
    }
    value += h;
  }
  for (Node j = 1; j <= rt.base.node_count(); ++j) {
    if (j == rt.root || rt.base.is_leaf(j)) continue;
    value -= (rt.base.degree(j) - 1) * kl_divergence(solution.mu[j], bridge.row_scaling.at(j));
  }
  return value;
}

}  // namespace treeot
