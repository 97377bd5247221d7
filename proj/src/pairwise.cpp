#include "treeot/pairwise.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "treeot/oracle.hpp"

namespace treeot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Diverged {
  std::string what;
};

class PairwiseRun {
 public:
  PairwiseRun(const EdgeKernels& kernels, const std::map<Node, Vector>& targets, Domain domain)
      : k_(kernels), tree_(kernels.tree()), targets_(targets), domain_(domain) {
    scal_.assign(tree_.slot_count(), Vector());
    for (Node j = 1; j <= tree_.node_count(); ++j) {
      for (Node k : tree_.neighbors(j)) {
        const int n = k_.node_size(j);
        scal_[tree_.slot(j, k)] = domain_ == Domain::Linear ? Vector::Ones(n) : Vector::Zero(n);
      }
    }
    for (const auto& [j, mu] : targets_) {
      log_targets_[j] = log_of(mu);
    }
  }

  // Edge marginal at j of the plan on edge (j, k), in domain form.
  Vector edge_marginal(Node j, Node k) const {
    const Vector q = message(j, k);
    return combine(scal_[tree_.slot(j, k)], q);
  }

  void sweep() {
    for (Node j = 1; j <= tree_.node_count(); ++j) {
      const auto& nb = tree_.neighbors(j);
      if (nb.empty()) continue;
      std::vector<Vector> q;
      for (Node k : nb) q.push_back(message(j, k));
      Vector target;
      auto it = targets_.find(j);
      if (it != targets_.end()) {
        target = domain_ == Domain::Linear ? it->second : log_targets_.at(j);
      } else {
        target = geometric_mean(j, q);
      }
      for (size_t i = 0; i < nb.size(); ++i) {
        Vector s = divide(target, q[i]);
        if (domain_ == Domain::Linear && out_of_range(s, domain_)) {
          throw Diverged{"scaling at node " + std::to_string(j) + " left the representable range"};
        }
        if (domain_ == Domain::Log && out_of_range(s, domain_)) {
          throw Diverged{"log scaling at node " + std::to_string(j) + " is not finite"};
        }
        scal_[tree_.slot(j, nb[i])] = std::move(s);
      }
    }
  }

  // Largest L1 mismatch between incident plan marginals and their target.
  double residual() const {
    double r = 0.0;
    for (Node j = 1; j <= tree_.node_count(); ++j) {
      const auto& nb = tree_.neighbors(j);
      if (nb.empty()) continue;
      std::vector<Vector> m;
      for (Node k : nb) m.push_back(to_plain(edge_marginal(j, k)));
      Vector ref;
      auto it = targets_.find(j);
      if (it != targets_.end()) {
        ref = it->second;
      } else {
        ref = Vector::Zero(m.front().size());
        for (const auto& x : m) ref += x;
        ref /= static_cast<double>(m.size());
      }
      for (const auto& x : m) r = std::max(r, (x - ref).lpNorm<1>());
    }
    return r;
  }

  Matrix plan(Node a, Node b) const {
    const Vector& sa = scal_[tree_.slot(a, b)];
    const Vector& sb = scal_[tree_.slot(b, a)];
    if (domain_ == Domain::Linear) return sa.asDiagonal() * k_.linear(a, b) * sb.asDiagonal();
    Matrix lg = k_.log(a, b);
    lg.colwise() += sa;
    lg.rowwise() += sb.transpose();
    return exp_of(lg);
  }

  Domain domain() const { return domain_; }

 private:
  Vector message(Node j, Node k) const {
    return k_.apply(domain_, j, k, scal_[tree_.slot(k, j)]);
  }

  Vector combine(const Vector& a, const Vector& b) const {
    return domain_ == Domain::Linear ? Vector(a.cwiseProduct(b)) : Vector(a + b);
  }

  Vector to_plain(const Vector& x) const {
    return domain_ == Domain::Linear ? x : exp_of(x);
  }

  Vector divide(const Vector& num, const Vector& den) const {
    Vector out(num.size());
    for (Eigen::Index i = 0; i < num.size(); ++i) {
      if (domain_ == Domain::Linear) {
        if (num[i] == 0.0) {
          out[i] = 0.0;
        } else if (den[i] > 0.0) {
          out[i] = num[i] / den[i];
        } else {
          throw Diverged{"positive target over an empty message"};
        }
      } else {
        if (num[i] == -kInf) {
          out[i] = -kInf;
        } else if (den[i] > -kInf) {
          out[i] = num[i] - den[i];
        } else {
          throw Diverged{"positive target over an empty message"};
        }
      }
    }
    return out;
  }

  Vector geometric_mean(Node j, const std::vector<Vector>& q) const {
    const auto& nb = tree_.neighbors(j);
    const double w = 1.0 / static_cast<double>(nb.size());
    if (domain_ == Domain::Log) {
      Vector acc = Vector::Zero(q.front().size());
      for (size_t i = 0; i < nb.size(); ++i) {
        const Vector m = combine(scal_[tree_.slot(j, nb[i])], q[i]);
        for (Eigen::Index l = 0; l < acc.size(); ++l) {
          acc[l] = (acc[l] == -kInf || m[l] == -kInf) ? -kInf : acc[l] + w * m[l];
        }
      }
      return acc;
    }
    Vector acc = Vector::Ones(q.front().size());
    for (size_t i = 0; i < nb.size(); ++i) {
      const Vector m = combine(scal_[tree_.slot(j, nb[i])], q[i]);
      acc.array() *= m.array().pow(w);
    }
    return acc;
  }

  const EdgeKernels& k_;
  const Tree& tree_;
  const std::map<Node, Vector>& targets_;
  std::map<Node, Vector> log_targets_;
  Domain domain_;
  std::vector<Vector> scal_;  // by Tree::slot: (j,k) is edge {j,k}'s scaling on j's side
};

double edge_value(const Matrix& plan, const Matrix& cost, double epsilon) {
  double c = 0.0;
  for (Eigen::Index i = 0; i < plan.rows(); ++i) {
    for (Eigen::Index k = 0; k < plan.cols(); ++k) {
      if (plan(i, k) > 0.0) c += plan(i, k) * cost(i, k);
    }
  }
  return c + epsilon * neg_entropy(plan);
}

}  // namespace

PairwiseSolution pairwise_solve(const PairwiseProblem& problem, const PairwiseOptions& options) {
  const auto sizes = validate_problem(problem);
  if (problem.constraints.empty()) throw Error(Errc::NoConstraints, "no constrained nodes");
  const Tree& tree = problem.tree;

  std::vector<Vector> mus;
  for (const auto& [j, mu] : problem.constraints) mus.push_back(mu);
  const double mass = check_mass_balance(mus, 1e-9).mass;
  std::map<Node, Vector> targets;
  for (const auto& [j, mu] : problem.constraints) targets[j] = mass > 0.0 ? Vector(mu / mass) : mu;

  EdgeKernels kernels = EdgeKernels::from_costs(tree, problem.edge_costs, problem.epsilon);
  for (Node j = 1; j <= tree.node_count(); ++j) {
    if (tree.degree(j) == 0) kernels.set_isolated_size(j, sizes[j]);
  }

  PairwiseSolution sol;
  auto collect = [&](const PairwiseRun& run) {
    sol.plans.clear();
    sol.mu.assign(tree.node_count() + 1, Vector());
    sol.objective = 0.0;
    for (const auto& [a, b] : tree.edges()) {
      Matrix m = run.plan(a, b) * mass;
      sol.objective += edge_value(m, oriented(problem.edge_costs, a, b), problem.epsilon);
      sol.plans[{a, b}] = std::move(m);
    }
    for (Node j = 1; j <= tree.node_count(); ++j) {
      if (tree.degree(j) == 0) {
        sol.mu[j] = problem.constraints.at(j);
        sol.objective += problem.epsilon * neg_entropy(sol.mu[j]);
        continue;
      }
      Vector acc = Vector::Zero(sizes[j]);
      for (Node k : tree.neighbors(j)) {
        const auto& [a, b] = tree.edges()[tree.edge_index(j, k)];
        const Matrix& m = sol.plans.at({a, b});
        acc += a == j ? Vector(m.rowwise().sum()) : Vector(m.colwise().sum().transpose());
      }
      sol.mu[j] = acc / static_cast<double>(tree.degree(j));
    }
    sol.domain = run.domain();
  };

  auto attempt = [&](Domain domain) {
    sol.residual_history.clear();
    PairwiseRun run(kernels, targets, domain);
    for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
      run.sweep();
      const double r = run.residual();
      if (!std::isfinite(r)) throw Diverged{"residual is not finite"};
      sol.residual_history.push_back(r);
      if (r <= options.tol) {
        sol.sweeps = sweep;
        sol.converged = true;
        collect(run);
        return;
      }
    }
    sol.sweeps = options.max_sweeps;
    sol.converged = false;
    collect(run);
    throw PairwiseNotConverged(Errc::MaxSweepsExceeded,
                               "pairwise iteration did not reach tol " + std::to_string(options.tol) +
                                   " in " + std::to_string(options.max_sweeps) + " sweeps",
                               sol);
  };

  if (tree.edge_count() == 0 || mass == 0.0) {
    PairwiseRun run(kernels, targets, Domain::Linear);
    collect(run);
    sol.converged = true;
    return sol;
  }

  Domain start = Domain::Linear;
  if (options.log_domain == LogDomainMode::On ||
      (options.log_domain == LogDomainMode::Auto && kernels.linear_underflows())) {
    start = Domain::Log;
  }
  try {
    attempt(start);
  } catch (const Diverged& d) {
    if (start == Domain::Log || options.log_domain != LogDomainMode::Auto) {
      PairwiseSolution partial;
      partial.residual_history = sol.residual_history;
      partial.sweeps = static_cast<int>(sol.residual_history.size());
      partial.domain = start;
      throw PairwiseNotConverged(Errc::NotConverged, "pairwise iteration diverged: " + d.what,
                                 partial);
    }
    sol.restarted_in_log_domain = true;
    try {
      attempt(Domain::Log);
    } catch (const Diverged& again) {
      PairwiseSolution partial;
      partial.residual_history = sol.residual_history;
      partial.domain = Domain::Log;
      partial.restarted_in_log_domain = true;
      throw PairwiseNotConverged(Errc::NotConverged, "pairwise iteration diverged: " + again.what,
                                 partial);
    }
    sol.restarted_in_log_domain = true;
  }
  return sol;
}

EntropyGapReport entropy_gap(const PairwiseProblem& problem, const PairwiseSolution& pairwise,
                             const SolveReport& multi) {
  const auto sizes = validate_problem(problem);
  const Tree& tree = problem.tree;
  if (pairwise.mu.size() != sizes.size() || !multi.kernels ||
      multi.kernels->tree().node_count() != tree.node_count()) {
    throw Error(Errc::ProblemMismatch, "solutions do not belong to the same tree");
  }
  for (Node j = 1; j <= tree.node_count(); ++j) {
    if (pairwise.mu[j].size() != sizes[j] || multi.kernels->node_size(j) != sizes[j]) {
      throw Error(Errc::ProblemMismatch, "node " + std::to_string(j) + " differs in size");
    }
  }
  for (const auto& [a, b] : tree.edges()) {
    if (!pairwise.plans.count({a, b})) throw Error(Errc::ProblemMismatch, "pairwise plan missing");
  }

  EntropyGapReport report;
  for (Node j = 1; j <= tree.node_count(); ++j) {
    if (tree.degree(j) < 2) continue;
    const Vector m = extract_marginal(multi, problem, j);
    EntropyRow row;
    row.node = j;
    row.shannon_multi = shannon_entropy(m);
    row.shannon_pair = shannon_entropy(pairwise.mu[j]);
    row.neg_entropy_multi = neg_entropy(m);
    row.neg_entropy_pair = neg_entropy(pairwise.mu[j]);
    report.rows.push_back(row);
  }

  MultiDecomposition& d = report.decomposition;
  const double eps = problem.epsilon;
  d.objective = primal_objective(multi, problem);
  double states = 1.0;
  double mass = 0.0;
  for (Node j = 1; j <= tree.node_count(); ++j) {
    states *= sizes[j];
    const Vector m = extract_marginal(multi, problem, j);
    mass = m.sum();
    const int excess = tree.degree(j) - 1;
    if (excess > 0) d.node_terms += eps * excess * neg_entropy(m);
    if (tree.degree(j) == 0) d.edge_terms += eps * neg_entropy(m);
  }
  for (const auto& [a, b] : tree.edges()) {
    d.edge_terms += edge_value(extract_plan(multi, problem, a, b),
                               oriented(problem.edge_costs, a, b), eps);
  }
  // Entropy of the full coupling versus its tree factorization differs only
  // in the "- mass + count" parts of each divergence.
  double c = states - mass;
  for (const auto& [a, b] : tree.edges()) c -= sizes[a] * sizes[b] - mass;
  for (Node j = 1; j <= tree.node_count(); ++j) {
    const int excess = tree.degree(j) - 1;
    if (excess > 0) c += excess * (sizes[j] - mass);
    if (tree.degree(j) == 0) c -= sizes[j] - mass;
  }
  d.constant = eps * c;
  return report;
}

CycleReport cycle_counterexample() {
  CycleReport r;
  const Matrix eye = Matrix::Identity(2, 2);
  Matrix swap(2, 2);
  swap << 0.0, 1.0, 1.0, 0.0;
  r.costs[{1, 2}] = swap;
  r.costs[{2, 3}] = swap;
  r.costs[{1, 3}] = eye;
  r.pairwise_plans[{1, 2}] = eye;
  r.pairwise_plans[{2, 3}] = eye;
  r.pairwise_plans[{1, 3}] = swap;
  r.first_marginal = Vector::Ones(2);

  r.pairwise_value = 0.0;
  for (const auto& [e, c] : r.costs) r.pairwise_value += c.cwiseProduct(r.pairwise_plans.at(e)).sum();

  std::vector<oracle::PairMarginal> pairs;
  for (const auto& [e, m] : r.pairwise_plans) pairs.push_back({e.first, e.second, m});
  r.projections_feasible = oracle::feasibility_check({2, 2, 2}, pairs);

  r.min_tensor_cost = kInf;
  for (int i1 = 0; i1 < 2; ++i1) {
    for (int i2 = 0; i2 < 2; ++i2) {
      for (int i3 = 0; i3 < 2; ++i3) {
        const double c = r.costs.at({1, 2})(i1, i2) + r.costs.at({1, 3})(i1, i3) +
                         r.costs.at({2, 3})(i2, i3);
        r.min_tensor_cost = std::min(r.min_tensor_cost, c);
      }
    }
  }
  r.multi_lower_bound = r.min_tensor_cost * r.first_marginal.sum();
  return r;
}

}  // namespace treeot
