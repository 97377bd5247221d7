#include "treeot/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <string>

namespace treeot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector to_log(const Vector& v) { return log_of(v); }

struct NumericalFailure {};

// Result of iterating one piece in a fixed domain.
struct PieceRun {
  std::shared_ptr<EdgeKernels> kernels;
  ScalingState state;
  PieceReport report;
};

Vector divide_constraint(const Vector& target, const Vector& denom, Domain domain) {
  Vector u(target.size());
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    if (domain == Domain::Linear) {
      if (target(i) == 0.0) {
        u(i) = 0.0;
      } else if (!(denom(i) > 0.0) || !std::isfinite(denom(i))) {
        throw NumericalFailure{};
      } else {
        u(i) = target(i) / denom(i);
      }
    } else {
      if (target(i) == -kInf) {
        u(i) = -kInf;
      } else if (denom(i) == -kInf || std::isnan(denom(i))) {
        throw NumericalFailure{};
      } else {
        u(i) = target(i) - denom(i);
      }
    }
  }
  if (out_of_range(u, domain)) throw NumericalFailure{};
  return u;
}

double dual_value(const ScalingState& state, const std::map<Node, Vector>& targets, double epsilon,
                  double current_mass) {
  double linear = 0.0;
  for (const auto& [j, mu] : targets) {
    const Vector& u = state.u[j];
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      if (mu(i) <= 0.0) continue;
      linear += mu(i) * (state.domain == Domain::Log ? u(i) : std::log(u(i)));
    }
  }
  return -epsilon * current_mass + epsilon * linear;
}

PieceRun run_piece(const Subproblem& sub, std::shared_ptr<EdgeKernels> kernels, Domain domain,
                   const SolveOptions& options, double mass) {
  const TreeOTProblem& p = sub.problem;
  const Tree& tree = p.tree;
  PieceRun run;
  run.kernels = kernels;
  run.report.domain = domain;
  ScalingState& state = run.state;
  state = make_state(*kernels, domain);
  for (const auto& [j, lp] : sub.log_potentials) {
    state.potential[j] = domain == Domain::Log ? lp : exp_of(lp);
    if (out_of_range(state.potential[j], domain)) throw NumericalFailure{};
  }

  std::map<Node, Vector> targets;  // unit mass, plain values
  std::map<Node, Vector> domain_targets;
  for (const auto& [j, mu] : p.constraints) {
    targets[j] = mu / mass;
    domain_targets[j] = domain == Domain::Log ? to_log(targets[j]) : targets[j];
  }
  const std::vector<Node> schedule = leaf_schedule(tree);
  for (Node j : schedule) state.u[j] = Vector::Constant(kernels->node_size(j), domain == Domain::Log ? 0.0 : 1.0);
  refresh_all(state, *kernels);

  const size_t count = schedule.size();
  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    for (size_t idx = 0; idx < count; ++idx) {
      const Node j = schedule[idx];
      Vector denom = state.potential[j].size() > 0
                         ? state.potential[j]
                         : Vector(Vector::Constant(kernels->node_size(j), domain == Domain::Log ? 0.0 : 1.0));
      for (Node k : tree.neighbors(j)) {
        const int s = tree.slot(j, k);
        if (state.dirty[s]) refresh_alpha(state, *kernels, j, k);
        if (domain == Domain::Linear) {
          denom.array() *= state.alpha[s].array();
        } else {
          denom += state.alpha[s];
        }
      }
      state.u[j] = divide_constraint(domain_targets.at(j), denom, domain);
      if (count > 1) mark_path_dirty(state, tree, j, schedule[(idx + 1) % count]);
    }

    // Full refresh so that residuals and the dual see exact projections.
    mark_all_dirty(state);
    refresh_all(state, *kernels);
    for (const auto& a : state.alpha) {
      if (out_of_range(a, domain) && domain == Domain::Linear) throw NumericalFailure{};
    }
    double residual = 0.0;
    double current_mass = 0.0;
    for (const auto& [j, mu] : targets) {
      const Vector pj = project_marginal(state, *kernels, j);
      if (!pj.allFinite()) throw NumericalFailure{};
      residual = std::max(residual, (pj - mu).lpNorm<1>());
      current_mass = pj.sum();
    }
    run.report.sweeps = sweep;
    run.report.residual_history.push_back(residual);
    run.report.dual_history.push_back(dual_value(state, targets, p.epsilon, current_mass));
    if (residual <= options.tol) {
      run.report.converged = true;
      break;
    }
  }
  return run;
}

PieceRun solve_piece(const Subproblem& sub, const SolveOptions& options, double mass) {
  auto kernels = std::make_shared<EdgeKernels>(
      EdgeKernels::from_costs(sub.problem.tree, sub.problem.edge_costs, sub.problem.epsilon));
  if (sub.problem.tree.node_count() == 1) {
    kernels->set_isolated_size(1, static_cast<int>(sub.problem.constraints.begin()->second.size()));
  }
  bool linear_unsafe = kernels->linear_underflows();
  for (const auto& [j, lp] : sub.log_potentials) {
    linear_unsafe = linear_unsafe || out_of_range(exp_of(lp), Domain::Linear);
  }
  Domain start = Domain::Linear;
  if (options.log_domain == LogDomainMode::On ||
      (options.log_domain == LogDomainMode::Auto && linear_unsafe)) {
    start = Domain::Log;
  }
  try {
    return run_piece(sub, kernels, start, options, mass);
  } catch (const NumericalFailure&) {
    if (start == Domain::Log || options.log_domain == LogDomainMode::Off) {
      throw Error(Errc::NumericalUnderflow,
                  start == Domain::Log
                      ? "log-domain iteration met a marginal outside the kernel support"
                      : "linear-domain scalings left the representable range");
    }
  }
  try {
    PieceRun run = run_piece(sub, kernels, Domain::Log, options, mass);
    run.report.restarted_in_log_domain = true;
    return run;
  } catch (const NumericalFailure&) {
    throw Error(Errc::NumericalUnderflow,
                "log-domain iteration met a marginal outside the kernel support");
  }
}

void require_converged(const SolveReport& report, bool allow) {
  if (!report.converged && !allow) {
    throw Error(Errc::NotConverged, "solve report did not converge");
  }
}

}  // namespace

std::vector<int> validate_problem(const TreeOTProblem& problem) {
  const Tree& tree = problem.tree;
  if (!(problem.epsilon > 0.0)) {
    throw Error(Errc::EpsilonNonPositive, "epsilon = " + std::to_string(problem.epsilon));
  }
  std::vector<int> sizes(tree.node_count() + 1, 0);
  auto set_size = [&](Node j, Eigen::Index n, const std::string& what) {
    if (sizes[j] != 0 && sizes[j] != n) {
      throw Error(Errc::ShapeMismatch, what + " gives node " + std::to_string(j) + " size " +
                                           std::to_string(n) + ", expected " +
                                           std::to_string(sizes[j]));
    }
    sizes[j] = static_cast<int>(n);
  };
  for (const auto& [edge, c] : problem.edge_costs) {
    if (tree.edge_index(edge.first, edge.second) < 0) {
      throw Error(Errc::InvalidArgument, "cost given for non-edge (" + std::to_string(edge.first) +
                                             "," + std::to_string(edge.second) + ")");
    }
  }
  for (const auto& [a, b] : tree.edges()) {
    const Matrix c = oriented(problem.edge_costs, a, b);
    const std::string what = "cost (" + std::to_string(a) + "," + std::to_string(b) + ")";
    set_size(a, c.rows(), what);
    set_size(b, c.cols(), what);
  }
  if (problem.constraints.empty()) throw Error(Errc::NoConstraints, "no constrained nodes");
  std::vector<Vector> masses;
  for (const auto& [j, mu] : problem.constraints) {
    if (!tree.contains(j)) throw Error(Errc::UnknownNode, "constraint on node " + std::to_string(j));
    set_size(j, mu.size(), "constraint");
    masses.push_back(mu);
  }
  check_mass_balance(masses, 1e-9);
  for (Node j = 1; j <= tree.node_count(); ++j) {
    if (sizes[j] == 0) throw Error(Errc::ShapeMismatch, "node " + std::to_string(j) + " has no size");
  }
  return sizes;
}

std::vector<Subproblem> preprocess(const TreeOTProblem& problem) {
  const std::vector<int> sizes = validate_problem(problem);
  const Tree& tree = problem.tree;
  const int count = tree.node_count();
  auto constrained = [&](Node j) { return problem.constraints.count(j) > 0; };

  std::vector<char> alive(count + 1, 1);
  std::vector<int> degree(count + 1, 0);
  std::vector<Vector> log_pot(count + 1);
  for (Node j = 1; j <= count; ++j) degree[j] = tree.degree(j);

  // Prune unconstrained leaves, smallest label first, absorbing K^(k,l) 1.
  std::priority_queue<Node, std::vector<Node>, std::greater<>> queue;
  for (Node j = 1; j <= count; ++j) {
    if (count > 1 && degree[j] == 1 && !constrained(j)) queue.push(j);
  }
  while (!queue.empty()) {
    const Node leaf = queue.top();
    queue.pop();
    if (!alive[leaf] || degree[leaf] != 1) continue;
    Node k = 0;
    for (Node nb : tree.neighbors(leaf)) {
      if (alive[nb]) k = nb;
    }
    const Matrix log_kernel = -oriented(problem.edge_costs, k, leaf) / problem.epsilon;
    const Vector incoming = log_pot[leaf].size() > 0 ? log_pot[leaf] : Vector(Vector::Zero(sizes[leaf]));
    const Vector message = log_matvec(log_kernel, incoming);
    log_pot[k] = log_pot[k].size() > 0 ? Vector(log_pot[k] + message) : message;
    alive[leaf] = 0;
    --degree[leaf];
    --degree[k];
    if (!constrained(k) && degree[k] == 1) queue.push(k);
  }
  bool any = false;
  for (Node j = 1; j <= count; ++j) any = any || (alive[j] && constrained(j));
  if (!any) throw Error(Errc::NoConstraints, "no constrained node survives pruning");

  // Group surviving edges: edges meeting at an unconstrained node stay together.
  const auto& edges = tree.edges();
  std::vector<int> group(edges.size());
  std::iota(group.begin(), group.end(), 0);
  auto find = [&](int x) {
    while (group[x] != x) x = group[x] = group[group[x]];
    return x;
  };
  std::vector<int> live_edges;
  for (int e = 0; e < static_cast<int>(edges.size()); ++e) {
    if (alive[edges[e].first] && alive[edges[e].second]) live_edges.push_back(e);
  }
  std::vector<int> first_edge_at(count + 1, -1);
  for (int e : live_edges) {
    for (Node j : {edges[e].first, edges[e].second}) {
      if (constrained(j)) continue;
      if (first_edge_at[j] < 0) {
        first_edge_at[j] = e;
      } else {
        group[find(e)] = find(first_edge_at[j]);
      }
    }
  }
  std::map<int, std::vector<int>> pieces;  // keyed by smallest edge index
  for (int e : live_edges) pieces[find(e)].push_back(e);
  std::vector<std::vector<int>> ordered;
  for (auto& [root, list] : pieces) ordered.push_back(list);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& x, const auto& y) { return x.front() < y.front(); });

  std::vector<Subproblem> out;
  std::vector<char> potential_placed(count + 1, 0);
  auto attach = [&](Subproblem& sub, Node original, Node local) {
    if (auto it = problem.constraints.find(original); it != problem.constraints.end()) {
      sub.problem.constraints[local] = it->second;
    }
    if (log_pot[original].size() > 0 && !potential_placed[original]) {
      sub.log_potentials[local] = log_pot[original];
      potential_placed[original] = 1;
    }
  };

  if (ordered.empty()) {
    Node only = 0;
    for (Node j = 1; j <= count; ++j) {
      if (alive[j]) only = j;
    }
    Subproblem sub;
    sub.problem.tree = validate_tree(1, {});
    sub.problem.epsilon = problem.epsilon;
    sub.original = {0, only};
    attach(sub, only, 1);
    out.push_back(std::move(sub));
    return out;
  }

  for (const auto& list : ordered) {
    std::vector<Node> nodes;
    for (int e : list) {
      nodes.push_back(edges[e].first);
      nodes.push_back(edges[e].second);
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    std::vector<Node> local(count + 1, 0);
    Subproblem sub;
    sub.original.push_back(0);
    for (size_t i = 0; i < nodes.size(); ++i) {
      local[nodes[i]] = static_cast<Node>(i + 1);
      sub.original.push_back(nodes[i]);
    }
    std::vector<Edge> local_edges;
    for (int e : list) {
      const auto [a, b] = edges[e];
      local_edges.push_back({local[a], local[b]});
      sub.problem.edge_costs[{local[a], local[b]}] = oriented(problem.edge_costs, a, b);
    }
    sub.problem.tree = validate_tree(static_cast<int>(nodes.size()), local_edges);
    sub.problem.epsilon = problem.epsilon;
    for (Node j : nodes) attach(sub, j, local[j]);
    out.push_back(std::move(sub));
  }
  return out;
}

SolveReport solve(const TreeOTProblem& problem, const SolveOptions& options) {
  validate_problem(problem);
  std::vector<Vector> mus;
  for (const auto& [j, mu] : problem.constraints) mus.push_back(mu);
  const double mass = check_mass_balance(mus, 1e-9).mass;

  const std::vector<Subproblem> subs = preprocess(problem);
  std::vector<PieceRun> runs;
  for (const auto& sub : subs) runs.push_back(solve_piece(sub, options, mass));

  SolveReport report;
  report.mass = mass;
  report.converged = true;
  bool any_log = false;
  for (const auto& run : runs) {
    report.pieces.push_back(run.report);
    report.converged = report.converged && run.report.converged;
    report.sweeps = std::max(report.sweeps, run.report.sweeps);
    any_log = any_log || run.state.domain == Domain::Log;
  }
  for (int s = 0; s < report.sweeps; ++s) {
    double residual = 0.0, dual = 0.0;
    for (const auto& pr : report.pieces) {
      const size_t at = std::min<size_t>(s, pr.residual_history.size() - 1);
      residual = std::max(residual, pr.residual_history[at]);
      dual += pr.dual_history[at];
    }
    report.residual_history.push_back(residual);
    report.dual_history.push_back(dual);
  }

  // Glue piece scalings: u_k = prod_p u_k^(p) / mu_k^(c_k - 1) on unit mass.
  const Tree& tree = problem.tree;
  std::vector<Vector> log_u(tree.node_count() + 1);
  std::vector<int> copies(tree.node_count() + 1, 0);
  for (size_t p = 0; p < subs.size(); ++p) {
    for (const auto& [local, mu] : subs[p].problem.constraints) {
      const Node j = subs[p].original[local];
      const Vector& u = runs[p].state.u[local];
      const Vector lu = runs[p].state.domain == Domain::Log ? u : to_log(u);
      log_u[j] = log_u[j].size() > 0 ? Vector(log_u[j] + lu) : lu;
      ++copies[j];
    }
  }
  for (const auto& [j, mu] : problem.constraints) {
    if (copies[j] > 1) {
      const Vector lmu = to_log(Vector(mu / mass));
      for (Eigen::Index i = 0; i < lmu.size(); ++i) {
        log_u[j](i) = lmu(i) == -kInf ? -kInf : log_u[j](i) - (copies[j] - 1) * lmu(i);
      }
    }
  }

  auto kernels = std::make_shared<EdgeKernels>(
      EdgeKernels::from_costs(tree, problem.edge_costs, problem.epsilon));
  if (tree.node_count() == 1) {
    kernels->set_isolated_size(1, static_cast<int>(problem.constraints.begin()->second.size()));
  }
  auto build = [&](Domain domain) {
    ScalingState state = make_state(*kernels, domain);
    for (Node j = 1; j <= tree.node_count(); ++j) {
      if (log_u[j].size() == 0) continue;
      state.u[j] = domain == Domain::Log ? log_u[j] : exp_of(log_u[j]);
    }
    refresh_all(state, *kernels);
    return state;
  };
  Domain global = any_log || kernels->linear_underflows() ? Domain::Log : Domain::Linear;
  report.scaling = build(global);
  if (global == Domain::Linear) {
    bool unsafe = false;
    for (const auto& u : report.scaling.u) unsafe = unsafe || (u.size() > 0 && out_of_range(u, global));
    for (const auto& a : report.scaling.alpha) unsafe = unsafe || out_of_range(a, global);
    if (unsafe) report.scaling = build(Domain::Log);
  }
  report.kernels = kernels;

  if (!report.converged) {
    const double last = report.residual_history.empty() ? kInf : report.residual_history.back();
    throw SolveNotConverged(Errc::MaxSweepsExceeded,
                            "residual " + std::to_string(last) + " after " +
                                std::to_string(report.sweeps) + " sweeps",
                            report);
  }
  return report;
}

Vector extract_marginal(const SolveReport& report, const TreeOTProblem& problem, Node j,
                        bool allow_unconverged) {
  require_converged(report, allow_unconverged);
  if (!problem.tree.contains(j)) throw Error(Errc::UnknownNode, "node " + std::to_string(j));
  return project_marginal(report.scaling, *report.kernels, j) * report.mass;
}

Matrix extract_plan(const SolveReport& report, const TreeOTProblem& problem, Node first,
                    Node second, bool allow_unconverged) {
  require_converged(report, allow_unconverged);
  if (!problem.tree.contains(first) || !problem.tree.contains(second)) {
    throw Error(Errc::UnknownNode, "plan between unknown nodes");
  }
  return project_pair(report.scaling, *report.kernels, first, second) * report.mass;
}

double primal_objective(const SolveReport& report, const TreeOTProblem& problem,
                        bool allow_unconverged) {
  require_converged(report, allow_unconverged);
  const Tree& tree = problem.tree;
  double cost = 0.0, entropy = 0.0, states = 1.0;
  for (const auto& [a, b] : tree.edges()) {
    const Matrix plan = extract_plan(report, problem, a, b, true);
    const Matrix c = oriented(problem.edge_costs, a, b);
    for (Eigen::Index i = 0; i < plan.rows(); ++i) {
      for (Eigen::Index k = 0; k < plan.cols(); ++k) {
        if (plan(i, k) > 0.0) cost += plan(i, k) * c(i, k);
        entropy += xlogx(plan(i, k));
      }
    }
  }
  double mass = 0.0;
  for (Node j = 1; j <= tree.node_count(); ++j) {
    const Vector mu = extract_marginal(report, problem, j, true);
    states *= static_cast<double>(mu.size());
    mass = mu.sum();
    // Leaves drop out; an isolated node (degree 0) contributes its own entropy.
    const int excess = tree.degree(j) - 1;
    if (excess == 0) continue;
    for (double x : mu) entropy -= excess * xlogx(x);
  }
  entropy += states - mass;
  return cost + problem.epsilon * entropy;
}

Vector scaling_vector(const SolveReport& report, Node j) {
  const auto& u = report.scaling.u.at(j);
  if (u.size() == 0) return Vector::Ones(report.kernels->node_size(j));
  return report.scaling.domain == Domain::Log ? exp_of(u) : u;
}

}  // namespace treeot
