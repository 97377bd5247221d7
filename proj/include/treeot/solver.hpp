#pragma once

#include <map>
#include <memory>
#include <vector>

#include "treeot/error.hpp"
#include "treeot/graph.hpp"
#include "treeot/numerics.hpp"
#include "treeot/projections.hpp"

namespace treeot {

struct TreeOTProblem {
  Tree tree;
  EdgeMatrices edge_costs;  // one per edge; +inf marks a forbidden pair
  double epsilon = 1.0;
  std::map<Node, Vector> constraints;
};

// Checks shapes, epsilon and mass balance; returns per-node sizes (index 0 unused).
std::vector<int> validate_problem(const TreeOTProblem& problem);

enum class LogDomainMode { Auto, On, Off };

struct SolveOptions {
  double tol = 1e-8;
  int max_sweeps = 10000;
  LogDomainMode log_domain = LogDomainMode::Auto;
};

// An independent piece of a problem after pruning and splitting. Local labels
// run 1..J'; `original[j]` maps a local label back (index 0 unused).
struct Subproblem {
  TreeOTProblem problem;
  std::vector<Node> original;
  std::map<Node, Vector> log_potentials;  // constant factors from pruned branches
};

std::vector<Subproblem> preprocess(const TreeOTProblem& problem);

struct PieceReport {
  int sweeps = 0;
  bool converged = false;
  Domain domain = Domain::Linear;
  bool restarted_in_log_domain = false;
  std::vector<double> residual_history;
  std::vector<double> dual_history;
};

struct SolveReport {
  ScalingState scaling;  // on the original tree, all messages clean
  std::shared_ptr<const EdgeKernels> kernels;
  int sweeps = 0;
  std::vector<double> residual_history;
  std::vector<double> dual_history;
  bool converged = false;
  double mass = 1.0;
  std::vector<PieceReport> pieces;
};

using SolveNotConverged = NotConvergedError<SolveReport>;

// Scheduled Sinkhorn iteration. Throws SolveNotConverged when the sweep
// budget runs out and NumericalUnderflow when linear arithmetic breaks down
// with the log domain disabled.
SolveReport solve(const TreeOTProblem& problem, const SolveOptions& options = {});

Vector extract_marginal(const SolveReport& report, const TreeOTProblem& problem, Node j,
                        bool allow_unconverged = false);
Matrix extract_plan(const SolveReport& report, const TreeOTProblem& problem, Node first,
                    Node second, bool allow_unconverged = false);

// <C, M> + eps H(M) evaluated from edge and node projections.
double primal_objective(const SolveReport& report, const TreeOTProblem& problem,
                        bool allow_unconverged = false);

// Scaling vector of node j as plain values (ones for unconstrained nodes).
Vector scaling_vector(const SolveReport& report, Node j);

}  // namespace treeot
