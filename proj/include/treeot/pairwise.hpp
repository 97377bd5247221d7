#pragma once

#include <map>
#include <vector>

#include "treeot/error.hpp"
#include "treeot/solver.hpp"

namespace treeot {

// Same data as the multi-marginal problem; only the regularization differs.
using PairwiseProblem = TreeOTProblem;

struct PairwiseOptions {
  double tol = 1e-8;
  int max_sweeps = 10000;
  // Off by default: linear arithmetic that breaks down is reported, not repaired.
  LogDomainMode log_domain = LogDomainMode::Off;
};

struct PairwiseSolution {
  std::vector<Vector> mu;        // by label, index 0 unused
  std::map<Edge, Matrix> plans;  // keyed by Tree::edges() orientation
  double objective = 0.0;        // sum_e <C_e, M_e> + eps H(M_e)
  int sweeps = 0;
  bool converged = false;
  Domain domain = Domain::Linear;
  bool restarted_in_log_domain = false;
  std::vector<double> residual_history;
};

using PairwiseNotConverged = NotConvergedError<PairwiseSolution>;

// Bregman projections with one scaling pair per edge. Constrained nodes get
// Sinkhorn updates; free nodes take the geometric mean of the incident edge
// marginals. Throws PairwiseNotConverged with MaxSweepsExceeded when the budget
// runs out and with NotConverged when linear arithmetic diverges.
PairwiseSolution pairwise_solve(const PairwiseProblem& problem, const PairwiseOptions& options = {});

struct EntropyRow {
  Node node = 0;
  double shannon_multi = 0.0;  // -sum p log p on unit mass
  double shannon_pair = 0.0;
  double neg_entropy_multi = 0.0;  // sum mu log mu - mu + 1
  double neg_entropy_pair = 0.0;
};

// Multi-marginal objective split into per-edge transport terms, the entropy
// reward at internal nodes and a constant fixed by sizes and mass:
// objective = edge_terms - node_terms + constant.
struct MultiDecomposition {
  double objective = 0.0;
  double edge_terms = 0.0;  // sum_e <C_e, M_e> + eps H(M_e)
  double node_terms = 0.0;  // eps sum_internal (deg - 1) H(mu_j)
  double constant = 0.0;
};

struct EntropyGapReport {
  std::vector<EntropyRow> rows;  // internal nodes, ascending
  MultiDecomposition decomposition;
};

EntropyGapReport entropy_gap(const PairwiseProblem& problem, const PairwiseSolution& pairwise,
                             const SolveReport& multi);

struct CycleReport {
  std::map<Edge, Matrix> costs;         // (1,2), (2,3), (1,3)
  std::map<Edge, Matrix> pairwise_plans;
  Vector first_marginal;
  double pairwise_value = 0.0;
  bool projections_feasible = true;
  double min_tensor_cost = 0.0;
  double multi_lower_bound = 0.0;  // min tensor entry times total mass
};

// Three-node cycle where summed pairwise transport reaches zero but no
// three-way coupling has the pairwise optimal plans as projections.
CycleReport cycle_counterexample();

}  // namespace treeot
