#pragma once

#include <map>
#include <vector>

#include "treeot/error.hpp"
#include "treeot/graph.hpp"
#include "treeot/numerics.hpp"
#include "treeot/solver.hpp"

namespace treeot {

// Markov process on a tree rooted at a leaf. Transitions are keyed by
// (parent, child) and are row-stochastic. Leaves without a marginal are free.
// Optional weights on internal nodes carry the row-normalization factors of a
// non-stochastic kernel (see ot_to_bridge); they default to ones.
struct MarkovTreeProblem {
  RootedTree rooted;
  EdgeMatrices transitions;
  std::map<Node, Vector> leaf_marginals;
  std::map<Node, Vector> node_weights;
};

// Returns node sizes (index 0 unused) after checking shapes, stochasticity
// and mass balance.
std::vector<int> validate_bridge_problem(const MarkovTreeProblem& problem);

struct BridgeOptions {
  double tol = 1e-8;
  int max_sweeps = 10000;
};

struct BridgeSolution {
  std::vector<Vector> mu;            // by label, index 0 unused
  std::map<Edge, Matrix> plans;      // keyed by (parent, child)
  std::vector<Vector> phi;           // by label
  std::vector<Vector> phi_hat;       // by label
  std::map<Edge, Vector> phi_excl;   // (parent, child) -> phi_{parent \ child}
  std::map<Node, Vector> v;          // leaves; the root entry may hold +inf
  int sweeps = 0;
  bool converged = false;
  std::vector<double> residual_history;
};

using BridgeNotConverged = NotConvergedError<BridgeSolution>;

// phi_j = v_j at non-root leaves, otherwise the weighted product of A phi_k
// over the children k.
std::vector<Vector> backward_pass(const MarkovTreeProblem& problem, const std::map<Node, Vector>& v);

struct ForwardFactors {
  std::vector<Vector> phi_hat;
  std::map<Edge, Vector> phi_excl;
};

// phi_hat at the root is 1 ./ v_root; below it A' (phi_hat_parent .* phi_{parent \ j}).
ForwardFactors forward_pass(const MarkovTreeProblem& problem, const std::map<Node, Vector>& v,
                            const std::vector<Vector>& phi);

// Node marginals, plans and factors implied by the leaf vectors v.
BridgeSolution assemble_bridge(const MarkovTreeProblem& problem, const std::map<Node, Vector>& v);

BridgeSolution bridge_sinkhorn(const MarkovTreeProblem& problem, const BridgeOptions& options = {});

struct BridgeObjective {
  double kl_form = 0.0;      // sum_e H(M | diag(mu_parent) A)
  double degree_form = 0.0;  // sum_e H(M | A) - sum_internal (deg-1) H(mu) - H(mu_root)
};

BridgeObjective bridge_objective(const MarkovTreeProblem& problem, const BridgeSolution& solution);

// Same process described from another leaf: transitions on the path between
// the roots are replaced by their reversals, all other edges are kept.
MarkovTreeProblem reroot_problem(const MarkovTreeProblem& problem, Node new_root);

BridgeSolution reroot_solution(const MarkovTreeProblem& problem, const BridgeSolution& solution,
                               Node new_root);

struct PathBridge {
  std::vector<Matrix> plans;        // plans[t] couples steps t and t+1 (0-based)
  std::vector<Vector> marginals;    // propagated through the transitions below
  std::vector<Matrix> transitions;  // row-stochastic bridge transitions
  std::vector<std::vector<int>> zero_mass_rows;  // rows filled uniformly, per step
  BridgeSolution solution;
};

PathBridge path_bridge(const std::vector<Matrix>& transitions, const Vector& first,
                       const Vector& last, const BridgeOptions& options = {});

struct OtBridge {
  MarkovTreeProblem problem;
  std::map<Node, Vector> row_scaling;  // b_j = 1 ./ (A 1) for nodes with children
};

// Orients a tree problem away from `root` with A = exp(-C/eps), row-normalizes
// each out-edge and records the factors as internal-node weights.
OtBridge ot_to_bridge(const TreeOTProblem& problem, Node root);

// sum_e H(M | A_hat) - sum_internal (deg-1) H(mu_j | b_j).
double bethe_objective(const OtBridge& bridge, const BridgeSolution& solution);

}  // namespace treeot
