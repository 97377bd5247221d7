#pragma once

#include <vector>

#include "treeot/graph.hpp"
#include "treeot/numerics.hpp"

namespace treeot {

// Linear: vectors hold values. Log: vectors hold natural logs of values, so
// products become sums and matrix-vector products become log-sum-exp rows.
enum class Domain { Linear, Log };

// Edge kernels of a tree in both representations. Matrices are stored in the
// orientation of Tree::edges(); apply() transposes as needed.
class EdgeKernels {
 public:
  EdgeKernels() = default;

  static EdgeKernels from_costs(const Tree& tree, const EdgeMatrices& costs, double epsilon);
  static EdgeKernels from_kernels(const Tree& tree, const EdgeMatrices& kernels);

  const Tree& tree() const { return tree_; }
  int node_size(Node j) const { return sizes_.at(j); }
  const std::vector<int>& node_sizes() const { return sizes_; }
  // Sets the size of a node without incident edges (single-node trees).
  void set_isolated_size(Node j, int n);

  // K^(j,k): rows index j, columns index k.
  Matrix linear(Node j, Node k) const;
  Matrix log(Node j, Node k) const;

  // K^(j,k) x for x indexed by the states of k.
  Vector apply(Domain domain, Node j, Node k, const Vector& x) const;

  // True when some kernel entry is positive in exact arithmetic but rounds to
  // zero in the linear representation.
  bool linear_underflows() const;

 private:
  void finish();

  Tree tree_;
  std::vector<int> sizes_;           // indexed by label, entry 0 unused
  std::vector<Matrix> linear_;       // indexed by edge
  std::vector<Matrix> log_;
};

struct ScalingState {
  Domain domain = Domain::Linear;
  std::vector<Vector> u;          // by label; empty means all ones
  std::vector<Vector> potential;  // fixed node factors, empty means all ones
  std::vector<Vector> alpha;      // by Tree::slot
  std::vector<char> dirty;        // by Tree::slot
};

ScalingState make_state(const EdgeKernels& kernels, Domain domain);

// Domain representation of u_j times the node potential.
Vector local_factor(const ScalingState& state, const EdgeKernels& kernels, Node j);

// Recomputes the message into j from the subtree behind k. Every message
// feeding it must be clean.
void recompute_alpha(ScalingState& state, const EdgeKernels& kernels, Node j, Node k);

// Recomputes alpha(j,k) after recursively refreshing its dirty dependencies.
void refresh_alpha(ScalingState& state, const EdgeKernels& kernels, Node j, Node k);

// Refreshes every dirty message.
void refresh_all(ScalingState& state, const EdgeKernels& kernels);

void mark_all_dirty(ScalingState& state);

// Marks the messages along the path from `from` to `to`, oriented toward `to`.
void mark_path_dirty(ScalingState& state, const Tree& tree, Node from, Node to);

// Marginal of K (.) U at node j in the state's domain representation.
Vector project_marginal_domain(const ScalingState& state, const EdgeKernels& kernels, Node j);

// Marginal of K (.) U at node j as plain values.
Vector project_marginal(const ScalingState& state, const EdgeKernels& kernels, Node j);

// Two-node marginal of K (.) U; rows index `first`, columns index `last`.
Matrix project_pair(const ScalingState& state, const EdgeKernels& kernels, Node first, Node last);

// True when a linear-domain vector has left the safely representable range.
bool out_of_range(const Vector& v, Domain domain);

}  // namespace treeot
