#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "treeot/graph.hpp"
#include "treeot/numerics.hpp"

namespace treeot::oracle {

constexpr std::size_t kMaxEntries = 1'000'000;
constexpr std::size_t kMaxFeasibilityEntries = 4096;

// Explicit J-mode tensor, row-major with the last mode varying fastest.
// Modes are addressed 1..J to match node labels.
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(std::vector<int> shape, double fill = 0.0);

  int modes() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  // Index of `mode` (1-based) within the flat position `flat`.
  int index_of(std::size_t flat, int mode) const;

 private:
  std::vector<int> shape_;
  std::vector<std::size_t> stride_;
  std::vector<double> data_;
};

struct TensorProblem {
  DenseTensor cost;
  double epsilon = 1.0;
  std::map<Node, Vector> constraints;
};

struct DenseSolution {
  DenseTensor plan;
  std::map<Node, Vector> scalings;
  std::vector<double> residual_history;
  std::vector<double> dual_history;
  int sweeps = 0;
  bool converged = false;
};

struct PairMarginal {
  Node first = 0;
  Node second = 0;
  Matrix plan;
};

DenseTensor assemble_cost_tensor(const Tree& tree, const EdgeMatrices& edge_costs);

// Tensor with entries prod_e K_e(i_j1, i_j2) * prod_j u_j(i_j); nodes absent
// from `scalings` contribute ones.
DenseTensor assemble_kernel_tensor(const Tree& tree, const EdgeMatrices& kernels,
                                   const std::map<Node, Vector>& scalings);

Vector project(const DenseTensor& tensor, int mode);
Matrix project_pair(const DenseTensor& tensor, int first, int second);

DenseSolution dense_sinkhorn(const TensorProblem& problem, double tol = 1e-8,
                             int max_sweeps = 10000);

double dense_objective(const DenseTensor& plan, const DenseTensor& cost, double epsilon);

// Dual value -eps <K, U> + sum_j eps log(u_j)' mu_j.
double dense_dual(const DenseTensor& cost, double epsilon, const std::map<Node, Vector>& scalings,
                  const std::map<Node, Vector>& constraints);

// Decides by linear programming whether a nonnegative tensor over nodes 1..J
// with the given sizes has all the listed two-mode projections.
bool feasibility_check(const std::vector<int>& node_sizes, const std::vector<PairMarginal>& pairs);

}  // namespace treeot::oracle
