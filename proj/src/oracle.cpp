#include "treeot/oracle.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "treeot/error.hpp"
#include "treeot/linprog.hpp"

namespace treeot::oracle {

namespace {

std::size_t checked_size(const std::vector<int>& shape, std::size_t cap) {
  std::size_t total = 1;
  for (int n : shape) {
    if (n < 1) throw Error(Errc::ShapeMismatch, "tensor mode of size " + std::to_string(n));
    if (total > cap / static_cast<std::size_t>(n)) {
      throw Error(Errc::TooLarge, "tensor exceeds " + std::to_string(cap) + " entries");
    }
    total *= static_cast<std::size_t>(n);
  }
  return total;
}

void require_mode(const DenseTensor& t, int mode) {
  if (mode < 1 || mode > t.modes()) {
    throw Error(Errc::ModeOutOfRange,
                "mode " + std::to_string(mode) + " of " + std::to_string(t.modes()));
  }
}

std::vector<int> node_sizes_from(const Tree& tree, const EdgeMatrices& matrices) {
  std::vector<int> sizes(tree.node_count(), 0);
  auto set_size = [&](Node j, Eigen::Index n) {
    int& slot = sizes[j - 1];
    if (slot != 0 && slot != n) {
      throw Error(Errc::ShapeMismatch, "node " + std::to_string(j) + " has inconsistent size");
    }
    slot = static_cast<int>(n);
  };
  for (const auto& [a, b] : tree.edges()) {
    Matrix m = oriented(matrices, a, b);
    set_size(a, m.rows());
    set_size(b, m.cols());
  }
  for (int& s : sizes) {
    if (s == 0) s = 1;
  }
  return sizes;
}

}  // namespace

DenseTensor::DenseTensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
  const std::size_t total = checked_size(shape_, kMaxEntries);
  stride_.assign(shape_.size(), 1);
  for (int m = static_cast<int>(shape_.size()) - 2; m >= 0; --m) {
    stride_[m] = stride_[m + 1] * static_cast<std::size_t>(shape_[m + 1]);
  }
  data_.assign(total, fill);
}

int DenseTensor::index_of(std::size_t flat, int mode) const {
  return static_cast<int>((flat / stride_[mode - 1]) % static_cast<std::size_t>(shape_[mode - 1]));
}

DenseTensor assemble_cost_tensor(const Tree& tree, const EdgeMatrices& edge_costs) {
  DenseTensor cost(node_sizes_from(tree, edge_costs));
  for (const auto& [a, b] : tree.edges()) {
    const Matrix c = oriented(edge_costs, a, b);
    for (std::size_t f = 0; f < cost.size(); ++f) {
      cost[f] += c(cost.index_of(f, a), cost.index_of(f, b));
    }
  }
  return cost;
}

DenseTensor assemble_kernel_tensor(const Tree& tree, const EdgeMatrices& kernels,
                                   const std::map<Node, Vector>& scalings) {
  DenseTensor out(node_sizes_from(tree, kernels), 1.0);
  for (const auto& [a, b] : tree.edges()) {
    const Matrix k = oriented(kernels, a, b);
    for (std::size_t f = 0; f < out.size(); ++f) {
      out[f] *= k(out.index_of(f, a), out.index_of(f, b));
    }
  }
  for (const auto& [j, u] : scalings) {
    require_mode(out, j);
    for (std::size_t f = 0; f < out.size(); ++f) out[f] *= u(out.index_of(f, j));
  }
  return out;
}

Vector project(const DenseTensor& tensor, int mode) {
  require_mode(tensor, mode);
  Vector out = Vector::Zero(tensor.shape()[mode - 1]);
  for (std::size_t f = 0; f < tensor.size(); ++f) out(tensor.index_of(f, mode)) += tensor[f];
  return out;
}

Matrix project_pair(const DenseTensor& tensor, int first, int second) {
  require_mode(tensor, first);
  require_mode(tensor, second);
  if (first == second) throw Error(Errc::EqualModes, "mode " + std::to_string(first) + " twice");
  Matrix out = Matrix::Zero(tensor.shape()[first - 1], tensor.shape()[second - 1]);
  for (std::size_t f = 0; f < tensor.size(); ++f) {
    out(tensor.index_of(f, first), tensor.index_of(f, second)) += tensor[f];
  }
  return out;
}

double dense_dual(const DenseTensor& cost, double epsilon, const std::map<Node, Vector>& scalings,
                  const std::map<Node, Vector>& constraints) {
  double mass = 0.0;
  for (std::size_t f = 0; f < cost.size(); ++f) {
    double v = std::exp(-cost[f] / epsilon);
    for (const auto& [j, u] : scalings) v *= u(cost.index_of(f, j));
    mass += v;
  }
  double linear = 0.0;
  for (const auto& [j, mu] : constraints) {
    const Vector& u = scalings.at(j);
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      if (mu(i) > 0.0) linear += epsilon * std::log(u(i)) * mu(i);
    }
  }
  return -epsilon * mass + linear;
}

DenseSolution dense_sinkhorn(const TensorProblem& problem, double tol, int max_sweeps) {
  if (!(problem.epsilon > 0.0)) {
    throw Error(Errc::EpsilonNonPositive, "epsilon = " + std::to_string(problem.epsilon));
  }
  if (problem.constraints.empty()) throw Error(Errc::NoConstraints, "empty constraint set");
  std::vector<Vector> mus;
  for (const auto& [j, mu] : problem.constraints) {
    require_mode(problem.cost, j);
    if (mu.size() != problem.cost.shape()[j - 1]) {
      throw Error(Errc::ShapeMismatch, "constraint on mode " + std::to_string(j));
    }
    mus.push_back(mu);
  }
  check_mass_balance(mus, 1e-9);

  DenseSolution sol;
  sol.plan = problem.cost;
  for (std::size_t f = 0; f < sol.plan.size(); ++f) {
    sol.plan[f] = std::exp(-problem.cost[f] / problem.epsilon);
  }
  for (const auto& [j, mu] : problem.constraints) sol.scalings[j] = Vector::Ones(mu.size());

  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    for (const auto& [j, mu] : problem.constraints) {
      const Vector p = project(sol.plan, j);
      const Vector ratio = safe_divide(mu, p);
      sol.scalings[j] = sol.scalings[j].cwiseProduct(ratio);
      for (std::size_t f = 0; f < sol.plan.size(); ++f) {
        sol.plan[f] *= ratio(sol.plan.index_of(f, j));
      }
    }
    double residual = 0.0;
    for (const auto& [j, mu] : problem.constraints) {
      residual = std::max(residual, (project(sol.plan, j) - mu).lpNorm<1>());
    }
    sol.sweeps = sweep;
    sol.residual_history.push_back(residual);
    sol.dual_history.push_back(
        dense_dual(problem.cost, problem.epsilon, sol.scalings, problem.constraints));
    if (residual <= tol) {
      sol.converged = true;
      return sol;
    }
  }
  throw NotConvergedError<DenseSolution>(
      Errc::MaxSweepsExceeded,
      "dense Sinkhorn residual " + std::to_string(sol.residual_history.back()) + " after " +
          std::to_string(max_sweeps) + " sweeps",
      sol);
}

double dense_objective(const DenseTensor& plan, const DenseTensor& cost, double epsilon) {
  if (plan.shape() != cost.shape()) throw Error(Errc::ShapeMismatch, "plan and cost shapes differ");
  double inner = 0.0;
  for (std::size_t f = 0; f < plan.size(); ++f) {
    if (plan[f] > 0.0) inner += plan[f] * cost[f];
  }
  return inner + epsilon * neg_entropy(std::span<const double>(plan.data()));
}

bool feasibility_check(const std::vector<int>& node_sizes, const std::vector<PairMarginal>& pairs) {
  checked_size(node_sizes, kMaxFeasibilityEntries);
  DenseTensor shape_only(node_sizes);
  const int modes = shape_only.modes();
  int rows = 0;
  for (const auto& p : pairs) {
    if (p.first < 1 || p.first > modes || p.second < 1 || p.second > modes) {
      throw Error(Errc::ModeOutOfRange, "pair marginal references an unknown node");
    }
    if (p.first == p.second) throw Error(Errc::EqualModes, "pair marginal on a single node");
    if (p.plan.rows() != node_sizes[p.first - 1] || p.plan.cols() != node_sizes[p.second - 1]) {
      throw Error(Errc::ShapeMismatch, "pair marginal shape disagrees with node sizes");
    }
    rows += static_cast<int>(p.plan.size());
  }
  const auto cols = static_cast<Eigen::Index>(shape_only.size());
  Matrix a = Matrix::Zero(rows, cols);
  Vector b(rows);
  int offset = 0;
  for (const auto& p : pairs) {
    for (Eigen::Index f = 0; f < cols; ++f) {
      const int i = shape_only.index_of(f, p.first);
      const int k = shape_only.index_of(f, p.second);
      a(offset + i * p.plan.cols() + k, f) = 1.0;
    }
    for (Eigen::Index i = 0; i < p.plan.rows(); ++i) {
      for (Eigen::Index k = 0; k < p.plan.cols(); ++k) b(offset + i * p.plan.cols() + k) = p.plan(i, k);
    }
    offset += static_cast<int>(p.plan.size());
  }
  const LpResult lp = solve_standard_lp(a, b, Vector::Zero(cols));
  return lp.status != LpStatus::Infeasible;
}

}  // namespace treeot::oracle
