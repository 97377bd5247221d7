#pragma once

#include "treeot/numerics.hpp"

namespace treeot {

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  Vector x;
  double objective = 0.0;
  double infeasibility = 0.0;  // phase-one optimum, zero for feasible programs
};

// Minimizes c'x subject to A x = b, x >= 0 with a two-phase dense simplex
// using Bland's rule. Intended for small programs (a few thousand columns).
LpResult solve_standard_lp(const Matrix& a, const Vector& b, const Vector& c, double tol = 1e-9);

}  // namespace treeot
