#include "treeot/linprog.hpp"

#include <cmath>
#include <vector>

#include "treeot/error.hpp"

namespace treeot {

namespace {

// Row-major tableau. The last column holds the right-hand side and the last
// row holds reduced costs with the negated objective value in its corner.
class Tableau {
 public:
  Tableau(int rows, int cols) : rows_(rows), cols_(cols), data_((rows + 1) * (cols + 1), 0.0) {}

  double& at(int r, int c) { return data_[r * (cols_ + 1) + c]; }
  double& rhs(int r) { return at(r, cols_); }
  double& cost(int c) { return at(rows_, c); }

  void pivot(int pr, int pc) {
    const double p = at(pr, pc);
    for (int c = 0; c <= cols_; ++c) at(pr, c) /= p;
    for (int r = 0; r <= rows_; ++r) {
      if (r == pr) continue;
      const double f = at(r, pc);
      if (f == 0.0) continue;
      for (int c = 0; c <= cols_; ++c) at(r, c) -= f * at(pr, c);
    }
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

 private:
  int rows_, cols_;
  std::vector<double> data_;
};

// Runs simplex pivots over columns for which `allowed` holds.
// Returns false when the program is unbounded.
bool run_simplex(Tableau& t, std::vector<int>& basis, const std::vector<char>& allowed,
                 double tol) {
  for (;;) {
    int enter = -1;
    for (int c = 0; c < t.cols(); ++c) {
      if (allowed[c] && t.cost(c) < -tol) {
        enter = c;
        break;
      }
    }
    if (enter < 0) return true;
    int leave = -1;
    double best = 0.0;
    for (int r = 0; r < t.rows(); ++r) {
      const double a = t.at(r, enter);
      if (a <= tol) continue;
      const double ratio = t.rhs(r) / a;
      if (leave < 0 || ratio < best - 1e-15 ||
          (std::abs(ratio - best) <= 1e-15 && basis[r] < basis[leave])) {
        leave = r;
        best = ratio;
      }
    }
    if (leave < 0) return false;
    t.pivot(leave, enter);
    basis[leave] = enter;
  }
}

}  // namespace

LpResult solve_standard_lp(const Matrix& a, const Vector& b, const Vector& c, double tol) {
  const int m = static_cast<int>(a.rows());
  const int n = static_cast<int>(a.cols());
  if (b.size() != m || c.size() != n) {
    throw Error(Errc::ShapeMismatch, "linear program dimensions disagree");
  }
  Tableau t(m, n + m);
  std::vector<int> basis(m);
  for (int r = 0; r < m; ++r) {
    const double sign = b(r) < 0.0 ? -1.0 : 1.0;
    for (int j = 0; j < n; ++j) t.at(r, j) = sign * a(r, j);
    t.at(r, n + r) = 1.0;
    t.rhs(r) = sign * b(r);
    basis[r] = n + r;
  }
  // Phase one: minimise the sum of artificial variables.
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int r = 0; r < m; ++r) s += t.at(r, j);
    t.cost(j) = -s;
  }
  double rhs_sum = 0.0;
  for (int r = 0; r < m; ++r) rhs_sum += t.rhs(r);
  t.rhs(m) = -rhs_sum;

  std::vector<char> allowed(n + m, 1);
  run_simplex(t, basis, allowed, tol);

  LpResult result;
  result.infeasibility = -t.rhs(m);
  double scale = 1.0;
  for (int r = 0; r < m; ++r) scale = std::max(scale, std::abs(b(r)));
  if (result.infeasibility > tol * scale * std::max(1, m)) {
    result.status = LpStatus::Infeasible;
    return result;
  }

  // Pivot remaining artificial variables out of the basis where possible.
  for (int r = 0; r < m; ++r) {
    if (basis[r] < n) continue;
    for (int j = 0; j < n; ++j) {
      if (std::abs(t.at(r, j)) > tol) {
        t.pivot(r, j);
        basis[r] = j;
        break;
      }
    }
  }
  for (int j = n; j < n + m; ++j) allowed[j] = 0;

  // Phase two: reduced costs of the real objective.
  for (int j = 0; j <= n + m; ++j) t.cost(j) = j < n ? c(j) : 0.0;
  for (int r = 0; r < m; ++r) {
    if (basis[r] >= n) continue;
    const double cb = c(basis[r]);
    if (cb == 0.0) continue;
    for (int j = 0; j <= n + m; ++j) {
      if (j == n + m) {
        t.rhs(m) -= cb * t.rhs(r);
      } else {
        t.cost(j) -= cb * t.at(r, j);
      }
    }
  }
  if (!run_simplex(t, basis, allowed, tol)) {
    result.status = LpStatus::Unbounded;
    return result;
  }
  result.status = LpStatus::Optimal;
  result.x = Vector::Zero(n);
  for (int r = 0; r < m; ++r) {
    if (basis[r] < n) result.x(basis[r]) = std::max(0.0, t.rhs(r));
  }
  result.objective = c.dot(result.x);
  return result;
}

}  // namespace treeot
