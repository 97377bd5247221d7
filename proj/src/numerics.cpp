#include "treeot/numerics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "treeot/error.hpp"

namespace treeot {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

Matrix oriented(const EdgeMatrices& matrices, Node j, Node k) {
  if (auto it = matrices.find({j, k}); it != matrices.end()) return it->second;
  if (auto it = matrices.find({k, j}); it != matrices.end()) return it->second.transpose();
  throw Error(Errc::MissingEdgeCost,
              "no matrix for edge (" + std::to_string(j) + "," + std::to_string(k) + ")");
}

bool has_edge_matrix(const EdgeMatrices& matrices, Node j, Node k) {
  return matrices.count({j, k}) > 0 || matrices.count({k, j}) > 0;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(Errc::ShapeMismatch, "kl_divergence on sizes " + std::to_string(p.size()) +
                                         " and " + std::to_string(q.size()));
  }
  double total = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      if (!(q[i] > 0.0)) return kInf;
      total += p[i] * std::log(p[i] / q[i]) - p[i] + q[i];
    } else {
      total += q[i];
    }
  }
  return total;
}

double kl_divergence(const Vector& p, const Vector& q) {
  return kl_divergence(as_span(p), as_span(q));
}

double kl_divergence(const Matrix& p, const Matrix& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw Error(Errc::ShapeMismatch, "kl_divergence on mismatched matrix shapes");
  }
  return kl_divergence(as_span(p), as_span(q));
}

double neg_entropy(std::span<const double> p) {
  double total = 0.0;
  for (double x : p) total += xlogx(x) - x + 1.0;
  return total;
}

double shannon_entropy(const Vector& p) {
  const double mass = p.sum();
  double h = 0.0;
  for (double x : p) h -= xlogx(x / mass);
  return h;
}

Matrix gibbs_kernel(const Matrix& cost, double epsilon) {
  if (!(epsilon > 0.0)) {
    throw Error(Errc::EpsilonNonPositive, "epsilon = " + std::to_string(epsilon));
  }
  return exp_of(Matrix(-cost / epsilon));
}

Matrix euclidean_cost(const std::vector<Vector>& points) { return euclidean_cost(points, points); }

Matrix euclidean_cost(const std::vector<Vector>& rows, const std::vector<Vector>& cols) {
  Matrix c(rows.size(), cols.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < cols.size(); ++j) {
      if (rows[i].size() != cols[j].size()) {
        throw Error(Errc::ShapeMismatch, "points of different dimension");
      }
      c(i, j) = (rows[i] - cols[j]).norm();
    }
  }
  return c;
}

std::vector<Vector> line_grid(int n, double lo, double hi) {
  std::vector<Vector> pts(n, Vector(1));
  for (int i = 0; i < n; ++i) {
    pts[i](0) = n == 1 ? lo : lo + (hi - lo) * double(i) / double(n - 1);
  }
  return pts;
}

MassBalance check_mass_balance(const std::vector<Vector>& marginals, double rel_tol) {
  if (marginals.empty()) throw Error(Errc::InvalidArgument, "no marginals");
  MassBalance out;
  std::vector<double> masses;
  for (const auto& m : marginals) {
    if ((m.array() < 0.0).any() || !m.allFinite()) {
      throw Error(Errc::InvalidArgument, "marginal with negative or non-finite entries");
    }
    masses.push_back(m.sum());
  }
  size_t lo = 0, hi = 0;
  for (size_t i = 1; i < masses.size(); ++i) {
    if (masses[i] < masses[lo]) lo = i;
    if (masses[i] > masses[hi]) hi = i;
  }
  if (!(masses[lo] > 0.0)) throw Error(Errc::MassMismatch, "marginal with zero mass");
  if (masses[hi] - masses[lo] > rel_tol * masses[hi]) {
    throw Error(Errc::MassMismatch, "marginals " + std::to_string(lo) + " and " +
                                        std::to_string(hi) + " have masses " +
                                        std::to_string(masses[lo]) + " and " +
                                        std::to_string(masses[hi]));
  }
  out.mass = masses[0];
  for (size_t i = 0; i < marginals.size(); ++i) out.normalized.push_back(marginals[i] / masses[i]);
  return out;
}

double log_sum_exp(const Vector& x) {
  if (x.size() == 0) return -kInf;
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log(exp_of(Vector(x.array() - m)).sum());
}

Vector log_of(const Vector& v) { return v.unaryExpr([](double x) { return std::log(x); }); }
Matrix log_of(const Matrix& m) { return m.unaryExpr([](double x) { return std::log(x); }); }
Vector exp_of(const Vector& v) { return v.unaryExpr([](double x) { return std::exp(x); }); }
Matrix exp_of(const Matrix& m) { return m.unaryExpr([](double x) { return std::exp(x); }); }

Vector safe_divide(const Vector& a, const Vector& b) {
  Vector out(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out(i) = a(i) == 0.0 ? 0.0 : a(i) / b(i);
  return out;
}

Vector log_matvec(const Matrix& log_kernel, const Vector& x) {
  const Eigen::Index rows = log_kernel.rows(), cols = log_kernel.cols();
  Vector out(rows);
  // Column-major kernel: accumulate maxima column by column, then sums.
  Vector best = Vector::Constant(rows, -kInf);
  for (Eigen::Index l = 0; l < cols; ++l) {
    if (x(l) == -kInf) continue;
    best = best.cwiseMax((log_kernel.col(l).array() + x(l)).matrix());
  }
  Vector acc = Vector::Zero(rows);
  for (Eigen::Index l = 0; l < cols; ++l) {
    if (x(l) == -kInf) continue;
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (best(i) == -kInf) continue;
      acc(i) += std::exp(log_kernel(i, l) + x(l) - best(i));
    }
  }
  for (Eigen::Index i = 0; i < rows; ++i) {
    out(i) = best(i) == -kInf ? -kInf : best(i) + std::log(acc(i));
  }
  return out;
}

Vector log_matvec_transposed(const Matrix& log_kernel, const Vector& x) {
  const Eigen::Index rows = log_kernel.rows(), cols = log_kernel.cols();
  Vector out(cols);
  for (Eigen::Index l = 0; l < cols; ++l) {
    double best = -kInf;
    for (Eigen::Index i = 0; i < rows; ++i) best = std::max(best, log_kernel(i, l) + x(i));
    if (best == -kInf || !std::isfinite(best)) {
      out(l) = best;
      continue;
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) acc += std::exp(log_kernel(i, l) + x(i) - best);
    out(l) = best + std::log(acc);
  }
  return out;
}

}  // namespace treeot
