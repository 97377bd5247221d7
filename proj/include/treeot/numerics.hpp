#pragma once

#include <Eigen/Dense>
#include <map>
#include <span>
#include <vector>

#include "treeot/graph.hpp"

namespace treeot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// One matrix per tree edge keyed by the edge's stored orientation (j1, j2):
// rows index states of j1, columns states of j2.
using EdgeMatrices = std::map<Edge, Matrix>;

// Matrix for the ordered pair (j, k), transposing a stored (k, j) entry.
// Throws MissingEdgeCost when neither orientation is present.
Matrix oriented(const EdgeMatrices& matrices, Node j, Node k);
bool has_edge_matrix(const EdgeMatrices& matrices, Node j, Node k);

inline std::span<const double> as_span(const Vector& v) { return {v.data(), size_t(v.size())}; }
inline std::span<const double> as_span(const Matrix& m) { return {m.data(), size_t(m.size())}; }

// Generalized KL divergence sum(p log(p/q) - p + q). Returns +inf when p has
// mass where q has none.
double kl_divergence(std::span<const double> p, std::span<const double> q);
double kl_divergence(const Vector& p, const Vector& q);
double kl_divergence(const Matrix& p, const Matrix& q);

// sum(p log p - p + 1), the divergence from the all-ones vector.
double neg_entropy(std::span<const double> p);
inline double neg_entropy(const Vector& p) { return neg_entropy(as_span(p)); }
inline double neg_entropy(const Matrix& p) { return neg_entropy(as_span(p)); }

// -sum(p log p) of p normalized to unit mass.
double shannon_entropy(const Vector& p);

// Elementwise log and exp through the scalar library functions. Eigen's
// packet versions clamp their arguments, so exp(-inf) comes out near 5e-309
// and log of a subnormal near -708 instead of the exact values.
Vector log_of(const Vector& v);
Matrix log_of(const Matrix& m);
Vector exp_of(const Vector& v);
Matrix exp_of(const Matrix& m);

// x log x with 0 log 0 = 0.
inline double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

Matrix gibbs_kernel(const Matrix& cost, double epsilon);

// Pairwise Euclidean distances; the two-argument form gives a rectangular cost.
Matrix euclidean_cost(const std::vector<Vector>& points);
Matrix euclidean_cost(const std::vector<Vector>& rows, const std::vector<Vector>& cols);

// Evenly spaced points on [lo, hi].
std::vector<Vector> line_grid(int n, double lo = 0.0, double hi = 1.0);

struct MassBalance {
  std::vector<Vector> normalized;
  double mass = 0.0;
};

MassBalance check_mass_balance(const std::vector<Vector>& marginals, double rel_tol = 1e-9);

double log_sum_exp(const Vector& x);

// Elementwise a / b with 0 / anything = 0.
Vector safe_divide(const Vector& a, const Vector& b);

// Row i of the result is log(sum_l exp(log_kernel(i,l) + x(l))).
Vector log_matvec(const Matrix& log_kernel, const Vector& x);
// Same with the transposed kernel.
Vector log_matvec_transposed(const Matrix& log_kernel, const Vector& x);

}  // namespace treeot
