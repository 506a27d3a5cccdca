#pragma once

#include <limits>
#include <vector>

namespace mixedcq::num {

using Vec = std::vector<double>;

constexpr double kInf = std::numeric_limits<double>::infinity();

double dot(const Vec& a, const Vec& b);
double inf_norm(const Vec& v);
double two_norm(const Vec& v);
Vec axpy(double alpha, const Vec& x, const Vec& y);  // alpha*x + y

// Dense row-major matrix.  Everything in this module is desk scale (tens of
// rows/columns), so no attempt is made at blocking or sparsity.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), a_(static_cast<std::size_t>(rows) * cols, 0.0) {}

  static Matrix identity(int n);
  static Matrix from_rows(const std::vector<Vec>& rows);
  static Matrix from_cols(const std::vector<Vec>& cols);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return a_[static_cast<std::size_t>(i) * cols_ + j]; }

  Vec row(int i) const;
  Vec col(int j) const;
  Vec apply(const Vec& x) const;    // A x
  Vec apply_t(const Vec& y) const;  // A^T y

 private:
  int rows_ = 0, cols_ = 0;
  Vec a_;
};

// Householder QR with column pivoting; the basis for rank decisions and the
// least-squares solves inside NNLS.
class QrPivoted {
 public:
  explicit QrPivoted(const Matrix& A);

  int rank(double rel_tol) const;
  // Basic least-squares solution of min ||A x - b||_2 using pivots whose
  // magnitude exceeds rel_tol times the leading pivot; dropped columns get 0.
  Vec solve(const Vec& b, double rel_tol = 1e-12) const;
  double pivot(int k) const;

 private:
  Matrix qr_;             // packed Householder vectors + R
  Vec beta_;              // Householder scalars
  Vec v0_;                // leading Householder components
  std::vector<int> perm_; // column permutation
  int rows_, cols_, steps_;
};

// Rank = number of column-pivoted QR pivots above rel_tol * (largest pivot).
int numeric_rank(const Matrix& M, double rel_tol = 1e-8);

// ---------------------------------------------------------------------------
// Linear programming: dense two-phase simplex with Bland's rule.

enum class LpStatus { Optimal, Infeasible, Unbounded };

enum class RowSense : char { Le = '<', Eq = '=', Ge = '>' };

struct LinearProgram {
  bool maximize = true;
  Vec c;                        // objective over the original variables
  Matrix A;                     // row constraints
  std::vector<RowSense> sense;
  Vec b;
  Vec lower, upper;             // per-variable bounds, +/-kInf allowed

  // Convenience: n variables, unbounded by default.
  static LinearProgram make(int nvars);
  void add_row(const Vec& coeffs, RowSense s, double rhs);
};

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  Vec x;          // optimal point (original variables)
  double objective = 0.0;
  Vec ray;        // recession direction when unbounded (improving, feasible)
  Vec row_duals;  // simplex multipliers for the rows, in input order
};

// Feasibility tolerance `tol` applies to phase-1 optimum and ratio tests.
LpResult solve_lp(const LinearProgram& lp, double tol = 1e-9);

// ---------------------------------------------------------------------------
// Nonnegative least squares (Lawson-Hanson active set):
//   min ||A x - b||_2  s.t.  x >= 0.

struct NnlsResult {
  Vec x;
  double residual_norm = 0.0;
  double kkt_residual = 0.0;  // max(0-violation, dual infeasibility, complementarity)
  int iterations = 0;
};

NnlsResult nnls(const Matrix& A, const Vec& b, double tol = 1e-10, int max_iter = 0);

// ---------------------------------------------------------------------------
// Polyhedral cones as nonnegative generators plus a free span.

struct ConeDescription {
  std::vector<Vec> nonneg_generators;  // coefficients constrained >= 0
  std::vector<Vec> span_basis;         // coefficients free
  int dim() const;
  bool trivial() const { return nonneg_generators.empty() && span_basis.empty(); }
};

struct ConeMembership {
  bool inside = false;
  Vec lambda;  // certificate over nonneg_generators
  Vec mu;      // certificate over span_basis
};

// v in cone iff v = sum lambda_i g_i + sum mu_j s_j with lambda >= 0 is
// LP-feasible at tolerance `tol`.
ConeMembership cone_membership(const Vec& v, const ConeDescription& cone, double tol = 1e-9);

struct PldResult {
  bool dependent = false;
  Vec alpha;  // >= 0, over signed vectors
  Vec beta;   // free, over free vectors
};

// Positive linear dependence: exists (alpha, beta) != 0 with alpha >= 0 and
// sum alpha_i a_i + sum beta_j b_j = 0.  Certificate returned when true.
PldResult positive_linear_dependence(const std::vector<Vec>& signed_vectors,
                                     const std::vector<Vec>& free_vectors,
                                     double tol = 1e-9);

}  // namespace mixedcq::num
