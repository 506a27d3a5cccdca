#include "mixedcq/numkernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "mixedcq/errors.hpp"

namespace mixedcq::num {

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double inf_norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::abs(x));
  return s;
}

double two_norm(const Vec& v) { return std::sqrt(dot(v, v)); }

Vec axpy(double alpha, const Vec& x, const Vec& y) {
  Vec r(y);
  for (std::size_t i = 0; i < x.size(); ++i) r[i] += alpha * x[i];
  return r;
}

Matrix Matrix::identity(int n) {
  Matrix I(n, n);
  for (int i = 0; i < n; ++i) I(i, i) = 1.0;
  return I;
}

Matrix Matrix::from_rows(const std::vector<Vec>& rows) {
  if (rows.empty()) return Matrix(0, 0);
  Matrix M(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int i = 0; i < M.rows(); ++i) {
    if (static_cast<int>(rows[i].size()) != M.cols()) throw NumericError("ragged rows in matrix construction");
    for (int j = 0; j < M.cols(); ++j) M(i, j) = rows[i][j];
  }
  return M;
}

Matrix Matrix::from_cols(const std::vector<Vec>& cols) {
  if (cols.empty()) return Matrix(0, 0);
  Matrix M(static_cast<int>(cols[0].size()), static_cast<int>(cols.size()));
  for (int j = 0; j < M.cols(); ++j) {
    if (static_cast<int>(cols[j].size()) != M.rows()) throw NumericError("ragged columns in matrix construction");
    for (int i = 0; i < M.rows(); ++i) M(i, j) = cols[j][i];
  }
  return M;
}

Vec Matrix::row(int i) const {
  Vec r(cols_);
  for (int j = 0; j < cols_; ++j) r[j] = (*this)(i, j);
  return r;
}

Vec Matrix::col(int j) const {
  Vec c(rows_);
  for (int i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
  return c;
}

Vec Matrix::apply(const Vec& x) const {
  Vec y(rows_, 0.0);
  for (int i = 0; i < rows_; ++i) {
    double s = 0.0;
    for (int j = 0; j < cols_; ++j) s += (*this)(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

Vec Matrix::apply_t(const Vec& y) const {
  Vec x(cols_, 0.0);
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) x[j] += (*this)(i, j) * y[i];
  return x;
}

// ---------------------------------------------------------------------------
// QR with column pivoting (Businger-Golub).

QrPivoted::QrPivoted(const Matrix& A)
    : qr_(A), rows_(A.rows()), cols_(A.cols()), steps_(std::min(A.rows(), A.cols())) {
  beta_.assign(steps_, 0.0);
  perm_.resize(cols_);
  for (int j = 0; j < cols_; ++j) perm_[j] = j;

  Vec colnorm2(cols_, 0.0);
  for (int j = 0; j < cols_; ++j)
    for (int i = 0; i < rows_; ++i) colnorm2[j] += qr_(i, j) * qr_(i, j);

  for (int k = 0; k < steps_; ++k) {
    int piv = k;
    for (int j = k + 1; j < cols_; ++j)
      if (colnorm2[j] > colnorm2[piv]) piv = j;
    if (piv != k) {
      for (int i = 0; i < rows_; ++i) std::swap(qr_(i, k), qr_(i, piv));
      std::swap(colnorm2[k], colnorm2[piv]);
      std::swap(perm_[k], perm_[piv]);
    }

    // Householder for column k, rows k..m-1.
    double norm = 0.0;
    for (int i = k; i < rows_; ++i) norm += qr_(i, k) * qr_(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) {
      beta_[k] = 0.0;
      v0_.push_back(0.0);
      continue;
    }
    double alpha = qr_(k, k) >= 0 ? -norm : norm;
    double v0 = qr_(k, k) - alpha;
    qr_(k, k) = alpha;  // R diagonal
    // v = (v0, A[k+1..m-1][k]); beta = 2/(v^T v)
    double vtv = v0 * v0;
    for (int i = k + 1; i < rows_; ++i) vtv += qr_(i, k) * qr_(i, k);
    beta_[k] = vtv > 0 ? 2.0 / vtv : 0.0;

    for (int j = k + 1; j < cols_; ++j) {
      double s = v0 * qr_(k, j);
      for (int i = k + 1; i < rows_; ++i) s += qr_(i, k) * qr_(i, j);
      s *= beta_[k];
      qr_(k, j) -= s * v0;
      for (int i = k + 1; i < rows_; ++i) qr_(i, j) -= s * qr_(i, k);
      colnorm2[j] = std::max(0.0, colnorm2[j] - qr_(k, j) * qr_(k, j));
    }
    // Stash v0 scale implicitly: below-diagonal already holds v tail; we keep
    // v0 in a side array by renormalizing beta against it.
    v0_.push_back(v0);
  }
}

int QrPivoted::rank(double rel_tol) const {
  double p0 = std::abs(pivot(0));
  if (steps_ == 0 || p0 == 0.0) return 0;
  int r = 0;
  for (int k = 0; k < steps_; ++k)
    if (std::abs(pivot(k)) > rel_tol * p0) ++r;
  return r;
}

double QrPivoted::pivot(int k) const {
  if (k >= steps_) return 0.0;
  return qr_(k, k);
}

Vec QrPivoted::solve(const Vec& b, double rel_tol) const {
  Vec qtb(b);
  for (int k = 0; k < static_cast<int>(v0_.size()); ++k) {
    if (beta_[k] == 0.0) continue;
    double s = v0_[k] * qtb[k];
    for (int i = k + 1; i < rows_; ++i) s += qr_(i, k) * qtb[i];
    s *= beta_[k];
    qtb[k] -= s * v0_[k];
    for (int i = k + 1; i < rows_; ++i) qtb[i] -= s * qr_(i, k);
  }
  int r = rank(rel_tol);
  Vec y(cols_, 0.0);
  for (int k = r - 1; k >= 0; --k) {
    double s = qtb[k];
    for (int j = k + 1; j < r; ++j) s -= qr_(k, j) * y[j];
    y[k] = s / qr_(k, k);
  }
  Vec x(cols_, 0.0);
  for (int j = 0; j < cols_; ++j) x[perm_[j]] = y[j];
  return x;
}

int numeric_rank(const Matrix& M, double rel_tol) {
  if (M.rows() == 0 || M.cols() == 0) return 0;
  return QrPivoted(M).rank(rel_tol);
}

// ---------------------------------------------------------------------------
// Simplex.

LinearProgram LinearProgram::make(int nvars) {
  LinearProgram lp;
  lp.c.assign(nvars, 0.0);
  lp.A = Matrix(0, nvars);
  lp.lower.assign(nvars, -kInf);
  lp.upper.assign(nvars, kInf);
  return lp;
}

void LinearProgram::add_row(const Vec& coeffs, RowSense s, double rhs) {
  if (static_cast<int>(coeffs.size()) != static_cast<int>(c.size()))
    throw NumericError("LP row arity mismatch");
  Matrix A2(A.rows() + 1, static_cast<int>(c.size()));
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < A.cols(); ++j) A2(i, j) = A(i, j);
  for (int j = 0; j < A2.cols(); ++j) A2(A.rows(), j) = coeffs[j];
  A = A2;
  sense.push_back(s);
  b.push_back(rhs);
}

namespace {

// Variable transformation bookkeeping for standard form.
struct VarMap {
  // x_orig = shift + sign * y[pos] (+ optionally - y[neg] when split)
  int pos = -1, neg = -1;
  double shift = 0.0;
  double sign = 1.0;
};

struct Tableau {
  // rows x (ncols + 1); last column is rhs.  Basis holds the column basic in
  // each row.  Costs are handled by recomputing reduced costs from `cost`.
  std::vector<Vec> t;
  std::vector<int> basis;
  int ncols = 0;

  double rhs(int i) const { return t[i][ncols]; }

  void pivot(int row, int col) {
    Vec& pr = t[row];
    double inv = 1.0 / pr[col];
    for (double& v : pr) v *= inv;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (static_cast<int>(i) == row) continue;
      double f = t[i][col];
      if (f == 0.0) continue;
      for (int j = 0; j <= ncols; ++j) t[i][j] -= f * pr[j];
    }
    basis[row] = col;
  }
};

// Runs simplex (minimization) to optimality/unboundedness with Bland's rule.
// `allowed[j]` gates entering columns.  Returns the entering column when
// unbounded, or -1 at an optimum.
int run_simplex(Tableau& tb, const Vec& cost, const std::vector<char>& allowed, double tol) {
  const int m = static_cast<int>(tb.t.size());
  for (;;) {
    // Reduced costs: c_j - c_B^T (B^-1 A)_j.
    Vec cb(m);
    for (int i = 0; i < m; ++i) cb[i] = cost[tb.basis[i]];
    int enter = -1;
    for (int j = 0; j < tb.ncols; ++j) {
      if (!allowed[j]) continue;
      double red = cost[j];
      for (int i = 0; i < m; ++i) red -= cb[i] * tb.t[i][j];
      if (red < -tol) {
        enter = j;  // Bland: first (smallest index) improving column
        break;
      }
    }
    if (enter < 0) return -1;

    int leave = -1;
    double best = kInf;
    for (int i = 0; i < m; ++i) {
      double a = tb.t[i][enter];
      if (a > tol) {
        double ratio = tb.rhs(i) / a;
        if (ratio < best - 1e-15 || (ratio < best + 1e-15 && (leave < 0 || tb.basis[i] < tb.basis[leave]))) {
          best = ratio;
          leave = i;
        }
      }
    }
    if (leave < 0) return enter;  // unbounded along `enter`
    tb.pivot(leave, enter);
  }
}

}  // namespace

LpResult solve_lp(const LinearProgram& lp, double tol) {
  const int n = static_cast<int>(lp.c.size());
  const int m = lp.A.rows();
  if (lp.A.cols() != n || static_cast<int>(lp.b.size()) != m || static_cast<int>(lp.sense.size()) != m)
    throw NumericError("LP dimension mismatch");
  for (double v : lp.b)
    if (!std::isfinite(v)) throw NumericError("LP rhs must be finite");

  // --- standard form: min c'y, E y = f, y >= 0 ---
  std::vector<VarMap> vmap(n);
  int ny = 0;
  std::vector<std::pair<int, double>> range_rows;  // (y index, width) for two-sided bounds
  for (int j = 0; j < n; ++j) {
    double L = lp.lower[j], U = lp.upper[j];
    if (L > U) return {LpStatus::Infeasible, {}, 0.0, {}, {}};
    if (std::isfinite(L)) {
      vmap[j].pos = ny++;
      vmap[j].shift = L;
      vmap[j].sign = 1.0;
      if (std::isfinite(U)) range_rows.push_back({vmap[j].pos, U - L});
    } else if (std::isfinite(U)) {
      vmap[j].pos = ny++;
      vmap[j].shift = U;
      vmap[j].sign = -1.0;
    } else {
      vmap[j].pos = ny++;
      vmap[j].neg = ny++;
      vmap[j].sign = 1.0;
    }
  }

  const int nrows = m + static_cast<int>(range_rows.size());
  int nslack = 0;
  for (RowSense s : lp.sense)
    if (s != RowSense::Eq) ++nslack;
  nslack += static_cast<int>(range_rows.size());

  const int ntotal = ny + nslack + nrows;  // structurals + slacks + artificials
  const int art0 = ny + nslack;

  Tableau tb;
  tb.ncols = ntotal;
  tb.t.assign(nrows, Vec(ntotal + 1, 0.0));
  tb.basis.assign(nrows, -1);

  Vec row_flip(nrows, 1.0);
  int slack_at = ny;
  std::vector<int> slack_of_row(nrows, -1);
  double obj_const = 0.0;

  // Objective in y-space (minimization).
  Vec cost_y(ntotal, 0.0);
  {
    double sgn = lp.maximize ? -1.0 : 1.0;
    for (int j = 0; j < n; ++j) {
      obj_const += sgn * lp.c[j] * vmap[j].shift;
      cost_y[vmap[j].pos] += sgn * lp.c[j] * vmap[j].sign;
      if (vmap[j].neg >= 0) cost_y[vmap[j].neg] -= sgn * lp.c[j];
    }
  }

  for (int i = 0; i < m; ++i) {
    Vec& row = tb.t[i];
    double rhs = lp.b[i];
    for (int j = 0; j < n; ++j) {
      double a = lp.A(i, j);
      if (a == 0.0) continue;
      rhs -= a * vmap[j].shift;
      row[vmap[j].pos] += a * vmap[j].sign;
      if (vmap[j].neg >= 0) row[vmap[j].neg] -= a;
    }
    if (lp.sense[i] == RowSense::Le) {
      row[slack_at] = 1.0;
      slack_of_row[i] = slack_at++;
    } else if (lp.sense[i] == RowSense::Ge) {
      row[slack_at] = -1.0;
      slack_of_row[i] = slack_at++;
    }
    row[ntotal] = rhs;
  }
  for (std::size_t k = 0; k < range_rows.size(); ++k) {
    int i = m + static_cast<int>(k);
    Vec& row = tb.t[i];
    row[range_rows[k].first] = 1.0;
    row[slack_at] = 1.0;
    slack_of_row[i] = slack_at++;
    row[ntotal] = range_rows[k].second;
  }

  for (int i = 0; i < nrows; ++i) {
    if (tb.rhs(i) < 0.0) {
      row_flip[i] = -1.0;
      for (double& v : tb.t[i]) v = -v;
    }
    tb.t[i][art0 + i] = 1.0;
    tb.basis[i] = art0 + i;
  }

  // Phase 1.
  Vec cost1(ntotal, 0.0);
  for (int i = 0; i < nrows; ++i) cost1[art0 + i] = 1.0;
  std::vector<char> allowed(ntotal, 1);
  run_simplex(tb, cost1, allowed, tol);

  double infeas = 0.0;
  for (int i = 0; i < nrows; ++i)
    if (tb.basis[i] >= art0) infeas += tb.rhs(i);
  double scale = std::max(1.0, inf_norm(lp.b));
  if (infeas > tol * scale) return {LpStatus::Infeasible, {}, 0.0, {}, {}};

  // Drive artificials out of the basis where possible; leftover rows are
  // redundant and keep a zero-level artificial pinned.
  for (int i = 0; i < nrows; ++i) {
    if (tb.basis[i] < art0) continue;
    int col = -1;
    for (int j = 0; j < art0; ++j)
      if (std::abs(tb.t[i][j]) > 1e-7) {
        col = j;
        break;
      }
    if (col >= 0) tb.pivot(i, col);
  }
  for (int j = art0; j < ntotal; ++j) allowed[j] = 0;

  // Phase 2.
  int unb = run_simplex(tb, cost_y, allowed, tol);

  LpResult res;
  auto map_back = [&](const Vec& y) {
    Vec x(n, 0.0);
    for (int j = 0; j < n; ++j) {
      x[j] = vmap[j].shift + vmap[j].sign * y[vmap[j].pos];
      if (vmap[j].neg >= 0) x[j] -= y[vmap[j].neg];
    }
    return x;
  };

  Vec y(ntotal, 0.0);
  for (int i = 0; i < nrows; ++i)
    if (tb.basis[i] < ntotal) y[tb.basis[i]] = tb.rhs(i);

  if (unb >= 0) {
    res.status = LpStatus::Unbounded;
    Vec dy(ntotal, 0.0);
    dy[unb] = 1.0;
    for (int i = 0; i < nrows; ++i) dy[tb.basis[i]] = -tb.t[i][unb];
    // Direction in original space: drop shifts.
    Vec dx(n, 0.0);
    for (int j = 0; j < n; ++j) {
      dx[j] = vmap[j].sign * dy[vmap[j].pos];
      if (vmap[j].neg >= 0) dx[j] -= dy[vmap[j].neg];
    }
    res.ray = dx;
    res.x = map_back(y);
    return res;
  }

  res.status = LpStatus::Optimal;
  res.x = map_back(y);
  {
    double obj = obj_const;
    for (int jj = 0; jj < ntotal; ++jj) obj += cost_y[jj] * y[jj];
    res.objective = lp.maximize ? -obj : obj;
  }
  // Row duals from the artificial columns (identity at start): dual_i =
  // c_B^T (B^-1 e_i), undoing row flips and the min/max sign.
  res.row_duals.assign(m, 0.0);
  for (int i = 0; i < m; ++i) {
    double d = 0.0;
    for (int r = 0; r < nrows; ++r) d += cost_y[tb.basis[r]] * tb.t[r][art0 + i];
    d *= row_flip[i];
    res.row_duals[i] = lp.maximize ? -d : d;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Lawson-Hanson NNLS.

NnlsResult nnls(const Matrix& A, const Vec& b, double tol, int max_iter) {
  const int n = A.cols();
  const int m = A.rows();
  if (static_cast<int>(b.size()) != m) throw NumericError("NNLS dimension mismatch");
  if (max_iter <= 0) max_iter = 3 * std::max(1, n) + 30;

  NnlsResult out;
  out.x.assign(n, 0.0);
  std::vector<char> passive(n, 0);
  Vec x(n, 0.0);

  auto residual = [&](const Vec& xx) {
    Vec r(b);
    for (int j = 0; j < n; ++j) {
      if (xx[j] == 0.0) continue;
      for (int i = 0; i < m; ++i) r[i] -= A(i, j) * xx[j];
    }
    return r;
  };

  double wtol = tol * std::max(1.0, inf_norm(A.apply_t(b)));

  int iter = 0;
  while (iter++ < max_iter) {
    Vec r = residual(x);
    Vec w = A.apply_t(r);
    int t = -1;
    double wmax = wtol;
    for (int j = 0; j < n; ++j)
      if (!passive[j] && w[j] > wmax) {
        wmax = w[j];
        t = j;
      }
    if (t < 0) break;
    passive[t] = 1;

    for (;;) {
      std::vector<int> P;
      for (int j = 0; j < n; ++j)
        if (passive[j]) P.push_back(j);
      Matrix Ap(m, static_cast<int>(P.size()));
      for (int i = 0; i < m; ++i)
        for (std::size_t k = 0; k < P.size(); ++k) Ap(i, static_cast<int>(k)) = A(i, P[k]);
      Vec z = QrPivoted(Ap).solve(b);

      bool ok = true;
      for (std::size_t k = 0; k < P.size(); ++k)
        if (z[k] <= 0.0) ok = false;
      if (ok) {
        for (std::size_t k = 0; k < P.size(); ++k) x[P[k]] = z[k];
        break;
      }
      double alpha = 1.0;
      for (std::size_t k = 0; k < P.size(); ++k) {
        if (z[k] <= 0.0) {
          double xv = x[P[k]];
          double a = xv / (xv - z[k]);
          alpha = std::min(alpha, a);
        }
      }
      for (std::size_t k = 0; k < P.size(); ++k) {
        x[P[k]] += alpha * (z[k] - x[P[k]]);
        if (x[P[k]] <= 1e-14) {
          x[P[k]] = 0.0;
          passive[P[k]] = 0;
        }
      }
    }
  }

  out.x = x;
  out.iterations = iter;
  Vec r = residual(x);
  out.residual_norm = two_norm(r);
  Vec w = A.apply_t(r);
  double kkt = 0.0;
  for (int j = 0; j < n; ++j) {
    if (x[j] > 0.0)
      kkt = std::max(kkt, std::abs(w[j]));
    else
      kkt = std::max(kkt, std::max(0.0, w[j]));
    kkt = std::max(kkt, -x[j]);
  }
  out.kkt_residual = kkt;
  return out;
}

// ---------------------------------------------------------------------------
// Cones.

int ConeDescription::dim() const {
  if (!nonneg_generators.empty()) return static_cast<int>(nonneg_generators[0].size());
  if (!span_basis.empty()) return static_cast<int>(span_basis[0].size());
  return 0;
}

ConeMembership cone_membership(const Vec& v, const ConeDescription& cone, double tol) {
  const int d = static_cast<int>(v.size());
  const int k = static_cast<int>(cone.nonneg_generators.size());
  const int s = static_cast<int>(cone.span_basis.size());
  ConeMembership out;
  if (cone.trivial()) {
    out.inside = inf_norm(v) <= tol;
    return out;
  }

  LinearProgram lp = LinearProgram::make(k + s);
  for (int i = 0; i < k; ++i) lp.lower[i] = 0.0;
  for (int r = 0; r < d; ++r) {
    Vec row(k + s, 0.0);
    for (int i = 0; i < k; ++i) row[i] = cone.nonneg_generators[i][r];
    for (int j = 0; j < s; ++j) row[k + j] = cone.span_basis[j][r];
    lp.add_row(row, RowSense::Eq, v[r]);
  }
  LpResult res = solve_lp(lp, tol);
  if (res.status != LpStatus::Optimal) return out;
  out.inside = true;
  out.lambda.assign(res.x.begin(), res.x.begin() + k);
  out.mu.assign(res.x.begin() + k, res.x.end());
  return out;
}

PldResult positive_linear_dependence(const std::vector<Vec>& signed_vectors,
                                     const std::vector<Vec>& free_vectors,
                                     double tol) {
  const int ks = static_cast<int>(signed_vectors.size());
  const int kf = static_cast<int>(free_vectors.size());
  if (ks + kf == 0) throw NumericError("positive_linear_dependence needs at least one vector");
  int d = static_cast<int>(ks > 0 ? signed_vectors[0].size() : free_vectors[0].size());

  PldResult out;
  out.alpha.assign(ks, 0.0);
  out.beta.assign(kf, 0.0);

  // A zero vector is dependent on its own.
  for (int i = 0; i < ks; ++i)
    if (inf_norm(signed_vectors[i]) <= tol) {
      out.dependent = true;
      out.alpha[i] = 1.0;
      return out;
    }
  for (int j = 0; j < kf; ++j)
    if (inf_norm(free_vectors[j]) <= tol) {
      out.dependent = true;
      out.beta[j] = 1.0;
      return out;
    }

  // Stage 1: a combination with some alpha_i > 0.  The box alpha <= 1 only
  // normalizes scale, so objective > 0 decides existence exactly.
  if (ks > 0) {
    LinearProgram lp = LinearProgram::make(ks + kf);
    for (int i = 0; i < ks; ++i) {
      lp.lower[i] = 0.0;
      lp.upper[i] = 1.0;
      lp.c[i] = 1.0;
    }
    for (int r = 0; r < d; ++r) {
      Vec row(ks + kf, 0.0);
      for (int i = 0; i < ks; ++i) row[i] = signed_vectors[i][r];
      for (int j = 0; j < kf; ++j) row[ks + j] = free_vectors[j][r];
      lp.add_row(row, RowSense::Eq, 0.0);
    }
    LpResult res = solve_lp(lp, tol);
    if (res.status == LpStatus::Optimal && res.objective > 1e-7) {
      out.dependent = true;
      out.alpha.assign(res.x.begin(), res.x.begin() + ks);
      out.beta.assign(res.x.begin() + ks, res.x.end());
      return out;
    }
  }

  // Stage 2: dependence among the free vectors alone.
  if (kf > 0 && numeric_rank(Matrix::from_cols(free_vectors)) < kf) {
    for (int jfix = 0; jfix < kf; ++jfix) {
      LinearProgram lp = LinearProgram::make(kf);
      lp.lower[jfix] = 1.0;
      lp.upper[jfix] = 1.0;
      for (int r = 0; r < d; ++r) {
        Vec row(kf, 0.0);
        for (int j = 0; j < kf; ++j) row[j] = free_vectors[j][r];
        lp.add_row(row, RowSense::Eq, 0.0);
      }
      LpResult res = solve_lp(lp, tol);
      if (res.status == LpStatus::Optimal) {
        out.dependent = true;
        out.beta = res.x;
        return out;
      }
    }
  }
  return out;
}

}  // namespace mixedcq::num
