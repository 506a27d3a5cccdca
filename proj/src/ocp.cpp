#include "mixedcq/ocp.hpp"

#include <algorithm>
#include <cmath>

#include "mixedcq/errors.hpp"

namespace mixedcq::ocp {

int DiscretizedNlp::endpoint_eq_count() const {
  int c = 0;
  for (const model::EndpointMark& mk : ps.e0) c += mk.fixed ? 1 : 0;
  for (const model::EndpointMark& mk : ps.e1) c += mk.fixed ? 1 : 0;
  return c;
}

namespace {

expr::EvalPoint node_of(const DiscretizedNlp& nlp, const Vec& z, int k) {
  expr::EvalPoint p;
  p.t = nlp.ps.t0 + k * nlp.h;
  p.x.resize(nlp.ps.n);
  p.u.resize(nlp.ps.m);
  for (int i = 0; i < nlp.ps.n; ++i) p.x[i] = z[nlp.x_at(k, i)];
  int ku = std::min(k, nlp.N - 1);
  for (int j = 0; j < nlp.ps.m; ++j) p.u[j] = z[nlp.u_at(ku, j)];
  return p;
}

expr::EvalPoint endpoint_of(const DiscretizedNlp& nlp, const Vec& z) {
  expr::EvalPoint p;  // f lives on (x(t0), x(t1)) packed as 2n states
  p.x.resize(2 * nlp.ps.n);
  for (int i = 0; i < nlp.ps.n; ++i) {
    p.x[i] = z[nlp.x_at(0, i)];
    p.x[nlp.ps.n + i] = z[nlp.x_at(nlp.N, i)];
  }
  return p;
}

}  // namespace

double DiscretizedNlp::objective(const Vec& z) const {
  double J = 0.0;
  for (int k = 0; k < N; ++k) J += h * expr::evaluate(ps.F, node_of(*this, z, k));
  J += expr::evaluate(ps.f, endpoint_of(*this, z));
  return J;
}

Vec DiscretizedNlp::objective_grad(const Vec& z) const {
  Vec grad(num_vars(), 0.0);
  for (int k = 0; k < N; ++k) {
    expr::EvalPoint p = node_of(*this, z, k);
    Vec g = expr::gradient(ps.F, p).grad;
    for (int i = 0; i < ps.n; ++i) grad[x_at(k, i)] += h * g[1 + i];
    for (int j = 0; j < ps.m; ++j) grad[u_at(k, j)] += h * g[1 + ps.n + j];
  }
  expr::EvalPoint pe = endpoint_of(*this, z);
  Vec gf = expr::gradient(ps.f, pe).grad;
  for (int i = 0; i < ps.n; ++i) {
    grad[x_at(0, i)] += gf[1 + i];
    grad[x_at(N, i)] += gf[1 + ps.n + i];
  }
  return grad;
}

Vec DiscretizedNlp::eq_residuals(const Vec& z) const {
  Vec r;
  r.reserve(eq_count());
  for (int k = 0; k < N; ++k) {
    expr::EvalPoint p = node_of(*this, z, k);
    for (int i = 0; i < ps.n; ++i)
      r.push_back(z[x_at(k + 1, i)] - z[x_at(k, i)] - h * expr::evaluate(ps.phi[i], p));
  }
  for (int k = 0; k < N; ++k) {
    expr::EvalPoint p = node_of(*this, z, k);
    for (int j = 0; j < ps.s; ++j) r.push_back(expr::evaluate(ps.h[j], p));
  }
  for (int i = 0; i < ps.n; ++i)
    if (ps.e0[i].fixed) r.push_back(z[x_at(0, i)] - ps.e0[i].value);
  for (int i = 0; i < ps.n; ++i)
    if (ps.e1[i].fixed) r.push_back(z[x_at(N, i)] - ps.e1[i].value);
  return r;
}

Vec DiscretizedNlp::ineq_residuals(const Vec& z) const {
  Vec r;
  r.reserve(ineq_count());
  for (int k = 0; k < N; ++k) {
    expr::EvalPoint p = node_of(*this, z, k);
    for (int i = 0; i < ps.l; ++i) r.push_back(expr::evaluate(ps.g[i], p));
  }
  return r;
}

Trajectory DiscretizedNlp::to_trajectory(const Vec& z) const {
  Trajectory traj;
  for (int k = 0; k <= N; ++k) {
    traj.grid.push_back(ps.t0 + k * h);
    Vec x(ps.n);
    for (int i = 0; i < ps.n; ++i) x[i] = z[x_at(k, i)];
    traj.x.push_back(std::move(x));
  }
  for (int k = 0; k < N; ++k) {
    Vec u(ps.m);
    for (int j = 0; j < ps.m; ++j) u[j] = z[u_at(k, j)];
    traj.u.push_back(std::move(u));
  }
  return traj;
}

Vec DiscretizedNlp::from_trajectory(const Trajectory& traj) const {
  if (traj.segments() != N) throw ValidationError("trajectory", "segment count differs from N");
  Vec z(num_vars(), 0.0);
  for (int k = 0; k <= N; ++k)
    for (int i = 0; i < ps.n; ++i) z[x_at(k, i)] = traj.x[k][i];
  for (int k = 0; k < N; ++k)
    for (int j = 0; j < ps.m; ++j) z[u_at(k, j)] = traj.u[k][j];
  return z;
}

Vec DiscretizedNlp::zeros() const {
  Vec z(num_vars(), 0.0);
  // Respect fixed endpoints and the control box from the start.
  for (int i = 0; i < ps.n; ++i) {
    if (ps.e0[i].fixed)
      for (int k = 0; k <= N; ++k) z[x_at(k, i)] = ps.e0[i].value;
    if (ps.e1[i].fixed) z[x_at(N, i)] = ps.e1[i].value;
  }
  for (int k = 0; k < N; ++k)
    for (int j = 0; j < ps.m; ++j) {
      double v = 0.0;
      v = std::min(std::max(v, ps.U.lower[j]), ps.U.upper[j]);
      z[u_at(k, j)] = v;
    }
  return z;
}

DiscretizedNlp transcribe(const ProblemSpec& ps, int N) {
  if (N < 2) throw ValidationError("N", "transcription requires N >= 2");
  if (!ps.smooth_phi())
    throw NumericError("nonsmooth dynamics are not supported on the solver path");
  if (!expr::is_smooth(ps.F))
    throw NumericError("nonsmooth running cost is not supported on the solver path");
  DiscretizedNlp nlp;
  nlp.ps = ps;
  nlp.N = N;
  nlp.h = (ps.t1 - ps.t0) / N;
  return nlp;
}

// ---------------------------------------------------------------------------
// Augmented Lagrangian.  The inner loop iterates on the controls plus the
// free initial-state coordinates; states are recovered by the exact forward
// rollout, so dynamics defects vanish identically and the gradient is one
// backward adjoint sweep.  Full-space descent on the defect-penalized
// Lagrangian stalls on the O(N^2 rho) chain conditioning at N ~ 1000.

namespace {

struct AlState {
  Vec mu_h;    // node equality multipliers (N*s)
  Vec mu_end;  // fixed-endpoint multipliers at t1
  Vec nu;      // node inequality multipliers (N*l), >= 0
  double rho = 10.0;
};

// Reduced decision vector: [free x0 coords | u_0 .. u_{N-1}].
struct Reduced {
  std::vector<int> free_x0;
  int nu_vars = 0;
  int dim() const { return static_cast<int>(free_x0.size()) + nu_vars; }
};

struct Rollout {
  std::vector<Vec> x;              // N+1 states
  std::vector<Vec> u;              // N controls
  Vec ceq_h;                       // node equalities (N*s)
  Vec cend;                        // fixed final coords
  Vec gin;                         // node inequalities (N*l)
  double objective = 0.0;
  bool finite = true;
};

Vec initial_state(const DiscretizedNlp& nlp, const Reduced& red, const Vec& y) {
  Vec x0(nlp.ps.n, 0.0);
  for (int i = 0; i < nlp.ps.n; ++i)
    if (nlp.ps.e0[i].fixed) x0[i] = nlp.ps.e0[i].value;
  for (std::size_t r = 0; r < red.free_x0.size(); ++r) x0[red.free_x0[r]] = y[r];
  return x0;
}

Rollout roll(const DiscretizedNlp& nlp, const Reduced& red, const Vec& y) {
  const ProblemSpec& ps = nlp.ps;
  const int N = nlp.N;
  const int off = static_cast<int>(red.free_x0.size());
  Rollout out;
  out.x.push_back(initial_state(nlp, red, y));
  for (int k = 0; k < N; ++k) {
    Vec u(ps.m);
    for (int j = 0; j < ps.m; ++j) u[j] = y[off + k * ps.m + j];
    out.u.push_back(u);
    expr::EvalPoint p;
    p.t = ps.t0 + k * nlp.h;
    p.x = out.x.back();
    p.u = u;
    Vec xn(ps.n);
    for (int i = 0; i < ps.n; ++i) {
      xn[i] = p.x[i] + nlp.h * expr::evaluate(ps.phi[i], p);
      if (!std::isfinite(xn[i])) out.finite = false;
    }
    out.objective += nlp.h * expr::evaluate(ps.F, p);
    for (int j = 0; j < ps.s; ++j) out.ceq_h.push_back(expr::evaluate(ps.h[j], p));
    for (int i = 0; i < ps.l; ++i) out.gin.push_back(expr::evaluate(ps.g[i], p));
    out.x.push_back(std::move(xn));
    if (!out.finite) break;
  }
  if (out.finite) {
    expr::EvalPoint pe;
    pe.x = out.x.front();
    pe.x.insert(pe.x.end(), out.x.back().begin(), out.x.back().end());
    out.objective += expr::evaluate(ps.f, pe);
    for (int i = 0; i < ps.n; ++i)
      if (ps.e1[i].fixed) out.cend.push_back(out.x.back()[i] - ps.e1[i].value);
  }
  return out;
}

double al_value(const Rollout& ro, const AlState& st) {
  if (!ro.finite) return 1e30;
  double val = ro.objective;
  for (std::size_t r = 0; r < ro.ceq_h.size(); ++r)
    val += st.mu_h[r] * ro.ceq_h[r] + 0.5 * st.rho * ro.ceq_h[r] * ro.ceq_h[r];
  for (std::size_t r = 0; r < ro.cend.size(); ++r)
    val += st.mu_end[r] * ro.cend[r] + 0.5 * st.rho * ro.cend[r] * ro.cend[r];
  for (std::size_t i = 0; i < ro.gin.size(); ++i) {
    double t = std::max(0.0, st.nu[i] + st.rho * ro.gin[i]);
    val += (t * t - st.nu[i] * st.nu[i]) / (2.0 * st.rho);
  }
  return val;
}

// Gradient of the AL value with respect to the reduced variables: explicit
// node terms plus an adjoint sweep through the rollout recursion.
Vec al_grad(const DiscretizedNlp& nlp, const Reduced& red, const Rollout& ro, const AlState& st) {
  const ProblemSpec& ps = nlp.ps;
  const int N = nlp.N;
  const int off = static_cast<int>(red.free_x0.size());
  Vec grad(red.dim(), 0.0);

  // Seed the terminal adjoint with endpoint terms.
  expr::EvalPoint pe;
  pe.x = ro.x.front();
  pe.x.insert(pe.x.end(), ro.x.back().begin(), ro.x.back().end());
  Vec gf = expr::gradient(ps.f, pe).grad;
  Vec q(ps.n, 0.0);
  {
    int at = 0;
    for (int i = 0; i < ps.n; ++i) {
      q[i] = gf[1 + ps.n + i];
      if (ps.e1[i].fixed) {
        q[i] += st.mu_end[at] + st.rho * ro.cend[at];
        ++at;
      }
    }
  }
  Vec q0_extra(ps.n, 0.0);  // df/dx0 part, added at the end
  for (int i = 0; i < ps.n; ++i) q0_extra[i] = gf[1 + i];

  for (int k = N - 1; k >= 0; --k) {
    expr::EvalPoint p;
    p.t = ps.t0 + k * nlp.h;
    p.x = ro.x[k];
    p.u = ro.u[k];

    Vec wx(ps.n, 0.0), wu(ps.m, 0.0);  // explicit node terms
    Vec gF = expr::gradient(ps.F, p).grad;
    for (int i = 0; i < ps.n; ++i) wx[i] += nlp.h * gF[1 + i];
    for (int j = 0; j < ps.m; ++j) wu[j] += nlp.h * gF[1 + ps.n + j];
    for (int jh = 0; jh < ps.s; ++jh) {
      double w = st.mu_h[k * ps.s + jh] + st.rho * ro.ceq_h[k * ps.s + jh];
      if (w == 0.0) continue;
      Vec gh = expr::gradient(ps.h[jh], p).grad;
      for (int i = 0; i < ps.n; ++i) wx[i] += w * gh[1 + i];
      for (int j = 0; j < ps.m; ++j) wu[j] += w * gh[1 + ps.n + j];
    }
    for (int ig = 0; ig < ps.l; ++ig) {
      double t = std::max(0.0, st.nu[k * ps.l + ig] + st.rho * ro.gin[k * ps.l + ig]);
      if (t == 0.0) continue;
      Vec gg = expr::gradient(ps.g[ig], p).grad;
      for (int i = 0; i < ps.n; ++i) wx[i] += t * gg[1 + i];
      for (int j = 0; j < ps.m; ++j) wu[j] += t * gg[1 + ps.n + j];
    }

    // u_k gradient: explicit + q^T d x_{k+1} / d u_k.
    std::vector<Vec> gphi;
    for (int i = 0; i < ps.n; ++i) gphi.push_back(expr::gradient(ps.phi[i], p).grad);
    for (int j = 0; j < ps.m; ++j) {
      double acc = wu[j];
      for (int i = 0; i < ps.n; ++i) acc += q[i] * nlp.h * gphi[i][1 + ps.n + j];
      grad[off + k * ps.m + j] = acc;
    }
    // Adjoint step: q_k = q_{k+1} (I + h J_phi,x) + wx.
    Vec qk(ps.n, 0.0);
    for (int c = 0; c < ps.n; ++c) {
      double acc = q[c] + wx[c];
      for (int i = 0; i < ps.n; ++i) acc += q[i] * nlp.h * gphi[i][1 + c];
      qk[c] = acc;
    }
    q = qk;
  }
  for (std::size_t r = 0; r < red.free_x0.size(); ++r)
    grad[r] = q[red.free_x0[r]] + q0_extra[red.free_x0[r]];
  return grad;
}

void project_controls(const DiscretizedNlp& nlp, const Reduced& red, Vec& y) {
  const int off = static_cast<int>(red.free_x0.size());
  for (int k = 0; k < nlp.N; ++k)
    for (int j = 0; j < nlp.ps.m; ++j) {
      double& v = y[off + k * nlp.ps.m + j];
      v = std::min(std::max(v, nlp.ps.U.lower[j]), nlp.ps.U.upper[j]);
    }
}

double proj_grad_norm(const DiscretizedNlp& nlp, const Reduced& red, const Vec& y,
                      const Vec& grad) {
  Vec step(y);
  for (std::size_t c = 0; c < y.size(); ++c) step[c] -= grad[c];
  project_controls(nlp, red, step);
  double norm = 0.0;
  for (std::size_t c = 0; c < y.size(); ++c) norm = std::max(norm, std::abs(step[c] - y[c]));
  return norm;
}

// Spectral projected gradient with nonmonotone Armijo backtracking.
int inner_solve(const DiscretizedNlp& nlp, const Reduced& red, Vec& y, const AlState& st,
                double tol, int max_iter) {
  project_controls(nlp, red, y);
  Rollout ro = roll(nlp, red, y);
  double fy = al_value(ro, st);
  Vec gy = al_grad(nlp, red, ro, st);
  std::vector<double> memory = {fy};
  double step = 1.0 / std::max(1.0, num::inf_norm(gy));
  Vec y_prev, g_prev;
  int it = 0;
  for (; it < max_iter; ++it) {
    if (proj_grad_norm(nlp, red, y, gy) <= tol) break;
    if (it > 0) {
      double ss = 0.0, sy = 0.0;
      for (std::size_t c = 0; c < y.size(); ++c) {
        double sv = y[c] - y_prev[c];
        double yv = gy[c] - g_prev[c];
        ss += sv * sv;
        sy += sv * yv;
      }
      step = sy > 1e-14 ? ss / sy : step * 2.0;
      step = std::min(std::max(step, 1e-10), 1e10);
    }
    double fmax = *std::max_element(memory.begin(), memory.end());
    double trial = step;
    Vec cand;
    Rollout rc;
    double fc = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      cand = y;
      for (std::size_t c = 0; c < y.size(); ++c) cand[c] -= trial * gy[c];
      project_controls(nlp, red, cand);
      double decr = 0.0;
      for (std::size_t c = 0; c < y.size(); ++c) decr += gy[c] * (y[c] - cand[c]);
      rc = roll(nlp, red, cand);
      fc = al_value(rc, st);
      if (fc <= fmax - 1e-4 * decr) {
        accepted = true;
        break;
      }
      trial *= 0.25;
    }
    if (!accepted) break;
    y_prev = y;
    g_prev = gy;
    y = cand;
    ro = rc;
    fy = fc;
    gy = al_grad(nlp, red, ro, st);
    memory.push_back(fy);
    if (memory.size() > 8) memory.erase(memory.begin());
  }
  return it;
}

}  // namespace

std::pair<Trajectory, SolveReport> solve_al(const DiscretizedNlp& nlp,
                                            const std::optional<Trajectory>& start,
                                            const SolveOptions& opts) {
  const ProblemSpec& ps = nlp.ps;
  Reduced red;
  for (int i = 0; i < ps.n; ++i)
    if (!ps.e0[i].fixed) red.free_x0.push_back(i);
  red.nu_vars = nlp.N * ps.m;

  Vec y(red.dim(), 0.0);
  if (start) {
    Vec z = nlp.from_trajectory(*start);
    for (double v : z)
      if (!std::isfinite(v)) throw NumericError("start trajectory contains nonfinite values");
    for (std::size_t r = 0; r < red.free_x0.size(); ++r) y[r] = z[nlp.x_at(0, red.free_x0[r])];
    for (int k = 0; k < nlp.N; ++k)
      for (int j = 0; j < ps.m; ++j)
        y[red.free_x0.size() + k * ps.m + j] = z[nlp.u_at(k, j)];
  } else {
    project_controls(nlp, red, y);
  }

  AlState st;
  st.mu_h.assign(static_cast<std::size_t>(nlp.N) * ps.s, 0.0);
  std::size_t fixed_end = 0;
  for (const model::EndpointMark& mk : ps.e1) fixed_end += mk.fixed ? 1 : 0;
  st.mu_end.assign(fixed_end, 0.0);
  st.nu.assign(static_cast<std::size_t>(nlp.N) * ps.l, 0.0);
  st.rho = opts.penalty_init;

  SolveReport rep;
  Rollout ro;
  double prev_viol = num::kInf;
  for (int outer = 0; outer < opts.max_outer; ++outer) {
    rep.outer_iterations = outer + 1;
    double inner_tol = std::max(opts.tol, 1e-2 * std::pow(0.1, outer));
    rep.inner_iterations += inner_solve(nlp, red, y, st, inner_tol, opts.max_inner);

    ro = roll(nlp, red, y);
    double viol = 0.0;
    for (double c : ro.ceq_h) viol = std::max(viol, std::abs(c));
    for (double c : ro.cend) viol = std::max(viol, std::abs(c));
    for (double gv : ro.gin) viol = std::max(viol, std::max(0.0, gv));
    rep.max_violation = viol;
    rep.proj_grad_norm = proj_grad_norm(nlp, red, y, al_grad(nlp, red, ro, st));

    if (viol <= opts.tol && rep.proj_grad_norm <= opts.tol) {
      rep.converged = true;
      break;
    }
    for (std::size_t r = 0; r < ro.ceq_h.size(); ++r) st.mu_h[r] += st.rho * ro.ceq_h[r];
    for (std::size_t r = 0; r < ro.cend.size(); ++r) st.mu_end[r] += st.rho * ro.cend[r];
    for (std::size_t i = 0; i < ro.gin.size(); ++i)
      st.nu[i] = std::max(0.0, st.nu[i] + st.rho * ro.gin[i]);
    if (viol > 0.25 * prev_viol) {
      if (st.rho >= 1e12) {
        rep.best_effort = true;  // penalty overflow; constraint system looks infeasible
        break;
      }
      st.rho *= opts.penalty_growth;
    }
    prev_viol = viol;
  }
  if (!rep.converged) rep.best_effort = true;
  ro = roll(nlp, red, y);
  rep.objective = ro.objective;

  Trajectory traj;
  for (int k = 0; k <= nlp.N; ++k) {
    traj.grid.push_back(ps.t0 + k * nlp.h);
    traj.x.push_back(ro.x[k]);
  }
  traj.u = ro.u;
  return {traj, rep};
}

}  // namespace mixedcq::ocp
