#include "mixedcq/setmap.hpp"

#include <algorithm>
#include <cmath>

#include "mixedcq/errors.hpp"
#include "mixedcq/rng.hpp"

namespace mixedcq::setmap {

using model::ProblemSpec;
using model::Trajectory;
using num::LinearProgram;
using num::LpResult;
using num::LpStatus;
using num::Matrix;
using num::RowSense;

RadiusProfile RadiusProfile::from_problem(const ProblemSpec& ps, int nodes) {
  RadiusProfile r;
  r.infinite = ps.R.infinite;
  r.values.assign(static_cast<std::size_t>(std::max(nodes, 1)), ps.R.infinite ? num::kInf : ps.R.value);
  return r;
}

namespace {

Vec xu_grad(const expr::ExprAst& e, const EvalPoint& z) {
  Vec full = expr::gradient(e, z).grad;
  return Vec(full.begin() + 1, full.end());
}

EvalPoint make_point(double t, const Vec& x, const Vec& u) {
  EvalPoint p;
  p.t = t;
  p.x = x;
  p.u = u;
  return p;
}

Vec velocity(const ProblemSpec& ps, const EvalPoint& p) {
  Vec v(ps.n);
  for (int i = 0; i < ps.n; ++i) v[i] = expr::evaluate(ps.phi[i], p);
  return v;
}

double vec_dist(const Vec& a, const Vec& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d);
}

bool control_feasible(const ProblemSpec& ps, const EvalPoint& p, double tol) {
  if (!ps.U.inside(p.u, tol)) return false;
  for (const expr::ExprAst& gi : ps.g)
    if (expr::evaluate(gi, p) > tol) return false;
  for (const expr::ExprAst& hj : ps.h)
    if (std::abs(expr::evaluate(hj, p)) > tol) return false;
  return true;
}

// Gauss-Newton steps in u onto {h(x, .) = 0}.
Vec project_equalities(const ProblemSpec& ps, double t, const Vec& x, Vec u) {
  if (ps.s == 0) return u;
  for (int it = 0; it < 20; ++it) {
    EvalPoint p = make_point(t, x, u);
    std::vector<Vec> rows;
    Vec rhs;
    double worst = 0.0;
    for (int j = 0; j < ps.s; ++j) {
      double hj = expr::evaluate(ps.h[j], p);
      worst = std::max(worst, std::abs(hj));
      Vec g = xu_grad(ps.h[j], p);
      rows.push_back(Vec(g.begin() + ps.n, g.end()));
      rhs.push_back(hj);
    }
    if (worst <= 1e-12) break;
    Vec step = num::QrPivoted(Matrix::from_rows(rows)).solve(rhs, 1e-10);
    for (int j = 0; j < ps.m; ++j) u[j] -= step[j];
  }
  return u;
}

// Feasible controls near `center`: an axis grid (clamped to U and to the
// window), equality projection, a feasibility filter, and per-axis bisection
// onto inequality boundaries so extreme velocities appear in the sample.
std::vector<Vec> feasible_controls(const ProblemSpec& ps, double t, const Vec& x,
                                   const Vec& center, double window, double feas_tol) {
  const int m = ps.m;
  const int per_axis = m == 1 ? 41 : (m == 2 ? 15 : 7);

  Vec lo(m), hi(m);
  for (int j = 0; j < m; ++j) {
    lo[j] = std::max(ps.U.lower[j], center[j] - window);
    hi[j] = std::min(ps.U.upper[j], center[j] + window);
    if (lo[j] > hi[j]) lo[j] = hi[j] = std::min(std::max(center[j], ps.U.lower[j]), ps.U.upper[j]);
  }

  std::vector<Vec> seeds;
  std::vector<int> idx(m, 0);
  for (;;) {
    Vec u(m);
    for (int j = 0; j < m; ++j)
      u[j] = per_axis == 1 ? lo[j] : lo[j] + (hi[j] - lo[j]) * idx[j] / (per_axis - 1);
    seeds.push_back(u);
    int c = 0;
    while (c < m && ++idx[c] == per_axis) idx[c++] = 0;
    if (c == m) break;
  }

  std::vector<Vec> out;
  auto push_unique = [&](const Vec& u) {
    for (const Vec& seen : out)
      if (vec_dist(seen, u) <= 1e-12) return;
    out.push_back(u);
  };

  for (Vec u : seeds) {
    u = project_equalities(ps, t, x, u);
    u = ps.U.clamp(u);
    if (ps.s > 0) {
      u = project_equalities(ps, t, x, u);
      Vec uc = ps.U.clamp(u);
      if (vec_dist(uc, u) > 1e-9) continue;  // projection fights the box
      u = uc;
    }
    EvalPoint p = make_point(t, x, u);
    if (!control_feasible(ps, p, feas_tol)) continue;
    push_unique(u);

    // Walk each axis to the feasibility boundary (box edge or g = 0).
    for (int j = 0; j < m && ps.s == 0; ++j) {
      for (double dir : {1.0, -1.0}) {
        double lo_t = 0.0, hi_t = window;
        auto ok = [&](double step) {
          Vec uu(u);
          uu[j] += dir * step;
          if (uu[j] < ps.U.lower[j] - 1e-15 || uu[j] > ps.U.upper[j] + 1e-15) return false;
          return control_feasible(ps, make_point(t, x, uu), feas_tol);
        };
        if (ok(hi_t)) {
          Vec uu(u);
          uu[j] += dir * hi_t;
          push_unique(uu);
          continue;
        }
        for (int bis = 0; bis < 50; ++bis) {
          double mid = 0.5 * (lo_t + hi_t);
          if (ok(mid))
            lo_t = mid;
          else
            hi_t = mid;
        }
        if (lo_t > 0.0) {
          Vec uu(u);
          uu[j] += dir * lo_t;
          push_unique(uu);
        }
      }
    }
  }
  return out;
}

// min over feasible u' of |phi(x', u') - v|: candidate sweep plus projected
// descent polish from the best seeds.
std::optional<double> dist_to_gamma(const ProblemSpec& ps, double t, const Vec& xp, const Vec& v,
                                    const Vec& u_center, double window, double feas_tol) {
  std::vector<Vec> cands = feasible_controls(ps, t, xp, u_center, window, feas_tol);
  if (cands.empty()) return std::nullopt;

  std::vector<std::pair<double, Vec>> scored;
  for (const Vec& u : cands)
    scored.push_back({vec_dist(velocity(ps, make_point(t, xp, u)), v), u});
  std::sort(scored.begin(), scored.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double best = scored[0].first;
  const int polish = std::min<int>(16, static_cast<int>(scored.size()));
  for (int s = 0; s < polish; ++s) {
    Vec u = scored[s].second;
    // Projected descent on |phi - v|^2 with penalty continuation on g/h.
    for (double rho : {1e4, 1e8}) {
      double step = 0.1 * std::max(window, 1e-6);
      for (int it = 0; it < 120; ++it) {
        EvalPoint p = make_point(t, xp, u);
        Vec grad(ps.m, 0.0);
        Vec vv = velocity(ps, p);
        for (int i = 0; i < ps.n; ++i) {
          Vec gphi = xu_grad(ps.phi[i], p);
          for (int j = 0; j < ps.m; ++j) grad[j] += 2.0 * (vv[i] - v[i]) * gphi[ps.n + j];
        }
        for (int gi = 0; gi < ps.l; ++gi) {
          double gv = expr::evaluate(ps.g[gi], p);
          if (gv > 0) {
            Vec gg = xu_grad(ps.g[gi], p);
            for (int j = 0; j < ps.m; ++j) grad[j] += rho * 2.0 * gv * gg[ps.n + j];
          }
        }
        for (int hj = 0; hj < ps.s; ++hj) {
          double hv = expr::evaluate(ps.h[hj], p);
          Vec gh = xu_grad(ps.h[hj], p);
          for (int j = 0; j < ps.m; ++j) grad[j] += rho * 2.0 * hv * gh[ps.n + j];
        }
        double gnorm = num::inf_norm(grad);
        if (gnorm < 1e-14) break;
        Vec un(u);
        for (int j = 0; j < ps.m; ++j) un[j] -= step * grad[j];
        un = ps.U.clamp(un);
        auto objective = [&](const Vec& uu) {
          EvalPoint pp = make_point(t, xp, uu);
          double val = std::pow(vec_dist(velocity(ps, pp), v), 2);
          for (int gi = 0; gi < ps.l; ++gi)
            val += rho * std::pow(std::max(0.0, expr::evaluate(ps.g[gi], pp)), 2);
          for (int hj = 0; hj < ps.s; ++hj)
            val += rho * std::pow(expr::evaluate(ps.h[hj], pp), 2);
          return val;
        };
        if (objective(un) < objective(u)) {
          u = un;
          step *= 1.5;
        } else {
          step *= 0.5;
          if (step < 1e-14) break;
        }
      }
    }
    if (ps.s > 0) u = project_equalities(ps, t, xp, u);
    u = ps.U.clamp(u);
    EvalPoint p = make_point(t, xp, u);
    if (control_feasible(ps, p, feas_tol * 10))
      best = std::min(best, vec_dist(velocity(ps, p), v));
  }
  return best;
}

}  // namespace

GammaPlCertificate certify_gamma_pl(const ProblemSpec& ps, const EvalPoint& z,
                                    const cq::PointwiseOptions& popts,
                                    const cq::ErrorBoundOptions& ebopts) {
  GammaPlCertificate cert;
  cert.wbcq = cq::check_pointwise_cq(cq::CqKind::Wbcq, ps, z, popts);
  cert.calmness = cq::check_structural_calmness(ps);
  if (!cert.wbcq.holds()) {
    cert.note = "WBCQ fails; no pseudo-Lipschitz certificate";
    return cert;
  }
  if (cert.calmness.holds()) {
    cert.certified = true;
    cert.note = "WBCQ plus structural calmness";
    return cert;
  }
  cert.error_bound = cq::estimate_error_bound(ps, z, ebopts);
  if (cert.error_bound->holds()) {
    cert.certified = true;
    cert.note = "WBCQ plus empirically stable error bound";
  } else {
    cert.note = "WBCQ holds but calmness could not be certified";
  }
  return cert;
}

PlModulusResult estimate_pl_modulus(const ProblemSpec& ps, const Vec& x_center,
                                    const Vec& v_center, double eps, double radius,
                                    const SampleOptions& opts) {
  if (!(eps > 0.0)) throw NumericError("estimate_pl_modulus requires eps > 0");
  PlModulusResult res;
  num::CounterRng rng(opts.seed);
  const double t_ref = ps.t0;
  Vec u_center(ps.m, 0.0);

  // Deterministic axis extremes first, then random pairs.
  std::vector<std::pair<Vec, Vec>> pairs;
  for (int i = 0; i < ps.n; ++i) {
    Vec a(x_center), b(x_center);
    a[i] += eps;
    b[i] -= eps;
    pairs.push_back({a, b});
    pairs.push_back({b, a});
  }
  for (int k = 0; static_cast<int>(pairs.size()) < opts.samples; ++k) {
    Vec a(x_center), b(x_center);
    for (int i = 0; i < ps.n; ++i) {
      a[i] += eps * rng.uniform(21, k * 8 + i, -1.0, 1.0);
      b[i] += eps * rng.uniform(22, k * 8 + i, -1.0, 1.0);
    }
    pairs.push_back({a, b});
  }

  for (const auto& [xa, xb] : pairs) {
    double sep = vec_dist(xa, xb);
    if (sep < 1e-3 * eps) continue;
    ++res.pairs_sampled;
    std::vector<Vec> controls = feasible_controls(ps, t_ref, xa, u_center, opts.u_window, opts.feas_tol);
    std::vector<Vec> vels;
    for (const Vec& u : controls) {
      Vec v = velocity(ps, make_point(t_ref, xa, u));
      if (vec_dist(v, v_center) <= radius) vels.push_back(v);
    }
    if (vels.empty()) {
      res.gamma_empty = true;
      res.empty_at_x = xa;
      continue;
    }
    // Thin out interior velocities; extremes carry the modulus.
    std::sort(vels.begin(), vels.end(), [&](const Vec& a, const Vec& b) {
      return vec_dist(a, v_center) > vec_dist(b, v_center);
    });
    if (static_cast<int>(vels.size()) > 12) vels.resize(12);
    res.velocities_sampled += static_cast<int>(vels.size());

    for (const Vec& v : vels) {
      auto d = dist_to_gamma(ps, t_ref, xb, v, u_center, opts.u_window, opts.feas_tol);
      if (!d) {
        res.gamma_empty = true;
        res.empty_at_x = xb;
        continue;
      }
      double ratio = *d / sep;
      if (ratio > res.k_hat) {
        res.k_hat = ratio;
        res.attain_x = xa;
        res.attain_xp = xb;
        res.attain_v = v;
      }
    }
  }
  return res;
}

BoundedSlopeResult estimate_bounded_slope(const ProblemSpec& ps, const Trajectory& traj,
                                          double eps, const RadiusProfile& radius,
                                          const SampleOptions& opts) {
  if (!ps.smooth_phi() || !ps.smooth_g())
    throw NumericError("estimate_bounded_slope requires smooth phi and g");
  BoundedSlopeResult res;
  const int N = traj.segments();
  num::CounterRng rng(opts.seed);

  double min_radius = num::kInf;
  const int stride = std::max(1, N / std::max(1, opts.samples / 2));

  for (int k = 0; k < N; k += stride) {
    min_radius = std::min(min_radius, radius.at(k));
    Vec xdot(ps.n);
    for (int i = 0; i < ps.n; ++i)
      xdot[i] = (traj.x[k + 1][i] - traj.x[k][i]) / (traj.grid[k + 1] - traj.grid[k]);

    // The node itself plus perturbed feasible neighbors.
    std::vector<EvalPoint> pts;
    pts.push_back(model::node_point(ps, traj, k));
    for (int r = 0; r < 3; ++r) {
      Vec x(traj.x[k]);
      for (int i = 0; i < ps.n; ++i) x[i] += eps * rng.uniform(41 + r, k * 8 + i, -1.0, 1.0);
      for (const Vec& u : feasible_controls(ps, traj.grid[k], x, traj.u[k], 1.0, opts.feas_tol)) {
        EvalPoint p = make_point(traj.grid[k], x, u);
        if (vec_dist(velocity(ps, p), xdot) <= radius.at(k)) {
          pts.push_back(p);
          break;
        }
      }
    }

    for (const EvalPoint& p : pts) {
      if (model::feasibility_residual(ps, p) > opts.feas_tol * 10 &&
          model::feasibility_residual(ps, p) > 1e-6)
        continue;
      ++res.samples_used;
      nonsmooth::ActiveSetInfo act = nonsmooth::active_sets(ps, p, 1e-6);
      const int na = static_cast<int>(act.active_g.size());
      const int nfl = static_cast<int>(act.lower_faces.size());
      const int nfu = static_cast<int>(act.upper_faces.size());
      // Variables: beta (n, free) | lambda (na, >= 0) | varpi (s) | eta (>= 0).
      const int nv = ps.n + na + ps.s + nfl + nfu;
      std::vector<Vec> phi_grads, g_grads, h_grads;
      for (int i = 0; i < ps.n; ++i) phi_grads.push_back(xu_grad(ps.phi[i], p));
      for (int i = 0; i < na; ++i) g_grads.push_back(xu_grad(ps.g[act.active_g[i]], p));
      for (int j = 0; j < ps.s; ++j) h_grads.push_back(xu_grad(ps.h[j], p));

      LinearProgram lp = LinearProgram::make(nv);
      for (int i = 0; i < na; ++i) lp.lower[ps.n + i] = 0.0;
      for (int f = 0; f < nfl + nfu; ++f) lp.lower[ps.n + na + ps.s + f] = 0.0;
      for (int c = 0; c < ps.n; ++c) {
        lp.lower[c] = -1.0;  // |beta| <= 1 section
        lp.upper[c] = 1.0;
      }
      // u-row: -J_phi,u^T beta + sum lambda g_u + sum varpi h_u + eta = 0.
      for (int j = 0; j < ps.m; ++j) {
        Vec row(nv, 0.0);
        for (int i = 0; i < ps.n; ++i) row[i] = -phi_grads[i][ps.n + j];
        for (int i = 0; i < na; ++i) row[ps.n + i] = g_grads[i][ps.n + j];
        for (int jj = 0; jj < ps.s; ++jj) row[ps.n + na + jj] = h_grads[jj][ps.n + j];
        for (int f = 0; f < nfl; ++f)
          if (act.lower_faces[f] == j) row[ps.n + na + ps.s + f] = -1.0;
        for (int f = 0; f < nfu; ++f)
          if (act.upper_faces[f] == j) row[ps.n + na + ps.s + nfl + f] = 1.0;
        lp.add_row(row, RowSense::Eq, 0.0);
      }
      // alpha coordinate rows as objectives.
      for (int c = 0; c < ps.n; ++c) {
        for (double sign : {1.0, -1.0}) {
          LinearProgram obj = lp;
          for (int i = 0; i < ps.n; ++i) obj.c[i] = -sign * phi_grads[i][c];  // -J_phi,x^T beta
          for (int i = 0; i < na; ++i) obj.c[ps.n + i] = sign * g_grads[i][c];
          for (int jj = 0; jj < ps.s; ++jj) obj.c[ps.n + na + jj] = sign * h_grads[jj][c];
          obj.maximize = true;
          LpResult sol = num::solve_lp(obj);
          if (sol.status == LpStatus::Unbounded) {
            res.bounded = false;
            res.k_hat = num::kInf;
            res.witness_t = p.t;
            res.witness_xu = Vec(p.x);
            res.witness_xu.insert(res.witness_xu.end(), p.u.begin(), p.u.end());
            res.margin = 0.0;
            return res;
          }
          if (sol.status == LpStatus::Optimal) res.k_hat = std::max(res.k_hat, sol.objective);
        }
      }
    }
  }
  res.margin = res.k_hat <= 0.0 ? num::kInf
                                : (std::isinf(min_radius) ? num::kInf : min_radius / res.k_hat);
  return res;
}

TemperedGrowthResult check_tempered_growth(const ProblemSpec& ps, const Trajectory& traj,
                                           double eps, const RadiusProfile& radius,
                                           double lambda_frac, const SampleOptions& opts) {
  if (!(lambda_frac > 0.0 && lambda_frac < 1.0))
    throw NumericError("lambda_frac must lie in (0,1)");
  TemperedGrowthResult res;
  res.holds = true;
  res.min_margin = num::kInf;
  const int N = traj.segments();
  num::CounterRng rng(opts.seed);
  const int stride = std::max(1, N / std::max(1, opts.samples / 4));

  for (int k = 0; k < N; k += stride) {
    Vec xdot(ps.n);
    for (int i = 0; i < ps.n; ++i)
      xdot[i] = (traj.x[k + 1][i] - traj.x[k][i]) / (traj.grid[k + 1] - traj.grid[k]);
    double budget = lambda_frac * radius.at(k);

    std::vector<Vec> xs = {traj.x[k]};
    for (int r = 0; r < 3; ++r) {
      Vec x(traj.x[k]);
      for (int i = 0; i < ps.n; ++i) x[i] += eps * rng.uniform(61 + r, k * 8 + i, -1.0, 1.0);
      xs.push_back(x);
    }

    for (const Vec& x : xs) {
      ++res.samples_used;
      auto gap = dist_to_gamma(ps, traj.grid[k], x, xdot, traj.u[k], opts.u_window, opts.feas_tol);
      if (!gap || *gap > budget) {
        res.holds = false;
        res.witness_present = true;
        res.witness_t = traj.grid[k];
        res.witness_x = x;
        res.min_margin = gap ? std::min(res.min_margin, budget - *gap) : -num::kInf;
        continue;
      }
      res.r0_attained = std::max(res.r0_attained, *gap);
      res.min_margin = std::min(res.min_margin, budget - *gap);
    }
  }
  return res;
}

double default_jump_tol(const Trajectory& traj) {
  std::vector<double> steps;
  for (int k = 1; k < traj.segments(); ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < traj.u[k].size(); ++j)
      d = std::max(d, std::abs(traj.u[k][j] - traj.u[k - 1][j]));
    steps.push_back(d);
  }
  if (steps.empty()) return 1e-6;
  std::nth_element(steps.begin(), steps.begin() + steps.size() / 2, steps.end());
  return std::max(1e-6, 5.0 * steps[steps.size() / 2]);
}

std::vector<ClusterPoint> enumerate_cluster_points(const ProblemSpec& ps, const Trajectory& traj,
                                                   double jump_tol) {
  std::vector<ClusterPoint> out;
  const int N = traj.segments();
  auto push = [&](double t, const Vec& x, const Vec& v) {
    for (const ClusterPoint& seen : out) {
      if (std::abs(seen.t - t) <= 1e-12 && vec_dist(seen.x, x) <= 1e-12 &&
          vec_dist(seen.v, v) <= 1e-12)
        return;
    }
    out.push_back({t, x, v});
  };

  push(traj.grid[0], traj.x[0], velocity(ps, make_point(traj.grid[0], traj.x[0], traj.u[0])));
  for (int k = 1; k < N; ++k) {
    double jump = 0.0;
    for (int j = 0; j < ps.m; ++j) jump = std::max(jump, std::abs(traj.u[k][j] - traj.u[k - 1][j]));
    if (jump > jump_tol) {
      push(traj.grid[k], traj.x[k],
           velocity(ps, make_point(traj.grid[k], traj.x[k], traj.u[k - 1])));
      push(traj.grid[k], traj.x[k],
           velocity(ps, make_point(traj.grid[k], traj.x[k], traj.u[k])));
    } else {
      push(traj.grid[k], traj.x[k],
           velocity(ps, make_point(traj.grid[k], traj.x[k], traj.u[k])));
    }
  }
  push(traj.grid[N], traj.x[N],
       velocity(ps, make_point(traj.grid[N], traj.x[N], traj.u[N - 1])));
  return out;
}

}  // namespace mixedcq::setmap
