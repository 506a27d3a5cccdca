#include "mixedcq/cq.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "mixedcq/errors.hpp"
#include "mixedcq/rng.hpp"

namespace mixedcq::cq {

using json = nlohmann::ordered_json;
using model::ProblemSpec;
using num::LinearProgram;
using num::LpResult;
using num::LpStatus;
using num::Matrix;
using num::RowSense;

const char* kind_name(CqKind kind) {
  switch (kind) {
    case CqKind::Nnamcq: return "NNAMCQ";
    case CqKind::Wbcq: return "WBCQ";
    case CqKind::Mfc: return "MFC";
    case CqKind::Ccq: return "CCQ";
    case CqKind::Plicq: return "PLICQ";
    case CqKind::Cpld: return "CPLD";
    case CqKind::Rcpld: return "RCPLD";
    case CqKind::Crsc: return "CRSC";
    case CqKind::CalmStructural: return "CALM_STRUCTURAL";
    case CqKind::ErrorBoundEst: return "ERROR_BOUND_EST";
    case CqKind::GlobalEbStructural: return "GLOBAL_EB_STRUCTURAL";
  }
  return "?";
}

static const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Holds: return "holds";
    case Outcome::Fails: return "fails";
    case Outcome::HoldsEmpirically: return "holds-empirically";
    case Outcome::Unknown: return "unknown";
  }
  return "?";
}

std::string verdict_to_json(const CqVerdict& v) {
  json j;
  j["kind"] = kind_name(v.kind);
  j["holds"] = v.holds();
  j["outcome"] = outcome_name(v.outcome);
  if (v.modulus) j["modulus"] = std::isfinite(*v.modulus) ? json(*v.modulus) : json("inf");
  if (v.witness) {
    json w;
    w["alpha"] = v.witness->alpha;
    w["lambda_g"] = v.witness->lambda_g;
    w["varpi"] = v.witness->varpi;
    w["eta_lower"] = v.witness->eta_lower;
    w["eta_upper"] = v.witness->eta_upper;
    if (!v.witness->sample.empty()) w["sample"] = v.witness->sample;
    j["witness"] = w;
  }
  j["conservative"] = v.conservative;
  j["samples"] = v.samples_used;
  if (!v.note.empty()) j["note"] = v.note;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Multiplier system: columns of one branch-gradient selection, in the fixed
// order [active g | h | box lower faces | box upper faces].

namespace {

struct Selection {
  std::vector<Vec> cols;  // each of length n+m
};

struct MultiplierSystem {
  nonsmooth::ActiveSetInfo act;
  int n = 0, m = 0, l = 0, s = 0;
  int na = 0, nfl = 0, nfu = 0;
  std::vector<Selection> selections;
  bool conservative = false;

  int vars() const { return na + s + nfl + nfu; }
  int lambda_at(int k) const { return k; }            // k-th active inequality
  int varpi_at(int j) const { return na + j; }
  int eta_lower_at(int k) const { return na + s + k; }
  int eta_upper_at(int k) const { return na + s + nfl + k; }
};

void check_feasible(const ProblemSpec& ps, const EvalPoint& z, double eps_act) {
  for (int i = 0; i < ps.l; ++i)
    if (expr::evaluate(ps.g[i], z) > eps_act)
      throw NumericError("point violates inequality " + std::to_string(i) + " beyond eps_act");
  for (int j = 0; j < ps.s; ++j)
    if (std::abs(expr::evaluate(ps.h[j], z)) > eps_act)
      throw NumericError("point violates equality " + std::to_string(j) + " beyond eps_act");
  if (!ps.U.inside(z.u, eps_act)) throw NumericError("control outside U beyond eps_act");
}


CqVerdict verdict_of(CqKind k, Outcome o) {
  CqVerdict v;
  v.kind = k;
  v.outcome = o;
  return v;
}

MultiplierSystem build_system(const ProblemSpec& ps, const EvalPoint& z, double eps_act,
                              double tie_tol) {
  MultiplierSystem sys;
  sys.n = ps.n;
  sys.m = ps.m;
  sys.l = ps.l;
  sys.s = ps.s;
  sys.act = nonsmooth::active_sets(ps, z, eps_act);
  sys.na = static_cast<int>(sys.act.active_g.size());
  sys.nfl = static_cast<int>(sys.act.lower_faces.size());
  sys.nfu = static_cast<int>(sys.act.upper_faces.size());

  std::vector<expr::GeneratorSet> gsets;
  std::size_t combos = 1;
  for (int i : sys.act.active_g) {
    gsets.push_back(expr::clarke_generators(ps.g[i], z, tie_tol));
    sys.conservative = sys.conservative || gsets.back().gradients.size() > 1 || !gsets.back().exact;
    combos *= gsets.back().gradients.size();
  }
  std::vector<Vec> hgrads;
  for (int j = 0; j < ps.s; ++j) {
    Vec full = expr::gradient(ps.h[j], z, tie_tol).grad;
    hgrads.emplace_back(full.begin() + 1, full.end());
  }

  auto face_col = [&](int coord, double sign) {
    Vec v(ps.n + ps.m, 0.0);
    v[ps.n + coord] = sign;
    return v;
  };

  auto assemble = [&](const std::vector<int>& pick) {
    Selection sel;
    for (int k = 0; k < sys.na; ++k) sel.cols.push_back(gsets[k].gradients[pick[k]]);
    for (int j = 0; j < ps.s; ++j) sel.cols.push_back(hgrads[j]);
    for (int c : sys.act.lower_faces) sel.cols.push_back(face_col(c, -1.0));
    for (int c : sys.act.upper_faces) sel.cols.push_back(face_col(c, 1.0));
    return sel;
  };

  constexpr std::size_t kComboCap = 64;
  if (combos <= kComboCap) {
    std::vector<int> pick(sys.na, 0);
    for (std::size_t idx = 0; idx < combos; ++idx) {
      std::size_t rest = idx;
      for (int k = 0; k < sys.na; ++k) {
        pick[k] = static_cast<int>(rest % gsets[k].gradients.size());
        rest /= gsets[k].gradients.size();
      }
      sys.selections.push_back(assemble(pick));
    }
  } else {
    // Hull midpoints, flagged conservative.
    Selection sel;
    for (int k = 0; k < sys.na; ++k) {
      Vec mid(ps.n + ps.m, 0.0);
      for (const Vec& gv : gsets[k].gradients)
        for (int c = 0; c < ps.n + ps.m; ++c)
          mid[c] += gv[c] / static_cast<double>(gsets[k].gradients.size());
      sel.cols.push_back(mid);
    }
    for (int j = 0; j < ps.s; ++j) sel.cols.push_back(hgrads[j]);
    for (int c : sys.act.lower_faces) sel.cols.push_back(face_col(c, -1.0));
    for (int c : sys.act.upper_faces) sel.cols.push_back(face_col(c, 1.0));
    sys.selections.push_back(sel);
    sys.conservative = true;
  }
  return sys;
}

// LP skeleton over the multiplier variables with the system's sign structure.
LinearProgram base_lp(const MultiplierSystem& sys) {
  LinearProgram lp = LinearProgram::make(sys.vars());
  for (int k = 0; k < sys.na; ++k) lp.lower[sys.lambda_at(k)] = 0.0;
  for (int k = 0; k < sys.nfl; ++k) lp.lower[sys.eta_lower_at(k)] = 0.0;
  for (int k = 0; k < sys.nfu; ++k) lp.lower[sys.eta_upper_at(k)] = 0.0;
  return lp;
}

// Row coefficients of coordinate `coord` of the combined output (x rows are
// 0..n-1, u rows are n..n+m-1).
Vec output_row(const MultiplierSystem& sys, const Selection& sel, int coord) {
  Vec row(sys.vars(), 0.0);
  for (int v = 0; v < sys.vars(); ++v) row[v] = sel.cols[v][coord];
  return row;
}

CqWitness make_witness(const MultiplierSystem& sys, const Selection& sel, const Vec& sol) {
  CqWitness w;
  w.lambda_g.assign(sys.l, 0.0);
  for (int k = 0; k < sys.na; ++k) w.lambda_g[sys.act.active_g[k]] = sol[sys.lambda_at(k)];
  w.varpi.assign(sys.s, 0.0);
  for (int j = 0; j < sys.s; ++j) w.varpi[j] = sol[sys.varpi_at(j)];
  w.eta_lower.assign(sys.m, 0.0);
  w.eta_upper.assign(sys.m, 0.0);
  for (int k = 0; k < sys.nfl; ++k) w.eta_lower[sys.act.lower_faces[k]] = sol[sys.eta_lower_at(k)];
  for (int k = 0; k < sys.nfu; ++k) w.eta_upper[sys.act.upper_faces[k]] = sol[sys.eta_upper_at(k)];
  w.alpha.assign(sys.n, 0.0);
  for (int c = 0; c < sys.n; ++c) {
    Vec row = output_row(sys, sel, c);
    w.alpha[c] = num::dot(row, sol);
  }
  return w;
}

// Existence of a multiplier with a prescribed nonzero component, under
// equality rows fixing part of the output.  `fix_rows` pairs (coordinate,
// value); components are normalized one at a time to avoid cancellation in
// split free variables.
std::optional<Vec> find_nonzero_multiplier(const MultiplierSystem& sys, const Selection& sel,
                                           const std::vector<std::pair<int, double>>& fix_rows,
                                           double lp_tol) {
  for (int comp = 0; comp < sys.na + sys.s; ++comp) {
    std::vector<double> targets = comp < sys.na ? std::vector<double>{1.0}
                                                : std::vector<double>{1.0, -1.0};
    for (double tval : targets) {
      LinearProgram lp = base_lp(sys);
      for (const auto& [coord, value] : fix_rows)
        lp.add_row(output_row(sys, sel, coord), RowSense::Eq, value);
      lp.lower[comp] = tval;
      lp.upper[comp] = tval;
      LpResult res = num::solve_lp(lp, lp_tol);
      if (res.status == LpStatus::Optimal) return res.x;
    }
  }
  return std::nullopt;
}

std::vector<std::pair<int, double>> zero_rows(int from, int to) {
  std::vector<std::pair<int, double>> rows;
  for (int c = from; c < to; ++c) rows.push_back({c, 0.0});
  return rows;
}

// ---------------------------------------------------------------------------

CqVerdict decide_nnamcq(const MultiplierSystem& sys, double lp_tol) {
  CqVerdict v = verdict_of(CqKind::Nnamcq, Outcome::Holds);
  for (const Selection& sel : sys.selections) {
    auto sol = find_nonzero_multiplier(sys, sel, zero_rows(0, sys.n + sys.m), lp_tol);
    if (sol) {
      v.outcome = Outcome::Fails;
      v.witness = make_witness(sys, sel, *sol);
      return v;
    }
  }
  return v;
}

CqVerdict decide_mfc(const MultiplierSystem& sys, double lp_tol) {
  CqVerdict v = verdict_of(CqKind::Mfc, Outcome::Holds);
  for (const Selection& sel : sys.selections) {
    auto sol = find_nonzero_multiplier(sys, sel, zero_rows(sys.n, sys.n + sys.m), lp_tol);
    if (sol) {
      v.outcome = Outcome::Fails;
      v.witness = make_witness(sys, sel, *sol);
      return v;
    }
  }
  return v;
}

CqVerdict decide_wbcq(const MultiplierSystem& sys, double lp_tol) {
  CqVerdict v = verdict_of(CqKind::Wbcq, Outcome::Holds);
  for (const Selection& sel : sys.selections) {
    for (int c = 0; c < sys.n; ++c) {
      for (double sign : {1.0, -1.0}) {
        LinearProgram lp = base_lp(sys);
        for (auto& [coord, value] : zero_rows(sys.n, sys.n + sys.m))
          lp.add_row(output_row(sys, sel, coord), RowSense::Eq, value);
        lp.add_row(output_row(sys, sel, c), RowSense::Eq, sign);
        LpResult res = num::solve_lp(lp, lp_tol);
        if (res.status == LpStatus::Optimal) {
          v.outcome = Outcome::Fails;
          v.witness = make_witness(sys, sel, res.x);
          return v;
        }
      }
    }
  }
  return v;
}

CqVerdict decide_ccq(const MultiplierSystem& sys, double lp_tol) {
  CqVerdict v = verdict_of(CqKind::Ccq, Outcome::Holds);
  double modulus = 0.0;
  for (const Selection& sel : sys.selections) {
    auto with_band = [&]() {
      LinearProgram lp = base_lp(sys);
      for (int c = sys.n; c < sys.n + sys.m; ++c) {
        Vec row = output_row(sys, sel, c);
        lp.add_row(row, RowSense::Le, 1.0);
        lp.add_row(row, RowSense::Ge, -1.0);
      }
      return lp;
    };
    // Boundedness of each multiplier component over the |beta| <= 1 section.
    for (int comp = 0; comp < sys.na + sys.s; ++comp) {
      for (double sign : {1.0, -1.0}) {
        if (comp < sys.na && sign < 0) continue;
        LinearProgram lp = with_band();
        lp.maximize = true;
        lp.c[comp] = sign;
        LpResult res = num::solve_lp(lp, lp_tol);
        if (res.status == LpStatus::Unbounded) {
          v.outcome = Outcome::Fails;
          v.modulus = num::kInf;
          v.witness = make_witness(sys, sel, res.ray);
          v.note = "unbounded multiplier section";
          return v;
        }
      }
    }
    // Exact max of |lambda|_1 over the section via sign patterns on varpi.
    if (sys.s <= 8) {
      for (int pattern = 0; pattern < (1 << sys.s); ++pattern) {
        LinearProgram lp = with_band();
        lp.maximize = true;
        for (int k = 0; k < sys.na; ++k) lp.c[sys.lambda_at(k)] = 1.0;
        for (int j = 0; j < sys.s; ++j) {
          double sgn = (pattern >> j) & 1 ? -1.0 : 1.0;
          lp.c[sys.varpi_at(j)] = sgn;
          if (sgn > 0)
            lp.lower[sys.varpi_at(j)] = 0.0;
          else
            lp.upper[sys.varpi_at(j)] = 0.0;
        }
        LpResult res = num::solve_lp(lp, lp_tol);
        if (res.status == LpStatus::Optimal) modulus = std::max(modulus, res.objective);
      }
    } else {
      // Upper bound by summing per-component maxima.
      double bound = 0.0;
      for (int comp = 0; comp < sys.na + sys.s; ++comp) {
        for (double sign : {1.0, -1.0}) {
          if (comp < sys.na && sign < 0) continue;
          LinearProgram lp = with_band();
          lp.maximize = true;
          lp.c[comp] = sign;
          LpResult res = num::solve_lp(lp, lp_tol);
          if (res.status == LpStatus::Optimal) bound += std::max(0.0, res.objective);
        }
      }
      modulus = std::max(modulus, bound);
      v.note = "modulus is an upper bound (sign enumeration skipped for s > 8)";
    }
  }
  v.modulus = modulus;
  return v;
}

CqVerdict decide_plicq(const MultiplierSystem& sys, double lp_tol) {
  CqVerdict v = verdict_of(CqKind::Plicq, Outcome::Holds);
  for (const Selection& sel : sys.selections) {
    std::vector<Vec> signed_vecs, free_vecs;
    for (int k = 0; k < sys.na; ++k) signed_vecs.push_back(sel.cols[sys.lambda_at(k)]);
    for (int k = 0; k < sys.nfl; ++k) signed_vecs.push_back(sel.cols[sys.eta_lower_at(k)]);
    for (int k = 0; k < sys.nfu; ++k) signed_vecs.push_back(sel.cols[sys.eta_upper_at(k)]);
    for (int j = 0; j < sys.s; ++j) free_vecs.push_back(sel.cols[sys.varpi_at(j)]);
    if (signed_vecs.empty() && free_vecs.empty()) continue;
    num::PldResult pld = num::positive_linear_dependence(signed_vecs, free_vecs, lp_tol);
    if (pld.dependent) {
      v.outcome = Outcome::Fails;
      Vec sol(sys.vars(), 0.0);
      for (int k = 0; k < sys.na; ++k) sol[sys.lambda_at(k)] = pld.alpha[k];
      for (int k = 0; k < sys.nfl; ++k) sol[sys.eta_lower_at(k)] = pld.alpha[sys.na + k];
      for (int k = 0; k < sys.nfu; ++k) sol[sys.eta_upper_at(k)] = pld.alpha[sys.na + sys.nfl + k];
      for (int j = 0; j < sys.s; ++j) sol[sys.varpi_at(j)] = pld.beta[j];
      v.witness = make_witness(sys, sel, sol);
      return v;
    }
  }
  return v;
}

}  // namespace

CqVerdict check_pointwise_cq(CqKind kind, const ProblemSpec& ps, const EvalPoint& z,
                             const PointwiseOptions& opts) {
  check_feasible(ps, z, opts.eps_act);
  MultiplierSystem sys = build_system(ps, z, opts.eps_act, opts.tie_tol);
  CqVerdict v;
  switch (kind) {
    case CqKind::Nnamcq: v = decide_nnamcq(sys, opts.lp_tol); break;
    case CqKind::Wbcq: v = decide_wbcq(sys, opts.lp_tol); break;
    case CqKind::Mfc: v = decide_mfc(sys, opts.lp_tol); break;
    case CqKind::Ccq: v = decide_ccq(sys, opts.lp_tol); break;
    case CqKind::Plicq: v = decide_plicq(sys, opts.lp_tol); break;
    default:
      throw NumericError("check_pointwise_cq: not a pointwise kind");
  }
  v.conservative = sys.conservative;
  return v;
}

// ---------------------------------------------------------------------------
// Neighborhood checks.

namespace {

Vec xu_gradient(const expr::ExprAst& e, const EvalPoint& z) {
  Vec full = expr::gradient(e, z).grad;
  return Vec(full.begin() + 1, full.end());
}

EvalPoint shift_point(const EvalPoint& z, const Vec& dxu, int n, int m) {
  EvalPoint w = z;
  for (int i = 0; i < n; ++i) w.x[i] += dxu[i];
  for (int j = 0; j < m; ++j) w.u[j] += dxu[n + j];
  return w;
}

std::vector<EvalPoint> ball_samples(const EvalPoint& z, int n, int m, double radius,
                                    int count, std::uint64_t seed) {
  num::CounterRng rng(seed);
  std::vector<EvalPoint> out;
  const int dim = n + m;
  for (int k = 0; k < count; ++k) {
    Vec dir(dim);
    double norm2 = 0.0;
    for (int c = 0; c < dim; ++c) {
      dir[c] = rng.normal(11 + k, c);
      norm2 += dir[c] * dir[c];
    }
    double norm = std::sqrt(std::max(norm2, 1e-300));
    double scale = radius * std::pow(rng.uniform(12 + k, 0), 1.0 / dim) / norm;
    for (double& c : dir) c *= scale;
    out.push_back(shift_point(z, dir, n, m));
  }
  return out;
}

Vec flat_xu(const EvalPoint& z) {
  Vec v(z.x);
  v.insert(v.end(), z.u.begin(), z.u.end());
  return v;
}

bool linearly_dependent(const std::vector<Vec>& family, double rank_tol) {
  if (family.empty()) return false;
  return num::numeric_rank(Matrix::from_cols(family), rank_tol) < static_cast<int>(family.size());
}

}  // namespace

CqVerdict check_neighborhood_cq(CqKind kind, const ProblemSpec& ps, const EvalPoint& z,
                                const NeighborhoodOptions& opts) {
  if (!ps.smooth_g()) throw NumericError("neighborhood checks require smooth g");
  check_feasible(ps, z, opts.eps_act);
  nonsmooth::ActiveSetInfo act = nonsmooth::active_sets(ps, z, opts.eps_act);
  const int na = static_cast<int>(act.active_g.size());
  if (na + ps.s > 12) throw NumericError("subset enumeration overflow (more than 12 active rows)");

  CqVerdict v = verdict_of(kind, Outcome::HoldsEmpirically);
  v.samples_used = opts.num_samples;

  std::vector<EvalPoint> pts = ball_samples(z, ps.n, ps.m, opts.radius_sample, opts.num_samples, opts.seed);

  auto g_at = [&](const EvalPoint& w, int k) { return xu_gradient(ps.g[act.active_g[k]], w); };
  auto h_at = [&](const EvalPoint& w, int j) { return xu_gradient(ps.h[j], w); };

  auto fail_with = [&](const EvalPoint& w, const std::string& note) {
    v.outcome = Outcome::Fails;
    CqWitness wit;
    wit.sample = flat_xu(w);
    v.witness = wit;
    v.note = note;
    return v;
  };

  if (kind == CqKind::Cpld || kind == CqKind::Rcpld) {
    std::vector<int> basis_h;  // used by RCPLD
    if (kind == CqKind::Rcpld) {
      std::vector<Vec> acc;
      for (int j = 0; j < ps.s; ++j) {
        acc.push_back(h_at(z, j));
        if (num::numeric_rank(Matrix::from_cols(acc), opts.rank_tol) ==
            static_cast<int>(acc.size()))
          basis_h.push_back(j);
        else
          acc.pop_back();
      }
      // Rank constancy of the full equality family.
      std::vector<Vec> full_z;
      for (int j = 0; j < ps.s; ++j) full_z.push_back(h_at(z, j));
      int rank_z = ps.s == 0 ? 0 : num::numeric_rank(Matrix::from_cols(full_z), opts.rank_tol);
      for (const EvalPoint& w : pts) {
        std::vector<Vec> full_w;
        for (int j = 0; j < ps.s; ++j) full_w.push_back(h_at(w, j));
        int rank_w = ps.s == 0 ? 0 : num::numeric_rank(Matrix::from_cols(full_w), opts.rank_tol);
        if (rank_w != rank_z)
          return fail_with(w, "rank of the equality gradients is not constant");
      }
    }

    const int bits = kind == CqKind::Cpld ? na + ps.s : na;
    for (int mask = 1; mask < (1 << bits); ++mask) {
      std::vector<int> gi, hj;
      if (kind == CqKind::Cpld) {
        for (int b = 0; b < na; ++b)
          if (mask & (1 << b)) gi.push_back(b);
        for (int b = 0; b < ps.s; ++b)
          if (mask & (1 << (na + b))) hj.push_back(b);
      } else {
        for (int b = 0; b < na; ++b)
          if (mask & (1 << b)) gi.push_back(b);
        hj = basis_h;
      }
      std::vector<Vec> signed_z, free_z;
      for (int k : gi) signed_z.push_back(g_at(z, k));
      for (int j : hj) free_z.push_back(h_at(z, j));
      if (signed_z.empty() && free_z.empty()) continue;
      if (!num::positive_linear_dependence(signed_z, free_z).dependent) continue;

      for (const EvalPoint& w : pts) {
        std::vector<Vec> fam;
        for (int k : gi) fam.push_back(g_at(w, k));
        for (int j : hj) fam.push_back(h_at(w, j));
        if (!linearly_dependent(fam, opts.rank_tol))
          return fail_with(w, "positively dependent family becomes independent nearby");
      }
    }
    return v;
  }

  if (kind == CqKind::Crsc) {
    num::ConeDescription lin_polar;
    for (int k = 0; k < na; ++k) lin_polar.nonneg_generators.push_back(g_at(z, k));
    for (int j = 0; j < ps.s; ++j) lin_polar.span_basis.push_back(h_at(z, j));
    std::vector<int> j_minus;
    for (int k = 0; k < na; ++k) {
      Vec neg = g_at(z, k);
      for (double& c : neg) c = -c;
      if (num::cone_membership(neg, lin_polar).inside) j_minus.push_back(k);
    }
    std::vector<Vec> fam_z;
    for (int k : j_minus) fam_z.push_back(g_at(z, k));
    for (int j = 0; j < ps.s; ++j) fam_z.push_back(h_at(z, j));
    int rank_z = fam_z.empty() ? 0 : num::numeric_rank(Matrix::from_cols(fam_z), opts.rank_tol);
    for (const EvalPoint& w : pts) {
      std::vector<Vec> fam_w;
      for (int k : j_minus) fam_w.push_back(g_at(w, k));
      for (int j = 0; j < ps.s; ++j) fam_w.push_back(h_at(w, j));
      int rank_w = fam_w.empty() ? 0 : num::numeric_rank(Matrix::from_cols(fam_w), opts.rank_tol);
      if (rank_w != rank_z) return fail_with(w, "rank of the subspace component is not constant");
    }
    return v;
  }

  throw NumericError("check_neighborhood_cq: not a neighborhood kind");
}

// ---------------------------------------------------------------------------

CqVerdict check_structural_calmness(const ProblemSpec& ps) {
  CqVerdict v = verdict_of(CqKind::CalmStructural, Outcome::Holds);
  for (const expr::ExprAst& e : ps.g)
    if (!expr::is_affine(e)) {
      v.outcome = Outcome::Unknown;
      v.note = "unknown-structural: some g is not affine";
      return v;
    }
  for (const expr::ExprAst& e : ps.h)
    if (!expr::is_affine(e)) {
      v.outcome = Outcome::Unknown;
      v.note = "unknown-structural: some h is not affine";
      return v;
    }
  v.note =
      "affine constraints over a box: the perturbed system is a polyhedral "
      "multifunction and hence locally upper Lipschitz, so calmness holds";
  return v;
}

// ---------------------------------------------------------------------------
// Error-bound estimation.

namespace {

// Projected descent on |w - ref|^2 + rho * (sum max(g,0)^2 + sum h^2) with the
// control block clamped to U.  Barzilai-Borwein steps with Armijo backtracking.
Vec penalty_descent(const ProblemSpec& ps, const EvalPoint& ref, Vec w, double rho, int iters) {
  const int n = ps.n, m = ps.m;
  auto clamp_u = [&](Vec& v) {
    for (int j = 0; j < m; ++j)
      v[n + j] = std::min(std::max(v[n + j], ps.U.lower[j]), ps.U.upper[j]);
  };
  auto as_point = [&](const Vec& v) {
    EvalPoint p;
    p.t = ref.t;
    p.x.assign(v.begin(), v.begin() + n);
    p.u.assign(v.begin() + n, v.end());
    return p;
  };
  Vec refxu = flat_xu(ref);
  auto value = [&](const Vec& v) {
    EvalPoint p = as_point(v);
    double val = 0.0;
    for (int c = 0; c < n + m; ++c) val += (v[c] - refxu[c]) * (v[c] - refxu[c]);
    for (int i = 0; i < ps.l; ++i) {
      double gi = std::max(0.0, expr::evaluate(ps.g[i], p));
      val += rho * gi * gi;
    }
    for (int j = 0; j < ps.s; ++j) {
      double hj = expr::evaluate(ps.h[j], p);
      val += rho * hj * hj;
    }
    return val;
  };
  auto grad = [&](const Vec& v) {
    EvalPoint p = as_point(v);
    Vec gr(n + m, 0.0);
    for (int c = 0; c < n + m; ++c) gr[c] = 2.0 * (v[c] - refxu[c]);
    for (int i = 0; i < ps.l; ++i) {
      double gi = expr::evaluate(ps.g[i], p);
      if (gi > 0.0) {
        Vec gg = xu_gradient(ps.g[i], p);
        for (int c = 0; c < n + m; ++c) gr[c] += rho * 2.0 * gi * gg[c];
      }
    }
    for (int j = 0; j < ps.s; ++j) {
      double hj = expr::evaluate(ps.h[j], p);
      Vec gh = xu_gradient(ps.h[j], p);
      for (int c = 0; c < n + m; ++c) gr[c] += rho * 2.0 * hj * gh[c];
    }
    return gr;
  };

  clamp_u(w);
  double fw = value(w);
  Vec gw = grad(w);
  double step = 1.0 / std::max(1.0, num::inf_norm(gw));
  Vec w_prev, g_prev;
  for (int it = 0; it < iters; ++it) {
    if (it > 0) {
      Vec sv(n + m), yv(n + m);
      double sy = 0.0, ss = 0.0;
      for (int c = 0; c < n + m; ++c) {
        sv[c] = w[c] - w_prev[c];
        yv[c] = gw[c] - g_prev[c];
        sy += sv[c] * yv[c];
        ss += sv[c] * sv[c];
      }
      step = sy > 1e-16 ? ss / sy : step * 2.0;
      step = std::min(std::max(step, 1e-12), 1e8);
    }
    Vec cand(n + m);
    double fc = 0.0;
    double trial = step;
    bool accepted = false;
    for (int bt = 0; bt < 30; ++bt) {
      for (int c = 0; c < n + m; ++c) cand[c] = w[c] - trial * gw[c];
      clamp_u(cand);
      fc = value(cand);
      if (fc <= fw - 1e-10 * trial * num::dot(gw, gw) || fc < fw) {
        accepted = true;
        break;
      }
      trial *= 0.5;
    }
    if (!accepted) break;
    w_prev = w;
    g_prev = gw;
    w = cand;
    fw = fc;
    gw = grad(w);
    double move = 0.0;
    for (int c = 0; c < n + m; ++c) move = std::max(move, std::abs(w[c] - w_prev[c]));
    if (move < 1e-14) break;
  }
  return w;
}

// Gauss-Newton restoration onto {g <= 0, h = 0, u in U}: least-squares steps
// on the violated rows.  Quadratic penalties stall at residual ~ dist/rho, so
// this runs after them to reach tight feasibility without moving far.
Vec restore_feasibility(const ProblemSpec& ps, const EvalPoint& t_ref, Vec w, double target,
                        int iters) {
  const int n = ps.n, m = ps.m;
  for (int it = 0; it < iters; ++it) {
    EvalPoint p;
    p.t = t_ref.t;
    p.x.assign(w.begin(), w.begin() + n);
    p.u = ps.U.clamp(Vec(w.begin() + n, w.end()));
    for (int j = 0; j < m; ++j) w[n + j] = p.u[j];
    std::vector<Vec> rows;
    Vec rhs;
    for (int i = 0; i < ps.l; ++i) {
      double gi = expr::evaluate(ps.g[i], p);
      if (gi > 0.0) {
        rows.push_back(xu_gradient(ps.g[i], p));
        rhs.push_back(gi);
      }
    }
    for (int j = 0; j < ps.s; ++j) {
      double hj = expr::evaluate(ps.h[j], p);
      if (hj != 0.0) {
        rows.push_back(xu_gradient(ps.h[j], p));
        rhs.push_back(hj);
      }
    }
    if (rows.empty() || model::feasibility_residual(ps, p) <= target) break;
    Vec step = num::QrPivoted(Matrix::from_rows(rows)).solve(rhs, 1e-10);
    double slen = num::inf_norm(step);
    if (slen < 1e-16) break;
    for (int c = 0; c < n + m; ++c) w[c] -= step[c];
  }
  return w;
}

// Distance from z to M(0) by multi-start projected minimization; fine-grid
// seeding when n+m <= 3.
std::optional<double> distance_to_feasible(const ProblemSpec& ps, const EvalPoint& z,
                                           double radius, double feas_tol, std::uint64_t seed) {
  const int n = ps.n, m = ps.m;
  Vec zref = flat_xu(z);
  std::vector<Vec> starts;
  starts.push_back(zref);
  num::CounterRng rng(seed);
  for (int k = 0; k < 12; ++k) {
    Vec s(zref);
    double scale = radius * (1 << (k % 4));
    for (int c = 0; c < n + m; ++c) s[c] += scale * rng.normal(31 + k, c);
    starts.push_back(s);
  }
  if (n + m <= 3) {
    double half = std::max(8.0 * radius, 0.25);
    const int pts = 9;
    std::vector<Vec> grid_best;
    std::vector<double> grid_val;
    std::vector<int> idx(n + m, 0);
    for (;;) {
      Vec w(zref);
      for (int c = 0; c < n + m; ++c)
        w[c] += -half + 2.0 * half * idx[c] / (pts - 1);
      // keep candidates cheap: score with a strong fixed penalty
      EvalPoint p;
      p.t = z.t;
      p.x.assign(w.begin(), w.begin() + n);
      p.u.assign(w.begin() + n, w.end());
      p.u = ps.U.clamp(p.u);
      for (int j = 0; j < m; ++j) w[n + j] = p.u[j];
      double score = 0.0;
      for (int c = 0; c < n + m; ++c) score += (w[c] - zref[c]) * (w[c] - zref[c]);
      double viol = model::feasibility_residual(ps, p);
      score += 1e4 * viol * viol;
      grid_best.push_back(w);
      grid_val.push_back(score);
      int c = 0;
      while (c < n + m && ++idx[c] == pts) idx[c++] = 0;
      if (c == n + m) break;
    }
    std::vector<int> order(grid_best.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::partial_sort(order.begin(), order.begin() + std::min<std::size_t>(6, order.size()),
                      order.end(), [&](int a, int b) { return grid_val[a] < grid_val[b]; });
    for (int k = 0; k < std::min<int>(6, static_cast<int>(order.size())); ++k)
      starts.push_back(grid_best[order[k]]);
  }

  std::optional<double> best;
  for (const Vec& start : starts) {
    Vec w = start;
    for (double rho : {1e2, 1e4, 1e6, 1e8}) w = penalty_descent(ps, z, w, rho, 150);
    w = restore_feasibility(ps, z, w, 0.5 * feas_tol, 100);
    EvalPoint p;
    p.t = z.t;
    p.x.assign(w.begin(), w.begin() + n);
    p.u.assign(w.begin() + n, w.end());
    if (model::feasibility_residual(ps, p) <= feas_tol) {
      double d = 0.0;
      for (int c = 0; c < n + m; ++c) d += (w[c] - zref[c]) * (w[c] - zref[c]);
      d = std::sqrt(d);
      if (!best || d < *best) best = d;
    }
  }
  return best;
}

}  // namespace

CqVerdict estimate_error_bound(const ProblemSpec& ps, const EvalPoint& z,
                               const ErrorBoundOptions& opts) {
  check_feasible(ps, z, 1e-6);
  CqVerdict v = verdict_of(CqKind::ErrorBoundEst, Outcome::Unknown);
  const int total = 2 * opts.num_samples;
  v.samples_used = total;

  num::CounterRng rng(opts.seed);
  int failures = 0;
  double mu_half = 0.0, mu_full = 0.0;
  for (int k = 0; k < total; ++k) {
    // Radii shrink along the sample index, so doubling the count probes the
    // local quantifier at deeper scales instead of rolling more dice at one
    // scale.  The second half descends twice as far.
    double scale = opts.radius_sample *
                   std::pow(2.0, -6.0 * static_cast<double>(k) / opts.num_samples);
    EvalPoint zp = z;
    for (int i = 0; i < ps.n; ++i) zp.x[i] += scale * rng.normal(3, k * 16 + i);
    for (int j = 0; j < ps.m; ++j) zp.u[j] += scale * rng.normal(4, k * 16 + j);
    zp.u = ps.U.clamp(zp.u);  // samples keep u in U
    double resid = model::feasibility_residual(ps, zp);
    if (resid <= 1e-12) continue;
    double accept = std::max(1e-12, std::min(opts.feas_tol, 0.05 * resid));
    auto dist = distance_to_feasible(ps, zp, scale, accept, opts.seed * 977 + k);
    if (!dist) {
      ++failures;
      continue;
    }
    double ratio = *dist / resid;
    if (k < opts.num_samples) mu_half = std::max(mu_half, ratio);
    mu_full = std::max(mu_full, ratio);
  }
  v.modulus = mu_full;
  if (failures > 0) v.note = std::to_string(failures) + " projection failures excluded";
  if (mu_full <= 0.0) {
    // Every sampled point stayed feasible; nothing to certify but nothing to refute.
    v.outcome = Outcome::HoldsEmpirically;
    v.note = "no infeasible samples at this radius";
    return v;
  }
  if (mu_half > 0.0 && mu_full <= 1.2 * mu_half)
    v.outcome = Outcome::HoldsEmpirically;
  else {
    v.outcome = Outcome::Unknown;
    v.note = v.note.empty() ? "ratio not stable under sample doubling (no-error-bound signal)"
                            : v.note + "; ratio not stable under sample doubling";
  }
  return v;
}

CqVerdict check_global_eb_structure(const ProblemSpec& ps) {
  if (ps.s != 0) throw NumericError("global error-bound structure requires an inequality-only system");
  CqVerdict v = verdict_of(CqKind::GlobalEbStructural, Outcome::Fails);
  const int dim = 1 + ps.n + ps.m;

  std::vector<Vec> linear;
  std::vector<expr::ExprAst> remainders;
  for (int i = 0; i < ps.l; ++i) {
    expr::AffineSplit sp = expr::affine_split(ps.g[i]);
    if (sp.remainder.valid() && !expr::is_smooth(sp.remainder)) {
      v.outcome = Outcome::Unknown;
      v.note = "decomposition failure: nonsmooth remainder in g[" + std::to_string(i) + "]";
      return v;
    }
    if (sp.linear[0] != 0.0 || (sp.remainder.valid() && expr::depends_on_time(sp.remainder))) {
      v.outcome = Outcome::Unknown;
      v.note = "decomposition failure: g[" + std::to_string(i) + "] depends on t";
      return v;
    }
    linear.push_back(sp.linear);
    remainders.push_back(sp.remainder);
  }

  for (int c = 1; c < dim; ++c) {
    bool ok = ps.l > 0;
    double sign = 0.0;
    for (int i = 0; i < ps.l && ok; ++i) {
      double b = linear[i][c];
      if (b == 0.0) {
        ok = false;
        break;
      }
      if (sign == 0.0) sign = b > 0 ? 1.0 : -1.0;
      if (b * sign <= 0.0) ok = false;
      if (ok && remainders[i].valid()) {
        bool dep = c <= ps.n ? expr::depends_on_state(remainders[i], c - 1)
                             : expr::depends_on_control(remainders[i], c - 1 - ps.n);
        if (dep) ok = false;
      }
    }
    if (ok) {
      v.outcome = Outcome::Holds;
      std::string name = c <= ps.n ? "x" + std::to_string(c) : "u" + std::to_string(c - ps.n);
      v.note = "monotone coordinate " + name + " enters every g_i linearly with one sign";
      if (!ps.U.unconstrained())
        v.note += "; claim concerns the inequality system without the control box";
      return v;
    }
  }
  v.note = "no coordinate has one-signed linear entry absent from the nonlinear parts";
  return v;
}

// ---------------------------------------------------------------------------
// Implication-chain audit.

namespace {

std::string lattice_poly(num::CounterRng& rng, std::uint64_t stream, int n, int m, bool zero_const) {
  std::ostringstream text;
  std::uint64_t ctr = 0;
  auto coin = [&](std::uint64_t den) { return rng.index(stream, ctr++, den); };

  if (zero_const)
    text << "0";
  else
    text << (coin(2) == 0 ? "0" : "-1");

  std::vector<std::string> vars;
  for (int i = 1; i <= n; ++i) vars.push_back("x" + std::to_string(i));
  for (int j = 1; j <= m; ++j) vars.push_back("u" + std::to_string(j));

  for (const std::string& v1 : vars) {
    int c = static_cast<int>(coin(5)) - 2;  // -2..2
    if (c != 0) text << " + " << c << "*" << v1;
  }
  for (std::size_t a = 0; a < vars.size(); ++a)
    for (std::size_t b = a; b < vars.size(); ++b) {
      if (coin(3) != 0) continue;
      int c = static_cast<int>(coin(3)) - 1;  // -1..1
      if (c != 0) text << " + " << c << "*" << vars[a] << "*" << vars[b];
    }
  return text.str();
}

ProblemSpec random_instance(std::uint64_t seed, int inst) {
  num::CounterRng rng(seed);
  std::uint64_t b = static_cast<std::uint64_t>(inst) * 131;
  int n = 1 + static_cast<int>(rng.index(b + 1, 0, 3));
  int m = 1 + static_cast<int>(rng.index(b + 2, 0, 3));
  int l = static_cast<int>(rng.index(b + 3, 0, 4));
  int s = static_cast<int>(rng.index(b + 4, 0, 4));
  if (l + s == 0) l = 1;

  json j;
  j["n"] = n;
  j["m"] = m;
  j["l"] = l;
  j["s"] = s;
  j["t0"] = 0.0;
  j["t1"] = 1.0;
  j["F"] = "0";
  j["f"] = "0";
  j["phi"] = json::array();
  for (int i = 0; i < n; ++i) j["phi"].push_back("0");
  j["g"] = json::array();
  for (int i = 0; i < l; ++i) j["g"].push_back(lattice_poly(rng, b + 10 + i, n, m, false));
  j["h"] = json::array();
  for (int i = 0; i < s; ++i) j["h"].push_back(lattice_poly(rng, b + 40 + i, n, m, true));
  j["U"] = {{"lower", json::array()}, {"upper", json::array()}};
  for (int jx = 0; jx < m; ++jx) {
    j["U"]["lower"].push_back("-inf");
    j["U"]["upper"].push_back("inf");
  }
  j["E"] = {{"x0", json::array()}, {"x1", json::array()}};
  for (int i = 0; i < n; ++i) {
    j["E"]["x0"].push_back("free");
    j["E"]["x1"].push_back("free");
  }
  j["R"] = "inf";
  return model::load_problem(j.dump());
}

}  // namespace

AuditReport audit_implication_chain(std::uint64_t seed, int count) {
  AuditReport report;
  report.seed = seed;
  report.count = count;

  for (int inst = 0; inst < count; ++inst) {
    ProblemSpec ps = random_instance(seed, inst);
    EvalPoint z;
    z.x.assign(ps.n, 0.0);
    z.u.assign(ps.m, 0.0);

    PointwiseOptions popts;
    NeighborhoodOptions nopts;
    nopts.seed = seed * 1315423911ULL + static_cast<std::uint64_t>(inst);

    bool nnamcq = check_pointwise_cq(CqKind::Nnamcq, ps, z, popts).holds();
    bool wbcq = check_pointwise_cq(CqKind::Wbcq, ps, z, popts).holds();
    bool mfc = check_pointwise_cq(CqKind::Mfc, ps, z, popts).holds();
    CqVerdict ccq = check_pointwise_cq(CqKind::Ccq, ps, z, popts);
    bool plicq = check_pointwise_cq(CqKind::Plicq, ps, z, popts).holds();
    bool cpld = check_neighborhood_cq(CqKind::Cpld, ps, z, nopts).holds();
    bool rcpld = check_neighborhood_cq(CqKind::Rcpld, ps, z, nopts).holds();
    bool crsc = check_neighborhood_cq(CqKind::Crsc, ps, z, nopts).holds();

    auto flag = [&](const std::string& rule, const std::string& detail) {
      report.violations.push_back({rule, model::problem_to_json(ps), detail});
    };

    if (plicq && !cpld) flag("PLICQ=>CPLD", "PLICQ holds but CPLD fails");
    if (cpld && !rcpld) flag("CPLD=>RCPLD", "CPLD holds but RCPLD fails");
    if (rcpld && !crsc) flag("RCPLD=>CRSC", "RCPLD holds but CRSC fails");
    if ((wbcq && nnamcq) != mfc)
      flag("(WBCQ&NNAMCQ)<=>MFC", std::string("WBCQ=") + (wbcq ? "T" : "F") +
                                      " NNAMCQ=" + (nnamcq ? "T" : "F") +
                                      " MFC=" + (mfc ? "T" : "F"));
    if (ccq.holds() && !mfc) flag("CCQ=>MFC", "CCQ holds but MFC fails");
    if (mfc && !(ccq.holds() && ccq.modulus && std::isfinite(*ccq.modulus)))
      flag("MFC=>CCQ-finite", "MFC holds but CCQ modulus is not finite");
  }
  return report;
}

std::string audit_to_json(const AuditReport& report) {
  json j;
  j["seed"] = report.seed;
  j["count"] = report.count;
  j["violations"] = json::array();
  for (const AuditViolation& viol : report.violations) {
    json v;
    v["rule"] = viol.rule;
    v["detail"] = viol.detail;
    v["instance"] = json::parse(viol.instance);
    j["violations"].push_back(v);
  }
  j["violation_count"] = report.violations.size();
  return j.dump(2);
}

}  // namespace mixedcq::cq
