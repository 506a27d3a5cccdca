#include "mixedcq/nonsmooth.hpp"

#include <cmath>

#include "mixedcq/errors.hpp"

namespace mixedcq::nonsmooth {

ActiveSetInfo active_sets(const model::ProblemSpec& ps, const EvalPoint& z, double eps_act) {
  ActiveSetInfo info;
  info.eps_act = eps_act;
  for (int i = 0; i < ps.l; ++i)
    if (expr::evaluate(ps.g[i], z) >= -eps_act) info.active_g.push_back(i);
  for (int j = 0; j < ps.m; ++j) {
    if (std::isfinite(ps.U.lower[j]) && z.u[j] <= ps.U.lower[j] + eps_act)
      info.lower_faces.push_back(j);
    if (std::isfinite(ps.U.upper[j]) && z.u[j] >= ps.U.upper[j] - eps_act)
      info.upper_faces.push_back(j);
  }
  return info;
}

ConeDescription normal_cone_box(const model::Box& U, const Vec& u, double eps_act) {
  const int m = U.dim();
  if (!U.inside(u, eps_act)) throw NumericError("point lies outside the box beyond tolerance");
  ConeDescription cone;
  for (int j = 0; j < m; ++j) {
    if (std::isfinite(U.lower[j]) && u[j] <= U.lower[j] + eps_act) {
      Vec gen(m, 0.0);
      gen[j] = -1.0;
      cone.nonneg_generators.push_back(gen);
    }
    if (std::isfinite(U.upper[j]) && u[j] >= U.upper[j] - eps_act) {
      Vec gen(m, 0.0);
      gen[j] = 1.0;
      cone.nonneg_generators.push_back(gen);
    }
  }
  return cone;
}

ConeDescription normal_cone_omega(int l, int s, const Vec& gvals, const Vec& hvals, double eps_act) {
  for (int i = 0; i < l; ++i)
    if (gvals[i] > eps_act) throw NumericError("inequality infeasible beyond tolerance");
  for (int j = 0; j < s; ++j)
    if (std::abs(hvals[j]) > eps_act) throw NumericError("equality infeasible beyond tolerance");
  ConeDescription cone;
  for (int i = 0; i < l; ++i) {
    if (gvals[i] >= -eps_act) {
      Vec gen(l + s, 0.0);
      gen[i] = 1.0;
      cone.nonneg_generators.push_back(gen);
    }
  }
  for (int j = 0; j < s; ++j) {
    Vec b(l + s, 0.0);
    b[l + j] = 1.0;
    cone.span_basis.push_back(b);
  }
  return cone;
}

expr::GeneratorSet weighted_subdiff_generators(const std::vector<ExprAst>& Phi,
                                               const EvalPoint& z, const Vec& lambda,
                                               double tie_tol) {
  const int dim = Phi.empty() ? 0 : Phi[0].dims.n + Phi[0].dims.m;
  expr::GeneratorSet out;
  out.gradients = {Vec(dim, 0.0)};
  out.exact = true;

  bool lambda_nonneg = true;
  for (double v : lambda) lambda_nonneg = lambda_nonneg && v >= 0.0;
  bool all_singleton = true;

  constexpr std::size_t kCap = 256;
  for (std::size_t i = 0; i < Phi.size(); ++i) {
    if (lambda[i] == 0.0) continue;
    expr::GeneratorSet gi = expr::clarke_generators(Phi[i], z, tie_tol);
    out.exact = out.exact && gi.exact;
    all_singleton = all_singleton && gi.gradients.size() == 1;

    std::vector<Vec> next;
    next.reserve(out.gradients.size() * gi.gradients.size());
    for (const Vec& base : out.gradients) {
      for (const Vec& gen : gi.gradients) {
        Vec sum(base);
        for (int k = 0; k < dim; ++k) sum[k] += lambda[i] * gen[k];
        next.push_back(std::move(sum));
        if (next.size() > kCap) break;
      }
      if (next.size() > kCap) break;
    }
    if (next.size() > kCap) {
      // Collapse to the hull midpoint contribution and flag the loss.
      Vec mid(dim, 0.0);
      for (const Vec& gen : gi.gradients)
        for (int k = 0; k < dim; ++k) mid[k] += gen[k] / static_cast<double>(gi.gradients.size());
      next.clear();
      for (const Vec& base : out.gradients) {
        Vec sum(base);
        for (int k = 0; k < dim; ++k) sum[k] += lambda[i] * mid[k];
        next.push_back(std::move(sum));
      }
      out.exact = false;
    }
    out.gradients = std::move(next);
  }

  // Dedupe near-identical generators.
  std::vector<Vec> unique;
  for (Vec& gv : out.gradients) {
    bool dup = false;
    for (const Vec& seen : unique) {
      double diff = 0.0;
      for (int k = 0; k < dim; ++k) diff = std::max(diff, std::abs(seen[k] - gv[k]));
      if (diff <= 1e-12) {
        dup = true;
        break;
      }
    }
    if (!dup) unique.push_back(std::move(gv));
  }
  out.gradients = std::move(unique);
  if (!lambda_nonneg && !all_singleton) out.exact = false;
  return out;
}

}  // namespace mixedcq::nonsmooth
