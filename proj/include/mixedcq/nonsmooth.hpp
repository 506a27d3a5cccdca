#pragma once

#include <vector>

#include "mixedcq/expr.hpp"
#include "mixedcq/model.hpp"
#include "mixedcq/numkernel.hpp"

namespace mixedcq::nonsmooth {

using expr::EvalPoint;
using expr::ExprAst;
using num::ConeDescription;
using num::Vec;

// Active structure of the mixed system at a point.  For boxes, a coordinate
// can be active at both faces only when the box pins it (lower == upper).
struct ActiveSetInfo {
  std::vector<int> active_g;     // {i : g_i(z) >= -eps_act}
  std::vector<int> lower_faces;  // control coordinates at the lower bound
  std::vector<int> upper_faces;
  double eps_act = 1e-6;
};

ActiveSetInfo active_sets(const model::ProblemSpec& ps, const EvalPoint& z, double eps_act);

// Limiting (= Clarke) normal cone to a box at u: generators -e_j on active
// lower faces, +e_j on active upper faces.
ConeDescription normal_cone_box(const model::Box& U, const Vec& u, double eps_act);

// Normal cone to Omega = R^l_- x {0} at (g(z), h(z)): generators +e_i on
// active inequalities, span on every equality slot.
ConeDescription normal_cone_omega(int l, int s, const Vec& gvals, const Vec& hvals, double eps_act);

// Minkowski sum of lambda_i * clarke(Phi_i); vectors live in R^{n+m}.
expr::GeneratorSet weighted_subdiff_generators(const std::vector<ExprAst>& Phi,
                                               const EvalPoint& z, const Vec& lambda,
                                               double tie_tol = 1e-9);

}  // namespace mixedcq::nonsmooth
