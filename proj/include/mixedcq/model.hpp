#pragma once

#include <string>
#include <vector>

#include "mixedcq/expr.hpp"

namespace mixedcq::model {

using expr::EvalPoint;
using expr::ExprAst;
using num::Vec;

// Control box; entries may be +/-infinity.
struct Box {
  Vec lower, upper;

  int dim() const { return static_cast<int>(lower.size()); }
  bool unconstrained() const;
  bool inside(const Vec& u, double tol) const;
  double distance(const Vec& u) const;  // Euclidean distance to the box
  Vec clamp(const Vec& u) const;
};

struct EndpointMark {
  bool fixed = false;
  double value = 0.0;
};

struct Radius {
  bool infinite = true;
  double value = 0.0;  // when finite, > 0

  double at_scale() const { return infinite ? num::kInf : value; }
};

// Data for the control problem: dynamics phi, running cost F, endpoint cost
// f over (x(t0), x(t1)), mixed constraints g <= 0 and h = 0, control box U,
// per-coordinate fixed/free endpoint marks, and the radius R.
struct ProblemSpec {
  int n = 0, m = 0, l = 0, s = 0;
  double t0 = 0.0, t1 = 1.0;
  ExprAst F;                    // dims (n, m)
  ExprAst f;                    // dims (2n, 0): x1..xn initial, x(n+1)..x(2n) final
  std::vector<ExprAst> phi;     // n entries, dims (n, m)
  std::vector<ExprAst> g;       // l entries
  std::vector<ExprAst> h;       // s entries, smooth
  Box U;
  std::vector<EndpointMark> e0, e1;  // n entries each
  Radius R;

  bool smooth_g() const;
  bool smooth_phi() const;
  bool every_final_coordinate_free() const;
};

// Piecewise-constant control on [grid_k, grid_{k+1}), continuous piecewise-
// linear state.
struct Trajectory {
  Vec grid;                 // N+1 strictly increasing times
  std::vector<Vec> x;       // N+1 states
  std::vector<Vec> u;       // N controls

  int segments() const { return static_cast<int>(u.size()); }
};

struct MultiplierArc {
  double lambda0 = 1.0;        // in {0, 1}
  std::vector<Vec> p;          // N+1 adjoint samples
  std::vector<Vec> lam;        // N inequality multipliers, >= 0
  std::vector<Vec> varpi;      // N equality multipliers
  Vec xi0, xi1;                // endpoint-cone multipliers, 0 at free coords
};

ProblemSpec load_problem(const std::string& json_text);
ProblemSpec load_problem_file(const std::string& path);
std::string problem_to_json(const ProblemSpec& ps);

Trajectory load_trajectory(const std::string& json_text, const ProblemSpec& ps);
Trajectory load_trajectory_file(const std::string& path, const ProblemSpec& ps);
std::string trajectory_to_json(const Trajectory& traj);

std::string multipliers_to_json(const MultiplierArc& arc);

void validate_trajectory(const ProblemSpec& ps, const Trajectory& traj);

// max(g_1,...,g_l,0) + |h|_2 + dist(u, U).
double feasibility_residual(const ProblemSpec& ps, const EvalPoint& z);

EvalPoint node_point(const ProblemSpec& ps, const Trajectory& traj, int k);

}  // namespace mixedcq::model
