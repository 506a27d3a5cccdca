#pragma once

#include <cstdint>
#include <optional>
#include <utility>

#include "mixedcq/model.hpp"

namespace mixedcq::ocp {

using model::ProblemSpec;
using model::Trajectory;
using num::Vec;

// Forward-Euler transcription on a uniform grid.  Decision vector layout:
// z = [x_0 .. x_N | u_0 .. u_{N-1}], states first, both in node-major order.
// The objective is the forward-Euler (rectangle) quadrature of F plus the
// endpoint cost, so the verifier's discrete adjoint is exact for it.
struct DiscretizedNlp {
  ProblemSpec ps;
  int N = 0;
  double h = 0.0;

  int x_at(int k, int i) const { return k * ps.n + i; }
  int u_at(int k, int j) const { return (N + 1) * ps.n + k * ps.m + j; }
  int num_vars() const { return (N + 1) * ps.n + N * ps.m; }

  int defect_count() const { return N * ps.n; }
  int node_eq_count() const { return N * ps.s; }
  int endpoint_eq_count() const;
  int eq_count() const { return defect_count() + node_eq_count() + endpoint_eq_count(); }
  int ineq_count() const { return N * ps.l; }

  double objective(const Vec& z) const;
  Vec objective_grad(const Vec& z) const;
  Vec eq_residuals(const Vec& z) const;    // defects, then node equalities, then endpoints
  Vec ineq_residuals(const Vec& z) const;  // g per node

  Trajectory to_trajectory(const Vec& z) const;
  Vec from_trajectory(const Trajectory& traj) const;
  Vec zeros() const;
};

DiscretizedNlp transcribe(const ProblemSpec& ps, int N);

struct SolveOptions {
  double tol = 1e-6;
  int max_outer = 12;
  double penalty_init = 10.0;
  double penalty_growth = 10.0;
  int max_inner = 4000;
  std::uint64_t seed = 0;  // reserved; the default path is deterministic without it
};

struct SolveReport {
  bool converged = false;
  bool best_effort = false;
  double max_violation = 0.0;
  double proj_grad_norm = 0.0;
  double objective = 0.0;
  int outer_iterations = 0;
  int inner_iterations = 0;
};

// Augmented Lagrangian with a box-projected spectral-step gradient inner loop.
std::pair<Trajectory, SolveReport> solve_al(const DiscretizedNlp& nlp,
                                            const std::optional<Trajectory>& start,
                                            const SolveOptions& opts = {});

}  // namespace mixedcq::ocp
