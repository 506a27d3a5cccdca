#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixedcq/cq.hpp"
#include "mixedcq/model.hpp"
#include "mixedcq/setmap.hpp"

namespace mixedcq::verify {

using expr::EvalPoint;
using model::MultiplierArc;
using model::ProblemSpec;
using model::Trajectory;
using num::Vec;

struct VerifyOptions {
  double eps_act = -1.0;        // < 0: use max(1e-6, 10h)
  double traj_tol = 1e-2;       // gate for trajectory-dependent residuals
  double algebraic_tol = 1e-8;  // gate for by-construction identities
  double weier_tol = -1.0;      // < 0: use max(1e-6, 10h)
  double control_window = 10.0; // half-width of the Weierstrass search window
  int control_grid = 201;       // grid points per control axis (m <= 3)
  int control_random = 256;     // extra random samples when m > 3
  double w_feas_tol = 1e-9;     // exact-feasibility filter for sampled controls
  int cq_stride = 0;            // 0: automatic (about 8 checkpoints)
  double jump_tol = -1.0;  // < 0: 5x median control step
  std::uint64_t seed = 1;
};

struct Residuals {
  double euler_x = 0.0;        // max_k inf-norm defect of the x-row
  double euler_u = 0.0;        // same for the u-row
  double transversality = 0.0;
  double comp_slack = 0.0;     // max |lambda_i g_i|
  double nonneg = 0.0;         // min lambda entry
  double nontriviality = 0.0;  // max(lambda0, max_k |p_k|_inf)
};

struct Reconstruction {
  MultiplierArc arc;
  Residuals residuals;
};

// Explicit-multiplier discrete adjoint: the x-row recursion is satisfied
// exactly, per-node nonnegative least squares picks (lambda, varpi, box
// normals), and fixed-endpoint adjoint values are resolved by Gauss-Newton
// shooting.  Convention: p_{k+1} multiplies the Jacobians at node k.
Reconstruction reconstruct_multipliers(const ProblemSpec& ps, const Trajectory& traj,
                                       double lambda0, const VerifyOptions& opts = {});

struct WeierstrassReport {
  double worst_margin = 0.0;
  double witness_t = 0.0;
  Vec witness_u;
  int samples_used = 0;
};

WeierstrassReport check_weierstrass(const ProblemSpec& ps, const Trajectory& traj,
                                    const MultiplierArc& arc, const setmap::RadiusProfile& radius,
                                    const VerifyOptions& opts = {});

struct Clause {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct NcCertificate {
  bool pass = false;
  double lambda0 = 1.0;
  MultiplierArc arc;
  Residuals residuals;
  WeierstrassReport weierstrass;
  std::vector<Clause> clauses;
  std::vector<std::string> failing;
  std::vector<cq::CqVerdict> cq_along_trajectory;
  std::string note;
};

// Runs lambda0 = 1 first; retries the abnormal branch only when some final
// coordinate is pinned (free right endpoints force lambda0 = 1).
NcCertificate certify(const ProblemSpec& ps, const Trajectory& traj,
                      const setmap::RadiusProfile& radius, const VerifyOptions& opts = {});

std::string certificate_to_json(const NcCertificate& cert);

}  // namespace mixedcq::verify
