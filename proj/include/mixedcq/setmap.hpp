#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixedcq/cq.hpp"
#include "mixedcq/model.hpp"

namespace mixedcq::setmap {

using expr::EvalPoint;
using num::Vec;

// Per-node radius values R_k in (0, inf].
struct RadiusProfile {
  std::vector<double> values;
  bool infinite = true;

  static RadiusProfile from_problem(const model::ProblemSpec& ps, int nodes);
  double at(int k) const { return infinite ? num::kInf : values[k]; }
};

// Pseudo-Lipschitz certificate for Gamma(x) = {phi(x,u) : u in U, g <= 0,
// h = 0}: WBCQ plus calmness (structural, or an empirically stable error
// bound).
struct GammaPlCertificate {
  bool certified = false;
  cq::CqVerdict wbcq;
  cq::CqVerdict calmness;      // structural verdict
  std::optional<cq::CqVerdict> error_bound;  // consulted when structure is unknown
  std::string note;
};

GammaPlCertificate certify_gamma_pl(const model::ProblemSpec& ps, const EvalPoint& z,
                                    const cq::PointwiseOptions& popts = {},
                                    const cq::ErrorBoundOptions& ebopts = {});

struct SampleOptions {
  int samples = 24;          // sampled points / pairs
  double u_window = 4.0;     // half-width of the control search window on unbounded axes
  std::uint64_t seed = 1;
  double feas_tol = 1e-9;
};

struct PlModulusResult {
  double k_hat = 0.0;
  int pairs_sampled = 0;
  int velocities_sampled = 0;
  bool gamma_empty = false;        // some Gamma(x) had no velocity inside B(v_center, R)
  Vec empty_at_x;
  Vec attain_x, attain_xp, attain_v;  // the pair realizing k_hat
};

// Worst ratio dist(v, Gamma(x')) / |x - x'| over x, x' in B(x_center, eps)
// and v in Gamma(x) intersected with B(v_center, R).
PlModulusResult estimate_pl_modulus(const model::ProblemSpec& ps, const Vec& x_center,
                                    const Vec& v_center, double eps, double radius,
                                    const SampleOptions& opts = {});

struct BoundedSlopeResult {
  double k_hat = 0.0;              // inf when the slope LP is unbounded somewhere
  double margin = 0.0;             // min_k R_k / k_hat
  bool bounded = true;
  int samples_used = 0;
  Vec witness_xu;                  // sample where the LP became unbounded
  double witness_t = 0.0;
};

// Multiplier form of the proximal-normal slope bound |alpha| <= k |beta|
// along the trajectory tube.
BoundedSlopeResult estimate_bounded_slope(const model::ProblemSpec& ps,
                                          const model::Trajectory& traj, double eps,
                                          const RadiusProfile& radius,
                                          const SampleOptions& opts = {});

struct TemperedGrowthResult {
  bool holds = false;
  double r0_attained = 0.0;        // largest velocity gap seen on satisfied samples
  double min_margin = 0.0;         // min over samples of lambda*R - gap
  int samples_used = 0;
  bool witness_present = false;
  double witness_t = 0.0;
  Vec witness_x;
};

TemperedGrowthResult check_tempered_growth(const model::ProblemSpec& ps,
                                           const model::Trajectory& traj, double eps,
                                           const RadiusProfile& radius, double lambda_frac,
                                           const SampleOptions& opts = {});

struct ClusterPoint {
  double t = 0.0;
  Vec x;
  Vec v;
};

// Velocity cluster points of the candidate: single at continuity nodes, left
// and right limits at control jumps.
std::vector<ClusterPoint> enumerate_cluster_points(const model::ProblemSpec& ps,
                                                   const model::Trajectory& traj,
                                                   double jump_tol);

// max(1e-6, 5x the median consecutive control step): O(h) wiggle of a
// discretized continuous control stays below it, genuine switches exceed it.
double default_jump_tol(const model::Trajectory& traj);

}  // namespace mixedcq::setmap
