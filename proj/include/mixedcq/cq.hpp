#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mixedcq/model.hpp"
#include "mixedcq/nonsmooth.hpp"

namespace mixedcq::cq {

using expr::EvalPoint;
using num::Vec;

enum class CqKind {
  Nnamcq, Wbcq, Mfc, Ccq, Plicq,            // pointwise, LP-decided
  Cpld, Rcpld, Crsc,                        // neighborhood, sampling-based
  CalmStructural, ErrorBoundEst, GlobalEbStructural,
};

const char* kind_name(CqKind kind);

enum class Outcome { Holds, Fails, HoldsEmpirically, Unknown };

struct CqWitness {
  Vec alpha;                   // x-row output (length n)
  Vec lambda_g;                // length l, zero on inactive indices
  Vec varpi;                   // length s
  Vec eta_lower, eta_upper;    // box-face coefficients (length m)
  Vec sample;                  // violating sample (x,u) for neighborhood kinds
};

struct CqVerdict {
  CqKind kind;
  Outcome outcome = Outcome::Unknown;
  std::optional<double> modulus;      // CCQ calibration or error-bound estimate
  std::optional<CqWitness> witness;
  bool conservative = false;          // a nonsmooth overapproximation was used
  int samples_used = 0;
  std::string note;

  bool holds() const { return outcome == Outcome::Holds || outcome == Outcome::HoldsEmpirically; }
};

std::string verdict_to_json(const CqVerdict& v);

struct PointwiseOptions {
  double eps_act = 1e-6;
  double lp_tol = 1e-9;
  double tie_tol = 1e-9;
};

// NNAMCQ / WBCQ / MFC / CCQ / PLICQ at a feasible point, decided by LPs over
// the multiplier cone, one gradient selection per Clarke generator
// combination.
CqVerdict check_pointwise_cq(CqKind kind, const model::ProblemSpec& ps, const EvalPoint& z,
                             const PointwiseOptions& opts = {});

struct NeighborhoodOptions {
  double radius_sample = 1e-3;
  int num_samples = 64;
  double rank_tol = 1e-8;
  double eps_act = 1e-6;
  std::uint64_t seed = 1;
};

// CPLD / RCPLD / CRSC via rank and dependence persistence over sampled balls.
// Smooth g, h only; the "exists delta > 0" quantifier is sampled, so holds
// means holds-empirically.
CqVerdict check_neighborhood_cq(CqKind kind, const model::ProblemSpec& ps, const EvalPoint& z,
                                const NeighborhoodOptions& opts = {});

// Affine g, h over a box U make the perturbed system a polyhedral
// multifunction, which is locally upper Lipschitz and hence calm everywhere.
CqVerdict check_structural_calmness(const model::ProblemSpec& ps);

struct ErrorBoundOptions {
  double radius_sample = 1e-3;
  int num_samples = 32;
  std::uint64_t seed = 1;
  double feas_tol = 1e-7;
};

// Sampled ratio dist_M(0) / residual around z; holds-empirically when the
// worst ratio is stable under doubling the sample count.
CqVerdict estimate_error_bound(const model::ProblemSpec& ps, const EvalPoint& z,
                               const ErrorBoundOptions& opts = {});

// Structural global error bound for inequality-only systems: some coordinate
// enters every g_i linearly with one strict sign and is absent from the
// nonlinear parts.
CqVerdict check_global_eb_structure(const model::ProblemSpec& ps);

struct AuditViolation {
  std::string rule;
  std::string instance;  // problem JSON
  std::string detail;
};

struct AuditReport {
  std::uint64_t seed = 0;
  int count = 0;
  std::vector<AuditViolation> violations;
};

// Random smooth polynomial instances; asserts PLICQ => CPLD => RCPLD => CRSC,
// (WBCQ and NNAMCQ) <=> MFC, CCQ <=> MFC-finiteness.  Violations are report
// entries, not errors.
AuditReport audit_implication_chain(std::uint64_t seed, int count);
std::string audit_to_json(const AuditReport& report);

}  // namespace mixedcq::cq
