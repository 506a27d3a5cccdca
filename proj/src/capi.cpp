#include "mixedcq.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include <json.hpp>

#include "mixedcq/cq.hpp"
#include "mixedcq/errors.hpp"
#include "mixedcq/model.hpp"
#include "mixedcq/ocp.hpp"
#include "mixedcq/setmap.hpp"
#include "mixedcq/verify.hpp"

using json = nlohmann::ordered_json;
using namespace mixedcq;

struct mcq_problem {
  model::ProblemSpec ps;
};

struct mcq_trajectory {
  model::Trajectory traj;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

mcq_status fail(mcq_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <typename Fn>
mcq_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ParseError& e) {
    return fail(MCQ_ERR_PARSE, e.what());
  } catch (const ValidationError& e) {
    return fail(MCQ_ERR_VALIDATE, e.what());
  } catch (const DomainError& e) {
    return fail(MCQ_ERR_DOMAIN, e.what());
  } catch (const NumericError& e) {
    return fail(MCQ_ERR_NUMERIC, e.what());
  } catch (const IoError& e) {
    return fail(MCQ_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(MCQ_ERR_NUMERIC, e.what());
  }
}

json parse_opts(const char* opts_json) {
  if (opts_json == nullptr || opts_json[0] == '\0') return json::object();
  json j = json::parse(opts_json, nullptr, false);
  if (j.is_discarded()) throw ValidationError("options", "invalid JSON");
  if (!j.is_object()) throw ValidationError("options", "expected a JSON object");
  return j;
}

template <typename T>
T opt_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

expr::EvalPoint parse_point(const model::ProblemSpec& ps, const char* point_json) {
  expr::EvalPoint z;
  z.x.assign(ps.n, 0.0);
  z.u.assign(ps.m, 0.0);
  if (point_json == nullptr || point_json[0] == '\0') return z;
  json j = json::parse(point_json, nullptr, false);
  if (j.is_discarded()) throw ValidationError("point", "invalid JSON");
  z.t = opt_or(j, "t", 0.0);
  if (j.contains("x")) z.x = j.at("x").get<num::Vec>();
  if (j.contains("u")) z.u = j.at("u").get<num::Vec>();
  if (static_cast<int>(z.x.size()) != ps.n || static_cast<int>(z.u.size()) != ps.m)
    throw ValidationError("point", "x/u dimensions do not match the problem");
  return z;
}

}  // namespace

extern "C" {

const char* mcq_last_error(void) { return g_last_error.c_str(); }

const char* mcq_version(void) { return "0.1.0"; }

void mcq_string_free(char* s) { std::free(s); }

mcq_status mcq_problem_from_json(const char* json_text, mcq_problem** out) {
  if (!json_text || !out) return fail(MCQ_ERR_BADARG, "null argument");
  return guarded([&] {
    auto* handle = new mcq_problem{model::load_problem(json_text)};
    *out = handle;
    return MCQ_OK;
  });
}

mcq_status mcq_problem_from_file(const char* path, mcq_problem** out) {
  if (!path || !out) return fail(MCQ_ERR_BADARG, "null argument");
  return guarded([&] {
    auto* handle = new mcq_problem{model::load_problem_file(path)};
    *out = handle;
    return MCQ_OK;
  });
}

mcq_status mcq_problem_to_json(const mcq_problem* problem, char** out_json) {
  if (!problem || !out_json) return fail(MCQ_ERR_BADARG, "null argument");
  return guarded([&] {
    *out_json = dup_string(model::problem_to_json(problem->ps));
    return MCQ_OK;
  });
}

void mcq_problem_free(mcq_problem* problem) { delete problem; }

mcq_status mcq_trajectory_from_json(const mcq_problem* problem, const char* json_text,
                                    mcq_trajectory** out) {
  if (!problem || !json_text || !out) return fail(MCQ_ERR_BADARG, "null argument");
  return guarded([&] {
    auto* handle = new mcq_trajectory{model::load_trajectory(json_text, problem->ps)};
    *out = handle;
    return MCQ_OK;
  });
}

mcq_status mcq_trajectory_from_file(const mcq_problem* problem, const char* path,
                                    mcq_trajectory** out) {
  if (!problem || !path || !out) return fail(MCQ_ERR_BADARG, "null argument");
  return guarded([&] {
    auto* handle = new mcq_trajectory{model::load_trajectory_file(path, problem->ps)};
    *out = handle;
    return MCQ_OK;
  });
}

mcq_status mcq_trajectory_to_json(const mcq_trajectory* traj, char** out_json) {
  if (!traj || !out_json) return fail(MCQ_ERR_BADARG, "null argument");
  return guarded([&] {
    *out_json = dup_string(model::trajectory_to_json(traj->traj));
    return MCQ_OK;
  });
}

void mcq_trajectory_free(mcq_trajectory* traj) { delete traj; }

mcq_status mcq_analyze_cq(const mcq_problem* problem, const char* point_json,
                          const char* opts_json, char** out_report) {
  if (!problem || !out_report) return fail(MCQ_ERR_BADARG, "null argument");
  return guarded([&] {
    const model::ProblemSpec& ps = problem->ps;
    json opts = parse_opts(opts_json);
    expr::EvalPoint z = parse_point(ps, point_json);

    cq::PointwiseOptions popts;
    popts.eps_act = opt_or(opts, "eps_act", popts.eps_act);
    popts.lp_tol = opt_or(opts, "lp_tol", popts.lp_tol);
    cq::NeighborhoodOptions nopts;
    nopts.eps_act = popts.eps_act;
    nopts.radius_sample = opt_or(opts, "radius", nopts.radius_sample);
    nopts.num_samples = opt_or(opts, "samples", nopts.num_samples);
    nopts.seed = opt_or(opts, "seed", static_cast<std::uint64_t>(1));
    cq::ErrorBoundOptions ebopts;
    ebopts.radius_sample = opt_or(opts, "radius", ebopts.radius_sample);
    ebopts.seed = nopts.seed;

    json report;
    report["point"] = {{"t", z.t}, {"x", z.x}, {"u", z.u}};
    report["verdicts"] = json::array();
    for (cq::CqKind kind : {cq::CqKind::Nnamcq, cq::CqKind::Wbcq, cq::CqKind::Mfc,
                            cq::CqKind::Ccq, cq::CqKind::Plicq}) {
      report["verdicts"].push_back(json::parse(
          cq::verdict_to_json(cq::check_pointwise_cq(kind, ps, z, popts))));
    }
    if (opt_or(opts, "neighborhood", true) && ps.smooth_g()) {
      for (cq::CqKind kind : {cq::CqKind::Cpld, cq::CqKind::Rcpld, cq::CqKind::Crsc}) {
        report["verdicts"].push_back(json::parse(
            cq::verdict_to_json(cq::check_neighborhood_cq(kind, ps, z, nopts))));
      }
    }
    report["calmness"] = json::parse(cq::verdict_to_json(cq::check_structural_calmness(ps)));
    if (ps.s == 0) {
      report["global_error_bound"] =
          json::parse(cq::verdict_to_json(cq::check_global_eb_structure(ps)));
    }
    setmap::GammaPlCertificate pl = setmap::certify_gamma_pl(ps, z, popts, ebopts);
    json plj;
    plj["certified"] = pl.certified;
    plj["wbcq"] = json::parse(cq::verdict_to_json(pl.wbcq));
    plj["calmness"] = json::parse(cq::verdict_to_json(pl.calmness));
    if (pl.error_bound) plj["error_bound"] = json::parse(cq::verdict_to_json(*pl.error_bound));
    plj["note"] = pl.note;
    report["gamma_pseudo_lipschitz"] = plj;
    *out_report = dup_string(report.dump(2));
    return MCQ_OK;
  });
}

mcq_status mcq_solve(const mcq_problem* problem, int grid_segments, const char* opts_json,
                     mcq_trajectory** out_traj, char** out_report, int* out_converged) {
  if (!problem || !out_traj) return fail(MCQ_ERR_BADARG, "null argument");
  return guarded([&] {
    json opts = parse_opts(opts_json);
    ocp::SolveOptions sopts;
    sopts.tol = opt_or(opts, "tol", sopts.tol);
    sopts.max_outer = opt_or(opts, "max_outer", sopts.max_outer);
    sopts.max_inner = opt_or(opts, "max_inner", sopts.max_inner);
    sopts.penalty_init = opt_or(opts, "penalty_init", sopts.penalty_init);
    sopts.penalty_growth = opt_or(opts, "penalty_growth", sopts.penalty_growth);

    ocp::DiscretizedNlp nlp = ocp::transcribe(problem->ps, grid_segments);
    auto [traj, rep] = ocp::solve_al(nlp, std::nullopt, sopts);
    *out_traj = new mcq_trajectory{std::move(traj)};
    if (out_converged) *out_converged = rep.converged ? 1 : 0;
    if (out_report) {
      json j;
      j["converged"] = rep.converged;
      j["best_effort"] = rep.best_effort;
      j["max_violation"] = rep.max_violation;
      j["proj_grad_norm"] = rep.proj_grad_norm;
      j["objective"] = rep.objective;
      j["outer_iterations"] = rep.outer_iterations;
      j["inner_iterations"] = rep.inner_iterations;
      *out_report = dup_string(j.dump(2));
    }
    return MCQ_OK;
  });
}

mcq_status mcq_verify(const mcq_problem* problem, const mcq_trajectory* traj,
                      const char* opts_json, char** out_certificate, int* out_pass) {
  if (!problem || !traj || !out_certificate) return fail(MCQ_ERR_BADARG, "null argument");
  return guarded([&] {
    json opts = parse_opts(opts_json);
    verify::VerifyOptions vopts;
    vopts.eps_act = opt_or(opts, "eps_act", vopts.eps_act);
    vopts.traj_tol = opt_or(opts, "traj_tol", vopts.traj_tol);
    vopts.algebraic_tol = opt_or(opts, "algebraic_tol", vopts.algebraic_tol);
    vopts.weier_tol = opt_or(opts, "weier_tol", vopts.weier_tol);
    vopts.control_window = opt_or(opts, "control_window", vopts.control_window);
    vopts.control_grid = opt_or(opts, "control_grid", vopts.control_grid);
    vopts.cq_stride = opt_or(opts, "cq_stride", vopts.cq_stride);
    vopts.seed = opt_or(opts, "seed", static_cast<std::uint64_t>(1));

    setmap::RadiusProfile radius =
        setmap::RadiusProfile::from_problem(problem->ps, traj->traj.segments() + 1);
    if (opts.contains("radius_const")) {
      radius.infinite = false;
      radius.values.assign(traj->traj.segments() + 1, opts.at("radius_const").get<double>());
    }
    verify::NcCertificate cert = verify::certify(problem->ps, traj->traj, radius, vopts);
    *out_certificate = dup_string(verify::certificate_to_json(cert));
    if (out_pass) *out_pass = cert.pass ? 1 : 0;
    return MCQ_OK;
  });
}

mcq_status mcq_estimate_setmap(const mcq_problem* problem, const mcq_trajectory* traj,
                               const char* opts_json, char** out_report) {
  if (!problem || !traj || !out_report) return fail(MCQ_ERR_BADARG, "null argument");
  return guarded([&] {
    const model::ProblemSpec& ps = problem->ps;
    const model::Trajectory& tr = traj->traj;
    json opts = parse_opts(opts_json);
    setmap::SampleOptions sopts;
    sopts.samples = opt_or(opts, "samples", sopts.samples);
    sopts.seed = opt_or(opts, "seed", static_cast<std::uint64_t>(1));
    sopts.u_window = opt_or(opts, "u_window", sopts.u_window);
    double eps = opt_or(opts, "eps", 0.25);
    double lambda_frac = opt_or(opts, "lambda_frac", 0.5);

    setmap::RadiusProfile radius = setmap::RadiusProfile::from_problem(ps, tr.segments() + 1);
    if (opts.contains("radius_const")) {
      radius.infinite = false;
      radius.values.assign(tr.segments() + 1, opts.at("radius_const").get<double>());
    }

    json report;
    {
      setmap::BoundedSlopeResult bs = setmap::estimate_bounded_slope(ps, tr, eps, radius, sopts);
      json j;
      j["bounded"] = bs.bounded;
      j["k_hat"] = std::isfinite(bs.k_hat) ? json(bs.k_hat) : json("inf");
      j["margin"] = std::isfinite(bs.margin) ? json(bs.margin) : json("inf");
      j["samples"] = bs.samples_used;
      if (!bs.bounded) {
        j["witness"] = {{"t", bs.witness_t}, {"xu", bs.witness_xu}};
      }
      report["bounded_slope"] = j;
    }
    {
      setmap::TemperedGrowthResult tg =
          setmap::check_tempered_growth(ps, tr, eps, radius, lambda_frac, sopts);
      json j;
      j["holds"] = tg.holds;
      j["r0_attained"] = tg.r0_attained;
      j["min_margin"] = std::isfinite(tg.min_margin) ? json(tg.min_margin) : json("inf");
      j["samples"] = tg.samples_used;
      if (tg.witness_present) j["witness"] = {{"t", tg.witness_t}, {"x", tg.witness_x}};
      report["tempered_growth"] = j;
    }
    {
      expr::EvalPoint z0 = model::node_point(ps, tr, 0);
      num::Vec v0(ps.n, 0.0);
      for (int i = 0; i < ps.n; ++i) v0[i] = expr::evaluate(ps.phi[i], z0);
      double rad = radius.at(0);
      setmap::PlModulusResult pl =
          setmap::estimate_pl_modulus(ps, tr.x.front(), v0, eps, std::isfinite(rad) ? rad : 10.0,
                                      sopts);
      json j;
      j["k_hat"] = pl.k_hat;
      j["pairs"] = pl.pairs_sampled;
      j["velocities"] = pl.velocities_sampled;
      j["gamma_empty_seen"] = pl.gamma_empty;
      report["pl_modulus_at_t0"] = j;
    }
    {
      json arr = json::array();
      double jump_tol = opt_or(opts, "jump_tol", setmap::default_jump_tol(tr));
      for (const setmap::ClusterPoint& cp : setmap::enumerate_cluster_points(ps, tr, jump_tol))
        arr.push_back({{"t", cp.t}, {"x", cp.x}, {"v", cp.v}});
      report["cluster_points"] = arr;
    }
    *out_report = dup_string(report.dump(2));
    return MCQ_OK;
  });
}

mcq_status mcq_audit(unsigned long long seed, int count, char** out_report,
                     int* out_violations) {
  if (!out_report || count < 0) return fail(MCQ_ERR_BADARG, "bad argument");
  return guarded([&] {
    cq::AuditReport rep = cq::audit_implication_chain(seed, count);
    *out_report = dup_string(cq::audit_to_json(rep));
    if (out_violations) *out_violations = static_cast<int>(rep.violations.size());
    return MCQ_OK;
  });
}

}  // extern "C"
