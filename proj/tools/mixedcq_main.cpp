// Command-line front end.  Talks to the library exclusively through the C
// API, the same surface other language bindings would use.
//
// Exit codes: 0 pass/ok, 1 necessary-condition violation (or audit
// violations), 2 input error, 3 solver best-effort.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixedcq.h"

using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNcViolation = 1;
constexpr int kExitInputError = 2;
constexpr int kExitBestEffort = 3;

int input_error(const std::string& context) {
  std::cerr << "error: " << context;
  const char* detail = mcq_last_error();
  if (detail && detail[0]) std::cerr << ": " << detail;
  std::cerr << "\n";
  return kExitInputError;
}

bool write_output(const std::string& path, const char* text) {
  if (path.empty()) {
    std::cout << text << "\n";
    return true;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) return false;
  out << text;
  return static_cast<bool>(out);
}

struct StringGuard {
  char* s = nullptr;
  ~StringGuard() { mcq_string_free(s); }
};

struct ProblemGuard {
  mcq_problem* p = nullptr;
  ~ProblemGuard() { mcq_problem_free(p); }
};

struct TrajectoryGuard {
  mcq_trajectory* t = nullptr;
  ~TrajectoryGuard() { mcq_trajectory_free(t); }
};

std::vector<double> parse_csv(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"constraint-qualification analysis and necessary-condition "
               "verification for mixed state-control problems"};
  app.require_subcommand(1);

  std::string problem_path, trajectory_path, out_path, point_x, point_u;
  int N = 100, node = -1, samples = 0, count = 100;
  unsigned long long seed = 42;
  double radius = 1e-3, tol_act = -1.0, tol_lp = 1e-9, tol_traj = 1e-2, point_t = 0.0;
  double eps = 0.25, lambda_frac = 0.5;

  auto add_common = [&](CLI::App* cmd, bool needs_problem) {
    if (needs_problem) cmd->add_option("--problem", problem_path, "problem JSON file")->required();
    cmd->add_option("--out", out_path, "output file (stdout when omitted)");
    cmd->add_option("--seed", seed, "random seed for sampled procedures");
  };

  CLI::App* analyze = app.add_subcommand("analyze-cq", "constraint-qualification report at a point");
  add_common(analyze, true);
  analyze->add_option("--trajectory", trajectory_path, "take the point from this trajectory");
  analyze->add_option("--node", node, "trajectory node index (with --trajectory)");
  analyze->add_option("--x", point_x, "comma-separated state, e.g. 0,0");
  analyze->add_option("--u", point_u, "comma-separated control");
  analyze->add_option("--t", point_t, "time component of the point");
  analyze->add_option("--radius", radius, "sampling radius for neighborhood checks");
  analyze->add_option("--samples", samples, "sample count for neighborhood checks");
  analyze->add_option("--tol-act", tol_act, "activity tolerance");
  analyze->add_option("--tol-lp", tol_lp, "LP feasibility tolerance");

  CLI::App* solve = app.add_subcommand("solve", "transcribe and solve for a candidate trajectory");
  add_common(solve, true);
  solve->add_option("--N", N, "grid segments")->required();

  CLI::App* verify_cmd = app.add_subcommand("verify", "verify necessary conditions for a candidate");
  add_common(verify_cmd, true);
  verify_cmd->add_option("--trajectory", trajectory_path, "candidate trajectory JSON")->required();
  verify_cmd->add_option("--tol-act", tol_act, "activity tolerance (default max(1e-6, 10h))");
  verify_cmd->add_option("--tol-traj", tol_traj, "residual gate for trajectory-scale clauses");

  CLI::App* audit = app.add_subcommand("audit", "implication-chain audit on random instances");
  add_common(audit, false);
  audit->add_option("--count", count, "number of random instances");

  CLI::App* estimate = app.add_subcommand("estimate-setmap", "velocity-map estimators along a candidate");
  add_common(estimate, true);
  estimate->add_option("--trajectory", trajectory_path, "candidate trajectory JSON")->required();
  estimate->add_option("--eps", eps, "state-ball radius");
  estimate->add_option("--lambda-frac", lambda_frac, "tempered-growth fraction in (0,1)");
  estimate->add_option("--samples", samples, "sample count");
  estimate->add_option("--radius", radius, "constant radius override for R(t)");
  bool radius_set = false;
  estimate->callback([&] { radius_set = estimate->count("--radius") > 0; });

  CLI11_PARSE(app, argc, argv);

  ProblemGuard problem;
  if (!problem_path.empty()) {
    if (mcq_problem_from_file(problem_path.c_str(), &problem.p) != MCQ_OK)
      return input_error("cannot load problem '" + problem_path + "'");
  }

  if (analyze->parsed()) {
    json point;
    point["t"] = point_t;
    if (!trajectory_path.empty()) {
      TrajectoryGuard traj;
      if (mcq_trajectory_from_file(problem.p, trajectory_path.c_str(), &traj.t) != MCQ_OK)
        return input_error("cannot load trajectory '" + trajectory_path + "'");
      StringGuard tj;
      mcq_trajectory_to_json(traj.t, &tj.s);
      json jt = json::parse(tj.s);
      int k = node < 0 ? 0 : node;
      if (k >= static_cast<int>(jt["x"].size())) return input_error("--node out of range");
      point["t"] = jt["grid"][k];
      point["x"] = jt["x"][k];
      int ku = std::min<int>(k, static_cast<int>(jt["u"].size()) - 1);
      point["u"] = jt["u"][ku];
    } else {
      if (!point_x.empty()) point["x"] = parse_csv(point_x);
      if (!point_u.empty()) point["u"] = parse_csv(point_u);
    }
    json opts;
    opts["seed"] = seed;
    opts["radius"] = radius;
    if (samples > 0) opts["samples"] = samples;
    if (tol_act > 0) opts["eps_act"] = tol_act;
    opts["lp_tol"] = tol_lp;
    StringGuard report;
    if (mcq_analyze_cq(problem.p, point.dump().c_str(), opts.dump().c_str(), &report.s) != MCQ_OK)
      return input_error("analyze-cq failed");
    if (!write_output(out_path, report.s)) return input_error("cannot write '" + out_path + "'");
    return kExitOk;  // analysis is informative
  }

  if (solve->parsed()) {
    json opts = json::object();
    TrajectoryGuard traj;
    StringGuard report;
    int converged = 0;
    if (mcq_solve(problem.p, N, opts.dump().c_str(), &traj.t, &report.s, &converged) != MCQ_OK)
      return input_error("solve failed");
    StringGuard tj;
    mcq_trajectory_to_json(traj.t, &tj.s);
    if (!write_output(out_path, tj.s)) return input_error("cannot write '" + out_path + "'");
    std::cerr << report.s << "\n";
    return converged ? kExitOk : kExitBestEffort;
  }

  if (verify_cmd->parsed()) {
    TrajectoryGuard traj;
    if (mcq_trajectory_from_file(problem.p, trajectory_path.c_str(), &traj.t) != MCQ_OK)
      return input_error("cannot load trajectory '" + trajectory_path + "'");
    json opts;
    opts["seed"] = seed;
    opts["traj_tol"] = tol_traj;
    if (tol_act > 0) opts["eps_act"] = tol_act;
    StringGuard cert;
    int pass = 0;
    if (mcq_verify(problem.p, traj.t, opts.dump().c_str(), &cert.s, &pass) != MCQ_OK)
      return input_error("verify failed");
    if (!write_output(out_path, cert.s)) return input_error("cannot write '" + out_path + "'");
    return pass ? kExitOk : kExitNcViolation;
  }

  if (audit->parsed()) {
    StringGuard report;
    int violations = 0;
    if (mcq_audit(seed, count, &report.s, &violations) != MCQ_OK)
      return input_error("audit failed");
    if (!write_output(out_path, report.s)) return input_error("cannot write '" + out_path + "'");
    return violations == 0 ? kExitOk : kExitNcViolation;
  }

  if (estimate->parsed()) {
    TrajectoryGuard traj;
    if (mcq_trajectory_from_file(problem.p, trajectory_path.c_str(), &traj.t) != MCQ_OK)
      return input_error("cannot load trajectory '" + trajectory_path + "'");
    json opts;
    opts["seed"] = seed;
    opts["eps"] = eps;
    opts["lambda_frac"] = lambda_frac;
    if (samples > 0) opts["samples"] = samples;
    if (radius_set) opts["radius_const"] = radius;
    StringGuard report;
    if (mcq_estimate_setmap(problem.p, traj.t, opts.dump().c_str(), &report.s) != MCQ_OK)
      return input_error("estimate-setmap failed");
    if (!write_output(out_path, report.s)) return input_error("cannot write '" + out_path + "'");
    return kExitOk;
  }

  return kExitInputError;
}
