#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "mixedcq/errors.hpp"
#include "mixedcq/ocp.hpp"

using namespace mixedcq;
using namespace mixedcq::ocp;

namespace {

std::string fixture(const std::string& name) {
  return std::string(FIXTURE_DIR) + "/" + name;
}

}  // namespace

TEST_CASE("transcribe: counts for exampleA at N=4") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleA.json"));
  DiscretizedNlp nlp = transcribe(ps, 4);
  CHECK(nlp.num_vars() == 5 + 4);
  CHECK(nlp.defect_count() == 4);
  CHECK(nlp.endpoint_eq_count() == 2);
  CHECK(nlp.ineq_count() == 0);
}

TEST_CASE("transcribe: exampleB adds inequality residuals") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  DiscretizedNlp nlp = transcribe(ps, 4);
  CHECK(nlp.ineq_count() == 4);
  CHECK(nlp.endpoint_eq_count() == 1);
}

TEST_CASE("transcribe: N=1 is rejected") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleA.json"));
  CHECK_THROWS_AS(transcribe(ps, 1), ValidationError);
}

TEST_CASE("transcribe: nonsmooth dynamics rejected on the solver path") {
  model::ProblemSpec ps = model::load_problem(R"json({
    "n": 1, "m": 1, "l": 0, "s": 0, "t0": 0.0, "t1": 1.0,
    "F": "0", "f": "0", "phi": ["abs(u1)"], "g": [], "h": [],
    "U": {"lower": ["-inf"], "upper": ["inf"]},
    "E": {"x0": [{"fixed": 0.0}], "x1": ["free"]},
    "R": "inf"
  })json");
  CHECK_THROWS_AS(transcribe(ps, 4), NumericError);
}

TEST_CASE("solve_al: exampleA reaches the analytic optimum") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleA.json"));
  DiscretizedNlp nlp = transcribe(ps, 1000);
  auto [traj, rep] = solve_al(nlp, std::nullopt);
  REQUIRE(rep.converged);
  CHECK(rep.max_violation <= 1e-6);
  CHECK(rep.proj_grad_norm <= 1e-6);
  for (int k = 0; k < nlp.N; ++k) CHECK(std::abs(traj.u[k][0] - 1.0) <= 1e-3);
  CHECK(std::abs(rep.objective - 0.5) <= 0.005);  // within 1% of 1/2

  // Dynamics defects at the solution.
  Vec z = nlp.from_trajectory(traj);
  Vec ceq = nlp.eq_residuals(z);
  double worst = 0.0;
  for (int r = 0; r < nlp.defect_count(); ++r) worst = std::max(worst, std::abs(ceq[r]));
  CHECK(worst <= 1e-6);
}

TEST_CASE("solve_al: exampleB tracks the exponential arc") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  DiscretizedNlp nlp = transcribe(ps, 1000);
  auto [traj, rep] = solve_al(nlp, std::nullopt);
  REQUIRE(rep.converged);
  for (int k = 0; k <= nlp.N; ++k) {
    double t = traj.grid[k];
    CHECK(std::abs(traj.x[k][0] - (std::exp(t) - 1.0)) <= 5e-3);
  }
}

TEST_CASE("solve_al: halving h halves the exampleB objective error") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  const double exact = -(std::exp(1.0) - 1.0);
  double err[2];
  int idx = 0;
  for (int N : {250, 500}) {
    DiscretizedNlp nlp = transcribe(ps, N);
    auto [traj, rep] = solve_al(nlp, std::nullopt);
    REQUIRE(rep.converged);
    err[idx++] = std::abs(rep.objective - exact);
  }
  double ratio = err[1] / err[0];
  CHECK(ratio >= 0.3);
  CHECK(ratio <= 0.7);
}

TEST_CASE("solve_al: unreachable endpoint comes back best-effort") {
  model::ProblemSpec ps = model::load_problem_file(fixture("infeasible_reach.json"));
  DiscretizedNlp nlp = transcribe(ps, 50);
  auto [traj, rep] = solve_al(nlp, std::nullopt);
  (void)traj;
  CHECK_FALSE(rep.converged);
  CHECK(rep.best_effort);
  CHECK(rep.max_violation > 1.0);
}

TEST_CASE("solve_al is deterministic") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  DiscretizedNlp nlp = transcribe(ps, 64);
  auto [t1, r1] = solve_al(nlp, std::nullopt);
  auto [t2, r2] = solve_al(nlp, std::nullopt);
  CHECK(r1.objective == r2.objective);
  CHECK(t1.x == t2.x);
  CHECK(t1.u == t2.u);
}
