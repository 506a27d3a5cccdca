#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "mixedcq/errors.hpp"
#include "mixedcq/verify.hpp"

using namespace mixedcq;
using namespace mixedcq::verify;

namespace {

std::string fixture(const std::string& name) {
  return std::string(FIXTURE_DIR) + "/" + name;
}

model::Trajectory exampleA_candidate(int N) {
  model::Trajectory traj;
  for (int k = 0; k <= N; ++k) {
    traj.grid.push_back(k / static_cast<double>(N));
    traj.x.push_back({k / static_cast<double>(N)});
    if (k < N) traj.u.push_back({1.0});
  }
  return traj;
}

model::Trajectory exampleB_candidate(int N) {
  model::Trajectory traj;
  double h = 1.0 / N;
  double x = 0.0;
  for (int k = 0; k <= N; ++k) {
    traj.grid.push_back(k * h);
    traj.x.push_back({x});
    if (k < N) {
      traj.u.push_back({x + 1.0});
      x += h * (x + 1.0);
    }
  }
  return traj;
}

model::Trajectory exampleB_suboptimal(int N) {
  model::Trajectory traj;
  double h = 1.0 / N;
  for (int k = 0; k <= N; ++k) {
    traj.grid.push_back(k * h);
    traj.x.push_back({k * h});
    if (k < N) traj.u.push_back({1.0});
  }
  return traj;
}

}  // namespace

TEST_CASE("reconstruct: exampleA positive control") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleA.json"));
  model::Trajectory traj = exampleA_candidate(1000);
  Reconstruction rec = reconstruct_multipliers(ps, traj, 1.0);
  for (const num::Vec& pk : rec.arc.p) CHECK(std::abs(pk[0] - 1.0) <= 1e-6);
  CHECK(rec.residuals.euler_x <= 1e-8);
  CHECK(rec.residuals.euler_u <= 1e-8);
  CHECK(rec.residuals.transversality <= 1e-12);
  CHECK(rec.residuals.nontriviality >= 1.0);
}

TEST_CASE("reconstruct: exampleB positive control matches the exponential adjoint") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  int N = 1000;
  model::Trajectory traj = exampleB_candidate(N);
  Reconstruction rec = reconstruct_multipliers(ps, traj, 1.0);
  CHECK(std::abs(rec.arc.p[N][0] - 1.0) <= 1e-8);  // transversality is exact
  for (int k = 0; k <= N; ++k) {
    double t = traj.grid[k];
    CHECK(std::abs(rec.arc.p[k][0] - std::exp(1.0 - t)) <= 1e-2);
  }
  for (int k = 0; k < N; ++k) {
    double t = traj.grid[k];
    CHECK(rec.arc.lam[k][0] >= 0.0);
    CHECK(std::abs(rec.arc.lam[k][0] - std::exp(1.0 - t)) <= 1e-2);
  }
  CHECK(rec.residuals.comp_slack <= 1e-12);
  CHECK(rec.residuals.euler_u <= 1e-10);
}

TEST_CASE("reconstruct: grid refinement halves the adjoint error") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  double errs[2];
  int idx = 0;
  for (int N : {1000, 2000}) {
    model::Trajectory traj = exampleB_candidate(N);
    Reconstruction rec = reconstruct_multipliers(ps, traj, 1.0);
    double worst = 0.0;
    for (int k = 0; k <= N; ++k)
      worst = std::max(worst, std::abs(rec.arc.p[k][0] - std::exp(1.0 - traj.grid[k])));
    errs[idx++] = worst;
  }
  double ratio = errs[1] / errs[0];
  CHECK(ratio >= 0.3);
  CHECK(ratio <= 0.7);
}

TEST_CASE("reconstruct: cost scaling scales the multipliers") {
  // exampleA with F scaled by c: same candidate, p and the residual gates
  // scale linearly.
  for (double c : {0.5, 2.0}) {
    std::string text = R"json({
      "n": 1, "m": 1, "l": 0, "s": 0, "t0": 0.0, "t1": 1.0,
      "F": "C*u1^2/2", "f": "0", "phi": ["u1"], "g": [], "h": [],
      "U": {"lower": ["-inf"], "upper": ["inf"]},
      "E": {"x0": [{"fixed": 0.0}], "x1": [{"fixed": 1.0}]},
      "R": "inf"
    })json";
    text.replace(text.find('C'), 1, std::to_string(c));
    model::ProblemSpec ps = model::load_problem(text);
    model::Trajectory traj = exampleA_candidate(200);
    Reconstruction rec = reconstruct_multipliers(ps, traj, 1.0);
    for (const num::Vec& pk : rec.arc.p) CHECK(pk[0] == doctest::Approx(c).epsilon(1e-8));
  }
  // exampleB with the endpoint cost scaled: p, lam scale by c.
  for (double c : {0.5, 2.0}) {
    std::string text = R"json({
      "n": 1, "m": 1, "l": 1, "s": 0, "t0": 0.0, "t1": 1.0,
      "F": "0", "f": "-C*x2", "phi": ["u1"], "g": ["u1 - x1 - 1"], "h": [],
      "U": {"lower": ["-inf"], "upper": ["inf"]},
      "E": {"x0": [{"fixed": 0.0}], "x1": ["free"]},
      "R": "inf"
    })json";
    text.replace(text.find('C'), 1, std::to_string(c));
    model::ProblemSpec ps = model::load_problem(text);
    model::Trajectory traj = exampleB_candidate(200);
    Reconstruction rec = reconstruct_multipliers(ps, traj, 1.0);
    CHECK(rec.arc.p[200][0] == doctest::Approx(c).epsilon(1e-10));
    // The u-row ties lambda_k to p_{k+1}, so both carry the same scale.
    CHECK(rec.arc.lam[100][0] == doctest::Approx(rec.arc.p[101][0]).epsilon(1e-8));
  }
}

TEST_CASE("weierstrass: corrupted adjoint is caught with its witness") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleA.json"));
  model::Trajectory traj = exampleA_candidate(100);
  model::MultiplierArc arc;
  arc.lambda0 = 1.0;
  arc.p.assign(101, {2.0});
  arc.lam.assign(100, {});
  arc.varpi.assign(100, {});
  setmap::RadiusProfile R = setmap::RadiusProfile::from_problem(ps, 100);
  WeierstrassReport rep = check_weierstrass(ps, traj, arc, R);
  CHECK(rep.worst_margin == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(rep.witness_u[0] == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("certify: exampleA passes with lambda0 = 1") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleA.json"));
  model::Trajectory traj = exampleA_candidate(1000);
  setmap::RadiusProfile R = setmap::RadiusProfile::from_problem(ps, 1000);
  NcCertificate cert = certify(ps, traj, R);
  CHECK(cert.pass);
  CHECK(cert.lambda0 == 1.0);
  CHECK(cert.weierstrass.worst_margin <= 1e-6);
  CHECK_FALSE(cert.cq_along_trajectory.empty());
}

TEST_CASE("certify: exampleB passes; suboptimal control fails loudly") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  setmap::RadiusProfile R = setmap::RadiusProfile::from_problem(ps, 1000);

  NcCertificate good = certify(ps, exampleB_candidate(1000), R);
  CHECK(good.pass);

  NcCertificate bad = certify(ps, exampleB_suboptimal(1000), R);
  CHECK_FALSE(bad.pass);
  REQUIRE_FALSE(bad.failing.empty());
  double worst = 0.0;
  for (const Clause& c : bad.clauses)
    if (!c.pass && c.name != "nonneg" && c.name != "nontriviality")
      worst = std::max(worst, c.value);
  CHECK(worst >= 0.1);  // at least one residual at 10x tolerance
}

TEST_CASE("certify: nonsmooth constraint with an active kink") {
  // g = |u| <= 0 pins u to 0; the adjoint p(t) = t - 1 rides the kink, so the
  // reconstruction must pick branch weights with lambda = -p >= 0.
  model::ProblemSpec ps = model::load_problem(R"json({
    "n": 1, "m": 1, "l": 1, "s": 0, "t0": 0.0, "t1": 1.0,
    "F": "x1", "f": "0", "phi": ["u1"], "g": ["abs(u1)"], "h": [],
    "U": {"lower": ["-inf"], "upper": ["inf"]},
    "E": {"x0": [{"fixed": 0.0}], "x1": ["free"]},
    "R": "inf"
  })json");
  int N = 400;
  model::Trajectory traj;
  for (int k = 0; k <= N; ++k) {
    traj.grid.push_back(k / static_cast<double>(N));
    traj.x.push_back({0.0});
    if (k < N) traj.u.push_back({0.0});
  }
  setmap::RadiusProfile R = setmap::RadiusProfile::from_problem(ps, N);
  NcCertificate cert = certify(ps, traj, R);
  CHECK(cert.pass);
  for (int k = 0; k <= N; ++k)
    CHECK(std::abs(cert.arc.p[k][0] - (traj.grid[k] - 1.0)) <= 1e-2);
  for (int k = 0; k < N; ++k) CHECK(cert.arc.lam[k][0] >= -1e-12);
}

TEST_CASE("certify: abnormal candidate needs lambda0 = 0") {
  // min integral of u with xdot = u^2 and both endpoints pinned to 0: the only
  // admissible control is u = 0, and the u-row reads lambda0 = 0.
  model::ProblemSpec ps = model::load_problem(R"json({
    "n": 1, "m": 1, "l": 0, "s": 0, "t0": 0.0, "t1": 1.0,
    "F": "u1", "f": "0", "phi": ["u1^2"], "g": [], "h": [],
    "U": {"lower": ["-inf"], "upper": ["inf"]},
    "E": {"x0": [{"fixed": 0.0}], "x1": [{"fixed": 0.0}]},
    "R": 1.0
  })json");
  int N = 100;
  model::Trajectory traj;
  for (int k = 0; k <= N; ++k) {
    traj.grid.push_back(k / static_cast<double>(N));
    traj.x.push_back({0.0});
    if (k < N) traj.u.push_back({0.0});
  }
  setmap::RadiusProfile R = setmap::RadiusProfile::from_problem(ps, N);
  NcCertificate cert = certify(ps, traj, R);
  CHECK(cert.pass);
  CHECK(cert.lambda0 == 0.0);
  CHECK(cert.residuals.nontriviality >= 1.0 - 1e-9);
}

TEST_CASE("certify: infeasible candidate is a typed error") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  model::Trajectory traj = exampleB_suboptimal(50);
  for (auto& u : traj.u) u[0] = 5.0;  // grossly violates g
  setmap::RadiusProfile R = setmap::RadiusProfile::from_problem(ps, 50);
  CHECK_THROWS_AS(certify(ps, traj, R), NumericError);
}

TEST_CASE("certificate serialization") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleA.json"));
  model::Trajectory traj = exampleA_candidate(50);
  setmap::RadiusProfile R = setmap::RadiusProfile::from_problem(ps, 50);
  NcCertificate cert = certify(ps, traj, R);
  std::string js = certificate_to_json(cert);
  CHECK(js.find("\"pass\": true") != std::string::npos);
  CHECK(js.find("euler_u") != std::string::npos);
  CHECK(js.find("weierstrass") != std::string::npos);
  CHECK(js.find("not certify optimality") != std::string::npos);
}
