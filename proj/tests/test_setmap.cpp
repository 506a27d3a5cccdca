#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "mixedcq/errors.hpp"
#include "mixedcq/setmap.hpp"

using namespace mixedcq;
using namespace mixedcq::setmap;

namespace {

std::string fixture(const std::string& name) {
  return std::string(FIXTURE_DIR) + "/" + name;
}

model::Trajectory exampleB_candidate(const model::ProblemSpec& ps, int N) {
  model::Trajectory traj;
  double h = (ps.t1 - ps.t0) / N;
  double x = 0.0;
  for (int k = 0; k <= N; ++k) {
    traj.grid.push_back(ps.t0 + k * h);
    traj.x.push_back({x});
    if (k < N) {
      traj.u.push_back({x + 1.0});
      x = x + h * (x + 1.0);
    }
  }
  return traj;
}

}  // namespace

TEST_CASE("certify_gamma_pl") {
  model::ProblemSpec sec2 = model::load_problem_file(fixture("section2_example.json"));
  expr::EvalPoint z;
  z.x = {0.0};
  z.u = {0.0, 0.0};
  GammaPlCertificate cert = certify_gamma_pl(sec2, z);
  CHECK(cert.certified);
  CHECK(cert.wbcq.holds());
  CHECK(cert.calmness.holds());

  model::ProblemSpec pure = model::load_problem_file(fixture("pure_state.json"));
  expr::EvalPoint z0;
  z0.x = {0.0};
  z0.u = {0.0};
  GammaPlCertificate none = certify_gamma_pl(pure, z0);
  CHECK_FALSE(none.certified);
  CHECK_FALSE(none.wbcq.holds());

  model::ProblemSpec boxed = model::load_problem_file(fixture("constant_map.json"));
  GammaPlCertificate vac = certify_gamma_pl(boxed, z0);
  CHECK(vac.certified);
}

TEST_CASE("estimate_pl_modulus: constant map has zero modulus") {
  model::ProblemSpec ps = model::load_problem_file(fixture("constant_map.json"));
  PlModulusResult res = estimate_pl_modulus(ps, {0.0}, {0.0}, 0.5, 10.0);
  CHECK(res.k_hat <= 1e-6);
  CHECK(res.pairs_sampled > 0);
  CHECK_FALSE(res.gamma_empty);
}

TEST_CASE("estimate_pl_modulus: shift map has modulus one") {
  model::ProblemSpec ps = model::load_problem_file(fixture("shift_map.json"));
  PlModulusResult res = estimate_pl_modulus(ps, {0.0}, {0.0}, 0.5, 10.0);
  CHECK(res.k_hat == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("estimate_pl_modulus: half-line map from the inequality fixture") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  PlModulusResult res = estimate_pl_modulus(ps, {0.0}, {0.5}, 0.4, 3.0);
  CHECK(res.k_hat == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("estimate_pl_modulus: role symmetry up to sampling noise") {
  // The pair enumeration contains both orders of every deterministic extreme,
  // so swapping roles only reshuffles the random pairs; k_hat must be stable
  // under that reshuffle.
  model::ProblemSpec ps = model::load_problem_file(fixture("shift_map.json"));
  SampleOptions a, b;
  a.seed = 5;
  b.seed = 77;
  PlModulusResult r1 = estimate_pl_modulus(ps, {0.0}, {0.0}, 0.5, 10.0, a);
  PlModulusResult r2 = estimate_pl_modulus(ps, {0.0}, {0.0}, 0.5, 10.0, b);
  CHECK(r1.k_hat == doctest::Approx(r2.k_hat).epsilon(0.1));
}

TEST_CASE("certified pseudo-Lipschitz map has finite estimated modulus") {
  model::ProblemSpec sec2 = model::load_problem_file(fixture("section2_example.json"));
  expr::EvalPoint z;
  z.x = {0.0};
  z.u = {0.0, 0.0};
  REQUIRE(certify_gamma_pl(sec2, z).certified);
  PlModulusResult res = estimate_pl_modulus(sec2, {0.0}, {0.0}, 0.3, 5.0);
  CHECK(std::isfinite(res.k_hat));
  CHECK(res.k_hat <= 1.5);  // Gamma(x) is the whole line here
}

TEST_CASE("estimate_bounded_slope: unconstrained problem has zero slope") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleA.json"));
  model::Trajectory traj;
  int N = 8;
  for (int k = 0; k <= N; ++k) {
    traj.grid.push_back(k / static_cast<double>(N));
    traj.x.push_back({k / static_cast<double>(N)});
    if (k < N) traj.u.push_back({1.0});
  }
  RadiusProfile R = RadiusProfile::from_problem(ps, N);
  BoundedSlopeResult res = estimate_bounded_slope(ps, traj, 0.1, R);
  CHECK(res.bounded);
  CHECK(res.k_hat <= 1e-9);
  CHECK(std::isinf(res.margin));
}

TEST_CASE("estimate_bounded_slope: exampleB has slope one and positive margin") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  model::Trajectory traj = exampleB_candidate(ps, 16);
  RadiusProfile R;
  R.infinite = false;
  R.values.assign(17, 1.0);
  BoundedSlopeResult res = estimate_bounded_slope(ps, traj, 0.05, R);
  CHECK(res.bounded);
  CHECK(res.k_hat == doctest::Approx(1.0).epsilon(0.05));
  CHECK(res.margin == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("estimate_bounded_slope: pure state constraint is unbounded") {
  model::ProblemSpec ps = model::load_problem_file(fixture("pure_state.json"));
  model::Trajectory traj;
  int N = 8;
  for (int k = 0; k <= N; ++k) {
    traj.grid.push_back(k / static_cast<double>(N));
    traj.x.push_back({0.0});
    if (k < N) traj.u.push_back({0.0});
  }
  RadiusProfile R = RadiusProfile::from_problem(ps, N);
  BoundedSlopeResult res = estimate_bounded_slope(ps, traj, 0.05, R);
  CHECK_FALSE(res.bounded);
  CHECK(std::isinf(res.k_hat));
  CHECK_FALSE(res.witness_xu.empty());
}

TEST_CASE("bounded-slope finiteness is invariant under positive row rescaling") {
  model::ProblemSpec scaled = model::load_problem(R"json({
    "n": 1, "m": 1, "l": 1, "s": 0, "t0": 0.0, "t1": 1.0,
    "F": "0", "f": "-x2", "phi": ["u1"],
    "g": ["3*(u1 - x1 - 1)"], "h": [],
    "U": {"lower": ["-inf"], "upper": ["inf"]},
    "E": {"x0": [{"fixed": 0.0}], "x1": ["free"]},
    "R": "inf"
  })json");
  model::Trajectory traj = exampleB_candidate(scaled, 16);
  RadiusProfile R;
  R.infinite = false;
  R.values.assign(17, 1.0);
  BoundedSlopeResult res = estimate_bounded_slope(scaled, traj, 0.05, R);
  CHECK(res.bounded);
  CHECK(std::isfinite(res.k_hat));
}

TEST_CASE("check_tempered_growth") {
  model::ProblemSpec psa = model::load_problem_file(fixture("exampleA.json"));
  model::Trajectory ta;
  int N = 8;
  for (int k = 0; k <= N; ++k) {
    ta.grid.push_back(k / static_cast<double>(N));
    ta.x.push_back({k / static_cast<double>(N)});
    if (k < N) ta.u.push_back({1.0});
  }
  TemperedGrowthResult ra =
      check_tempered_growth(psa, ta, 0.1, RadiusProfile::from_problem(psa, N), 0.5);
  CHECK(ra.holds);

  model::ProblemSpec psb = model::load_problem_file(fixture("exampleB.json"));
  model::Trajectory tb = exampleB_candidate(psb, 16);
  RadiusProfile R1;
  R1.infinite = false;
  R1.values.assign(17, 1.0);
  TemperedGrowthResult rb = check_tempered_growth(psb, tb, 0.05, R1, 0.5);
  CHECK(rb.holds);
  CHECK(rb.r0_attained <= 0.25);

  model::ProblemSpec bad = model::load_problem_file(fixture("empty_gamma.json"));
  model::Trajectory tbad;
  for (int k = 0; k <= 4; ++k) {
    tbad.grid.push_back(k / 4.0);
    tbad.x.push_back({0.0});
    if (k < 4) tbad.u.push_back({0.0});
  }
  TemperedGrowthResult rbad =
      check_tempered_growth(bad, tbad, 0.05, RadiusProfile::from_problem(bad, 4), 0.5);
  CHECK_FALSE(rbad.holds);
  CHECK(rbad.witness_present);
}

TEST_CASE("enumerate_cluster_points") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleA.json"));

  // Constant control: N+1 diagonal points sharing one velocity.
  model::Trajectory constant;
  for (int k = 0; k <= 4; ++k) {
    constant.grid.push_back(k / 4.0);
    constant.x.push_back({k / 4.0});
    if (k < 4) constant.u.push_back({1.0});
  }
  auto pts = enumerate_cluster_points(ps, constant, 1e-6);
  CHECK(pts.size() == 5);
  for (const ClusterPoint& cp : pts) CHECK(cp.v[0] == doctest::Approx(1.0));

  // Bang-bang switch carries both one-sided velocities at the switch node.
  model::Trajectory bang;
  double x = 0.0;
  for (int k = 0; k <= 4; ++k) {
    bang.grid.push_back(k / 4.0);
    bang.x.push_back({x});
    if (k < 4) {
      double u = k < 2 ? 0.0 : 1.0;
      bang.u.push_back({u});
      x += 0.25 * u;
    }
  }
  auto bpts = enumerate_cluster_points(ps, bang, 1e-6);
  CHECK(bpts.size() == 6);
  int at_switch = 0;
  for (const ClusterPoint& cp : bpts)
    if (std::abs(cp.t - 0.5) < 1e-12) ++at_switch;
  CHECK(at_switch == 2);
}
