#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>

#include "mixedcq/cq.hpp"
#include "mixedcq/errors.hpp"

using namespace mixedcq;
using namespace mixedcq::cq;

namespace {

std::string fixture(const std::string& name) {
  return std::string(FIXTURE_DIR) + "/" + name;
}

expr::EvalPoint origin(const model::ProblemSpec& ps) {
  expr::EvalPoint z;
  z.x.assign(ps.n, 0.0);
  z.u.assign(ps.m, 0.0);
  return z;
}

model::ProblemSpec inline_problem(const std::string& g_h_patch) {
  // n=1, m=1 scaffold with configurable g/h arrays.
  std::string text = R"json({
    "n": 1, "m": 1, "l": L, "s": S, "t0": 0.0, "t1": 1.0,
    "F": "0", "f": "0", "phi": ["u1"], GH,
    "U": {"lower": ["-inf"], "upper": ["inf"]},
    "E": {"x0": ["free"], "x1": ["free"]},
    "R": "inf"
  })json";
  auto replace = [&](const std::string& what, const std::string& with) {
    text.replace(text.find(what), what.size(), with);
  };
  std::size_t lpos = g_h_patch.find("\"g\"");
  std::size_t count_g = 0, count_h = 0;
  // crude count of entries per array
  auto count_entries = [&](const char* key) {
    std::size_t at = g_h_patch.find(key);
    std::size_t open = g_h_patch.find('[', at);
    std::size_t close = g_h_patch.find(']', open);
    std::string inner = g_h_patch.substr(open + 1, close - open - 1);
    if (inner.find_first_not_of(" \t\n") == std::string::npos) return std::size_t{0};
    return static_cast<std::size_t>(std::count(inner.begin(), inner.end(), ',')) + 1;
  };
  count_g = count_entries("\"g\"");
  count_h = count_entries("\"h\"");
  (void)lpos;
  replace("L", std::to_string(count_g));
  replace("S", std::to_string(count_h));
  replace("GH", g_h_patch);
  return model::load_problem(text);
}

// Independent recomputation of the witness combination at z; returns the
// (x-row, u-row) outputs.
std::pair<num::Vec, num::Vec> recombine(const model::ProblemSpec& ps, const expr::EvalPoint& z,
                                        const CqWitness& w) {
  num::Vec xrow(ps.n, 0.0), urow(ps.m, 0.0);
  auto add = [&](const expr::ExprAst& e, double coef) {
    num::Vec full = expr::gradient(e, z).grad;
    for (int i = 0; i < ps.n; ++i) xrow[i] += coef * full[1 + i];
    for (int j = 0; j < ps.m; ++j) urow[j] += coef * full[1 + ps.n + j];
  };
  for (int i = 0; i < ps.l; ++i)
    if (w.lambda_g[i] != 0.0) add(ps.g[i], w.lambda_g[i]);
  for (int j = 0; j < ps.s; ++j)
    if (w.varpi[j] != 0.0) add(ps.h[j], w.varpi[j]);
  for (int j = 0; j < ps.m; ++j) {
    urow[j] -= w.eta_lower[j];
    urow[j] += w.eta_upper[j];
  }
  return {xrow, urow};
}

double multiplier_mass(const CqWitness& w) {
  double mass = 0.0;
  for (double v : w.lambda_g) mass += std::abs(v);
  for (double v : w.varpi) mass += std::abs(v);
  return mass;
}

}  // namespace

TEST_CASE("pointwise CQs on the linearly dependent equality pair") {
  model::ProblemSpec ps = model::load_problem_file(fixture("section2_example.json"));
  expr::EvalPoint z = origin(ps);

  CqVerdict nnamcq = check_pointwise_cq(CqKind::Nnamcq, ps, z);
  CHECK_FALSE(nnamcq.holds());
  REQUIRE(nnamcq.witness.has_value());
  auto [xr, ur] = recombine(ps, z, *nnamcq.witness);
  CHECK(num::inf_norm(xr) <= 1e-7);
  CHECK(num::inf_norm(ur) <= 1e-7);
  CHECK(multiplier_mass(*nnamcq.witness) >= 0.5);
  // The certificate must follow the dependence ratio varpi1 = -2 varpi2.
  CHECK(nnamcq.witness->varpi[0] == doctest::Approx(-2.0 * nnamcq.witness->varpi[1]));

  CHECK(check_pointwise_cq(CqKind::Wbcq, ps, z).holds());
  CHECK_FALSE(check_pointwise_cq(CqKind::Mfc, ps, z).holds());

  CqVerdict ccq = check_pointwise_cq(CqKind::Ccq, ps, z);
  CHECK_FALSE(ccq.holds());
  REQUIRE(ccq.modulus.has_value());
  CHECK(std::isinf(*ccq.modulus));

  CHECK_FALSE(check_pointwise_cq(CqKind::Plicq, ps, z).holds());
}

TEST_CASE("pure state constraint: NNAMCQ holds, WBCQ and MFC fail") {
  model::ProblemSpec ps = model::load_problem_file(fixture("pure_state.json"));
  expr::EvalPoint z = origin(ps);  // g = x1 = 0 active

  CHECK(check_pointwise_cq(CqKind::Nnamcq, ps, z).holds());

  CqVerdict wbcq = check_pointwise_cq(CqKind::Wbcq, ps, z);
  CHECK_FALSE(wbcq.holds());
  REQUIRE(wbcq.witness.has_value());
  CHECK(std::abs(wbcq.witness->alpha[0]) == doctest::Approx(1.0));
  CHECK(wbcq.witness->lambda_g[0] == doctest::Approx(1.0));
  auto [xr, ur] = recombine(ps, z, *wbcq.witness);
  CHECK(num::inf_norm(ur) <= 1e-7);
  CHECK(xr[0] == doctest::Approx(wbcq.witness->alpha[0]));

  CqVerdict mfc = check_pointwise_cq(CqKind::Mfc, ps, z);
  CHECK_FALSE(mfc.holds());
  REQUIRE(mfc.witness.has_value());
  CHECK(multiplier_mass(*mfc.witness) >= 0.5);
}

TEST_CASE("exampleB boundary point satisfies PLICQ") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  expr::EvalPoint z;
  z.x = {0.0};
  z.u = {1.0};
  CHECK(check_pointwise_cq(CqKind::Plicq, ps, z).holds());
  CHECK(check_pointwise_cq(CqKind::Mfc, ps, z).holds());
  CqVerdict ccq = check_pointwise_cq(CqKind::Ccq, ps, z);
  CHECK(ccq.holds());
  CHECK(std::isfinite(*ccq.modulus));
}

TEST_CASE("pointwise verdicts are invariant under positive row rescaling") {
  model::ProblemSpec base = model::load_problem_file(fixture("section2_example.json"));
  model::ProblemSpec scaled = model::load_problem(R"json({
    "n": 1, "m": 2, "l": 0, "s": 2, "t0": 0.0, "t1": 1.0,
    "F": "0", "f": "0", "phi": ["u1"], "g": [],
    "h": ["4*(x1 + u1 - u2)", "0.5*(2*x1 + 2*u1 - 2*u2)"],
    "U": {"lower": ["-inf", "-inf"], "upper": ["inf", "inf"]},
    "E": {"x0": ["free"], "x1": ["free"]},
    "R": "inf"
  })json");
  expr::EvalPoint z = origin(base);
  for (CqKind kind : {CqKind::Nnamcq, CqKind::Wbcq, CqKind::Mfc, CqKind::Plicq}) {
    CHECK(check_pointwise_cq(kind, base, z).holds() ==
          check_pointwise_cq(kind, scaled, z).holds());
  }
}

TEST_CASE("infeasible point is rejected") {
  model::ProblemSpec ps = model::load_problem_file(fixture("exampleB.json"));
  expr::EvalPoint z;
  z.x = {0.0};
  z.u = {2.0};  // g = 1 > eps_act
  CHECK_THROWS_AS(check_pointwise_cq(CqKind::Nnamcq, ps, z), NumericError);
}

TEST_CASE("neighborhood: constant-gradient dependence persists (CPLD holds)") {
  model::ProblemSpec ps = model::load_problem_file(fixture("section2_example.json"));
  expr::EvalPoint z = origin(ps);
  CHECK(check_neighborhood_cq(CqKind::Cpld, ps, z).holds());
  CHECK(check_neighborhood_cq(CqKind::Rcpld, ps, z).holds());
  CHECK(check_neighborhood_cq(CqKind::Crsc, ps, z).holds());
}

TEST_CASE("neighborhood: opposite active gradients keep CPLD") {
  model::ProblemSpec ps = inline_problem(R"gh("g": ["x1", "-x1"], "h": [])gh");
  expr::EvalPoint z = origin(ps);
  CHECK_FALSE(check_pointwise_cq(CqKind::Plicq, ps, z).holds());
  CHECK(check_neighborhood_cq(CqKind::Cpld, ps, z).holds());
}

TEST_CASE("neighborhood: vanishing equality gradient breaks RCPLD") {
  model::ProblemSpec ps = inline_problem(R"gh("g": [], "h": ["u1^2"])gh");
  expr::EvalPoint z = origin(ps);
  CqVerdict rcpld = check_neighborhood_cq(CqKind::Rcpld, ps, z);
  CHECK_FALSE(rcpld.holds());
  REQUIRE(rcpld.witness.has_value());
  CHECK_FALSE(rcpld.witness->sample.empty());
  CHECK_FALSE(check_neighborhood_cq(CqKind::Cpld, ps, z).holds());
}

TEST_CASE("neighborhood checks reject nonsmooth g") {
  model::ProblemSpec ps = inline_problem(R"gh("g": ["abs(u1)"], "h": [])gh");
  expr::EvalPoint z = origin(ps);
  CHECK_THROWS_AS(check_neighborhood_cq(CqKind::Cpld, ps, z), NumericError);
}

TEST_CASE("structural calmness") {
  CHECK(check_structural_calmness(model::load_problem_file(fixture("section2_example.json"))).holds());
  CHECK(check_structural_calmness(model::load_problem_file(fixture("exampleB.json"))).holds());
  model::ProblemSpec quad = inline_problem(R"gh("g": ["x1^2"], "h": [])gh");
  CqVerdict v = check_structural_calmness(quad);
  CHECK_FALSE(v.holds());
  CHECK(v.outcome == Outcome::Unknown);
}

TEST_CASE("estimate_error_bound: half-space has ratio one") {
  model::ProblemSpec ps = inline_problem(R"gh("g": ["x1"], "h": [])gh");
  expr::EvalPoint z = origin(ps);
  ErrorBoundOptions opts;
  opts.num_samples = 24;
  CqVerdict v = estimate_error_bound(ps, z, opts);
  CHECK(v.holds());
  REQUIRE(v.modulus.has_value());
  CHECK(*v.modulus == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("estimate_error_bound: squared constraint has no stable ratio") {
  model::ProblemSpec ps = inline_problem(R"gh("g": ["x1^2"], "h": [])gh");
  expr::EvalPoint z = origin(ps);
  ErrorBoundOptions opts;
  opts.num_samples = 24;
  CqVerdict v = estimate_error_bound(ps, z, opts);
  CHECK_FALSE(v.holds());
  CHECK(*v.modulus > 50.0);  // ratios blow up like 1/|x|
}

TEST_CASE("estimate_error_bound: affine equality pair is stable") {
  model::ProblemSpec ps = model::load_problem_file(fixture("section2_example.json"));
  expr::EvalPoint z = origin(ps);
  ErrorBoundOptions opts;
  opts.num_samples = 16;
  CqVerdict v = estimate_error_bound(ps, z, opts);
  CHECK(v.holds());
  CHECK(std::isfinite(*v.modulus));
}

TEST_CASE("global error-bound structure") {
  model::ProblemSpec holds1 = model::load_problem(R"json({
    "n": 1, "m": 1, "l": 2, "s": 0, "t0": 0.0, "t1": 1.0,
    "F": "0", "f": "0", "phi": ["u1"],
    "g": ["x1^2 + u1", "x1 - 1 + 2*u1"], "h": [],
    "U": {"lower": ["-inf"], "upper": ["inf"]},
    "E": {"x0": ["free"], "x1": ["free"]},
    "R": "inf"
  })json");
  CqVerdict v1 = check_global_eb_structure(holds1);
  CHECK(v1.holds());
  CHECK(v1.note.find("u1") != std::string::npos);

  // Fully affine rows admit the x coordinate as the monotone slot.
  model::ProblemSpec affine = model::load_problem(R"json({
    "n": 1, "m": 1, "l": 2, "s": 0, "t0": 0.0, "t1": 1.0,
    "F": "0", "f": "0", "phi": ["u1"],
    "g": ["x1 + u1", "x1 - u1"], "h": [],
    "U": {"lower": ["-inf"], "upper": ["inf"]},
    "E": {"x0": ["free"], "x1": ["free"]},
    "R": "inf"
  })json");
  CHECK(check_global_eb_structure(affine).holds());

  model::ProblemSpec fails = model::load_problem(R"json({
    "n": 1, "m": 1, "l": 2, "s": 0, "t0": 0.0, "t1": 1.0,
    "F": "0", "f": "0", "phi": ["u1"],
    "g": ["x1^2 + u1", "x1^2 - u1"], "h": [],
    "U": {"lower": ["-inf"], "upper": ["inf"]},
    "E": {"x0": ["free"], "x1": ["free"]},
    "R": "inf"
  })json");
  CHECK_FALSE(check_global_eb_structure(fails).holds());

  model::ProblemSpec single = inline_problem(R"gh("g": ["u1"], "h": [])gh");
  CHECK(check_global_eb_structure(single).holds());
}

TEST_CASE("audit: seeded implication chain has no violations") {
  AuditReport report = audit_implication_chain(42, 30);
  for (const AuditViolation& v : report.violations) {
    MESSAGE("rule ", v.rule, " detail ", v.detail, "\n", v.instance);
  }
  CHECK(report.violations.empty());
  CHECK(report.count == 30);
}

TEST_CASE("verdict serialization carries kind/holds/witness") {
  model::ProblemSpec ps = model::load_problem_file(fixture("section2_example.json"));
  CqVerdict v = check_pointwise_cq(CqKind::Nnamcq, ps, origin(ps));
  std::string js = verdict_to_json(v);
  CHECK(js.find("\"kind\":\"NNAMCQ\"") != std::string::npos);
  CHECK(js.find("\"holds\":false") != std::string::npos);
  CHECK(js.find("witness") != std::string::npos);
}
