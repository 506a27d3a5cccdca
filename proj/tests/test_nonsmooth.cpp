#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mixedcq/errors.hpp"
#include "mixedcq/nonsmooth.hpp"
#include "mixedcq/rng.hpp"

using namespace mixedcq;
using namespace mixedcq::nonsmooth;

TEST_CASE("normal_cone_box") {
  model::Box U;
  U.lower = {-1.0};
  U.upper = {1.0};
  num::ConeDescription at_top = normal_cone_box(U, {1.0}, 1e-6);
  REQUIRE(at_top.nonneg_generators.size() == 1);
  CHECK(at_top.nonneg_generators[0][0] == doctest::Approx(1.0));

  model::Box freebox;
  freebox.lower = {-num::kInf};
  freebox.upper = {num::kInf};
  CHECK(normal_cone_box(freebox, {3.7}, 1e-6).trivial());

  model::Box pinned;
  pinned.lower = {0.0};
  pinned.upper = {0.0};
  num::ConeDescription both = normal_cone_box(pinned, {0.0}, 1e-6);
  REQUIRE(both.nonneg_generators.size() == 2);
  CHECK(both.nonneg_generators[0][0] * both.nonneg_generators[1][0] == doctest::Approx(-1.0));

  CHECK_THROWS_AS(normal_cone_box(U, {1.5}, 1e-6), NumericError);
}

TEST_CASE("normal_cone_omega") {
  num::ConeDescription active = normal_cone_omega(1, 0, {0.0}, {}, 1e-6);
  REQUIRE(active.nonneg_generators.size() == 1);
  CHECK(active.span_basis.empty());

  num::ConeDescription inactive = normal_cone_omega(1, 0, {-0.5}, {}, 1e-6);
  CHECK(inactive.trivial());

  num::ConeDescription eqs = normal_cone_omega(0, 2, {}, {0.0, 0.0}, 1e-6);
  CHECK(eqs.nonneg_generators.empty());
  REQUIRE(eqs.span_basis.size() == 2);

  CHECK_THROWS_AS(normal_cone_omega(1, 0, {0.5}, {}, 1e-6), NumericError);
  CHECK_THROWS_AS(normal_cone_omega(0, 1, {}, {0.5}, 1e-6), NumericError);
}

TEST_CASE("normal_cone_omega keeps complementary slackness at cone level") {
  // Generators must touch only active slots: lambda_i g_i = 0 for each one.
  num::ConeDescription cone = normal_cone_omega(3, 1, {0.0, -0.7, -1e-9}, {0.0}, 1e-6);
  for (const auto& gen : cone.nonneg_generators) {
    CHECK(gen[1] == 0.0);  // inactive slot untouched
  }
  REQUIRE(cone.nonneg_generators.size() == 2);  // slots 0 and 2
}

TEST_CASE("weighted_subdiff_generators") {
  expr::EvalPoint z;
  z.x = {1.0};
  z.u = {2.0, 3.0};
  std::vector<expr::ExprAst> Phi = {expr::parse_expression("x1 + u1 - u2", {1, 2}),
                                    expr::parse_expression("2*x1 + 2*u1 - 2*u2", {1, 2})};

  SUBCASE("smooth: single gradient, paper's cancellation at lambda1 = -2*lambda2") {
    expr::GeneratorSet gs = weighted_subdiff_generators(Phi, z, {-2.0, 1.0});
    REQUIRE(gs.gradients.size() == 1);
    CHECK(gs.exact);
    for (double v : gs.gradients[0]) CHECK(v == doctest::Approx(0.0));
  }

  SUBCASE("zero multipliers give the zero set") {
    expr::GeneratorSet gs = weighted_subdiff_generators(Phi, z, {0.0, 0.0});
    REQUIRE(gs.gradients.size() == 1);
    CHECK(num::inf_norm(gs.gradients[0]) == 0.0);
  }

  SUBCASE("linearity in lambda for smooth components") {
    num::CounterRng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      num::Vec a = {rng.uniform(1, trial, -2, 2), rng.uniform(1, trial + 100, -2, 2)};
      num::Vec b = {rng.uniform(2, trial, -2, 2), rng.uniform(2, trial + 100, -2, 2)};
      num::Vec ab = {a[0] + b[0], a[1] + b[1]};
      auto ga = weighted_subdiff_generators(Phi, z, a).gradients[0];
      auto gb = weighted_subdiff_generators(Phi, z, b).gradients[0];
      auto gab = weighted_subdiff_generators(Phi, z, ab).gradients[0];
      for (int k = 0; k < 3; ++k) CHECK(gab[k] == doctest::Approx(ga[k] + gb[k]));
    }
  }
}

TEST_CASE("weighted_subdiff_generators: nonsmooth branch enumeration") {
  expr::EvalPoint z;
  z.x = {0.0};
  z.u = {0.0};
  std::vector<expr::ExprAst> Phi = {expr::parse_expression("abs(u1)", {1, 1})};
  expr::GeneratorSet gs = weighted_subdiff_generators(Phi, z, {1.0});
  REQUIRE(gs.gradients.size() == 2);
  CHECK(gs.exact);
  CHECK(gs.gradients[0][1] * gs.gradients[1][1] == doctest::Approx(-1.0));
}

TEST_CASE("active_sets") {
  model::ProblemSpec ps = model::load_problem(R"json({
    "n": 1, "m": 1, "l": 2, "s": 0, "t0": 0.0, "t1": 1.0,
    "F": "0", "f": "0", "phi": ["u1"],
    "g": ["u1 - x1 - 1", "x1 - 5"], "h": [],
    "U": {"lower": [0.0], "upper": [2.0]},
    "E": {"x0": ["free"], "x1": ["free"]},
    "R": "inf"
  })json");
  expr::EvalPoint z;
  z.x = {0.0};
  z.u = {1.0};
  ActiveSetInfo info = active_sets(ps, z, 1e-6);
  REQUIRE(info.active_g.size() == 1);
  CHECK(info.active_g[0] == 0);
  CHECK(info.lower_faces.empty());
  CHECK(info.upper_faces.empty());

  z.u = {0.0};
  ActiveSetInfo at_face = active_sets(ps, z, 1e-6);
  CHECK(at_face.active_g.empty());
  REQUIRE(at_face.lower_faces.size() == 1);
}
