#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mixedcq/errors.hpp"
#include "mixedcq/expr.hpp"
#include "mixedcq/rng.hpp"

using namespace mixedcq;
using namespace mixedcq::expr;

namespace {

EvalPoint point(double t, std::vector<double> x, std::vector<double> u) {
  EvalPoint p;
  p.t = t;
  p.x = std::move(x);
  p.u = std::move(u);
  return p;
}

}  // namespace

TEST_CASE("parse: variables and dimensions") {
  ExprAst e = parse_expression("u1 - x1 - 1", {1, 1});
  CHECK(e.node_count == 5);
  CHECK(evaluate(e, point(0, {0}, {1})) == doctest::Approx(0.0));

  ExprAst phi1 = parse_expression("x1 + u1 - u2", {1, 2});
  CHECK(evaluate(phi1, point(0, {1}, {2, 3})) == doctest::Approx(0.0));

  ExprAst mx = parse_expression("max(x1, 0) * u1", {1, 1});
  CHECK(evaluate(mx, point(0, {2}, {3})) == doctest::Approx(6.0));
  CHECK(evaluate(mx, point(0, {-2}, {3})) == doctest::Approx(0.0));
}

TEST_CASE("parse: errors carry byte offsets") {
  CHECK_THROWS_AS(parse_expression("x1 + ", {1, 1}), ParseError);
  CHECK_THROWS_AS(parse_expression("y1 + 1", {1, 1}), ParseError);
  CHECK_THROWS_AS(parse_expression("x2 + 1", {1, 1}), ParseError);  // index out of range
  CHECK_THROWS_AS(parse_expression("u1^-1", {1, 1}), ParseError);
  CHECK_THROWS_AS(parse_expression("u1^x1", {1, 1}), ParseError);
  try {
    parse_expression("x1 + @", {1, 1});
    FAIL("expected throw");
  } catch (const ParseError& err) {
    CHECK(err.offset == 5);
  }
}

TEST_CASE("evaluate: examples and domain errors") {
  CHECK(evaluate(parse_expression("2*x1 + 2*u1 - 2*u2", {1, 2}), point(0, {1}, {2, 3})) ==
        doctest::Approx(0.0));
  CHECK(evaluate(parse_expression("abs(x1)", {1, 0}), point(0, {-2}, {})) == doctest::Approx(2.0));
  CHECK_THROWS_AS(evaluate(parse_expression("log(x1)", {1, 0}), point(0, {-1}, {})), DomainError);
  CHECK_THROWS_AS(evaluate(parse_expression("1/x1", {1, 0}), point(0, {0}, {})), DomainError);
  CHECK(evaluate(parse_expression("x1^0", {1, 0}), point(0, {0}, {})) == doctest::Approx(1.0));
}

TEST_CASE("gradient: active branch, paper gradients") {
  GradResult g = gradient(parse_expression("x1 + u1 - u2", {1, 2}), point(0.3, {1}, {2, 3}));
  REQUIRE(g.grad.size() == 4);
  CHECK(g.grad[0] == doctest::Approx(0.0));
  CHECK(g.grad[1] == doctest::Approx(1.0));
  CHECK(g.grad[2] == doctest::Approx(1.0));
  CHECK(g.grad[3] == doctest::Approx(-1.0));

  GradResult p2 = gradient(parse_expression("x1^2", {1, 0}), point(0, {3}, {}));
  CHECK(p2.grad[1] == doctest::Approx(6.0));

  // max(x1, 2*x1) at x=-1: branch x1 is active (values -1 vs -2).
  GradResult mb = gradient(parse_expression("max(x1, 2*x1)", {1, 0}), point(0, {-1}, {}));
  CHECK(mb.value == doctest::Approx(-1.0));
  CHECK(mb.grad[1] == doctest::Approx(1.0));
  CHECK_FALSE(mb.tie_warning);

  GradResult tie = gradient(parse_expression("max(x1, 2*x1)", {1, 0}), point(0, {0}, {}));
  CHECK(tie.tie_warning);
  CHECK(tie.grad[1] == doctest::Approx(1.0));  // first operand wins the tie
}

TEST_CASE("gradient matches central differences at random smooth points") {
  const std::vector<std::pair<std::string, Dims>> fixtures = {
      {"u1^2/2", {1, 1}},
      {"u1 - x1 - 1", {1, 1}},
      {"x1 + u1 - u2", {1, 2}},
      {"2*x1 + 2*u1 - 2*u2", {1, 2}},
      {"sin(x1)*cos(u1) + exp(x1/4)", {1, 1}},
      {"x1^3 - 2*x1*u1 + u1^2", {1, 1}},
      {"log(2 + x1^2) + x2*u1", {2, 1}},
      {"max(x1, u1) + abs(x2)", {2, 1}},
  };
  num::CounterRng rng(99);
  const double h = 1e-6;
  for (std::size_t f = 0; f < fixtures.size(); ++f) {
    ExprAst e = parse_expression(fixtures[f].first, fixtures[f].second);
    int checked = 0;
    std::uint64_t draw = 0;
    while (checked < 100) {
      EvalPoint p;
      p.t = rng.uniform(f * 31, draw * 7, -1.0, 1.0);
      for (int i = 0; i < e.dims.n; ++i) p.x.push_back(rng.uniform(f * 31 + 1, draw * 7 + i, -2.0, 2.0));
      for (int j = 0; j < e.dims.m; ++j) p.u.push_back(rng.uniform(f * 31 + 2, draw * 7 + j, -2.0, 2.0));
      ++draw;
      GradResult g = gradient(e, p, 1e-7);
      if (g.tie_warning) continue;  // stay away from kinks
      for (int k = 0; k < 1 + e.dims.n + e.dims.m; ++k) {
        EvalPoint hi = p, lo = p;
        double* hv = k == 0 ? &hi.t : (k <= e.dims.n ? &hi.x[k - 1] : &hi.u[k - 1 - e.dims.n]);
        double* lv = k == 0 ? &lo.t : (k <= e.dims.n ? &lo.x[k - 1] : &lo.u[k - 1 - e.dims.n]);
        *hv += h;
        *lv -= h;
        double fd = (evaluate(e, hi) - evaluate(e, lo)) / (2 * h);
        double scale = std::max({1.0, std::abs(fd), std::abs(g.grad[k])});
        CHECK(std::abs(g.grad[k] - fd) <= 1e-5 * scale);
      }
      ++checked;
    }
  }
}

TEST_CASE("clarke_generators: branch enumeration") {
  GeneratorSet s = clarke_generators(parse_expression("abs(x1)", {1, 0}), point(0, {0}, {}), 1e-9);
  REQUIRE(s.gradients.size() == 2);
  CHECK(s.exact);
  CHECK(((s.gradients[0][0] == 1.0 && s.gradients[1][0] == -1.0) ||
         (s.gradients[0][0] == -1.0 && s.gradients[1][0] == 1.0)));

  GeneratorSet smooth = clarke_generators(parse_expression("x1 + u1", {1, 1}), point(0, {0.5}, {2}));
  REQUIRE(smooth.gradients.size() == 1);
  CHECK(smooth.exact);
  CHECK(smooth.gradients[0][0] == doctest::Approx(1.0));
  CHECK(smooth.gradients[0][1] == doctest::Approx(1.0));

  GeneratorSet mm = clarke_generators(parse_expression("max(u1, -u1)", {1, 1}), point(0, {0}, {0}));
  REQUIRE(mm.gradients.size() == 2);
  CHECK(mm.exact);
  CHECK(mm.gradients[0][1] == doctest::Approx(1.0));
  CHECK(mm.gradients[1][1] == doctest::Approx(-1.0));

  // Nested nonsmooth nodes are overapproximated and flagged.
  GeneratorSet nest =
      clarke_generators(parse_expression("abs(u1) + abs(u2)", {0, 2}), point(0, {}, {0, 0}));
  CHECK(nest.gradients.size() == 4);
  CHECK_FALSE(nest.exact);
}

TEST_CASE("clarke at a smooth point equals the gradient") {
  ExprAst e = parse_expression("max(x1, 2*x1) + u1^2", {1, 1});
  EvalPoint p = point(0, {-1}, {2});
  GeneratorSet s = clarke_generators(e, p);
  GradResult g = gradient(e, p);
  REQUIRE(s.gradients.size() == 1);
  CHECK(s.exact);
  CHECK(s.gradients[0][0] == doctest::Approx(g.grad[1]));
  CHECK(s.gradients[0][1] == doctest::Approx(g.grad[2]));
}

TEST_CASE("depends_on") {
  ExprAst e = parse_expression("x1 + u1", {1, 2});
  CHECK(depends_on_control(e, 0));
  CHECK_FALSE(depends_on_control(e, 1));
  CHECK(depends_on_state(parse_expression("max(x1,0)", {1, 0}), 0));
  CHECK_FALSE(depends_on_time(e));
  CHECK(depends_on_time(parse_expression("t*u1", {0, 1})));
}

TEST_CASE("parse/print round trip is structurally identical") {
  const std::vector<std::pair<std::string, Dims>> cases = {
      {"u1 - x1 - 1", {1, 1}},
      {"-2*x1 + u1^3", {1, 1}},
      {"-(x1 + u1)^2", {1, 1}},
      {"max(x1, 0) * u1 / (2 + abs(u1))", {1, 1}},
      {"sin(t) - cos(x1)*exp(u1) + log(2.5)", {1, 1}},
      {"x1 - (u1 - u2) - 0.125", {1, 2}},
      {"1e-3 * x1^2", {1, 0}},
  };
  std::function<bool(const Node*, const Node*)> same = [&](const Node* a, const Node* b) {
    if (a->kind != b->kind || a->index != b->index || a->value != b->value) return false;
    if (!!a->a != !!b->a || !!a->b != !!b->b) return false;
    if (a->a && !same(a->a.get(), b->a.get())) return false;
    if (a->b && !same(a->b.get(), b->b.get())) return false;
    return true;
  };
  for (const auto& [text, dims] : cases) {
    ExprAst e1 = parse_expression(text, dims);
    std::string printed = to_string(e1);
    ExprAst e2 = parse_expression(printed, dims);
    CHECK_MESSAGE(same(e1.root.get(), e2.root.get()), text, " -> ", printed);
    CHECK(to_string(e2) == printed);
  }
}

TEST_CASE("structure: smooth / affine / affine_split") {
  CHECK(is_smooth(parse_expression("x1^2 + sin(u1)", {1, 1})));
  CHECK_FALSE(is_smooth(parse_expression("abs(x1)", {1, 0})));
  CHECK(is_affine(parse_expression("x1 + 2*u1 - 3", {1, 1})));
  CHECK(is_affine(parse_expression("2*x1 + 2*u1 - 2*u2", {1, 2})));
  CHECK_FALSE(is_affine(parse_expression("x1^2", {1, 0})));
  CHECK_FALSE(is_affine(parse_expression("x1*u1", {1, 1})));

  AffineSplit sp = affine_split(parse_expression("x1^2 + u1 - 2*x1 + 1", {1, 1}));
  CHECK(sp.linear[1] == doctest::Approx(-2.0));  // x1
  CHECK(sp.linear[2] == doctest::Approx(1.0));   // u1
  CHECK(sp.constant == doctest::Approx(1.0));
  REQUIRE(sp.remainder.valid());
  CHECK(evaluate(sp.remainder, point(0, {3}, {0})) == doctest::Approx(9.0));
  CHECK(depends_on_state(sp.remainder, 0));
  CHECK_FALSE(depends_on_control(sp.remainder, 0));

  AffineSplit pure = affine_split(parse_expression("u1 / 2 - x1", {1, 1}));
  CHECK_FALSE(pure.remainder.valid());
  CHECK(pure.linear[1] == doctest::Approx(-1.0));
  CHECK(pure.linear[2] == doctest::Approx(0.5));
}
