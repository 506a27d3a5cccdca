#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mixedcq/numkernel.hpp"

namespace mixedcq::expr {

using num::Vec;

// Variables are t, x1..xn, u1..um.  ASTs are immutable after construction;
// all operations here are pure and safe for concurrent readers.
enum class NodeKind {
  Constant, Time, State, Control,
  Neg, Sin, Cos, Exp, Log, Abs,
  Add, Sub, Mul, Div, Pow, Max, Min,
};

struct Node {
  NodeKind kind;
  double value = 0.0;  // Constant
  int index = 0;       // State/Control (0-based); Pow exponent
  std::shared_ptr<const Node> a, b;
};
using NodePtr = std::shared_ptr<const Node>;

struct Dims {
  int n = 0;  // states
  int m = 0;  // controls
};

struct Tape;  // flat evaluation program, built once per AST

struct ExprAst {
  NodePtr root;
  Dims dims;
  int node_count = 0;
  int depth = 0;
  std::shared_ptr<const Tape> tape;

  bool valid() const { return root != nullptr; }
};

struct EvalPoint {
  double t = 0.0;
  Vec x;
  Vec u;
};

// Finite bundle of branch gradients with respect to (x, u); the convex hull
// represents the generalized gradient.  `exact` is cleared when nested
// nonsmooth nodes force a branch-product overapproximation.
struct GeneratorSet {
  std::vector<Vec> gradients;  // each of length n+m
  bool exact = true;
};

struct GradResult {
  double value = 0.0;
  Vec grad;                 // length 1+n+m, ordered (t, x, u)
  bool tie_warning = false; // some max/min/abs was within tie_tol of a tie
};

ExprAst parse_expression(const std::string& text, Dims dims);
std::string to_string(const ExprAst& ast);

double evaluate(const ExprAst& ast, const EvalPoint& p);

// Derivative of the active smooth branch; at an exact tie the first operand
// wins (abs takes the nonnegative branch).
GradResult gradient(const ExprAst& ast, const EvalPoint& p, double tie_tol = 1e-9);

GeneratorSet clarke_generators(const ExprAst& ast, const EvalPoint& p, double tie_tol = 1e-9);

bool depends_on_time(const ExprAst& ast);
bool depends_on_state(const ExprAst& ast, int i);    // 0-based
bool depends_on_control(const ExprAst& ast, int j);  // 0-based

bool is_smooth(const ExprAst& ast);  // free of abs/max/min
bool is_affine(const ExprAst& ast);  // polynomial of total degree <= 1, no transcendentals of variables

// Split into b^T (t,x,u) + c0 plus a remainder holding every term that is not
// syntactically linear.  Used by the structural error-bound test.
struct AffineSplit {
  Vec linear;          // length 1+n+m, ordered (t, x, u)
  double constant = 0.0;
  ExprAst remainder;   // invalid() when every term was linear
};
AffineSplit affine_split(const ExprAst& ast);

ExprAst constant_expr(double v, Dims dims);

}  // namespace mixedcq::expr
