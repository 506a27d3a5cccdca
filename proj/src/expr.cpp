#include "mixedcq/expr.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>

#include "mixedcq/errors.hpp"

namespace mixedcq::expr {

namespace {

// ---------------------------------------------------------------------------
// Flat postorder tape; built once per AST so evaluation loops do not walk the
// pointer tree.

struct Op {
  NodeKind kind;
  double cval = 0.0;
  int idx = 0;
};

}  // namespace

struct Tape {
  std::vector<Op> ops;
  int max_stack = 0;
  int nonsmooth_count = 0;
};

namespace {

void compile_node(const Node* nd, std::vector<Op>& out) {
  if (nd->a) compile_node(nd->a.get(), out);
  if (nd->b) compile_node(nd->b.get(), out);
  out.push_back({nd->kind, nd->value, nd->index});
}

std::shared_ptr<const Tape> compile(const NodePtr& root) {
  auto tape = std::make_shared<Tape>();
  compile_node(root.get(), tape->ops);
  int depth = 0;
  for (const Op& op : tape->ops) {
    switch (op.kind) {
      case NodeKind::Constant:
      case NodeKind::Time:
      case NodeKind::State:
      case NodeKind::Control:
        ++depth;
        break;
      case NodeKind::Add:
      case NodeKind::Sub:
      case NodeKind::Mul:
      case NodeKind::Div:
      case NodeKind::Max:
      case NodeKind::Min:
        --depth;
        break;
      default:
        break;  // unary: depth unchanged
    }
    tape->max_stack = std::max(tape->max_stack, depth);
    if (op.kind == NodeKind::Abs || op.kind == NodeKind::Max || op.kind == NodeKind::Min)
      ++tape->nonsmooth_count;
  }
  return tape;
}

int count_nodes(const Node* nd) {
  return 1 + (nd->a ? count_nodes(nd->a.get()) : 0) + (nd->b ? count_nodes(nd->b.get()) : 0);
}

int tree_depth(const Node* nd) {
  int d = 0;
  if (nd->a) d = std::max(d, tree_depth(nd->a.get()));
  if (nd->b) d = std::max(d, tree_depth(nd->b.get()));
  return 1 + d;
}

ExprAst finalize(NodePtr root, Dims dims) {
  ExprAst ast;
  ast.root = std::move(root);
  ast.dims = dims;
  ast.node_count = count_nodes(ast.root.get());
  ast.depth = tree_depth(ast.root.get());
  ast.tape = compile(ast.root);
  return ast;
}

// ---------------------------------------------------------------------------
// Lexer / parser.

enum class Tok { Num, Ident, Plus, Minus, Star, Slash, Caret, LParen, RParen, Comma, End };

struct Token {
  Tok kind;
  double num = 0.0;
  std::string ident;
  std::size_t offset = 0;
};

class Lexer {
 public:
  explicit Lexer(const std::string& s) : s_(s) { advance(); }

  const Token& peek() const { return tok_; }
  Token take() {
    Token t = tok_;
    advance();
    return t;
  }

 private:
  void advance() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    tok_.offset = pos_;
    if (pos_ >= s_.size()) {
      tok_.kind = Tok::End;
      return;
    }
    char c = s_[pos_];
    if (static_cast<unsigned char>(c) > 0x7f) throw ParseError("non-ASCII byte in expression", pos_);
    switch (c) {
      case '+': tok_.kind = Tok::Plus; ++pos_; return;
      case '-': tok_.kind = Tok::Minus; ++pos_; return;
      case '*': tok_.kind = Tok::Star; ++pos_; return;
      case '/': tok_.kind = Tok::Slash; ++pos_; return;
      case '^': tok_.kind = Tok::Caret; ++pos_; return;
      case '(': tok_.kind = Tok::LParen; ++pos_; return;
      case ')': tok_.kind = Tok::RParen; ++pos_; return;
      case ',': tok_.kind = Tok::Comma; ++pos_; return;
      default: break;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t start = pos_;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      if (pos_ < s_.size() && s_[pos_] == '.') {
        ++pos_;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      }
      if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
        std::size_t mark = pos_++;
        if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) ++pos_;
        if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_])))
          pos_ = mark;  // not an exponent; leave for the ident path to reject
        else
          while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      }
      double v = 0.0;
      auto res = std::from_chars(s_.data() + start, s_.data() + pos_, v);
      if (res.ec != std::errc() || res.ptr != s_.data() + pos_)
        throw ParseError("malformed number", start);
      tok_.kind = Tok::Num;
      tok_.num = v;
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < s_.size() &&
             (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
        ++pos_;
      tok_.kind = Tok::Ident;
      tok_.ident = s_.substr(start, pos_ - start);
      return;
    }
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  Token tok_;
};

NodePtr make(NodeKind k, NodePtr a = nullptr, NodePtr b = nullptr) {
  auto nd = std::make_shared<Node>();
  nd->kind = k;
  nd->a = std::move(a);
  nd->b = std::move(b);
  return nd;
}

class Parser {
 public:
  Parser(const std::string& text, Dims dims) : lex_(text), dims_(dims) {}

  NodePtr run() {
    NodePtr e = expression();
    if (lex_.peek().kind != Tok::End)
      throw ParseError("unexpected trailing input", lex_.peek().offset);
    return e;
  }

 private:
  NodePtr expression() {
    NodePtr e = term();
    for (;;) {
      Tok k = lex_.peek().kind;
      if (k == Tok::Plus || k == Tok::Minus) {
        lex_.take();
        NodePtr rhs = term();
        e = make(k == Tok::Plus ? NodeKind::Add : NodeKind::Sub, e, rhs);
      } else {
        return e;
      }
    }
  }

  NodePtr term() {
    NodePtr e = unary();
    for (;;) {
      Tok k = lex_.peek().kind;
      if (k == Tok::Star || k == Tok::Slash) {
        lex_.take();
        NodePtr rhs = unary();
        e = make(k == Tok::Star ? NodeKind::Mul : NodeKind::Div, e, rhs);
      } else {
        return e;
      }
    }
  }

  NodePtr unary() {
    if (lex_.peek().kind == Tok::Minus) {
      lex_.take();
      return make(NodeKind::Neg, unary());
    }
    return power();
  }

  NodePtr power() {
    NodePtr base = atom();
    if (lex_.peek().kind != Tok::Caret) return base;
    Token caret = lex_.take();
    if (lex_.peek().kind != Tok::Num)
      throw ParseError("pow exponent must be a nonnegative integer literal", lex_.peek().offset);
    Token e = lex_.take();
    double k = e.num;
    if (k < 0.0 || k != std::floor(k) || k > 1e6)
      throw ParseError("pow exponent must be a nonnegative integer", e.offset);
    (void)caret;
    NodePtr nd = make(NodeKind::Pow, base);
    const_cast<Node*>(nd.get())->index = static_cast<int>(k);
    return nd;
  }

  NodePtr atom() {
    Token t = lex_.take();
    switch (t.kind) {
      case Tok::Num: {
        NodePtr nd = make(NodeKind::Constant);
        const_cast<Node*>(nd.get())->value = t.num;
        return nd;
      }
      case Tok::LParen: {
        NodePtr e = expression();
        expect(Tok::RParen, "expected ')'");
        return e;
      }
      case Tok::Ident:
        return identifier(t);
      default:
        throw ParseError("expected a number, identifier or '('", t.offset);
    }
  }

  NodePtr identifier(const Token& t) {
    const std::string& id = t.ident;
    if (id == "t") return make(NodeKind::Time);
    if ((id[0] == 'x' || id[0] == 'u') && id.size() > 1 &&
        std::all_of(id.begin() + 1, id.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      int idx = std::stoi(id.substr(1));
      int limit = id[0] == 'x' ? dims_.n : dims_.m;
      if (idx < 1 || idx > limit)
        throw ParseError("variable index out of range: " + id, t.offset);
      NodePtr nd = make(id[0] == 'x' ? NodeKind::State : NodeKind::Control);
      const_cast<Node*>(nd.get())->index = idx - 1;
      return nd;
    }
    static const std::map<std::string, NodeKind> unary_fns = {
        {"sin", NodeKind::Sin}, {"cos", NodeKind::Cos}, {"exp", NodeKind::Exp},
        {"log", NodeKind::Log}, {"abs", NodeKind::Abs}};
    static const std::map<std::string, NodeKind> binary_fns = {
        {"max", NodeKind::Max}, {"min", NodeKind::Min}};
    if (auto it = unary_fns.find(id); it != unary_fns.end()) {
      expect(Tok::LParen, "expected '(' after function name");
      NodePtr a = expression();
      expect(Tok::RParen, "expected ')'");
      return make(it->second, a);
    }
    if (auto it = binary_fns.find(id); it != binary_fns.end()) {
      expect(Tok::LParen, "expected '(' after function name");
      NodePtr a = expression();
      expect(Tok::Comma, "expected ','");
      NodePtr b = expression();
      expect(Tok::RParen, "expected ')'");
      return make(it->second, a, b);
    }
    throw ParseError("unknown identifier: " + id, t.offset);
  }

  void expect(Tok k, const char* msg) {
    if (lex_.peek().kind != k) throw ParseError(msg, lex_.peek().offset);
    lex_.take();
  }

  Lexer lex_;
  Dims dims_;
};

// ---------------------------------------------------------------------------
// Printing.

int prec_of(NodeKind k) {
  switch (k) {
    case NodeKind::Add:
    case NodeKind::Sub: return 1;
    case NodeKind::Mul:
    case NodeKind::Div: return 2;
    case NodeKind::Neg: return 3;
    case NodeKind::Pow: return 4;
    default: return 5;
  }
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

void print_node(const Node* nd, int min_prec, std::string& out) {
  int p = prec_of(nd->kind);
  bool wrap = p < min_prec;
  if (wrap) out += '(';
  switch (nd->kind) {
    case NodeKind::Constant: out += format_double(nd->value); break;
    case NodeKind::Time: out += 't'; break;
    case NodeKind::State: out += 'x' + std::to_string(nd->index + 1); break;
    case NodeKind::Control: out += 'u' + std::to_string(nd->index + 1); break;
    case NodeKind::Neg:
      out += '-';
      print_node(nd->a.get(), 3, out);
      break;
    case NodeKind::Sin:
    case NodeKind::Cos:
    case NodeKind::Exp:
    case NodeKind::Log:
    case NodeKind::Abs: {
      const char* name = nd->kind == NodeKind::Sin   ? "sin"
                         : nd->kind == NodeKind::Cos ? "cos"
                         : nd->kind == NodeKind::Exp ? "exp"
                         : nd->kind == NodeKind::Log ? "log"
                                                     : "abs";
      out += name;
      out += '(';
      print_node(nd->a.get(), 0, out);
      out += ')';
      break;
    }
    case NodeKind::Add:
    case NodeKind::Sub:
      print_node(nd->a.get(), 1, out);
      out += nd->kind == NodeKind::Add ? " + " : " - ";
      print_node(nd->b.get(), 2, out);
      break;
    case NodeKind::Mul:
    case NodeKind::Div:
      print_node(nd->a.get(), 2, out);
      out += nd->kind == NodeKind::Mul ? " * " : " / ";
      print_node(nd->b.get(), 3, out);
      break;
    case NodeKind::Pow:
      print_node(nd->a.get(), 5, out);
      out += '^';
      out += std::to_string(nd->index);
      break;
    case NodeKind::Max:
    case NodeKind::Min:
      out += nd->kind == NodeKind::Max ? "max(" : "min(";
      print_node(nd->a.get(), 0, out);
      out += ", ";
      print_node(nd->b.get(), 0, out);
      out += ')';
      break;
  }
  if (wrap) out += ')';
}

// ---------------------------------------------------------------------------
// Tape execution.

struct Workspace {
  Vec vals;
  Vec grads;  // max_stack x gdim, flattened
  std::vector<double> branch_a, branch_b;
  std::vector<std::uint8_t> choice;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

void check_point(const ExprAst& ast, const EvalPoint& p) {
  if (static_cast<int>(p.x.size()) != ast.dims.n || static_cast<int>(p.u.size()) != ast.dims.m)
    throw ValidationError("point", "dimension mismatch with expression dims");
}

// Value-only pass; optionally records both operand values of every nonsmooth
// op (indexed by tape position) for branch enumeration.
double run_values(const Tape& tape, const EvalPoint& p, Workspace* record) {
  thread_local Vec stack;
  stack.resize(tape.max_stack + 1);
  int top = 0;
  if (record) {
    record->branch_a.assign(tape.ops.size(), 0.0);
    record->branch_b.assign(tape.ops.size(), 0.0);
  }
  for (std::size_t i = 0; i < tape.ops.size(); ++i) {
    const Op& op = tape.ops[i];
    switch (op.kind) {
      case NodeKind::Constant: stack[top++] = op.cval; break;
      case NodeKind::Time: stack[top++] = p.t; break;
      case NodeKind::State: stack[top++] = p.x[op.idx]; break;
      case NodeKind::Control: stack[top++] = p.u[op.idx]; break;
      case NodeKind::Neg: stack[top - 1] = -stack[top - 1]; break;
      case NodeKind::Sin: stack[top - 1] = std::sin(stack[top - 1]); break;
      case NodeKind::Cos: stack[top - 1] = std::cos(stack[top - 1]); break;
      case NodeKind::Exp: stack[top - 1] = std::exp(stack[top - 1]); break;
      case NodeKind::Log:
        if (stack[top - 1] <= 0.0) throw DomainError("log of nonpositive value");
        stack[top - 1] = std::log(stack[top - 1]);
        break;
      case NodeKind::Abs:
        if (record) record->branch_a[i] = stack[top - 1];
        stack[top - 1] = std::abs(stack[top - 1]);
        break;
      case NodeKind::Add: --top; stack[top - 1] += stack[top]; break;
      case NodeKind::Sub: --top; stack[top - 1] -= stack[top]; break;
      case NodeKind::Mul: --top; stack[top - 1] *= stack[top]; break;
      case NodeKind::Div:
        --top;
        if (stack[top] == 0.0) throw DomainError("division by zero");
        stack[top - 1] /= stack[top];
        break;
      case NodeKind::Pow: stack[top - 1] = std::pow(stack[top - 1], op.idx); break;
      case NodeKind::Max:
      case NodeKind::Min:
        --top;
        if (record) {
          record->branch_a[i] = stack[top - 1];
          record->branch_b[i] = stack[top];
        }
        stack[top - 1] = op.kind == NodeKind::Max ? std::max(stack[top - 1], stack[top])
                                                  : std::min(stack[top - 1], stack[top]);
        break;
    }
  }
  return stack[0];
}

// Forward-mode pass.  `choice` (optional, indexed by tape position) forces
// the branch of nonsmooth ops: 0 = first operand / nonnegative, 1 = other.
GradResult run_gradient(const Tape& tape, const EvalPoint& p, Dims dims, double tie_tol,
                        const std::vector<std::uint8_t>* choice) {
  const int gd = 1 + dims.n + dims.m;
  Workspace& ws = workspace();
  ws.vals.resize(tape.max_stack + 1);
  ws.grads.assign(static_cast<std::size_t>(tape.max_stack + 1) * gd, 0.0);
  double* vals = ws.vals.data();
  double* grads = ws.grads.data();
  int top = 0;
  bool warn = false;

  auto g = [&](int slot) { return grads + static_cast<std::size_t>(slot) * gd; };
  auto zero = [&](int slot) { std::fill(g(slot), g(slot) + gd, 0.0); };

  for (std::size_t i = 0; i < tape.ops.size(); ++i) {
    const Op& op = tape.ops[i];
    switch (op.kind) {
      case NodeKind::Constant:
        vals[top] = op.cval;
        zero(top);
        ++top;
        break;
      case NodeKind::Time:
        vals[top] = p.t;
        zero(top);
        g(top)[0] = 1.0;
        ++top;
        break;
      case NodeKind::State:
        vals[top] = p.x[op.idx];
        zero(top);
        g(top)[1 + op.idx] = 1.0;
        ++top;
        break;
      case NodeKind::Control:
        vals[top] = p.u[op.idx];
        zero(top);
        g(top)[1 + dims.n + op.idx] = 1.0;
        ++top;
        break;
      case NodeKind::Neg:
        vals[top - 1] = -vals[top - 1];
        for (int k = 0; k < gd; ++k) g(top - 1)[k] = -g(top - 1)[k];
        break;
      case NodeKind::Sin: {
        double c = std::cos(vals[top - 1]);
        vals[top - 1] = std::sin(vals[top - 1]);
        for (int k = 0; k < gd; ++k) g(top - 1)[k] *= c;
        break;
      }
      case NodeKind::Cos: {
        double s = -std::sin(vals[top - 1]);
        vals[top - 1] = std::cos(vals[top - 1]);
        for (int k = 0; k < gd; ++k) g(top - 1)[k] *= s;
        break;
      }
      case NodeKind::Exp: {
        double e = std::exp(vals[top - 1]);
        vals[top - 1] = e;
        for (int k = 0; k < gd; ++k) g(top - 1)[k] *= e;
        break;
      }
      case NodeKind::Log: {
        double v = vals[top - 1];
        if (v <= 0.0) throw DomainError("log of nonpositive value");
        vals[top - 1] = std::log(v);
        for (int k = 0; k < gd; ++k) g(top - 1)[k] /= v;
        break;
      }
      case NodeKind::Abs: {
        double v = vals[top - 1];
        if (std::abs(v) <= tie_tol) warn = true;
        bool negative = choice ? (*choice)[i] == 1 : v < 0.0;
        vals[top - 1] = std::abs(v);
        if (negative)
          for (int k = 0; k < gd; ++k) g(top - 1)[k] = -g(top - 1)[k];
        break;
      }
      case NodeKind::Add:
        --top;
        vals[top - 1] += vals[top];
        for (int k = 0; k < gd; ++k) g(top - 1)[k] += g(top)[k];
        break;
      case NodeKind::Sub:
        --top;
        vals[top - 1] -= vals[top];
        for (int k = 0; k < gd; ++k) g(top - 1)[k] -= g(top)[k];
        break;
      case NodeKind::Mul: {
        --top;
        double a = vals[top - 1], b = vals[top];
        vals[top - 1] = a * b;
        for (int k = 0; k < gd; ++k) g(top - 1)[k] = g(top - 1)[k] * b + a * g(top)[k];
        break;
      }
      case NodeKind::Div: {
        --top;
        double b = vals[top];
        if (b == 0.0) throw DomainError("division by zero");
        double v = vals[top - 1] / b;
        vals[top - 1] = v;
        for (int k = 0; k < gd; ++k) g(top - 1)[k] = (g(top - 1)[k] - v * g(top)[k]) / b;
        break;
      }
      case NodeKind::Pow: {
        double a = vals[top - 1];
        int k = op.idx;
        vals[top - 1] = std::pow(a, k);
        double f = k == 0 ? 0.0 : k * std::pow(a, k - 1);
        for (int j = 0; j < gd; ++j) g(top - 1)[j] *= f;
        break;
      }
      case NodeKind::Max:
      case NodeKind::Min: {
        --top;
        double a = vals[top - 1], b = vals[top];
        if (std::abs(a - b) <= tie_tol) warn = true;
        bool first;
        if (choice)
          first = (*choice)[i] == 0;
        else
          first = op.kind == NodeKind::Max ? a >= b : a <= b;
        vals[top - 1] = op.kind == NodeKind::Max ? std::max(a, b) : std::min(a, b);
        if (!first)
          for (int k = 0; k < gd; ++k) g(top - 1)[k] = g(top)[k];
        break;
      }
    }
  }

  GradResult out;
  out.value = vals[0];
  out.grad.assign(g(0), g(0) + gd);
  out.tie_warning = warn;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public surface.

ExprAst parse_expression(const std::string& text, Dims dims) {
  if (dims.n < 0 || dims.m < 0) throw ValidationError("dims", "dimensions must be nonnegative");
  Parser p(text, dims);
  return finalize(p.run(), dims);
}

ExprAst constant_expr(double v, Dims dims) {
  NodePtr nd = make(NodeKind::Constant);
  const_cast<Node*>(nd.get())->value = v;
  return finalize(nd, dims);
}

std::string to_string(const ExprAst& ast) {
  std::string out;
  print_node(ast.root.get(), 0, out);
  return out;
}

double evaluate(const ExprAst& ast, const EvalPoint& p) {
  check_point(ast, p);
  return run_values(*ast.tape, p, nullptr);
}

GradResult gradient(const ExprAst& ast, const EvalPoint& p, double tie_tol) {
  check_point(ast, p);
  return run_gradient(*ast.tape, p, ast.dims, tie_tol, nullptr);
}

GeneratorSet clarke_generators(const ExprAst& ast, const EvalPoint& p, double tie_tol) {
  if (tie_tol < 0.0) throw ValidationError("tie_tol", "must be nonnegative");
  check_point(ast, p);
  const Tape& tape = *ast.tape;
  const int n = ast.dims.n, m = ast.dims.m;

  GeneratorSet out;
  auto drop_t = [&](const Vec& full) { return Vec(full.begin() + 1, full.end()); };

  if (tape.nonsmooth_count == 0) {
    out.gradients.push_back(drop_t(run_gradient(tape, p, ast.dims, tie_tol, nullptr).grad));
    out.exact = true;
    return out;
  }

  Workspace rec;
  run_values(tape, p, &rec);

  // Positions whose both branches sit within tie_tol of the realized value.
  std::vector<std::size_t> multi;
  std::vector<std::uint8_t> base_choice(tape.ops.size(), 0);
  for (std::size_t i = 0; i < tape.ops.size(); ++i) {
    const Op& op = tape.ops[i];
    if (op.kind == NodeKind::Abs) {
      double v = rec.branch_a[i];
      if (std::abs(v) <= tie_tol)
        multi.push_back(i);
      else
        base_choice[i] = v < 0.0 ? 1 : 0;
    } else if (op.kind == NodeKind::Max || op.kind == NodeKind::Min) {
      double a = rec.branch_a[i], b = rec.branch_b[i];
      if (std::abs(a - b) <= tie_tol)
        multi.push_back(i);
      else if (op.kind == NodeKind::Max)
        base_choice[i] = a >= b ? 0 : 1;
      else
        base_choice[i] = a <= b ? 0 : 1;
    }
  }

  constexpr std::size_t kMaxCombos = 256;
  std::size_t combos = std::size_t{1} << std::min<std::size_t>(multi.size(), 12);
  if (multi.size() > 12 || combos > kMaxCombos) {
    out.gradients.push_back(drop_t(run_gradient(tape, p, ast.dims, tie_tol, &base_choice).grad));
    out.exact = false;
    return out;
  }

  for (std::size_t mask = 0; mask < combos; ++mask) {
    std::vector<std::uint8_t> choice = base_choice;
    for (std::size_t k = 0; k < multi.size(); ++k) choice[multi[k]] = (mask >> k) & 1u;
    Vec grad = drop_t(run_gradient(tape, p, ast.dims, tie_tol, &choice).grad);
    bool dup = false;
    for (const Vec& seen : out.gradients) {
      double diff = 0.0;
      for (int j = 0; j < n + m; ++j) diff = std::max(diff, std::abs(seen[j] - grad[j]));
      if (diff <= 1e-12) {
        dup = true;
        break;
      }
    }
    if (!dup) out.gradients.push_back(std::move(grad));
  }
  out.exact = multi.size() <= 1;
  return out;
}

// ---------------------------------------------------------------------------
// Structure queries.

namespace {

bool any_node(const Node* nd, bool (*pred)(const Node*)) {
  if (pred(nd)) return true;
  if (nd->a && any_node(nd->a.get(), pred)) return true;
  if (nd->b && any_node(nd->b.get(), pred)) return true;
  return false;
}

constexpr int kDegInf = 1 << 20;

int poly_degree(const Node* nd) {
  switch (nd->kind) {
    case NodeKind::Constant: return 0;
    case NodeKind::Time:
    case NodeKind::State:
    case NodeKind::Control: return 1;
    case NodeKind::Neg: return poly_degree(nd->a.get());
    case NodeKind::Add:
    case NodeKind::Sub:
    case NodeKind::Max:
    case NodeKind::Min:
      return std::max(poly_degree(nd->a.get()), poly_degree(nd->b.get()));
    case NodeKind::Mul: {
      int da = poly_degree(nd->a.get()), db = poly_degree(nd->b.get());
      return da >= kDegInf || db >= kDegInf ? kDegInf : da + db;
    }
    case NodeKind::Div: {
      int da = poly_degree(nd->a.get()), db = poly_degree(nd->b.get());
      return db == 0 ? da : kDegInf;
    }
    case NodeKind::Pow: {
      int da = poly_degree(nd->a.get());
      return da >= kDegInf ? kDegInf : da * nd->index;
    }
    case NodeKind::Sin:
    case NodeKind::Cos:
    case NodeKind::Exp:
    case NodeKind::Log:
    case NodeKind::Abs:
      return poly_degree(nd->a.get()) == 0 ? 0 : kDegInf;
  }
  return kDegInf;
}

struct TermRef {
  const Node* node;
  double sign;
};

void flatten_terms(const Node* nd, double sign, std::vector<TermRef>& out) {
  switch (nd->kind) {
    case NodeKind::Add:
      flatten_terms(nd->a.get(), sign, out);
      flatten_terms(nd->b.get(), sign, out);
      return;
    case NodeKind::Sub:
      flatten_terms(nd->a.get(), sign, out);
      flatten_terms(nd->b.get(), -sign, out);
      return;
    case NodeKind::Neg:
      flatten_terms(nd->a.get(), -sign, out);
      return;
    default:
      out.push_back({nd, sign});
  }
}

bool variable_free(const Node* nd) {
  return !any_node(nd, [](const Node* x) {
    return x->kind == NodeKind::Time || x->kind == NodeKind::State || x->kind == NodeKind::Control;
  });
}

std::optional<double> const_value(const Node* nd) {
  if (!variable_free(nd)) return std::nullopt;
  ExprAst tmp;
  tmp.root = NodePtr(nd, [](const Node*) {});  // non-owning view
  tmp.dims = {0, 0};
  tmp.tape = compile(tmp.root);
  EvalPoint p;
  try {
    return run_values(*tmp.tape, p, nullptr);
  } catch (const DomainError&) {
    return std::nullopt;
  }
}

// index into (t, x, u) when the node is a bare variable
std::optional<int> var_slot(const Node* nd, Dims dims) {
  if (nd->kind == NodeKind::Time) return 0;
  if (nd->kind == NodeKind::State) return 1 + nd->index;
  if (nd->kind == NodeKind::Control) return 1 + dims.n + nd->index;
  return std::nullopt;
}

// Tries to read a term as coef * variable or as a constant.  Handles products
// and quotients of constant factors with a single variable factor.
bool linear_term(const Node* nd, Dims dims, double sign, Vec& linear, double& constant) {
  if (auto c = const_value(nd)) {
    constant += sign * *c;
    return true;
  }
  if (auto slot = var_slot(nd, dims)) {
    linear[*slot] += sign;
    return true;
  }
  if (nd->kind == NodeKind::Neg) return linear_term(nd->a.get(), dims, -sign, linear, constant);
  if (nd->kind == NodeKind::Mul) {
    if (auto ca = const_value(nd->a.get()))
      return linear_term(nd->b.get(), dims, sign * *ca, linear, constant);
    if (auto cb = const_value(nd->b.get()))
      return linear_term(nd->a.get(), dims, sign * *cb, linear, constant);
    return false;
  }
  if (nd->kind == NodeKind::Div) {
    if (auto cb = const_value(nd->b.get())) {
      if (*cb == 0.0) return false;
      return linear_term(nd->a.get(), dims, sign / *cb, linear, constant);
    }
    return false;
  }
  return false;
}

}  // namespace

bool depends_on_time(const ExprAst& ast) {
  return any_node(ast.root.get(), [](const Node* nd) { return nd->kind == NodeKind::Time; });
}

bool depends_on_state(const ExprAst& ast, int i) {
  bool found = false;
  std::function<void(const Node*)> walk = [&](const Node* nd) {
    if (nd->kind == NodeKind::State && nd->index == i) found = true;
    if (nd->a) walk(nd->a.get());
    if (nd->b) walk(nd->b.get());
  };
  walk(ast.root.get());
  return found;
}

bool depends_on_control(const ExprAst& ast, int j) {
  bool found = false;
  std::function<void(const Node*)> walk = [&](const Node* nd) {
    if (nd->kind == NodeKind::Control && nd->index == j) found = true;
    if (nd->a) walk(nd->a.get());
    if (nd->b) walk(nd->b.get());
  };
  walk(ast.root.get());
  return found;
}

bool is_smooth(const ExprAst& ast) {
  return !any_node(ast.root.get(), [](const Node* nd) {
    return nd->kind == NodeKind::Abs || nd->kind == NodeKind::Max || nd->kind == NodeKind::Min;
  });
}

bool is_affine(const ExprAst& ast) {
  if (!is_smooth(ast)) return false;
  return poly_degree(ast.root.get()) <= 1;
}

AffineSplit affine_split(const ExprAst& ast) {
  AffineSplit out;
  out.linear.assign(1 + ast.dims.n + ast.dims.m, 0.0);

  std::vector<TermRef> terms;
  flatten_terms(ast.root.get(), 1.0, terms);

  NodePtr rem;
  for (const TermRef& term : terms) {
    Vec lin_try = out.linear;
    double c_try = out.constant;
    if (linear_term(term.node, ast.dims, term.sign, lin_try, c_try)) {
      out.linear = lin_try;
      out.constant = c_try;
      continue;
    }
    // Children are shared immutable nodes, so a shallow copy re-owns the term.
    NodePtr piece = std::make_shared<const Node>(*term.node);
    if (term.sign < 0.0) piece = make(NodeKind::Neg, piece);
    rem = rem ? make(NodeKind::Add, rem, piece) : piece;
  }
  if (rem) out.remainder = finalize(rem, ast.dims);
  return out;
}

}  // namespace mixedcq::expr
