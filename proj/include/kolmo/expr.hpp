#ifndef KOLMO_EXPR_HPP
#define KOLMO_EXPR_HPP

// Coefficient expression language: parsing, IEEE-double evaluation and exact
// symbolic differentiation. Operator assembly, formal adjoints and hypothesis
// audits all pull their derivatives from here so there is a single source of
// truth for D_h q_ij, J_x b and D_j B_i.
//
// Grammar (conventional precedence, ^ right-associative and binding tighter
// than unary minus):
//   expr    := term (('+'|'-') term)*
//   term    := unary (('*'|'/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?
//   primary := number | ident | ident '(' expr ')' | '(' expr ')'
// Functions: exp, log, sin, cos, sinh, cosh, sqrt, abs. Variables: x (alias
// x1), x1..x3, optionally written x_1..x_3. Any other identifier is a named
// parameter bound at evaluation time.
//
// Simplification is limited to constant folding and 0/1 elimination so that
// printed derivatives stay auditable. Real (non-integer or symbolic) exponents
// are accepted only on bases that are provably positive by construction
// (positive constants, sums of squares plus a positive constant, exp, cosh,
// products/quotients of such); this is exactly the (1+x^2)^s shape used by
// polynomially growing coefficient classes.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace kolmo {

using Params = std::map<std::string, double>;

class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

private:
  std::size_t offset_;
};

class EvalError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class NodeKind : unsigned char { Constant, Variable, Parameter, Unary, Binary };
enum class UnaryOp : unsigned char { Neg, Exp, Log, Sin, Cos, Sinh, Cosh, Sqrt, Abs };
enum class BinaryOp : unsigned char { Add, Sub, Mul, Div, Pow };

struct ExprNode;
using ExprPtr = std::shared_ptr<const ExprNode>;

struct ExprNode {
  NodeKind kind;
  double value = 0.0;     // Constant
  int var = 0;            // Variable (0-based index)
  std::string name;       // Parameter
  UnaryOp uop = UnaryOp::Neg;
  BinaryOp bop = BinaryOp::Add;
  ExprPtr a, b;           // Unary uses a only
};

namespace detail {

inline bool is_integer(double v) {
  return std::isfinite(v) && v == std::floor(v) && std::abs(v) < 1e15;
}

inline bool provably_positive(const ExprPtr& e);

inline bool provably_nonneg(const ExprPtr& e) {
  switch (e->kind) {
    case NodeKind::Constant: return e->value >= 0.0;
    case NodeKind::Unary:
      switch (e->uop) {
        case UnaryOp::Exp:
        case UnaryOp::Cosh:
        case UnaryOp::Abs: return true;
        case UnaryOp::Sqrt: return true;
        default: return false;
      }
    case NodeKind::Binary:
      switch (e->bop) {
        case BinaryOp::Add: return provably_nonneg(e->a) && provably_nonneg(e->b);
        case BinaryOp::Mul:
        case BinaryOp::Div: return provably_nonneg(e->a) && provably_nonneg(e->b);
        case BinaryOp::Pow:
          if (provably_positive(e->a)) return true;
          return e->b->kind == NodeKind::Constant && is_integer(e->b->value) &&
                 std::fmod(e->b->value, 2.0) == 0.0;
        default: return false;
      }
    default: return false;
  }
}

inline bool provably_positive(const ExprPtr& e) {
  switch (e->kind) {
    case NodeKind::Constant: return e->value > 0.0;
    case NodeKind::Unary:
      switch (e->uop) {
        case UnaryOp::Exp:
        case UnaryOp::Cosh: return true;
        case UnaryOp::Sqrt: return provably_positive(e->a);
        default: return false;
      }
    case NodeKind::Binary:
      switch (e->bop) {
        case BinaryOp::Add:
          return (provably_positive(e->a) && provably_nonneg(e->b)) ||
                 (provably_nonneg(e->a) && provably_positive(e->b));
        case BinaryOp::Mul:
        case BinaryOp::Div: return provably_positive(e->a) && provably_positive(e->b);
        case BinaryOp::Pow: return provably_positive(e->a);
        default: return false;
      }
    default: return false;
  }
}

} // namespace detail

class Expr {
public:
  Expr() = default;
  explicit Expr(ExprPtr node) : node_(std::move(node)) {}

  static Expr constant(double c) {
    auto n = std::make_shared<ExprNode>();
    n->kind = NodeKind::Constant;
    n->value = c;
    return Expr(std::move(n));
  }
  static Expr variable(int idx) {
    auto n = std::make_shared<ExprNode>();
    n->kind = NodeKind::Variable;
    n->var = idx;
    return Expr(std::move(n));
  }
  static Expr parameter(std::string name) {
    auto n = std::make_shared<ExprNode>();
    n->kind = NodeKind::Parameter;
    n->name = std::move(name);
    return Expr(std::move(n));
  }

  bool valid() const { return node_ != nullptr; }
  const ExprPtr& node() const { return node_; }

  bool is_constant(double v) const {
    return node_ && node_->kind == NodeKind::Constant && node_->value == v;
  }

  static Expr unary(UnaryOp op, Expr u) {
    if (u.node_->kind == NodeKind::Constant) {
      double v = apply_unary(op, u.node_->value);
      if (std::isfinite(v)) return constant(v);
    }
    auto n = std::make_shared<ExprNode>();
    n->kind = NodeKind::Unary;
    n->uop = op;
    n->a = u.node_;
    return Expr(std::move(n));
  }

  static Expr binary(BinaryOp op, Expr l, Expr r) {
    const ExprPtr& a = l.node_;
    const ExprPtr& b = r.node_;
    if (a->kind == NodeKind::Constant && b->kind == NodeKind::Constant) {
      double v = apply_binary(op, a->value, b->value);
      if (std::isfinite(v)) return constant(v);
    }
    switch (op) {
      case BinaryOp::Add:
        if (l.is_constant(0.0)) return r;
        if (r.is_constant(0.0)) return l;
        break;
      case BinaryOp::Sub:
        if (r.is_constant(0.0)) return l;
        if (l.is_constant(0.0)) return unary(UnaryOp::Neg, r);
        break;
      case BinaryOp::Mul:
        if (l.is_constant(0.0) || r.is_constant(0.0)) return constant(0.0);
        if (l.is_constant(1.0)) return r;
        if (r.is_constant(1.0)) return l;
        break;
      case BinaryOp::Div:
        if (r.is_constant(1.0)) return l;
        break;
      case BinaryOp::Pow:
        if (r.is_constant(1.0)) return l;
        if (r.is_constant(0.0)) return constant(1.0);
        if (!(b->kind == NodeKind::Constant && detail::is_integer(b->value)) &&
            !detail::provably_positive(a))
          throw std::domain_error(
              "real power requires a base that is positive by construction: " +
              Expr(a).str());
        break;
    }
    auto n = std::make_shared<ExprNode>();
    n->kind = NodeKind::Binary;
    n->bop = op;
    n->a = a;
    n->b = b;
    return Expr(std::move(n));
  }

  friend Expr operator+(const Expr& l, const Expr& r) { return binary(BinaryOp::Add, l, r); }
  friend Expr operator-(const Expr& l, const Expr& r) { return binary(BinaryOp::Sub, l, r); }
  friend Expr operator*(const Expr& l, const Expr& r) { return binary(BinaryOp::Mul, l, r); }
  friend Expr operator/(const Expr& l, const Expr& r) { return binary(BinaryOp::Div, l, r); }
  friend Expr operator-(const Expr& u) { return unary(UnaryOp::Neg, u); }
  Expr pow(const Expr& e) const { return binary(BinaryOp::Pow, *this, e); }

  double eval(std::span<const double> point, const Params& params) const {
    double v = eval_node(node_.get(), point, params);
    if (!std::isfinite(v))
      throw EvalError("expression evaluated to a non-finite value: " + str());
    return v;
  }
  double eval1(double x, const Params& params = {}) const {
    return eval(std::span<const double>(&x, 1), params);
  }

  Expr diff(int var) const { return Expr(diff_node(node_.get(), var)); }

  // Largest variable index referenced, plus one (0 for constant expressions).
  int dimension() const { return dim_node(node_.get()); }

  // Collects referenced parameter names into out.
  void parameters(std::map<std::string, int>& out) const { params_node(node_.get(), out); }

  std::string str() const { return print_node(node_.get(), 0); }

  friend bool structurally_equal(const Expr& l, const Expr& r) {
    return equal_node(l.node_.get(), r.node_.get());
  }

private:
  ExprPtr node_;

  static double apply_unary(UnaryOp op, double v) {
    switch (op) {
      case UnaryOp::Neg: return -v;
      case UnaryOp::Exp: return std::exp(v);
      case UnaryOp::Log: return std::log(v);
      case UnaryOp::Sin: return std::sin(v);
      case UnaryOp::Cos: return std::cos(v);
      case UnaryOp::Sinh: return std::sinh(v);
      case UnaryOp::Cosh: return std::cosh(v);
      case UnaryOp::Sqrt: return std::sqrt(v);
      case UnaryOp::Abs: return std::abs(v);
    }
    return 0.0;
  }
  static double apply_binary(BinaryOp op, double l, double r) {
    switch (op) {
      case BinaryOp::Add: return l + r;
      case BinaryOp::Sub: return l - r;
      case BinaryOp::Mul: return l * r;
      case BinaryOp::Div: return l / r;
      case BinaryOp::Pow: return std::pow(l, r);
    }
    return 0.0;
  }

  static double eval_node(const ExprNode* n, std::span<const double> p, const Params& params) {
    switch (n->kind) {
      case NodeKind::Constant: return n->value;
      case NodeKind::Variable:
        if (n->var < 0 || static_cast<std::size_t>(n->var) >= p.size())
          throw EvalError("variable x" + std::to_string(n->var + 1) +
                          " outside the point dimension");
        return p[static_cast<std::size_t>(n->var)];
      case NodeKind::Parameter: {
        auto it = params.find(n->name);
        if (it == params.end()) throw EvalError("unbound parameter: " + n->name);
        return it->second;
      }
      case NodeKind::Unary: {
        double v = eval_node(n->a.get(), p, params);
        if (n->uop == UnaryOp::Log && v <= 0.0)
          throw EvalError("log of a non-positive value");
        if (n->uop == UnaryOp::Sqrt && v < 0.0)
          throw EvalError("sqrt of a negative value");
        return apply_unary(n->uop, v);
      }
      case NodeKind::Binary: {
        double l = eval_node(n->a.get(), p, params);
        double r = eval_node(n->b.get(), p, params);
        if (n->bop == BinaryOp::Div && r == 0.0) throw EvalError("division by zero");
        if (n->bop == BinaryOp::Pow) {
          if (l < 0.0 && !detail::is_integer(r))
            throw EvalError("real power of a negative base");
          if (l == 0.0 && r < 0.0) throw EvalError("zero raised to a negative power");
        }
        return apply_binary(n->bop, l, r);
      }
    }
    return 0.0;
  }

  static ExprPtr diff_node(const ExprNode* n, int var) {
    auto E = [](const ExprPtr& p) { return Expr(p); };
    switch (n->kind) {
      case NodeKind::Constant:
      case NodeKind::Parameter: return constant(0.0).node_;
      case NodeKind::Variable: return constant(n->var == var ? 1.0 : 0.0).node_;
      case NodeKind::Unary: {
        Expr u = E(n->a);
        Expr du = Expr(diff_node(n->a.get(), var));
        switch (n->uop) {
          case UnaryOp::Neg: return (-du).node_;
          case UnaryOp::Exp: return (du * unary(UnaryOp::Exp, u)).node_;
          case UnaryOp::Log: return (du / u).node_;
          case UnaryOp::Sin: return (du * unary(UnaryOp::Cos, u)).node_;
          case UnaryOp::Cos: return (-(du * unary(UnaryOp::Sin, u))).node_;
          case UnaryOp::Sinh: return (du * unary(UnaryOp::Cosh, u)).node_;
          case UnaryOp::Cosh: return (du * unary(UnaryOp::Sinh, u)).node_;
          case UnaryOp::Sqrt:
            return (du / (constant(2.0) * unary(UnaryOp::Sqrt, u))).node_;
          case UnaryOp::Abs:
            throw std::domain_error("abs is not differentiable");
        }
        return {};
      }
      case NodeKind::Binary: {
        Expr u = E(n->a), v = E(n->b);
        Expr du = Expr(diff_node(n->a.get(), var));
        Expr dv = Expr(diff_node(n->b.get(), var));
        switch (n->bop) {
          case BinaryOp::Add: return (du + dv).node_;
          case BinaryOp::Sub: return (du - dv).node_;
          case BinaryOp::Mul: return (du * v + u * dv).node_;
          case BinaryOp::Div:
            return ((du * v - u * dv) / v.pow(constant(2.0))).node_;
          case BinaryOp::Pow: {
            if (n->b->kind == NodeKind::Constant) {
              Expr c = v;
              return (c * u.pow(constant(n->b->value - 1.0)) * du).node_;
            }
            // General rule; base is positive by construction here.
            Expr self = u.pow(v);
            return (self * (dv * unary(UnaryOp::Log, u) + v * du / u)).node_;
          }
        }
        return {};
      }
    }
    return {};
  }

  static int dim_node(const ExprNode* n) {
    switch (n->kind) {
      case NodeKind::Variable: return n->var + 1;
      case NodeKind::Unary: return dim_node(n->a.get());
      case NodeKind::Binary: return std::max(dim_node(n->a.get()), dim_node(n->b.get()));
      default: return 0;
    }
  }

  static void params_node(const ExprNode* n, std::map<std::string, int>& out) {
    switch (n->kind) {
      case NodeKind::Parameter: out[n->name]++; break;
      case NodeKind::Unary: params_node(n->a.get(), out); break;
      case NodeKind::Binary:
        params_node(n->a.get(), out);
        params_node(n->b.get(), out);
        break;
      default: break;
    }
  }

  static bool equal_node(const ExprNode* l, const ExprNode* r) {
    if (l->kind != r->kind) return false;
    switch (l->kind) {
      case NodeKind::Constant: return l->value == r->value;
      case NodeKind::Variable: return l->var == r->var;
      case NodeKind::Parameter: return l->name == r->name;
      case NodeKind::Unary:
        return l->uop == r->uop && equal_node(l->a.get(), r->a.get());
      case NodeKind::Binary:
        return l->bop == r->bop && equal_node(l->a.get(), r->a.get()) &&
               equal_node(l->b.get(), r->b.get());
    }
    return false;
  }

  // Precedence used by the printer: +,- = 1; *,/ = 2; unary - = 3; ^ = 4;
  // atoms = 5. Negative constant atoms print like unary minus.
  static int prec_node(const ExprNode* n) {
    switch (n->kind) {
      case NodeKind::Constant: return n->value < 0 ? 3 : 5;
      case NodeKind::Variable:
      case NodeKind::Parameter: return 5;
      case NodeKind::Unary: return n->uop == UnaryOp::Neg ? 3 : 5;
      case NodeKind::Binary:
        switch (n->bop) {
          case BinaryOp::Add:
          case BinaryOp::Sub: return 1;
          case BinaryOp::Mul:
          case BinaryOp::Div: return 2;
          case BinaryOp::Pow: return 4;
        }
    }
    return 5;
  }

  static std::string wrap(const ExprNode* child, bool need) {
    std::string s = print_node(child, 0);
    return need ? "(" + s + ")" : s;
  }

  static std::string print_node(const ExprNode* n, int) {
    switch (n->kind) {
      case NodeKind::Constant: {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", n->value);
        return buf;
      }
      case NodeKind::Variable: return "x" + std::to_string(n->var + 1);
      case NodeKind::Parameter: return n->name;
      case NodeKind::Unary: {
        if (n->uop == UnaryOp::Neg)
          return "-" + wrap(n->a.get(), prec_node(n->a.get()) < 4);
        const char* f = "";
        switch (n->uop) {
          case UnaryOp::Exp: f = "exp"; break;
          case UnaryOp::Log: f = "log"; break;
          case UnaryOp::Sin: f = "sin"; break;
          case UnaryOp::Cos: f = "cos"; break;
          case UnaryOp::Sinh: f = "sinh"; break;
          case UnaryOp::Cosh: f = "cosh"; break;
          case UnaryOp::Sqrt: f = "sqrt"; break;
          case UnaryOp::Abs: f = "abs"; break;
          default: break;
        }
        return std::string(f) + "(" + print_node(n->a.get(), 0) + ")";
      }
      case NodeKind::Binary: {
        int lp = prec_node(n->a.get());
        int rp = prec_node(n->b.get());
        switch (n->bop) {
          case BinaryOp::Add:
            return wrap(n->a.get(), lp < 1) + "+" + wrap(n->b.get(), rp <= 1);
          case BinaryOp::Sub:
            return wrap(n->a.get(), lp < 1) + "-" + wrap(n->b.get(), rp <= 1);
          case BinaryOp::Mul:
            return wrap(n->a.get(), lp < 2) + "*" + wrap(n->b.get(), rp <= 2);
          case BinaryOp::Div:
            return wrap(n->a.get(), lp < 2) + "/" + wrap(n->b.get(), rp <= 2);
          case BinaryOp::Pow:
            return wrap(n->a.get(), lp <= 4) + "^" + wrap(n->b.get(), rp < 4);
        }
      }
    }
    return {};
  }
};

namespace detail {

class Parser {
public:
  explicit Parser(std::string_view src) : src_(src) {}

  Expr run() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("empty expression", 0);
    Expr e = parse_expr();
    skip_ws();
    if (pos_ < src_.size())
      throw ParseError("unexpected trailing input, expected operator or end", pos_);
    return e;
  }

private:
  std::string_view src_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }
  bool peek(char c) {
    skip_ws();
    return pos_ < src_.size() && src_[pos_] == c;
  }
  bool consume(char c) {
    if (peek(c)) {
      ++pos_;
      return true;
    }
    return false;
  }

  Expr parse_expr() {
    Expr e = parse_term();
    for (;;) {
      if (consume('+')) e = e + parse_term();
      else if (consume('-')) e = e - parse_term();
      else return e;
    }
  }
  Expr parse_term() {
    Expr e = parse_unary();
    for (;;) {
      if (consume('*')) e = e * parse_unary();
      else if (consume('/')) e = e / parse_unary();
      else return e;
    }
  }
  Expr parse_unary() {
    if (consume('-')) return -parse_unary();
    return parse_power();
  }
  Expr parse_power() {
    Expr base = parse_primary();
    if (consume('^')) {
      std::size_t at = pos_;
      try {
        return base.pow(parse_unary());
      } catch (const std::domain_error& e) {
        throw ParseError(e.what(), at);
      }
    }
    return base;
  }

  Expr parse_primary() {
    skip_ws();
    if (pos_ >= src_.size())
      throw ParseError("unexpected end of input, expected number, identifier or '('", pos_);
    char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      Expr e = parse_expr();
      if (!consume(')')) throw ParseError("expected ')'", pos_);
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_ident();
    throw ParseError(std::string("unexpected character '") + c +
                         "', expected number, identifier or '('",
                     pos_);
  }

  Expr parse_number() {
    std::size_t start = pos_;
    while (pos_ < src_.size() &&
           (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.'))
      ++pos_;
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t mark = pos_++;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      } else {
        pos_ = mark; // not an exponent, e.g. "2exp(x)" is still an error later
      }
    }
    std::string text(src_.substr(start, pos_ - start));
    char* end = nullptr;
    double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || !std::isfinite(v))
      throw ParseError("malformed number '" + text + "'", start);
    return Expr::constant(v);
  }

  Expr parse_ident() {
    std::size_t start = pos_;
    while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                                  src_[pos_] == '_'))
      ++pos_;
    std::string id(src_.substr(start, pos_ - start));
    if (peek('(')) {
      UnaryOp op;
      if (id == "exp") op = UnaryOp::Exp;
      else if (id == "log") op = UnaryOp::Log;
      else if (id == "sin") op = UnaryOp::Sin;
      else if (id == "cos") op = UnaryOp::Cos;
      else if (id == "sinh") op = UnaryOp::Sinh;
      else if (id == "cosh") op = UnaryOp::Cosh;
      else if (id == "sqrt") op = UnaryOp::Sqrt;
      else if (id == "abs") op = UnaryOp::Abs;
      else throw ParseError("unknown function '" + id + "'", start);
      ++pos_; // '('
      Expr arg = parse_expr();
      if (!consume(')')) throw ParseError("expected ')' closing " + id, pos_);
      return Expr::unary(op, arg);
    }
    if (id == "x") return Expr::variable(0);
    if (id.size() >= 2 && id[0] == 'x') {
      std::string_view rest(id);
      rest.remove_prefix(id[1] == '_' ? 2 : 1);
      if (!rest.empty() && rest.find_first_not_of("0123456789") == std::string_view::npos) {
        int idx = std::stoi(std::string(rest));
        if (idx >= 1 && idx <= 3) return Expr::variable(idx - 1);
        throw ParseError("variable index out of range in '" + id + "'", start);
      }
    }
    return Expr::parameter(id);
  }
};

} // namespace detail

inline Expr parse_expr(std::string_view source) {
  return detail::Parser(source).run();
}

} // namespace kolmo

#endif
