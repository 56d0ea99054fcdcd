#pragma once

// Small arithmetic-expression interpreter for configuration files.
// Variables: x1 x2 x3 (chart coordinates), z (solution value), p1 p2 p3
// (gradient components). Evaluation carries exact first derivatives with
// respect to z and p (forward-mode duals).

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "hessobs/chart_geometry.hpp"
#include "hessobs/errors.hpp"

namespace hessobs::expr {

enum Var : unsigned { X1 = 0, X2, X3, Z, P1, P2, P3, VarCount };

inline constexpr unsigned var_bit(Var v) { return 1u << v; }
inline constexpr unsigned kCoordinates = var_bit(X1) | var_bit(X2) | var_bit(X3);
inline constexpr unsigned kGradient = var_bit(P1) | var_bit(P2) | var_bit(P3);
inline constexpr unsigned kAllVars = kCoordinates | var_bit(Z) | kGradient;

/// Value with derivatives d[0] = d/dz, d[1..3] = d/dp_k.
struct Dual {
  double v = 0.0;
  std::array<double, 4> d{0.0, 0.0, 0.0, 0.0};

  static Dual constant(double c) { return Dual{c, {}}; }
  bool is_constant() const { return d[0] == 0 && d[1] == 0 && d[2] == 0 && d[3] == 0; }
};

namespace detail {

inline Dual chain(const Dual &a, double value, double slope) {
  Dual r{value, {}};
  for (int i = 0; i < 4; ++i)
    r.d[i] = slope * a.d[i];
  return r;
}

inline Dual add(const Dual &a, const Dual &b, double sb = 1.0) {
  Dual r{a.v + sb * b.v, {}};
  for (int i = 0; i < 4; ++i)
    r.d[i] = a.d[i] + sb * b.d[i];
  return r;
}

inline Dual mul(const Dual &a, const Dual &b) {
  Dual r{a.v * b.v, {}};
  for (int i = 0; i < 4; ++i)
    r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}

inline Dual div(const Dual &a, const Dual &b) {
  Dual r{a.v / b.v, {}};
  for (int i = 0; i < 4; ++i)
    r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
  return r;
}

inline Dual pow(const Dual &a, const Dual &b) {
  const double value = std::pow(a.v, b.v);
  if (b.is_constant()) {
    if (b.v == 0.0)
      return Dual::constant(1.0);
    return chain(a, value, b.v * std::pow(a.v, b.v - 1.0));
  }
  // a^b = exp(b log a)
  Dual r{value, {}};
  const double la = std::log(a.v);
  for (int i = 0; i < 4; ++i)
    r.d[i] = value * (b.d[i] * la + b.v * a.d[i] / a.v);
  return r;
}

enum class Op : std::uint8_t {
  Const,
  Load,
  Neg,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Exp,
  Log,
  Sqrt,
  Sin,
  Cos,
  Tan,
  Atan,
  Sinh,
  Cosh,
  Tanh,
  Abs,
  PowFn,
  Min,
  Max
};

struct Instr {
  Op op;
  double value = 0.0; // Const
  unsigned var = 0;   // Load
};

struct FunctionInfo {
  const char *name;
  Op op;
  int arity;
};

inline constexpr FunctionInfo kFunctions[] = {
    {"exp", Op::Exp, 1},   {"log", Op::Log, 1},   {"sqrt", Op::Sqrt, 1},
    {"sin", Op::Sin, 1},   {"cos", Op::Cos, 1},   {"tan", Op::Tan, 1},
    {"atan", Op::Atan, 1}, {"sinh", Op::Sinh, 1}, {"cosh", Op::Cosh, 1},
    {"tanh", Op::Tanh, 1}, {"abs", Op::Abs, 1},   {"pow", Op::PowFn, 2},
    {"min", Op::Min, 2},   {"max", Op::Max, 2},
};

inline constexpr const char *kVarNames[] = {"x1", "x2", "x3", "z",
                                            "p1", "p2", "p3"};

// Recursive-descent parser emitting postfix code.
//   expr   := term (('+'|'-') term)*
//   term   := unary (('*'|'/') unary)*
//   unary  := ('-'|'+') unary | power
//   power  := atom ('^' unary)?
//   atom   := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
class Parser {
public:
  Parser(std::string_view src, unsigned allowed, int line, int column)
      : src_(src), allowed_(allowed), line_(line), column_(column) {}

  std::vector<Instr> run(unsigned &used) {
    skip();
    if (pos_ >= src_.size())
      fail("empty expression");
    expr();
    skip();
    if (pos_ < src_.size())
      fail(std::string("unexpected '") + src_[pos_] + "'");
    used = used_;
    return std::move(code_);
  }

private:
  [[noreturn]] void fail(const std::string &msg) const {
    throw ConfigError("expression: " + msg, line_,
                      line_ > 0 ? column_ + static_cast<int>(pos_) : 0);
  }

  void skip() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_])))
      ++pos_;
  }

  bool accept(char c) {
    skip();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c))
      fail(std::string("expected '") + c + "'");
  }

  void expr() {
    term();
    for (;;) {
      if (accept('+')) {
        term();
        code_.push_back({Op::Add});
      } else if (accept('-')) {
        term();
        code_.push_back({Op::Sub});
      } else {
        return;
      }
    }
  }

  void term() {
    unary();
    for (;;) {
      if (accept('*')) {
        unary();
        code_.push_back({Op::Mul});
      } else if (accept('/')) {
        unary();
        code_.push_back({Op::Div});
      } else {
        return;
      }
    }
  }

  void unary() {
    if (accept('-')) {
      unary();
      code_.push_back({Op::Neg});
      return;
    }
    if (accept('+')) {
      unary();
      return;
    }
    power();
  }

  void power() {
    atom();
    if (accept('^')) {
      unary();
      code_.push_back({Op::Pow});
    }
  }

  void atom() {
    skip();
    if (pos_ >= src_.size())
      fail("unexpected end of expression");
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      expr();
      expect(')');
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      number();
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        ++pos_;
      const std::string_view name = src_.substr(start, pos_ - start);
      skip();
      if (pos_ < src_.size() && src_[pos_] == '(') {
        call(name, start);
        return;
      }
      if (name == "pi") {
        code_.push_back({Op::Const, std::numbers::pi});
        return;
      }
      if (name == "e") {
        code_.push_back({Op::Const, std::numbers::e});
        return;
      }
      for (unsigned v = 0; v < VarCount; ++v)
        if (name == kVarNames[v]) {
          if (!(allowed_ & (1u << v))) {
            pos_ = start;
            fail("variable '" + std::string(name) + "' is not allowed here");
          }
          used_ |= 1u << v;
          code_.push_back({Op::Load, 0.0, v});
          return;
        }
      pos_ = start;
      fail("unknown name '" + std::string(name) + "'");
    }
    fail(std::string("unexpected '") + c + "'");
  }

  void number() {
    const char *first = src_.data() + pos_;
    const char *last = src_.data() + src_.size();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr == first)
      fail("malformed number");
    pos_ += static_cast<std::size_t>(ptr - first);
    code_.push_back({Op::Const, v});
  }

  void call(std::string_view name, std::size_t start) {
    const FunctionInfo *info = nullptr;
    for (const auto &f : kFunctions)
      if (name == f.name)
        info = &f;
    if (!info) {
      pos_ = start;
      fail("unknown function '" + std::string(name) + "'");
    }
    expect('(');
    int args = 0;
    if (!accept(')')) {
      do {
        expr();
        ++args;
      } while (accept(','));
      expect(')');
    }
    if (args != info->arity) {
      pos_ = start;
      fail("function '" + std::string(name) + "' takes " +
           std::to_string(info->arity) + " argument(s), got " +
           std::to_string(args));
    }
    code_.push_back({info->op});
  }

  std::string_view src_;
  unsigned allowed_;
  int line_;
  int column_;
  std::size_t pos_ = 0;
  unsigned used_ = 0;
  std::vector<Instr> code_;
};

} // namespace detail

class Expression {
public:
  static constexpr int kMaxNesting = 40;
  static constexpr int kMaxStack = 60;

  Expression() = default;

  /// Parses `source`; `line`/`column` anchor error messages in a config file.
  static Expression parse(std::string_view source, unsigned allowed = kAllVars,
                          int line = 0, int column = 0) {
    Expression e;
    e.source_ = std::string(source);
    int open = 0;
    for (char c : e.source_) {
      open += c == '(' ? 1 : c == ')' ? -1 : 0;
      if (open > kMaxNesting)
        throw ConfigError("expression: nesting too deep", line, column);
    }
    detail::Parser parser(e.source_, allowed, line, column);
    e.code_ = parser.run(e.used_);
    if (e.stack_depth() > kMaxStack)
      throw ConfigError("expression: nesting too deep", line, column);
    return e;
  }

  const std::string &source() const noexcept { return source_; }
  bool uses(Var v) const noexcept { return used_ & var_bit(v); }
  bool depends_on_z() const noexcept { return uses(Z); }
  bool depends_on_p() const noexcept { return used_ & kGradient; }
  bool empty() const noexcept { return code_.empty(); }

  Dual eval(const SmallVector &x, double z, const SmallVector &p) const {
    Dual stack[64];
    int top = 0;
    auto load = [&](unsigned v) {
      if (v <= X3)
        return Dual::constant(v < static_cast<unsigned>(x.size()) ? x[v] : 0.0);
      if (v == Z) {
        Dual d{z, {}};
        d.d[0] = 1.0;
        return d;
      }
      const unsigned k = v - P1;
      Dual d{k < static_cast<unsigned>(p.size()) ? p[k] : 0.0, {}};
      d.d[1 + k] = 1.0;
      return d;
    };
    using detail::Op;
    for (const auto &ins : code_) {
      switch (ins.op) {
      case Op::Const:
        stack[top++] = Dual::constant(ins.value);
        break;
      case Op::Load:
        stack[top++] = load(ins.var);
        break;
      case Op::Neg:
        stack[top - 1] = detail::chain(stack[top - 1], -stack[top - 1].v, -1.0);
        break;
      case Op::Add:
        --top;
        stack[top - 1] = detail::add(stack[top - 1], stack[top]);
        break;
      case Op::Sub:
        --top;
        stack[top - 1] = detail::add(stack[top - 1], stack[top], -1.0);
        break;
      case Op::Mul:
        --top;
        stack[top - 1] = detail::mul(stack[top - 1], stack[top]);
        break;
      case Op::Div:
        --top;
        stack[top - 1] = detail::div(stack[top - 1], stack[top]);
        break;
      case Op::Pow:
      case Op::PowFn:
        --top;
        stack[top - 1] = detail::pow(stack[top - 1], stack[top]);
        break;
      case Op::Min:
      case Op::Max: {
        --top;
        const bool first = ins.op == Op::Min ? stack[top - 1].v <= stack[top].v
                                             : stack[top - 1].v >= stack[top].v;
        if (!first)
          stack[top - 1] = stack[top];
        break;
      }
      default: {
        Dual &a = stack[top - 1];
        const double v = a.v;
        switch (ins.op) {
        case Op::Exp: {
          const double e = std::exp(v);
          a = detail::chain(a, e, e);
          break;
        }
        case Op::Log:
          a = detail::chain(a, std::log(v), 1.0 / v);
          break;
        case Op::Sqrt: {
          const double s = std::sqrt(v);
          a = detail::chain(a, s, 0.5 / s);
          break;
        }
        case Op::Sin:
          a = detail::chain(a, std::sin(v), std::cos(v));
          break;
        case Op::Cos:
          a = detail::chain(a, std::cos(v), -std::sin(v));
          break;
        case Op::Tan: {
          const double t = std::tan(v);
          a = detail::chain(a, t, 1.0 + t * t);
          break;
        }
        case Op::Atan:
          a = detail::chain(a, std::atan(v), 1.0 / (1.0 + v * v));
          break;
        case Op::Sinh:
          a = detail::chain(a, std::sinh(v), std::cosh(v));
          break;
        case Op::Cosh:
          a = detail::chain(a, std::cosh(v), std::sinh(v));
          break;
        case Op::Tanh: {
          const double t = std::tanh(v);
          a = detail::chain(a, t, 1.0 - t * t);
          break;
        }
        case Op::Abs:
          a = detail::chain(a, std::abs(v), v < 0 ? -1.0 : 1.0);
          break;
        default:
          break;
        }
      }
      }
    }
    return stack[0];
  }

  double value(const SmallVector &x, double z = 0.0) const {
    return eval(x, z, SmallVector::Zero(x.size())).v;
  }

private:
  int stack_depth() const {
    using detail::Op;
    int top = 0, deepest = 0;
    for (const auto &ins : code_) {
      switch (ins.op) {
      case Op::Const:
      case Op::Load:
        ++top;
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
      case Op::Pow:
      case Op::PowFn:
      case Op::Min:
      case Op::Max:
        --top;
        break;
      default:
        break;
      }
      deepest = std::max(deepest, top);
    }
    return deepest;
  }

  std::string source_;
  std::vector<detail::Instr> code_;
  unsigned used_ = 0;
};

} // namespace hessobs::expr
