#pragma once

// Problem configuration files.
//
//   # comment
//   function { family = sigma_k_root  k = 2  n = 2 }
//   grid { lo = -1  hi = 1  m = 65 }
//   coefficients { A = zero  psi = "exp(x1)" }
//   obstacle = "10"
//   boundary = "x1^2 + x2^2"
//
// A document is a sequence of `key = value` entries and `key { ... }`
// blocks. Values are numbers, bare words, quoted strings, lists `[a, b]` or
// nested blocks. Unknown and duplicate keys are errors; every error carries
// the 1-based line and column of the offending token.

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hessobs/chart_geometry.hpp"
#include "hessobs/cone_calculus.hpp"
#include "hessobs/errors.hpp"
#include "hessobs/expression.hpp"
#include "hessobs/newton_continuation.hpp"
#include "hessobs/penalized_operator.hpp"

namespace hessobs::config {

// ---------------------------------------------------------------------------
// Syntax tree

struct Entry;

struct Value {
  enum class Kind { Number, Word, String, List, Block };
  Kind kind = Kind::Word;
  std::string text;
  double number = 0.0;
  std::vector<Value> items;
  std::vector<Entry> entries;
  int line = 0;
  int column = 0;
};

struct Entry {
  std::string key;
  int line = 0;
  int column = 0;
  Value value;
};

namespace detail {

struct Token {
  enum class Kind { Word, Number, String, Punct, End };
  Kind kind = Kind::End;
  std::string text;
  double number = 0.0;
  int line = 1;
  int column = 1;
};

class Lexer {
public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    skip_space();
    Token t;
    t.line = line_;
    t.column = column_;
    if (pos_ >= src_.size())
      return t;
    const char c = src_[pos_];
    if (c == '{' || c == '}' || c == '[' || c == ']' || c == ',' || c == '=') {
      t.kind = Token::Kind::Punct;
      t.text = std::string(1, c);
      advance();
      return t;
    }
    if (c == '"') {
      t.kind = Token::Kind::String;
      advance();
      for (;;) {
        if (pos_ >= src_.size() || src_[pos_] == '\n')
          throw ConfigError("unterminated string", t.line, t.column);
        const char d = src_[pos_];
        advance();
        if (d == '"')
          break;
        if (d == '\\') {
          if (pos_ >= src_.size())
            throw ConfigError("unterminated string", t.line, t.column);
          const char e = src_[pos_];
          advance();
          if (e == 'n')
            t.text += '\n';
          else if (e == '"' || e == '\\')
            t.text += e;
          else
            throw ConfigError(std::string("unknown escape '\\") + e + "'",
                              line_, column_ - 1);
          continue;
        }
        t.text += d;
      }
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' ||
        c == '.') {
      const std::size_t start = pos_;
      std::size_t end = pos_;
      while (end < src_.size() && !std::isspace(static_cast<unsigned char>(src_[end])) &&
             std::string_view("{}[],=#\"").find(src_[end]) == std::string_view::npos)
        ++end;
      std::string_view word = src_.substr(start, end - start);
      std::string_view digits = word;
      if (!digits.empty() && digits[0] == '+')
        digits.remove_prefix(1);
      double v = 0.0;
      const auto [ptr, ec] =
          std::from_chars(digits.data(), digits.data() + digits.size(), v);
      if (ec != std::errc() || ptr != digits.data() + digits.size())
        throw ConfigError("malformed number '" + std::string(word) + "'", t.line,
                          t.column);
      t.kind = Token::Kind::Number;
      t.text = std::string(word);
      t.number = v;
      while (pos_ < end)
        advance();
      return t;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      t.kind = Token::Kind::Word;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
        t.text += src_[pos_];
        advance();
      }
      return t;
    }
    throw ConfigError(std::string("unexpected character '") + c + "'", t.line,
                      t.column);
  }

private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      column_ = 1;
    } else {
      ++column_;
    }
    ++pos_;
  }

  void skip_space() {
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n')
          advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int column_ = 1;
};

class TreeParser {
public:
  explicit TreeParser(std::string_view src) : lex_(src) { tok_ = lex_.next(); }

  Value document() {
    Value root;
    root.kind = Value::Kind::Block;
    root.line = 1;
    root.column = 1;
    root.entries = entries(true);
    return root;
  }

private:
  bool is_punct(char c) const {
    return tok_.kind == Token::Kind::Punct && tok_.text[0] == c;
  }

  [[noreturn]] void fail(const std::string &msg) const {
    throw ConfigError(msg, tok_.line, tok_.column);
  }

  std::string describe() const {
    switch (tok_.kind) {
    case Token::Kind::End:
      return "end of file";
    case Token::Kind::String:
      return "string \"" + tok_.text + "\"";
    default:
      return "'" + tok_.text + "'";
    }
  }

  std::vector<Entry> entries(bool top) {
    std::vector<Entry> out;
    for (;;) {
      if (tok_.kind == Token::Kind::End) {
        if (!top)
          fail("missing '}'");
        return out;
      }
      if (is_punct('}')) {
        if (top)
          fail("unexpected '}'");
        return out;
      }
      if (tok_.kind != Token::Kind::Word)
        fail("expected a key, found " + describe());
      Entry e;
      e.key = tok_.text;
      e.line = tok_.line;
      e.column = tok_.column;
      for (const auto &prev : out)
        if (prev.key == e.key)
          throw ConfigError("duplicate key '" + e.key + "'", e.line, e.column);
      tok_ = lex_.next();
      if (is_punct('=')) {
        tok_ = lex_.next();
        e.value = value();
      } else if (is_punct('{')) {
        e.value = value();
      } else {
        fail("expected '=' or '{' after '" + e.key + "'");
      }
      out.push_back(std::move(e));
    }
  }

  Value value() {
    Value v;
    v.line = tok_.line;
    v.column = tok_.column;
    switch (tok_.kind) {
    case Token::Kind::Number:
      v.kind = Value::Kind::Number;
      v.number = tok_.number;
      v.text = tok_.text;
      tok_ = lex_.next();
      return v;
    case Token::Kind::Word:
      v.kind = Value::Kind::Word;
      v.text = tok_.text;
      tok_ = lex_.next();
      return v;
    case Token::Kind::String:
      v.kind = Value::Kind::String;
      v.text = tok_.text;
      tok_ = lex_.next();
      return v;
    case Token::Kind::Punct:
      if (is_punct('[')) {
        v.kind = Value::Kind::List;
        tok_ = lex_.next();
        if (is_punct(']')) {
          tok_ = lex_.next();
          return v;
        }
        for (;;) {
          v.items.push_back(value());
          if (is_punct(',')) {
            tok_ = lex_.next();
            continue;
          }
          if (is_punct(']')) {
            tok_ = lex_.next();
            return v;
          }
          fail("expected ',' or ']' in list, found " + describe());
        }
      }
      if (is_punct('{')) {
        v.kind = Value::Kind::Block;
        tok_ = lex_.next();
        v.entries = entries(false);
        tok_ = lex_.next(); // consume '}'
        return v;
      }
      break;
    case Token::Kind::End:
      break;
    }
    fail("expected a value, found " + describe());
  }

  Lexer lex_;
  Token tok_;
};

} // namespace detail

inline Value parse_tree(std::string_view text) {
  return detail::TreeParser(text).document();
}

// ---------------------------------------------------------------------------
// Typed configuration

/// Expression text plus the position of its first character.
struct Source {
  std::string text;
  int line = 0;
  int column = 0;

  bool empty() const noexcept { return text.empty(); }
  bool operator==(const Source &o) const { return text == o.text; }
};

struct ProblemConfig {
  // function
  std::string family = "sigma_k_root";
  int k = 1;
  int l = 0;
  int n = 2;
  // grid
  std::vector<double> lo, hi;
  std::vector<int> m;
  // metric
  std::string metric_type = "flat"; // flat | conformal | diagonal | tabulated
  Source metric_factor;             // conformal: g = factor * identity
  std::vector<Source> metric_diagonal;
  std::string metric_file;
  // coefficients
  std::string A_kind = "zero"; // zero | kappa_zg | expression
  double kappa = 0.0;
  std::map<std::string, Source> A_entries; // "A11", "A12", ...
  Source psi;
  // data
  Source obstacle;
  Source boundary;
  Source subsolution; // empty means builtin
  // schedule
  double eps0 = 1e-1;
  double ratio = 1e-1;
  double eps_min = 1e-6;
  // newton
  std::optional<double> tol;
  int max_iters = 50;
  // audit
  bool audit_enabled = true;
  std::optional<double> C_audit;
  int theta_samples = 10000;
  std::uint64_t seed = 42;
  // structure check
  int structure_samples = 1000;
  double K0 = 0.0;

  std::string base_dir; // directory of the file, for relative paths
  std::map<std::string, std::pair<int, int>> positions; // "block.key" -> (line, col)

  bool operator==(const ProblemConfig &o) const {
    return family == o.family && k == o.k && l == o.l && n == o.n &&
           lo == o.lo && hi == o.hi && m == o.m && metric_type == o.metric_type &&
           metric_factor == o.metric_factor &&
           metric_diagonal == o.metric_diagonal && metric_file == o.metric_file &&
           A_kind == o.A_kind && kappa == o.kappa && A_entries == o.A_entries &&
           psi == o.psi && obstacle == o.obstacle && boundary == o.boundary &&
           subsolution == o.subsolution && eps0 == o.eps0 && ratio == o.ratio &&
           eps_min == o.eps_min && tol == o.tol && max_iters == o.max_iters &&
           audit_enabled == o.audit_enabled && C_audit == o.C_audit &&
           theta_samples == o.theta_samples && seed == o.seed &&
           structure_samples == o.structure_samples && K0 == o.K0;
  }

  SymmetricFunctionSpec function() const {
    return family == "sigma_k_root"
               ? SymmetricFunctionSpec::sigma_k_root(k, n)
               : SymmetricFunctionSpec::sigma_quotient_root(k, l, n);
  }

  PenaltySchedule schedule() const { return {eps0, ratio, eps_min}; }

  NewtonConfig newton() const {
    NewtonConfig c = NewtonConfig::defaults_for(function());
    if (tol)
      c.tol_residual = *tol;
    c.max_iters = max_iters;
    return c;
  }

  std::pair<int, int> position(const std::string &key) const {
    const auto it = positions.find(key);
    return it == positions.end() ? std::pair{0, 0} : it->second;
  }
};

namespace detail {

/// Reads the entries of one block, remembering which keys were consumed.
class BlockReader {
public:
  BlockReader(const Value &block, std::string path, ProblemConfig &cfg)
      : block_(block), path_(std::move(path)), cfg_(cfg) {}

  const Entry *find(const std::string &key) {
    for (const auto &e : block_.entries)
      if (e.key == key) {
        used_.push_back(key);
        cfg_.positions[qualified(key)] = {e.value.line, e.value.column};
        return &e;
      }
    return nullptr;
  }

  const Entry &require(const std::string &key) {
    const Entry *e = find(key);
    if (!e)
      throw ConfigError("missing required key '" + qualified(key) + "'",
                        block_.line, block_.column);
    return *e;
  }

  /// Rejects every key that was not consumed.
  void finish() const {
    for (const auto &e : block_.entries)
      if (std::find(used_.begin(), used_.end(), e.key) == used_.end())
        throw ConfigError("unknown key '" + qualified(e.key) + "'", e.line,
                          e.column);
  }

  std::string qualified(const std::string &key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

private:
  const Value &block_;
  std::string path_;
  ProblemConfig &cfg_;
  std::vector<std::string> used_;
};

[[noreturn]] inline void bad(const Value &v, const std::string &msg) {
  throw ConfigError(msg, v.line, v.column);
}

inline double as_number(const Entry &e, const std::string &field) {
  if (e.value.kind != Value::Kind::Number)
    bad(e.value, field + ": expected a number");
  return e.value.number;
}

inline int as_int(const Entry &e, const std::string &field) {
  const double v = as_number(e, field);
  if (v != std::floor(v) || std::abs(v) > 1e9)
    bad(e.value, field + ": expected an integer");
  return static_cast<int>(v);
}

inline std::string as_word(const Entry &e, const std::string &field) {
  if (e.value.kind != Value::Kind::Word && e.value.kind != Value::Kind::String)
    bad(e.value, field + ": expected a word");
  return e.value.text;
}

inline bool as_bool(const Entry &e, const std::string &field) {
  const std::string w = as_word(e, field);
  if (w == "true" || w == "on" || w == "yes")
    return true;
  if (w == "false" || w == "off" || w == "no")
    return false;
  bad(e.value, field + ": expected true or false");
}

/// Expressions are quoted strings; plain numbers are accepted too.
inline Source as_source(const Value &v, const std::string &field) {
  if (v.kind == Value::Kind::String)
    return {v.text, v.line, v.column + 1};
  if (v.kind == Value::Kind::Number)
    return {v.text, v.line, v.column};
  bad(v, field + ": expected a quoted expression");
}

inline const Value &as_block(const Entry &e, const std::string &field) {
  if (e.value.kind != Value::Kind::Block)
    bad(e.value, field + ": expected a block { ... }");
  return e.value;
}

template <class T, class Get>
std::vector<T> scalar_or_list(const Entry &e, const std::string &field, int n,
                              Get get) {
  std::vector<T> out;
  if (e.value.kind == Value::Kind::List) {
    if (static_cast<int>(e.value.items.size()) != n)
      bad(e.value, field + ": expected " + std::to_string(n) + " entries, got " +
                       std::to_string(e.value.items.size()));
    for (const auto &item : e.value.items)
      out.push_back(get(item));
  } else {
    out.assign(static_cast<std::size_t>(n), get(e.value));
  }
  return out;
}

} // namespace detail

inline ProblemConfig parse_config(std::string_view text,
                                  const std::string &base_dir = ".") {
  using namespace detail;
  const Value root = parse_tree(text);
  ProblemConfig cfg;
  cfg.base_dir = base_dir;
  BlockReader top(root, "", cfg);

  // function
  {
    const Entry &fe = top.require("function");
    BlockReader b(as_block(fe, "function"), "function", cfg);
    if (const Entry *e = b.find("family")) {
      cfg.family = as_word(*e, "function.family");
      if (cfg.family != "sigma_k_root" && cfg.family != "sigma_quotient_root")
        bad(e->value, "function.family: expected sigma_k_root or "
                      "sigma_quotient_root, got '" + cfg.family + "'");
    }
    const Entry &ne = b.require("n");
    cfg.n = as_int(ne, "function.n");
    if (cfg.n != 2 && cfg.n != 3)
      bad(ne.value, "function.n: dimension must be 2 or 3");
    const Entry &ke = b.require("k");
    cfg.k = as_int(ke, "function.k");
    if (cfg.k < 1)
      bad(ke.value, "function.k: k must be >= 1");
    if (cfg.k > cfg.n)
      bad(ke.value, "function.k: k = " + std::to_string(cfg.k) + " exceeds n = " +
                        std::to_string(cfg.n));
    if (const Entry *e = b.find("l")) {
      if (cfg.family != "sigma_quotient_root")
        bad(e->value, "function.l: only used by sigma_quotient_root");
      cfg.l = as_int(*e, "function.l");
    }
    if (cfg.family == "sigma_quotient_root") {
      if (cfg.l < 1 || cfg.l >= cfg.k)
        throw ConfigError("function.l: need 1 <= l < k for sigma_quotient_root",
                          fe.value.line, fe.value.column);
    }
    b.finish();
  }

  // grid
  {
    BlockReader b(as_block(top.require("grid"), "grid"), "grid", cfg);
    auto num = [](const std::string &field) {
      return [field](const Value &v) {
        if (v.kind != Value::Kind::Number)
          bad(v, field + ": expected a number");
        return v.number;
      };
    };
    cfg.lo = scalar_or_list<double>(b.require("lo"), "grid.lo", cfg.n, num("grid.lo"));
    cfg.hi = scalar_or_list<double>(b.require("hi"), "grid.hi", cfg.n, num("grid.hi"));
    const Entry &me = b.require("m");
    cfg.m = scalar_or_list<int>(me, "grid.m", cfg.n, [](const Value &v) {
      if (v.kind != Value::Kind::Number || v.number != std::floor(v.number))
        bad(v, "grid.m: expected an integer");
      if (v.number < 3)
        bad(v, "grid.m: need at least 3 points per axis");
      if (v.number > 4097)
        bad(v, "grid.m: at most 4097 points per axis");
      return static_cast<int>(v.number);
    });
    for (int a = 0; a < cfg.n; ++a)
      if (!(cfg.hi[a] > cfg.lo[a]))
        throw ConfigError("grid.hi: must exceed grid.lo on every axis",
                          cfg.position("grid.hi").first,
                          cfg.position("grid.hi").second);
    b.finish();
  }

  // metric
  if (const Entry *me = top.find("metric")) {
    BlockReader b(as_block(*me, "metric"), "metric", cfg);
    if (const Entry *e = b.find("type"))
      cfg.metric_type = as_word(*e, "metric.type");
    if (cfg.metric_type == "conformal") {
      cfg.metric_factor = as_source(b.require("factor").value, "metric.factor");
    } else if (cfg.metric_type == "diagonal") {
      const Entry &e = b.require("entries");
      if (e.value.kind != Value::Kind::List ||
          static_cast<int>(e.value.items.size()) != cfg.n)
        bad(e.value, "metric.entries: expected a list of " + std::to_string(cfg.n) +
                         " expressions");
      for (const auto &item : e.value.items)
        cfg.metric_diagonal.push_back(as_source(item, "metric.entries"));
    } else if (cfg.metric_type == "tabulated") {
      cfg.metric_file = as_word(b.require("file"), "metric.file");
    } else if (cfg.metric_type != "flat") {
      bad(me->value, "metric.type: expected flat, conformal, diagonal or tabulated");
    }
    b.finish();
  }

  // coefficients
  {
    BlockReader b(as_block(top.require("coefficients"), "coefficients"),
                  "coefficients", cfg);
    if (const Entry *e = b.find("A")) {
      cfg.A_kind = as_word(*e, "coefficients.A");
      if (cfg.A_kind != "zero" && cfg.A_kind != "kappa_zg" &&
          cfg.A_kind != "expression")
        bad(e->value, "coefficients.A: expected zero, kappa_zg or expression");
    }
    if (cfg.A_kind == "kappa_zg")
      cfg.kappa = as_number(b.require("kappa"), "coefficients.kappa");
    if (cfg.A_kind == "expression")
      for (int i = 1; i <= cfg.n; ++i)
        for (int j = i; j <= cfg.n; ++j) {
          const std::string key = "A" + std::to_string(i) + std::to_string(j);
          if (const Entry *e = b.find(key))
            cfg.A_entries[key] = as_source(e->value, "coefficients." + key);
        }
    cfg.psi = as_source(b.require("psi").value, "coefficients.psi");
    b.finish();
  }

  cfg.obstacle = as_source(top.require("obstacle").value, "obstacle");
  cfg.boundary = as_source(top.require("boundary").value, "boundary");
  if (const Entry *e = top.find("subsolution")) {
    if (!(e->value.kind == Value::Kind::Word && e->value.text == "builtin"))
      cfg.subsolution = as_source(e->value, "subsolution");
  }

  if (const Entry *se = top.find("schedule")) {
    BlockReader b(as_block(*se, "schedule"), "schedule", cfg);
    if (const Entry *e = b.find("eps0"))
      cfg.eps0 = as_number(*e, "schedule.eps0");
    if (const Entry *e = b.find("ratio"))
      cfg.ratio = as_number(*e, "schedule.ratio");
    if (const Entry *e = b.find("eps_min"))
      cfg.eps_min = as_number(*e, "schedule.eps_min");
    b.finish();
    try {
      cfg.schedule().validate();
    } catch (const Error &err) {
      throw ConfigError(err.what(), se->value.line, se->value.column);
    }
  }

  if (const Entry *ne = top.find("newton")) {
    BlockReader b(as_block(*ne, "newton"), "newton", cfg);
    if (const Entry *e = b.find("tol")) {
      cfg.tol = as_number(*e, "newton.tol");
      if (!(*cfg.tol > 0.0))
        bad(e->value, "newton.tol: must be > 0");
    }
    if (const Entry *e = b.find("max_iters")) {
      cfg.max_iters = as_int(*e, "newton.max_iters");
      if (cfg.max_iters < 1)
        bad(e->value, "newton.max_iters: must be >= 1");
    }
    b.finish();
  }

  if (const Entry *ae = top.find("audit")) {
    BlockReader b(as_block(*ae, "audit"), "audit", cfg);
    if (const Entry *e = b.find("enabled"))
      cfg.audit_enabled = as_bool(*e, "audit.enabled");
    if (const Entry *e = b.find("C_audit")) {
      cfg.C_audit = as_number(*e, "audit.C_audit");
      if (!(*cfg.C_audit >= 0.0))
        bad(e->value, "audit.C_audit: must be >= 0");
    }
    if (const Entry *e = b.find("theta_samples")) {
      cfg.theta_samples = as_int(*e, "audit.theta_samples");
      if (cfg.theta_samples < 1)
        bad(e->value, "audit.theta_samples: must be >= 1");
    }
    if (const Entry *e = b.find("seed")) {
      const int s = as_int(*e, "audit.seed");
      if (s < 0)
        bad(e->value, "audit.seed: must be >= 0");
      cfg.seed = static_cast<std::uint64_t>(s);
    }
    b.finish();
  }

  if (const Entry *st = top.find("structure")) {
    BlockReader b(as_block(*st, "structure"), "structure", cfg);
    if (const Entry *e = b.find("samples")) {
      cfg.structure_samples = as_int(*e, "structure.samples");
      if (cfg.structure_samples < 1)
        bad(e->value, "structure.samples: must be >= 1");
    }
    if (const Entry *e = b.find("K0")) {
      cfg.K0 = as_number(*e, "structure.K0");
      if (!(cfg.K0 >= 0.0))
        bad(e->value, "structure.K0: must be >= 0");
    }
    b.finish();
  }

  top.finish();
  return cfg;
}

inline ProblemConfig load_config(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const auto slash = path.find_last_of('/');
  return parse_config(ss.str(),
                      slash == std::string::npos ? "." : path.substr(0, slash));
}

// ---------------------------------------------------------------------------
// Canonical text

/// Shortest decimal that round-trips to the same double.
inline std::string format_number(double v) {
  if (std::isnan(v))
    return "nan";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string quote(const std::string &s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\')
      out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

/// Canonical form of a configuration; parses back to an equal config.
inline std::string to_text(const ProblemConfig &c) {
  std::ostringstream o;
  auto list_d = [](const std::vector<double> &v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i)
      s += (i ? ", " : "") + format_number(v[i]);
    return s + "]";
  };
  auto list_i = [](const std::vector<int> &v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i)
      s += (i ? ", " : "") + std::to_string(v[i]);
    return s + "]";
  };
  o << "function {\n  family = " << c.family << "\n  k = " << c.k << "\n";
  if (c.family == "sigma_quotient_root")
    o << "  l = " << c.l << "\n";
  o << "  n = " << c.n << "\n}\n";
  o << "grid {\n  lo = " << list_d(c.lo) << "\n  hi = " << list_d(c.hi)
    << "\n  m = " << list_i(c.m) << "\n}\n";
  o << "metric {\n  type = " << c.metric_type << "\n";
  if (c.metric_type == "conformal")
    o << "  factor = " << quote(c.metric_factor.text) << "\n";
  if (c.metric_type == "diagonal") {
    o << "  entries = [";
    for (std::size_t i = 0; i < c.metric_diagonal.size(); ++i)
      o << (i ? ", " : "") << quote(c.metric_diagonal[i].text);
    o << "]\n";
  }
  if (c.metric_type == "tabulated")
    o << "  file = " << quote(c.metric_file) << "\n";
  o << "}\n";
  o << "coefficients {\n  A = " << c.A_kind << "\n";
  if (c.A_kind == "kappa_zg")
    o << "  kappa = " << format_number(c.kappa) << "\n";
  for (const auto &[key, src] : c.A_entries)
    o << "  " << key << " = " << quote(src.text) << "\n";
  o << "  psi = " << quote(c.psi.text) << "\n}\n";
  o << "obstacle = " << quote(c.obstacle.text) << "\n";
  o << "boundary = " << quote(c.boundary.text) << "\n";
  o << "subsolution = "
    << (c.subsolution.empty() ? std::string("builtin") : quote(c.subsolution.text))
    << "\n";
  o << "schedule {\n  eps0 = " << format_number(c.eps0)
    << "\n  ratio = " << format_number(c.ratio)
    << "\n  eps_min = " << format_number(c.eps_min) << "\n}\n";
  o << "newton {\n";
  if (c.tol)
    o << "  tol = " << format_number(*c.tol) << "\n";
  o << "  max_iters = " << c.max_iters << "\n}\n";
  o << "audit {\n  enabled = " << (c.audit_enabled ? "true" : "false") << "\n";
  if (c.C_audit)
    o << "  C_audit = " << format_number(*c.C_audit) << "\n";
  o << "  theta_samples = " << c.theta_samples << "\n  seed = " << c.seed
    << "\n}\n";
  o << "structure {\n  samples = " << c.structure_samples
    << "\n  K0 = " << format_number(c.K0) << "\n}\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Building the discrete problem

/// Overrides applied from the command line.
struct Overrides {
  std::optional<int> grid_m;
  std::optional<double> eps_min;
  std::optional<std::uint64_t> seed;
  std::optional<bool> audit;
};

inline void apply_overrides(ProblemConfig &cfg, const Overrides &ov) {
  if (ov.grid_m) {
    if (*ov.grid_m < 3)
      throw ConfigError("--grid-m: need at least 3 points per axis");
    cfg.m.assign(static_cast<std::size_t>(cfg.n), *ov.grid_m);
  }
  if (ov.eps_min) {
    cfg.eps_min = *ov.eps_min;
    try {
      cfg.schedule().validate();
    } catch (const Error &err) {
      throw ConfigError(std::string("--eps-min: ") + err.what());
    }
  }
  if (ov.seed)
    cfg.seed = *ov.seed;
  if (ov.audit)
    cfg.audit_enabled = *ov.audit;
}

struct BuiltProblem {
  ProblemConfig config;
  Problem problem;
};

namespace detail {

inline unsigned coordinate_vars(int n) {
  unsigned bits = 0;
  for (int a = 0; a < n; ++a)
    bits |= 1u << a;
  return bits;
}

inline unsigned coefficient_vars(int n) {
  unsigned bits = coordinate_vars(n) | expr::var_bit(expr::Z);
  for (int a = 0; a < n; ++a)
    bits |= 1u << (expr::P1 + a);
  return bits;
}

inline std::shared_ptr<const expr::Expression> compile(const Source &s,
                                                       unsigned vars) {
  return std::make_shared<const expr::Expression>(
      expr::Expression::parse(s.text, vars, s.line, s.column));
}

inline std::function<double(const SmallVector &)>
scalar_of_x(std::shared_ptr<const expr::Expression> e) {
  return [e](const SmallVector &x) { return e->value(x); };
}

inline std::vector<SmallMatrix> read_tabulated_metric(const ProblemConfig &cfg,
                                                      const ChartGrid &grid) {
  const std::string path = cfg.metric_file.size() && cfg.metric_file[0] == '/'
                               ? cfg.metric_file
                               : cfg.base_dir + "/" + cfg.metric_file;
  std::ifstream in(path);
  const auto pos = cfg.position("metric.file");
  if (!in)
    throw ConfigError("metric.file: cannot read '" + path + "'", pos.first,
                      pos.second);
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.resize(hash);
    std::istringstream ls(line);
    double v;
    while (ls >> v)
      values.push_back(v);
    if (!ls.eof())
      throw ConfigError("metric.file: malformed number in '" + path + "'",
                        pos.first, pos.second);
  }
  const int n = grid.dim();
  const std::size_t per = static_cast<std::size_t>(n * (n + 1) / 2);
  if (values.size() != per * grid.size())
    throw ConfigError("metric.file: expected " + std::to_string(per * grid.size()) +
                          " values (upper triangle per grid point), got " +
                          std::to_string(values.size()),
                      pos.first, pos.second);
  std::vector<SmallMatrix> g(grid.size(), SmallMatrix::Zero(n, n));
  std::size_t at = 0;
  for (std::size_t p = 0; p < grid.size(); ++p)
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        g[p](i, j) = g[p](j, i) = values[at++];
      }
  return g;
}

} // namespace detail

inline BuiltProblem build_problem(const ProblemConfig &cfg) {
  using namespace detail;
  const int n = cfg.n;
  const SymmetricFunctionSpec fn = cfg.function();
  std::array<double, 3> lo{0, 0, 0}, hi{1, 1, 1};
  std::array<int, 3> m{3, 3, 3};
  for (int a = 0; a < n; ++a) {
    lo[a] = cfg.lo[a];
    hi[a] = cfg.hi[a];
    m[a] = cfg.m[a];
  }
  const GridPtr grid = std::make_shared<const ChartGrid>(n, lo, hi, m);
  const unsigned xv = coordinate_vars(n);
  const unsigned cv = coefficient_vars(n);

  MetricField metric = MetricField::flat(grid);
  try {
    if (cfg.metric_type == "conformal") {
      auto f = compile(cfg.metric_factor, xv);
      metric = MetricField::sample(grid, [f, n](const SmallVector &x) {
        return SmallMatrix(f->value(x) * SmallMatrix::Identity(n, n));
      });
    } else if (cfg.metric_type == "diagonal") {
      std::vector<std::shared_ptr<const expr::Expression>> d;
      for (const auto &s : cfg.metric_diagonal)
        d.push_back(compile(s, xv));
      metric = MetricField::sample(grid, [d, n](const SmallVector &x) {
        SmallMatrix g = SmallMatrix::Zero(n, n);
        for (int a = 0; a < n; ++a)
          g(a, a) = d[a]->value(x);
        return g;
      });
    } else if (cfg.metric_type == "tabulated") {
      metric = MetricField::from_values(grid, read_tabulated_metric(cfg, *grid));
    }
  } catch (const NotSPD &e) {
    const auto pos = cfg.position("metric.type");
    throw ConfigError(std::string("metric: ") + e.what(), pos.first, pos.second);
  }

  auto psi_expr = compile(cfg.psi, cv);
  CoefficientField::ScalarFn psi = [psi_expr, n](const SmallVector &x, double z,
                                                 const SmallVector &p) {
    const expr::Dual d = psi_expr->eval(x, z, p);
    ScalarCoefficient s;
    s.value = d.v;
    s.dz = d.d[0];
    s.dp.resize(n);
    for (int k = 0; k < n; ++k)
      s.dp[k] = d.d[1 + k];
    return s;
  };

  CoefficientField coeff;
  if (cfg.A_kind == "zero") {
    coeff = CoefficientField::zero(psi);
  } else if (cfg.A_kind == "kappa_zg") {
    coeff = CoefficientField::kappa_zg(cfg.kappa, psi);
  } else {
    std::array<std::array<std::shared_ptr<const expr::Expression>, 3>, 3> entries{};
    bool varies = false;
    for (const auto &[key, src] : cfg.A_entries) {
      const int i = key[1] - '1', j = key[2] - '1';
      entries[i][j] = entries[j][i] = compile(src, cv);
      varies = varies || entries[i][j]->depends_on_z() || entries[i][j]->depends_on_p();
    }
    CoefficientField::TensorFn A = [entries, n](const SmallVector &x, double z,
                                                const SmallVector &p) {
      TensorCoefficient t = zero_tensor(n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (!entries[i][j])
            continue;
          const expr::Dual d = entries[i][j]->eval(x, z, p);
          t.value(i, j) = d.v;
          t.dz(i, j) = d.d[0];
          for (int k = 0; k < n; ++k)
            t.dp[k](i, j) = d.d[1 + k];
        }
      return t;
    };
    coeff = CoefficientField::custom(
        A, psi, varies ? CoefficientKind::Custom : CoefficientKind::FixedField);
  }

  auto h = compile(cfg.obstacle, xv);
  auto phi = compile(cfg.boundary, xv);
  std::function<double(const SmallVector &)> sub_fn;
  if (!cfg.subsolution.empty())
    sub_fn = scalar_of_x(compile(cfg.subsolution, xv));

  Problem prob = Problem::build(fn, grid, std::move(metric), std::move(coeff),
                                scalar_of_x(h), scalar_of_x(phi),
                                sub_fn ? &sub_fn : nullptr);

  for (std::size_t b : grid->boundary())
    if (!(prob.obstacle[b] > prob.boundary[b])) {
      const SmallVector x = grid->coord(b);
      std::string where = "(";
      for (int a = 0; a < n; ++a)
        where += (a ? ", " : "") + format_number(x[a]);
      where += ")";
      throw ConfigError("obstacle: h must exceed the boundary data phi on the "
                        "boundary; h - phi = " +
                            format_number(prob.obstacle[b] - prob.boundary[b]) +
                            " at x = " + where,
                        cfg.obstacle.line, cfg.obstacle.column);
    }

  if (prob.coefficients.kind == CoefficientKind::Custom ||
      prob.coefficients.kind == CoefficientKind::FixedField)
    prob.coefficients.certified =
        certify_coefficients(prob, {200, cfg.seed}).passed();

  return {cfg, std::move(prob)};
}

} // namespace hessobs::config
