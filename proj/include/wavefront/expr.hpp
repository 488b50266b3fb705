#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wavefront/dual.hpp"
#include "wavefront/errors.hpp"

namespace wavefront {

// Maps identifiers to value slots. `families` resolve indexed names such as
// x1..xn or p1..pn; `names` resolve exact identifiers such as "u" or "w".
struct Alphabet {
  struct Family {
    std::string prefix;
    int count = 0;       // highest admissible 1-based index
    int first_slot = 0;  // slot of prefix+"1"
  };
  std::vector<std::pair<std::string, int>> names;
  std::vector<Family> families;
  int slot_count = 0;
};

namespace detail {

class Parser;

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace detail

class Expression {
 public:
  enum class Op : std::uint8_t {
    number,
    constant,  // named constant: pi, e
    variable,
    neg,
    add,
    sub,
    mul,
    divide,
    power,
    func
  };
  enum class Func : std::uint8_t {
    sin,
    cos,
    tan,
    exp,
    log,
    sqrt,
    abs,
    sinh,
    cosh,
    tanh,
    atan
  };

  struct Node {
    Op op{};
    int a = -1;
    int b = -1;
    double num = 0.0;
    Func fn{};
    int slot = -1;
    std::string name;  // variable or constant spelling
  };

  Expression() = default;

  static Expression parse(std::string_view source, const Alphabet& alphabet);

  const std::string& source() const { return source_; }
  int slot_count() const { return slot_count_; }
  bool empty() const { return root_ < 0; }

  // Evaluates over any scalar type supporting the dual-number interface.
  template <class T>
  T eval(std::span<const T> slots) const {
    return eval_node_<T>(root_, slots);
  }

  // True when the expression references the given slot.
  bool uses_slot(int slot) const {
    for (const Node& nd : nodes_) {
      if (nd.op == Op::variable && nd.slot == slot) return true;
    }
    return false;
  }

  std::string serialize() const { return print_(root_, 1); }

  bool same_structure(const Expression& other) const {
    return nodes_equal_(other, root_, other.root_);
  }

 private:
  friend class detail::Parser;

  std::vector<Node> nodes_;
  int root_ = -1;
  int slot_count_ = 0;
  std::string source_;

  template <class T>
  T eval_node_(int k, std::span<const T> slots) const;

  // Precedence levels: 1 add/sub, 2 mul/div, 3 factor (neg, pow), 4 atom.
  int level_(int k) const {
    switch (nodes_[k].op) {
      case Op::add:
      case Op::sub:
        return 1;
      case Op::mul:
      case Op::divide:
        return 2;
      case Op::neg:
      case Op::power:
        return 3;
      default:
        return 4;
    }
  }

  std::string print_(int k, int min_level) const {
    const Node& nd = nodes_[k];
    std::string s;
    switch (nd.op) {
      case Op::number:
        s = detail::format_double(nd.num);
        break;
      case Op::constant:
      case Op::variable:
        s = nd.name;
        break;
      case Op::add:
        s = print_(nd.a, 1) + " + " + print_(nd.b, 2);
        break;
      case Op::sub:
        s = print_(nd.a, 1) + " - " + print_(nd.b, 2);
        break;
      case Op::mul:
        s = print_(nd.a, 2) + "*" + print_(nd.b, 3);
        break;
      case Op::divide:
        s = print_(nd.a, 2) + "/" + print_(nd.b, 3);
        break;
      case Op::neg:
        s = "-" + print_(nd.a, 4);
        break;
      case Op::power: {
        // The grammar reads factor := ['-'] base ['^' factor], so a negated
        // base prints without parentheses and re-parses to the same tree.
        int base = nd.a;
        std::string prefix;
        if (nodes_[base].op == Op::neg) {
          prefix = "-";
          base = nodes_[base].a;
        }
        s = prefix + print_(base, 4) + "^" + print_(nd.b, 3);
        break;
      }
      case Op::func:
        s = func_name(nd.fn) + ("(" + print_(nd.a, 1) + ")");
        break;
    }
    if (level_(k) < min_level) return "(" + s + ")";
    return s;
  }

  bool nodes_equal_(const Expression& other, int a, int b) const {
    if (a < 0 || b < 0) return a == b;
    const Node& x = nodes_[a];
    const Node& y = other.nodes_[b];
    if (x.op != y.op) return false;
    switch (x.op) {
      case Op::number:
        return x.num == y.num;
      case Op::constant:
        return x.name == y.name;
      case Op::variable:
        return x.slot == y.slot && x.name == y.name;
      case Op::func:
        if (x.fn != y.fn) return false;
        return nodes_equal_(other, x.a, y.a);
      case Op::neg:
        return nodes_equal_(other, x.a, y.a);
      default:
        return nodes_equal_(other, x.a, y.a) && nodes_equal_(other, x.b, y.b);
    }
  }

 public:
  static std::string func_name(Func f) {
    switch (f) {
      case Func::sin: return "sin";
      case Func::cos: return "cos";
      case Func::tan: return "tan";
      case Func::exp: return "exp";
      case Func::log: return "log";
      case Func::sqrt: return "sqrt";
      case Func::abs: return "abs";
      case Func::sinh: return "sinh";
      case Func::cosh: return "cosh";
      case Func::tanh: return "tanh";
      case Func::atan: return "atan";
    }
    return "?";
  }
};

namespace detail {

struct Token {
  enum class Kind { number, ident, plus, minus, star, slash, caret, lparen, rparen, end };
  Kind kind{};
  std::string text;
  double value = 0.0;
  std::size_t pos = 0;  // 1-based position in source
};

inline std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < src.size()) {
    char c = src[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    Token t;
    t.pos = i + 1;
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* begin = src.data() + i;
      char* end = nullptr;
      t.value = std::strtod(begin, &end);
      if (end == begin) {
        throw SyntaxError("invalid number at position " + std::to_string(t.pos), t.pos);
      }
      t.kind = Token::Kind::number;
      t.text.assign(begin, static_cast<const char*>(end));
      i += static_cast<std::size_t>(end - begin);
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) {
        ++j;
      }
      t.kind = Token::Kind::ident;
      t.text.assign(src.substr(i, j - i));
      i = j;
    } else {
      switch (c) {
        case '+': t.kind = Token::Kind::plus; break;
        case '-': t.kind = Token::Kind::minus; break;
        case '*': t.kind = Token::Kind::star; break;
        case '/': t.kind = Token::Kind::slash; break;
        case '^': t.kind = Token::Kind::caret; break;
        case '(': t.kind = Token::Kind::lparen; break;
        case ')': t.kind = Token::Kind::rparen; break;
        default:
          throw SyntaxError(std::string("unexpected character '") + c + "' at position " +
                                std::to_string(i + 1),
                            i + 1);
      }
      t.text = std::string(1, c);
      ++i;
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.kind = Token::Kind::end;
  end.text = "<end>";
  end.pos = src.size() + 1;
  out.push_back(std::move(end));
  return out;
}

}  // namespace detail

template <class T>
T Expression::eval_node_(int k, std::span<const T> slots) const {
  using std::abs;
  using std::atan;
  using std::cos;
  using std::cosh;
  using std::exp;
  using std::log;
  using std::pow;
  using std::sin;
  using std::sinh;
  using std::sqrt;
  using std::tan;
  using std::tanh;
  const Node& nd = nodes_[k];
  switch (nd.op) {
    case Op::number:
    case Op::constant:
      return T(nd.num);
    case Op::variable:
      return slots[static_cast<std::size_t>(nd.slot)];
    case Op::neg:
      return -eval_node_<T>(nd.a, slots);
    case Op::add:
      return eval_node_<T>(nd.a, slots) + eval_node_<T>(nd.b, slots);
    case Op::sub:
      return eval_node_<T>(nd.a, slots) - eval_node_<T>(nd.b, slots);
    case Op::mul:
      return eval_node_<T>(nd.a, slots) * eval_node_<T>(nd.b, slots);
    case Op::divide: {
      T num = eval_node_<T>(nd.a, slots);
      T den = eval_node_<T>(nd.b, slots);
      if (value_of(den) == 0.0) {
        throw EvalDomainError("division by zero: numerator = " +
                              detail::format_double(value_of(num)));
      }
      return num / den;
    }
    case Op::power: {
      T base = eval_node_<T>(nd.a, slots);
      T expo = eval_node_<T>(nd.b, slots);
      double bv = value_of(base);
      double ev = value_of(expo);
      if (bv == 0.0 && ev < 0.0) {
        throw EvalDomainError("zero raised to negative power: exponent = " +
                              detail::format_double(ev));
      }
      if (bv < 0.0 && ev != std::floor(ev)) {
        throw EvalDomainError("fractional power of negative base: base = " +
                              detail::format_double(bv) +
                              ", exponent = " + detail::format_double(ev));
      }
      return pow(base, expo);
    }
    case Op::func: {
      T arg = eval_node_<T>(nd.a, slots);
      double av = value_of(arg);
      switch (nd.fn) {
        case Func::sin: return sin(arg);
        case Func::cos: return cos(arg);
        case Func::tan: return tan(arg);
        case Func::exp: return exp(arg);
        case Func::log:
          if (av <= 0.0) {
            throw EvalDomainError("log of non-positive operand: " +
                                  detail::format_double(av));
          }
          return log(arg);
        case Func::sqrt:
          if (av < 0.0) {
            throw EvalDomainError("sqrt of negative operand: " +
                                  detail::format_double(av));
          }
          return sqrt(arg);
        case Func::abs: return abs(arg);
        case Func::sinh: return sinh(arg);
        case Func::cosh: return cosh(arg);
        case Func::tanh: return tanh(arg);
        case Func::atan: return atan(arg);
      }
      throw Error("unreachable function dispatch");
    }
  }
  throw Error("unreachable node dispatch");
}

namespace detail {

class Parser {
 public:
  Parser(std::string_view source, const Alphabet& alphabet, Expression& out)
      : tokens_(tokenize(source)), alphabet_(alphabet), out_(out) {}

  int run() {
    int root = parse_expr_();
    const Token& t = peek_();
    if (t.kind != Token::Kind::end) {
      throw SyntaxError("unexpected token '" + t.text + "' at position " +
                            std::to_string(t.pos),
                        t.pos);
    }
    return root;
  }

 private:
  std::vector<Token> tokens_;
  std::size_t cursor_ = 0;
  const Alphabet& alphabet_;
  Expression& out_;

  const Token& peek_() const { return tokens_[cursor_]; }
  const Token& advance_() { return tokens_[cursor_++]; }
  bool match_(Token::Kind k) {
    if (peek_().kind == k) {
      ++cursor_;
      return true;
    }
    return false;
  }

  int make_(Expression::Node nd) {
    out_.nodes_.push_back(std::move(nd));
    return static_cast<int>(out_.nodes_.size()) - 1;
  }

  int parse_expr_() {
    int lhs = parse_term_();
    for (;;) {
      if (match_(Token::Kind::plus)) {
        int rhs = parse_term_();
        Expression::Node nd;
        nd.op = Expression::Op::add;
        nd.a = lhs;
        nd.b = rhs;
        lhs = make_(std::move(nd));
      } else if (match_(Token::Kind::minus)) {
        int rhs = parse_term_();
        Expression::Node nd;
        nd.op = Expression::Op::sub;
        nd.a = lhs;
        nd.b = rhs;
        lhs = make_(std::move(nd));
      } else {
        return lhs;
      }
    }
  }

  int parse_term_() {
    int lhs = parse_factor_();
    for (;;) {
      if (match_(Token::Kind::star)) {
        int rhs = parse_factor_();
        Expression::Node nd;
        nd.op = Expression::Op::mul;
        nd.a = lhs;
        nd.b = rhs;
        lhs = make_(std::move(nd));
      } else if (match_(Token::Kind::slash)) {
        int rhs = parse_factor_();
        Expression::Node nd;
        nd.op = Expression::Op::divide;
        nd.a = lhs;
        nd.b = rhs;
        lhs = make_(std::move(nd));
      } else {
        return lhs;
      }
    }
  }

  // factor := ['-'] base ['^' factor]; unary minus binds to the base, so
  // -x^2 parses as (-x)^2 and -(x^2) needs explicit parentheses.
  int parse_factor_() {
    bool negate = match_(Token::Kind::minus);
    int node = parse_base_();
    if (negate) {
      Expression::Node nd;
      nd.op = Expression::Op::neg;
      nd.a = node;
      node = make_(std::move(nd));
    }
    if (match_(Token::Kind::caret)) {
      int rhs = parse_factor_();  // right-associative
      Expression::Node nd;
      nd.op = Expression::Op::power;
      nd.a = node;
      nd.b = rhs;
      node = make_(std::move(nd));
    }
    return node;
  }

  int parse_base_() {
    const Token& t = advance_();
    switch (t.kind) {
      case Token::Kind::number: {
        Expression::Node nd;
        nd.op = Expression::Op::number;
        nd.num = t.value;
        return make_(std::move(nd));
      }
      case Token::Kind::lparen: {
        int inner = parse_expr_();
        if (!match_(Token::Kind::rparen)) {
          const Token& bad = peek_();
          throw SyntaxError("expected ')' before '" + bad.text + "' at position " +
                                std::to_string(bad.pos),
                            bad.pos);
        }
        return inner;
      }
      case Token::Kind::ident:
        return parse_ident_(t);
      default:
        throw SyntaxError("unexpected token '" + t.text + "' at position " +
                              std::to_string(t.pos),
                          t.pos);
    }
  }

  int parse_ident_(const Token& t) {
    static const std::pair<const char*, Expression::Func> kFuncs[] = {
        {"sin", Expression::Func::sin},   {"cos", Expression::Func::cos},
        {"tan", Expression::Func::tan},   {"exp", Expression::Func::exp},
        {"log", Expression::Func::log},   {"sqrt", Expression::Func::sqrt},
        {"abs", Expression::Func::abs},   {"sinh", Expression::Func::sinh},
        {"cosh", Expression::Func::cosh}, {"tanh", Expression::Func::tanh},
        {"atan", Expression::Func::atan}};
    for (const auto& [name, fn] : kFuncs) {
      if (t.text == name) {
        if (!match_(Token::Kind::lparen)) {
          const Token& bad = peek_();
          throw SyntaxError("expected '(' after function '" + t.text + "' at position " +
                                std::to_string(bad.pos),
                            bad.pos);
        }
        int arg = parse_expr_();
        if (!match_(Token::Kind::rparen)) {
          const Token& bad = peek_();
          throw SyntaxError("expected ')' before '" + bad.text + "' at position " +
                                std::to_string(bad.pos),
                            bad.pos);
        }
        Expression::Node nd;
        nd.op = Expression::Op::func;
        nd.fn = fn;
        nd.a = arg;
        return make_(std::move(nd));
      }
    }
    if (t.text == "pi") {
      Expression::Node nd;
      nd.op = Expression::Op::constant;
      nd.num = std::numbers::pi_v<double>;
      nd.name = "pi";
      return make_(std::move(nd));
    }
    if (t.text == "e") {
      Expression::Node nd;
      nd.op = Expression::Op::constant;
      nd.num = std::numbers::e_v<double>;
      nd.name = "e";
      return make_(std::move(nd));
    }
    for (const auto& [name, slot] : alphabet_.names) {
      if (t.text == name) {
        Expression::Node nd;
        nd.op = Expression::Op::variable;
        nd.slot = slot;
        nd.name = t.text;
        return make_(std::move(nd));
      }
    }
    for (const Alphabet::Family& fam : alphabet_.families) {
      if (t.text.size() > fam.prefix.size() && t.text.starts_with(fam.prefix)) {
        std::string_view digits{t.text.data() + fam.prefix.size(),
                                t.text.size() - fam.prefix.size()};
        bool all_digits = true;
        for (char c : digits) {
          if (!std::isdigit(static_cast<unsigned char>(c))) {
            all_digits = false;
            break;
          }
        }
        if (!all_digits) continue;
        int index = std::atoi(std::string(digits).c_str());
        if (index < 1 || index > fam.count) {
          throw UnknownVariableError(
              "variable '" + t.text + "' at position " + std::to_string(t.pos) +
                  ": index out of range (allowed 1.." + std::to_string(fam.count) + ")",
              t.pos);
        }
        Expression::Node nd;
        nd.op = Expression::Op::variable;
        nd.slot = fam.first_slot + index - 1;
        nd.name = t.text;
        return make_(std::move(nd));
      }
    }
    throw UnknownVariableError(
        "unknown identifier '" + t.text + "' at position " + std::to_string(t.pos), t.pos);
  }
};

}  // namespace detail

inline Expression Expression::parse(std::string_view source, const Alphabet& alphabet) {
  Expression out;
  out.source_.assign(source);
  out.slot_count_ = alphabet.slot_count;
  std::string trimmed{source};
  bool only_space = true;
  for (char c : trimmed) {
    if (!std::isspace(static_cast<unsigned char>(c))) {
      only_space = false;
      break;
    }
  }
  if (source.empty() || only_space) {
    throw InputError("empty expression");
  }
  detail::Parser parser(source, alphabet, out);
  out.root_ = parser.run();
  return out;
}

}  // namespace wavefront
