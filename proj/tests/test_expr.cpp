#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "wavefront/expr.hpp"
#include "wavefront/field.hpp"

using namespace wavefront;

namespace {

Expression parse_v(const std::string& src, int n) {
  return Expression::parse(src, ExtendedScalarField::make_alphabet(n, Representation::velocity));
}

double eval_v(const Expression& e, std::vector<double> slots) {
  return e.eval(std::span<const double>(slots));
}

}  // namespace

TEST_CASE("basic arithmetic parses and evaluates") {
  auto e = parse_v("v1^2/2 + v2^2/2", 2);
  CHECK(eval_v(e, {0.0, 0.0, 1.0, 2.0}) == Catch::Approx(2.5));

  auto q = parse_v("(v1^2+v2^2)^2/4", 2);
  CHECK(eval_v(q, {0.0, 0.0, 1.0, 1.0}) == Catch::Approx(1.0));
}

TEST_CASE("syntax error reports the offending token position") {
  try {
    parse_v("v1 + * v2", 2);
    FAIL("expected SyntaxError");
  } catch (const SyntaxError& err) {
    CHECK(err.position() == 6);  // the '*'
    CHECK(std::string(err.what()).find("*") != std::string::npos);
  }
}

TEST_CASE("unknown identifiers and out-of-range indices are rejected") {
  CHECK_THROWS_AS(parse_v("q1 + 1", 2), UnknownVariableError);
  CHECK_THROWS_AS(parse_v("v3", 2), UnknownVariableError);
  CHECK_THROWS_AS(parse_v("x0", 2), UnknownVariableError);
  CHECK_THROWS_AS(Expression::parse("", ExtendedScalarField::make_alphabet(2, Representation::velocity)),
                  InputError);
}

TEST_CASE("momentum and speed-scalar alphabets") {
  auto h = Expression::parse("(p1^2+p2^2+p3^2)/2 - 1/2",
                             ExtendedScalarField::make_alphabet(3, Representation::momentum));
  std::vector<double> slots{0, 0, 0, 0, 0, 1};
  CHECK(h.eval(std::span<const double>(slots)) == Catch::Approx(0.0).margin(1e-15));

  auto c = Expression::parse("2", ExtendedScalarField::make_alphabet(3, Representation::speed_scalar));
  std::vector<double> s2{5, -1, 3, 0.7};
  CHECK(c.eval(std::span<const double>(s2)) == Catch::Approx(2.0));

  CHECK_THROWS_AS(
      Expression::parse("v1", ExtendedScalarField::make_alphabet(2, Representation::momentum)),
      UnknownVariableError);
}

TEST_CASE("power is right-associative and unary minus binds to the base") {
  auto e = parse_v("2^3^2", 1);
  CHECK(eval_v(e, {0.0, 0.0}) == Catch::Approx(512.0));

  // factor := ['-'] base ['^' factor]
  auto m = parse_v("-2^2", 1);
  CHECK(eval_v(m, {0.0, 0.0}) == Catch::Approx(4.0));
  auto p = parse_v("-(2^2)", 1);
  CHECK(eval_v(p, {0.0, 0.0}) == Catch::Approx(-4.0));
}

TEST_CASE("constants pi and e") {
  auto e = parse_v("sin(pi/2) + e^0", 1);
  CHECK(eval_v(e, {0.0, 0.0}) == Catch::Approx(2.0));
}

TEST_CASE("domain errors carry operand values") {
  auto d = parse_v("1/v1", 1);
  CHECK_THROWS_AS(eval_v(d, {0.0, 0.0}), EvalDomainError);

  auto l = parse_v("log(v1)", 1);
  try {
    eval_v(l, {0.0, -1.0});
    FAIL("expected EvalDomainError");
  } catch (const EvalDomainError& err) {
    CHECK(std::string(err.what()).find("-1") != std::string::npos);
  }

  auto s = parse_v("sqrt(v1)", 1);
  CHECK_THROWS_AS(eval_v(s, {0.0, -4.0}), EvalDomainError);
}

TEST_CASE("serialize/parse round trip is structurally stable") {
  const char* corpus[] = {
      "v1^2/2 + v2^2/2",
      "(v1^2+v2^2)^2/4",
      "(v1^2+v2^2)^2/4 + 3/4",
      "((1+0.3*sin(x1))*v1^2 + (1+0.3*sin(x2))*v2^2)/2 + 1/2",
      "-(v1^2) + -v2^2",
      "-v1^2",
      "2*-v1",
      "v1 - (v2 - x1)",
      "v1/(v2*x1)",
      "sin(x1)*cos(x2) - tanh(v1) + atan(v2)",
      "sqrt(abs(v1)) + exp(x1) + log(1 + x2^2)",
      "pi*v1 + e",
      "v1^-v2",
      "1e-3*v1 + 2.5E2",
      "sinh(x1) + cosh(x2)",
  };
  for (const char* src : corpus) {
    auto a = parse_v(src, 2);
    auto b = parse_v(a.serialize(), 2);
    INFO("source: " << src << "  serialized: " << a.serialize());
    CHECK(a.same_structure(b));
    CHECK(b.same_structure(a));
  }
}

TEST_CASE("serialization preserves 17-digit literals") {
  auto a = parse_v("0.1 + 3.141592653589793", 1);
  auto b = parse_v(a.serialize(), 1);
  CHECK(a.same_structure(b));
  CHECK(eval_v(a, {0, 0}) == eval_v(b, {0, 0}));
}

TEST_CASE("evaluation is deterministic bit for bit") {
  auto e = parse_v("sin(x1)*exp(v1) + sqrt(1+v2^2)/3", 2);
  std::vector<double> slots{0.3, 0.0, -1.2, 0.8};
  double a = e.eval(std::span<const double>(slots));
  double b = e.eval(std::span<const double>(slots));
  CHECK(std::memcmp(&a, &b, sizeof a) == 0);
}
