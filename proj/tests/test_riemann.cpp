#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "wavefront/normality.hpp"

using namespace wavefront;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

Vector vec3(double a, double b, double c) {
  Vector v(3);
  v << a, b, c;
  return v;
}

MetricField conformal2() {
  return MetricField::parse({{"exp(2*x1)", "0"}, {"0", "exp(2*x1)"}});
}

MetricField conformal3() {
  return MetricField::parse(
      {{"exp(2*x1)", "0", "0"}, {"0", "exp(2*x1)", "0"}, {"0", "0", "exp(2*x1)"}});
}

// Deterministic samples: x uniform in [-1,1]^n, u on the metric sphere scaled
// into [0.5, 2].
std::vector<std::pair<Vector, Vector>> samples(const MetricField& g, int n, int count,
                                               unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coord(-1.0, 1.0);
  std::uniform_real_distribution<double> mag(0.5, 2.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::pair<Vector, Vector>> out;
  out.reserve(static_cast<std::size_t>(count));
  while (static_cast<int>(out.size()) < count) {
    Vector x(n), z(n);
    for (int i = 0; i < n; ++i) x(i) = coord(rng);
    for (int i = 0; i < n; ++i) z(i) = gauss(rng);
    double nz = g.norm(x, z);
    if (nz < 1e-6) continue;
    Vector u = z * (mag(rng) / nz);
    out.emplace_back(std::move(x), std::move(u));
  }
  return out;
}

}  // namespace

TEST_CASE("christoffel symbols: Euclidean metric is flat") {
  auto g = MetricField::euclidean(3);
  auto gamma = g.christoffel(vec3(0.3, -0.7, 1.1));
  for (const Matrix& gk : gamma) CHECK(gk.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("christoffel symbols of the conformal metric") {
  auto g = conformal2();
  Vector x = vec2(0.4, -0.9);
  auto gamma = g.christoffel(x);
  CHECK(gamma[0](0, 0) == Catch::Approx(1.0).epsilon(1e-12));   // Gamma^1_11
  CHECK(gamma[0](1, 1) == Catch::Approx(-1.0).epsilon(1e-12));  // Gamma^1_22
  CHECK(gamma[1](0, 1) == Catch::Approx(1.0).epsilon(1e-12));   // Gamma^2_12
  CHECK(gamma[1](1, 0) == Catch::Approx(1.0).epsilon(1e-12));   // Gamma^2_21
  CHECK(std::abs(gamma[0](0, 1)) <= 1e-13);
  CHECK(std::abs(gamma[0](1, 0)) <= 1e-13);
  CHECK(std::abs(gamma[1](0, 0)) <= 1e-13);
  CHECK(std::abs(gamma[1](1, 1)) <= 1e-13);
  // Symmetry in the lower pair is exact by construction.
  for (int k = 0; k < 2; ++k) {
    CHECK((gamma[static_cast<std::size_t>(k)] -
           gamma[static_cast<std::size_t>(k)].transpose())
              .cwiseAbs()
              .maxCoeff() == 0.0);
  }
}

TEST_CASE("raise and lower indices") {
  auto ge = MetricField::euclidean(2);
  Vector w = vec2(0.3, -1.2);
  CHECK((ge.lower(vec2(0, 0), w) - w).cwiseAbs().maxCoeff() == 0.0);

  auto gc = conformal2();
  Vector low0 = gc.lower(vec2(0, 0), w);
  CHECK((low0 - w).cwiseAbs().maxCoeff() <= 1e-14);  // e^0 = 1
  Vector low1 = gc.lower(vec2(1, 0), w);
  CHECK(low1(0) == Catch::Approx(w(0) * std::exp(2.0)).epsilon(1e-13));

  Vector rt = gc.raise(vec2(1, 0), gc.lower(vec2(1, 0), w));
  CHECK((rt - w).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("metric compatibility: covariant derivative of g vanishes") {
  for (const MetricField& g : {conformal2()}) {
    auto dg = covariant_metric_derivative(g, vec2(0.25, -0.6));
    for (const Matrix& m : dg) CHECK(m.cwiseAbs().maxCoeff() <= 1e-10);
  }
  auto g3 = conformal3();
  auto dg3 = covariant_metric_derivative(g3, vec3(0.2, 0.1, -0.4));
  for (const Matrix& m : dg3) CHECK(m.cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("horizontal gradient reduces to base partials on a flat metric") {
  auto g = MetricField::euclidean(2);
  auto f = ExtendedScalarField::parse("sin(x1)*v1 + x2*v2^2", 2, Representation::velocity);
  Vector x = vec2(0.3, -0.5), v = vec2(1.1, 0.7);
  Vector hg = horizontal_gradient_scalar(f, g, x, v);
  Vector bp = f.base_partials(x, v);
  CHECK((hg - bp).cwiseAbs().maxCoeff() <= 1e-14);

  auto fx = ExtendedScalarField::parse("v1^2 + v2^2", 2, Representation::velocity);
  Vector hg0 = horizontal_gradient_scalar(fx, g, x, v);
  CHECK(hg0.cwiseAbs().maxCoeff() <= 1e-14);  // flat metric, no x dependence
}

TEST_CASE("horizontal gradient of a spherical field equals its explicit x-partial") {
  // The metric-variation and connection corrections cancel for Levi-Civita.
  auto g = conformal2();
  auto W = ExtendedScalarField::parse("(1+0.2*sin(x1))*u^2/2", 2,
                                      Representation::speed_scalar);
  Vector x = vec2(0.3, -0.5), u = vec2(0.8, -0.4);
  double s = g.norm(x, u);
  Vector speed(1);
  speed << s;
  Vector hg = horizontal_gradient_scalar(W, g, x, u);
  Vector explicit_part = W.base_partials(x, speed);
  CHECK((hg - explicit_part).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("newtonian velocity map") {
  auto L2 = LagrangianModel::parse("(v1^2+v2^2)/2", 2);
  Vector u = newtonian_velocity(L2, vec2(0, 0), vec2(2, 0));
  CHECK(u(0) == Catch::Approx(0.5));
  CHECK(u(1) == 0.0);

  auto L4 = LagrangianModel::parse("(v1^2+v2^2)^2/4", 2);
  Vector u4 = newtonian_velocity(L4, vec2(0, 0), vec2(1, 0));
  CHECK(u4(0) == Catch::Approx(1.0));

  CHECK_THROWS_AS(newtonian_velocity(L2, vec2(0, 0), vec2(0, 0)), OmegaNonpositiveError);
}

TEST_CASE("spherical force law hand values") {
  auto geu = MetricField::euclidean(2);

  // W = u^2/2: no x dependence, zero force.
  auto W0 = SphericalHamiltonian::parse("u^2/2", 2);
  auto F0 = ForceField::generated(W0, geu, false);
  CHECK(F0.covariant_at(vec2(0.4, -0.2), vec2(1, 1)).cwiseAbs().maxCoeff() <= 1e-15);

  // W = (1+x1) u^2/2 at x = 0: F_1 = -1/2 along u = (1,0), +1/2 along u = (0,1).
  auto W1 = SphericalHamiltonian::parse("(1+x1)*u^2/2", 2);
  auto F1 = ForceField::generated(W1, geu, false);
  Vector fa = F1.covariant_at(vec2(0, 0), vec2(1, 0));
  CHECK(fa(0) == Catch::Approx(-0.5).epsilon(1e-12));
  CHECK(std::abs(fa(1)) <= 1e-14);
  Vector fb = F1.covariant_at(vec2(0, 0), vec2(0, 1));
  CHECK(fb(0) == Catch::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(fb(1)) <= 1e-14);
}

TEST_CASE("general force law: profile term and the h = 0 specialization") {
  auto geu = MetricField::euclidean(2);
  auto Wq = SphericalHamiltonian::parse("(1+0.3*x2)*u^2/2", 2, std::string("w"));

  // h == 0 path equals the spherical law exactly (same code path).
  auto Fs = ForceField::generated(Wq, geu, false);
  auto Fg0 = ForceField::generated(SphericalHamiltonian::parse("(1+0.3*x2)*u^2/2", 2),
                                   geu, false);
  Vector x = vec2(0.3, -0.4), u = vec2(0.9, 0.5);
  CHECK((Fs.covariant_at(x, u) - Fg0.covariant_at(x, u)).cwiseAbs().maxCoeff() == 0.0);

  // W = u^2/2, h(w) = w: F = (|u|/2) N.
  auto Wid = SphericalHamiltonian::parse("u^2/2", 2, std::string("w"));
  auto Fid = ForceField::generated(Wid, geu, true);
  Vector uu = vec2(0.6, 0.8);
  Vector f = Fid.covariant_at(vec2(0, 0), uu);
  CHECK(f(0) == Catch::Approx(0.5 * 0.6).epsilon(1e-12));
  CHECK(f(1) == Catch::Approx(0.5 * 0.8).epsilon(1e-12));
}

TEST_CASE("projector algebra") {
  auto g = conformal3();
  auto pts = samples(g, 3, 20, 41);
  for (const auto& [x, u] : pts) {
    Matrix P = tangent_projector(g, x, u);
    CHECK(((P * P) - P).cwiseAbs().maxCoeff() <= 1e-14);
    Vector n_up = u / g.norm(x, u);
    CHECK((P * n_up).cwiseAbs().maxCoeff() <= 1e-14);
  }
}

TEST_CASE("weak normality residual: zero force and the constant-force control") {
  auto geu = MetricField::euclidean(2);
  auto Fz = ForceField::from_expressions({"0", "0"}, 2);
  auto rz = weak_normality_residual(Fz, geu, vec2(0.3, 0.1), vec2(0.7, -0.4));
  CHECK(rz.max_abs() == 0.0);

  // Constant covector F = (1, 0) at u = (0, 1): first residual = (2, 0)/v.
  auto Fc = ForceField::from_expressions({"1", "0"}, 2);
  auto rc = weak_normality_residual(Fc, geu, vec2(0, 0), vec2(0, 1));
  CHECK(rc.first(0) == Catch::Approx(2.0).epsilon(1e-12));
  CHECK(std::abs(rc.first(1)) <= 1e-14);

  // And it is a genuine negative control at generic samples.
  auto pts = samples(geu, 2, 50, 17);
  double worst = 0.0;
  for (const auto& [x, u] : pts) {
    worst = std::max(worst, weak_normality_residual(Fc, geu, x, u).max_abs());
  }
  CHECK(worst > 1e-2);
}

TEST_CASE("generated force fields solve the complete normality system") {
  struct Triple {
    const char* name;
    MetricField g;
    SphericalHamiltonian W;
    bool with_profile;
  };
  Triple triples[] = {
      {"euclid quadratic h=0", MetricField::euclidean(3),
       SphericalHamiltonian::parse("(1+0.2*sin(x1))*u^2/2", 3), false},
      {"euclid quartic h=w", MetricField::euclidean(3),
       SphericalHamiltonian::parse("u^4/4 + 0.1*x2*u^2", 3, std::string("w")), true},
      {"conformal quadratic h=w", conformal3(),
       SphericalHamiltonian::parse("exp(0.3*x1)*u^2/2", 3, std::string("w")), true},
  };
  for (auto& t : triples) {
    auto F = ForceField::generated(t.W, t.g, t.with_profile);
    auto pts = samples(t.g, 3, 100, 20240819);
    double worst_weak = 0.0, worst_add = 0.0;
    for (const auto& [x, u] : pts) {
      worst_weak = std::max(worst_weak, weak_normality_residual(F, t.g, x, u).max_abs());
      worst_add =
          std::max(worst_add, additional_normality_residual(F, t.g, x, u).max_abs());
    }
    INFO(t.name);
    CHECK(worst_weak <= 1e-5);
    CHECK(worst_add <= 1e-5);
  }
}

TEST_CASE("additional normality equations are void in dimension two") {
  auto geu = MetricField::euclidean(2);
  auto F = ForceField::from_expressions({"0", "0"}, 2);
  CHECK_THROWS_AS(additional_normality_residual(F, geu, vec2(0, 0), vec2(1, 0)),
                  DimensionTooSmallError);
}

TEST_CASE("vertical gradient with index conversion") {
  auto g = conformal2();
  auto f = ExtendedScalarField::parse("(v1^2+v2^2)/2", 2, Representation::velocity);
  Vector x = vec2(0.5, 0.0), v = vec2(0.3, -0.8);
  Vector low = vertical_gradient_ext(f, g, x, v, false);
  Vector up = vertical_gradient_ext(f, g, x, v, true);
  CHECK((g.lower(x, up) - low).cwiseAbs().maxCoeff() <= 1e-12);
}
