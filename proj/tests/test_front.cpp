#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <numbers>
#include <random>

#include "wavefront/front.hpp"

using namespace wavefront;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi_v<double>;

Hypersurface plane_z0(int count) {
  return Hypersurface::parse({"y1", "y2", "0"},
                             {{-1.0, 1.0, count, false}, {-1.0, 1.0, count, false}}, 1);
}

Hypersurface unit_circle(int count) {
  return Hypersurface::parse({"cos(y1)", "sin(y1)"}, {{0.0, kTwoPi, count, true}}, -1);
}

HamiltonianModel eikonal3(double c) {
  double u = 1.0 / (2.0 * c * c);
  return HamiltonianModel::parse(
      "(p1^2+p2^2+p3^2)/2 - " + detail::format_double(u), 3);
}

}  // namespace

TEST_CASE("solve_nu hand values") {
  auto h2 = eikonal3(2.0);
  Vector x = Vector::Zero(3);
  Vector n(3);
  n << 0, 0, 1;
  CHECK(solve_nu(h2, x, n, 1.0) == Catch::Approx(0.5).margin(1e-12));

  auto h1 = HamiltonianModel::parse("(p1^2+p2^2+p3^2)/2 - 1/2", 3);
  CHECK(solve_nu(h1, x, n, 1.0) == Catch::Approx(1.0).margin(1e-12));

  auto hpos = HamiltonianModel::parse("(p1^2+p2^2+p3^2)/2 + 1/2", 3);
  CHECK_THROWS_AS(solve_nu(hpos, x, n, 1.0), NoRootError);
  CHECK_THROWS_AS(solve_nu(h1, x, n, 0.0), InputError);
}

TEST_CASE("init_front on the plane gives uniform normal momenta") {
  auto hm = eikonal3(1.0);
  auto sigma = plane_z0(5);
  FrontState f = init_front(hm, sigma, 1.0);
  for (const FrontNode& node : f.nodes) {
    CHECK(node.nu == Catch::Approx(1.0).margin(1e-12));
    CHECK(node.p(0) == Catch::Approx(0.0).margin(1e-13));
    CHECK(node.p(1) == Catch::Approx(0.0).margin(1e-13));
    CHECK(node.p(2) == Catch::Approx(1.0).margin(1e-12));
    CHECK(std::abs(node.H) <= 1e-12);
  }
  for (double phi : f.phi) CHECK(std::abs(phi) <= 1e-12);
  for (double pd : f.phidot) CHECK(std::abs(pd) <= 1e-8);
}

TEST_CASE("init_front on the circle satisfies the first integral exactly") {
  auto hm = HamiltonianModel::from_lagrangian(
      LagrangianModel::parse("(v1^2+v2^2)^2/4 + 3/4", 2));
  auto sigma = unit_circle(32);
  FrontState f = init_front(hm, sigma, 1.0);
  for (const FrontNode& node : f.nodes) {
    CHECK(std::abs(node.H) <= 1e-12);
    CHECK(node.nu == Catch::Approx(1.0).margin(1e-10));
  }
  for (double phi : f.phi) CHECK(std::abs(phi) <= 1e-12);
  for (double pd : f.phidot) CHECK(std::abs(pd) <= 1e-8);
}

TEST_CASE("plane front under constant speed stays plane: z = c*t") {
  for (double c : {1.0, 2.0}) {
    auto hm = eikonal3(c);
    auto sigma = plane_z0(5);
    FrontState f0 = init_front(hm, sigma, 1.0);
    auto result = propagate_front(hm, f0, 1.0, {}, 9);
    const FrontState& last = result.states.back();
    for (const FrontNode& node : last.nodes) {
      CHECK(std::abs(node.x(2) - c * 1.0) <= (c == 1.0 ? 1e-9 : 1e-6));
    }
    CHECK(result.trace.max_abs_phi <= 1e-9);
    for (const FrontState& s : result.states) {
      for (const FrontNode& node : s.nodes) {
        CHECK(std::abs(node.H - 0.0) <= 1e-8);
      }
    }
  }
}

TEST_CASE("quartic circle front certifies the normal-shift theorems") {
  auto hm = HamiltonianModel::from_lagrangian(
      LagrangianModel::parse("(v1^2+v2^2)^2/4 + 3/4", 2));
  auto sigma = unit_circle(64);
  FrontState f0 = init_front(hm, sigma, 1.0);
  auto result = propagate_front(hm, f0, 1.0, {}, 9);
  CHECK(result.trace.max_abs_phi <= 1e-6);
  // Expanding circle: |tau| tracks the radius growth r(t) = 1 + t.
  const FrontState& last = result.states.back();
  Vector tau = variation_vector(last, 0, 0);
  double h = sigma.axes()[0].spacing();
  double expected = (1.0 + 1.0) * std::sin(h) / h;  // stencil factor sin(h)/h
  CHECK(tau.norm() == Catch::Approx(expected).epsilon(1e-6));
}

TEST_CASE("deviation functions match the velocity-representation pairing") {
  auto L = LagrangianModel::parse("(v1^2+v2^2)^2/4 + 3/4", 2);
  auto hm = HamiltonianModel::from_lagrangian(
      LagrangianModel::parse("(v1^2+v2^2)^2/4 + 3/4", 2));
  auto sigma = unit_circle(32);
  FrontState f0 = init_front(hm, sigma, 1.0);
  auto result = propagate_front(hm, f0, 0.7, {}, 5);
  for (const FrontState& s : result.states) {
    for (int flat = 0; flat < s.node_count(); ++flat) {
      Vector tau = variation_vector(s, flat, 0);
      const FrontNode& node = s.nodes[static_cast<std::size_t>(flat)];
      // p-representation pairing
      double phi_p = node.p.dot(tau);
      // v-representation pairing via lambda(v*)
      Vector lam = L.momentum(node.x, node.vseed);
      double phi_v = lam.dot(tau);
      CHECK(std::abs(phi_p - phi_v) <= 1e-10);
    }
  }
}

TEST_CASE("perturbed nu grows phi linearly while conserving Omega*phidot") {
  auto hm = HamiltonianModel::from_lagrangian(
      LagrangianModel::parse("(v1^2+v2^2)^2/4 + 3/4", 2));
  auto sigma = unit_circle(32);
  FrontState f0 = init_front(hm, sigma, 1.0);
  perturb_nu(hm, f0, 1.1, quadrant_predicate(f0.axes));
  auto result = propagate_front(hm, f0, 1.0, {}, 9);

  CHECK(result.trace.max_abs_phi > 1e-3);
  CHECK(result.trace.max_omega_phidot_drift_rel <= 1e-6);

  // Linear growth at a jump node: phi(t) = phi(0) + t * phidot with constant rate.
  const DeviationTrace& tr = result.trace;
  int jump = 0;  // node 0 borders the perturbed quadrant across the seam
  std::vector<double> series;
  for (std::size_t k = 0; k < tr.times.size(); ++k) {
    series.push_back(tr.at(tr.phi, static_cast<int>(k), jump, 0));
  }
  double rate0 = (series[1] - series[0]) / (tr.times[1] - tr.times[0]);
  REQUIRE(std::abs(rate0) > 1e-4);
  for (std::size_t k = 2; k < series.size(); ++k) {
    double rate = (series[k] - series[k - 1]) / (tr.times[k] - tr.times[k - 1]);
    CHECK(rate == Catch::Approx(rate0).epsilon(1e-6));
  }
}

TEST_CASE("deviation rate agrees with the centered time difference of phi") {
  // Exact initial data keeps the trajectory family smooth, which is what the
  // two-estimator comparison assumes.
  auto hm = HamiltonianModel::from_lagrangian(
      LagrangianModel::parse("(v1^2+v2^2)^2/4 + 3/4", 2));
  auto sigma = unit_circle(64);
  FrontState f0 = init_front(hm, sigma, 1.0);
  auto result = propagate_front(hm, f0, 0.5, {}, 33);
  const DeviationTrace& tr = result.trace;
  double dt = tr.times[1] - tr.times[0];
  double worst = 0.0;
  for (int node = 0; node < tr.node_count; ++node) {
    for (std::size_t k = 1; k + 1 < tr.times.size(); ++k) {
      double dphi = (tr.at(tr.phi, static_cast<int>(k + 1), node, 0) -
                     tr.at(tr.phi, static_cast<int>(k - 1), node, 0)) /
                    (2.0 * dt);
      double rate = tr.at(tr.phidot, static_cast<int>(k), node, 0);
      worst = std::max(worst, std::abs(dphi - rate));
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("normal scale invariance: nu absorbs the normal normalization") {
  auto hm = HamiltonianModel::from_lagrangian(
      LagrangianModel::parse("(v1^2+v2^2)^2/4 + 3/4", 2));
  auto sigma = unit_circle(32);
  FrontState a = init_front(hm, sigma, 1.0, 1.0);
  FrontState b = init_front(hm, sigma, 1.0 / 3.0, 3.0);
  auto ra = propagate_front(hm, a, 1.0, {}, 5);
  auto rb = propagate_front(hm, b, 1.0, {}, 5);
  for (std::size_t k = 0; k < ra.states.size(); ++k) {
    for (int flat = 0; flat < a.node_count(); ++flat) {
      const FrontNode& na = ra.states[k].nodes[static_cast<std::size_t>(flat)];
      const FrontNode& nb = rb.states[k].nodes[static_cast<std::size_t>(flat)];
      CHECK((na.x - nb.x).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK((na.p - nb.p).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("variation vector refinement is second order") {
  auto hm = HamiltonianModel::parse("(p1^2+p2^2)/2 - 1/2", 2);
  double h32 = kTwoPi / 32.0, h64 = kTwoPi / 64.0;
  FrontState f32 = init_front(hm, unit_circle(32), 1.0);
  FrontState f64 = init_front(hm, unit_circle(64), 1.0);
  // |tau| = sin(h)/h for the unit circle; the deficit from 1 is the stencil error.
  double e32 = std::abs(variation_vector(f32, 0, 0).norm() - 1.0);
  double e64 = std::abs(variation_vector(f64, 0, 0).norm() - 1.0);
  double expected32 = std::abs(std::sin(h32) / h32 - 1.0);
  double expected64 = std::abs(std::sin(h64) / h64 - 1.0);
  CHECK(e32 == Catch::Approx(expected32).epsilon(1e-8));
  CHECK(e64 == Catch::Approx(expected64).epsilon(1e-8));
  CHECK(e32 / e64 == Catch::Approx(4.0).epsilon(0.02));
}

TEST_CASE("pfaff residual vanishes for solve_nu data and flags random nu") {
  // Plane with constant speed: both sides identically zero.
  auto h3 = eikonal3(1.0);
  auto plane = plane_z0(5);
  FrontState fp = init_front(h3, plane, 1.0);
  std::vector<double> nu_plane;
  for (const FrontNode& node : fp.nodes) nu_plane.push_back(node.nu);
  auto res_plane = pfaff_residual(h3, plane, nu_plane);
  for (double r : res_plane) CHECK(std::abs(r) <= 1e-10);

  // Curved anisotropic scenario: the residual is pure stencil error, so it
  // needs the fine default grid to fit the 1e-5 budget.
  auto hm = HamiltonianModel::parse(
      "-(1+0.3*sin(x1))/2 + (1+0.3*cos(x2))/2*(p1^2+p2^2)", 2);
  auto circle = unit_circle(512);
  FrontState f0 = init_front(hm, circle, 1.0);
  std::vector<double> nu;
  for (const FrontNode& node : f0.nodes) nu.push_back(node.nu);
  auto res = pfaff_residual(hm, circle, nu);
  double worst = 0.0;
  for (double r : res) worst = std::max(worst, std::abs(r));
  CHECK(worst <= 1e-5);

  // Random nu field: clearly incompatible.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> jitter(0.8, 1.2);
  std::vector<double> bad;
  for (double v : nu) bad.push_back(v * jitter(rng));
  auto res_bad = pfaff_residual(hm, circle, bad);
  double worst_bad = 0.0;
  for (double r : res_bad) worst_bad = std::max(worst_bad, std::abs(r));
  CHECK(worst_bad > 1e-2);
}

TEST_CASE("propagation failures are reported with the node index") {
  // Rays climbing the potential lose |p| and hit the Omega floor; rays on the
  // downhill side keep going. nu exists everywhere on the unit circle.
  auto hm = HamiltonianModel::parse("(p1^2+p2^2)/2 - 1 + 0.4*x1", 2);
  auto circle = unit_circle(16);
  FrontState f0 = init_front(hm, circle, 0.5);
  try {
    propagate_front(hm, f0, 4.0, {}, 9);
    FAIL("expected OmegaNonpositiveError");
  } catch (const OmegaNonpositiveError& err) {
    CHECK(std::string(err.what()).find("node") != std::string::npos);
  }
  auto masked = propagate_front(hm, f0, 4.0, {}, 9, true);
  CHECK(masked.failed_nodes > 0);
  CHECK(masked.failed_nodes < f0.node_count());
}
