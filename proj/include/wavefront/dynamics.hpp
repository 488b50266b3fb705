#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "wavefront/errors.hpp"
#include "wavefront/legendre.hpp"

namespace wavefront {

enum class Flow { standard, modified };

struct PhasePoint {
  Vector x;
  Vector p;
  double t = 0.0;
};

struct IntegratorConfig {
  enum class Method { rk4, rkf45 };
  Method method = Method::rkf45;
  double step = 1e-2;      // rk4 fixed step
  double abs_tol = 1e-10;  // rkf45 tolerances
  double rel_tol = 1e-10;
  long max_steps = 2000000;
  double omega_floor = 1e-12;
  NewtonConfig newton;
};

struct Derivatives {
  Vector dx;
  Vector dp;
  double omega = 0.0;
  double H = 0.0;
};

// dx^i = dH/dp_i, dp_i = -dH/dx^i.
inline Derivatives standard_rhs(const HamiltonianModel& hm, const PhasePoint& q,
                                Vector* velocity_seed = nullptr,
                                const NewtonConfig& nc = {}) {
  HamiltonianModel::Eval e = hm.eval(q.x, q.p, velocity_seed, nc);
  if (velocity_seed) *velocity_seed = e.velocity;
  Derivatives d;
  d.dx = e.dH_dp;
  d.dp = -e.dH_dx;
  d.omega = e.omega;
  d.H = e.value;
  for (int i = 0; i < d.dx.size(); ++i) {
    if (!std::isfinite(d.dx(i)) || !std::isfinite(d.dp(i))) {
      throw NonFiniteError("non-finite Hamiltonian derivative in flow right-hand side");
    }
  }
  return d;
}

// The standard right-hand side divided by Omega; the wave-front flow.
inline Derivatives modified_rhs(const HamiltonianModel& hm, const PhasePoint& q,
                                Vector* velocity_seed = nullptr,
                                const NewtonConfig& nc = {},
                                double omega_floor = 1e-12) {
  Derivatives d = standard_rhs(hm, q, velocity_seed, nc);
  if (d.omega <= omega_floor) {
    throw OmegaNonpositiveError("Omega = " + detail::format_double(d.omega) +
                                " <= floor at t = " + detail::format_double(q.t));
  }
  d.dx /= d.omega;
  d.dp /= d.omega;
  return d;
}

struct Trajectory {
  Flow flow = Flow::standard;
  std::vector<PhasePoint> samples;
  std::vector<double> H;
  std::vector<double> omega;
  std::vector<double> phase;  // integral of Omega under standard flow; t under modified

  double max_H_drift() const {
    double m = 0.0;
    for (double h : H) m = std::max(m, std::abs(h - H.front()));
    return m;
  }
};

namespace detail {

// State layout: y = [x (n); p (n); phi].
struct RhsResult {
  Eigen::VectorXd dy;
  double H = 0.0;
  double omega = 0.0;
};

class FlowSystem {
 public:
  FlowSystem(const HamiltonianModel& hm, Flow flow, const IntegratorConfig& cfg)
      : hm_(hm), flow_(flow), cfg_(cfg), n_(hm.dimension()) {}

  int state_size() const { return 2 * n_ + 1; }

  RhsResult operator()(double t, const Eigen::VectorXd& y) {
    PhasePoint q;
    q.x = y.head(n_);
    q.p = y.segment(n_, n_);
    q.t = t;
    Vector* seed = hm_.lagrangian_backed() ? &seed_ : nullptr;
    if (hm_.lagrangian_backed() && seed_.size() == 0) seed_ = q.p;
    Derivatives d = standard_rhs(hm_, q, seed, cfg_.newton);
    RhsResult r;
    r.H = d.H;
    r.omega = d.omega;
    r.dy.resize(state_size());
    r.dy.head(n_) = d.dx;
    r.dy.segment(n_, n_) = d.dp;
    r.dy(2 * n_) = d.omega;  // d(phi)/dt = Omega under the standard flow
    if (flow_ == Flow::modified) {
      if (d.omega <= cfg_.omega_floor) {
        throw OmegaNonpositiveError("Omega = " + format_double(d.omega) +
                                    " <= floor at t = " + format_double(t));
      }
      r.dy /= d.omega;  // phi slot becomes exactly 1: phase equals the parameter
    }
    return r;
  }

 private:
  const HamiltonianModel& hm_;
  Flow flow_;
  const IntegratorConfig& cfg_;
  int n_;
  Vector seed_;
};

}  // namespace detail

// Integrates the chosen flow from q0 and samples the state at n_samples
// equally spaced parameter values (endpoints included). Deterministic for a
// fixed configuration.
inline Trajectory integrate(const HamiltonianModel& hm, const PhasePoint& q0, Flow flow,
                            double t_end, const IntegratorConfig& cfg = {},
                            int n_samples = 33) {
  if (n_samples < 2) throw InputError("n_samples must be >= 2");
  const int n = hm.dimension();
  detail::FlowSystem f(hm, flow, cfg);

  Eigen::VectorXd y(f.state_size());
  y.head(n) = q0.x;
  y.segment(n, n) = q0.p;
  y(2 * n) = 0.0;

  Trajectory traj;
  traj.flow = flow;
  traj.samples.reserve(n_samples);

  long steps_used = 0;
  double t = 0.0;
  double h_adaptive = std::min(cfg.step, t_end / (n_samples - 1));

  auto record = [&](double tk, const Eigen::VectorXd& yk) {
    detail::RhsResult r = f(tk, yk);  // diagnostics at the sample point
    PhasePoint q;
    q.x = yk.head(n);
    q.p = yk.segment(n, n);
    q.t = tk;
    traj.samples.push_back(std::move(q));
    traj.H.push_back(r.H);
    traj.omega.push_back(r.omega);
    traj.phase.push_back(yk(2 * n));
  };

  record(0.0, y);

  for (int k = 1; k < n_samples; ++k) {
    double t_target = t_end * k / (n_samples - 1);
    if (cfg.method == IntegratorConfig::Method::rk4) {
      double span = t_target - t;
      long nsub = std::max<long>(1, static_cast<long>(std::ceil(span / cfg.step - 1e-12)));
      double h = span / nsub;
      for (long s = 0; s < nsub; ++s) {
        if (++steps_used > cfg.max_steps) {
          throw StepLimitError("integration exceeded max_steps");
        }
        Eigen::VectorXd k1 = f(t, y).dy;
        Eigen::VectorXd k2 = f(t + 0.5 * h, y + 0.5 * h * k1).dy;
        Eigen::VectorXd k3 = f(t + 0.5 * h, y + 0.5 * h * k2).dy;
        Eigen::VectorXd k4 = f(t + h, y + h * k3).dy;
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += h;
      }
      t = t_target;
    } else {
      // RKF45 (Fehlberg) with the 5th-order solution advanced.
      double h = std::min(h_adaptive, t_target - t);
      while (t < t_target - 1e-14 * std::max(1.0, std::abs(t_target))) {
        if (++steps_used > cfg.max_steps) {
          throw StepLimitError("integration exceeded max_steps");
        }
        h = std::min(h, t_target - t);
        Eigen::VectorXd k1 = f(t, y).dy;
        Eigen::VectorXd k2 = f(t + h / 4.0, y + h * (k1 / 4.0)).dy;
        Eigen::VectorXd k3 =
            f(t + 3.0 * h / 8.0, y + h * (3.0 / 32.0 * k1 + 9.0 / 32.0 * k2)).dy;
        Eigen::VectorXd k4 =
            f(t + 12.0 * h / 13.0, y + h * (1932.0 / 2197.0 * k1 - 7200.0 / 2197.0 * k2 +
                                            7296.0 / 2197.0 * k3))
                .dy;
        Eigen::VectorXd k5 = f(t + h, y + h * (439.0 / 216.0 * k1 - 8.0 * k2 +
                                               3680.0 / 513.0 * k3 - 845.0 / 4104.0 * k4))
                                 .dy;
        Eigen::VectorXd k6 =
            f(t + h / 2.0, y + h * (-8.0 / 27.0 * k1 + 2.0 * k2 - 3544.0 / 2565.0 * k3 +
                                    1859.0 / 4104.0 * k4 - 11.0 / 40.0 * k5))
                .dy;
        Eigen::VectorXd y4 = y + h * (25.0 / 216.0 * k1 + 1408.0 / 2565.0 * k3 +
                                      2197.0 / 4104.0 * k4 - 1.0 / 5.0 * k5);
        Eigen::VectorXd y5 = y + h * (16.0 / 135.0 * k1 + 6656.0 / 12825.0 * k3 +
                                      28561.0 / 56430.0 * k4 - 9.0 / 50.0 * k5 +
                                      2.0 / 55.0 * k6);
        double err = 0.0;
        for (int i = 0; i < y.size(); ++i) {
          double scale =
              cfg.abs_tol + cfg.rel_tol * std::max(std::abs(y(i)), std::abs(y5(i)));
          err = std::max(err, std::abs(y5(i) - y4(i)) / scale);
        }
        if (err <= 1.0) {
          y = y5;
          t += h;
        }
        double factor = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
        factor = std::clamp(factor, 0.2, 5.0);
        h *= factor;
        if (h < 1e-14 * std::max(1.0, std::abs(t_target))) {
          // Distinguish a collapsing Omega (the model assumption failing)
          // from a genuinely stiff spot.
          double omega_now = f(t, y).omega;
          if (flow == Flow::modified && omega_now <= std::sqrt(cfg.omega_floor)) {
            throw OmegaNonpositiveError("Omega collapsed to " +
                                        detail::format_double(omega_now) +
                                        " at t = " + detail::format_double(t));
          }
          throw NoConvergenceError("adaptive step underflow at t = " +
                                   detail::format_double(t));
        }
      }
      h_adaptive = h;
      t = t_target;
    }
    record(t_target, y);
  }
  return traj;
}

// Per-sample phase along a standard-flow trajectory (Eq. of the phase
// integral: phi(t) = integral of Omega).
inline const std::vector<double>& phase_integral(const Trajectory& traj) {
  if (traj.flow != Flow::standard) {
    throw InputError("phase integral requires a standard-flow trajectory");
  }
  return traj.phase;
}

namespace detail {

inline Eigen::VectorXd hermite(double t, double t0, double t1, const Eigen::VectorXd& y0,
                               const Eigen::VectorXd& f0, const Eigen::VectorXd& y1,
                               const Eigen::VectorXd& f1) {
  double dt = t1 - t0;
  double s = (t - t0) / dt;
  double h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
  double h10 = s * (1.0 - s) * (1.0 - s);
  double h01 = s * s * (3.0 - 2.0 * s);
  double h11 = s * s * (s - 1.0);
  return h00 * y0 + h10 * dt * f0 + h01 * y1 + h11 * dt * f1;
}

}  // namespace detail

// Cubic Hermite dense output on the stored samples (derivatives recomputed).
inline PhasePoint sample_trajectory(const HamiltonianModel& hm, const Trajectory& traj,
                                    double t, const IntegratorConfig& cfg = {}) {
  const auto& ts = traj.samples;
  if (ts.empty()) throw InputError("empty trajectory");
  if (t <= ts.front().t) return ts.front();
  if (t >= ts.back().t) return ts.back();
  std::size_t hi = 1;
  while (ts[hi].t < t) ++hi;
  const PhasePoint& a = ts[hi - 1];
  const PhasePoint& b = ts[hi];
  Vector seed_a = a.p, seed_b = b.p;
  Derivatives da = traj.flow == Flow::standard
                       ? standard_rhs(hm, a, &seed_a, cfg.newton)
                       : modified_rhs(hm, a, &seed_a, cfg.newton, cfg.omega_floor);
  Derivatives db = traj.flow == Flow::standard
                       ? standard_rhs(hm, b, &seed_b, cfg.newton)
                       : modified_rhs(hm, b, &seed_b, cfg.newton, cfg.omega_floor);
  int n = hm.dimension();
  Eigen::VectorXd y0(2 * n), y1(2 * n), f0(2 * n), f1(2 * n);
  y0 << a.x, a.p;
  y1 << b.x, b.p;
  f0 << da.dx, da.dp;
  f1 << db.dx, db.dp;
  Eigen::VectorXd y = detail::hermite(t, a.t, b.t, y0, f0, y1, f1);
  PhasePoint q;
  q.x = y.head(n);
  q.p = y.segment(n, n);
  q.t = t;
  return q;
}

// Inverts phi(t) = s on a standard-flow trajectory; phi is strictly
// increasing because Omega > 0 along wave-front families.
inline double time_at_phase(const Trajectory& traj, double s, double tol = 1e-12) {
  if (traj.flow != Flow::standard) {
    throw InputError("phase inversion requires a standard-flow trajectory");
  }
  const auto& phi = traj.phase;
  if (s <= phi.front()) return traj.samples.front().t;
  if (s >= phi.back()) return traj.samples.back().t;
  std::size_t hi = 1;
  while (phi[hi] < s) ++hi;
  double t0 = traj.samples[hi - 1].t, t1 = traj.samples[hi].t;
  double p0 = phi[hi - 1], p1 = phi[hi];
  double w0 = traj.omega[hi - 1], w1 = traj.omega[hi];
  double lo = t0, up = t1;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + up);
    Eigen::VectorXd v0(1), v1(1), g0(1), g1(1);
    v0 << p0;
    v1 << p1;
    g0 << w0;
    g1 << w1;
    double pm = detail::hermite(mid, t0, t1, v0, g0, v1, g1)(0);
    if (std::abs(pm - s) <= tol) return mid;
    if (pm < s) {
      lo = mid;
    } else {
      up = mid;
    }
  }
  return 0.5 * (lo + up);
}

}  // namespace wavefront
