#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string_view>
#include <utility>

#include "wavefront/errors.hpp"
#include "wavefront/field.hpp"

namespace wavefront {

struct NewtonConfig {
  int max_iter = 50;
  double tol = 1e-12;  // residual infinity norm
  double backtrack_factor = 0.5;
  int max_backtracks = 20;
  bool check_positive = false;
};

// Lagrangian dynamics data: L(x, v) with the Legendre map lambda(x,v) = dL/dv,
// its Newton inverse, and the denominator Omega = sum v^i dL/dv^i.
class LagrangianModel {
 public:
  explicit LagrangianModel(ExtendedScalarField L) : L_(std::move(L)) {
    if (L_.representation() != Representation::velocity) {
      throw InputError("LagrangianModel requires a velocity-representation field");
    }
  }

  static LagrangianModel parse(std::string_view source, int n, DiffConfig diff = {}) {
    return LagrangianModel(
        ExtendedScalarField::parse(source, n, Representation::velocity, diff));
  }

  int dimension() const { return L_.dimension(); }
  const ExtendedScalarField& lagrangian() const { return L_; }

  double value(const Vector& x, const Vector& v) const { return L_.value(x, v); }

  // Legendre map: p_i = dL/dv^i.
  Vector momentum(const Vector& x, const Vector& v) const {
    return L_.fiber_gradient(x, v);
  }

  // Half fiber Hessian mu_ij = (1/2) d2L/dv^i dv^j.
  Matrix mu(const Vector& x, const Vector& v) const { return L_.fiber_hessian(x, v); }

  double omega(const Vector& x, const Vector& v) const {
    double w = v.dot(momentum(x, v));
    if (!std::isfinite(w)) throw NonFiniteError("non-finite Omega value");
    return w;
  }

  bool positive_definite(const Vector& x, const Vector& v) const {
    Matrix m = 2.0 * mu(x, v);
    Eigen::LLT<Matrix> llt(m);
    return llt.info() == Eigen::Success;
  }

  struct Inversion {
    Vector v;
    int iterations = 0;
  };

  // Solves lambda(x, v) = p by damped Newton: v <- v + (2 mu)^{-1} (p - lambda).
  Inversion velocity(const Vector& x, const Vector& p, const Vector& seed,
                     const NewtonConfig& cfg = {}) const {
    if (cfg.check_positive && !positive_definite(x, seed)) {
      throw NotPositiveError("fiber Hessian not positive definite at the Newton seed");
    }
    Vector v = seed;
    Vector lam = momentum(x, v);
    double res = (lam - p).cwiseAbs().maxCoeff();
    for (int it = 0; it < cfg.max_iter; ++it) {
      if (res <= cfg.tol) {
        if (cfg.check_positive && !positive_definite(x, v)) {
          throw NotPositiveError("fiber Hessian not positive definite at the solution");
        }
        return {v, it};
      }
      Matrix jac = 2.0 * mu(x, v);
      Eigen::FullPivLU<Matrix> lu(jac);
      if (!lu.isInvertible()) {
        if (!positive_definite(x, v)) {
          throw NotPositiveError("fiber Hessian not positive definite along Newton path");
        }
        throw SingularHessianError("singular fiber Hessian in Legendre inversion");
      }
      Vector step = lu.solve(p - lam);
      double scale = 1.0;
      bool accepted = false;
      for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
        Vector v_try = v + scale * step;
        Vector lam_try = momentum(x, v_try);
        double res_try = (lam_try - p).cwiseAbs().maxCoeff();
        if (std::isfinite(res_try) && res_try < res) {
          v = v_try;
          lam = lam_try;
          res = res_try;
          accepted = true;
          break;
        }
        scale *= cfg.backtrack_factor;
      }
      if (!accepted) {
        if (!positive_definite(x, v)) {
          throw NotPositiveError("fiber Hessian not positive definite along Newton path");
        }
        throw NoConvergenceError("Legendre inversion stalled, residual = " +
                                 detail::format_double(res));
      }
    }
    if (res <= cfg.tol) return {v, cfg.max_iter};
    if (!positive_definite(x, v)) {
      throw NotPositiveError("fiber Hessian not positive definite along Newton path");
    }
    throw NoConvergenceError("Legendre inversion exceeded max iterations, residual = " +
                             detail::format_double(res));
  }

  // H(x, p) = sum_i p_i v*_i - L(x, v*) with v* = lambda^{-1}(x, p).
  double hamiltonian(const Vector& x, const Vector& p, const Vector& seed,
                     const NewtonConfig& cfg = {}) const {
    Inversion inv = velocity(x, p, seed, cfg);
    return p.dot(inv.v) - L_.value(x, inv.v);
  }

 private:
  ExtendedScalarField L_;
};

// A Hamiltonian backed either by a momentum-representation expression or by a
// LagrangianModel through the inverse Legendre map.
class HamiltonianModel {
 public:
  struct Eval {
    double value = 0.0;
    Vector dH_dp;
    Vector dH_dx;
    Vector velocity;  // lambda^{-1}(x,p); equals dH_dp
    double omega = 0.0;
  };

  static HamiltonianModel from_field(ExtendedScalarField H) {
    if (H.representation() != Representation::momentum) {
      throw InputError("HamiltonianModel requires a momentum-representation field");
    }
    HamiltonianModel m;
    m.H_ = std::move(H);
    return m;
  }

  static HamiltonianModel parse(std::string_view source, int n, DiffConfig diff = {}) {
    return from_field(ExtendedScalarField::parse(source, n, Representation::momentum, diff));
  }

  static HamiltonianModel from_lagrangian(LagrangianModel m) {
    HamiltonianModel h;
    h.L_ = std::move(m);
    return h;
  }

  int dimension() const { return H_ ? H_->dimension() : L_->dimension(); }
  bool lagrangian_backed() const { return L_.has_value(); }
  const LagrangianModel* lagrangian_model() const { return L_ ? &*L_ : nullptr; }
  const ExtendedScalarField* field() const { return H_ ? &*H_ : nullptr; }

  // One-stop evaluation used by the flows: value, both gradient blocks, the
  // velocity, and Omega = sum p_i dH/dp_i, all from a single Legendre
  // inversion when Lagrangian-backed.
  Eval eval(const Vector& x, const Vector& p, const Vector* velocity_seed = nullptr,
            const NewtonConfig& cfg = {}) const {
    Eval out;
    if (H_) {
      out.value = H_->value(x, p);
      out.dH_dp = H_->fiber_gradient(x, p);
      out.dH_dx = H_->base_partials(x, p);
      out.velocity = out.dH_dp;
    } else {
      Vector seed = velocity_seed ? *velocity_seed : p;
      LagrangianModel::Inversion inv = L_->velocity(x, p, seed, cfg);
      out.velocity = inv.v;
      out.dH_dp = inv.v;
      out.value = p.dot(inv.v) - L_->value(x, inv.v);
      out.dH_dx = -L_->lagrangian().base_partials(x, inv.v);
    }
    out.omega = p.dot(out.dH_dp);
    return out;
  }

  double value(const Vector& x, const Vector& p, const Vector* velocity_seed = nullptr,
               const NewtonConfig& cfg = {}) const {
    if (H_) return H_->value(x, p);
    return eval(x, p, velocity_seed, cfg).value;
  }

  // Omega = sum_i p_i dH/dp_i (Legendre dual of sum v^i dL/dv^i).
  double omega(const Vector& x, const Vector& p, const Vector* velocity_seed = nullptr,
               const NewtonConfig& cfg = {}) const {
    if (H_) return p.dot(H_->fiber_gradient(x, p));
    return eval(x, p, velocity_seed, cfg).omega;
  }

  // L(x, v) = sum_i p*_i v^i - H(x, p*) where dH/dp(x, p*) = v.
  double lagrangian_value(const Vector& x, const Vector& v,
                          const NewtonConfig& cfg = {}) const {
    if (L_) {
      // dH/dp = lambda^{-1}, so p* = lambda(x, v) solves the stationarity
      // condition directly; H at p* still goes through the inversion path.
      Vector pstar = L_->momentum(x, v);
      return pstar.dot(v) - L_->hamiltonian(x, pstar, v, cfg);
    }
    Vector p = v;  // correct seed for quadratic H
    Vector grad = H_->fiber_gradient(x, p);
    double res = (grad - v).cwiseAbs().maxCoeff();
    for (int it = 0; it < cfg.max_iter; ++it) {
      if (res <= cfg.tol) break;
      Matrix jac = 2.0 * H_->fiber_hessian(x, p);
      Eigen::FullPivLU<Matrix> lu(jac);
      if (!lu.isInvertible()) {
        throw SingularHessianError("singular fiber Hessian of H in Legendre inversion");
      }
      Vector step = lu.solve(v - grad);
      double scale = 1.0;
      bool accepted = false;
      for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
        Vector p_try = p + scale * step;
        Vector grad_try = H_->fiber_gradient(x, p_try);
        double res_try = (grad_try - v).cwiseAbs().maxCoeff();
        if (std::isfinite(res_try) && res_try < res) {
          p = p_try;
          grad = grad_try;
          res = res_try;
          accepted = true;
          break;
        }
        scale *= cfg.backtrack_factor;
      }
      if (!accepted) {
        throw NoConvergenceError("momentum inversion stalled, residual = " +
                                 detail::format_double(res));
      }
    }
    if (res > cfg.tol) {
      throw NoConvergenceError("momentum inversion exceeded max iterations, residual = " +
                               detail::format_double(res));
    }
    return p.dot(v) - H_->value(x, p);
  }

 private:
  HamiltonianModel() = default;
  std::optional<ExtendedScalarField> H_;
  std::optional<LagrangianModel> L_;
};

}  // namespace wavefront
