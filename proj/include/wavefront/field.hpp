#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "wavefront/dual.hpp"
#include "wavefront/errors.hpp"
#include "wavefront/expr.hpp"

namespace wavefront {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Which fiber alphabet the expression is written in.
enum class Representation {
  velocity,      // x1..xn, v1..vn
  momentum,      // x1..xn, p1..pn
  newtonian,     // x1..xn, u1..un (actual-velocity extended fields)
  speed_scalar,  // x1..xn, u = |u|
  scalar_arg     // single variable w (plain scalar function)
};

struct DiffConfig {
  enum class Mode { dual, finite_difference };
  Mode mode = Mode::dual;
  double fd_step = 1e-6;  // relative step, scaled by 1 + |coordinate|
  bool cross_check = false;
  double cross_tol_grad = 1e-6;
  double cross_tol_hess = 1e-4;
};

// A scalar function of (x, w) evaluated on the extended bundle: its value is a
// number attached to the base point. Houses L, H, h, W, b_k, c.
class ExtendedScalarField {
 public:
  ExtendedScalarField() = default;

  static ExtendedScalarField parse(std::string_view source, int n, Representation rep,
                                   DiffConfig diff = {}) {
    if (n < 1) throw InputError("field dimension must be >= 1");
    ExtendedScalarField f;
    f.n_ = n;
    f.rep_ = rep;
    f.diff_ = diff;
    f.expr_ = Expression::parse(source, make_alphabet(n, rep));
    return f;
  }

  static Alphabet make_alphabet(int n, Representation rep) {
    Alphabet a;
    switch (rep) {
      case Representation::velocity:
        a.families = {{"x", n, 0}, {"v", n, n}};
        a.slot_count = 2 * n;
        break;
      case Representation::momentum:
        a.families = {{"x", n, 0}, {"p", n, n}};
        a.slot_count = 2 * n;
        break;
      case Representation::newtonian:
        a.families = {{"x", n, 0}, {"u", n, n}};
        a.slot_count = 2 * n;
        break;
      case Representation::speed_scalar:
        a.families = {{"x", n, 0}};
        a.names = {{"u", n}};
        a.slot_count = n + 1;
        break;
      case Representation::scalar_arg:
        a.names = {{"w", 0}};
        a.slot_count = 1;
        break;
    }
    return a;
  }

  int dimension() const { return n_; }
  Representation representation() const { return rep_; }
  const Expression& expression() const { return expr_; }
  const DiffConfig& diff_config() const { return diff_; }
  DiffConfig& diff_config() { return diff_; }

  int base_slots() const { return rep_ == Representation::scalar_arg ? 0 : n_; }
  int fiber_slots() const {
    switch (rep_) {
      case Representation::speed_scalar:
      case Representation::scalar_arg:
        return 1;
      default:
        return n_;
    }
  }
  int slot_count() const { return base_slots() + fiber_slots(); }

  template <class T>
  T eval_slots(std::span<const T> slots) const {
    return expr_.eval(slots);
  }

  double value(std::span<const double> x, std::span<const double> w) const {
    std::vector<double> slots = pack_(x, w);
    return expr_.eval(std::span<const double>(slots));
  }

  double value(const Vector& x, const Vector& w) const {
    return value(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                 std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
  }

  // d f / d w^i as a covector of length fiber_slots().
  Vector fiber_gradient(const Vector& x, const Vector& w) const {
    return gradient_(x, w, base_slots(), fiber_slots(), "fiber gradient");
  }

  // d f / d x^i at fixed fiber coordinates.
  Vector base_partials(const Vector& x, const Vector& w) const {
    return gradient_(x, w, 0, base_slots(), "base partials");
  }

  // mu_ij = (1/2) d^2 f / dw^i dw^j, symmetrized. The factor 1/2 follows the
  // half-Hessian convention used throughout; consumers needing the raw second
  // derivative multiply by 2.
  Matrix fiber_hessian(const Vector& x, const Vector& w) const {
    int off = base_slots();
    int m = fiber_slots();
    Matrix ad_h, fd_h;
    bool want_ad = diff_.mode == DiffConfig::Mode::dual || diff_.cross_check;
    bool want_fd = diff_.mode == DiffConfig::Mode::finite_difference || diff_.cross_check;
    if (want_ad) ad_h = hessian_ad_(x, w, off, m);
    if (want_fd) fd_h = hessian_fd_(x, w, off, m);
    if (diff_.cross_check) {
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
          double a = ad_h(i, j), b = fd_h(i, j);
          double scale = std::max({1.0, std::abs(a), std::abs(b)});
          if (std::abs(a - b) > diff_.cross_tol_hess * scale) {
            throw BackendMismatchError("fiber hessian backend mismatch: dual=" +
                                       detail::format_double(a) +
                                       " fd=" + detail::format_double(b));
          }
        }
      }
    }
    Matrix h = diff_.mode == DiffConfig::Mode::finite_difference ? fd_h : ad_h;
    Matrix sym = 0.25 * (h + h.transpose());  // (1/2) * symmetrized second derivative
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        if (!std::isfinite(sym(i, j))) {
          throw NonFiniteError("non-finite second derivative in fiber hessian");
        }
      }
    }
    return sym;
  }

 private:
  Expression expr_;
  int n_ = 0;
  Representation rep_ = Representation::velocity;
  DiffConfig diff_;

  std::vector<double> pack_(std::span<const double> x, std::span<const double> w) const {
    if (static_cast<int>(x.size()) != base_slots() ||
        static_cast<int>(w.size()) != fiber_slots()) {
      throw InputError("field argument dimension mismatch");
    }
    std::vector<double> slots(static_cast<std::size_t>(slot_count()));
    for (int i = 0; i < base_slots(); ++i) slots[static_cast<std::size_t>(i)] = x[i];
    for (int i = 0; i < fiber_slots(); ++i) {
      slots[static_cast<std::size_t>(base_slots() + i)] = w[i];
    }
    return slots;
  }

  Vector gradient_(const Vector& x, const Vector& w, int offset, int count,
                   const char* what) const {
    Vector ad_g, fd_g;
    bool want_ad = diff_.mode == DiffConfig::Mode::dual || diff_.cross_check;
    bool want_fd = diff_.mode == DiffConfig::Mode::finite_difference || diff_.cross_check;
    if (want_ad) ad_g = gradient_ad_(x, w, offset, count);
    if (want_fd) fd_g = gradient_fd_(x, w, offset, count);
    if (diff_.cross_check) {
      for (int i = 0; i < count; ++i) {
        double a = ad_g(i), b = fd_g(i);
        double scale = std::max({1.0, std::abs(a), std::abs(b)});
        if (std::abs(a - b) > diff_.cross_tol_grad * scale) {
          throw BackendMismatchError(std::string(what) + " backend mismatch: dual=" +
                                     detail::format_double(a) +
                                     " fd=" + detail::format_double(b));
        }
      }
    }
    const Vector& g = diff_.mode == DiffConfig::Mode::finite_difference ? fd_g : ad_g;
    for (int i = 0; i < count; ++i) {
      if (!std::isfinite(g(i))) {
        throw NonFiniteError(std::string("non-finite derivative in ") + what);
      }
    }
    return g;
  }

  Vector gradient_ad_(const Vector& x, const Vector& w, int offset, int count) const {
    std::vector<double> base = pack_(
        std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
        std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
    std::vector<Dual1> slots(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) slots[i] = Dual1(base[i], 0.0);
    Vector g(count);
    for (int k = 0; k < count; ++k) {
      slots[static_cast<std::size_t>(offset + k)].d = 1.0;
      g(k) = expr_.eval(std::span<const Dual1>(slots)).d;
      slots[static_cast<std::size_t>(offset + k)].d = 0.0;
    }
    return g;
  }

  Vector gradient_fd_(const Vector& x, const Vector& w, int offset, int count) const {
    std::vector<double> slots = pack_(
        std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
        std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
    Vector g(count);
    for (int k = 0; k < count; ++k) {
      std::size_t s = static_cast<std::size_t>(offset + k);
      double c = slots[s];
      double h = diff_.fd_step * (1.0 + std::abs(c));
      slots[s] = c + h;
      double fp = expr_.eval(std::span<const double>(slots));
      slots[s] = c - h;
      double fm = expr_.eval(std::span<const double>(slots));
      slots[s] = c;
      g(k) = (fp - fm) / (2.0 * h);
    }
    return g;
  }

  Matrix hessian_ad_(const Vector& x, const Vector& w, int offset, int count) const {
    std::vector<double> base = pack_(
        std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
        std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
    Matrix h(count, count);
    std::vector<Dual2> slots(base.size());
    for (int i = 0; i < count; ++i) {
      for (int j = i; j < count; ++j) {
        for (std::size_t s = 0; s < base.size(); ++s) {
          slots[s] = Dual2(Dual1(base[s], 0.0), Dual1(0.0, 0.0));
        }
        slots[static_cast<std::size_t>(offset + i)].d.v = 1.0;  // outer direction
        slots[static_cast<std::size_t>(offset + j)].v.d = 1.0;  // inner direction
        Dual2 r = expr_.eval(std::span<const Dual2>(slots));
        h(i, j) = r.d.d;
        h(j, i) = r.d.d;
      }
    }
    return h;
  }

  Matrix hessian_fd_(const Vector& x, const Vector& w, int offset, int count) const {
    std::vector<double> slots = pack_(
        std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
        std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
    // Second differences need a larger step than first ones; fd_step^(2/3)
    // balances truncation against the eps/h^2 rounding floor.
    double step2 = std::pow(diff_.fd_step, 2.0 / 3.0);
    auto at = [&](int k) -> double& { return slots[static_cast<std::size_t>(offset + k)]; };
    auto eval = [&]() { return expr_.eval(std::span<const double>(slots)); };
    double f0 = eval();
    Matrix h(count, count);
    for (int i = 0; i < count; ++i) {
      double ci = at(i);
      double hi = step2 * (1.0 + std::abs(ci));
      at(i) = ci + hi;
      double fp = eval();
      at(i) = ci - hi;
      double fm = eval();
      at(i) = ci;
      h(i, i) = (fp - 2.0 * f0 + fm) / (hi * hi);
      for (int j = i + 1; j < count; ++j) {
        double cj = at(j);
        double hj = step2 * (1.0 + std::abs(cj));
        at(i) = ci + hi;
        at(j) = cj + hj;
        double fpp = eval();
        at(j) = cj - hj;
        double fpm = eval();
        at(i) = ci - hi;
        at(j) = cj + hj;
        double fmp = eval();
        at(j) = cj - hj;
        double fmm = eval();
        at(i) = ci;
        at(j) = cj;
        double mixed = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
        h(i, j) = mixed;
        h(j, i) = mixed;
      }
    }
    return h;
  }
};

}  // namespace wavefront
