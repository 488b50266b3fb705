#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wavefront/errors.hpp"
#include "wavefront/field.hpp"
#include "wavefront/legendre.hpp"
#include "wavefront/metric.hpp"

namespace wavefront {

// Fiberwise spherically symmetric Hamiltonian data: W(x, u) with u = |u| in
// the metric, plus an optional scalar profile h(w) for the general force law.
class SphericalHamiltonian {
 public:
  static SphericalHamiltonian parse(std::string_view w_source, int n,
                                    std::optional<std::string> h_source = {}) {
    SphericalHamiltonian s;
    s.W_ = ExtendedScalarField::parse(w_source, n, Representation::speed_scalar);
    if (h_source) {
      Alphabet a;
      a.names = {{"w", 0}};
      a.slot_count = 1;
      s.h_ = Expression::parse(*h_source, a);
    }
    return s;
  }

  int dimension() const { return W_.dimension(); }
  bool has_profile() const { return h_.has_value(); }

  template <class T>
  T W_value(std::span<const T> x, const T& speed) const {
    std::vector<T> slots(x.begin(), x.end());
    slots.push_back(speed);
    return W_.eval_slots(std::span<const T>(slots));
  }

  // dW/du at fixed x, evaluated through one extra dual level so the result
  // still carries the caller's derivative information.
  template <class T>
  T W_speed_derivative(std::span<const T> x, const T& speed) const {
    std::vector<Dual<T>> slots;
    slots.reserve(x.size() + 1);
    for (const T& xi : x) slots.emplace_back(xi, T(0.0));
    slots.emplace_back(speed, T(1.0));
    return W_.eval_slots(std::span<const Dual<T>>(slots)).d;
  }

  // dW/dx^i at fixed speed argument.
  template <class T>
  T W_base_partial(std::span<const T> x, const T& speed, int i) const {
    std::vector<Dual<T>> slots;
    slots.reserve(x.size() + 1);
    for (std::size_t k = 0; k < x.size(); ++k) {
      slots.emplace_back(x[k], T(static_cast<int>(k) == i ? 1.0 : 0.0));
    }
    slots.emplace_back(speed, T(0.0));
    return W_.eval_slots(std::span<const Dual<T>>(slots)).d;
  }

  template <class T>
  T profile(const T& w) const {
    if (!h_) return T(0.0);
    std::vector<T> slots{w};
    return h_->eval(std::span<const T>(slots));
  }

 private:
  ExtendedScalarField W_;
  std::optional<Expression> h_;
};

// Extended force field F(x, u) in covariant components. Either n expressions
// or the closed form generated from (W, h, g); the generated form evaluates on
// dual scalars so the normality residuals can differentiate through it.
class ForceField {
 public:
  static ForceField from_expressions(const std::vector<std::string>& components, int n) {
    if (static_cast<int>(components.size()) != n) {
      throw InputError("force field needs n component expressions");
    }
    ForceField f;
    f.n_ = n;
    for (const std::string& src : components) {
      f.components_.push_back(
          ExtendedScalarField::parse(src, n, Representation::newtonian));
    }
    return f;
  }

  // F_k = h(W) N_k / W' - |u| sum_i (grad_i W / W') (2 N^i N_k - delta^i_k).
  // With include_profile = false this is the spherically symmetric special
  // case (the h term dropped); both share this code path.
  static ForceField generated(SphericalHamiltonian W, MetricField g,
                              bool include_profile) {
    if (W.dimension() != g.dimension()) {
      throw InputError("force generator: W and g dimensions differ");
    }
    ForceField f;
    f.n_ = g.dimension();
    f.spherical_ = std::move(W);
    f.metric_ = std::move(g);
    f.include_profile_ = include_profile;
    return f;
  }

  int dimension() const { return n_; }
  bool generated_form() const { return spherical_.has_value(); }

  template <class T>
  std::vector<T> covariant(std::span<const T> x, std::span<const T> u) const {
    if (!spherical_) {
      std::vector<T> slots(x.begin(), x.end());
      slots.insert(slots.end(), u.begin(), u.end());
      std::vector<T> F;
      F.reserve(components_.size());
      for (const ExtendedScalarField& c : components_) {
        F.push_back(c.eval_slots(std::span<const T>(slots)));
      }
      return F;
    }

    const int n = n_;
    std::vector<T> g;
    metric_->value_generic(x, g);
    auto gij = [&](int i, int j) -> const T& {
      return g[static_cast<std::size_t>(i * n + j)];
    };

    T s2 = T(0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) s2 = s2 + gij(i, j) * u[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(j)];
    }
    if (value_of(s2) <= 0.0) throw ModelError("force field evaluated at zero velocity");
    using std::sqrt;
    T s = sqrt(s2);

    std::vector<T> n_low(static_cast<std::size_t>(n), T(0.0));
    std::vector<T> n_up(static_cast<std::size_t>(n), T(0.0));
    for (int k = 0; k < n; ++k) {
      T acc = T(0.0);
      for (int j = 0; j < n; ++j) acc = acc + gij(k, j) * u[static_cast<std::size_t>(j)];
      n_low[static_cast<std::size_t>(k)] = acc / s;
      n_up[static_cast<std::size_t>(k)] = u[static_cast<std::size_t>(k)] / s;
    }

    T wp = spherical_->W_speed_derivative(x, s);
    if (std::abs(value_of(wp)) < 1e-14) {
      throw WPrimeZeroError("dW/du vanished at speed " +
                            detail::format_double(value_of(s)));
    }

    std::vector<T> F(static_cast<std::size_t>(n), T(0.0));
    for (int k = 0; k < n; ++k) {
      T acc = T(0.0);
      for (int i = 0; i < n; ++i) {
        T grad_i = spherical_->W_base_partial(x, s, i);
        T proj = 2.0 * n_up[static_cast<std::size_t>(i)] * n_low[static_cast<std::size_t>(k)];
        if (i == k) proj = proj - 1.0;
        acc = acc + (grad_i / wp) * proj;
      }
      F[static_cast<std::size_t>(k)] = T(0.0) - s * acc;
      if (include_profile_) {
        T w = spherical_->W_value(x, s);
        F[static_cast<std::size_t>(k)] =
            F[static_cast<std::size_t>(k)] +
            spherical_->profile(w) * n_low[static_cast<std::size_t>(k)] / wp;
      }
    }
    return F;
  }

  Vector covariant_at(const Vector& x, const Vector& u) const {
    std::vector<double> xv(x.data(), x.data() + x.size());
    std::vector<double> uv(u.data(), u.data() + u.size());
    std::vector<double> F = covariant(std::span<const double>(xv), std::span<const double>(uv));
    Vector out(n_);
    for (int i = 0; i < n_; ++i) out(i) = F[static_cast<std::size_t>(i)];
    return out;
  }

 private:
  int n_ = 0;
  std::vector<ExtendedScalarField> components_;
  std::optional<SphericalHamiltonian> spherical_;
  std::optional<MetricField> metric_;
  bool include_profile_ = false;
};

namespace detail {

struct ForceDerivatives {
  Vector F;      // covariant components
  Matrix dF_du;  // (component i, direction j) = dF_i / du^j
  Matrix dF_dx;  // (component i, direction q) = dF_i / dx^q
};

inline ForceDerivatives force_derivatives(const ForceField& F, const Vector& x,
                                          const Vector& u) {
  int n = F.dimension();
  ForceDerivatives out;
  out.F = F.covariant_at(x, u);
  out.dF_du.resize(n, n);
  out.dF_dx.resize(n, n);
  std::vector<Dual1> xs(static_cast<std::size_t>(n)), us(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    xs[static_cast<std::size_t>(k)] = Dual1(x(k), 0.0);
    us[static_cast<std::size_t>(k)] = Dual1(u(k), 0.0);
  }
  for (int j = 0; j < n; ++j) {
    us[static_cast<std::size_t>(j)].d = 1.0;
    std::vector<Dual1> Fd =
        F.covariant(std::span<const Dual1>(xs), std::span<const Dual1>(us));
    for (int i = 0; i < n; ++i) out.dF_du(i, j) = Fd[static_cast<std::size_t>(i)].d;
    us[static_cast<std::size_t>(j)].d = 0.0;
  }
  for (int q = 0; q < n; ++q) {
    xs[static_cast<std::size_t>(q)].d = 1.0;
    std::vector<Dual1> Fd =
        F.covariant(std::span<const Dual1>(xs), std::span<const Dual1>(us));
    for (int i = 0; i < n; ++i) out.dF_dx(i, q) = Fd[static_cast<std::size_t>(i)].d;
    xs[static_cast<std::size_t>(q)].d = 0.0;
  }
  return out;
}

}  // namespace detail

// P^i_k = delta^i_k - N^i N_k: the g-orthogonal projector onto the tangent
// hyperplane of the fronts through u.
inline Matrix tangent_projector(const MetricField& g, const Vector& x, const Vector& u) {
  int n = g.dimension();
  Matrix gm = g.value(x);
  double v = std::sqrt(u.dot(gm * u));
  if (!(v > 0.0)) throw ModelError("tangent projector needs u != 0");
  Vector n_up = u / v;
  Vector n_low = gm * u / v;
  Matrix P(n, n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      P(i, k) = (i == k ? 1.0 : 0.0) - n_up(i) * n_low(k);
    }
  }
  return P;
}

// Horizontal covariant derivative of the covariant force components:
// nabla_i F_j = dF_j/dx^i - sum_ab u^a Gamma^b_ia dF_j/du^b - sum_b Gamma^b_ij F_b.
inline Matrix horizontal_force_gradient(const ForceField& F, const MetricField& g,
                                        const Vector& x, const Vector& u) {
  int n = F.dimension();
  detail::ForceDerivatives d = detail::force_derivatives(F, x, u);
  std::vector<Matrix> gamma = g.christoffel(x);
  Matrix grad(n, n);  // (i, j) = nabla_i F_j
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double val = d.dF_dx(j, i);
      for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
          val -= u(a) * gamma[static_cast<std::size_t>(b)](i, a) * d.dF_du(j, b);
        }
      }
      for (int b = 0; b < n; ++b) {
        val -= gamma[static_cast<std::size_t>(b)](i, j) * d.F(b);
      }
      grad(i, j) = val;
    }
  }
  return grad;
}

struct WeakNormalityResidual {
  Vector first;   // projected covector of the first equation
  Vector second;  // projected covector of the second equation
  double max_abs() const {
    return std::max(first.cwiseAbs().maxCoeff(), second.cwiseAbs().maxCoeff());
  }
};

// Evaluates both weak normality equations at (x, u); for a force field
// satisfying them the result vanishes identically.
inline WeakNormalityResidual weak_normality_residual(const ForceField& F,
                                                     const MetricField& g,
                                                     const Vector& x, const Vector& u) {
  int n = F.dimension();
  Matrix gm = g.value(x);
  Matrix ginv = g.inverse(x);
  double v = std::sqrt(u.dot(gm * u));
  if (!(v > 0.0)) throw ModelError("weak normality residual needs u != 0");
  Vector n_up = u / v;
  Matrix P = tangent_projector(g, x, u);

  detail::ForceDerivatives d = detail::force_derivatives(F, x, u);
  Vector F_up = ginv * d.F;

  // dS/du^i for S = sum_j N^j F_j, differentiated through the metric norm.
  Vector dS(n);
  {
    std::vector<Dual1> xs(static_cast<std::size_t>(n)), us(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
      xs[static_cast<std::size_t>(k)] = Dual1(x(k), 0.0);
      us[static_cast<std::size_t>(k)] = Dual1(u(k), 0.0);
    }
    std::vector<Dual1> gbuf;
    for (int i = 0; i < n; ++i) {
      us[static_cast<std::size_t>(i)].d = 1.0;
      g.value_generic(std::span<const Dual1>(xs), gbuf);
      Dual1 s2(0.0, 0.0);
      for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
          s2 = s2 + gbuf[static_cast<std::size_t>(a * n + b)] *
                        us[static_cast<std::size_t>(a)] * us[static_cast<std::size_t>(b)];
        }
      }
      Dual1 s = sqrt(s2);
      std::vector<Dual1> Fd =
          F.covariant(std::span<const Dual1>(xs), std::span<const Dual1>(us));
      Dual1 S(0.0, 0.0);
      for (int j = 0; j < n; ++j) {
        S = S + (us[static_cast<std::size_t>(j)] / s) * Fd[static_cast<std::size_t>(j)];
      }
      dS(i) = S.d;
      us[static_cast<std::size_t>(i)].d = 0.0;
    }
  }

  WeakNormalityResidual out;
  out.first.resize(n);
  for (int k = 0; k < n; ++k) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += (d.F(i) / v + dS(i)) * P(i, k);
    }
    out.first(k) = acc;
  }

  Matrix nabla = horizontal_force_gradient(F, g, x, u);
  out.second.resize(n);
  double nn_term = 0.0;  // sum_rj N^r N^j dF_r/du^j / v
  for (int r = 0; r < n; ++r) {
    for (int j = 0; j < n; ++j) {
      nn_term += n_up(r) * n_up(j) * d.dF_du(r, j) / v;
    }
  }
  for (int k = 0; k < n; ++k) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      double bracket = 0.0;
      for (int j = 0; j < n; ++j) {
        bracket += (nabla(i, j) + nabla(j, i) - 2.0 * d.F(i) * d.F(j) / (v * v)) * n_up(j);
      }
      double vert = 0.0;
      for (int j = 0; j < n; ++j) vert += F_up(j) * d.dF_du(i, j) / v;
      acc += (bracket + vert - nn_term * d.F(i)) * P(i, k);
    }
    out.second(k) = acc;
  }
  return out;
}

struct AdditionalNormalityResidual {
  Matrix antisymmetry;  // first equation: M - M^T
  Matrix trace_part;    // second equation: Q - tr(Q)/(n-1) P
  double max_abs() const {
    return std::max(antisymmetry.cwiseAbs().maxCoeff(), trace_part.cwiseAbs().maxCoeff());
  }
};

// Evaluates both additional normality equations; void in dimension two.
inline AdditionalNormalityResidual additional_normality_residual(const ForceField& F,
                                                                 const MetricField& g,
                                                                 const Vector& x,
                                                                 const Vector& u) {
  int n = F.dimension();
  if (n < 3) {
    throw DimensionTooSmallError(
        "additional normality equations are void for n < 3 (always fulfilled)");
  }
  Matrix gm = g.value(x);
  Matrix ginv = g.inverse(x);
  double v = std::sqrt(u.dot(gm * u));
  if (!(v > 0.0)) throw ModelError("additional normality residual needs u != 0");
  Vector n_up = u / v;
  Matrix P = tangent_projector(g, x, u);

  detail::ForceDerivatives d = detail::force_derivatives(F, x, u);
  Matrix nabla = horizontal_force_gradient(F, g, x, u);

  // D_N F_j = sum_m N^m dF_j/du^m
  Vector dn(n);
  for (int j = 0; j < n; ++j) {
    double acc = 0.0;
    for (int m = 0; m < n; ++m) acc += n_up(m) * d.dF_du(j, m);
    dn(j) = acc;
  }

  Matrix M(n, n);
  for (int e = 0; e < n; ++e) {
    for (int s = 0; s < n; ++s) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          acc += P(i, e) * P(j, s) * (d.F(i) * dn(j) / v - nabla(i, j));
        }
      }
      M(e, s) = acc;
    }
  }

  Matrix A = ginv * d.dF_du;  // A^i_j = dF^i/du^j (g is x-only)
  Matrix Q = P * A * P;

  AdditionalNormalityResidual out;
  out.antisymmetry = M - M.transpose();
  out.trace_part = Q - (Q.trace() / (n - 1)) * P;
  return out;
}

// u^i = v^i / Omega: the map from Lagrangian fiber velocity to the actual
// Newtonian velocity.
inline Vector newtonian_velocity(const LagrangianModel& m, const Vector& x,
                                 const Vector& v, double omega_floor = 1e-12) {
  double omega = m.omega(x, v);
  if (omega <= omega_floor) {
    throw OmegaNonpositiveError("Omega = " + detail::format_double(omega) +
                                " <= floor in newtonian_velocity");
  }
  return v / omega;
}

// Horizontal gradient of a scalar extended field (the covariant-derivative
// correction terms for one fiber index are in horizontal_force_gradient).
inline Vector horizontal_gradient_scalar(const ExtendedScalarField& f,
                                         const MetricField& g, const Vector& x,
                                         const Vector& w) {
  int n = f.dimension();
  std::vector<Matrix> gamma = g.christoffel(x);
  Vector out(n);
  switch (f.representation()) {
    case Representation::velocity:
    case Representation::newtonian: {
      Vector base = f.base_partials(x, w);
      Vector fiber = f.fiber_gradient(x, w);
      for (int q = 0; q < n; ++q) {
        double corr = 0.0;
        for (int a = 0; a < n; ++a) {
          for (int b = 0; b < n; ++b) {
            corr += w(a) * gamma[static_cast<std::size_t>(b)](q, a) * fiber(b);
          }
        }
        out(q) = base(q) - corr;
      }
      return out;
    }
    case Representation::momentum: {
      Vector base = f.base_partials(x, w);
      Vector fiber = f.fiber_gradient(x, w);
      for (int q = 0; q < n; ++q) {
        double corr = 0.0;
        for (int a = 0; a < n; ++a) {
          for (int b = 0; b < n; ++b) {
            corr += w(a) * gamma[static_cast<std::size_t>(a)](q, b) * fiber(b);
          }
        }
        out(q) = base(q) + corr;
      }
      return out;
    }
    case Representation::speed_scalar: {
      // W(x, |u|): chain rule through the speed argument. The metric
      // variation of |u| and the connection correction cancel for
      // Levi-Civita to machine precision; both terms are kept so the
      // cancellation is a checked property, not an assumption.
      Matrix gm = g.value(x);
      double s = std::sqrt(w.dot(gm * w));
      Vector w_low = gm * w;
      Vector speed(1);
      speed << s;
      Vector base_s = f.base_partials(x, speed);
      double wp = f.fiber_gradient(x, speed)(0);
      for (int q = 0; q < n; ++q) {
        double metric_var = 0.5 * w.dot(g.partial(x, q) * w) / s;
        double conn = 0.0;
        for (int a = 0; a < n; ++a) {
          for (int b = 0; b < n; ++b) {
            conn += w(a) * gamma[static_cast<std::size_t>(b)](q, a) * w_low(b) / s;
          }
        }
        out(q) = base_s(q) + wp * (metric_var - conn);
      }
      return out;
    }
    default:
      throw InputError("horizontal gradient: unsupported representation");
  }
}

// Vertical gradient with the index placement converted by the metric when
// requested (covariant <-> contravariant fiber index).
inline Vector vertical_gradient_ext(const ExtendedScalarField& f, const MetricField& g,
                                    const Vector& x, const Vector& w, bool raise_index) {
  Vector grad = f.fiber_gradient(x, w);
  if (!raise_index) return grad;
  return g.inverse(x) * grad;
}

// nabla_q g_ij for the Levi-Civita connection; identically zero, evaluated
// numerically as a health check of the Christoffel pipeline.
inline std::vector<Matrix> covariant_metric_derivative(const MetricField& g,
                                                       const Vector& x) {
  int n = g.dimension();
  std::vector<Matrix> gamma = g.christoffel(x);
  Matrix gm = g.value(x);
  std::vector<Matrix> out(static_cast<std::size_t>(n), Matrix::Zero(n, n));
  for (int q = 0; q < n; ++q) {
    Matrix dq = g.partial(x, q);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        double val = dq(i, j);
        for (int b = 0; b < n; ++b) {
          val -= gamma[static_cast<std::size_t>(b)](q, i) * gm(b, j);
          val -= gamma[static_cast<std::size_t>(b)](q, j) * gm(i, b);
        }
        out[static_cast<std::size_t>(q)](i, j) = val;
      }
    }
  }
  return out;
}

}  // namespace wavefront
