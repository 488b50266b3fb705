#pragma once

#include <cmath>
#include <utility>

namespace wavefront {

// Forward-mode dual number. Nest as Dual<Dual<double>> to obtain second
// derivatives (truncated second-order polynomial arithmetic).
template <class T>
struct Dual {
  T v{};  // value part
  T d{};  // derivative part

  Dual() = default;
  Dual(double x) : v(x), d() {}
  Dual(T value, T deriv) : v(std::move(value)), d(std::move(deriv)) {}
};

using Dual1 = Dual<double>;
using Dual2 = Dual<Dual<double>>;

inline double value_of(double x) { return x; }
template <class T>
double value_of(const Dual<T>& x) {
  return value_of(x.v);
}

inline bool is_identically_zero(double x) { return x == 0.0; }
template <class T>
bool is_identically_zero(const Dual<T>& x) {
  return is_identically_zero(x.v) && is_identically_zero(x.d);
}

template <class T>
Dual<T> operator-(const Dual<T>& a) {
  return {-a.v, -a.d};
}

template <class T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) {
  return {a.v + b.v, a.d + b.d};
}
template <class T>
Dual<T> operator+(const Dual<T>& a, double b) {
  return {a.v + b, a.d};
}
template <class T>
Dual<T> operator+(double a, const Dual<T>& b) {
  return {a + b.v, b.d};
}

template <class T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) {
  return {a.v - b.v, a.d - b.d};
}
template <class T>
Dual<T> operator-(const Dual<T>& a, double b) {
  return {a.v - b, a.d};
}
template <class T>
Dual<T> operator-(double a, const Dual<T>& b) {
  return {a - b.v, -b.d};
}

template <class T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
template <class T>
Dual<T> operator*(const Dual<T>& a, double b) {
  return {a.v * b, a.d * b};
}
template <class T>
Dual<T> operator*(double a, const Dual<T>& b) {
  return {a * b.v, a * b.d};
}

template <class T>
Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
}
template <class T>
Dual<T> operator/(const Dual<T>& a, double b) {
  return {a.v / b, a.d / b};
}
template <class T>
Dual<T> operator/(double a, const Dual<T>& b) {
  return {a / b.v, (-a) * b.d / (b.v * b.v)};
}

template <class T>
Dual<T> sin(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {sin(x.v), cos(x.v) * x.d};
}

template <class T>
Dual<T> cos(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {cos(x.v), -(sin(x.v) * x.d)};
}

template <class T>
Dual<T> tan(const Dual<T>& x) {
  using std::tan;
  T t = tan(x.v);
  return {t, (1.0 + t * t) * x.d};
}

template <class T>
Dual<T> exp(const Dual<T>& x) {
  using std::exp;
  T e = exp(x.v);
  return {e, e * x.d};
}

template <class T>
Dual<T> log(const Dual<T>& x) {
  using std::log;
  return {log(x.v), x.d / x.v};
}

template <class T>
Dual<T> sqrt(const Dual<T>& x) {
  using std::sqrt;
  T s = sqrt(x.v);
  return {s, x.d / (2.0 * s)};
}

template <class T>
Dual<T> abs(const Dual<T>& x) {
  return value_of(x.v) < 0.0 ? -x : x;
}

template <class T>
Dual<T> sinh(const Dual<T>& x) {
  using std::cosh;
  using std::sinh;
  return {sinh(x.v), cosh(x.v) * x.d};
}

template <class T>
Dual<T> cosh(const Dual<T>& x) {
  using std::cosh;
  using std::sinh;
  return {cosh(x.v), sinh(x.v) * x.d};
}

template <class T>
Dual<T> tanh(const Dual<T>& x) {
  using std::tanh;
  T t = tanh(x.v);
  return {t, (1.0 - t * t) * x.d};
}

template <class T>
Dual<T> atan(const Dual<T>& x) {
  using std::atan;
  return {atan(x.v), x.d / (1.0 + x.v * x.v)};
}

// a^b. When the exponent carries no derivative the power rule applies, which
// keeps integral exponents of negative bases valid; the log(a) term is only
// introduced when the exponent itself varies.
template <class T>
Dual<T> pow(const Dual<T>& a, const Dual<T>& b) {
  using std::log;
  using std::pow;
  T p = pow(a.v, b.v);
  if (is_identically_zero(a.d) && is_identically_zero(b.d)) {
    return {p, T(0.0)};
  }
  if (is_identically_zero(b.d)) {
    return {p, b.v * pow(a.v, b.v - 1.0) * a.d};
  }
  return {p, p * (b.d * log(a.v) + b.v * a.d / a.v)};
}

}  // namespace wavefront
