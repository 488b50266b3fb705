#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "wavefront/errors.hpp"
#include "wavefront/expr.hpp"
#include "wavefront/field.hpp"

namespace wavefront {

// x-dependent Riemannian metric with pointwise inverse and Christoffel
// symbols of the Levi-Civita connection.
class MetricField {
 public:
  static MetricField parse(const std::vector<std::vector<std::string>>& entries) {
    int n = static_cast<int>(entries.size());
    if (n < 1) throw InputError("metric needs dimension >= 1");
    MetricField m;
    m.n_ = n;
    Alphabet a;
    a.families = {{"x", n, 0}};
    a.slot_count = n;
    for (const auto& row : entries) {
      if (static_cast<int>(row.size()) != n) {
        throw InputError("metric must be a square matrix of expressions");
      }
      for (const std::string& src : row) {
        m.g_.push_back(Expression::parse(src, a));
      }
    }
    return m;
  }

  static MetricField euclidean(int n) {
    std::vector<std::vector<std::string>> entries(
        static_cast<std::size_t>(n), std::vector<std::string>(static_cast<std::size_t>(n), "0"));
    for (int i = 0; i < n; ++i) entries[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = "1";
    return parse(entries);
  }

  int dimension() const { return n_; }

  template <class T>
  void value_generic(std::span<const T> x, std::vector<T>& out) const {
    out.resize(static_cast<std::size_t>(n_ * n_));
    for (int i = 0; i < n_ * n_; ++i) {
      out[static_cast<std::size_t>(i)] = g_[static_cast<std::size_t>(i)].eval(x);
    }
  }

  Matrix value(const Vector& x) const {
    std::vector<double> buf;
    value_generic(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), buf);
    Matrix g(n_, n_);
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < n_; ++j) g(i, j) = buf[static_cast<std::size_t>(i * n_ + j)];
    }
    double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
    if ((g - g.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw InputError("metric is not symmetric at the evaluation point");
    }
    return g;
  }

  Matrix inverse(const Vector& x) const {
    Matrix g = value(x);
    Eigen::LLT<Matrix> llt(g);
    if (llt.info() != Eigen::Success) {
      throw NotPositiveError("metric is not positive definite (Cholesky failed)");
    }
    Matrix inv = llt.solve(Matrix::Identity(n_, n_));
    if (((g * inv) - Matrix::Identity(n_, n_)).cwiseAbs().maxCoeff() > 1e-12) {
      throw NotPositiveError("metric inverse failed the identity check");
    }
    return inv;
  }

  // d g_ij / d x^q by forward AD on the entry expressions.
  Matrix partial(const Vector& x, int q) const {
    std::vector<Dual1> slots(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) slots[static_cast<std::size_t>(i)] = Dual1(x(i), 0.0);
    slots[static_cast<std::size_t>(q)].d = 1.0;
    Matrix d(n_, n_);
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < n_; ++j) {
        d(i, j) = g_[static_cast<std::size_t>(i * n_ + j)]
                      .eval(std::span<const Dual1>(slots))
                      .d;
      }
    }
    return d;
  }

  // Gamma^k_ij = (1/2) g^{km} (d_i g_mj + d_j g_mi - d_m g_ij).
  std::vector<Matrix> christoffel(const Vector& x) const {
    Matrix ginv = inverse(x);
    std::vector<Matrix> dg(static_cast<std::size_t>(n_));
    for (int q = 0; q < n_; ++q) dg[static_cast<std::size_t>(q)] = partial(x, q);
    std::vector<Matrix> gamma(static_cast<std::size_t>(n_), Matrix::Zero(n_, n_));
    for (int k = 0; k < n_; ++k) {
      for (int i = 0; i < n_; ++i) {
        for (int j = 0; j < n_; ++j) {
          double sum = 0.0;
          for (int m = 0; m < n_; ++m) {
            sum += ginv(k, m) * (dg[static_cast<std::size_t>(i)](m, j) +
                                 dg[static_cast<std::size_t>(j)](m, i) -
                                 dg[static_cast<std::size_t>(m)](i, j));
          }
          gamma[static_cast<std::size_t>(k)](i, j) = 0.5 * sum;
        }
      }
    }
    return gamma;
  }

  Vector lower(const Vector& x, const Vector& v) const { return value(x) * v; }
  Vector raise(const Vector& x, const Vector& cov) const { return inverse(x) * cov; }

  double norm(const Vector& x, const Vector& v) const {
    return std::sqrt(v.dot(value(x) * v));
  }

 private:
  std::vector<Expression> g_;  // row-major n*n
  int n_ = 0;
};

}  // namespace wavefront
