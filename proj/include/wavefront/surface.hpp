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

struct GridAxis {
  double min = 0.0;
  double max = 1.0;
  int count = 2;
  bool periodic = false;

  double spacing() const {
    return periodic ? (max - min) / count : (max - min) / (count - 1);
  }
  double node(int i) const { return min + spacing() * i; }
};

// Parametric embedding y in R^(n-1) -> x in R^n on a structured grid.
class Hypersurface {
 public:
  static Hypersurface parse(const std::vector<std::string>& maps,
                            std::vector<GridAxis> axes, int orientation) {
    int n = static_cast<int>(maps.size());
    if (n < 2) throw InputError("hypersurface needs dimension >= 2");
    if (static_cast<int>(axes.size()) != n - 1) {
      throw InputError("hypersurface needs n-1 grid axes");
    }
    if (orientation != 1 && orientation != -1) {
      throw InputError("orientation must be +1 or -1");
    }
    Hypersurface s;
    s.n_ = n;
    s.axes_ = std::move(axes);
    s.orientation_ = orientation;
    Alphabet a;
    a.families = {{"y", n - 1, 0}};
    a.slot_count = n - 1;
    s.maps_.reserve(maps.size());
    for (const std::string& m : maps) s.maps_.push_back(Expression::parse(m, a));
    for (const GridAxis& ax : s.axes_) {
      if (ax.count < 2) throw InputError("grid axis needs at least 2 nodes");
      if (!(ax.max > ax.min)) throw InputError("grid axis needs max > min");
    }
    return s;
  }

  int dimension() const { return n_; }
  int param_count() const { return n_ - 1; }
  int orientation() const { return orientation_; }
  const std::vector<GridAxis>& axes() const { return axes_; }

  int node_count() const {
    int c = 1;
    for (const GridAxis& ax : axes_) c *= ax.count;
    return c;
  }

  std::vector<int> unflatten(int flat) const {
    std::vector<int> idx(axes_.size());
    for (int d = static_cast<int>(axes_.size()) - 1; d >= 0; --d) {
      idx[d] = flat % axes_[d].count;
      flat /= axes_[d].count;
    }
    return idx;
  }

  int flatten(std::span<const int> idx) const {
    int flat = 0;
    for (std::size_t d = 0; d < axes_.size(); ++d) {
      flat = flat * axes_[d].count + idx[d];
    }
    return flat;
  }

  std::vector<double> node_params(std::span<const int> idx) const {
    std::vector<double> y(axes_.size());
    for (std::size_t d = 0; d < axes_.size(); ++d) y[d] = axes_[d].node(idx[d]);
    return y;
  }

  Vector point(std::span<const double> y) const {
    Vector x(n_);
    for (int i = 0; i < n_; ++i) {
      x(i) = maps_[i].eval(std::span<const double>(y));
    }
    return x;
  }

  // Columns are the coordinate tangents tau_j = dx/dy^j.
  Matrix tangent_frame(std::span<const double> y) const {
    int m = param_count();
    Matrix frame(n_, m);
    std::vector<Dual1> slots(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) slots[k] = Dual1(y[k], 0.0);
    for (int j = 0; j < m; ++j) {
      slots[static_cast<std::size_t>(j)].d = 1.0;
      for (int i = 0; i < n_; ++i) {
        Dual1 r = maps_[i].eval(std::span<const Dual1>(slots));
        frame(i, j) = r.d;
        if (!std::isfinite(r.d)) {
          throw NonFiniteError("non-finite tangent component on surface map");
        }
      }
      slots[static_cast<std::size_t>(j)].d = 0.0;
    }
    check_rank_(frame);
    return frame;
  }

  // Unit covector annihilating the frame. The raw null direction from the QR
  // factorization is oriented so that det([tau_1 .. tau_{n-1} n]) > 0, then
  // multiplied by the orientation flag; this is continuous across the grid,
  // which a per-component sign rule is not on closed surfaces.
  Vector normal_covector(std::span<const double> y) const {
    Matrix frame = tangent_frame(y);
    Eigen::HouseholderQR<Matrix> qr(frame);
    Matrix q = qr.householderQ();
    Vector normal = q.col(n_ - 1);
    Matrix full(n_, n_);
    full.leftCols(n_ - 1) = frame;
    full.col(n_ - 1) = normal;
    double det = full.determinant();
    if (std::abs(det) < 1e-12) {
      throw RankDeficiencyError("degenerate tangent frame while orienting the normal");
    }
    if (det < 0.0) normal = -normal;
    normal *= orientation_;
    normal /= normal.norm();
    return normal;
  }

  // Rank at every grid node plus the periodic seam identification.
  void validate() const {
    int total = node_count();
    for (int flat = 0; flat < total; ++flat) {
      std::vector<int> idx = unflatten(flat);
      std::vector<double> y = node_params(idx);
      (void)tangent_frame(y);  // throws on rank deficiency
    }
    for (std::size_t d = 0; d < axes_.size(); ++d) {
      if (!axes_[d].periodic) continue;
      std::vector<double> lo(axes_.size()), hi(axes_.size());
      for (std::size_t k = 0; k < axes_.size(); ++k) lo[k] = hi[k] = axes_[k].node(0);
      hi[d] = axes_[d].min + axes_[d].spacing() * axes_[d].count;  // identified end
      Vector a = point(lo), b = point(hi);
      if ((a - b).cwiseAbs().maxCoeff() > 1e-12) {
        throw InputError("periodic axis " + std::to_string(d + 1) +
                         ": map values at identified ends differ");
      }
    }
  }

 private:
  std::vector<Expression> maps_;
  std::vector<GridAxis> axes_;
  int n_ = 0;
  int orientation_ = 1;

  void check_rank_(const Matrix& frame) const {
    Eigen::ColPivHouseholderQR<Matrix> qr(frame);
    qr.setThreshold(1e-10);
    if (qr.rank() < param_count()) {
      throw RankDeficiencyError("surface parametrization is rank-deficient");
    }
  }
};

}  // namespace wavefront
