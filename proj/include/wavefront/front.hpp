#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "wavefront/dynamics.hpp"
#include "wavefront/errors.hpp"
#include "wavefront/surface.hpp"

namespace wavefront {

namespace detail {

inline int thread_budget(int jobs) {
  const char* env = std::getenv("WAVEFRONT_THREADS");
  int t = env ? std::atoi(env) : static_cast<int>(std::thread::hardware_concurrency());
  if (t < 1) t = 1;
  return std::max(1, std::min(t, jobs));
}

// Chunked parallel loop with per-index exception capture; the lowest failing
// index wins so failures are reported deterministically.
template <class F>
void parallel_for(int count, F&& body) {
  int workers = thread_budget(count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = w; i < count; i += workers) {
        try {
          body(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

struct FrontNode {
  Vector x;
  Vector p;
  double nu = 0.0;
  double H = 0.0;
  double omega = 0.0;
  Vector vseed;       // velocity seed carried along the trajectory
  bool failed = false;
};

// One time slice of a propagating front: grid of phase points plus per-node
// deviation values and rates.
struct FrontState {
  double t = 0.0;
  int n = 0;
  std::vector<GridAxis> axes;
  std::vector<FrontNode> nodes;
  std::vector<double> phi;     // [node * dirs + dir]
  std::vector<double> phidot;  // same layout

  int dirs() const { return n - 1; }
  int node_count() const { return static_cast<int>(nodes.size()); }

  std::vector<int> unflatten(int flat) const {
    std::vector<int> idx(axes.size());
    for (int d = static_cast<int>(axes.size()) - 1; d >= 0; --d) {
      idx[d] = flat % axes[d].count;
      flat /= axes[d].count;
    }
    return idx;
  }

  int flatten(std::span<const int> idx) const {
    int flat = 0;
    for (std::size_t d = 0; d < axes.size(); ++d) flat = flat * axes[d].count + idx[d];
    return flat;
  }

  bool is_edge_node(int flat) const {
    std::vector<int> idx = unflatten(flat);
    for (std::size_t d = 0; d < axes.size(); ++d) {
      if (!axes[d].periodic && (idx[d] == 0 || idx[d] == axes[d].count - 1)) return true;
    }
    return false;
  }
};

namespace detail {

// Second-order derivative along one grid direction: central stencil inside and
// on periodic axes, one-sided three-point stencil at open boundaries.
template <class Getter>
double grid_derivative(const std::vector<GridAxis>& axes, std::span<const int> idx,
                       int dir, Getter&& value_at) {
  const GridAxis& ax = axes[static_cast<std::size_t>(dir)];
  if (ax.count < 3) {
    throw InsufficientGridError("grid direction " + std::to_string(dir + 1) +
                                " needs at least 3 nodes for stencils");
  }
  double h = ax.spacing();
  std::vector<int> probe(idx.begin(), idx.end());
  auto flat_at = [&](int i) {
    probe[static_cast<std::size_t>(dir)] = i;
    int flat = 0;
    for (std::size_t d = 0; d < axes.size(); ++d) flat = flat * axes[d].count + probe[d];
    return flat;
  };
  int i = idx[dir];
  if (ax.periodic) {
    int ip = (i + 1) % ax.count;
    int im = (i - 1 + ax.count) % ax.count;
    return (value_at(flat_at(ip)) - value_at(flat_at(im))) / (2.0 * h);
  }
  if (i == 0) {
    return (-3.0 * value_at(flat_at(0)) + 4.0 * value_at(flat_at(1)) -
            value_at(flat_at(2))) /
           (2.0 * h);
  }
  if (i == ax.count - 1) {
    return (3.0 * value_at(flat_at(i)) - 4.0 * value_at(flat_at(i - 1)) +
            value_at(flat_at(i - 2))) /
           (2.0 * h);
  }
  return (value_at(flat_at(i + 1)) - value_at(flat_at(i - 1))) / (2.0 * h);
}

}  // namespace detail

// Variation vector tau_dir at one node: grid stencil over node positions.
inline Vector variation_vector(const FrontState& f, int flat, int dir) {
  std::vector<int> idx = f.unflatten(flat);
  Vector tau(f.n);
  for (int s = 0; s < f.n; ++s) {
    tau(s) = detail::grid_derivative(f.axes, idx, dir,
                                     [&](int node) { return f.nodes[node].x(s); });
  }
  return tau;
}

inline Vector momentum_derivative(const FrontState& f, int flat, int dir) {
  std::vector<int> idx = f.unflatten(flat);
  Vector dp(f.n);
  for (int s = 0; s < f.n; ++s) {
    dp(s) = detail::grid_derivative(f.axes, idx, dir,
                                    [&](int node) { return f.nodes[node].p(s); });
  }
  return dp;
}

// Fills phi (deviation functions, phi_i = sum_s p_s tau^s_i) and phidot
// (their rates) for every node. Nodes marked failed poison the stencils that
// touch them; the corresponding entries become NaN.
inline void compute_deviations(const HamiltonianModel& hm, FrontState& f,
                               const NewtonConfig& nc = {}) {
  int dirs = f.dirs();
  int count = f.node_count();
  f.phi.assign(static_cast<std::size_t>(count * dirs), 0.0);
  f.phidot.assign(static_cast<std::size_t>(count * dirs), 0.0);
  if (dirs == 0) return;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int flat = 0; flat < count; ++flat) {
    FrontNode& node = f.nodes[static_cast<std::size_t>(flat)];
    if (node.failed) {
      for (int d = 0; d < dirs; ++d) {
        f.phi[static_cast<std::size_t>(flat * dirs + d)] = nan;
        f.phidot[static_cast<std::size_t>(flat * dirs + d)] = nan;
      }
      continue;
    }
    Vector seed = node.vseed.size() ? node.vseed : node.p;
    HamiltonianModel::Eval e = hm.eval(node.x, node.p, &seed, nc);
    node.H = e.value;
    node.omega = e.omega;
    node.vseed = e.velocity;
    std::vector<int> idx = f.unflatten(flat);
    for (int d = 0; d < dirs; ++d) {
      bool tainted = false;
      auto guard = [&](int neighbor) -> const FrontNode& {
        const FrontNode& nb = f.nodes[static_cast<std::size_t>(neighbor)];
        if (nb.failed) tainted = true;
        return nb;
      };
      Vector tau(f.n), dp(f.n);
      for (int s = 0; s < f.n; ++s) {
        tau(s) = detail::grid_derivative(f.axes, idx, d,
                                         [&](int nb) { return guard(nb).x(s); });
        dp(s) = detail::grid_derivative(f.axes, idx, d,
                                        [&](int nb) { return guard(nb).p(s); });
      }
      if (tainted) {
        f.phi[static_cast<std::size_t>(flat * dirs + d)] = nan;
        f.phidot[static_cast<std::size_t>(flat * dirs + d)] = nan;
        continue;
      }
      double phi = node.p.dot(tau);
      double phidot = -(e.dH_dp.dot(dp) + e.dH_dx.dot(tau)) / e.omega;
      f.phi[static_cast<std::size_t>(flat * dirs + d)] = phi;
      f.phidot[static_cast<std::size_t>(flat * dirs + d)] = phidot;
    }
  }
}

// Scalar root of H(x, nu * n) = 0 with the root on the seed's side of zero:
// geometric bracket scan followed by safeguarded Newton.
inline double solve_nu(const HamiltonianModel& hm, const Vector& x, const Vector& normal,
                       double seed, double tol = 1e-12, const NewtonConfig& nc = {}) {
  if (seed == 0.0) throw InputError("solve_nu needs a nonzero seed");
  Vector vseed = seed * normal;
  auto eval_g = [&](double nu) {
    HamiltonianModel::Eval e = hm.eval(x, nu * normal, &vseed, nc);
    vseed = e.velocity;
    return std::pair<double, double>(e.value, normal.dot(e.dH_dp));
  };

  auto [g0, dg0] = eval_g(seed);
  if (std::abs(g0) <= tol) return seed;

  // Bracket scan over magnitudes seed * 2^j expanding outward from the seed;
  // a sign change between neighboring rungs gives the bracket. Rungs whose
  // evaluation fails (e.g. a Legendre inversion breaking down at extreme nu)
  // close off that side of the ladder.
  double lo = 0.0, hi = 0.0, glo = 0.0;
  bool found = false;
  double up_nu = seed, up_g = g0;
  double down_nu = seed, down_g = g0;
  bool up_open = true, down_open = true;
  for (int step = 1; step <= 20 && !found; ++step) {
    if (up_open) {
      double nu = seed * std::pow(2.0, step);
      if (std::abs(nu) > 1e6 * std::abs(seed)) {
        up_open = false;
      } else {
        try {
          double g = eval_g(nu).first;
          if (g == 0.0) return nu;
          if ((up_g < 0.0) != (g < 0.0)) {
            lo = up_nu;
            hi = nu;
            glo = up_g;
            found = true;
          }
          up_nu = nu;
          up_g = g;
        } catch (const ModelError&) {
          up_open = false;
        }
      }
    }
    if (down_open && !found) {
      double nu = seed * std::pow(2.0, -step);
      try {
        double g = eval_g(nu).first;
        if (g == 0.0) return nu;
        if ((down_g < 0.0) != (g < 0.0)) {
          lo = nu;
          hi = down_nu;
          glo = g;
          found = true;
        }
        down_nu = nu;
        down_g = g;
      } catch (const ModelError&) {
        down_open = false;
      }
    }
    if (!up_open && !down_open) break;
  }
  if (!found) {
    throw NoRootError("no sign change of H(x, nu*n) for |nu| up to 1e6*|seed|");
  }

  double nu = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    auto [g, dg] = eval_g(nu);
    if (std::abs(g) <= tol) return nu;
    if ((glo < 0.0) != (g < 0.0)) {
      hi = nu;
    } else {
      lo = nu;
      glo = g;
    }
    double next = dg != 0.0 ? nu - g / dg : 0.5 * (lo + hi);
    double a = std::min(lo, hi), b = std::max(lo, hi);
    if (!(next > a && next < b)) next = 0.5 * (lo + hi);
    nu = next;
  }
  throw NoConvergenceError("solve_nu failed to reach tolerance");
}

// Cauchy data of the normal shift: per node x from sigma, p = nu * n with nu
// from the zero level of H. normal_scale rescales the reference normal; nu
// absorbs the factor so the resulting front is normalization-invariant.
inline FrontState init_front(const HamiltonianModel& hm, const Hypersurface& sigma,
                             double nu_seed, double normal_scale = 1.0,
                             const NewtonConfig& nc = {}) {
  sigma.validate();
  FrontState f;
  f.t = 0.0;
  f.n = sigma.dimension();
  f.axes = sigma.axes();
  int count = sigma.node_count();
  f.nodes.resize(static_cast<std::size_t>(count));
  for (int flat = 0; flat < count; ++flat) {
    std::vector<int> idx = sigma.unflatten(flat);
    std::vector<double> y = sigma.node_params(idx);
    FrontNode& node = f.nodes[static_cast<std::size_t>(flat)];
    node.x = sigma.point(y);
    Vector normal = normal_scale * sigma.normal_covector(y);
    try {
      node.nu = solve_nu(hm, node.x, normal, nu_seed, 1e-12, nc);
    } catch (const Error& err) {
      std::string where;
      for (std::size_t d = 0; d < idx.size(); ++d) {
        where += (d ? "," : "") + std::to_string(idx[d]);
      }
      throw NoRootError("init_front at node (" + where + "): " + err.what());
    }
    node.p = node.nu * normal;
    Vector seed = node.p;
    HamiltonianModel::Eval e = hm.eval(node.x, node.p, &seed, nc);
    node.H = e.value;
    node.omega = e.omega;
    node.vseed = e.velocity;
  }
  compute_deviations(hm, f, nc);
  return f;
}

// Time series of the deviation diagnostics across a propagation.
struct DeviationTrace {
  std::vector<double> times;
  int node_count = 0;
  int dirs = 0;
  // Layout: [time * node_count * dirs + node * dirs + dir]
  std::vector<double> phi;
  std::vector<double> phidot;
  std::vector<double> omega_phidot;

  double at(const std::vector<double>& v, int t, int node, int dir) const {
    return v[static_cast<std::size_t>((t * node_count + node) * dirs + dir)];
  }

  double max_abs_phi = 0.0;
  double max_abs_phi_interior = 0.0;
  double max_abs_phi_edge = 0.0;
  // Largest |Omega*phidot(t) - Omega*phidot(0)| over nodes and directions,
  // divided by the largest |Omega*phidot| seen anywhere (floored at 1e-12).
  double max_omega_phidot_drift_rel = 0.0;
};

struct PropagationResult {
  std::vector<FrontState> states;
  DeviationTrace trace;
  int failed_nodes = 0;
};

// Integrates every node of the front under the modified flow and recomputes
// the deviation diagnostics at each stored output time.
inline PropagationResult propagate_front(const HamiltonianModel& hm, const FrontState& f0,
                                         double t_end, const IntegratorConfig& cfg = {},
                                         int n_outputs = 17, bool mask_failures = false) {
  int count = f0.node_count();
  int n = f0.n;
  std::vector<Trajectory> trajs(static_cast<std::size_t>(count));
  std::vector<std::string> failures(static_cast<std::size_t>(count));

  detail::parallel_for(count, [&](int flat) {
    const FrontNode& node = f0.nodes[static_cast<std::size_t>(flat)];
    PhasePoint q0;
    q0.x = node.x;
    q0.p = node.p;
    auto annotate = [&](const Error& err) {
      std::vector<int> idx = f0.unflatten(flat);
      std::string where;
      for (std::size_t d = 0; d < idx.size(); ++d) {
        where += (d ? "," : "") + std::to_string(idx[d]);
      }
      return "node " + std::to_string(flat) + " (" + where + "): " + err.what();
    };
    try {
      trajs[static_cast<std::size_t>(flat)] =
          integrate(hm, q0, Flow::modified, t_end, cfg, n_outputs);
    } catch (const OmegaNonpositiveError& err) {
      if (!mask_failures) throw OmegaNonpositiveError(annotate(err));
      failures[static_cast<std::size_t>(flat)] = annotate(err);
    } catch (const Error& err) {
      if (!mask_failures) throw ModelError(annotate(err));
      failures[static_cast<std::size_t>(flat)] = annotate(err);
    }
  });

  PropagationResult out;
  out.states.reserve(static_cast<std::size_t>(n_outputs));
  for (int k = 0; k < n_outputs; ++k) {
    FrontState fk;
    fk.n = n;
    fk.axes = f0.axes;
    fk.nodes.resize(static_cast<std::size_t>(count));
    double tk = 0.0;
    for (int flat = 0; flat < count; ++flat) {
      FrontNode& node = fk.nodes[static_cast<std::size_t>(flat)];
      const FrontNode& init = f0.nodes[static_cast<std::size_t>(flat)];
      if (!failures[static_cast<std::size_t>(flat)].empty()) {
        node = init;
        node.failed = true;
        continue;
      }
      const Trajectory& tr = trajs[static_cast<std::size_t>(flat)];
      node.x = tr.samples[static_cast<std::size_t>(k)].x;
      node.p = tr.samples[static_cast<std::size_t>(k)].p;
      node.nu = init.nu;
      node.H = tr.H[static_cast<std::size_t>(k)];
      node.omega = tr.omega[static_cast<std::size_t>(k)];
      node.vseed = node.p;
      tk = tr.samples[static_cast<std::size_t>(k)].t;
    }
    fk.t = tk;
    compute_deviations(hm, fk, cfg.newton);
    out.states.push_back(std::move(fk));
  }

  for (const std::string& msg : failures) {
    if (!msg.empty()) ++out.failed_nodes;
  }

  DeviationTrace& trace = out.trace;
  trace.node_count = count;
  trace.dirs = n - 1;
  trace.times.reserve(out.states.size());
  for (const FrontState& s : out.states) trace.times.push_back(s.t);
  std::size_t total = out.states.size() * static_cast<std::size_t>(count * trace.dirs);
  trace.phi.reserve(total);
  trace.phidot.reserve(total);
  trace.omega_phidot.reserve(total);
  for (const FrontState& s : out.states) {
    for (int flat = 0; flat < count; ++flat) {
      for (int d = 0; d < trace.dirs; ++d) {
        double phi = s.phi[static_cast<std::size_t>(flat * trace.dirs + d)];
        double phidot = s.phidot[static_cast<std::size_t>(flat * trace.dirs + d)];
        double omega = s.nodes[static_cast<std::size_t>(flat)].omega;
        trace.phi.push_back(phi);
        trace.phidot.push_back(phidot);
        trace.omega_phidot.push_back(omega * phidot);
      }
    }
  }

  double scale = 0.0;
  for (double w : trace.omega_phidot) {
    if (std::isfinite(w)) scale = std::max(scale, std::abs(w));
  }
  scale = std::max(scale, 1e-12);
  int T = static_cast<int>(out.states.size());
  for (int flat = 0; flat < count; ++flat) {
    bool edge = f0.is_edge_node(flat);
    for (int d = 0; d < trace.dirs; ++d) {
      double w0 = trace.at(trace.omega_phidot, 0, flat, d);
      for (int k = 0; k < T; ++k) {
        double phi = trace.at(trace.phi, k, flat, d);
        if (std::isfinite(phi)) {
          trace.max_abs_phi = std::max(trace.max_abs_phi, std::abs(phi));
          if (edge) {
            trace.max_abs_phi_edge = std::max(trace.max_abs_phi_edge, std::abs(phi));
          } else {
            trace.max_abs_phi_interior =
                std::max(trace.max_abs_phi_interior, std::abs(phi));
          }
        }
        double w = trace.at(trace.omega_phidot, k, flat, d);
        if (std::isfinite(w) && std::isfinite(w0)) {
          trace.max_omega_phidot_drift_rel =
              std::max(trace.max_omega_phidot_drift_rel, std::abs(w - w0) / scale);
        }
      }
    }
  }
  return out;
}

// Rescales nu (and with it p = nu * n) at the selected nodes, then refreshes
// the diagnostics. Keeps phi(0) = 0 because p stays parallel to the normal.
template <class Predicate>
void perturb_nu(const HamiltonianModel& hm, FrontState& f, double factor,
                Predicate&& selected, const NewtonConfig& nc = {}) {
  for (int flat = 0; flat < f.node_count(); ++flat) {
    std::vector<int> idx = f.unflatten(flat);
    if (!selected(std::span<const int>(idx))) continue;
    FrontNode& node = f.nodes[static_cast<std::size_t>(flat)];
    node.nu *= factor;
    node.p *= factor;
  }
  for (FrontNode& node : f.nodes) {
    Vector seed = node.p;
    HamiltonianModel::Eval e = hm.eval(node.x, node.p, &seed, nc);
    node.H = e.value;
    node.omega = e.omega;
    node.vseed = e.velocity;
  }
  compute_deviations(hm, f, nc);
}

// First-quadrant predicate used by the perturbation protocol.
inline std::function<bool(std::span<const int>)> quadrant_predicate(
    const std::vector<GridAxis>& axes) {
  return [axes](std::span<const int> idx) {
    for (std::size_t d = 0; d < axes.size(); ++d) {
      if (idx[d] >= axes[d].count / 4) return false;
    }
    return true;
  };
}

// Residual of the Pfaff system for nu on sigma, one value per node and
// direction: D(nu) - nu * RHS, with the normal derivatives taken by grid
// stencils and tau from the exact frame.
inline std::vector<double> pfaff_residual(const HamiltonianModel& hm,
                                          const Hypersurface& sigma,
                                          std::span<const double> nu,
                                          const NewtonConfig& nc = {}) {
  int count = sigma.node_count();
  int n = sigma.dimension();
  int dirs = n - 1;
  if (static_cast<int>(nu.size()) != count) {
    throw InputError("pfaff_residual: nu size must match the grid");
  }
  const std::vector<GridAxis>& axes = sigma.axes();

  std::vector<Vector> normals(static_cast<std::size_t>(count));
  std::vector<Vector> points(static_cast<std::size_t>(count));
  std::vector<Matrix> frames(static_cast<std::size_t>(count));
  for (int flat = 0; flat < count; ++flat) {
    std::vector<int> idx = sigma.unflatten(flat);
    std::vector<double> y = sigma.node_params(idx);
    points[static_cast<std::size_t>(flat)] = sigma.point(y);
    normals[static_cast<std::size_t>(flat)] = sigma.normal_covector(y);
    frames[static_cast<std::size_t>(flat)] = sigma.tangent_frame(y);
  }

  std::vector<double> residual(static_cast<std::size_t>(count * dirs));
  for (int flat = 0; flat < count; ++flat) {
    std::vector<int> idx = sigma.unflatten(flat);
    double nu_here = nu[static_cast<std::size_t>(flat)];
    Vector p = nu_here * normals[static_cast<std::size_t>(flat)];
    Vector seed = p;
    HamiltonianModel::Eval e = hm.eval(points[static_cast<std::size_t>(flat)], p, &seed, nc);
    if (e.omega <= 1e-12) {
      throw OmegaNonpositiveError("Omega <= 0 in Pfaff residual at node " +
                                  std::to_string(flat));
    }
    for (int d = 0; d < dirs; ++d) {
      double dnu = detail::grid_derivative(
          axes, idx, d, [&](int nb) { return nu[static_cast<std::size_t>(nb)]; });
      double term_n = 0.0;
      for (int s = 0; s < n; ++s) {
        double dns = detail::grid_derivative(axes, idx, d, [&](int nb) {
          return normals[static_cast<std::size_t>(nb)](s);
        });
        term_n += dns * e.dH_dp(s);
      }
      double term_x = e.dH_dx.dot(frames[static_cast<std::size_t>(flat)].col(d));
      double rhs = -(nu_here * nu_here / e.omega) * term_n - (nu_here / e.omega) * term_x;
      residual[static_cast<std::size_t>(flat * dirs + d)] = dnu - rhs;
    }
  }
  return residual;
}

}  // namespace wavefront
