#pragma once

// Discrete Lagrangian action on piecewise-linear paths, fixed-time and
// free-time minimization, and a posteriori checks of computed minimizers.

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "horokit/core.hpp"
#include "horokit/integrator.hpp"

namespace horokit {

/// Discrete curve: node k sits at times[k]; nodes are stored column-wise.
struct Path {
  std::vector<double> times;
  Mat nodes;  // size() x (M + 1)
  bool endpoints_fixed = true;

  int intervals() const { return static_cast<int>(times.size()) - 1; }
  bool empty() const { return times.empty(); }
  double duration() const { return times.empty() ? 0.0 : times.back() - times.front(); }
  Configuration node(int k) const { return Configuration(nodes.col(k)); }

  static Path uniform(double t0, double t1, Mat nodes) {
    Path p;
    const int m = static_cast<int>(nodes.cols()) - 1;
    p.times.resize(m + 1);
    for (int k = 0; k <= m; ++k) p.times[k] = t0 + (t1 - t0) * k / m;
    p.times[m] = t1;
    p.nodes = std::move(nodes);
    return p;
  }

  /// Straight chord from x to y over [0, tau] with m intervals.
  static Path chord(const Vec& x, const Vec& y, double tau, int m) {
    Mat n(x.size(), m + 1);
    for (int k = 0; k <= m; ++k) {
      const double s = static_cast<double>(k) / m;
      n.col(k) = (1.0 - s) * x + s * y;
    }
    return uniform(0.0, tau, std::move(n));
  }
};

inline void check_path(const MassSystem& sys, const Path& p) {
  if (p.intervals() < 2) throw DomainError("path needs at least two intervals");
  if (p.nodes.rows() != sys.size() || p.nodes.cols() != static_cast<Eigen::Index>(p.times.size()))
    throw DimensionError("path nodes do not match the mass system");
  for (std::size_t k = 1; k < p.times.size(); ++k)
    if (!(p.times[k] > p.times[k - 1])) throw DomainError("path times must be strictly increasing");
}

struct ActionBreakdown {
  double kinetic = 0.0;
  double potential_integral = 0.0;
  double time_cost = 0.0;
  double total = 0.0;
  bool finite() const { return std::isfinite(total); }
};

struct ActionOptions {
  /// Multiplies U everywhere; 0 turns the action into that of free motion.
  double potential_scale = 1.0;
};

namespace detail {

// Two-point Gauss rule on [0, 1].
inline constexpr double kGaussS[2] = {0.5 - 0.28867513459481288225, 0.5 + 0.28867513459481288225};

}  // namespace detail

/// A_{L+h} of the piecewise-linear interpolant: exact kinetic term and a
/// two-point Gauss rule for the potential on each segment.
inline ActionBreakdown path_action(const MassSystem& sys, const Path& path, double h, const ActionOptions& opt = {}) {
  check_path(sys, path);
  ActionBreakdown b;
  const Vec& m = sys.mass_diag();
  Vec xp(sys.size());
  if (opt.potential_scale != 0.0)
    for (int k = 1; k < path.intervals(); ++k)
      if (!is_collision_free(sys, Vec(path.nodes.col(k)))) {
        b.potential_integral = b.total = kInfinitePotential;
        b.time_cost = h * path.duration();
        return b;
      }
  for (int k = 0; k < path.intervals(); ++k) {
    const double dt = path.times[k + 1] - path.times[k];
    const auto dx = path.nodes.col(k + 1) - path.nodes.col(k);
    b.kinetic += dx.cwiseProduct(m).dot(dx) / (2.0 * dt);
    if (opt.potential_scale != 0.0) {
      for (double s : detail::kGaussS) {
        xp = (1.0 - s) * path.nodes.col(k) + s * path.nodes.col(k + 1);
        const double u = potential(sys, xp);
        if (is_infinite_marker(u)) {
          b.potential_integral = kInfinitePotential;
          b.total = kInfinitePotential;
          b.time_cost = h * path.duration();
          return b;
        }
        b.potential_integral += 0.5 * dt * opt.potential_scale * u;
      }
    }
  }
  b.time_cost = h * path.duration();
  b.total = b.kinetic + b.potential_integral + b.time_cost;
  return b;
}

struct ActionGradient {
  Mat euclid;  // dA/dx_k for interior nodes, size() x (M - 1)
  Mat mass;    // mass-metric gradient, euclid divided by the masses
  /// dA/dtau for a uniform grid with nodes held fixed.
  double dtau = 0.0;
};

/// Exact gradient of path_action with respect to the interior nodes.
inline ActionGradient path_action_gradient(const MassSystem& sys, const Path& path, double h,
                                           const ActionOptions& opt = {}) {
  check_path(sys, path);
  const int M = path.intervals();
  const Vec& m = sys.mass_diag();
  Mat g = Mat::Zero(sys.size(), M + 1);
  Vec xp(sys.size()), gp(sys.size());
  double kin = 0.0, pot = 0.0;
  for (int k = 0; k < M; ++k) {
    const double dt = path.times[k + 1] - path.times[k];
    const Vec dx = path.nodes.col(k + 1) - path.nodes.col(k);
    const Vec mdx = dx.cwiseProduct(m) / dt;
    kin += mdx.dot(dx) / 2.0;
    g.col(k) -= mdx;
    g.col(k + 1) += mdx;
    if (opt.potential_scale == 0.0) continue;
    for (double s : detail::kGaussS) {
      xp = (1.0 - s) * path.nodes.col(k) + s * path.nodes.col(k + 1);
      gp.setZero();
      const double w = 0.5 * dt * opt.potential_scale;
      if (!accumulate_potential(sys, xp, w, &pot, gp, nullptr))
        throw DomainError("action gradient requested on a path through a collision");
      g.col(k) += (1.0 - s) * gp;
      g.col(k + 1) += s * gp;
    }
  }
  ActionGradient out;
  out.euclid = g.middleCols(1, M - 1);
  out.mass = out.euclid.array().colwise() / m.array();
  const double tau = path.duration();
  out.dtau = (pot - kin) / tau + h;
  return out;
}

// ---------------------------------------------------------------------------
// Minimization

struct MinimizeOptions {
  ActionOptions action;
  /// Grid: M = max(min_nodes, ceil(nodes_per_char_time * tau / char_time)), capped at max_nodes.
  int min_nodes = 64;
  double nodes_per_char_time = 20.0;
  int max_nodes = 8192;
  int nodes = 0;           // fixed M when positive
  double char_time = 0.0;  // overrides the endpoint dynamical time when positive
  /// Number of bowed starts in addition to the chord (0, 4 or 8).
  int bowed_starts = 8;
  int max_newton = 200;
  double grad_tol = 1e-10;
  /// Re-solve on the doubled grid and report the Richardson value.
  bool refine = true;
  double golden_rel_tol = 1e-6;
  int max_tau_evaluations = 200;
  /// Converged paths with an interior separation below this multiple of collision_tol are rejected.
  double reject_factor = 10.0;
  /// Starting nodes for the first solve; must have the grid size implied by the options.
  std::optional<Mat> warm_start;
};

struct PotentialValue {
  /// A_{L+h} of the reported minimizer (phi + h tau for fixed time; phi_h for free time).
  double value = 0.0;
  double tau_star = 0.0;
  Path path;
  double multistart_spread = 0.0;
  ActionBreakdown breakdown;
  double value_coarse = 0.0;  // grid M
  double value_fine = 0.0;    // grid 2M (equals value_coarse without refinement)
  bool refined = false;
  /// Velocity at the start of the path; Richardson-extrapolated over both grids when refined.
  Vec start_velocity;
  int nodes = 0;
  int starts = 0;
  int rejected_starts = 0;
  int newton_iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
  int tau_evaluations = 0;
  double tau_minus = 0.0, tau_plus = 0.0;
};

namespace detail {

struct NewtonResult {
  double value = std::numeric_limits<double>::infinity();
  double grad_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

// Interior-node action, gradient and block-tridiagonal Hessian for a uniform grid.
struct ChainModel {
  const MassSystem& sys;
  double dt, h, scale;
  int M;
  Eigen::Index n;

  double value(const Mat& X) const {
    const Vec& m = sys.mass_diag();
    double kin = 0.0, pot = 0.0;
    Vec xp(n);
    for (int k = 0; k < M; ++k) {
      const auto dx = X.col(k + 1) - X.col(k);
      kin += dx.cwiseProduct(m).dot(dx);
      if (scale == 0.0) continue;
      if (k > 0 && min_separation(sys, X.col(k)) <= sys.collision_tol()) return kInfinitePotential;
      for (double s : kGaussS) {
        xp = (1.0 - s) * X.col(k) + s * X.col(k + 1);
        const double u = potential(sys, xp);
        if (is_infinite_marker(u)) return kInfinitePotential;
        pot += u;
      }
    }
    return kin / (2.0 * dt) + 0.5 * dt * scale * pot + h * dt * M;
  }

  // Fills gradient (n x (M-1)) and blocks; returns false on collision.
  bool derivatives(const Mat& X, double* val, Mat& G, std::vector<Mat>& D, std::vector<Mat>& B) const {
    const Vec& m = sys.mass_diag();
    G.setZero(n, M + 1);
    D.assign(M + 1, Mat::Zero(n, n));
    B.assign(M, Mat::Zero(n, n));  // B[k] couples node k and k+1
    Vec xp(n), gp(n);
    Mat hp(n, n);
    double kin = 0.0, pot = 0.0;
    for (int k = 0; k < M; ++k) {
      const Vec dx = X.col(k + 1) - X.col(k);
      kin += dx.cwiseProduct(m).dot(dx);
      const Vec mdx = dx.cwiseProduct(m) / dt;
      G.col(k) -= mdx;
      G.col(k + 1) += mdx;
      D[k].diagonal() += m / dt;
      D[k + 1].diagonal() += m / dt;
      B[k].diagonal() -= m / dt;
      if (scale == 0.0) continue;
      const double w = 0.5 * dt * scale;
      for (double s : kGaussS) {
        xp = (1.0 - s) * X.col(k) + s * X.col(k + 1);
        gp.setZero();
        hp.setZero();
        if (!accumulate_potential(sys, xp, w, &pot, gp, &hp)) return false;
        G.col(k) += (1.0 - s) * gp;
        G.col(k + 1) += s * gp;
        D[k] += ((1.0 - s) * (1.0 - s)) * hp;
        D[k + 1] += (s * s) * hp;
        B[k] += (s * (1.0 - s)) * hp;
      }
    }
    if (val) *val = kin / (2.0 * dt) + pot + h * dt * M;
    return true;
  }
};

// Solves (H + mu * diag(m/dt)) P = -G for interior nodes by block Cholesky.
// Returns false when the damped matrix is not positive definite.
inline bool block_tridiagonal_solve(const std::vector<Mat>& D, const std::vector<Mat>& B, const Vec& damp, double mu,
                                    const Mat& G, Mat& P) {
  const int M = static_cast<int>(D.size()) - 1;
  const Eigen::Index n = G.rows();
  std::vector<Eigen::LLT<Mat>> fac(M + 1);
  std::vector<Mat> L(M + 1);  // L[k] = B[k-1]^T * S[k-1]^{-1}, k >= 2
  Mat S(n, n);
  for (int k = 1; k <= M - 1; ++k) {
    S = D[k];
    S.diagonal() += mu * damp;
    if (k >= 2) S.noalias() -= B[k - 1].transpose() * fac[k - 1].solve(B[k - 1]);
    fac[k].compute(S);
    if (fac[k].info() != Eigen::Success) return false;
    // Reject numerically indefinite pivots.
    if (!(fac[k].matrixLLT().diagonal().minCoeff() > 0.0)) return false;
  }
  // Forward: y_k = S_k^{-1}(r_k - B[k-1]^T y_{k-1}); back: p_k = y_k - S_k^{-1} B[k] p_{k+1}.
  P.setZero(n, M + 1);
  Mat Y(n, M + 1);
  for (int k = 1; k <= M - 1; ++k) {
    Vec r = -G.col(k);
    if (k >= 2) r.noalias() -= B[k - 1].transpose() * Y.col(k - 1);
    Y.col(k) = fac[k].solve(r);
  }
  for (int k = M - 1; k >= 1; --k) {
    P.col(k) = Y.col(k);
    if (k <= M - 2) P.col(k).noalias() -= fac[k].solve(B[k] * P.col(k + 1));
  }
  return true;
}

inline double mass_grad_norm(const MassSystem& sys, const Mat& G, int M) {
  double s = 0.0;
  for (int k = 1; k < M; ++k) s += G.col(k).cwiseAbs2().cwiseQuotient(sys.mass_diag()).sum();
  return std::sqrt(s);
}

// Damped Newton with Armijo backtracking; X holds endpoints and is updated in place.
inline NewtonResult newton_minimize(const MassSystem& sys, Mat& X, double tau, double h, const MinimizeOptions& opt) {
  const int M = static_cast<int>(X.cols()) - 1;
  ChainModel model{sys, tau / M, h, opt.action.potential_scale, M, sys.size()};
  NewtonResult res;
  Mat G, P, Xt;
  std::vector<Mat> D, B;
  const Vec damp = sys.mass_diag() / model.dt;
  double mu = 0.0;
  double f = 0.0;
  if (!model.derivatives(X, &f, G, D, B)) return res;
  for (int it = 0; it < opt.max_newton; ++it) {
    res.iterations = it + 1;
    res.grad_norm = mass_grad_norm(sys, G, M);
    res.value = f;
    if (res.grad_norm <= opt.grad_tol) {
      res.converged = true;
      return res;
    }
    bool stepped = false;
    for (int attempt = 0; attempt < 60 && !stepped; ++attempt) {
      if (!block_tridiagonal_solve(D, B, damp, mu, G, P)) {
        mu = mu == 0.0 ? 1e-8 : mu * 10.0;
        continue;
      }
      double slope = 0.0;
      for (int k = 1; k < M; ++k) slope += G.col(k).dot(P.col(k));
      if (!(slope < 0.0)) {
        mu = mu == 0.0 ? 1e-8 : mu * 10.0;
        continue;
      }
      // Predicted decrease at roundoff level: converged.
      if (-slope <= 1e-26 * std::max(1.0, std::abs(f)) * std::max(1.0, std::abs(f))) {
        res.converged = true;
        return res;
      }
      double alpha = 1.0;
      for (int ls = 0; ls < 40; ++ls) {
        Xt = X + alpha * P;
        const double ft = model.value(Xt);
        if (std::isfinite(ft) && ft <= f + 1e-4 * alpha * slope) {
          X.swap(Xt);
          stepped = true;
          break;
        }
        // Roundoff floor: a full Newton step that does not increase f is accepted.
        if (alpha == 1.0 && std::isfinite(ft) && -slope < 1e-14 * std::max(1.0, std::abs(f)) &&
            ft <= f + 1e-14 * std::max(1.0, std::abs(f))) {
          X.swap(Xt);
          stepped = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!stepped) {
        mu = mu == 0.0 ? 1e-8 : mu * 10.0;
        if (mu > 1e12) break;
      } else if (alpha == 1.0) {
        mu = mu < 1e-10 ? 0.0 : mu / 10.0;
      }
    }
    if (!stepped) {
      res.converged = res.grad_norm <= 1e3 * opt.grad_tol;
      return res;
    }
    if (!model.derivatives(X, &f, G, D, B)) {
      res.value = kInfinitePotential;
      return res;
    }
  }
  res.value = f;
  res.grad_norm = mass_grad_norm(sys, G, M);
  res.converged = res.grad_norm <= opt.grad_tol;
  return res;
}

// Minimum separation over interior nodes and Gauss points.
inline double interior_min_separation(const MassSystem& sys, const Mat& X) {
  double r = std::numeric_limits<double>::infinity();
  const int M = static_cast<int>(X.cols()) - 1;
  Vec xp(X.rows());
  for (int k = 0; k < M; ++k) {
    if (k > 0) r = std::min(r, min_separation(sys, X.col(k)));
    for (double s : kGaussS) {
      xp = (1.0 - s) * X.col(k) + s * X.col(k + 1);
      r = std::min(r, min_separation(sys, xp));
    }
  }
  return r;
}

// Unit vector orthogonal to `base` within the body's d-space.
inline Vec perpendicular(const Vec& base) {
  const Eigen::Index d = base.size();
  Vec b = base;
  if (b.norm() == 0.0) b = Vec::Unit(d, 0);
  b.normalize();
  // Rotate within the two coordinates where b is largest.
  Eigen::Index i0 = 0, i1 = 1;
  Vec a = b.cwiseAbs();
  a.maxCoeff(&i0);
  a[i0] = -1.0;
  a.maxCoeff(&i1);
  Vec p = Vec::Zero(d);
  p[i0] = -b[i1];
  p[i1] = b[i0];
  p -= p.dot(b) * b;
  if (p.norm() < 1e-12) {
    p = Vec::Unit(d, i1);
    p -= p.dot(b) * b;
  }
  return p.normalized();
}

inline std::vector<Mat> initial_paths(const MassSystem& sys, const Vec& x, const Vec& y, int M, int bows) {
  std::vector<Mat> starts;
  Mat chord(x.size(), M + 1);
  for (int k = 0; k <= M; ++k) {
    const double s = static_cast<double>(k) / M;
    chord.col(k) = (1.0 - s) * x + s * y;
  }
  starts.push_back(chord);
  if (bows <= 0) return starts;
  const int d = sys.dim();
  const int N = sys.n_bodies();
  const double dist = mass_norm(sys, Vec(y - x)) / std::sqrt(sys.total_mass());
  double scale = std::min(dist, 1.0 + std::min(x.norm(), y.norm()));
  if (scale < 1e-3 * (1.0 + x.norm())) scale = separation_range(sys, x).second;
  const std::vector<double> amps = {0.25 * scale, 0.75 * scale};
  const std::vector<int> bodies = bows >= 8 ? std::vector<int>{0, N - 1} : std::vector<int>{0};
  const Vec gx = center_of_mass(sys, x);
  for (int body : bodies) {
    Vec base = y.segment(body * d, d) - x.segment(body * d, d);
    if (base.norm() < 1e-12 * (1.0 + x.norm())) base = x.segment(body * d, d) - gx;
    const Vec perp = perpendicular(base);
    for (double amp : amps)
      for (double sgn : {1.0, -1.0}) {
        Mat p = chord;
        for (int k = 1; k < M; ++k)
          p.col(k).segment(body * d, d) += sgn * amp * std::sin(M_PI * k / M) * perp;
        starts.push_back(std::move(p));
      }
  }
  return starts;
}

inline int grid_size(const MassSystem& sys, const Vec& x, const Vec& y, double tau, const MinimizeOptions& opt) {
  if (opt.nodes > 0) return std::max(2, opt.nodes);
  double ct = opt.char_time;
  if (!(ct > 0.0)) {
    ct = std::numeric_limits<double>::infinity();
    for (const Vec* e : {&x, &y}) {
      const double t = dynamical_time(sys, *e);
      if (t > 0.0) ct = std::min(ct, t);
    }
    if (!std::isfinite(ct)) ct = tau;
  }
  const double want = std::ceil(opt.nodes_per_char_time * tau / ct);
  return static_cast<int>(std::clamp(want, static_cast<double>(opt.min_nodes), static_cast<double>(opt.max_nodes)));
}

struct FixedSolve {
  Mat nodes;
  NewtonResult newton;
  int starts = 0, rejected = 0;
  double spread = 0.0;
};

inline FixedSolve solve_fixed(const MassSystem& sys, const Vec& x, const Vec& y, double tau, double h, int M,
                              const MinimizeOptions& opt, const Mat* warm, bool multistart) {
  std::vector<Mat> starts;
  if (warm) starts.push_back(*warm);
  if (!warm || multistart) {
    auto more = initial_paths(sys, x, y, M, multistart ? opt.bowed_starts : 0);
    for (auto& s : more) starts.push_back(std::move(s));
  }
  FixedSolve best;
  best.newton.value = std::numeric_limits<double>::infinity();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  const double reject = opt.reject_factor * sys.collision_tol();
  for (auto& X : starts) {
    X.col(0) = x;
    X.col(M) = y;
    ++best.starts;
    const auto r = newton_minimize(sys, X, tau, h, opt);
    if (!std::isfinite(r.value) || interior_min_separation(sys, X) < reject) {
      ++best.rejected;
      continue;
    }
    lo = std::min(lo, r.value);
    hi = std::max(hi, r.value);
    if (r.value < best.newton.value) {
      best.newton = r;
      best.nodes = X;
    }
  }
  if (best.nodes.size() == 0)
    throw SearchFailure("all " + std::to_string(best.starts) + " starts ended near a collision (tau = " +
                        std::to_string(tau) + ")");
  best.spread = hi - lo;
  return best;
}

inline Mat refine_nodes(const Mat& X) {
  const int M = static_cast<int>(X.cols()) - 1;
  Mat Y(X.rows(), 2 * M + 1);
  for (int k = 0; k < M; ++k) {
    Y.col(2 * k) = X.col(k);
    Y.col(2 * k + 1) = 0.5 * (X.col(k) + X.col(k + 1));
  }
  Y.col(2 * M) = X.col(M);
  return Y;
}

// Second-order one-sided difference at the first node.
inline Vec start_slope(const Mat& X, double dt) {
  return (-3.0 * X.col(0) + 4.0 * X.col(1) - X.col(2)) / (2.0 * dt);
}

inline void finish(const MassSystem& sys, const Vec& x, const Vec& y, double tau, double h, const MinimizeOptions& opt,
                   FixedSolve& coarse, PotentialValue& pv) {
  const int M = static_cast<int>(coarse.nodes.cols()) - 1;
  pv.nodes = M;
  pv.starts += coarse.starts;
  pv.rejected_starts += coarse.rejected;
  pv.multistart_spread = std::max(pv.multistart_spread, coarse.spread);
  pv.value_coarse = coarse.newton.value;
  pv.newton_iterations += coarse.newton.iterations;
  pv.tau_star = tau;
  if (opt.refine) {
    const Mat warm = refine_nodes(coarse.nodes);
    auto fine = solve_fixed(sys, x, y, tau, h, 2 * M, opt, &warm, false);
    pv.value_fine = fine.newton.value;
    pv.value = (4.0 * pv.value_fine - pv.value_coarse) / 3.0;
    pv.refined = true;
    pv.start_velocity = (4.0 * start_slope(fine.nodes, tau / (2 * M)) - start_slope(coarse.nodes, tau / M)) / 3.0;
    pv.path = Path::uniform(0.0, tau, std::move(fine.nodes));
    pv.grad_norm = fine.newton.grad_norm;
    pv.converged = coarse.newton.converged && fine.newton.converged;
    pv.newton_iterations += fine.newton.iterations;
  } else {
    pv.value_fine = pv.value_coarse;
    pv.value = pv.value_coarse;
    pv.start_velocity = start_slope(coarse.nodes, tau / M);
    pv.path = Path::uniform(0.0, tau, std::move(coarse.nodes));
    pv.grad_norm = coarse.newton.grad_norm;
    pv.converged = coarse.newton.converged;
  }
  pv.breakdown = path_action(sys, pv.path, h, opt.action);
}

}  // namespace detail

/// phi(x, y, tau) + h tau over curves with fixed endpoints and duration tau.
inline PotentialValue minimize_fixed_time(const MassSystem& sys, const Configuration& x, const Configuration& y,
                                          double tau, double h, const MinimizeOptions& opt = {}) {
  check_shape(sys, x.vec(), "x");
  check_shape(sys, y.vec(), "y");
  if (!(tau > 0.0)) throw DomainError("transfer time must be positive");
  const int M = detail::grid_size(sys, x.vec(), y.vec(), tau, opt);
  const Mat* warm = nullptr;
  if (opt.warm_start) {
    if (opt.warm_start->cols() != M + 1 || opt.warm_start->rows() != sys.size())
      throw DimensionError("warm start does not match the grid");
    warm = &*opt.warm_start;
  }
  auto coarse = detail::solve_fixed(sys, x.vec(), y.vec(), tau, h, M, opt, warm, true);
  PotentialValue pv;
  detail::finish(sys, x.vec(), y.vec(), tau, h, opt, coarse, pv);
  pv.tau_evaluations = 1;
  return pv;
}

/// Roots of 2 h s^2 - 2 ub s + dist^2, which bracket the optimal transfer time.
inline std::pair<double, double> free_time_bracket(double h, double dist, double ub) {
  if (!(h > 0.0)) throw DomainError("free-time bracket needs h > 0");
  const double disc = ub * ub - 2.0 * h * dist * dist;
  if (disc < -1e-12 * std::max(1.0, ub * ub)) throw InconsistencyError("upper bound is below sqrt(2h) * dist");
  const double root = std::sqrt(std::max(0.0, disc));
  return {(ub - root) / (2.0 * h), (ub + root) / (2.0 * h)};
}

/// phi_h(x, y) = inf_tau phi(x, y, tau) + h tau by golden section over the
/// transfer-time bracket, tightened whenever a better upper bound appears.
inline PotentialValue free_time_minimize(const MassSystem& sys, const Configuration& x, const Configuration& y,
                                         double h, const MinimizeOptions& opt = {}) {
  check_shape(sys, x.vec(), "x");
  check_shape(sys, y.vec(), "y");
  if (!(h > 0.0)) throw DomainError("free-time minimization needs h > 0");
  PotentialValue pv;
  const double dist = mass_norm(sys, Vec(y.vec() - x.vec()));
  if (dist == 0.0) return pv;  // infimum 0, not attained

  const double tau_seed = dist / std::sqrt(2.0 * h);
  // One grid for every tau keeps f(tau) continuous.
  const int M = detail::grid_size(sys, x.vec(), y.vec(), tau_seed, opt);
  std::map<double, Mat> cache_nodes;
  std::map<double, double> cache_val;
  int best_starts = 0, best_rejected = 0;
  double spread = 0.0;

  auto evaluate = [&](double tau) {
    if (auto it = cache_val.find(tau); it != cache_val.end()) return it->second;
    const Mat* warm = nullptr;
    if (!cache_nodes.empty()) {
      auto it = cache_nodes.lower_bound(tau);
      if (it == cache_nodes.end() || (it != cache_nodes.begin() && tau - std::prev(it)->first < it->first - tau))
        it = std::prev(it);
      warm = &it->second;
    } else if (opt.warm_start) {
      warm = &*opt.warm_start;
    }
    auto r = detail::solve_fixed(sys, x.vec(), y.vec(), tau, h, M, opt, warm, cache_nodes.empty());
    best_starts += r.starts;
    best_rejected += r.rejected;
    if (cache_nodes.empty()) spread = r.spread;
    pv.newton_iterations += r.newton.iterations;
    cache_nodes[tau] = std::move(r.nodes);
    cache_val[tau] = r.newton.value;
    return r.newton.value;
  };

  double ub = evaluate(tau_seed);
  auto [a, b] = free_time_bracket(h, dist, ub);
  pv.tau_minus = a;
  pv.tau_plus = b;
  const double tol = opt.golden_rel_tol * b;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = evaluate(c), fd = evaluate(d);
  int evals = 3;
  while (b - a > tol && evals < opt.max_tau_evaluations) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = evaluate(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = evaluate(d);
    }
    ++evals;
    const double best = std::min({ub, fc, fd});
    if (best < ub) {
      ub = best;
      const auto [na, nb] = free_time_bracket(h, dist, ub);
      const double la = std::max(a, na), lb = std::min(b, nb);
      if (lb - la < 0.5 * (b - a) && lb > la) {
        a = la;
        b = lb;
        c = b - inv_phi * (b - a);
        d = a + inv_phi * (b - a);
        fc = evaluate(c);
        fd = evaluate(d);
        evals += 2;
      }
    }
  }
  // Best evaluated transfer time.
  double tau_best = tau_seed, f_best = std::numeric_limits<double>::infinity();
  for (const auto& [t, v] : cache_val)
    if (v < f_best) {
      f_best = v;
      tau_best = t;
    }
  detail::FixedSolve coarse;
  coarse.nodes = cache_nodes[tau_best];
  coarse.newton = detail::newton_minimize(sys, coarse.nodes, tau_best, h, opt);
  pv.newton_iterations += coarse.newton.iterations;
  coarse.starts = best_starts;
  coarse.rejected = best_rejected;
  coarse.spread = spread;
  detail::finish(sys, x.vec(), y.vec(), tau_best, h, opt, coarse, pv);
  pv.tau_evaluations = evals;
  return pv;
}

// ---------------------------------------------------------------------------
// A posteriori checks

struct MinimizerReport {
  std::vector<double> node_energy;
  double median_energy_error = 0.0;
  double max_energy_error = 0.0;
  bool energy_consistent = false;  // median |E - h| <= 1e-3 (1 + h)
  double shooting_miss = 0.0;      // mass norm of x(tau) - y
  double shooting_miss_rel = 0.0;  // relative to |x - y|
  Termination shooting_termination = Termination::ReachedTmax;
  double min_sep = 0.0;
};

/// Discrete Legendre velocity at node 0 of a uniform path.
inline Vec initial_velocity(const MassSystem& sys, const Path& path, const ActionOptions& opt = {}) {
  const double dt = path.times[1] - path.times[0];
  Vec p = (path.nodes.col(1) - path.nodes.col(0)) / dt;
  Vec g = Vec::Zero(sys.size()), xp(sys.size());
  for (double s : detail::kGaussS) {
    xp = (1.0 - s) * path.nodes.col(0) + s * path.nodes.col(1);
    Vec gp = Vec::Zero(sys.size());
    if (!accumulate_potential(sys, xp, 0.5 * dt * opt.potential_scale, nullptr, gp, nullptr))
      throw DomainError("path starts at a collision");
    g += (1.0 - s) * gp;
  }
  return p - g.cwiseQuotient(sys.mass_diag());
}

/// Discrete Legendre velocity at the last node of a uniform path.
inline Vec final_velocity(const MassSystem& sys, const Path& path, const ActionOptions& opt = {}) {
  const int M = path.intervals();
  const double dt = path.times[M] - path.times[M - 1];
  Vec p = (path.nodes.col(M) - path.nodes.col(M - 1)) / dt;
  Vec g = Vec::Zero(sys.size()), xp(sys.size());
  for (double s : detail::kGaussS) {
    xp = (1.0 - s) * path.nodes.col(M - 1) + s * path.nodes.col(M);
    Vec gp = Vec::Zero(sys.size());
    if (!accumulate_potential(sys, xp, 0.5 * dt * opt.potential_scale, nullptr, gp, nullptr))
      throw DomainError("path ends at a collision");
    g += s * gp;
  }
  return p + g.cwiseQuotient(sys.mass_diag());
}

inline MinimizerReport verify_minimizer(const MassSystem& sys, const PotentialValue& pv, double h,
                                        const IntegratorOptions& iopt = {}) {
  MinimizerReport rep;
  const Path& path = pv.path;
  if (path.empty()) return rep;
  check_path(sys, path);
  const int M = path.intervals();
  // Segment energy of the discrete Lagrangian, -dL_d/dt: chord kinetic term minus
  // the Gauss-point mean of U. Nodes take the mean of their neighbouring segments.
  std::vector<double> seg(M);
  Vec xp(sys.size());
  for (int k = 0; k < M; ++k) {
    const double dt = path.times[k + 1] - path.times[k];
    const Vec dx = path.nodes.col(k + 1) - path.nodes.col(k);
    double u = 0.0;
    for (double s : detail::kGaussS) {
      xp = (1.0 - s) * path.nodes.col(k) + s * path.nodes.col(k + 1);
      u += 0.5 * potential(sys, xp);
    }
    seg[k] = 0.5 * mass_inner(sys, dx, dx) / (dt * dt) - u;
  }
  rep.node_energy.resize(M + 1);
  rep.node_energy[0] = seg[0];
  rep.node_energy[M] = seg[M - 1];
  for (int k = 1; k < M; ++k) rep.node_energy[k] = 0.5 * (seg[k - 1] + seg[k]);
  std::vector<double> err(rep.node_energy.size());
  for (std::size_t k = 0; k < err.size(); ++k) err[k] = std::abs(rep.node_energy[k] - h);
  rep.max_energy_error = *std::max_element(err.begin(), err.end());
  std::nth_element(err.begin(), err.begin() + err.size() / 2, err.end());
  rep.median_energy_error = err[err.size() / 2];
  rep.energy_consistent = rep.median_energy_error <= 1e-3 * (1.0 + std::abs(h));

  rep.min_sep = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= M; ++k) rep.min_sep = std::min(rep.min_sep, min_separation(sys, path.nodes.col(k)));

  const Configuration x0(path.nodes.col(0));
  const Velocity v0(initial_velocity(sys, path));
  const auto traj = integrate(sys, x0, v0, {path.times.front(), path.times.back()}, iopt);
  rep.shooting_termination = traj.terminated_reason();
  const double dist = mass_norm(sys, Vec(path.nodes.col(M) - path.nodes.col(0)));
  if (traj.terminated_reason() != Termination::ReachedTmax) {
    rep.shooting_miss = std::numeric_limits<double>::infinity();
  } else {
    rep.shooting_miss = mass_norm(sys, Vec(traj.position(traj.size() - 1) - path.nodes.col(M)));
  }
  rep.shooting_miss_rel = dist > 0.0 ? rep.shooting_miss / dist : rep.shooting_miss;
  return rep;
}

}  // namespace horokit
