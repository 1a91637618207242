#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "horokit/action.hpp"
#include "horokit/asymptotics.hpp"
#include "horokit/core.hpp"
#include "horokit/errors.hpp"
#include "horokit/integrator.hpp"

namespace horokit {

namespace detail {

using JmGauss = boost::math::quadrature::gauss<double, 10>;

inline double jm_density(const MassSystem& sys, const Vec& x, double h) {
  const double u = potential(sys, x);
  if (is_infinite_marker(u)) throw DomainError("curve passes through a collision");
  const double w = 2.0 * (h + u);
  if (w < 0.0) throw DomainError("curve leaves the Hill region h + U >= 0");
  return std::sqrt(w);
}

// Closest approach of every pair along the straight segment a -> b.
inline double segment_min_separation(const MassSystem& sys, const Vec& a, const Vec& b) {
  const int d = sys.dim();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < sys.n_bodies(); ++i)
    for (int j = i + 1; j < sys.n_bodies(); ++j) {
      const Vec r0 = a.segment(j * d, d) - a.segment(i * d, d);
      const Vec dr = (b.segment(j * d, d) - b.segment(i * d, d)) - r0;
      const double dd = dr.squaredNorm();
      const double s = dd > 0.0 ? std::clamp(-r0.dot(dr) / dd, 0.0, 1.0) : 0.0;
      best = std::min(best, (r0 + s * dr).norm());
    }
  return best;
}

}  // namespace detail

/// JM length of the piecewise-linear path: sum of |dx| * int_0^1 sqrt(2(h + U)) ds.
inline double jm_length(const MassSystem& sys, const Path& path, double h) {
  check_path(sys, path);
  if (h < 0.0) throw DomainError("energy must be non-negative");
  double total = 0.0;
  Vec xp(sys.size());
  for (int k = 0; k < path.intervals(); ++k) {
    const Vec a = path.nodes.col(k), b = path.nodes.col(k + 1);
    const double len = mass_norm(sys, Vec(b - a));
    if (len == 0.0) continue;
    if (detail::segment_min_separation(sys, a, b) <= sys.collision_tol())
      throw DomainError("path segment passes through a collision");
    total += len * detail::JmGauss::integrate(
                       [&](double s) {
                         xp = (1.0 - s) * a + s * b;
                         return detail::jm_density(sys, xp, h);
                       },
                       0.0, 1.0);
  }
  return total;
}

/// JM length of an integrated motion, Gauss-Legendre per step on the dense output.
inline double jm_length(const MassSystem& sys, const Trajectory& traj, double h) {
  if (traj.empty()) throw DomainError("empty trajectory");
  if (h < 0.0) throw DomainError("energy must be non-negative");
  const auto& ts = traj.times();
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < ts.size(); ++k)
    total += detail::JmGauss::integrate(
        [&](double t) {
          return detail::jm_density(sys, traj.position_at(t), h) * mass_norm(sys, traj.velocity_at(t));
        },
        ts[k], ts[k + 1]);
  return total;
}

/// A_{L+h} of an integrated motion restricted to [t0, t1].
inline double trajectory_action(const MassSystem& sys, const Trajectory& traj, double h, double t0, double t1) {
  if (traj.empty()) throw DomainError("empty trajectory");
  if (t1 < t0) std::swap(t0, t1);
  if (t0 < traj.t_begin() - 1e-12 * std::max(1.0, std::abs(t0)) ||
      t1 > traj.t_end() + 1e-12 * std::max(1.0, std::abs(t1)))
    throw DomainError("action interval outside the integrated range");
  auto lagrangian = [&](double t) {
    const Vec v = traj.velocity_at(t);
    const double u = potential(sys, traj.position_at(t));
    if (is_infinite_marker(u)) throw DomainError("trajectory passes through a collision");
    return 0.5 * mass_inner(sys, v, v) + u + h;
  };
  const auto& ts = traj.times();
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
    const double a = std::max(ts[k], t0), b = std::min(ts[k + 1], t1);
    if (b > a) total += detail::JmGauss::integrate(lagrangian, a, b);
  }
  return total;
}

inline double trajectory_action(const MassSystem& sys, const Trajectory& traj, double h) {
  if (traj.empty()) throw DomainError("empty trajectory");
  return trajectory_action(sys, traj, h, traj.t_begin(), traj.t_end());
}

/// JM arclength s(t) of a motion of energy h, with s = 0 at the initial time.
class ArcParam {
 public:
  ArcParam(const MassSystem& sys, const Trajectory& traj, double h) : sys_(sys), traj_(&traj), h_(h) {
    if (!(h > 0.0)) throw DomainError("arclength parametrization needs h > 0");
    if (traj.empty()) throw DomainError("empty trajectory");
    if (std::abs(traj.energy0() - h) > traj.drift_budget())
      throw InconsistencyError("trajectory energy " + std::to_string(traj.energy0()) + " differs from h = " +
                               std::to_string(h) + " beyond the drift budget");
    const auto& ts = traj.times();
    s_.assign(ts.size(), 0.0);
    for (std::size_t k = 0; k + 1 < ts.size(); ++k) s_[k + 1] = s_[k] + segment(ts[k], ts[k + 1]);
    const double s0 = s_of(traj.t_start());
    for (double& s : s_) s -= s0;
  }

  double h() const { return h_; }
  const std::vector<double>& t_samples() const { return traj_->times(); }
  const std::vector<double>& s_samples() const { return s_; }

  double speed(double t) const {
    const double u = potential(sys_, traj_->position_at(t));
    if (is_infinite_marker(u)) throw DomainError("trajectory passes through a collision");
    return 2.0 * h_ + 2.0 * u;
  }

  double s_of(double t) const {
    const auto k = traj_->segment_index(t);
    return s_[k] + segment(traj_->times()[k], t);
  }

  double t_of(double s) const {
    if (s < s_.front() - 1e-12 * std::max(1.0, std::abs(s)) || s > s_.back() + 1e-12 * std::max(1.0, std::abs(s)))
      throw DomainError("arclength outside the parametrized range");
    const auto& ts = traj_->times();
    auto it = std::upper_bound(s_.begin(), s_.end(), s);
    std::size_t k = it == s_.begin() ? 0 : static_cast<std::size_t>(it - s_.begin()) - 1;
    if (k + 1 >= ts.size()) return ts.back();
    double lo = ts[k], hi = ts[k + 1];
    // Safeguarded Newton on s(t) - s inside the segment bracket.
    double t = lo + (hi - lo) * (s - s_[k]) / std::max(s_[k + 1] - s_[k], std::numeric_limits<double>::min());
    for (int it_n = 0; it_n < 100; ++it_n) {
      const double f = s_[k] + segment(ts[k], t) - s;
      if (f > 0.0) hi = t; else lo = t;
      double next = t - f / speed(t);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - t) <= 1e-15 * std::max(1.0, std::abs(t))) return next;
      t = next;
    }
    return t;
  }

  Vec gamma(double s) const { return traj_->position_at(t_of(s)); }

  Vec dgamma_ds(double s) const {
    const double t = t_of(s);
    return traj_->velocity_at(t) / speed(t);
  }

 private:
  double segment(double a, double b) const {
    if (b == a) return 0.0;
    return detail::JmGauss::integrate([&](double t) { return speed(t); }, a, b);
  }

  MassSystem sys_;
  const Trajectory* traj_;
  double h_;
  std::vector<double> s_;
};

/// The returned object refers to traj, which must outlive it.
inline ArcParam arclength_reparam(const MassSystem& sys, const Trajectory& traj, double h) {
  return ArcParam(sys, traj, h);
}

struct SCheckOptions {
  // Multiplies the log coefficient 2 U(a); anything but 1 is a negative control.
  double coefficient_scale = 1.0;
  std::size_t samples_per_decade = 100;
  double growth_ratio = 1.2;
  // Fraction of the per-decade drift a wrong log slope of size kappa would cause.
  double absolute_fraction = 0.25;
};

struct SCheckReport {
  double coefficient = 0.0;
  double potential_at_a = 0.0;
  double range_previous = 0.0;
  double range_last = 0.0;
  std::vector<double> t, residual;
  bool pass = false;
};

/// Residual s(t) - 2 h t - kappa log t over the last two decades, kappa = 2 U(a).
inline SCheckReport s_asymptotic_check(const MassSystem& sys, const Trajectory& traj, double h,
                                       const AsymptoticFit& fit, const SCheckOptions& opt = {}) {
  const ArcParam arc(sys, traj, h);
  SCheckReport rep;
  rep.potential_at_a = potential(sys, fit.direction.vec());
  rep.coefficient = opt.coefficient_scale * 2.0 * rep.potential_at_a;
  const double sign = traj.backward() ? -1.0 : 1.0;
  const double t_max = traj.backward() ? -traj.t_begin() : traj.t_end();
  auto decade_range = [&](double lo, double hi) {
    double rmin = std::numeric_limits<double>::infinity(), rmax = -rmin;
    for (double t : detail::log_spaced(lo, hi, opt.samples_per_decade)) {
      // Arclength grows with |t| on either branch.
      const double r = sign * arc.s_of(sign * t) - 2.0 * h * t - rep.coefficient * std::log(t);
      rep.t.push_back(t);
      rep.residual.push_back(r);
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
    }
    return rmax - rmin;
  };
  rep.range_previous = decade_range(t_max / 100.0, t_max / 10.0);
  rep.range_last = decade_range(t_max / 10.0, t_max);
  rep.pass = rep.range_last <= opt.growth_ratio * rep.range_previous &&
             rep.range_last <= opt.absolute_fraction * std::abs(rep.coefficient) * std::log(10.0);
  return rep;
}

struct SphereMinOptions {
  int restarts = 32;
  std::uint64_t seed = 0;
  int max_iterations = 20000;
  double grad_tol = 1e-11;
};

struct SphereMin {
  double u0 = std::numeric_limits<double>::infinity();
  Vec argmin;
  int converged_restarts = 0;
};

/// min U over the mass-norm unit sphere by projected descent from random starts.
inline SphereMin unit_sphere_min_potential(const MassSystem& sys, const SphereMinOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const Eigen::Index n = sys.size();
  SphereMin best;
  for (int r = 0; r < opt.restarts; ++r) {
    Vec x(n);
    do {
      for (Eigen::Index k = 0; k < n; ++k) x[k] = g(rng);
      x /= mass_norm(sys, x);
    } while (min_separation(sys, x) < 1e-3);
    double u = potential(sys, x);
    double step = 0.1;
    bool converged = false;
    for (int it = 0; it < opt.max_iterations; ++it) {
      Vec grad = potential_gradient(sys, x).mass.vec();
      grad -= mass_inner(sys, grad, x) * x;
      const double gn = mass_norm(sys, grad);
      if (gn <= opt.grad_tol * std::max(1.0, u)) {
        converged = true;
        break;
      }
      // Armijo backtracking along the retraction x - a g, renormalized.
      bool moved = false;
      for (int bt = 0; bt < 60; ++bt) {
        Vec trial = x - step * grad;
        trial /= mass_norm(sys, trial);
        const double ut = potential(sys, trial);
        if (!is_infinite_marker(ut) && ut <= u - 1e-4 * step * gn * gn) {
          x = trial;
          u = ut;
          moved = true;
          step *= 2.0;
          break;
        }
        step *= 0.5;
      }
      if (!moved) {
        converged = gn <= 1e-7 * std::max(1.0, u);
        break;
      }
    }
    if (converged) ++best.converged_restarts;
    if (u < best.u0) {
      best.u0 = u;
      best.argmin = x;
    }
  }
  if (best.converged_restarts == 0) throw NonConvergence("projected descent on the unit sphere did not converge");
  return best;
}

/// Kepler comparison lower bound for phi_0(x, y), with U0 supplied.
inline double kepler_lower_bound(const MassSystem& sys, const Configuration& x, const Configuration& y, double u0) {
  check_shape(sys, x.vec(), "configuration x");
  check_shape(sys, y.vec(), "configuration y");
  const double dist = mass_norm(sys, Vec(x.vec() - y.vec()));
  if (dist == 0.0) throw DomainError("kepler lower bound needs x != y");
  const double mu0 = std::sqrt(2.0 * u0);
  const double rho = std::sqrt(std::max(mass_norm(sys, x.vec()), mass_norm(sys, y.vec())));
  return mu0 / rho * dist;
}

inline double kepler_lower_bound(const MassSystem& sys, const Configuration& x, const Configuration& y) {
  return kepler_lower_bound(sys, x, y, unit_sphere_min_potential(sys).u0);
}

}  // namespace horokit
