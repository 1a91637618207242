#pragma once

// Adaptive integration of Newton's equations x'' = grad U(x) with dense
// output, plus the dynamical identities used to audit trajectories.

#include <boost/math/tools/toms748_solve.hpp>
#include <boost/numeric/odeint/stepper/runge_kutta_fehlberg78.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "horokit/core.hpp"

namespace horokit {

enum class Termination { ReachedTmax, CollisionApproach, StepUnderflow };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::ReachedTmax: return "reached_tmax";
    case Termination::CollisionApproach: return "collision_approach";
    case Termination::StepUnderflow: return "step_underflow";
  }
  return "unknown";
}

struct IntegratorOptions {
  double rel_tol = 1e-13;
  double abs_tol = 1e-13;
  /// Stop when the minimum separation drops below this multiple of collision_tol.
  double collision_factor = 10.0;
  /// Smallest admissible step relative to max(1, |t|).
  double min_step_rel = 1e-15;
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 20'000'000;
  /// Declared energy drift budget per unit time, relative to 1 + |h|.
  double drift_rate = 1e-9;
};

struct PhaseState {
  Configuration x;
  Velocity v;
};

/// Quintic Hermite basis on [0, 1] built from position, velocity and
/// acceleration at both ends.
namespace detail {

struct HermiteWeights {
  double x0, v0, a0, a1, v1, x1;
};

inline HermiteWeights hermite_position(double s) {
  const double s2 = s * s, s3 = s2 * s, s4 = s3 * s, s5 = s4 * s;
  return {1 - 10 * s3 + 15 * s4 - 6 * s5,
          s - 6 * s3 + 8 * s4 - 3 * s5,
          0.5 * s2 - 1.5 * s3 + 1.5 * s4 - 0.5 * s5,
          0.5 * s3 - s4 + 0.5 * s5,
          -4 * s3 + 7 * s4 - 3 * s5,
          10 * s3 - 15 * s4 + 6 * s5};
}

inline HermiteWeights hermite_velocity(double s) {
  const double s2 = s * s, s3 = s2 * s, s4 = s3 * s;
  return {-30 * s2 + 60 * s3 - 30 * s4,
          1 - 18 * s2 + 32 * s3 - 15 * s4,
          s - 4.5 * s2 + 6 * s3 - 2.5 * s4,
          1.5 * s2 - 4 * s3 + 2.5 * s4,
          -12 * s2 + 28 * s3 - 15 * s4,
          30 * s2 - 60 * s3 + 30 * s4};
}

}  // namespace detail

/// Dense solution of Newton's equations. Samples are stored in increasing time
/// order regardless of the direction of integration.
class Trajectory {
 public:
  Trajectory() = default;

  std::size_t size() const { return times_.size(); }
  bool empty() const { return times_.empty(); }
  const std::vector<double>& times() const { return times_; }
  double t_begin() const { return times_.front(); }
  double t_end() const { return times_.back(); }
  /// Time at which integration started (t_end() for backward runs).
  double t_start() const { return backward_ ? times_.back() : times_.front(); }
  bool backward() const { return backward_; }

  const Vec& position(std::size_t k) const { return pos_[k]; }
  const Vec& velocity(std::size_t k) const { return vel_[k]; }
  const Vec& acceleration(std::size_t k) const { return acc_[k]; }
  PhaseState state(std::size_t k) const { return {Configuration(pos_[k]), Velocity(vel_[k])}; }

  double energy0() const { return energy0_; }
  Termination terminated_reason() const { return reason_; }
  /// Maximum admissible |energy - energy0| over the whole run.
  double drift_budget() const { return drift_budget_; }

  /// Index k with times[k] <= t <= times[k+1]; clamps to the covered range.
  std::size_t segment_index(double t) const {
    if (times_.size() < 2) return 0;
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t k = static_cast<std::size_t>(std::distance(times_.begin(), it));
    if (k == 0) return 0;
    return std::min(k - 1, times_.size() - 2);
  }

  Vec position_at(double t) const {
    check_range(t);
    if (times_.size() == 1) return pos_[0];
    const std::size_t k = segment_index(t);
    const double h = times_[k + 1] - times_[k];
    const auto w = detail::hermite_position((t - times_[k]) / h);
    return w.x0 * pos_[k] + (h * w.v0) * vel_[k] + (h * h * w.a0) * acc_[k] + (h * h * w.a1) * acc_[k + 1] +
           (h * w.v1) * vel_[k + 1] + w.x1 * pos_[k + 1];
  }

  Vec velocity_at(double t) const {
    check_range(t);
    if (times_.size() == 1) return vel_[0];
    const std::size_t k = segment_index(t);
    const double h = times_[k + 1] - times_[k];
    const auto w = detail::hermite_velocity((t - times_[k]) / h);
    return (w.x0 / h) * pos_[k] + w.v0 * vel_[k] + (h * w.a0) * acc_[k] + (h * w.a1) * acc_[k + 1] +
           w.v1 * vel_[k + 1] + (w.x1 / h) * pos_[k + 1];
  }

  PhaseState state_at(double t) const { return {Configuration(position_at(t)), Velocity(velocity_at(t))}; }

  /// Appends a sample; used by the integrator and by deserialization.
  void push_back(double t, Vec x, Vec v, Vec a) {
    times_.push_back(t);
    pos_.push_back(std::move(x));
    vel_.push_back(std::move(v));
    acc_.push_back(std::move(a));
  }

  void set_meta(double energy0, Termination reason, double drift_budget, bool backward) {
    energy0_ = energy0;
    reason_ = reason;
    drift_budget_ = drift_budget;
    backward_ = backward;
  }

  void reverse_samples() {
    std::reverse(times_.begin(), times_.end());
    std::reverse(pos_.begin(), pos_.end());
    std::reverse(vel_.begin(), vel_.end());
    std::reverse(acc_.begin(), acc_.end());
  }

 private:
  void check_range(double t) const {
    if (times_.empty()) throw DomainError("empty trajectory");
    const double slack = 1e-12 * std::max(1.0, std::abs(t));
    if (t < times_.front() - slack || t > times_.back() + slack)
      throw DomainError("time outside the integrated range");
  }

  std::vector<double> times_;
  std::vector<Vec> pos_, vel_, acc_;
  double energy0_ = 0.0;
  Termination reason_ = Termination::ReachedTmax;
  double drift_budget_ = 0.0;
  bool backward_ = false;
};

namespace detail {

using OdeState = std::vector<double>;

struct NewtonField {
  const MassSystem* sys;
  mutable Vec x, a;

  void operator()(const OdeState& s, OdeState& ds, double /*t*/) const {
    const auto n = sys->size();
    for (Eigen::Index k = 0; k < n; ++k) x[k] = s[k];
    const bool ok = acceleration(*sys, x, a);
    for (Eigen::Index k = 0; k < n; ++k) {
      ds[k] = s[n + k];
      ds[n + k] = ok ? a[k] : std::numeric_limits<double>::quiet_NaN();
    }
  }
};

// Forward integration of (x0, v0) over [0, duration]; the caller maps times.
inline Trajectory integrate_forward(const MassSystem& sys, const Vec& x0, const Vec& v0, double duration,
                                    const IntegratorOptions& opt) {
  const auto n = sys.size();
  Trajectory traj;
  Vec a0(n);
  if (!acceleration(sys, x0, a0)) throw DomainError("initial configuration has a collision");
  traj.push_back(0.0, x0, v0, a0);
  if (duration == 0.0) return traj;

  boost::numeric::odeint::runge_kutta_fehlberg78<OdeState> stepper;
  NewtonField field{&sys, Vec(n), Vec(n)};
  OdeState y(2 * n), out(2 * n), err(2 * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    y[k] = x0[k];
    y[n + k] = v0[k];
  }

  const double stop_sep = opt.collision_factor * sys.collision_tol();
  double t = 0.0;
  double dt = std::min({0.01 * std::max(dynamical_time(sys, x0), 1e-12), duration, opt.max_step});
  Vec xk(n), vk(n), ak(n);
  Termination reason = Termination::ReachedTmax;
  std::size_t steps = 0;

  while (t < duration) {
    if (++steps > opt.max_steps) {
      reason = Termination::StepUnderflow;
      break;
    }
    bool last = false;
    if (t + dt >= duration) {
      dt = duration - t;
      last = true;
    }
    if (dt < opt.min_step_rel * std::max(1.0, std::abs(t))) {
      reason = Termination::StepUnderflow;
      break;
    }
    stepper.do_step(field, y, t, out, dt, err);
    double e = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
      const double scale = opt.abs_tol + opt.rel_tol * std::max(std::abs(y[k]), std::abs(out[k]));
      const double r = std::abs(err[k]) / scale;
      if (!std::isfinite(r) || !std::isfinite(out[k])) {
        e = std::numeric_limits<double>::infinity();
        break;
      }
      e = std::max(e, r);
    }
    if (e > 1.0) {
      const double f = std::isfinite(e) ? std::max(0.2, 0.9 * std::pow(e, -1.0 / 8.0)) : 0.1;
      dt *= f;
      continue;
    }
    for (Eigen::Index k = 0; k < n; ++k) {
      xk[k] = out[k];
      vk[k] = out[n + k];
    }
    if (min_separation(sys, xk) < stop_sep || !acceleration(sys, xk, ak)) {
      reason = Termination::CollisionApproach;
      break;
    }
    t = last ? duration : t + dt;
    y.swap(out);
    traj.push_back(t, xk, vk, ak);
    const double grow = e > 0.0 ? std::min(5.0, std::max(0.2, 0.9 * std::pow(e, -1.0 / 8.0))) : 5.0;
    dt = std::min(dt * grow, opt.max_step);
  }
  const double h0 = energy(sys, x0, v0);
  traj.set_meta(h0, reason, opt.drift_rate * (1.0 + std::abs(h0)) * std::max(1.0, duration), false);
  return traj;
}

}  // namespace detail

/// Integrates from (x0, v0) at time t0 up to t1. Backward runs (t1 < t0) use
/// the time-reversal symmetry of the flow; samples are always stored in
/// increasing time order.
inline Trajectory integrate(const MassSystem& sys, const Configuration& x0, const Velocity& v0,
                            std::pair<double, double> t_span, const IntegratorOptions& opt = {}) {
  check_shape(sys, x0.vec(), "initial configuration");
  check_shape(sys, v0.vec(), "initial velocity");
  if (!x0.all_finite() || !v0.all_finite()) throw DomainError("non-finite initial data");
  if (!is_collision_free(sys, x0)) throw DomainError("initial configuration has a collision");
  if (!(opt.rel_tol > 0.0) || !(opt.abs_tol > 0.0)) throw DomainError("tolerances must be positive");
  const auto [t0, t1] = t_span;
  const bool backward = t1 < t0;
  const double duration = std::abs(t1 - t0);
  const Vec v_start = backward ? Vec(-v0.vec()) : v0.vec();
  Trajectory fwd = detail::integrate_forward(sys, x0.vec(), v_start, duration, opt);
  if (!backward) {
    if (t0 == 0.0) return fwd;
    Trajectory out;
    for (std::size_t k = 0; k < fwd.size(); ++k)
      out.push_back(t0 + fwd.times()[k], fwd.position(k), fwd.velocity(k), fwd.acceleration(k));
    out.set_meta(fwd.energy0(), fwd.terminated_reason(), fwd.drift_budget(), false);
    return out;
  }
  Trajectory out;
  for (std::size_t k = fwd.size(); k-- > 0;)
    out.push_back(t0 - fwd.times()[k], fwd.position(k), -fwd.velocity(k), fwd.acceleration(k));
  out.set_meta(fwd.energy0(), fwd.terminated_reason(), fwd.drift_budget(), true);
  return out;
}

/// Maximum |energy(state_k) - energy0| over the stored samples.
inline double max_energy_drift(const MassSystem& sys, const Trajectory& traj) {
  double d = 0.0;
  for (std::size_t k = 0; k < traj.size(); ++k)
    d = std::max(d, std::abs(energy(sys, traj.position(k), traj.velocity(k)) - traj.energy0()));
  return d;
}

/// Per-sample residual of the Lagrange-Jacobi identity I'' = 4h + 2U, with I''
/// evaluated as 2|v|^2 + 2<x, x''> in the mass metric.
inline std::vector<double> lagrange_jacobi_residual(const MassSystem& sys, const Trajectory& traj) {
  std::vector<double> res(traj.size());
  const double h = traj.energy0();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Vec& x = traj.position(k);
    const Vec& v = traj.velocity(k);
    const Vec& a = traj.acceleration(k);
    const double iddot = 2.0 * mass_inner(sys, v, v) + 2.0 * mass_inner(sys, x, a);
    res[k] = iddot - 4.0 * h - 2.0 * potential(sys, x);
  }
  return res;
}

/// Same residual for an arbitrary phase state, with the energy level supplied.
inline double lagrange_jacobi_residual(const MassSystem& sys, const Vec& x, const Vec& v, const Vec& a, double h) {
  return 2.0 * mass_inner(sys, v, v) + 2.0 * mass_inner(sys, x, a) - 4.0 * h - 2.0 * potential(sys, x);
}

struct Perihelion {
  double t_p = 0.0;
  PhaseState state;
};

/// Locates the root of I' = 2<x, v> within search_span = (t_lo, t_hi), t_lo <= 0 <= t_hi.
inline Perihelion perihelion_state(const MassSystem& sys, const Configuration& x0, const Velocity& v0,
                                   std::pair<double, double> search_span, const IntegratorOptions& opt = {}) {
  const auto [t_lo, t_hi] = search_span;
  if (!(t_lo <= 0.0 && t_hi >= 0.0)) throw BracketError("search span must contain t = 0");
  const double d0 = mass_inner(sys, x0, v0);
  if (std::abs(d0) <= 1e-14 * mass_norm(sys, x0) * std::max(1.0, mass_norm(sys, v0)))
    return {0.0, {x0, v0}};
  // I is convex for h > 0, so the root lies ahead when <x, v> < 0.
  const double t_end = d0 < 0.0 ? t_hi : t_lo;
  if (t_end == 0.0) throw BracketError("no sign change of <x, v> in the search span");
  const Trajectory traj = integrate(sys, x0, v0, {0.0, t_end}, opt);
  auto idot = [&](double t) { return mass_inner(sys, traj.position_at(t), traj.velocity_at(t)); };
  // Walk samples from the start of integration until the sign flips.
  const std::size_t n = traj.size();
  double a = 0.0, b = 0.0;
  bool found = false;
  for (std::size_t j = 1; j < n; ++j) {
    const std::size_t k1 = traj.backward() ? n - 1 - j : j;
    const std::size_t k0 = traj.backward() ? n - j : j - 1;
    const double s1 = mass_inner(sys, traj.position(k1), traj.velocity(k1));
    if ((s1 > 0.0) != (d0 > 0.0) || s1 == 0.0) {
      a = traj.times()[k0];
      b = traj.times()[k1];
      found = true;
      break;
    }
  }
  if (!found) throw BracketError("no sign change of <x, v> in the search span");
  if (a > b) std::swap(a, b);
  std::uintmax_t iters = 200;
  auto tol = [](double l, double r) { return std::abs(r - l) <= 1e-15 * std::max(1.0, std::abs(l)); };
  const auto root = boost::math::tools::toms748_solve(idot, a, b, tol, iters);
  const double tp = 0.5 * (root.first + root.second);
  const Trajectory to_tp = integrate(sys, x0, v0, {0.0, tp}, opt);
  const std::size_t last = to_tp.backward() ? 0 : to_tp.size() - 1;
  return {tp, to_tp.state(last)};
}

/// The homothety x_l(t) = l x(l^{-3/2} t) applied to every stored sample.
inline Trajectory rescale_solution(const Trajectory& traj, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("scale factor must be positive");
  const double tf = std::pow(lambda, 1.5);
  const double vf = 1.0 / std::sqrt(lambda);
  const double af = 1.0 / (lambda * lambda);
  Trajectory out;
  for (std::size_t k = 0; k < traj.size(); ++k)
    out.push_back(tf * traj.times()[k], lambda * traj.position(k), vf * traj.velocity(k), af * traj.acceleration(k));
  out.set_meta(traj.energy0() / lambda, traj.terminated_reason(), traj.drift_budget() / lambda, traj.backward());
  return out;
}

}  // namespace horokit
