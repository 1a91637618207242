#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "horokit/action.hpp"
#include "horokit/asymptotics.hpp"
#include "horokit/core.hpp"
#include "horokit/errors.hpp"
#include "horokit/integrator.hpp"
#include "horokit/jm_metric.hpp"

namespace horokit {

/// lambda_k = lambda_0 2^k, lambda_0 = 32 max(1, scale), k = 0..doublings.
inline std::vector<double> default_lambda_schedule(double scale, int doublings = 5) {
  std::vector<double> out;
  double lam = 32.0 * std::max(1.0, scale);
  for (int k = 0; k <= doublings; ++k, lam *= 2.0) out.push_back(lam);
  return out;
}

/// Minimizer settings for targets far out along a ray: one characteristic time
/// fixed by the direction and a larger node cap.
inline MinimizeOptions far_target_options(const MassSystem& sys, const Vec& direction) {
  MinimizeOptions opt;
  opt.char_time = dynamical_time(sys, direction);
  opt.max_nodes = 1 << 14;
  return opt;
}

/// u_lambda(x) = phi_h(x, lambda a) - phi_h(0, lambda a) over a lambda schedule.
class HorofunctionApprox {
 public:
  struct Entry {
    double value = 0.0;
    // Richardson error estimate |fine - coarse| / 3.
    double error = 0.0;
    double tau = 0.0;
  };

  HorofunctionApprox(const MassSystem& sys, const Configuration& a, double h, std::vector<double> lambdas,
                     std::optional<MinimizeOptions> opt = std::nullopt)
      : sys_(sys), h_(h), lambdas_(std::move(lambdas)) {
    check_shape(sys, a.vec(), "direction");
    if (!(h > 0.0)) throw DomainError("horofunction energy must be positive");
    const double norm = mass_norm(sys, a.vec());
    if (!(norm > 0.0) || !a.all_finite()) throw DomainError("direction must be a nonzero finite configuration");
    a_ = Configuration(Vec(a.vec() / norm));
    if (!is_collision_free(sys, a_)) throw DomainError("direction has a collision");
    if (lambdas_.size() < 3) throw DomainError("lambda schedule needs at least three entries");
    for (std::size_t k = 0; k < lambdas_.size(); ++k)
      if (!(lambdas_[k] > 0.0) || (k > 0 && !(lambdas_[k] > lambdas_[k - 1])))
        throw DomainError("lambda schedule must be positive and strictly increasing");
    opt_ = opt ? *opt : far_target_options(sys, a_.vec());
  }

  const MassSystem& system() const { return sys_; }
  const Configuration& direction() const { return a_; }
  double energy() const { return h_; }
  const std::vector<double>& lambdas() const { return lambdas_; }
  const MinimizeOptions& minimize_options() const { return opt_; }

  /// phi_h(x, lambda_k a), cached per (x, k).
  Entry phi(const Vec& x, std::size_t k) const {
    check_shape(sys_, x, "query point");
    const Key key{std::vector<double>(x.data(), x.data() + x.size()), k};
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const Configuration target(Vec(lambdas_.at(k) * a_.vec()));
    const auto pv = free_time_minimize(sys_, Configuration(x), target, h_, opt_);
    const Entry e{pv.value, std::abs(pv.value_fine - pv.value_coarse) / 3.0, pv.tau_star};
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.emplace(key, e).first->second;
  }

  Entry base(std::size_t k) const { return phi(Vec::Zero(sys_.size()), k); }
  std::vector<double> base_values() const {
    std::vector<double> out;
    for (std::size_t k = 0; k < lambdas_.size(); ++k) out.push_back(base(k).value);
    return out;
  }

  /// u at a single schedule entry with the error estimate of phi_h(x, lambda a).
  /// The base value's error is a common offset and cancels in differences of u.
  std::pair<double, double> u(const Vec& x, std::size_t k) const {
    const auto p = phi(x, k), b = base(k);
    return {p.value - b.value, p.error};
  }

  std::size_t cache_size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
  }

 private:
  using Key = std::pair<std::vector<double>, std::size_t>;

  MassSystem sys_;
  Configuration a_;
  double h_;
  std::vector<double> lambdas_;
  MinimizeOptions opt_;
  mutable std::mutex mu_;
  mutable std::map<Key, Entry> cache_;
};

struct BusemannValue {
  double value = 0.0;  // u at the largest lambda
  double error = 0.0;  // Richardson estimate of phi_h(x, lambda a) at the largest lambda
  double base_error = 0.0;
  std::vector<double> per_lambda;
  std::vector<double> cauchy;  // |u_{k+1} - u_k|
};

inline BusemannValue busemann_eval(const MassSystem& sys, const HorofunctionApprox& H, const Configuration& x) {
  check_shape(sys, x.vec(), "query point");
  BusemannValue out;
  for (std::size_t k = 0; k < H.lambdas().size(); ++k) {
    const auto [u, err] = H.u(x.vec(), k);
    out.per_lambda.push_back(u);
    if (k > 0) out.cauchy.push_back(std::abs(u - out.per_lambda[k - 1]));
    out.value = u;
    out.error = err;
    out.base_error = H.base(k).error;
  }
  return out;
}

/// u at the largest lambda only.
inline std::pair<double, double> busemann_value(const HorofunctionApprox& H, const Vec& x) {
  return H.u(x, H.lambdas().size() - 1);
}

struct SynthesisOptions {
  // Empty: default schedule from max(1, |x0|).
  std::vector<double> lambdas;
  // Stop once |v_lambda - v_prev| <= vel_tol_rel * sqrt(2 (h + U)).
  double vel_tol_rel = 1e-3;
  double t_max = 1000.0;
  IntegratorOptions integrator;
  std::optional<MinimizeOptions> minimize;
  bool fit_asymptotics = true;
  // Solve every lambda even after the stop rule fires; convergence is then judged on the last step.
  bool full_schedule = false;
};

struct SynthesisResult {
  Velocity initial_velocity;
  // Departure state; differs from x0 only for collision starts.
  Configuration start;
  double t_offset = 0.0;
  bool from_collision = false;
  Trajectory trajectory;
  double lambda_used = 0.0;
  std::vector<double> lambdas_tried;
  std::vector<double> velocity_convergence;
  std::vector<Vec> velocities;
  std::optional<AsymptoticFit> asymptotics;
  std::string fit_note;
  Path departure_path;
};

namespace detail {

// Velocity with mass norm sqrt(2 (h + U(x))) along the direction of v.
inline Vec project_energy_shell(const MassSystem& sys, const Vec& x, const Vec& v, double h) {
  const double n = mass_norm(sys, v);
  if (!(n > 0.0)) throw NonConvergence("extracted departure velocity vanishes");
  return v * (std::sqrt(2.0 * (h + potential(sys, x))) / n);
}

// Position and secant velocity of a uniform path at time t.
inline std::pair<Vec, Vec> path_state(const Path& p, double t) {
  const int M = p.intervals();
  const double dt = p.times[1] - p.times[0];
  const int k = std::clamp(static_cast<int>(std::floor((t - p.times[0]) / dt)), 0, M - 1);
  const double s = (t - p.times[k]) / dt;
  return {(1.0 - s) * p.nodes.col(k) + s * p.nodes.col(k + 1), (p.nodes.col(k + 1) - p.nodes.col(k)) / dt};
}

}  // namespace detail

inline SynthesisResult synthesize_hyperbolic(const MassSystem& sys, const Configuration& x0, const Configuration& a,
                                             double h, const SynthesisOptions& opt = {}) {
  check_shape(sys, x0.vec(), "x0");
  check_shape(sys, a.vec(), "direction");
  if (!(h > 0.0)) throw DomainError("synthesis needs h > 0");
  const double an = mass_norm(sys, a.vec());
  if (!(an > 0.0)) throw DomainError("direction must be nonzero");
  const Vec dir = a.vec() / an;
  if (!is_collision_free(sys, dir)) throw DomainError("direction has a collision");
  if (!(opt.t_max > 0.0)) throw DomainError("t_max must be positive");

  const auto lambdas = opt.lambdas.empty() ? default_lambda_schedule(mass_norm(sys, x0.vec())) : opt.lambdas;
  if (lambdas.empty()) throw DomainError("empty lambda schedule");
  const MinimizeOptions mopt = opt.minimize ? *opt.minimize : far_target_options(sys, dir);
  const bool collision = !is_collision_free(sys, x0);

  SynthesisResult res;
  res.from_collision = collision;
  Vec start = x0.vec(), prev_v;
  double t_off = 0.0;
  bool converged = false;
  for (double lam : lambdas) {
    const auto pv = free_time_minimize(sys, x0, Configuration(Vec(lam * dir)), h, mopt);
    const Path& p = pv.path;
    Vec x, v;
    if (!collision) {
      x = x0.vec();
      v = pv.start_velocity;
    } else {
      if (res.lambdas_tried.empty()) t_off = p.times[1];
      std::tie(x, v) = detail::path_state(p, t_off);
      if (!is_collision_free(sys, x)) throw SearchFailure("offset state from a collision start still collides");
    }
    v = detail::project_energy_shell(sys, x, v, h);
    res.lambdas_tried.push_back(lam);
    res.velocities.push_back(v);
    res.departure_path = p;
    res.lambda_used = lam;
    start = x;
    if (prev_v.size()) {
      const double delta = mass_norm(sys, Vec(v - prev_v));
      res.velocity_convergence.push_back(delta);
      converged = delta <= opt.vel_tol_rel * mass_norm(sys, v);
      if (converged && !opt.full_schedule) break;
    }
    prev_v = v;
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "departure velocity not Cauchy by lambda = " << res.lambda_used << "; deltas:";
    for (double d : res.velocity_convergence) msg << ' ' << d;
    throw NonConvergence(msg.str());
  }

  res.initial_velocity = Velocity(res.velocities.back());
  res.start = Configuration(start);
  res.t_offset = t_off;
  res.trajectory = integrate(sys, res.start, res.initial_velocity, {t_off, t_off + opt.t_max}, opt.integrator);
  if (opt.fit_asymptotics) {
    try {
      res.asymptotics = limit_shape_fit(sys, res.trajectory, default_window(res.trajectory));
    } catch (const Error& e) {
      res.fit_note = e.what();
    }
  }
  return res;
}

struct LaxOleinikReport {
  double residual = 0.0;
  Vec y;
  double u_x = 0.0, u_y = 0.0, phi_yx = 0.0;
  // Sum of the Richardson estimates of the three potentials involved.
  double error = 0.0;
};

/// [u(y) + phi(y, x, t)] - [u(x) - h t] with u taken at schedule entry k.
inline LaxOleinikReport lax_oleinik_bracket(const MassSystem& sys, const HorofunctionApprox& H, const Configuration& x,
                                            const Configuration& y, double t, std::size_t k) {
  if (!(t > 0.0)) throw DomainError("semigroup time must be positive");
  if (k >= H.lambdas().size()) throw DomainError("schedule index out of range");
  LaxOleinikReport rep;
  rep.y = y.vec();
  const auto [ux, ex] = H.u(x.vec(), k);
  const auto [uy, ey] = H.u(y.vec(), k);
  MinimizeOptions mopt = H.minimize_options();
  mopt.char_time = 0.0;
  mopt.max_nodes = MinimizeOptions{}.max_nodes;
  const auto pv = minimize_fixed_time(sys, y, x, t, 0.0, mopt);
  rep.u_x = ux;
  rep.u_y = uy;
  rep.phi_yx = pv.value;
  rep.error = ex + ey + std::abs(pv.value_fine - pv.value_coarse) / 3.0;
  rep.residual = (uy + pv.value) - (ux - H.energy() * t);
  return rep;
}

inline LaxOleinikReport lax_oleinik_bracket(const MassSystem& sys, const HorofunctionApprox& H, const Configuration& x,
                                            const Configuration& y, double t) {
  return lax_oleinik_bracket(sys, H, x, y, t, H.lambdas().size() - 1);
}

/// The calibrating point is reached by following the motion through x with
/// velocity v toward the ray for time t; by time reversal it is the backward
/// calibrating point of u(x) = phi_h(lambda a, x) - phi_h(lambda a, 0).
/// Pass the departure velocity synthesized at the same schedule entry k.
inline LaxOleinikReport lax_oleinik_residual(const MassSystem& sys, const HorofunctionApprox& H, const Configuration& x,
                                             const Velocity& v, double t, std::size_t k,
                                             const IntegratorOptions& iopt = {}) {
  if (!(t > 0.0)) throw DomainError("semigroup time must be positive");
  const auto traj = integrate(sys, x, v, {0.0, t}, iopt);
  if (traj.terminated_reason() != Termination::ReachedTmax)
    throw CalibrationUnavailable(std::string("calibrating motion stopped early: ") +
                                 to_string(traj.terminated_reason()));
  return lax_oleinik_bracket(sys, H, x, Configuration(traj.position(traj.size() - 1)), t, k);
}

inline LaxOleinikReport lax_oleinik_residual(const MassSystem& sys, const HorofunctionApprox& H, const Configuration& x,
                                             const Velocity& v, double t, const IntegratorOptions& iopt = {}) {
  return lax_oleinik_residual(sys, H, x, v, t, H.lambdas().size() - 1, iopt);
}

inline LaxOleinikReport lax_oleinik_residual(const MassSystem& sys, const HorofunctionApprox& H, const Configuration& x,
                                             double t) {
  SynthesisOptions sopt;
  sopt.lambdas = H.lambdas();
  sopt.minimize = H.minimize_options();
  sopt.t_max = t;
  sopt.fit_asymptotics = false;
  const auto syn = synthesize_hyperbolic(sys, x, H.direction(), H.energy(), sopt);
  if (syn.from_collision) throw CalibrationUnavailable("query point has a collision");
  return lax_oleinik_residual(sys, H, x, syn.initial_velocity, t);
}

/// |u(gamma(t0)) - u(gamma(t1)) - A_{L+h}(gamma|[t0, t1])| at the largest lambda.
inline double calibration_defect(const MassSystem& sys, const HorofunctionApprox& H, const Trajectory& traj, double t0,
                                 double t1) {
  if (t1 == t0) return 0.0;
  if (t1 < t0) std::swap(t0, t1);
  const double u0 = busemann_value(H, traj.position_at(t0)).first;
  const double u1 = busemann_value(H, traj.position_at(t1)).first;
  return std::abs(u0 - u1 - trajectory_action(sys, traj, H.energy(), t0, t1));
}

inline double calibration_defect(const MassSystem& sys, const HorofunctionApprox& H, const Trajectory& traj,
                                 double t) {
  return calibration_defect(sys, H, traj, traj.t_begin(), traj.t_begin() + t);
}

}  // namespace horokit
