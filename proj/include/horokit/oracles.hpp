#pragma once

// Independent ground truth: universal-variable Kepler propagation, scattering
// asymptotes, a Lambert-based two-body action potential, radial actions by
// quadrature and a dense brute-force transcription for small systems.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "horokit/action.hpp"
#include "horokit/core.hpp"

namespace horokit {

namespace kepler {

/// Stumpff functions C(z), S(z) with series near zero.
inline std::pair<double, double> stumpff(double z) {
  if (std::abs(z) < 1e-3) {
    // Enough terms for full precision at |z| < 1e-3.
    double c = 0.0, s = 0.0, term_c = 0.5, term_s = 1.0 / 6.0;
    for (int k = 0; k < 8; ++k) {
      c += term_c;
      s += term_s;
      term_c *= -z / ((2.0 * k + 3.0) * (2.0 * k + 4.0));
      term_s *= -z / ((2.0 * k + 4.0) * (2.0 * k + 5.0));
    }
    return {c, s};
  }
  if (z > 0.0) {
    const double q = std::sqrt(z);
    return {(1.0 - std::cos(q)) / z, (q - std::sin(q)) / (q * z)};
  }
  const double q = std::sqrt(-z);
  return {(std::cosh(q) - 1.0) / (-z), (std::sinh(q) - q) / (q * (-z))};
}

}  // namespace kepler

/// Two-body reduction: relative coordinate r = x_2 - x_1 and centre of mass.
struct KeplerElements {
  double reduced_mass = 0.0;
  double grav_param = 0.0;  // m1 + m2, governs the relative motion
  double coupling = 0.0;    // m1 m2
  double energy = 0.0;      // total energy of the two-body system
  double energy_rel = 0.0;  // energy of the relative motion (energy minus COM kinetic part)
  Vec angular_momentum;     // antisymmetric part r_i w_j - r_j w_i, flattened (d x d)
  double ang_mom_norm = 0.0;
  double eccentricity = 0.0;
  double semi_major = 0.0;  // 1/alpha; negative on the hyperbolic branch
  bool hyperbolic() const { return energy_rel > 0.0; }
};

struct TwoBodySplit {
  Vec com, com_vel, r, w;
};

inline TwoBodySplit split_two_body(const MassSystem& sys, const Vec& x, const Vec& v) {
  if (sys.n_bodies() != 2) throw DimensionError("two-body oracle needs exactly two bodies");
  check_shape(sys, x, "configuration");
  check_shape(sys, v, "velocity");
  const int d = sys.dim();
  const double m1 = sys.mass(0), m2 = sys.mass(1), M = m1 + m2;
  TwoBodySplit s;
  s.com = (m1 * x.head(d) + m2 * x.tail(d)) / M;
  s.com_vel = (m1 * v.head(d) + m2 * v.tail(d)) / M;
  s.r = x.tail(d) - x.head(d);
  s.w = v.tail(d) - v.head(d);
  return s;
}

inline void join_two_body(const MassSystem& sys, const Vec& com, const Vec& r, Vec& out) {
  const int d = sys.dim();
  const double m1 = sys.mass(0), m2 = sys.mass(1), M = m1 + m2;
  out.resize(2 * d);
  out.head(d) = com - (m2 / M) * r;
  out.tail(d) = com + (m1 / M) * r;
}

inline KeplerElements kepler_elements(const MassSystem& sys, const Vec& x, const Vec& v) {
  const auto s = split_two_body(sys, x, v);
  const double m1 = sys.mass(0), m2 = sys.mass(1);
  KeplerElements k;
  k.grav_param = m1 + m2;
  k.coupling = m1 * m2;
  k.reduced_mass = m1 * m2 / (m1 + m2);
  const double r = s.r.norm();
  k.energy_rel = 0.5 * k.reduced_mass * s.w.squaredNorm() - k.coupling / r;
  k.energy = k.energy_rel + 0.5 * k.grav_param * s.com_vel.squaredNorm();
  const int d = sys.dim();
  k.angular_momentum.resize(d * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) k.angular_momentum[i * d + j] = s.r[i] * s.w[j] - s.r[j] * s.w[i];
  k.ang_mom_norm = std::sqrt(0.5) * k.angular_momentum.norm();
  const double mu = k.grav_param;
  const Vec e = ((s.w.squaredNorm() - mu / r) * s.r - s.r.dot(s.w) * s.w) / mu;
  k.eccentricity = e.norm();
  const double alpha = 2.0 / r - s.w.squaredNorm() / mu;
  k.semi_major = alpha != 0.0 ? 1.0 / alpha : std::numeric_limits<double>::infinity();
  return k;
}

struct KeplerState {
  Configuration x;
  Velocity v;
  /// Set when the relative orbit reaches r = 0 at or before the requested time.
  bool singular = false;
  double t_collision = std::numeric_limits<double>::infinity();
  /// |residual| of the universal Kepler equation at the solution.
  double residual = 0.0;
};

namespace kepler {

struct Universal {
  double mu, r0, sigma0, alpha;  // sigma0 = <r0, w0>/sqrt(mu)

  double time_of(double chi) const {
    const double z = alpha * chi * chi;
    const auto [c, s] = stumpff(z);
    return (sigma0 * chi * chi * c + (1.0 - alpha * r0) * chi * chi * chi * s + r0 * chi) / std::sqrt(mu);
  }
  double radius(double chi) const {
    const double z = alpha * chi * chi;
    const auto [c, s] = stumpff(z);
    return chi * chi * c + sigma0 * chi * (1.0 - z * s) + r0 * (1.0 - z * c);
  }
  double dradius(double chi) const {
    const double z = alpha * chi * chi;
    const auto [c, s] = stumpff(z);
    return sigma0 * (1.0 - z * c) + (1.0 - alpha * r0) * chi * (1.0 - z * s);
  }
  // Solves time_of(chi) = t; time_of is increasing with derivative radius/sqrt(mu).
  double solve(double t, double* residual) const {
    if (t == 0.0) {
      if (residual) *residual = 0.0;
      return 0.0;
    }
    const double sgn = t > 0.0 ? 1.0 : -1.0;
    auto beyond = [&](double c) {
      const double tt = time_of(c);
      return !std::isfinite(tt) || sgn * (tt - t) > 0.0;
    };
    // Small first step keeps |alpha chi^2| moderate before doubling.
    double step = std::sqrt(mu) * std::abs(t) / r0;
    if (alpha != 0.0) step = std::min(step, 1.0 / std::sqrt(std::abs(alpha)));
    step = std::max(step, 1e-8);
    double lo = 0.0, hi = sgn * step;
    for (int k = 0; k < 400 && !beyond(hi); ++k) {
      lo = hi;
      hi *= 2.0;
    }
    if (sgn < 0.0) std::swap(lo, hi);
    double chi = 0.5 * (lo + hi);
    for (int it = 0; it < 400; ++it) {
      const double tt = time_of(chi);
      const bool over = !std::isfinite(tt) || tt > t;
      if (over) hi = chi;
      else lo = chi;
      const double dfdchi = radius(chi) / std::sqrt(mu);
      double next = std::isfinite(tt) && dfdchi > 0.0 ? chi - (tt - t) / dfdchi : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (next == chi || hi - lo <= 4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(chi))) {
        chi = next;
        break;
      }
      chi = next;
    }
    if (residual) *residual = std::abs(time_of(chi) - t) * std::sqrt(mu) / std::max(r0, std::abs(chi));
    return chi;
  }
};

}  // namespace kepler

/// Propagates two-body initial data by time t (either sign) through the
/// universal-variable Kepler solver. A rectilinear orbit that falls into
/// collision first is reported as singular.
inline KeplerState kepler_two_body(const MassSystem& sys, const Configuration& x0, const Velocity& v0, double t) {
  const auto s = split_two_body(sys, x0.vec(), v0.vec());
  const double mu = sys.mass(0) + sys.mass(1);
  const double r0 = s.r.norm();
  if (!(r0 > sys.collision_tol())) throw DomainError("initial configuration has a collision");
  const kepler::Universal u{mu, r0, s.r.dot(s.w) / std::sqrt(mu), 2.0 / r0 - s.w.squaredNorm() / mu};

  KeplerState out;
  const auto el = kepler_elements(sys, x0.vec(), v0.vec());
  const bool rectilinear = el.ang_mom_norm <= 1e-12 * r0 * std::max(1e-300, s.w.norm());
  if (rectilinear) {
    // Collision is a double root of radius(chi): the first minimum of the
    // radius in the direction of t.
    const double sgn = t >= 0.0 ? 1.0 : -1.0;
    const double chi_end = u.solve(t, nullptr);
    const double scale = std::sqrt(r0);
    double prev = 0.0, cur = 0.0;
    bool hit = false;
    if (sgn * u.dradius(0.0) >= 0.0 && u.alpha <= 0.0) {
      // Moving apart on an unbound branch: no collision ahead.
    } else {
      for (int k = 1; k <= 4000; ++k) {
        cur = sgn * scale * 1e-3 * k * k;
        if (sgn * (cur - chi_end) > 0.0) cur = chi_end;
        if (sgn * u.dradius(cur) >= 0.0 && sgn * u.dradius(prev) < 0.0) {
          hit = true;
          break;
        }
        if (cur == chi_end) break;
        prev = cur;
      }
    }
    if (hit) {
      double a = prev, b = cur;
      for (int it = 0; it < 200; ++it) {
        const double m = 0.5 * (a + b);
        if (sgn * u.dradius(m) < 0.0) a = m;
        else b = m;
      }
      const double chi_c = 0.5 * (a + b);
      if (u.radius(chi_c) <= 1e-6 * r0) {
        out.t_collision = u.time_of(chi_c);
        out.singular = true;
        const Vec nan = Vec::Constant(sys.size(), std::numeric_limits<double>::quiet_NaN());
        out.x = Configuration(nan);
        out.v = Velocity(nan);
        return out;
      }
    }
  }

  const double chi = u.solve(t, &out.residual);
  const double z = u.alpha * chi * chi;
  const auto [c, sf] = kepler::stumpff(z);
  const double f = 1.0 - chi * chi * c / r0;
  const double g = t - chi * chi * chi * sf / std::sqrt(mu);
  const Vec r = f * s.r + g * s.w;
  const double rn = r.norm();
  const double fdot = std::sqrt(mu) / (rn * r0) * (u.alpha * chi * chi * chi * sf - chi);
  const double gdot = 1.0 - chi * chi * c / rn;
  const Vec w = fdot * s.r + gdot * s.w;
  Vec x, v;
  join_two_body(sys, Vec(s.com + t * s.com_vel), r, x);
  join_two_body(sys, s.com_vel, w, v);
  out.x = Configuration(x);
  out.v = Velocity(v);
  return out;
}

struct Asymptotes {
  Vec a_minus, a_plus;  // limits of x(t)/|t| as t -> -inf and t -> +inf
  double speed = 0.0;   // sqrt(2h) in the mass metric
  /// Periapsis distance of the relative orbit and time from the input state to it.
  double periapsis = 0.0;
  double t_periapsis = 0.0;
};

/// Exact asymptotic velocities of a hyperbolic two-body motion.
inline Asymptotes kepler_asymptotes(const MassSystem& sys, const Configuration& x0, const Velocity& v0) {
  const auto s = split_two_body(sys, x0.vec(), v0.vec());
  const auto el = kepler_elements(sys, x0.vec(), v0.vec());
  if (!el.hyperbolic()) throw DomainError("relative orbit is not hyperbolic");
  const double mu = el.grav_param;
  const double r0 = s.r.norm();
  if (el.ang_mom_norm <= 1e-12 * r0 * s.w.norm()) throw DomainError("rectilinear orbit has no scattering asymptote");
  const Vec evec = ((s.w.squaredNorm() - mu / r0) * s.r - s.r.dot(s.w) * s.w) / mu;
  const double e = evec.norm();
  const Vec ehat = evec / e;
  Vec p = s.w - s.w.dot(ehat) * ehat;
  p.normalize();
  const double vinf = std::sqrt(s.w.squaredNorm() - 2.0 * mu / r0);
  const double root = std::sqrt(e * e - 1.0);
  const Vec out_dir = (-ehat + root * p) / e;
  const Vec in_dir = (ehat + root * p) / e;  // direction of motion in the far past
  const int d = sys.dim();
  const double m1 = sys.mass(0), m2 = sys.mass(1), M = m1 + m2;
  Asymptotes a;
  a.a_plus.resize(2 * d);
  a.a_minus.resize(2 * d);
  const Vec wp = vinf * out_dir, wm = -vinf * in_dir;
  a.a_plus.head(d) = s.com_vel - (m2 / M) * wp;
  a.a_plus.tail(d) = s.com_vel + (m1 / M) * wp;
  a.a_minus.head(d) = -s.com_vel - (m2 / M) * wm;
  a.a_minus.tail(d) = -s.com_vel + (m1 / M) * wm;
  a.speed = std::sqrt(2.0 * el.energy);
  // Periapsis from the conic and hyperbolic anomaly.
  const double sma = -mu / (s.w.squaredNorm() - 2.0 * mu / r0);  // negative
  a.periapsis = -sma * (e - 1.0);
  const double coshF = (1.0 - r0 / sma) / e;
  const double F = std::acosh(std::max(1.0, coshF));
  const double mean = e * std::sinh(F) - F;
  const double n = std::sqrt(mu / (-sma * sma * sma));
  const double dt = mean / n;
  a.t_periapsis = s.r.dot(s.w) < 0.0 ? dt : -dt;
  return a;
}

// ---------------------------------------------------------------------------
// Radial actions

struct RadialActionOptions {
  double tol = 1e-14;
  int max_depth = 20;
};

/// JM length of the radial segment between two collinear, same-side two-body
/// configurations with a common centre of mass, at energy h >= 0.
inline double radial_two_body_action(const MassSystem& sys, const Configuration& x, const Configuration& y, double h,
                                     const RadialActionOptions& opt = {}) {
  if (sys.n_bodies() != 2) throw DimensionError("radial oracle needs exactly two bodies");
  if (h < 0.0) throw DomainError("radial oracle needs h >= 0");
  const Vec zero = Vec::Zero(sys.size());
  const auto sx = split_two_body(sys, x.vec(), zero);
  const auto sy = split_two_body(sys, y.vec(), zero);
  const double rx = sx.r.norm(), ry = sy.r.norm();
  const double scale = std::max({1.0, rx, ry});
  if ((sx.com - sy.com).norm() > 1e-12 * scale) throw BracketError("radial branch needs a common centre of mass");
  // A collision endpoint (r = 0) is allowed; it lies on every ray.
  const double tol = sys.collision_tol();
  if (rx > tol && ry > tol && (sx.r / rx - sy.r / ry).norm() > 1e-12)
    throw BracketError("radial branch needs collinear same-side endpoints");
  const double m1 = sys.mass(0), m2 = sys.mass(1);
  const double kappa = m1 * m2, mred = kappa / (m1 + m2);
  const double lo = std::min(rx, ry), hi = std::max(rx, ry);
  if (hi == lo) return 0.0;
  // r = rho^2 removes the r^{-1/2} endpoint singularity at collision.
  auto f = [&](double rho) { return 2.0 * std::sqrt(2.0 * (h * rho * rho + kappa)); };
  double err = 0.0;
  const double val = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, std::sqrt(lo), std::sqrt(hi),
                                                                                   opt.max_depth, opt.tol, &err);
  return std::sqrt(mred) * val;
}

/// Closed form of the same integral for unit reduced mass, used to validate the quadrature.
inline double radial_action_closed_form(double r0, double r1, double h, double kappa) {
  auto F = [&](double r) {
    if (h == 0.0) return 2.0 * std::sqrt(2.0 * r * kappa);
    return std::sqrt(2.0) * (std::sqrt(r * (h * r + kappa)) + kappa / std::sqrt(h) * std::asinh(std::sqrt(h * r / kappa)));
  };
  return std::abs(F(r1) - F(r0));
}

// ---------------------------------------------------------------------------
// Two-body action potentials from Lambert arcs

namespace kepler {

struct LambertArc {
  bool ok = false;
  double chi = 0.0;      // universal anomaly swept along the arc
  double energy = 0.0;   // specific relative energy w^2/2 - mu/r
};

// Zero-revolution Lambert arc through angle dtheta in (0, 2 pi) in time t.
inline LambertArc lambert(double r1, double r2, double dtheta, double t, double mu) {
  LambertArc arc;
  const double cos_dt = std::cos(dtheta);
  if (1.0 - cos_dt < 1e-14) return arc;
  const double A = std::sin(dtheta) * std::sqrt(r1 * r2 / (1.0 - cos_dt));
  auto yfun = [&](double z) {
    const auto [c, s] = stumpff(z);
    return r1 + r2 + A * (z * s - 1.0) / std::sqrt(c);
  };
  auto tof = [&](double z, double* yv) {
    const double y = yfun(z);
    if (yv) *yv = y;
    if (y < 0.0) return -1.0;
    const auto [c, s] = stumpff(z);
    const double chi = std::sqrt(y / c);
    return (chi * chi * chi * s + A * std::sqrt(y)) / std::sqrt(mu);
  };
  const double four_pi2 = 4.0 * std::numbers::pi * std::numbers::pi;
  double z_hi = four_pi2 * (1.0 - 1e-12);
  if (tof(z_hi, nullptr) < t) return arc;
  double z_lo = -4.0;
  while (tof(z_lo, nullptr) > t) {
    z_lo *= 2.0;
    if (z_lo < -1e4) return arc;
  }
  for (int it = 0; it < 300; ++it) {
    const double m = 0.5 * (z_lo + z_hi);
    if (tof(m, nullptr) < t) z_lo = m;
    else z_hi = m;
    if (z_hi - z_lo <= 1e-15 * std::max(1.0, std::abs(m))) break;
  }
  const double z = 0.5 * (z_lo + z_hi);
  double y = 0.0;
  tof(z, &y);
  if (!(y > 0.0)) return arc;
  const auto [c, s] = stumpff(z);
  arc.chi = std::sqrt(y / c);
  // Semi-major axis from alpha = z / chi^2.
  const double alpha = z / (arc.chi * arc.chi);
  arc.energy = -0.5 * mu * alpha;
  arc.ok = true;
  return arc;
}

}  // namespace kepler

/// Fixed-time two-body action potential from zero-revolution Lambert arcs in
/// both senses of rotation (planar endpoints).
inline double kepler_fixed_time_phi(const MassSystem& sys, const Configuration& x, const Configuration& y, double tau) {
  if (sys.n_bodies() != 2) throw DimensionError("Lambert oracle needs exactly two bodies");
  if (!(tau > 0.0)) throw DomainError("time must be positive");
  const Vec zero = Vec::Zero(sys.size());
  const auto sx = split_two_body(sys, x.vec(), zero);
  const auto sy = split_two_body(sys, y.vec(), zero);
  const double m1 = sys.mass(0), m2 = sys.mass(1), M = m1 + m2;
  const double kappa = m1 * m2, mred = kappa / M;
  const double r1 = sx.r.norm(), r2 = sy.r.norm();
  const double c = std::clamp(sx.r.dot(sy.r) / (r1 * r2), -1.0, 1.0);
  const double theta = std::acos(c);
  const double com = 0.5 * M * (sy.com - sx.com).squaredNorm() / tau;
  double best = std::numeric_limits<double>::infinity();
  for (double dtheta : {theta, 2.0 * std::numbers::pi - theta}) {
    const auto arc = kepler::lambert(r1, r2, dtheta, tau, M);
    if (!arc.ok) continue;
    // Action of the relative arc: E tau + 2 int U dt, with int dt/r = chi/sqrt(mu).
    const double e_rel = mred * arc.energy;
    best = std::min(best, e_rel * tau + 2.0 * kappa * arc.chi / std::sqrt(M));
  }
  return com + best;
}

struct KeplerFreeTime {
  double value = std::numeric_limits<double>::infinity();
  double tau = 0.0;
};

/// Free-time two-body potential inf_tau phi(x, y, tau) + h tau for h > 0.
inline KeplerFreeTime kepler_free_time_phi(const MassSystem& sys, const Configuration& x, const Configuration& y,
                                           double h) {
  if (!(h > 0.0)) throw DomainError("Lambert free-time oracle needs h > 0");
  const double dist = mass_norm(sys, Vec(y.vec() - x.vec()));
  const double tau0 = std::max(dist, 1e-3) / std::sqrt(2.0 * h);
  auto f = [&](double lt) { return kepler_fixed_time_phi(sys, x, y, std::exp(lt)) + h * std::exp(lt); };
  // Coarse log scan, then Brent around the best grid point.
  const int n = 161;
  const double lo = std::log(tau0) - 6.0, hi = std::log(tau0) + 4.0;
  int kb = 0;
  double fb = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n; ++k) {
    const double v = f(lo + (hi - lo) * k / (n - 1));
    if (v < fb) {
      fb = v;
      kb = k;
    }
  }
  const double step = (hi - lo) / (n - 1);
  const double a = lo + step * std::max(0, kb - 1), b = lo + step * std::min(n - 1, kb + 1);
  std::uintmax_t iters = 200;
  const auto r = boost::math::tools::brent_find_minima(f, a, b, 52, iters);
  KeplerFreeTime out;
  out.value = r.second;
  out.tau = std::exp(r.first);
  return out;
}

// ---------------------------------------------------------------------------
// Brute-force transcription

struct BruteForceOptions {
  /// Base grid is node_factor times the default grid; two doublings follow.
  int node_factor = 4;
  int multistarts = 32;
  int tau_scan = 16;
  /// Maximum number of inner Newton solves before the result is flagged partial.
  int budget = 4000;
  std::uint64_t seed = 0;
};

struct BruteForceResult {
  double value = std::numeric_limits<double>::infinity();
  /// Spread of the multistart values plus the last Richardson correction.
  double dispersion = 0.0;
  double tau = 0.0;
  std::vector<double> level_values;  // raw values at M, 2M, 4M
  int solves = 0;
  bool partial = false;
};

/// Dense multistart transcription of phi(x, y, tau) + h tau (tau > 0) or of
/// phi_h(x, y) (tau <= 0), extrapolated over three grid levels.
inline BruteForceResult brute_force_phi(const MassSystem& sys, const Configuration& x, const Configuration& y,
                                        double tau, double h, const BruteForceOptions& bopt = {}) {
  if (sys.n_bodies() > 3 || sys.dim() != 2) throw DimensionError("brute-force oracle is limited to N <= 3, d = 2");
  if (!is_collision_free(sys, x) || !is_collision_free(sys, y)) throw DomainError("endpoint has a collision");
  const bool free_time = !(tau > 0.0);
  if (free_time && !(h > 0.0)) throw DomainError("free-time brute force needs h > 0");
  BruteForceResult out;
  const Vec xv = x.vec(), yv = y.vec();
  const double dist = mass_norm(sys, Vec(yv - xv));
  if (free_time && dist == 0.0) {
    out.value = 0.0;
    return out;
  }
  const double tau_ref = free_time ? dist / std::sqrt(2.0 * h) : tau;
  MinimizeOptions base;
  base.refine = false;
  base.bowed_starts = 0;
  const int M = bopt.node_factor * detail::grid_size(sys, xv, yv, tau_ref, base);

  std::mt19937_64 rng(bopt.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int d = sys.dim(), N = sys.n_bodies();
  double bow = std::min(dist / std::sqrt(sys.total_mass()), 1.0 + std::min(xv.norm(), yv.norm()));
  if (bow < 1e-3 * (1.0 + xv.norm())) bow = separation_range(sys, xv).second;
  const double reject = base.reject_factor * sys.collision_tol();

  auto budget_left = [&] { return out.solves < bopt.budget; };
  auto solve = [&](Mat& X, double t) {
    ++out.solves;
    X.col(0) = xv;
    X.col(X.cols() - 1) = yv;
    const auto r = detail::newton_minimize(sys, X, t, h, base);
    if (!std::isfinite(r.value) || detail::interior_min_separation(sys, X) < reject)
      return std::numeric_limits<double>::infinity();
    return r.value;
  };
  // Random multistart at a given time; returns the best nodes and records the spread.
  auto multistart = [&](double t, Mat& best, double& spread) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int s = 0; s < bopt.multistarts && budget_left(); ++s) {
      Mat X = Path::chord(xv, yv, t, M).nodes;
      if (s > 0) {
        const int body = static_cast<int>(unif(rng) * N) % N;
        Vec dir(d);
        for (int i = 0; i < d; ++i) dir[i] = gauss(rng);
        dir.normalize();
        const double amp = bow * unif(rng);
        const int harmonic = 1 + static_cast<int>(unif(rng) * 2.0);
        for (int k = 1; k < M; ++k)
          X.col(k).segment(body * d, d) += amp * std::sin(harmonic * M_PI * k / M) * dir;
      }
      const double v = solve(X, t);
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      if (v <= lo) best = X;
    }
    spread = std::isfinite(lo) ? hi - lo : 0.0;
    return lo;
  };

  double spread = 0.0;
  Mat best;
  double t_star = tau_ref;
  if (!free_time) {
    multistart(tau, best, spread);
  } else {
    // Log scan of transfer times with warm starts, then Brent around the best point.
    Mat warm;
    multistart(tau_ref, warm, spread);
    if (warm.size() == 0) {
      out.partial = true;
      return out;
    }
    std::vector<double> grid(bopt.tau_scan), vals(bopt.tau_scan);
    std::vector<Mat> nodes(bopt.tau_scan);
    const double lo = std::log(0.25 * tau_ref), hi = std::log(8.0 * tau_ref);
    int kb = 0;
    for (int k = 0; k < bopt.tau_scan; ++k) {
      grid[k] = std::exp(lo + (hi - lo) * k / (bopt.tau_scan - 1));
      nodes[k] = warm;
      vals[k] = budget_left() ? solve(nodes[k], grid[k]) : std::numeric_limits<double>::infinity();
      if (std::isfinite(vals[k])) warm = nodes[k];
      if (vals[k] < vals[kb]) kb = k;
    }
    const double a = std::log(grid[std::max(0, kb - 1)]), b = std::log(grid[std::min(bopt.tau_scan - 1, kb + 1)]);
    Mat cur = nodes[kb];
    auto f = [&](double lt) {
      if (!budget_left()) return std::numeric_limits<double>::infinity();
      Mat X = cur;
      const double v = solve(X, std::exp(lt));
      if (std::isfinite(v)) cur = X;
      return v;
    };
    std::uintmax_t iters = 100;
    const auto r = boost::math::tools::brent_find_minima(f, a, b, 40, iters);
    t_star = std::exp(r.first);
    // Multistart again at the optimal time; keep whichever of it and the
    // continued path is lower.
    double spread_star = 0.0;
    Mat ms;
    const double vm = multistart(t_star, ms, spread_star);
    Mat X = cur;
    const double vw = budget_left() ? solve(X, t_star) : std::numeric_limits<double>::infinity();
    if (std::isfinite(vw) && (!(vm < vw) || ms.size() == 0)) best = X;
    else best = ms;
    spread = std::max(spread, spread_star);
  }
  if (best.size() == 0) {
    out.partial = true;
    return out;
  }
  out.tau = t_star;
  // Three grid levels and Romberg extrapolation.
  Mat X = best;
  for (int level = 0; level < 3; ++level) {
    if (level > 0) X = detail::refine_nodes(X);
    if (!budget_left()) {
      out.partial = true;
      break;
    }
    out.level_values.push_back(solve(X, t_star));
  }
  const auto& v = out.level_values;
  if (v.size() == 3) {
    const double r1 = (4.0 * v[1] - v[0]) / 3.0, r2 = (4.0 * v[2] - v[1]) / 3.0;
    out.value = (16.0 * r2 - r1) / 15.0;
    out.dispersion = spread + std::abs(out.value - r2);
  } else if (!v.empty()) {
    out.value = v.back();
    out.dispersion = spread;
  }
  if (out.solves >= bopt.budget) out.partial = true;
  return out;
}

}  // namespace horokit
