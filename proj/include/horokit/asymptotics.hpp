#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "horokit/core.hpp"
#include "horokit/errors.hpp"
#include "horokit/integrator.hpp"

namespace horokit {

/// Least-squares fit of x(t) ~ t a - log(t) c + d over a window of |t|.
struct AsymptoticFit {
  Velocity direction;
  Vec log_coeff;
  Vec offset;
  std::pair<double, double> window{0.0, 0.0};
  double rms_residual = 0.0;
  double ratio_L = 0.0;
  double condition = 0.0;
  std::size_t samples = 0;
};

struct FitOptions {
  std::size_t samples = 200;
  double max_condition = 1e10;
  // Multiple of the start-time dynamical time the window must clear.
  double char_time_factor = 10.0;
  // Fraction of the window (by log time) used for the R/r tail median.
  double tail_fraction = 0.2;
};

namespace detail {

inline std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t k = 0; k < n; ++k)
    out[k] = std::exp(a + (b - a) * static_cast<double>(k) / static_cast<double>(n - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

// Signed time for a window position s = |t| on either branch.
inline double branch_time(const Trajectory& traj, double s) { return traj.backward() ? -s : s; }

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

// Slope of log(y) against log(t).
inline double loglog_slope(const std::vector<double>& t, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double lx = std::log(t[k]), ly = std::log(y[k]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace detail

/// Default fit window: the last decade of the integrated branch, in |t|.
inline std::pair<double, double> default_window(const Trajectory& traj) {
  const double reach = traj.backward() ? -traj.t_begin() : traj.t_end();
  return {reach / 10.0, reach};
}

inline AsymptoticFit limit_shape_fit(const MassSystem& sys, const Trajectory& traj, std::pair<double, double> window,
                                     const FitOptions& opt = {}) {
  if (traj.empty()) throw DomainError("empty trajectory");
  const auto [lo, hi] = window;
  if (!(lo > 0.0) || !(hi > lo)) throw DomainError("fit window must satisfy 0 < t_lo < t_hi");
  if (opt.samples < 3) throw DomainError("fit needs at least three samples");
  const double reach = traj.backward() ? -traj.t_begin() : traj.t_end();
  if (hi > reach * (1 + 1e-12)) throw DomainError("trajectory does not extend past the fit window");
  const double t0 = std::abs(traj.t_start());
  const double char_time = dynamical_time(sys, traj.position(traj.backward() ? traj.size() - 1 : 0));
  if (lo - t0 < opt.char_time_factor * char_time)
    throw DomainError("fit window starts within " + std::to_string(opt.char_time_factor) +
                      " characteristic times of the initial state");

  const auto ts = detail::log_spaced(lo, hi, opt.samples);
  const auto m = static_cast<Eigen::Index>(ts.size());
  const Eigen::Index n = sys.size();

  // Columns scaled to unit max so the condition number reflects the window, not units.
  Mat A(m, 3);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double t = ts[static_cast<std::size_t>(j)];
    A(j, 0) = t / hi;
    A(j, 1) = -std::log(t) / std::log(hi);
    A(j, 2) = 1.0;
  }
  Mat Y(m, n);
  std::vector<double> ratio(ts.size());
  for (Eigen::Index j = 0; j < m; ++j) {
    const Vec x = traj.position_at(detail::branch_time(traj, ts[static_cast<std::size_t>(j)]));
    const auto [rmin, rmax] = separation_range(sys, x);
    if (!(rmin > sys.collision_tol())) throw DomainError("collision inside the fit window");
    Y.row(j) = x.transpose();
    ratio[static_cast<std::size_t>(j)] = rmax / rmin;
  }

  Eigen::JacobiSVD<Mat> svd(A);
  const auto& sv = svd.singularValues();
  const double cond = sv[0] / sv[sv.size() - 1];
  if (!(cond <= opt.max_condition))
    throw ConditioningError("fit design condition number " + std::to_string(cond) + " exceeds limit");

  const Mat coef = A.colPivHouseholderQr().solve(Y);
  AsymptoticFit fit;
  fit.direction = Velocity(Vec(coef.row(0).transpose() / hi));
  fit.log_coeff = coef.row(1).transpose() / std::log(hi);
  fit.offset = coef.row(2).transpose();
  fit.window = window;
  fit.condition = cond;
  fit.samples = ts.size();
  fit.rms_residual = std::sqrt((A * coef - Y).squaredNorm() / static_cast<double>(m * n));

  const double tail_lo = std::exp(std::log(hi) - opt.tail_fraction * (std::log(hi) - std::log(lo)));
  std::vector<double> tail;
  for (std::size_t j = 0; j < ts.size(); ++j)
    if (ts[j] >= tail_lo) tail.push_back(ratio[j]);
  fit.ratio_L = detail::median(tail);
  return fit;
}

inline AsymptoticFit limit_shape_fit(const MassSystem& sys, const Trajectory& traj) {
  return limit_shape_fit(sys, traj, default_window(traj));
}

enum class ExpansionLabel {
  Hyperbolic,
  PartiallyHyperbolic,
  CompletelyParabolic,
  NotExpansive,
  SuperhyperbolicSuspect,
  Undetermined
};

inline const char* to_string(ExpansionLabel l) {
  switch (l) {
    case ExpansionLabel::Hyperbolic: return "hyperbolic";
    case ExpansionLabel::PartiallyHyperbolic: return "partially_hyperbolic";
    case ExpansionLabel::CompletelyParabolic: return "completely_parabolic";
    case ExpansionLabel::NotExpansive: return "not_expansive";
    case ExpansionLabel::SuperhyperbolicSuspect: return "superhyperbolic_suspect";
    case ExpansionLabel::Undetermined: return "undetermined";
  }
  return "undetermined";
}

struct ClassifyOptions {
  double hyperbolic_lo = 0.9;
  double hyperbolic_hi = 1.1;
  double parabolic_center = 2.0 / 3.0;
  double parabolic_tol = 0.07;
  // Pair exponents below this mean a bound (non-separating) pair.
  double bound_exponent = 1.0 / 3.0;
  // U must fall at least like t^{potential_slope} over the decade.
  double potential_slope = -0.5;
  double superhyperbolic_factor = 3.0;
  std::size_t samples = 200;
};

struct ExpansionEvidence {
  double t_lo = 0.0, t_hi = 0.0;
  double potential_exponent = 0.0;
  double potential_start = 0.0, potential_end = 0.0;
  double r_over_t_end = 0.0, r_over_t_median = 0.0;
  Termination termination = Termination::ReachedTmax;
  std::string note;
};

struct ExpansionClass {
  ExpansionLabel label = ExpansionLabel::Undetermined;
  // Row-major over pairs i < j.
  std::vector<double> pair_exponents;
  std::vector<std::pair<int, int>> pairs;
  ExpansionEvidence evidence;
};

inline ExpansionClass classify_expansion(const MassSystem& sys, const Trajectory& traj, const ClassifyOptions& opt = {}) {
  ExpansionClass out;
  out.evidence.termination = traj.terminated_reason();
  if (traj.empty() || traj.terminated_reason() != Termination::ReachedTmax) {
    out.evidence.note = std::string("trajectory stopped early: ") + to_string(traj.terminated_reason());
    return out;
  }
  const auto [lo, hi] = default_window(traj);
  if (!(lo > 0.0)) {
    out.evidence.note = "trajectory too short to classify";
    return out;
  }
  out.evidence.t_lo = lo;
  out.evidence.t_hi = hi;
  const auto ts = detail::log_spaced(lo, hi, std::max<std::size_t>(opt.samples, 3));
  const int nb = sys.n_bodies();
  for (int i = 0; i < nb; ++i)
    for (int j = i + 1; j < nb; ++j) out.pairs.emplace_back(i, j);

  std::vector<std::vector<double>> r(out.pairs.size(), std::vector<double>(ts.size()));
  std::vector<double> u(ts.size()), r_over_t(ts.size());
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const Vec x = traj.position_at(detail::branch_time(traj, ts[k]));
    double rmax = 0.0;
    for (std::size_t p = 0; p < out.pairs.size(); ++p) {
      r[p][k] = pair_distance(sys, x, out.pairs[p].first, out.pairs[p].second);
      rmax = std::max(rmax, r[p][k]);
    }
    u[k] = potential(sys, x);
    r_over_t[k] = rmax / ts[k];
  }
  for (const auto& rp : r) out.pair_exponents.push_back(detail::loglog_slope(ts, rp));
  out.evidence.potential_exponent = detail::loglog_slope(ts, u);
  out.evidence.potential_start = u.front();
  out.evidence.potential_end = u.back();
  out.evidence.r_over_t_end = r_over_t.back();
  out.evidence.r_over_t_median = detail::median(r_over_t);

  const double min_exp = *std::min_element(out.pair_exponents.begin(), out.pair_exponents.end());
  if (out.evidence.potential_exponent > opt.potential_slope || min_exp < opt.bound_exponent ||
      !(u.back() < u.front())) {
    out.label = ExpansionLabel::NotExpansive;
    out.evidence.note = "potential does not decay along the tail";
    return out;
  }
  if (out.evidence.r_over_t_end > opt.superhyperbolic_factor * out.evidence.r_over_t_median) {
    out.label = ExpansionLabel::SuperhyperbolicSuspect;
    out.evidence.note = "R/t grows past the threshold over the tail";
    return out;
  }
  std::size_t n_hyp = 0, n_par = 0;
  for (double e : out.pair_exponents) {
    if (e >= opt.hyperbolic_lo && e <= opt.hyperbolic_hi)
      ++n_hyp;
    else if (std::abs(e - opt.parabolic_center) <= opt.parabolic_tol)
      ++n_par;
  }
  const std::size_t np = out.pair_exponents.size();
  if (n_hyp == np)
    out.label = ExpansionLabel::Hyperbolic;
  else if (n_par == np)
    out.label = ExpansionLabel::CompletelyParabolic;
  else if (n_hyp + n_par == np)
    out.label = ExpansionLabel::PartiallyHyperbolic;
  else
    out.evidence.note = "pair exponents fall outside both bands";
  return out;
}

/// Forward and backward limit shapes of the motion through (x, v).
struct LimitShapeResult {
  Velocity a_minus, a_plus;
  double h = 0.0;
  double norm_minus = 0.0, norm_plus = 0.0;
  Vec com_minus, com_plus;
  ExpansionClass class_minus, class_plus;
  AsymptoticFit fit_minus, fit_plus;
  bool fit_minus_ok = false, fit_plus_ok = false;
  std::string note;

  bool hyperbolic_minus() const { return class_minus.label == ExpansionLabel::Hyperbolic; }
  bool hyperbolic_plus() const { return class_plus.label == ExpansionLabel::Hyperbolic; }
  bool complete() const { return fit_minus_ok && fit_plus_ok && hyperbolic_minus() && hyperbolic_plus(); }
  double com_identity_error() const {
    return (fit_minus_ok && fit_plus_ok) ? (com_minus + com_plus).norm() : std::numeric_limits<double>::quiet_NaN();
  }
};

struct LimitShapeOptions {
  IntegratorOptions integrator;
  FitOptions fit;
  ClassifyOptions classify;
};

inline LimitShapeResult limit_shape_map(const MassSystem& sys, const Configuration& x, const Velocity& v, double t_max,
                                        const LimitShapeOptions& opt = {}) {
  check_shape(sys, x.vec(), "configuration");
  check_shape(sys, v.vec(), "velocity");
  if (!(t_max > 0.0)) throw DomainError("t_max must be positive");
  LimitShapeResult res;
  res.h = energy(sys, x, v);
  if (!(res.h > 0.0)) throw DomainError("limit shape map needs positive energy");

  auto side = [&](double t_end, Velocity& a, double& norm, Vec& com, ExpansionClass& cls, AsymptoticFit& fit,
                  bool& ok, const char* name) {
    const Trajectory traj = integrate(sys, x, v, {0.0, t_end}, opt.integrator);
    cls = classify_expansion(sys, traj, opt.classify);
    try {
      fit = limit_shape_fit(sys, traj, default_window(traj), opt.fit);
      a = fit.direction;
      norm = mass_norm(sys, a.vec());
      com = center_of_mass(sys, a.vec());
      ok = true;
    } catch (const Error& e) {
      res.note += std::string(name) + " fit failed: " + e.what() + "; ";
    }
    if (cls.label == ExpansionLabel::Undetermined)
      res.note += std::string(name) + " branch is undetermined (" + to_string(cls.evidence.termination) +
                  (cls.evidence.note.empty() ? "" : ", " + cls.evidence.note) + "); ";
    else if (cls.label != ExpansionLabel::Hyperbolic)
      res.note += std::string(name) + " branch is " + to_string(cls.label) + "; ";
  };
  side(-t_max, res.a_minus, res.norm_minus, res.com_minus, res.class_minus, res.fit_minus, res.fit_minus_ok, "past");
  side(t_max, res.a_plus, res.norm_plus, res.com_plus, res.class_plus, res.fit_plus, res.fit_plus_ok, "future");
  return res;
}

/// Samples on the section of perihelia: <x, v> = 0, G(x) = G(v) = 0, energy h.
struct PerihelionSampler {
  std::size_t count = 0;
  std::uint64_t seed = 0;
  // Mass norm of the sampled configurations.
  double scale = 1.0;
  // Taken verbatim (after the random ones); they are validated per row.
  std::vector<PhaseState> explicit_samples;
};

inline std::vector<PhaseState> draw_perihelia(const MassSystem& sys, const PerihelionSampler& spec, double h) {
  if (!(h > 0.0)) throw DomainError("perihelia scan needs positive energy");
  if (!(spec.scale > 0.0)) throw DomainError("sampler scale must be positive");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const Eigen::Index n = sys.size();
  std::vector<PhaseState> out;
  out.reserve(spec.count + spec.explicit_samples.size());
  for (std::size_t k = 0; k < spec.count; ++k) {
    Vec x(n), v(n);
    do {
      for (Eigen::Index i = 0; i < n; ++i) x[i] = g(rng);
      x = remove_center_of_mass(sys, x);
      x *= spec.scale / mass_norm(sys, x);
    } while (min_separation(sys, x) < 0.05 * spec.scale);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
    v = remove_center_of_mass(sys, v);
    v -= (mass_inner(sys, x, v) / mass_inner(sys, x, x)) * x;
    const double kinetic = h + potential(sys, x);
    v *= std::sqrt(2.0 * kinetic) / mass_norm(sys, v);
    out.push_back({Configuration(x), Velocity(v)});
  }
  for (const auto& s : spec.explicit_samples) out.push_back(s);
  return out;
}

struct ScanRow {
  std::size_t id = 0;
  Vec x, v;
  Vec a_minus, a_plus;
  ExpansionLabel class_minus = ExpansionLabel::Undetermined;
  ExpansionLabel class_plus = ExpansionLabel::Undetermined;
  double norm_minus = std::numeric_limits<double>::quiet_NaN();
  double norm_plus = std::numeric_limits<double>::quiet_NaN();
  double com_identity = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
  std::string message;
};

struct ScanOptions {
  LimitShapeOptions limit;
  unsigned workers = 1;
  // Section membership tolerance for explicit samples.
  double section_tol = 1e-9;
};

inline ScanRow scan_one(const MassSystem& sys, std::size_t id, const PhaseState& s, double h, double t_max,
                        const ScanOptions& opt) {
  ScanRow row;
  row.id = id;
  row.x = s.x.vec();
  row.v = s.v.vec();
  try {
    check_shape(sys, row.x, "sample configuration");
    check_shape(sys, row.v, "sample velocity");
    const double scale = (1.0 + mass_norm(sys, row.x)) * (1.0 + mass_norm(sys, row.v));
    if (std::abs(mass_inner(sys, row.x, row.v)) > opt.section_tol * scale)
      throw DomainError("sample is not on the section <x, v> = 0");
    if (center_of_mass(sys, row.x).norm() > opt.section_tol * scale ||
        center_of_mass(sys, row.v).norm() > opt.section_tol * scale)
      throw DomainError("sample centre of mass or momentum is nonzero");
    if (std::abs(energy(sys, row.x, row.v) - h) > opt.section_tol * (1.0 + std::abs(h)) * scale)
      throw InconsistencyError("sample energy differs from the scan energy");
    const auto res = limit_shape_map(sys, s.x, s.v, t_max, opt.limit);
    row.class_minus = res.class_minus.label;
    row.class_plus = res.class_plus.label;
    if (res.fit_minus_ok) {
      row.a_minus = res.a_minus.vec();
      row.norm_minus = res.norm_minus;
    }
    if (res.fit_plus_ok) {
      row.a_plus = res.a_plus.vec();
      row.norm_plus = res.norm_plus;
    }
    row.com_identity = res.com_identity_error();
    row.ok = res.complete();
    row.message = res.note;
  } catch (const Error& e) {
    row.message = e.what();
  }
  return row;
}

/// Runs the limit shape map on every sample; a failing sample is recorded and the scan goes on.
inline std::vector<ScanRow> perihelia_scan(const MassSystem& sys, const PerihelionSampler& spec, double h,
                                           double t_max, const ScanOptions& opt = {}) {
  const auto samples = draw_perihelia(sys, spec, h);
  std::vector<ScanRow> rows(samples.size());
  if (samples.empty()) return rows;
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < samples.size();) rows[k] = scan_one(sys, k, samples[k], h, t_max, opt);
  };
  const unsigned nw = std::max(1u, std::min<unsigned>(opt.workers, static_cast<unsigned>(samples.size())));
  if (nw == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < nw; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return rows;
}

}  // namespace horokit
