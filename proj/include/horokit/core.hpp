#pragma once

// Configuration-space primitives for the Newtonian N-body problem: the mass
// metric, the potential U = sum_{i<j} m_i m_j / r_ij and its derivatives,
// energy, inertia and shape statistics. G = 1 throughout.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "horokit/errors.hpp"

namespace horokit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInfinitePotential = std::numeric_limits<double>::infinity();

inline bool is_infinite_marker(double u) { return std::isinf(u); }

/// A point of E^N stored body-major (body i occupies entries [i*d, (i+1)*d)).
/// The tag keeps positions and velocities from being mixed up in public APIs.
template <class Tag>
class PhaseVector {
 public:
  PhaseVector() = default;
  explicit PhaseVector(Vec v) : v_(std::move(v)) {}

  static PhaseVector zeros(Eigen::Index n) { return PhaseVector(Vec::Zero(n)); }

  const Vec& vec() const { return v_; }
  Vec& vec() { return v_; }
  Eigen::Index size() const { return v_.size(); }
  double operator[](Eigen::Index k) const { return v_[k]; }
  double& operator[](Eigen::Index k) { return v_[k]; }

  auto body(int i, int dim) const { return v_.segment(static_cast<Eigen::Index>(i) * dim, dim); }
  auto body(int i, int dim) { return v_.segment(static_cast<Eigen::Index>(i) * dim, dim); }

  bool all_finite() const { return v_.allFinite(); }

  PhaseVector& operator+=(const PhaseVector& o) {
    v_ += o.v_;
    return *this;
  }
  PhaseVector& operator-=(const PhaseVector& o) {
    v_ -= o.v_;
    return *this;
  }
  PhaseVector& operator*=(double s) {
    v_ *= s;
    return *this;
  }
  friend PhaseVector operator+(PhaseVector a, const PhaseVector& b) { return a += b; }
  friend PhaseVector operator-(PhaseVector a, const PhaseVector& b) { return a -= b; }
  friend PhaseVector operator-(PhaseVector a) {
    a.v_ = -a.v_;
    return a;
  }
  friend PhaseVector operator*(double s, PhaseVector a) { return a *= s; }
  friend PhaseVector operator*(PhaseVector a, double s) { return a *= s; }

 private:
  Vec v_;
};

struct ConfigurationTag;
struct VelocityTag;
using Configuration = PhaseVector<ConfigurationTag>;
using Velocity = PhaseVector<VelocityTag>;

/// Masses, space dimension and the collision tolerance that defines the
/// numerical collision-free set.
class MassSystem {
 public:
  MassSystem(std::vector<double> masses, int dim, double collision_tol = 1e-9,
             bool allow_one_dimensional = false)
      : masses_(std::move(masses)), dim_(dim), collision_tol_(collision_tol) {
    if (masses_.size() < 2) throw DomainError("mass system needs at least two bodies");
    for (double m : masses_)
      if (!(m > 0.0) || !std::isfinite(m)) throw DomainError("masses must be finite and positive");
    if (dim_ < 1 || (dim_ < 2 && !allow_one_dimensional))
      throw DomainError("space dimension must be at least 2");
    if (!(collision_tol_ > 0.0)) throw DomainError("collision tolerance must be positive");
    total_ = 0.0;
    for (double m : masses_) total_ += m;
    diag_.resize(size());
    for (int i = 0; i < n_bodies(); ++i) diag_.segment(i * dim_, dim_).setConstant(masses_[i]);
  }

  int n_bodies() const { return static_cast<int>(masses_.size()); }
  int dim() const { return dim_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(masses_.size()) * dim_; }
  double mass(int i) const { return masses_[i]; }
  const std::vector<double>& masses() const { return masses_; }
  double total_mass() const { return total_; }
  double collision_tol() const { return collision_tol_; }
  /// Per-coordinate masses; the mass metric is diag(mass_diag()).
  const Vec& mass_diag() const { return diag_; }

  MassSystem with_collision_tol(double tol) const {
    return MassSystem(masses_, dim_, tol, dim_ < 2);
  }

 private:
  std::vector<double> masses_;
  int dim_;
  double collision_tol_;
  double total_ = 0.0;
  Vec diag_;
};

inline void check_shape(const MassSystem& sys, const Vec& v, const char* what = "vector") {
  if (v.size() != sys.size())
    throw DimensionError(std::string(what) + " has " + std::to_string(v.size()) +
                         " entries, expected " + std::to_string(sys.size()));
}

// ---------------------------------------------------------------------------
// Mass metric

inline double mass_inner(const MassSystem& sys, const Vec& a, const Vec& b) {
  check_shape(sys, a);
  check_shape(sys, b);
  return (a.array() * b.array() * sys.mass_diag().array()).sum();
}

template <class TagA, class TagB>
double mass_inner(const MassSystem& sys, const PhaseVector<TagA>& a, const PhaseVector<TagB>& b) {
  return mass_inner(sys, a.vec(), b.vec());
}

inline double mass_norm(const MassSystem& sys, const Vec& a) {
  return std::sqrt(mass_inner(sys, a, a));
}

template <class Tag>
double mass_norm(const MassSystem& sys, const PhaseVector<Tag>& a) {
  return mass_norm(sys, a.vec());
}

// ---------------------------------------------------------------------------
// Mutual distances

inline double pair_distance(const MassSystem& sys, const Vec& x, int i, int j) {
  const int d = sys.dim();
  return (x.segment(i * d, d) - x.segment(j * d, d)).norm();
}

inline std::pair<double, double> separation_range(const MassSystem& sys, const Vec& x) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (int i = 0; i < sys.n_bodies(); ++i)
    for (int j = i + 1; j < sys.n_bodies(); ++j) {
      const double r = pair_distance(sys, x, i, j);
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
  return {lo, hi};
}

inline double min_separation(const MassSystem& sys, const Vec& x) {
  return separation_range(sys, x).first;
}

inline bool is_collision_free(const MassSystem& sys, const Vec& x) {
  check_shape(sys, x, "configuration");
  return min_separation(sys, x) > sys.collision_tol();
}

inline bool is_collision_free(const MassSystem& sys, const Configuration& x) {
  return is_collision_free(sys, x.vec());
}

// ---------------------------------------------------------------------------
// Potential and derivatives

/// U(x) = sum_{i<j} m_i m_j / r_ij, or the infinite marker when some r_ij <= collision_tol.
inline double potential(const MassSystem& sys, const Vec& x) {
  check_shape(sys, x, "configuration");
  const int n = sys.n_bodies();
  const int d = sys.dim();
  double u = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double r = (x.segment(i * d, d) - x.segment(j * d, d)).norm();
      if (!(r > sys.collision_tol())) return kInfinitePotential;
      u += sys.mass(i) * sys.mass(j) / r;
    }
  return u;
}

inline double potential(const MassSystem& sys, const Configuration& x) {
  return potential(sys, x.vec());
}

/// Accumulates weight * (U, dU/dx, d2U/dx2) in Euclidean coordinates. Hessian
/// accumulation is skipped when `hess` is null. Returns false on collision
/// (nothing is accumulated in that case).
inline bool accumulate_potential(const MassSystem& sys, const Eigen::Ref<const Vec>& x, double weight,
                                 double* value, Eigen::Ref<Vec> grad, Mat* hess) {
  const int n = sys.n_bodies();
  const int d = sys.dim();
  const double tol = sys.collision_tol();
  // First pass detects collisions so that partial sums never leak out.
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (!((x.segment(i * d, d) - x.segment(j * d, d)).norm() > tol)) return false;

  Eigen::VectorXd r(d);
  Eigen::MatrixXd k(d, d);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      r = x.segment(i * d, d) - x.segment(j * d, d);
      const double dist2 = r.squaredNorm();
      const double dist = std::sqrt(dist2);
      const double mm = sys.mass(i) * sys.mass(j) * weight;
      const double inv3 = 1.0 / (dist2 * dist);
      if (value) *value += mm / dist;
      // d/dr_i (1/|r|) = -r/|r|^3
      grad.segment(i * d, d) -= mm * inv3 * r;
      grad.segment(j * d, d) += mm * inv3 * r;
      if (hess) {
        k.noalias() = (3.0 * mm * inv3 / dist2) * (r * r.transpose());
        k.diagonal().array() -= mm * inv3;
        hess->block(i * d, i * d, d, d) += k;
        hess->block(j * d, j * d, d, d) += k;
        hess->block(i * d, j * d, d, d) -= k;
        hess->block(j * d, i * d, d, d) -= k;
      }
    }
  return true;
}

struct PotentialGradient {
  Vec euclid;     ///< dU/dr_i
  Velocity mass;  ///< m_i^{-1} dU/dr_i; Newton's equations read x'' = mass
};

inline PotentialGradient potential_gradient(const MassSystem& sys, const Vec& x) {
  check_shape(sys, x, "configuration");
  Vec g = Vec::Zero(sys.size());
  if (!accumulate_potential(sys, x, 1.0, nullptr, g, nullptr))
    throw DomainError("potential gradient requested at a collision configuration");
  Vec mg = g.cwiseQuotient(sys.mass_diag());
  return {std::move(g), Velocity(std::move(mg))};
}

inline PotentialGradient potential_gradient(const MassSystem& sys, const Configuration& x) {
  return potential_gradient(sys, x.vec());
}

/// Euclidean Hessian of U.
inline Mat potential_hessian(const MassSystem& sys, const Vec& x) {
  check_shape(sys, x, "configuration");
  Vec g = Vec::Zero(sys.size());
  Mat h = Mat::Zero(sys.size(), sys.size());
  if (!accumulate_potential(sys, x, 1.0, nullptr, g, &h))
    throw DomainError("potential Hessian requested at a collision configuration");
  return h;
}

/// Acceleration x'' = grad U (mass metric). Writes into `out`; returns false on collision.
inline bool acceleration(const MassSystem& sys, const Eigen::Ref<const Vec>& x, Eigen::Ref<Vec> out) {
  out.setZero();
  if (!accumulate_potential(sys, x, 1.0, nullptr, out, nullptr)) return false;
  out.array() /= sys.mass_diag().array();
  return true;
}

// ---------------------------------------------------------------------------
// Energy, inertia, statistics

inline double energy(const MassSystem& sys, const Vec& x, const Vec& v) {
  const double u = potential(sys, x);
  if (is_infinite_marker(u)) throw DomainError("energy requested at a collision configuration");
  return 0.5 * mass_inner(sys, v, v) - u;
}

inline double energy(const MassSystem& sys, const Configuration& x, const Velocity& v) {
  return energy(sys, x.vec(), v.vec());
}

inline Vec center_of_mass(const MassSystem& sys, const Vec& x) {
  check_shape(sys, x);
  const int d = sys.dim();
  Vec g = Vec::Zero(d);
  for (int i = 0; i < sys.n_bodies(); ++i) g += sys.mass(i) * x.segment(i * d, d);
  return g / sys.total_mass();
}

template <class Tag>
Vec center_of_mass(const MassSystem& sys, const PhaseVector<Tag>& x) {
  return center_of_mass(sys, x.vec());
}

/// Subtracts the center of mass from every body.
inline Vec remove_center_of_mass(const MassSystem& sys, Vec x) {
  const Vec g = center_of_mass(sys, x);
  for (int i = 0; i < sys.n_bodies(); ++i) x.segment(i * sys.dim(), sys.dim()) -= g;
  return x;
}

/// Moment of inertia about the origin, I = <x, x>.
inline double inertia(const MassSystem& sys, const Vec& x) { return mass_inner(sys, x, x); }

struct ConfigStats {
  double potential = 0.0;       ///< U, or the infinite marker
  double inertia_origin = 0.0;  ///< I
  double inertia_com = 0.0;     ///< I_G
  Vec com;                      ///< G
  double min_sep = 0.0;         ///< r
  double max_sep = 0.0;         ///< R
  double measure = 0.0;         ///< mu = U * sqrt(I)
  double measure_com = 0.0;     ///< U * sqrt(I_G)
};

inline ConfigStats config_stats(const MassSystem& sys, const Vec& x) {
  ConfigStats s;
  s.potential = potential(sys, x);
  s.inertia_origin = inertia(sys, x);
  s.com = center_of_mass(sys, x);
  const int d = sys.dim();
  double ig = 0.0;
  for (int i = 0; i < sys.n_bodies(); ++i) ig += sys.mass(i) * (x.segment(i * d, d) - s.com).squaredNorm();
  s.inertia_com = ig;
  std::tie(s.min_sep, s.max_sep) = separation_range(sys, x);
  s.measure = s.potential * std::sqrt(s.inertia_origin);
  s.measure_com = s.potential * std::sqrt(s.inertia_com);
  return s;
}

inline ConfigStats config_stats(const MassSystem& sys, const Configuration& x) {
  return config_stats(sys, x.vec());
}

/// Shortest pairwise free-fall time scale r_ij^{3/2} / sqrt(m_i + m_j); zero at collisions.
inline double dynamical_time(const MassSystem& sys, const Vec& x) {
  double t = std::numeric_limits<double>::infinity();
  for (int i = 0; i < sys.n_bodies(); ++i)
    for (int j = i + 1; j < sys.n_bodies(); ++j) {
      const double r = pair_distance(sys, x, i, j);
      if (!(r > sys.collision_tol())) return 0.0;
      t = std::min(t, std::pow(r, 1.5) / std::sqrt(sys.mass(i) + sys.mass(j)));
    }
  return t;
}

/// Returns x scaled to unit mass norm.
inline Vec normalized(const MassSystem& sys, const Vec& x) {
  const double n = mass_norm(sys, x);
  if (!(n > 0.0)) throw DomainError("cannot normalize the zero configuration");
  return x / n;
}

}  // namespace horokit
