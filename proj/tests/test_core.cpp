#include <gtest/gtest.h>

#include <random>

#include "horokit/core.hpp"

using namespace horokit;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

Vec random_config(const MassSystem& sys, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Vec x(sys.size());
  do {
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = g(rng);
  } while (min_separation(sys, x) < 1e-2 * scale);
  return x;
}

}  // namespace

TEST(MassSystem, RejectsBadInput) {
  EXPECT_THROW(MassSystem({1.0, -1.0}, 2), DomainError);
  EXPECT_THROW(MassSystem({1.0}, 2), DomainError);
  EXPECT_THROW(MassSystem({1.0, 1.0}, 1), DomainError);
  EXPECT_NO_THROW(MassSystem({1.0, 1.0}, 1, 1e-9, true));
  EXPECT_THROW(MassSystem({1.0, 1.0}, 2, 0.0), DomainError);
}

TEST(MassInner, Examples) {
  MassSystem two({1.0, 1.0}, 2);
  const Vec x = vec({1, 0, 0, 1});
  EXPECT_DOUBLE_EQ(mass_inner(two, x, x), 2.0);
  EXPECT_DOUBLE_EQ(mass_inner(two, x, Vec::Zero(4)), 0.0);
  MassSystem w({2.0, 3.0}, 2);
  const Vec y = vec({1, 0, 1, 0});
  EXPECT_DOUBLE_EQ(mass_inner(w, y, y), 5.0);
  EXPECT_THROW(mass_inner(w, vec({1, 2, 3}), vec({1, 2, 3})), DimensionError);
}

TEST(Potential, Examples) {
  MassSystem two({1.0, 1.0}, 2);
  EXPECT_DOUBLE_EQ(potential(two, vec({0, 0, 1, 0})), 1.0);
  EXPECT_TRUE(is_infinite_marker(potential(two, vec({1, 1, 1, 1}))));
  MassSystem three({1.0, 1.0, 1.0}, 2);
  const Vec tri = vec({0, 0, 1, 0, 0.5, std::sqrt(3.0) / 2});
  EXPECT_NEAR(potential(three, tri), 3.0, 1e-14);
}

TEST(PotentialGradient, TwoBodyAxis) {
  MassSystem two({1.0, 1.0}, 2);
  const auto g = potential_gradient(two, vec({-0.5, 0, 0.5, 0}));
  EXPECT_NEAR((g.euclid - vec({1, 0, -1, 0})).norm(), 0.0, 1e-14);
  EXPECT_THROW(potential_gradient(two, vec({0, 0, 0, 0})), DomainError);
}

TEST(PotentialGradient, CentralConfigurationIsParallel) {
  MassSystem three({1.0, 1.0, 1.0}, 2);
  const double r = 1.0 / std::sqrt(3.0);
  Vec a(6);
  for (int i = 0; i < 3; ++i) {
    a[2 * i] = r * std::cos(2 * M_PI * i / 3);
    a[2 * i + 1] = r * std::sin(2 * M_PI * i / 3);
  }
  const Vec g = potential_gradient(three, a).mass.vec();
  const double c = g.dot(a) / a.squaredNorm();
  EXPECT_LT((g - c * a).norm(), 1e-12 * g.norm());
}

TEST(PotentialGradient, FiniteDifferenceProperty) {
  std::mt19937_64 rng(7);
  MassSystem sys({1.0, 2.0, 0.5, 1.5}, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = random_config(sys, rng);
    const Vec g = potential_gradient(sys, x).mass.vec();
    // Directional derivative dU(x)[w] equals <grad U, w> in the mass metric.
    std::normal_distribution<double> n(0.0, 1.0);
    Vec w(sys.size());
    for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = n(rng);
    const double eps = 1e-6 * min_separation(sys, x);
    const double fd = (potential(sys, Vec(x + eps * w)) - potential(sys, Vec(x - eps * w))) / (2 * eps);
    const double an = mass_inner(sys, g, w);
    EXPECT_NEAR(fd, an, 1e-6 * std::max(1.0, std::abs(an))) << "trial " << trial;
  }
}

TEST(PotentialHessian, MatchesGradientDifferences) {
  std::mt19937_64 rng(11);
  MassSystem sys({1.0, 2.0, 0.5}, 2);
  const Vec x = random_config(sys, rng);
  const Mat H = potential_hessian(sys, x);
  const double eps = 1e-6;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Vec xp = x, xm = x;
    xp[k] += eps;
    xm[k] -= eps;
    const Vec col = (potential_gradient(sys, xp).euclid - potential_gradient(sys, xm).euclid) / (2 * eps);
    EXPECT_LT((col - H.col(k)).norm(), 1e-5 * (1.0 + H.col(k).norm()));
  }
  EXPECT_LT((H - H.transpose()).norm(), 1e-12 * H.norm());
}

TEST(Energy, Examples) {
  MassSystem two({1.0, 1.0}, 2);
  EXPECT_DOUBLE_EQ(energy(two, vec({0, 0, 1, 0}), Vec::Zero(4)), -1.0);
  MassSystem three({1.0, 1.0, 1.0}, 2);
  EXPECT_NEAR(energy(three, vec({0, 0, 1, 0, 0.5, std::sqrt(3.0) / 2}), Vec::Zero(6)), -3.0, 1e-14);
  // Parabolic threshold: speed chosen so that the kinetic energy equals U.
  const Vec x = vec({0, 0, 2, 0});
  const double s = std::sqrt(potential(two, x));
  EXPECT_NEAR(energy(two, x, vec({0, s, 0, -s})), 0.0, 1e-15);
  EXPECT_THROW(energy(two, vec({0, 0, 0, 0}), Vec::Zero(4)), DomainError);
}

TEST(ConfigStats, Examples) {
  MassSystem two({1.0, 1.0}, 2);
  const auto s = config_stats(two, vec({-0.5, 0, 0.5, 0}));
  EXPECT_NEAR(s.inertia_origin, 0.5, 1e-15);
  EXPECT_NEAR(s.com.norm(), 0.0, 1e-15);
  EXPECT_NEAR(s.min_sep, 1.0, 1e-15);
  EXPECT_NEAR(s.max_sep, 1.0, 1e-15);
  EXPECT_NEAR(s.measure, std::sqrt(0.5), 1e-15);

  MassSystem three({1.0, 1.0, 1.0}, 2);
  const double r = 1.0 / std::sqrt(3.0);
  Vec a(6);
  for (int i = 0; i < 3; ++i) {
    a[2 * i] = r * std::cos(2 * M_PI * i / 3);
    a[2 * i + 1] = r * std::sin(2 * M_PI * i / 3);
  }
  const auto t = config_stats(three, a);
  EXPECT_NEAR(t.inertia_com, 1.0, 1e-14);
  EXPECT_NEAR(t.measure, 3.0, 1e-13);

  Vec shifted = a;
  for (int i = 0; i < 3; ++i) {
    shifted[2 * i] += 0.7;
    shifted[2 * i + 1] -= 1.3;
  }
  const auto u = config_stats(three, shifted);
  EXPECT_NEAR(u.inertia_com, t.inertia_com, 1e-13);
  EXPECT_NEAR(u.min_sep, t.min_sep, 1e-13);
  EXPECT_NEAR(u.max_sep, t.max_sep, 1e-13);
  EXPECT_NEAR(u.potential, t.potential, 1e-13);
  EXPECT_NEAR(u.com[0] - t.com[0], 0.7, 1e-13);
  EXPECT_NEAR(u.com[1] - t.com[1], -1.3, 1e-13);
}

TEST(ConfigStats, RandomProperties) {
  std::mt19937_64 rng(3);
  MassSystem sys({1.0, 3.0, 0.25, 2.0}, 3);
  double min_mm = 1e300, sum_mm = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) {
      min_mm = std::min(min_mm, sys.mass(i) * sys.mass(j));
      sum_mm += sys.mass(i) * sys.mass(j);
    }
  for (int trial = 0; trial < 200; ++trial) {
    const Vec x = random_config(sys, rng, 2.0);
    const auto s = config_stats(sys, x);
    EXPECT_LE(std::abs(s.inertia_origin - s.inertia_com - sys.total_mass() * s.com.squaredNorm()),
              1e-10 * (1.0 + s.inertia_origin));
    EXPECT_LE(s.min_sep, s.max_sep);
    EXPECT_NEAR(s.measure, s.potential * std::sqrt(s.inertia_origin), 1e-12 * s.measure);
    EXPECT_LE(min_mm / s.min_sep, s.potential * (1 + 1e-14));
    EXPECT_LE(s.potential, sum_mm / s.min_sep * (1 + 1e-14));
    const double lam = 0.1 + 5.0 * trial / 200.0;
    const auto sl = config_stats(sys, Vec(lam * x));
    EXPECT_NEAR(sl.potential, s.potential / lam, 1e-12 * s.potential / lam);
    EXPECT_NEAR(sl.measure, s.measure, 1e-12 * s.measure);
  }
}

TEST(PhaseVector, Arithmetic) {
  Configuration a(vec({1, 2, 3, 4}));
  Configuration b(vec({1, 1, 1, 1}));
  const Configuration c = 2.0 * a - b;
  EXPECT_DOUBLE_EQ(c[3], 7.0);
  EXPECT_DOUBLE_EQ((-c)[0], -1.0);
  EXPECT_EQ(c.body(1, 2)[1], 7.0);
}
