#include <gtest/gtest.h>

#include <random>

#include "horokit/jm_metric.hpp"
#include "horokit/oracles.hpp"

using namespace horokit;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

const MassSystem kTwo({1.0, 1.0}, 2);
const MassSystem kThree({1.0, 2.0, 1.5}, 2);

// Relative separation r along the x axis, centre of mass at the origin.
Configuration axis(double r) { return Configuration(vec({-0.5 * r, 0, 0.5 * r, 0})); }

Trajectory kepler_run(double t1) {
  return integrate(kTwo, Configuration(vec({-0.5, 0, 0.5, 0})), Velocity(vec({-0.3, -1.5, 0.3, 1.5})), {0.0, t1});
}

}  // namespace

TEST(JmLength, EqualsActionOnEnergyShell) {
  const Vec x = vec({-1.0, 0.0, 1.0, 0.3, 0.2, -0.9});
  const Vec v = vec({0.5, 3.0, -1.5, 0.5, 1.0, -2.5});
  const auto traj = integrate(kThree, Configuration(x), Velocity(v), {0.0, 20.0});
  const double h = traj.energy0();
  ASSERT_GT(h, 0.0);
  const double len = jm_length(kThree, traj, h);
  const double act = trajectory_action(kThree, traj, h);
  EXPECT_NEAR(len / act, 1.0, 1e-6);
}

TEST(JmLength, StrictlyBelowActionOffShell) {
  const auto traj = kepler_run(10.0);
  for (double dh : {-0.5, 0.5, 2.0}) {
    const double h = traj.energy0() + dh;
    EXPECT_LT(jm_length(kTwo, traj, h), trajectory_action(kTwo, traj, h) * (1 - 1e-6)) << dh;
  }
}

TEST(JmLength, FreeTimeMinimizerLengthIsPotential) {
  const Configuration x(vec({-1.0, 0.0, 1.0, 0.0}));
  const Configuration y(vec({-1.5, 1.0, 1.5, -1.0}));
  const double h = 1.0;
  const auto pv = free_time_minimize(kTwo, x, y, h);
  const double len = jm_length(kTwo, pv.path, h);
  EXPECT_NEAR(len / pv.value, 1.0, 1e-3);

  // Any other curve is longer: the chord and a bowed competitor.
  const double tol = 1e-3 * pv.value;
  const Path chord = Path::chord(x.vec(), y.vec(), 1.0, 64);
  EXPECT_GE(jm_length(kTwo, chord, h), pv.value - tol);
  Path bow = chord;
  for (int k = 1; k < 64; ++k) {
    const double s = static_cast<double>(k) / 64.0;
    bow.nodes(1, k) += 0.8 * std::sin(M_PI * s);
    bow.nodes(3, k) -= 0.8 * std::sin(M_PI * s);
  }
  EXPECT_GE(jm_length(kTwo, bow, h), pv.value - tol);
}

TEST(JmLength, CollisionOnCurve) {
  const Path p = Path::chord(vec({-1, 0, 1, 0}), vec({1, 0, -1, 0}), 1.0, 8);
  EXPECT_THROW(jm_length(kTwo, p, 1.0), DomainError);
}

TEST(ArcParam, FarRegimeAndUnitSpeed) {
  const auto traj = kepler_run(1000.0);
  const double h = traj.energy0();
  const ArcParam arc = arclength_reparam(kTwo, traj, h);
  const double t1 = 900.0, t2 = 1000.0;
  EXPECT_NEAR((arc.s_of(t2) - arc.s_of(t1)) / (t2 - t1) / (2.0 * h), 1.0, 0.01);
  const double s_end = arc.s_samples().back();
  EXPECT_NEAR(mass_norm(kTwo, arc.dgamma_ds(s_end)) * std::sqrt(2.0 * h), 1.0, 0.01);

  double worst = 0.0;
  for (std::size_t k = 0; k < arc.s_samples().size(); k += 7) {
    const double s = arc.s_samples()[k];
    const double t = arc.t_samples()[k];
    const double u = potential(kTwo, traj.position_at(t));
    worst = std::max(worst, std::abs(std::sqrt(2.0 * (h + u)) * mass_norm(kTwo, arc.dgamma_ds(s)) - 1.0));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(ArcParam, RoundTripAndLipschitz) {
  const auto traj = kepler_run(50.0);
  const double h = traj.energy0();
  const ArcParam arc(kTwo, traj, h);
  EXPECT_DOUBLE_EQ(arc.s_of(0.0), 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ut(0.0, 50.0);
  for (int i = 0; i < 200; ++i) {
    const double t = ut(rng);
    EXPECT_NEAR(arc.t_of(arc.s_of(t)), t, 1e-9);
  }
  const double s_max = arc.s_samples().back();
  std::uniform_real_distribution<double> us(0.0, s_max);
  for (int i = 0; i < 200; ++i) {
    const double s1 = us(rng), s2 = us(rng);
    EXPECT_LE(mass_norm(kTwo, Vec(arc.gamma(s2) - arc.gamma(s1))), std::abs(s2 - s1) / std::sqrt(2.0 * h) + 1e-9);
  }
}

TEST(ArcParam, BackwardBranchIsIncreasing) {
  const auto traj = integrate(kTwo, Configuration(vec({-0.5, 0, 0.5, 0})), Velocity(vec({-0.3, -1.5, 0.3, 1.5})),
                              {0.0, -20.0});
  const ArcParam arc(kTwo, traj, traj.energy0());
  EXPECT_NEAR(arc.s_of(0.0), 0.0, 1e-12);
  for (std::size_t k = 1; k < arc.s_samples().size(); ++k) EXPECT_GT(arc.s_samples()[k], arc.s_samples()[k - 1]);
}

TEST(ArcParam, EnergyMismatch) {
  const auto traj = kepler_run(10.0);
  EXPECT_THROW(ArcParam(kTwo, traj, traj.energy0() + 1e-3), InconsistencyError);
  EXPECT_THROW(ArcParam(kTwo, traj, -1.0), DomainError);
}

TEST(SAsymptotic, KeplerPassesAndControlFails) {
  const auto traj = kepler_run(1000.0);
  const double h = traj.energy0();
  const auto fit = limit_shape_fit(kTwo, traj);
  const auto rep = s_asymptotic_check(kTwo, traj, h, fit);
  EXPECT_TRUE(rep.pass) << rep.range_previous << " " << rep.range_last;

  SCheckOptions wrong;
  wrong.coefficient_scale = 0.5;
  const auto bad = s_asymptotic_check(kTwo, traj, h, fit, wrong);
  EXPECT_FALSE(bad.pass);
  EXPECT_GT(bad.range_last, 10.0 * rep.range_last);

  const auto exact = kepler_asymptotes(kTwo, Configuration(traj.position(0)), Velocity(traj.velocity(0)));
  EXPECT_NEAR(rep.potential_at_a / potential(kTwo, exact.a_plus), 1.0, 0.01);
}

TEST(KeplerLowerBound, TwoBodyClosedForm) {
  const auto m = unit_sphere_min_potential(kTwo);
  EXPECT_NEAR(m.u0, 1.0 / std::sqrt(2.0), 1e-9);
  EXPECT_GT(m.converged_restarts, 0);
  // The minimizer is an antipodal pair at separation sqrt(2).
  EXPECT_NEAR(pair_distance(kTwo, m.argmin, 0, 1), std::sqrt(2.0), 1e-6);
}

TEST(KeplerLowerBound, BelowComputedPotentials) {
  const double u0 = unit_sphere_min_potential(kTwo).u0;
  // Radial pairs at h = 0 against the closed form.
  for (auto [r0, r1] : {std::pair{1.0, 2.0}, {0.5, 4.0}, {3.0, 3.5}}) {
    const double phi0 = radial_two_body_action(kTwo, axis(r0), axis(r1), 0.0);
    EXPECT_LE(kepler_lower_bound(kTwo, axis(r0), axis(r1), u0), phi0 * (1 + 1e-9));
  }
  const Configuration x(vec({-1.0, 0.0, 1.0, 0.0}));
  const Configuration y(vec({-1.5, 1.0, 1.5, -1.0}));
  const double b = kepler_lower_bound(kTwo, x, y, u0);
  for (double h : {0.25, 1.0}) EXPECT_LE(b, free_time_minimize(kTwo, x, y, h).value);
  EXPECT_LE(b, kepler_free_time_phi(kTwo, x, y, 1e-3).value);
}

TEST(KeplerLowerBound, ScalingAndDomain) {
  const double u0 = unit_sphere_min_potential(kThree).u0;
  const Configuration x(vec({-1.0, 0.0, 1.0, 0.3, 0.2, -0.9}));
  const Configuration y(vec({-1.2, 0.5, 1.3, 0.1, 0.0, -1.4}));
  const double b = kepler_lower_bound(kThree, x, y, u0);
  for (double lam : {0.1, 3.0, 50.0})
    EXPECT_NEAR(kepler_lower_bound(kThree, Configuration(Vec(lam * x.vec())), Configuration(Vec(lam * y.vec())), u0),
                std::sqrt(lam) * b, 1e-12 * std::sqrt(lam) * b);
  EXPECT_THROW(kepler_lower_bound(kThree, x, x, u0), DomainError);
}

TEST(KeplerLowerBound, SphereMinimumIsReproducible) {
  SphereMinOptions a, b;
  b.seed = 99;
  EXPECT_NEAR(unit_sphere_min_potential(kThree, a).u0, unit_sphere_min_potential(kThree, b).u0, 1e-9);
}
