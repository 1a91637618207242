#include <gtest/gtest.h>

#include <random>

#include "horokit/integrator.hpp"

using namespace horokit;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

const MassSystem kTwo({1.0, 1.0}, 2);

PhaseState circular() {
  const double s = 1.0 / std::sqrt(2.0);
  return {Configuration(vec({-0.5, 0, 0.5, 0})), Velocity(vec({0, -s, 0, s}))};
}

// Three-body hyperbolic scatter with a small center-of-mass drift.
MassSystem three_sys() { return MassSystem({1.0, 0.7, 1.3}, 2); }
PhaseState three_state() {
  return {Configuration(vec({-1.0, 0.1, 1.2, -0.3, 0.2, 1.1})),
          Velocity(vec({-1.1, -0.3, 1.4, 0.2, 0.1, 1.2}))};
}

}  // namespace

TEST(Integrate, CircularPeriod) {
  const auto s = circular();
  const double period = M_PI * std::sqrt(2.0);
  const auto traj = integrate(kTwo, s.x, s.v, {0.0, period});
  ASSERT_EQ(traj.terminated_reason(), Termination::ReachedTmax);
  const std::size_t last = traj.size() - 1;
  EXPECT_NEAR(traj.times()[last], period, 1e-14);
  EXPECT_LT((traj.position(last) - s.x.vec()).norm(), 1e-8);
  EXPECT_LT((traj.velocity(last) - s.v.vec()).norm(), 1e-8);
  // Half a period later the bodies are swapped.
  EXPECT_LT((traj.position_at(0.5 * period) + s.x.vec()).norm(), 1e-8);
  // Virial relation for circular motion.
  EXPECT_NEAR(potential(kTwo, s.x.vec()), -2.0 * traj.energy0(), 1e-14);
  EXPECT_LE(max_energy_drift(kTwo, traj), traj.drift_budget());
}

TEST(Integrate, ForwardThenBackwardReturns) {
  const auto sys = three_sys();
  const auto s = three_state();
  const auto fwd = integrate(sys, s.x, s.v, {0.0, 5.0});
  ASSERT_EQ(fwd.terminated_reason(), Termination::ReachedTmax);
  const auto end = fwd.state(fwd.size() - 1);
  const auto back = integrate(sys, end.x, end.v, {5.0, 0.0});
  ASSERT_EQ(back.terminated_reason(), Termination::ReachedTmax);
  EXPECT_TRUE(back.backward());
  EXPECT_NEAR(back.t_begin(), 0.0, 1e-14);
  EXPECT_LT((back.position(0) - s.x.vec()).norm(), 1e-8);
  EXPECT_LT((back.velocity(0) - s.v.vec()).norm(), 1e-8);
}

TEST(Integrate, TimeReversalSymmetry) {
  const auto sys = three_sys();
  const auto s = three_state();
  const auto a = integrate(sys, s.x, -s.v, {0.0, 3.0});
  const auto b = integrate(sys, s.x, s.v, {0.0, -3.0});
  for (double t : {0.5, 1.7, 3.0}) {
    EXPECT_LT((a.position_at(t) - b.position_at(-t)).norm(), 1e-9);
    EXPECT_LT((a.velocity_at(t) + b.velocity_at(-t)).norm(), 1e-9);
  }
}

TEST(Integrate, HyperbolicSpeedApproachesLimit) {
  const Configuration x(vec({-0.5, 0, 0.5, 0}));
  const Velocity v(vec({0.4, -1.1, -0.4, 1.1}));
  const double h = energy(kTwo, x, v);
  ASSERT_GT(h, 0.0);
  const auto traj = integrate(kTwo, x, v, {0.0, 2000.0});
  ASSERT_EQ(traj.terminated_reason(), Termination::ReachedTmax);
  const double s_mid = mass_norm(kTwo, traj.velocity_at(200.0));
  const double s_end = mass_norm(kTwo, traj.velocity(traj.size() - 1));
  const double lim = std::sqrt(2.0 * h);
  EXPECT_LT(std::abs(s_end - lim), std::abs(s_mid - lim));
  EXPECT_LT(std::abs(s_end - lim), 2e-3 * lim);
  EXPECT_LE(max_energy_drift(kTwo, traj), traj.drift_budget());
}

TEST(Integrate, DenseOutputAccuracy) {
  const auto sys = three_sys();
  const auto s = three_state();
  const auto traj = integrate(sys, s.x, s.v, {0.0, 4.0});
  for (double t : {0.33, 1.234, 2.9, 3.77}) {
    const auto direct = integrate(sys, s.x, s.v, {0.0, t});
    const std::size_t last = direct.size() - 1;
    EXPECT_LT((traj.position_at(t) - direct.position(last)).norm(), 1e-8);
    EXPECT_LT((traj.velocity_at(t) - direct.velocity(last)).norm(), 1e-7);
  }
}

TEST(Integrate, CollisionApproachStops) {
  // Radial infall from rest.
  const auto traj = integrate(kTwo, Configuration(vec({-0.5, 0, 0.5, 0})), Velocity(Vec::Zero(4)), {0.0, 10.0});
  EXPECT_NE(traj.terminated_reason(), Termination::ReachedTmax);
  EXPECT_LT(traj.t_end(), 10.0);
  for (std::size_t k = 0; k < traj.size(); ++k) EXPECT_TRUE(is_collision_free(kTwo, traj.position(k)));
}

TEST(Integrate, RejectsBadInput) {
  EXPECT_THROW(integrate(kTwo, Configuration(vec({0, 0, 0, 0})), Velocity(Vec::Zero(4)), {0.0, 1.0}),
               DomainError);
  IntegratorOptions o;
  o.rel_tol = 0.0;
  const auto s = circular();
  EXPECT_THROW(integrate(kTwo, s.x, s.v, {0.0, 1.0}, o), DomainError);
}

TEST(LagrangeJacobi, ResidualSmallOnSolutions) {
  const auto sys = three_sys();
  const auto s = three_state();
  const auto traj = integrate(sys, s.x, s.v, {0.0, 20.0});
  const auto res = lagrange_jacobi_residual(sys, traj);
  const double h = traj.energy0();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const double u = potential(sys, traj.position(k));
    EXPECT_LE(std::abs(res[k]), 1e-9 * (1.0 + std::abs(4 * h + 2 * u)));
  }
}

TEST(LagrangeJacobi, PerturbedStatesFail) {
  const auto sys = three_sys();
  const auto s = three_state();
  const auto traj = integrate(sys, s.x, s.v, {0.0, 2.0});
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  int large = 0;
  for (std::size_t k = 0; k < traj.size(); k += std::max<std::size_t>(1, traj.size() / 20)) {
    Vec v = traj.velocity(k);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += 0.5 * g(rng);
    if (std::abs(lagrange_jacobi_residual(sys, traj.position(k), v, traj.acceleration(k), traj.energy0())) > 1e-2)
      ++large;
  }
  EXPECT_GT(large, 10);
}

TEST(Perihelion, AlreadyAtPerihelion) {
  const Configuration x(vec({-0.5, 0, 0.5, 0}));
  const Velocity v(vec({0, -1.2, 0, 1.2}));
  const auto p = perihelion_state(kTwo, x, v, {-5.0, 5.0});
  EXPECT_EQ(p.t_p, 0.0);
}

TEST(Perihelion, TimeTranslation) {
  const auto sys = three_sys();
  const auto s = three_state();
  ASSERT_GT(energy(sys, s.x, s.v), 0.0);
  const auto p0 = perihelion_state(sys, s.x, s.v, {-20.0, 20.0});
  EXPECT_LT(std::abs(mass_inner(sys, p0.state.x, p0.state.v)), 1e-8);
  const double tau0 = 0.8;
  const auto traj = integrate(sys, s.x, s.v, {0.0, tau0});
  const auto later = traj.state(traj.size() - 1);
  const auto p1 = perihelion_state(sys, later.x, later.v, {-20.0, 20.0});
  EXPECT_NEAR(p1.t_p, p0.t_p - tau0, 1e-8);
  EXPECT_LT((p1.state.x.vec() - p0.state.x.vec()).norm(), 1e-8);
  EXPECT_THROW(perihelion_state(sys, s.x, s.v, {0.0, 0.0}), BracketError);
}

TEST(Rescale, EnergyAndEquivariance) {
  const auto sys = three_sys();
  const auto s = three_state();
  const auto traj = integrate(sys, s.x, s.v, {0.0, 3.0});
  const auto same = rescale_solution(traj, 1.0);
  EXPECT_EQ((same.position(5) - traj.position(5)).norm(), 0.0);
  for (double lam : {0.25, 2.0, 7.5}) {
    const auto r = rescale_solution(traj, lam);
    EXPECT_NEAR(r.energy0(), traj.energy0() / lam, 1e-12 * std::abs(traj.energy0()));
    for (std::size_t k = 0; k < r.size(); k += 7)
      EXPECT_NEAR(energy(sys, r.position(k), r.velocity(k)), traj.energy0() / lam, 1e-9);
    // Integrate the rescaled initial data and compare with the rescaled run.
    const auto direct = integrate(sys, r.state(0).x, r.state(0).v, {0.0, r.t_end()});
    for (double t : {0.3, 1.9, 3.0}) {
      const double tl = std::pow(lam, 1.5) * t;
      EXPECT_LT((direct.position_at(tl) - r.position_at(tl)).norm(), 1e-8 * lam);
    }
  }
  EXPECT_THROW(rescale_solution(traj, 0.0), DomainError);
}
