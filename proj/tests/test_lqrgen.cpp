// Copyright 2026 The freqguard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <chrono>

#include "freqguard/lqrgen.hpp"
#include "support.hpp"

namespace {

using freqguard::CostSpec;
using freqguard::Matrix;
using freqguard::ModeSet;
using freqguard::Rng;
using freqguard::Scenario;
using freqguard::ScenarioOptions;
using freqguard::Trajectory;
using freqguard::Vector;
using namespace fgtest;

// Condensed QP over the stacked inputs: J(U) = UᵀHU + 2fᵀU + c.
struct DenseQp {
  Matrix h;
  Vector f;
  double c = 0.0;
};

DenseQp condense(const ModeSet& modes, const Scenario& sc, const CostSpec& cost) {
  const int t = sc.horizon();
  const int n = modes.state_dim(), m = modes.bus_count();
  // x_k = phi[k] x0 + gam[k] U
  std::vector<Matrix> phi(static_cast<std::size_t>(t + 1));
  std::vector<Matrix> gam(static_cast<std::size_t>(t + 1));
  phi[0] = Matrix::Identity(n, n);
  gam[0] = Matrix::Zero(n, m * t);
  for (int k = 0; k < t; ++k) {
    const auto& md = modes[sc.modes[static_cast<std::size_t>(k)]];
    phi[k + 1] = md.ad * phi[k];
    gam[k + 1] = md.ad * gam[k];
    gam[k + 1].middleCols(m * k, m) += md.bd;
  }
  const Matrix& q = cost.q.matrix();
  const Matrix& r = cost.r.matrix();
  DenseQp qp;
  qp.h = Matrix::Zero(m * t, m * t);
  qp.f = Vector::Zero(m * t);
  for (int k = 0; k <= t; ++k) {
    const Vector px = phi[k] * sc.x0;
    qp.h += gam[k].transpose() * q * gam[k];
    qp.f += gam[k].transpose() * q * px;
    qp.c += px.dot(q * px);
  }
  for (int k = 0; k < t; ++k) qp.h.block(m * k, m * k, m, m) += r;
  return qp;
}

Trajectory replay(const ModeSet& modes, const Scenario& sc, const CostSpec& cost, const Matrix& u) {
  return freqguard::simulate(
      modes, sc, [&u](const Vector&, int, int k) { return Vector(u.col(k)); }, cost);
}

Scenario two_bus_scenario(const ModeSet& modes, int horizon, std::uint64_t seed) {
  ScenarioOptions opt;
  opt.horizon_steps = horizon;
  opt.switch_period_steps = 10;
  return freqguard::sample_scenario(seed, modes, opt);
}

class TwoBusLqr : public ::testing::Test {
 protected:
  void SetUp() override {
    modes_ = freqguard::build_modes(two_bus({1.0, 2.0, 3.0}, 0.1), 1e-3);
    sc_ = two_bus_scenario(modes_, 50, 3);
  }
  ModeSet modes_;
  Scenario sc_;
  CostSpec cost_ = CostSpec::frequency_weighted(2);
};

TEST_F(TwoBusLqr, MatchesCondensedKktSolution) {
  const auto t0 = std::chrono::steady_clock::now();
  const Trajectory t = freqguard::lqr_solve(modes_, sc_, cost_);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 1.0);

  const DenseQp qp = condense(modes_, sc_, cost_);
  const Vector u_star = qp.h.ldlt().solve(-qp.f);
  const Vector u_got = Eigen::Map<const Vector>(t.actions.data(), t.actions.size());
  EXPECT_LE((u_got - u_star).cwiseAbs().maxCoeff(), 1e-5 * std::max(1.0, u_star.cwiseAbs().maxCoeff()));
  const double j_star = u_star.dot(qp.h * u_star) + 2.0 * qp.f.dot(u_star) + qp.c;
  EXPECT_LE(rel_err(t.cost, j_star), 1e-6);
}

TEST_F(TwoBusLqr, CoordinatePerturbationsDoNotImprove) {
  const Trajectory t = freqguard::lqr_solve(modes_, sc_, cost_);
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const int i = static_cast<int>(rng.below(2)), k = static_cast<int>(rng.below(50));
    for (double d : {-1e-3, 1e-3}) {
      Matrix u = t.actions;
      u(i, k) += d;
      EXPECT_GE(replay(modes_, sc_, cost_, u).cost, t.cost);
    }
  }
}

TEST_F(TwoBusLqr, BoxedSolutionIsFeasibleAndStationary) {
  const Trajectory free = freqguard::lqr_solve(modes_, sc_, cost_);
  const double bound = 0.5 * free.actions.cwiseAbs().maxCoeff();
  const auto res = freqguard::lqr_solve_boxed(modes_, sc_, cost_, bound);
  EXPECT_TRUE(res.converged);
  EXPECT_LE(res.trajectory.actions.cwiseAbs().maxCoeff(), bound);
  EXPECT_LE(res.trajectory.cost, res.clipped_cost);
  EXPECT_GE(res.trajectory.cost, free.cost);

  // KKT conditions of the box QP, from the condensed gradient.
  const DenseQp qp = condense(modes_, sc_, cost_);
  const Vector u = Eigen::Map<const Vector>(res.trajectory.actions.data(), res.trajectory.actions.size());
  const Vector g = 2.0 * (qp.h * u + qp.f);
  const double tol = 1e-5 * std::max(1.0, g.cwiseAbs().maxCoeff());
  int active = 0;
  for (int i = 0; i < u.size(); ++i) {
    if (u(i) >= bound - 1e-12) {
      EXPECT_LE(g(i), tol) << i;
      ++active;
    } else if (u(i) <= -bound + 1e-12) {
      EXPECT_GE(g(i), -tol) << i;
      ++active;
    } else {
      EXPECT_NEAR(g(i), 0.0, tol) << i;
    }
  }
  EXPECT_GT(active, 0);
}

TEST_F(TwoBusLqr, BoxedLimits) {
  const Trajectory free = freqguard::lqr_solve(modes_, sc_, cost_);
  const auto loose = freqguard::lqr_solve_boxed(modes_, sc_, cost_, 1e9);
  EXPECT_LE(rel_err(loose.trajectory.cost, free.cost), 1e-6);
  EXPECT_LE((loose.trajectory.actions - free.actions).cwiseAbs().maxCoeff(), 1e-6);

  const auto zero = freqguard::lqr_solve_boxed(modes_, sc_, cost_, 0.0);
  EXPECT_TRUE(zero.trajectory.actions.isZero(0.0));
  const double open = replay(modes_, sc_, cost_, Matrix::Zero(2, 50)).cost;
  EXPECT_DOUBLE_EQ(zero.trajectory.cost, open);
  EXPECT_THROW(freqguard::lqr_solve_boxed(modes_, sc_, cost_, -1.0), std::invalid_argument);
}

TEST(Lqr, ZeroStateWeightGivesZeroInput) {
  const ModeSet modes = freqguard::build_modes(two_bus({1.0, 2.0}), 1e-3);
  const Scenario sc = two_bus_scenario(modes, 100, 4);
  const Trajectory t = freqguard::lqr_solve(modes, sc, CostSpec::frequency_weighted(2, 0.0));
  EXPECT_TRUE(t.actions.isZero(0.0));
}

TEST(Lqr, BundledGridCostEqualsQuadraticForm) {
  const ModeSet modes = freqguard::build_modes(bundled_grid(), 1e-3);
  const CostSpec cost = CostSpec::frequency_weighted(12);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Scenario sc = freqguard::sample_scenario(seed, modes, ScenarioOptions{});
    const auto sol = freqguard::riccati_gains(modes, sc.modes, cost, true);
    EXPECT_GT(sol.min_p_eigenvalue, -1e-9);
    const Trajectory t = freqguard::lqr_solve(modes, sc, cost);
    EXPECT_LE(rel_err(t.cost, sc.x0.dot(sol.p0 * sc.x0)), 1e-6);
  }
}

TEST(Lqr, LongHorizonGainReachesStationaryFixedPoint) {
  const ModeSet modes = freqguard::build_modes(two_bus({1.0}, 0.1), 1e-3);
  const CostSpec cost = CostSpec::frequency_weighted(2);
  const auto sol = freqguard::riccati_gains(modes, std::vector<int>(100000, 0), cost);
  const Matrix& k0 = sol.gains.front();
  EXPECT_LE((k0 - sol.gains[1]).norm(), 1e-6 * k0.norm());
  // P solves the algebraic Riccati equation.
  const auto& m = modes[0];
  const Matrix& p = sol.p0;
  const Matrix s = cost.r.matrix() + m.bd.transpose() * p * m.bd;
  const Matrix gain = s.ldlt().solve(m.bd.transpose() * p * m.ad);
  const Matrix res = cost.q.matrix() + m.ad.transpose() * p * m.ad -
                     m.ad.transpose() * p * m.bd * gain - p;
  EXPECT_LE(res.norm(), 1e-6 * p.norm());
  EXPECT_LE((gain - k0).norm(), 1e-6 * k0.norm());
}

TEST(Dataset, CountsLayoutAndDeterminism) {
  const ModeSet modes = freqguard::build_modes(bundled_grid(), 1e-3);
  const CostSpec cost = CostSpec::frequency_weighted(12);
  freqguard::DatasetOptions opt;
  opt.n_traj = 3;
  const auto a = freqguard::build_dataset(modes, cost, opt, 42);
  const auto b = freqguard::build_dataset(modes, cost, opt, 42);
  ASSERT_EQ(a.size(), 3000);
  EXPECT_EQ(a.trajectories(), 3);
  EXPECT_EQ(a.states.rows(), 24);
  EXPECT_EQ(a.actions.rows(), 12);
  EXPECT_EQ(a.states, b.states);
  EXPECT_EQ(a.actions, b.actions);
  for (int i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a.traj_id[i], i / 1000);
    ASSERT_EQ(a.step[i], i % 1000);
  }
  const Scenario sc1 = freqguard::batch_scenario(42, 1, modes, opt.scenario);
  EXPECT_EQ(a.states.col(1000), sc1.x0);
  EXPECT_EQ(std::vector<int>(a.modes.begin() + 1000, a.modes.begin() + 2000), sc1.modes);

  opt.scenario.init_dev_hz_lo = opt.scenario.init_dev_hz_hi = 0.0;
  opt.n_traj = 1;
  const auto z = freqguard::build_dataset(modes, cost, opt, 1);
  EXPECT_TRUE(z.states.isZero(0.0));
  EXPECT_TRUE(z.actions.isZero(0.0));
  opt.n_traj = 0;
  EXPECT_THROW(freqguard::build_dataset(modes, cost, opt, 1), std::invalid_argument);
}

}  // namespace
