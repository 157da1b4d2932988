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

#pragma once

// Expert trajectories from the finite-horizon, mode-schedule-aware LQR.
// The unconstrained problem is solved exactly by a backward Riccati
// recursion over the time-varying discrete pairs; the box-constrained
// variant is solved by projected gradient on the control sequence.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "freqguard/dynamics.hpp"

namespace freqguard {

class LqrError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RiccatiSolution {
  std::vector<Matrix> gains;  // u_k = -gains[k] x_k
  Matrix p0;                  // cost-to-go at k = 0 (includes the terminal Q)
  double min_p_eigenvalue = 0.0;  // only filled when checked
};

/// Backward recursion with P_T = Q:
///   K_k = (R + BᵀP_{k+1}B)⁻¹ BᵀP_{k+1}A,   P_k = Q + AᵀP_{k+1}(A - B K_k).
/// With `check_psd`, every P_k is eigen-checked (slow; meant for tests).
inline RiccatiSolution riccati_gains(const ModeSet& modes, const std::vector<int>& schedule,
                                     const CostSpec& cost, bool check_psd = false) {
  const int horizon = static_cast<int>(schedule.size());
  const Matrix& q = cost.q.matrix();
  const Matrix& r = cost.r.matrix();
  RiccatiSolution sol;
  sol.gains.resize(static_cast<std::size_t>(horizon));
  Matrix p = q;
  double min_eig = std::numeric_limits<double>::infinity();
  for (int k = horizon - 1; k >= 0; --k) {
    const Mode& m = modes[schedule[static_cast<std::size_t>(k)]];
    const Matrix btp = m.bd.transpose() * p;
    const Matrix s = r + btp * m.bd;
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) {
      throw LqrError("lqr: R + BᵀPB is not positive definite at step " + std::to_string(k));
    }
    Matrix gain = llt.solve(btp * m.ad);
    if (!gain.allFinite()) throw LqrError("lqr: non-finite gain at step " + std::to_string(k));
    Matrix next = q + m.ad.transpose() * p * (m.ad - m.bd * gain);
    p = SymMatrix(next).matrix();
    if (check_psd) {
      const double scale = std::max(1.0, p.norm());
      min_eig = std::min(min_eig, min_eigenvalue(SymMatrix(p)) / scale);
    }
    sol.gains[static_cast<std::size_t>(k)] = std::move(gain);
  }
  sol.p0 = p;
  sol.min_p_eigenvalue = check_psd ? min_eig : 0.0;
  return sol;
}

/// Optimal trajectory of the unconstrained finite-horizon problem with full
/// knowledge of the mode schedule.
inline Trajectory lqr_solve(const ModeSet& modes, const Scenario& sc, const CostSpec& cost) {
  check_scenario(modes, sc);
  const RiccatiSolution sol = riccati_gains(modes, sc.modes, cost);
  Controller ctrl = [&sol](const Vector& x, int, int k) {
    return Vector(-sol.gains[static_cast<std::size_t>(k)] * x);
  };
  return simulate(modes, sc, ctrl, cost);
}

// --- box-constrained variant ----------------------------------------------

struct BoxedLqrOptions {
  int max_iterations = 500;
  double tolerance = 1e-6;  // on the projected-gradient norm
};

struct BoxedLqrResult {
  Trajectory trajectory;
  bool converged = false;
  int iterations = 0;
  double projected_gradient_norm = 0.0;
  double clipped_cost = 0.0;  // cost of the clipped unconstrained sequence
};

namespace detail {

inline double open_loop_cost(const ModeSet& modes, const Scenario& sc, const CostSpec& cost,
                             const Matrix& u, Matrix* states) {
  const int horizon = sc.horizon();
  Vector x = sc.x0;
  double total = 0.0;
  if (states) {
    states->resize(x.size(), horizon + 1);
    states->col(0) = x;
  }
  for (int k = 0; k < horizon; ++k) {
    const Mode& m = modes[sc.modes[static_cast<std::size_t>(k)]];
    total += cost.stage(x, u.col(k));
    x = m.ad * x + m.bd * u.col(k);
    if (states) states->col(k + 1) = x;
  }
  return total + cost.terminal(x);
}

/// Gradient of the reduced objective J(u) by the adjoint recursion.
inline Matrix reduced_gradient(const ModeSet& modes, const Scenario& sc, const CostSpec& cost,
                               const Matrix& u, const Matrix& states) {
  const int horizon = sc.horizon();
  const Matrix& q = cost.q.matrix();
  const Matrix& r = cost.r.matrix();
  Matrix grad(u.rows(), u.cols());
  Vector lambda = 2.0 * q * states.col(horizon);
  for (int k = horizon - 1; k >= 0; --k) {
    const Mode& m = modes[sc.modes[static_cast<std::size_t>(k)]];
    grad.col(k) = 2.0 * r * u.col(k) + m.bd.transpose() * lambda;
    lambda = 2.0 * q * states.col(k) + m.ad.transpose() * lambda;
  }
  return grad;
}

inline Matrix clip(const Matrix& u, double bound) {
  return u.cwiseMax(-bound).cwiseMin(bound);
}

}  // namespace detail

/// Projected-gradient solution of the box-constrained LQR. Starts from the
/// cheaper of the clipped open-loop optimum and the clipped Riccati feedback
/// rollout; step lengths are Barzilai-Borwein guesses accepted by an Armijo
/// backtracking test, so the cost never increases.
inline BoxedLqrResult lqr_solve_boxed(const ModeSet& modes, const Scenario& sc,
                                      const CostSpec& cost, double u_bound,
                                      const BoxedLqrOptions& opt = {}) {
  if (!(u_bound >= 0.0)) throw std::invalid_argument("lqr_solve_boxed: u_bound must be >= 0");
  check_scenario(modes, sc);
  const int horizon = sc.horizon();
  const RiccatiSolution sol = riccati_gains(modes, sc.modes, cost);

  Matrix u_open(modes.bus_count(), horizon);
  {
    Vector x = sc.x0;
    for (int k = 0; k < horizon; ++k) {
      const Mode& m = modes[sc.modes[static_cast<std::size_t>(k)]];
      u_open.col(k) = -sol.gains[static_cast<std::size_t>(k)] * x;
      x = m.ad * x + m.bd * u_open.col(k);
    }
  }
  u_open = detail::clip(u_open, u_bound);
  Matrix u_fb(modes.bus_count(), horizon);
  {
    Vector x = sc.x0;
    for (int k = 0; k < horizon; ++k) {
      const Mode& m = modes[sc.modes[static_cast<std::size_t>(k)]];
      u_fb.col(k) = detail::clip(-sol.gains[static_cast<std::size_t>(k)] * x, u_bound);
      x = m.ad * x + m.bd * u_fb.col(k);
    }
  }

  BoxedLqrResult res;
  Matrix states;
  const double open_cost = detail::open_loop_cost(modes, sc, cost, u_open, nullptr);
  const double fb_cost = detail::open_loop_cost(modes, sc, cost, u_fb, nullptr);
  res.clipped_cost = open_cost;
  Matrix u = fb_cost < open_cost ? u_fb : u_open;
  double j = detail::open_loop_cost(modes, sc, cost, u, &states);
  Matrix grad = detail::reduced_gradient(modes, sc, cost, u, states);

  auto pg_norm = [&](const Matrix& uu, const Matrix& g) {
    return (detail::clip(uu - g, u_bound) - uu).norm();
  };
  res.projected_gradient_norm = pg_norm(u, grad);
  double step = 1.0 / std::max(1.0, 2.0 * cost.r.matrix().norm());
  Matrix prev_u, prev_grad;
  for (int it = 0; it < opt.max_iterations && u_bound > 0.0; ++it) {
    if (res.projected_gradient_norm < opt.tolerance) {
      res.converged = true;
      break;
    }
    if (it > 0) {
      const Matrix s = u - prev_u;
      const Matrix y = grad - prev_grad;
      const double sy = (s.array() * y.array()).sum();
      if (sy > 0.0) step = (s.array() * s.array()).sum() / sy;
    }
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Matrix cand = detail::clip(u - step * grad, u_bound);
      const Matrix d = cand - u;
      const double decrease = (grad.array() * d.array()).sum();
      Matrix cand_states;
      const double jc = detail::open_loop_cost(modes, sc, cost, cand, &cand_states);
      if (jc <= j + 1e-4 * decrease) {
        prev_u = u;
        prev_grad = grad;
        u = cand;
        j = jc;
        states = std::move(cand_states);
        grad = detail::reduced_gradient(modes, sc, cost, u, states);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    res.iterations = it + 1;
    res.projected_gradient_norm = pg_norm(u, grad);
    if (!accepted) break;
  }
  if (res.projected_gradient_norm < opt.tolerance) res.converged = true;

  const int nu = modes.bus_count();
  Controller replay = [&u, nu](const Vector&, int, int k) { return Vector(u.col(k).head(nu)); };
  res.trajectory = simulate(modes, sc, replay, cost);
  return res;
}

// --- expert dataset -------------------------------------------------------

/// (x, u, q) pairs flattened over trajectories; column i of `states` and
/// `actions` belongs to trajectory traj_id[i] at step step[i].
struct ExpertDataset {
  Matrix states;
  Matrix actions;
  std::vector<int> modes;
  std::vector<int> traj_id;
  std::vector<int> step;
  std::vector<std::uint64_t> seeds;  // per trajectory
  std::uint64_t base_seed = 0;
  std::optional<double> u_bound;

  int size() const { return static_cast<int>(modes.size()); }
  int trajectories() const { return static_cast<int>(seeds.size()); }
};

struct DatasetOptions {
  int n_traj = 200;
  ScenarioOptions scenario;
  std::optional<double> u_bound;  // boxed expert when set
};

inline ExpertDataset build_dataset(const ModeSet& modes, const CostSpec& cost,
                                   const DatasetOptions& opt, std::uint64_t seed) {
  if (opt.n_traj < 1) throw std::invalid_argument("build_dataset: n_traj must be >= 1");
  const int horizon = opt.scenario.horizon_steps;
  const int total = opt.n_traj * horizon;
  ExpertDataset ds;
  ds.base_seed = seed;
  ds.u_bound = opt.u_bound;
  ds.states.resize(modes.state_dim(), total);
  ds.actions.resize(modes.bus_count(), total);
  ds.modes.reserve(static_cast<std::size_t>(total));
  ds.traj_id.reserve(static_cast<std::size_t>(total));
  ds.step.reserve(static_cast<std::size_t>(total));
  int col = 0;
  for (int t = 0; t < opt.n_traj; ++t) {
    const Scenario sc = batch_scenario(seed, t, modes, opt.scenario);
    const Trajectory traj = opt.u_bound ? lqr_solve_boxed(modes, sc, cost, *opt.u_bound).trajectory
                                        : lqr_solve(modes, sc, cost);
    ds.seeds.push_back(sc.seed);
    for (int k = 0; k < horizon; ++k, ++col) {
      ds.states.col(col) = traj.states.col(k);
      ds.actions.col(col) = traj.actions.col(k);
      ds.modes.push_back(sc.modes[static_cast<std::size_t>(k)]);
      ds.traj_id.push_back(t);
      ds.step.push_back(k);
    }
  }
  return ds;
}

}  // namespace freqguard
