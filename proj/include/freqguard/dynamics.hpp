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

// Discrete-time rollouts of the switched system, randomized switching
// scenarios and the evaluation metrics (settling time, overshoot, cost).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "freqguard/gridmodel.hpp"
#include "freqguard/rng.hpp"

namespace freqguard {

/// Quadratic stage cost xᵀQx + uᵀRu. The terminal state is charged x_TᵀQx_T.
struct CostSpec {
  SymMatrix q;
  SymMatrix r;

  /// Q = diag(0·I, omega_weight·I), R = action_weight·I.
  static CostSpec frequency_weighted(int n_bus, double omega_weight = 5e4,
                                     double action_weight = 1.0) {
    Vector qd = Vector::Zero(2 * n_bus);
    qd.tail(n_bus).setConstant(omega_weight);
    return {SymMatrix::diagonal(qd), SymMatrix::diagonal(Vector::Constant(n_bus, action_weight))};
  }

  /// Q ⪰ 0 and R ≻ 0, checked through sym_eig.
  void validate() const {
    if (min_eigenvalue(q) < -1e-12 * std::max(1.0, q.frobenius())) {
      throw std::invalid_argument("cost spec: Q must be positive semidefinite");
    }
    if (!(min_eigenvalue(r) > 0.0)) {
      throw std::invalid_argument("cost spec: R must be positive definite");
    }
  }

  double stage(const Vector& x, const Vector& u) const {
    return x.dot(q.matrix() * x) + u.dot(r.matrix() * u);
  }
  double terminal(const Vector& x) const { return x.dot(q.matrix() * x); }
};

struct Scenario {
  Vector x0;
  std::vector<int> modes;  // q(k) for k = 0..horizon-1
  double dt = 1e-3;
  std::uint64_t seed = 0;

  int horizon() const { return static_cast<int>(modes.size()); }
};

/// states.col(k) is x_k for k = 0..T, actions.col(k) is u_k for k < T.
struct Trajectory {
  Matrix states;
  Matrix actions;
  std::vector<int> modes;
  std::vector<double> stage_costs;  // T stage terms followed by the terminal term
  double cost = 0.0;
  double dt = 1e-3;

  int horizon() const { return static_cast<int>(modes.size()); }
};

class SimulationDiverged : public std::runtime_error {
 public:
  SimulationDiverged(int step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Feedback law u = f(x, mode, step). A controller may keep internal state
/// (e.g. a mode estimator), so callers create one per rollout.
using Controller = std::function<Vector(const Vector& x, int mode, int step)>;

inline Controller zero_controller(int n_bus) {
  return [n_bus](const Vector&, int, int) { return Vector(Vector::Zero(n_bus)); };
}

inline Controller linear_controller(Matrix gain) {
  return [k = std::move(gain)](const Vector& x, int, int) { return Vector(k * x); };
}

inline void check_scenario(const ModeSet& modes, const Scenario& sc) {
  if (sc.x0.size() != modes.state_dim()) {
    throw std::invalid_argument("scenario: x0 dimension does not match the mode set");
  }
  if (std::abs(sc.dt - modes.dt()) > 1e-12 * modes.dt()) {
    throw std::invalid_argument("scenario: dt does not match the mode set discretization");
  }
  for (int q : sc.modes) {
    if (q < 0 || q >= modes.size()) throw std::invalid_argument("scenario: mode id out of range");
  }
}

/// Rolls x_{k+1} = A^d_{q(k)} x_k + B^d_{q(k)} u_k forward under `controller`.
inline Trajectory simulate(const ModeSet& modes, const Scenario& sc, const Controller& controller,
                           const CostSpec& cost) {
  check_scenario(modes, sc);
  const int horizon = sc.horizon();
  const int nx = modes.state_dim();
  const int nu = modes.bus_count();
  Trajectory traj;
  traj.dt = sc.dt;
  traj.modes = sc.modes;
  traj.states.resize(nx, horizon + 1);
  traj.actions.resize(nu, horizon);
  traj.stage_costs.reserve(static_cast<std::size_t>(horizon) + 1);
  traj.states.col(0) = sc.x0;
  double total = 0.0;
  for (int k = 0; k < horizon; ++k) {
    const Vector x = traj.states.col(k);
    const Vector u = controller(x, sc.modes[k], k);
    if (u.size() != nu || !u.allFinite()) {
      throw SimulationDiverged(k, "simulate: controller returned an invalid action at step " +
                                      std::to_string(k));
    }
    const Mode& m = modes[sc.modes[k]];
    traj.states.col(k + 1).noalias() = m.ad * x + m.bd * u;
    traj.actions.col(k) = u;
    const double c = cost.stage(x, u);
    traj.stage_costs.push_back(c);
    total += c;
    if (!traj.states.col(k + 1).allFinite()) {
      throw SimulationDiverged(k + 1, "simulate: non-finite state at step " +
                                          std::to_string(k + 1));
    }
  }
  const double terminal = cost.terminal(traj.states.col(horizon));
  traj.stage_costs.push_back(terminal);
  traj.cost = total + terminal;
  return traj;
}

struct ScenarioOptions {
  int horizon_steps = 1000;
  int switch_period_steps = 100;
  double init_dev_hz_lo = -0.3;
  double init_dev_hz_hi = 0.3;
  double nominal_freq_hz = 50.0;
};

/// Initial ω per bus uniform on the Hz range (converted to p.u.), θ = 0,
/// q(0) uniform, and every switch period the mode moves by -1, 0 or +1 with
/// equal probability, clamped to the valid range.
inline Scenario sample_scenario(std::uint64_t seed, const ModeSet& modes,
                                const ScenarioOptions& opt) {
  if (opt.switch_period_steps <= 0 || opt.horizon_steps <= 0 ||
      opt.horizon_steps % opt.switch_period_steps != 0) {
    throw std::invalid_argument("sample_scenario: switch period must divide the horizon");
  }
  Rng rng(seed);
  const int n = modes.bus_count();
  Scenario sc;
  sc.seed = seed;
  sc.dt = modes.dt();
  sc.x0 = Vector::Zero(2 * n);
  for (int i = 0; i < n; ++i) {
    sc.x0(n + i) = rng.uniform(opt.init_dev_hz_lo, opt.init_dev_hz_hi) / opt.nominal_freq_hz;
  }
  const int p = modes.size();
  int q = static_cast<int>(rng.below(static_cast<std::uint64_t>(p)));
  sc.modes.resize(static_cast<std::size_t>(opt.horizon_steps));
  for (int k = 0; k < opt.horizon_steps; ++k) {
    if (k > 0 && k % opt.switch_period_steps == 0) {
      const int move = static_cast<int>(rng.below(3)) - 1;
      q = std::clamp(q + move, 0, p - 1);
    }
    sc.modes[static_cast<std::size_t>(k)] = q;
  }
  return sc;
}

/// Scenario `index` of a batch seeded with `base_seed`.
inline Scenario batch_scenario(std::uint64_t base_seed, int index, const ModeSet& modes,
                               const ScenarioOptions& opt) {
  return sample_scenario(stream_seed(base_seed, static_cast<std::uint64_t>(index)), modes, opt);
}

struct Stat {
  double mean = 0.0;
  double std = 0.0;
};

inline Stat summarize(const std::vector<double>& v) {
  Stat s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double acc = 0.0;
    for (double x : v) acc += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(acc / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct TrajectoryMetrics {
  double settling_ms = 0.0;
  bool settled = true;
  double overshoot_hz = 0.0;
  double cost = 0.0;
};

struct Metrics {
  Stat settling_ms;
  Stat overshoot_hz;
  Stat avg_cost;
  int unsettled = 0;
  std::vector<TrajectoryMetrics> per_trajectory;
};

/// Settling: first step after which max_i |ω_i| stays below the threshold
/// for the rest of the horizon. Overshoot: max over time and buses of |ω|.
inline TrajectoryMetrics trajectory_metrics(const Trajectory& t, double settle_threshold_hz,
                                            double nominal_freq_hz = 50.0) {
  const int n = static_cast<int>(t.actions.rows());
  const int last = static_cast<int>(t.states.cols()) - 1;
  TrajectoryMetrics m;
  int last_above = -1;
  for (int k = 0; k <= last; ++k) {
    const double w = t.states.col(k).tail(n).cwiseAbs().maxCoeff() * nominal_freq_hz;
    m.overshoot_hz = std::max(m.overshoot_hz, w);
    if (w >= settle_threshold_hz) last_above = k;
  }
  if (last_above == last) {
    m.settled = false;
    m.settling_ms = t.horizon() * t.dt * 1e3;
  } else {
    m.settling_ms = (last_above + 1) * t.dt * 1e3;
  }
  m.cost = t.cost;
  return m;
}

inline Metrics compute_metrics(const std::vector<Trajectory>& batch, double settle_threshold_hz,
                               double nominal_freq_hz = 50.0) {
  if (batch.empty()) throw std::invalid_argument("compute_metrics: empty batch");
  Metrics out;
  std::vector<double> st, os, c;
  for (const Trajectory& t : batch) {
    const TrajectoryMetrics m = trajectory_metrics(t, settle_threshold_hz, nominal_freq_hz);
    if (!m.settled) ++out.unsettled;
    st.push_back(m.settling_ms);
    os.push_back(m.overshoot_hz);
    c.push_back(m.cost);
    out.per_trajectory.push_back(m);
  }
  out.settling_ms = summarize(st);
  out.overshoot_hz = summarize(os);
  out.avg_cost = summarize(c);
  return out;
}

}  // namespace freqguard
