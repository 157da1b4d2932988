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

// Swing-equation network model. The state is x = [θ; ω] with θ in radians
// and ω in per-unit of the nominal frequency; the input u is the per-bus
// power injection. For inertia mode q
//
//   ẋ = [[0, I], [-M_q⁻¹L, -M_q⁻¹D]] x + [0; M_q⁻¹] u.
//
// Mode indices are 0-based in the API and 1-based in every file format.

#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "freqguard/numkernel.hpp"

namespace freqguard {

class GridSpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Bus {
  double damping = 0.5;      // p.u. power per p.u. frequency
  double rated_power = 1.0;  // p.u.; only used without the uniform-inertia flag
};

/// Transmission line between buses `from` and `to` (0-based). Lines are
/// treated as purely inductive: susceptance = 1/reactance, resistance is
/// carried for documentation only.
struct Line {
  int from = 0;
  int to = 0;
  double reactance_pu = 1e-3;
  double resistance_pu = 0.0;

  double susceptance() const { return 1.0 / reactance_pu; }
};

struct GridSpec {
  int n = 0;
  double nominal_freq_hz = 50.0;
  std::vector<Bus> buses;
  std::vector<Line> edges;
  std::vector<double> inertia_s;  // h_q, strictly increasing
  bool uniform_inertia = true;

  /// Checks every structural invariant except connectivity, which
  /// build_laplacian reports with the offending component.
  void validate() const {
    if (n < 1) throw GridSpecError("grid spec: n must be >= 1");
    if (static_cast<int>(buses.size()) != n) {
      throw GridSpecError("grid spec: expected " + std::to_string(n) + " buses, got " +
                          std::to_string(buses.size()));
    }
    if (!(nominal_freq_hz > 0.0)) throw GridSpecError("grid spec: nominal_freq_hz must be > 0");
    for (int i = 0; i < n; ++i) {
      if (!(buses[i].damping > 0.0)) {
        throw GridSpecError("grid spec: bus " + std::to_string(i + 1) + " damping must be > 0");
      }
      if (!(buses[i].rated_power > 0.0)) {
        throw GridSpecError("grid spec: bus " + std::to_string(i + 1) +
                            " rated_power must be > 0");
      }
    }
    std::set<std::pair<int, int>> seen;
    for (const Line& e : edges) {
      if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n) {
        throw GridSpecError("grid spec: edge references unknown bus");
      }
      if (e.from == e.to) {
        throw GridSpecError("grid spec: self-loop at bus " + std::to_string(e.from + 1));
      }
      if (!(e.reactance_pu > 0.0) || !std::isfinite(e.reactance_pu)) {
        throw GridSpecError("grid spec: edge " + std::to_string(e.from + 1) + "-" +
                            std::to_string(e.to + 1) + " needs reactance_pu > 0");
      }
      const auto key = std::minmax(e.from, e.to);
      if (!seen.insert({key.first, key.second}).second) {
        throw GridSpecError("grid spec: duplicate edge " + std::to_string(key.first + 1) + "-" +
                            std::to_string(key.second + 1));
      }
    }
    if (inertia_s.empty()) throw GridSpecError("grid spec: at least one inertia mode required");
    for (std::size_t q = 0; q < inertia_s.size(); ++q) {
      if (!(inertia_s[q] > 0.0)) throw GridSpecError("grid spec: inertia constants must be > 0");
      if (q > 0 && !(inertia_s[q] > inertia_s[q - 1])) {
        throw GridSpecError("grid spec: inertia constants must be strictly increasing");
      }
    }
  }

  Vector damping() const {
    Vector d(n);
    for (int i = 0; i < n; ++i) d(i) = buses[i].damping;
    return d;
  }
};

/// Network Laplacian L with L_ii = Σ_j b_ij and L_ij = -b_ij.
inline SymMatrix build_laplacian(const GridSpec& spec) {
  spec.validate();
  const int n = spec.n;
  Matrix l = Matrix::Zero(n, n);
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (const Line& e : spec.edges) {
    const double b = e.susceptance();
    l(e.from, e.to) -= b;
    l(e.to, e.from) -= b;
    adj[e.from].push_back(e.to);
    adj[e.to].push_back(e.from);
  }
  // Diagonal from the off-diagonal entries so that row sums are exactly zero.
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) s -= l(i, j);
    l(i, i) = s;
  }

  std::vector<char> reached(static_cast<std::size_t>(n), 0);
  std::vector<int> stack{0};
  reached[0] = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : adj[v]) {
      if (!reached[w]) {
        reached[w] = 1;
        stack.push_back(w);
      }
    }
  }
  std::ostringstream missing;
  bool disconnected = false;
  for (int i = 0; i < n; ++i) {
    if (!reached[i]) {
      missing << (disconnected ? ", " : "") << (i + 1);
      disconnected = true;
    }
  }
  if (disconnected) {
    throw GridSpecError("grid spec: graph is disconnected; buses unreachable from bus 1: " +
                        missing.str());
  }
  return SymMatrix(l);
}

struct Mode {
  double inertia_s = 0.0;
  Vector inertia;  // diagonal of M_q
  Matrix a;        // continuous, 2n x 2n
  Matrix b;        // continuous, 2n x n
  Matrix ad;       // zero-order-hold discrete pair at step dt
  Matrix bd;
};

/// Immutable after construction.
class ModeSet {
 public:
  ModeSet() = default;
  ModeSet(SymMatrix laplacian, Vector damping, double dt, std::vector<Mode> modes)
      : laplacian_(std::move(laplacian)),
        damping_(std::move(damping)),
        dt_(dt),
        modes_(std::move(modes)) {}

  int bus_count() const { return static_cast<int>(damping_.size()); }
  int state_dim() const { return 2 * bus_count(); }
  int size() const { return static_cast<int>(modes_.size()); }
  double dt() const { return dt_; }
  const SymMatrix& laplacian() const { return laplacian_; }
  const Vector& damping() const { return damping_; }
  const Mode& operator[](int q) const { return modes_.at(static_cast<std::size_t>(q)); }
  const std::vector<Mode>& modes() const { return modes_; }

 private:
  SymMatrix laplacian_;
  Vector damping_;
  double dt_ = 0.0;
  std::vector<Mode> modes_;
};

/// Continuous pair (A, B) for the given inertia diagonal.
inline std::pair<Matrix, Matrix> continuous_pair(const SymMatrix& laplacian,
                                                 const Vector& damping,
                                                 const Vector& inertia) {
  const Eigen::Index n = damping.size();
  Matrix a = Matrix::Zero(2 * n, 2 * n);
  Matrix b = Matrix::Zero(2 * n, n);
  a.topRightCorner(n, n).setIdentity();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double inv_m = 1.0 / inertia(i);
    for (Eigen::Index j = 0; j < n; ++j) a(n + i, j) = -inv_m * laplacian(i, j);
    a(n + i, n + i) = -inv_m * damping(i);
    b(n + i, i) = inv_m;
  }
  return {a, b};
}

/// Exact zero-order hold via exp([[A, B], [0, 0]]·dt) = [[A_d, B_d], [0, I]].
inline std::pair<Matrix, Matrix> zoh_discretize(const Matrix& a, const Matrix& b, double dt) {
  const Eigen::Index nx = a.rows();
  const Eigen::Index nu = b.cols();
  Matrix aug = Matrix::Zero(nx + nu, nx + nu);
  aug.topLeftCorner(nx, nx) = a;
  aug.topRightCorner(nx, nu) = b;
  const Matrix e = expm(aug, dt);
  return {e.topLeftCorner(nx, nx), e.topRightCorner(nx, nu)};
}

/// Builds every inertia mode. With `uniform_inertia` the inertia matrix is
/// h_q·I; otherwise m_{q,i} = 2 h_q S_rated,i / ω_s with ω_s in Hz.
inline ModeSet build_modes(const GridSpec& spec, const std::vector<double>& inertia_constants,
                           double dt, bool uniform_inertia) {
  if (!(dt > 0.0)) throw GridSpecError("build_modes: dt must be > 0");
  if (inertia_constants.empty()) throw GridSpecError("build_modes: no inertia constants");
  for (double h : inertia_constants) {
    if (!(h > 0.0)) throw GridSpecError("build_modes: inertia constants must be > 0");
  }
  SymMatrix lap = build_laplacian(spec);
  const Vector damping = spec.damping();
  std::vector<Mode> modes;
  modes.reserve(inertia_constants.size());
  for (double h : inertia_constants) {
    Mode m;
    m.inertia_s = h;
    m.inertia.resize(spec.n);
    for (int i = 0; i < spec.n; ++i) {
      m.inertia(i) = uniform_inertia
                         ? h
                         : 2.0 * h * spec.buses[i].rated_power / spec.nominal_freq_hz;
    }
    std::tie(m.a, m.b) = continuous_pair(lap, damping, m.inertia);
    std::tie(m.ad, m.bd) = zoh_discretize(m.a, m.b, dt);
    modes.push_back(std::move(m));
  }
  return ModeSet(std::move(lap), damping, dt, std::move(modes));
}

inline ModeSet build_modes(const GridSpec& spec, double dt) {
  return build_modes(spec, spec.inertia_s, dt, spec.uniform_inertia);
}

}  // namespace freqguard
