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

// Shared fixtures and reference implementations for the test binaries.
// The references here are deliberately naive and independent of the
// library code they check.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "freqguard/gridmodel.hpp"
#include "freqguard/io.hpp"
#include "freqguard/lyapsynth.hpp"
#include "freqguard/numkernel.hpp"
#include "freqguard/rng.hpp"

namespace fgtest {

using freqguard::Matrix;
using freqguard::Rng;
using freqguard::Vector;

inline Matrix random_matrix(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.normal();
  return m;
}

inline Vector random_vector(Rng& rng, int n) { return random_matrix(rng, n, 1).col(0); }

inline Matrix random_symmetric(Rng& rng, int n) {
  const Matrix g = random_matrix(rng, n, n);
  return 0.5 * (g + g.transpose());
}

/// G Gᵀ + n·I.
inline Matrix random_spd(Rng& rng, int n) {
  const Matrix g = random_matrix(rng, n, n);
  return g * g.transpose() + n * Matrix::Identity(n, n);
}

using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

/// Cyclic Jacobi in long double; eigenvalues ascending.
inline std::vector<long double> jacobi_eigenvalues(const Matrix& m, int max_sweeps = 200) {
  const int n = static_cast<int>(m.rows());
  LMatrix a = m.cast<long double>();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    long double off = 0.0L;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-36L) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0L) continue;
        const long double theta = (a(q, q) - a(p, p)) / (2.0L * a(p, q));
        const long double t = (theta >= 0 ? 1.0L : -1.0L) /
                              (std::fabs(theta) + std::sqrt(theta * theta + 1.0L));
        const long double c = 1.0L / std::sqrt(t * t + 1.0L);
        const long double s = t * c;
        for (int k = 0; k < n; ++k) {
          const long double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const long double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<long double> ev(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

/// Plain Taylor series in long double with scaling and squaring; used as
/// the reference exponential.
inline Matrix taylor_expm(const Matrix& m, double scale, int terms = 40) {
  const int n = static_cast<int>(m.rows());
  LMatrix a = (m * scale).cast<long double>();
  long double norm = 0.0L;
  for (int j = 0; j < n; ++j) {
    long double col = 0.0L;
    for (int i = 0; i < n; ++i) col += std::fabs(a(i, j));
    norm = std::max(norm, col);
  }
  int squarings = 0;
  while (norm > 0.25L) {
    norm /= 2.0L;
    ++squarings;
  }
  a /= std::pow(2.0L, static_cast<long double>(squarings));
  LMatrix result = LMatrix::Identity(n, n);
  LMatrix term = LMatrix::Identity(n, n);
  for (int k = 1; k <= terms; ++k) {
    term = (term * a) / static_cast<long double>(k);
    result += term;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result.cast<double>();
}

inline double rel_err(const Matrix& got, const Matrix& want) {
  const double d = want.norm();
  return (got - want).norm() / (d > 0.0 ? d : 1.0);
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

/// Two buses joined by one line of susceptance b.
inline freqguard::GridSpec two_bus(std::vector<double> inertia = {1.0}, double reactance = 1e-3,
                                   double damping = 0.5) {
  freqguard::GridSpec s;
  s.n = 2;
  s.buses = {{damping, 1.0}, {damping, 1.0}};
  s.edges = {{0, 1, reactance, 0.0}};
  s.inertia_s = std::move(inertia);
  return s;
}

inline freqguard::GridSpec bundled_grid() {
  return freqguard::io::load_grid_spec(std::string(FREQGUARD_DATA_DIR) + "/kundur12.json");
}

/// Solved and extracted certificate; the caller checks validity.
inline freqguard::LyapunovCertificate certify(const freqguard::ModeSet& modes) {
  const auto sol = freqguard::solve_common_lyapunov(modes, {});
  return freqguard::extract_certificate(sol.x, sol.y, modes);
}

}  // namespace fgtest
