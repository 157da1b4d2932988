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

// Common quadratic Lyapunov function and stabilizing linear gain for every
// inertia mode. In the variables X = P⁻¹, Y = K X the conditions
//
//   A_q X + X A_qᵀ + B_q Y + Yᵀ B_qᵀ ≺ 0  for all q,   X ≻ 0
//
// are linear. They are solved here by descending a smoothed eigenvalue
// penalty, and every certificate is re-checked exactly afterwards.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "freqguard/gridmodel.hpp"
#include "freqguard/rng.hpp"

namespace freqguard {

struct LyapunovCertificate {
  SymMatrix p;
  Matrix k;
  std::vector<double> margins;           // λ_max(A_cl,qᵀP + P A_cl,q)
  std::vector<double> discrete_margins;  // λ_max(A_d,clᵀ P A_d,cl - P), diagnostics only
  double min_p_eigenvalue = 0.0;
  bool valid = false;

  double worst_margin() const {
    return margins.empty() ? INFINITY : *std::max_element(margins.begin(), margins.end());
  }
};

struct CertificateCheck {
  std::vector<double> margins;
  std::vector<double> discrete_margins;
  double min_p_eigenvalue = 0.0;
  bool valid = false;
};

inline SymMatrix closed_loop_lyapunov_matrix(const Mode& m, const Matrix& k, const Matrix& p) {
  const Matrix acl = m.a + m.b * k;
  return SymMatrix(Matrix(acl.transpose() * p + p * acl));
}

/// Margins of (K, P) from scratch; valid iff every margin < 0 and P ≻ 0.
inline CertificateCheck verify_certificate(const Matrix& k, const SymMatrix& p,
                                           const ModeSet& modes) {
  CertificateCheck out;
  out.min_p_eigenvalue = min_eigenvalue(p);
  bool ok = out.min_p_eigenvalue > 0.0;
  for (const Mode& m : modes.modes()) {
    const double margin = max_eigenvalue(closed_loop_lyapunov_matrix(m, k, p.matrix()));
    out.margins.push_back(margin);
    ok = ok && margin < 0.0;
    const Matrix adcl = m.ad + m.bd * k;
    out.discrete_margins.push_back(max_eigenvalue(
        SymMatrix(Matrix(adcl.transpose() * p.matrix() * adcl - p.matrix()))));
  }
  out.valid = ok;
  return out;
}

inline CertificateCheck verify_certificate(const LyapunovCertificate& cert, const ModeSet& modes) {
  return verify_certificate(cert.k, cert.p, modes);
}

/// Diagonal state scaling d (x̃ = d ⊙ x) that balances Σ_q |A_q| in the
/// 1-norm sense (Osborne iteration). Used only to condition the descent.
inline Vector balancing_scales(const ModeSet& modes) {
  const int nx = modes.state_dim();
  Matrix agg = Matrix::Zero(nx, nx);
  for (const Mode& m : modes.modes()) agg += m.a.cwiseAbs();
  Vector d = Vector::Ones(nx);
  for (int sweep = 0; sweep < 50; ++sweep) {
    double worst = 0.0;
    for (int i = 0; i < nx; ++i) {
      double row = 0.0, col = 0.0;
      for (int j = 0; j < nx; ++j) {
        if (j == i) continue;
        row += agg(i, j) * d(i) / d(j);
        col += agg(j, i) * d(j) / d(i);
      }
      if (row <= 0.0 || col <= 0.0) continue;
      const double f = std::sqrt(col / row);
      d(i) *= f;
      worst = std::max(worst, std::abs(std::log(f)));
    }
    if (worst < 1e-10) break;
  }
  return d / d.minCoeff();
}

struct LyapunovSolverOptions {
  double margin_target = 1e-3;
  double x_floor = 1e-4;
  double learning_rate = 1e-2;
  double lr_decay = 0.9999;  // multiplicative, per iteration
  double smoothing = 100.0;  // softplus sharpness
  int max_iterations = 50000;
  std::uint64_t seed = 0;
  // Also require [[X, Zᵀ], [Z, X]] ≻ 0 with Z = A_d X + B_d Y for every mode,
  // i.e. a common Lyapunov decrease for the sampled closed loop. Target is
  // margin_target·dt.
  bool discrete_guard = true;
};

struct LyapunovSolution {
  Matrix x;  // SPD
  Matrix y;
  int iterations = 0;
  double worst_margin = 0.0;           // max_q λ_max in the original variables
  double worst_discrete_margin = 0.0;  // max_q λ_max(-S_q), guard only
  double seconds = 0.0;
};

class LyapunovSolverError : public std::runtime_error {
 public:
  LyapunovSolverError(int worst_mode, double worst_margin, const std::string& what)
      : std::runtime_error(what), worst_mode_(worst_mode), worst_margin_(worst_margin) {}
  int worst_mode() const { return worst_mode_; }
  double worst_margin() const { return worst_margin_; }

 private:
  int worst_mode_;
  double worst_margin_;
};

inline SymMatrix lmi_matrix(const Matrix& a, const Matrix& b, const Matrix& x, const Matrix& y) {
  const Matrix ax = a * x;
  const Matrix by = b * y;
  return SymMatrix(Matrix(ax + ax.transpose() + by + by.transpose()));
}

/// -[[X, Zᵀ], [Z, X]] with Z = A_d X + B_d Y; negative definite iff
/// (A_d + B_d Y X⁻¹)ᵀ X⁻¹ (A_d + B_d Y X⁻¹) ≺ X⁻¹.
inline SymMatrix discrete_lmi_matrix(const Matrix& ad, const Matrix& bd, const Matrix& x,
                                     const Matrix& y) {
  const Eigen::Index nx = x.rows();
  const Matrix z = ad * x + bd * y;
  Matrix s(2 * nx, 2 * nx);
  s << -x, -z.transpose(), -z, -x;
  return SymMatrix(s);
}

/// Feasible (X, Y) for every mode with margins ≤ -margin_target and
/// λ_min(X) ≥ x_floor.
///
/// The descent runs in balanced coordinates x̃ = T x (T = diag of
/// balancing_scales), with X̃ = G Gᵀ + x_floor·I and Y unconstrained, on
/// Σ_q Σ_i softplus(λ_i(M_q) + target). Eigenvalue gradients come from the
/// eigenvectors: ∂λ_i/∂M = v_i v_iᵀ. Updates use Adam moments on G and Y.
/// With the discrete guard the sampled-loop conditions (discrete_lmi_matrix)
/// join the penalty. Once every mode is feasible the pair is mapped back
/// and rescaled; the conditions are homogeneous in (X, Y), so rescaling
/// keeps K = Y X⁻¹.
inline LyapunovSolution solve_common_lyapunov(const ModeSet& modes,
                                              const LyapunovSolverOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const int nx = modes.state_dim();
  const int nu = modes.bus_count();
  const int p = modes.size();
  const Vector d = balancing_scales(modes);
  const Vector dinv = d.cwiseInverse();

  std::vector<Matrix> a(static_cast<std::size_t>(p)), b(static_cast<std::size_t>(p));
  std::vector<Matrix> ad(static_cast<std::size_t>(p)), bd(static_cast<std::size_t>(p));
  for (int q = 0; q < p; ++q) {
    a[q] = d.asDiagonal() * modes[q].a * dinv.asDiagonal();
    b[q] = d.asDiagonal() * modes[q].b;
    ad[q] = d.asDiagonal() * modes[q].ad * dinv.asDiagonal();
    bd[q] = d.asDiagonal() * modes[q].bd;
  }
  const double discrete_target = opt.margin_target * modes.dt();
  auto softplus_weights = [beta = opt.smoothing](const Vector& values, double target) {
    Vector w(values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      w(i) = 1.0 / (1.0 + std::exp(-beta * (values(i) + target)));  // softplus'
    }
    return w;
  };

  Rng rng(opt.seed);
  Matrix g = Matrix::Identity(nx, nx);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j <= i; ++j) g(i, j) += 1e-2 * rng.normal();
  Matrix y = Matrix::Zero(nu, nx);

  Matrix mg = Matrix::Zero(nx, nx), vg = Matrix::Zero(nx, nx);
  Matrix my = Matrix::Zero(nu, nx), vy = Matrix::Zero(nu, nx);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-12;

  auto to_original = [&](const Matrix& xs, const Matrix& ys) {
    return std::pair<Matrix, Matrix>(dinv.asDiagonal() * xs * dinv.asDiagonal(),
                                     ys * dinv.asDiagonal());
  };

  double lr = opt.learning_rate;
  int worst_q = 0;
  double worst = INFINITY;
  for (int it = 0; it <= opt.max_iterations; ++it) {
    const Matrix xs = g * g.transpose() + opt.x_floor * Matrix::Identity(nx, nx);
    Matrix grad_x = Matrix::Zero(nx, nx);
    Matrix grad_y = Matrix::Zero(nu, nx);
    double scaled_worst = -INFINITY, scaled_worst_d = -INFINITY;
    for (int q = 0; q < p; ++q) {
      const SymEigen eig = sym_eig(lmi_matrix(a[q], b[q], xs, y));
      scaled_worst = std::max(scaled_worst, eig.values(nx - 1));
      const Vector w = softplus_weights(eig.values, opt.margin_target);
      const Matrix wm = eig.vectors * w.asDiagonal() * eig.vectors.transpose();
      grad_x += a[q].transpose() * wm + wm * a[q];
      grad_y += 2.0 * b[q].transpose() * wm;
      if (!opt.discrete_guard) continue;
      // ∂λ/∂X and ∂λ/∂Y of -S through its blocks W11, W21, W22.
      const SymEigen de = sym_eig(discrete_lmi_matrix(ad[q], bd[q], xs, y));
      scaled_worst_d = std::max(scaled_worst_d, de.values(2 * nx - 1));
      const Vector wd = softplus_weights(de.values, discrete_target);
      const Matrix w2 = de.vectors * wd.asDiagonal() * de.vectors.transpose();
      const Matrix w21 = w2.bottomLeftCorner(nx, nx);
      const Matrix gx = -(w2.topLeftCorner(nx, nx) + w2.bottomRightCorner(nx, nx) +
                          2.0 * ad[q].transpose() * w21);
      grad_x += 0.5 * (gx + gx.transpose());
      grad_y -= 2.0 * bd[q].transpose() * w21;
    }

    if (scaled_worst <= -opt.margin_target &&
        (!opt.discrete_guard || scaled_worst_d <= -discrete_target)) {
      auto [xo, yo] = to_original(xs, y);
      worst = -INFINITY;
      for (int q = 0; q < p; ++q) {
        const double m = max_eigenvalue(lmi_matrix(modes[q].a, modes[q].b, xo, yo));
        if (m > worst) {
          worst = m;
          worst_q = q;
        }
      }
      double worst_d = -INFINITY;
      if (opt.discrete_guard) {
        for (int q = 0; q < p; ++q) {
          worst_d = std::max(worst_d, max_eigenvalue(discrete_lmi_matrix(modes[q].ad, modes[q].bd, xo, yo)));
        }
      }
      const double xmin = min_eigenvalue(SymMatrix(xo));
      if (worst < 0.0 && xmin > 0.0 && (!opt.discrete_guard || worst_d < 0.0)) {
        const double alpha = std::max({1.0, opt.x_floor / xmin, opt.margin_target / -worst});
        LyapunovSolution sol;
        sol.x = SymMatrix(Matrix(alpha * xo)).matrix();
        sol.y = alpha * yo;
        sol.iterations = it;
        sol.worst_margin = alpha * worst;
        sol.worst_discrete_margin = opt.discrete_guard ? alpha * worst_d : NAN;
        sol.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return sol;
      }
    }
    if (it == opt.max_iterations) {
      auto [xo, yo] = to_original(xs, y);
      worst = -INFINITY;
      for (int q = 0; q < p; ++q) {
        const double m = max_eigenvalue(lmi_matrix(modes[q].a, modes[q].b, xo, yo));
        if (m > worst) {
          worst = m;
          worst_q = q;
        }
      }
      break;
    }

    const Matrix grad_g = 2.0 * grad_x * g;
    const double t = static_cast<double>(it + 1);
    const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
    mg = kBeta1 * mg + (1 - kBeta1) * grad_g;
    vg = kBeta2 * vg + (1 - kBeta2) * grad_g.cwiseAbs2();
    my = kBeta1 * my + (1 - kBeta1) * grad_y;
    vy = kBeta2 * vy + (1 - kBeta2) * grad_y.cwiseAbs2();
    g.array() -= lr * (mg.array() / c1) / ((vg.array() / c2).sqrt() + kEps);
    y.array() -= lr * (my.array() / c1) / ((vy.array() / c2).sqrt() + kEps);
    lr *= opt.lr_decay;
  }
  throw LyapunovSolverError(worst_q, worst,
                            "common Lyapunov solver: iteration budget exhausted; worst mode " +
                                std::to_string(worst_q + 1) + " margin " + std::to_string(worst));
}

/// K = Y X⁻¹, P = X⁻¹ (symmetrized), margins recomputed from scratch.
inline LyapunovCertificate extract_certificate(const Matrix& x, const Matrix& y,
                                               const ModeSet& modes) {
  const Matrix xinv = inverse(x);  // throws with a condition estimate when near-singular
  LyapunovCertificate cert;
  cert.k = y * xinv;
  cert.p = SymMatrix(xinv);
  const CertificateCheck chk = verify_certificate(cert.k, cert.p, modes);
  cert.margins = chk.margins;
  cert.discrete_margins = chk.discrete_margins;
  cert.min_p_eigenvalue = chk.min_p_eigenvalue;
  cert.valid = chk.valid;
  return cert;
}

}  // namespace freqguard
