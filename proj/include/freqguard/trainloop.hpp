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

// Imitation training of the projected policy. Each batch takes one step on
// the MLP residual loss
//
//   ‖u_ψ(X) - U‖_F / N
//
// and then n_linear_steps on (K, factor) with
//
//   c1‖K‖_F + c2‖K X‖_F / N + ‖u_ψ(X) - U‖_F / N + c3 Σ_q Σ_i max(0, λ_i(M_q)),
//   M_q = A_cl,qᵀP + P A_cl,q.
//
// The linear parameters live in balanced coordinates (K = K̃T, factor = T L̃
// with T diagonal) and the factor diagonal is stored as its logarithm.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "freqguard/policy.hpp"

namespace freqguard {

struct TrainConfig {
  double c1 = 0.1;
  double c2 = 0.01;
  double c3 = 500.0;
  double eta1 = 1e-3;
  double eta2 = 1e-2;
  int n_epochs = 300;
  int n_batches = 300;
  int batch_size = 256;
  int n_linear_steps = 5;
  std::uint64_t seed = 0;
  bool adaptive = false;   // Adam instead of plain gradient steps
  bool train_mlp = true;   // false freezes the MLP (linear-only training)
  std::vector<int> hidden{300, 400};
  double convergence_tol = 1e-6;  // relative change over convergence_window epochs
  int convergence_window = 10;
  int checkpoint_every = 0;  // epochs; 0 disables

  void validate() const {
    if (!(c1 >= 0.0 && c2 >= 0.0 && c3 >= 0.0)) throw std::invalid_argument("train config: weights must be >= 0");
    if (!(eta1 > 0.0 && eta2 > 0.0)) throw std::invalid_argument("train config: learning rates must be > 0");
    if (n_epochs < 0 || n_batches < 1 || batch_size < 1 || n_linear_steps < 0) {
      throw std::invalid_argument("train config: counts out of range");
    }
  }

  /// Full-size run with an adaptive optimizer.
  static TrainConfig full() {
    TrainConfig c;
    c.adaptive = true;
    return c;
  }
  /// 50 x 50 batches.
  static TrainConfig desk() {
    TrainConfig c = full();
    c.n_epochs = 50;
    c.n_batches = 50;
    return c;
  }
};

struct TrainReport {
  std::vector<double> residual_loss;  // per epoch, mean over batches
  std::vector<double> linear_loss;
  std::vector<double> penalty;
  std::vector<double> margins;  // of the shipped (K, P)
  std::vector<double> trained_margins;
  bool rejected = false;
  bool converged = false;
  int epochs_run = 0;
  double seconds = 0.0;
};

struct Batch {
  Matrix x;  // 2n x N
  Matrix u;  // n x N
  std::vector<int> q;

  int size() const { return static_cast<int>(q.size()); }
};

inline Batch make_batch(const ExpertDataset& ds, const std::vector<int>& idx) {
  Batch b;
  b.x.resize(ds.states.rows(), static_cast<Eigen::Index>(idx.size()));
  b.u.resize(ds.actions.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    b.x.col(static_cast<Eigen::Index>(i)) = ds.states.col(idx[i]);
    b.u.col(static_cast<Eigen::Index>(i)) = ds.actions.col(idx[i]);
    b.q.push_back(ds.modes[static_cast<std::size_t>(idx[i])]);
  }
  return b;
}

/// Per-sample quantities of the projected action for fixed raw outputs.
struct ProjectedBatch {
  Matrix u;       // actions
  Matrix raw;     // MLP outputs
  Matrix g;       // per-sample g
  Vector lambda;  // 0 when inactive
  std::vector<char> active;
  std::vector<char> zero;
};

inline ProjectedBatch projected_actions(const Matrix& k, const Matrix& p, const Matrix& raw,
                                        const Batch& b, const ModeSet& modes, double epsilon) {
  const int n = modes.bus_count();
  const int m = b.size();
  std::vector<Matrix> acl(static_cast<std::size_t>(modes.size()));
  for (int q = 0; q < modes.size(); ++q) acl[q] = modes[q].a + modes[q].b * k;
  ProjectedBatch out;
  out.raw = raw;
  out.u.resize(n, m);
  out.g = Matrix::Zero(n, m);
  out.lambda = Vector::Zero(m);
  out.active.assign(static_cast<std::size_t>(m), 0);
  out.zero.assign(static_cast<std::size_t>(m), 0);
  for (int c = 0; c < m; ++c) {
    const Vector x = b.x.col(c);
    if (x.norm() < kZeroStateTol) {
      out.zero[c] = 1;
      out.u.col(c).setZero();
      continue;
    }
    const int q = b.q[static_cast<std::size_t>(c)];
    const Vector px = p * x;
    const double v = 2.0 * px.dot(acl[q] * x);
    const Vector g = 2.0 * modes[q].b.transpose() * px;
    const Projection pr = project_detail(raw.col(c), v, g, epsilon);
    out.g.col(c) = g;
    out.lambda(c) = pr.lambda;
    out.active[c] = pr.active ? 1 : 0;
    out.u.col(c) = k * x + pr.value;
  }
  return out;
}

struct ResidualLoss {
  double value = 0.0;
  MlpGrad grad;
};

/// ‖u_ψ(X) - U‖_F / N with gradients through the projection: I - ggᵀ/gᵀg
/// where the constraint is active, identity otherwise (including the kink).
inline ResidualLoss residual_loss(const PolicyParams& params, const Batch& b,
                                  const ModeSet& modes) {
  if (b.size() == 0) throw std::invalid_argument("residual_loss: empty batch");
  const Matrix p = params.p().matrix();
  MlpCache cache;
  const Matrix raw = mlp_forward(params.mlp, b.x, &cache);
  const ProjectedBatch pb = projected_actions(params.k, p, raw, b, modes, params.epsilon);
  const Matrix err = pb.u - b.u;
  const double nrm = err.norm();
  const double m = static_cast<double>(b.size());
  ResidualLoss out;
  out.value = nrm / m;
  out.grad = MlpGrad::zeros_like(params.mlp);
  if (nrm == 0.0) return out;
  Matrix d_raw = err / (nrm * m);
  for (int c = 0; c < b.size(); ++c) {
    if (pb.zero[c]) {
      d_raw.col(c).setZero();
    } else if (pb.active[c]) {
      const Vector g = pb.g.col(c);
      d_raw.col(c) -= (g.dot(d_raw.col(c)) / g.squaredNorm()) * g;
    }
  }
  mlp_backward(params.mlp, cache, d_raw, out.grad);
  return out;
}

struct LinearLoss {
  double value = 0.0;
  double imitation = 0.0;
  double penalty = 0.0;  // Σ_q Σ_i max(0, λ_i), unweighted
  Matrix grad_k;
  Matrix grad_chol;  // lower triangular
};

/// Eigenvalue penalty Σ_q Σ_i max(0, λ_i(A_cl,qᵀP + P A_cl,q)) and its
/// gradients: with W = Σ_{λ_i>0} v_i v_iᵀ, ∂/∂K = 2BᵀPW and ∂/∂P = A_cl W + W A_clᵀ.
inline double stability_penalty(const Matrix& k, const Matrix& p, const ModeSet& modes,
                                Matrix* grad_k, Matrix* grad_p) {
  const int nx = modes.state_dim();
  double total = 0.0;
  for (const Mode& m : modes.modes()) {
    const Matrix acl = m.a + m.b * k;
    const SymEigen eig = sym_eig(SymMatrix(Matrix(acl.transpose() * p + p * acl)));
    Matrix w = Matrix::Zero(nx, nx);
    bool any = false;
    for (int i = 0; i < nx; ++i) {
      if (eig.values(i) > 0.0) {
        total += eig.values(i);
        w.noalias() += eig.vectors.col(i) * eig.vectors.col(i).transpose();
        any = true;
      }
    }
    if (!any) continue;
    if (grad_k) *grad_k += 2.0 * m.b.transpose() * p * w;
    if (grad_p) *grad_p += acl * w + w * acl.transpose();
  }
  return total;
}

/// Loss on (K, factor) with the MLP outputs `raw` held fixed.
inline LinearLoss linear_loss(const PolicyParams& params, const Batch& b, const ModeSet& modes,
                              const TrainConfig& cfg, const Matrix& raw) {
  if (b.size() == 0) throw std::invalid_argument("linear_loss: empty batch");
  const int nu = modes.bus_count(), nx = modes.state_dim();
  const double m = static_cast<double>(b.size());
  const Matrix& k = params.k;
  const Matrix p = params.p().matrix();
  LinearLoss out;
  out.grad_k = Matrix::Zero(nu, nx);
  Matrix gamma = Matrix::Zero(nx, nx);  // ∂loss/∂P

  const double k_norm = k.norm();
  out.value += cfg.c1 * k_norm;
  if (k_norm > 0.0) out.grad_k += cfg.c1 / k_norm * k;

  const Matrix kx = k * b.x;
  const double kx_norm = kx.norm();
  out.value += cfg.c2 * kx_norm / m;
  if (kx_norm > 0.0) out.grad_k += cfg.c2 / (m * kx_norm) * kx * b.x.transpose();

  const ProjectedBatch pb = projected_actions(k, p, raw, b, modes, params.epsilon);
  const Matrix err = pb.u - b.u;
  const double e_norm = err.norm();
  out.imitation = e_norm / m;
  out.value += out.imitation;
  if (e_norm > 0.0) {
    std::vector<Matrix> acl(static_cast<std::size_t>(modes.size()));
    for (int q = 0; q < modes.size(); ++q) acl[q] = modes[q].a + modes[q].b * k;
    for (int c = 0; c < b.size(); ++c) {
      if (pb.zero[c]) continue;
      const Vector x = b.x.col(c);
      const Vector r = err.col(c) / (e_norm * m);
      out.grad_k.noalias() += r * x.transpose();
      if (!pb.active[c]) continue;
      const int q = b.q[static_cast<std::size_t>(c)];
      const Vector g = pb.g.col(c);
      const double gg = g.squaredNorm();
      const double lam = pb.lambda(c);
      const double rg = r.dot(g) / gg;
      const Vector c_g = -rg * pb.raw.col(c) + 2.0 * lam * rg * g - lam * r;
      const double c_v = -rg;
      gamma.noalias() += 2.0 * (modes[q].b * c_g) * x.transpose();
      gamma.noalias() += (2.0 * c_v) * x * (acl[q] * x).transpose();
      out.grad_k.noalias() += c_v * g * x.transpose();
    }
  }

  Matrix pen_k = Matrix::Zero(nu, nx), pen_p = Matrix::Zero(nx, nx);
  out.penalty = stability_penalty(k, p, modes, &pen_k, &pen_p);
  out.value += cfg.c3 * out.penalty;
  out.grad_k += cfg.c3 * pen_k;
  gamma += cfg.c3 * pen_p;

  out.grad_chol = ((gamma + gamma.transpose()) * params.chol).triangularView<Eigen::Lower>();
  return out;
}

namespace detail {

/// Adam or plain gradient descent on one matrix.
class MatrixStep {
 public:
  MatrixStep(Eigen::Index rows, Eigen::Index cols, double lr, bool adaptive)
      : lr_(lr), adaptive_(adaptive), m_(Matrix::Zero(rows, cols)), v_(Matrix::Zero(rows, cols)) {}

  void apply(Matrix& param, const Matrix& grad) {
    if (!adaptive_) {
      param -= lr_ * grad;
      return;
    }
    ++t_;
    m_ = 0.9 * m_ + 0.1 * grad;
    v_ = 0.999 * v_ + 0.001 * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(0.9, t_), c2 = 1.0 - std::pow(0.999, t_);
    param.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + 1e-8);
  }

 private:
  double lr_;
  bool adaptive_;
  int t_ = 0;
  Matrix m_, v_;
};

}  // namespace detail

/// Scales used for the balanced parameterization.
inline Vector linear_coordinate_scales(const ModeSet& modes) { return balancing_scales(modes); }

/// MLP for a grid with inputs scaled by the dataset's per-coordinate std.
inline MlpParams init_residual_mlp(const ExpertDataset& ds, const std::vector<int>& hidden,
                                   Rng& rng) {
  std::vector<int> sizes{static_cast<int>(ds.states.rows())};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(static_cast<int>(ds.actions.rows()));
  MlpParams mlp = MlpParams::init(sizes, rng);
  const double count = static_cast<double>(ds.states.cols());
  const Vector mean = ds.states.rowwise().mean();
  for (Eigen::Index i = 0; i < ds.states.rows(); ++i) {
    const double var = (ds.states.row(i).array() - mean(i)).square().sum() / std::max(1.0, count - 1.0);
    const double sd = std::sqrt(var);
    mlp.input_scale(i) = sd > 0.0 ? 1.0 / sd : 1.0;
  }
  return mlp;
}

using CheckpointFn = std::function<void(int epoch, const PolicyParams&)>;

/// Nested loop: epochs → batches → one MLP step (η1) → n_linear_steps
/// steps on (K, factor) (η2). The trained (K, P) is verified afterwards; if
/// it fails, the warm start's (K, P) is shipped with the trained MLP and the
/// report is marked rejected.
inline PolicyParams train(const ExpertDataset& ds, const ModeSet& modes,
                          const LyapunovCertificate& warm_start, const TrainConfig& cfg,
                          TrainReport* report = nullptr, const CheckpointFn& checkpoint = {},
                          const MlpParams* initial_mlp = nullptr, double epsilon = kDefaultEpsilon) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  if (ds.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (ds.states.rows() != modes.state_dim() || ds.actions.rows() != modes.bus_count()) {
    throw std::invalid_argument("train: dataset dimensions do not match the mode set");
  }
  if (!warm_start.valid) throw std::invalid_argument("train: warm start certificate is not valid");

  Rng rng(cfg.seed);
  MlpParams mlp;
  if (initial_mlp) {
    mlp = *initial_mlp;
  } else if (cfg.train_mlp) {
    mlp = init_residual_mlp(ds, cfg.hidden, rng);
  } else {
    std::vector<int> sizes{modes.state_dim()};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(modes.bus_count());
    mlp = MlpParams::zeros(sizes);
  }
  PolicyParams params = PolicyParams::from_certificate(warm_start, std::move(mlp), epsilon);
  const PolicyParams warm = params;

  const int nx = modes.state_dim();
  const Vector t = linear_coordinate_scales(modes);
  const Vector tinv = t.cwiseInverse();
  Matrix k_tilde = params.k * tinv.asDiagonal();
  Matrix l_tilde = tinv.asDiagonal() * params.chol;
  Matrix log_diag(nx, 1);
  for (int i = 0; i < nx; ++i) log_diag(i) = std::log(l_tilde(i, i));
  Matrix off = l_tilde.triangularView<Eigen::StrictlyLower>();

  auto assemble = [&]() {
    params.k = k_tilde * t.asDiagonal();
    Matrix l = off;
    for (int i = 0; i < nx; ++i) l(i, i) = std::exp(log_diag(i));
    params.chol = t.asDiagonal() * l;
  };

  MlpOptimizer mlp_opt(params.mlp, cfg.eta1, cfg.adaptive);
  detail::MatrixStep k_opt(k_tilde.rows(), k_tilde.cols(), cfg.eta2, cfg.adaptive);
  detail::MatrixStep off_opt(nx, nx, cfg.eta2, cfg.adaptive);
  detail::MatrixStep diag_opt(nx, 1, cfg.eta2, cfg.adaptive);

  TrainReport rep;
  std::vector<int> order(static_cast<std::size_t>(ds.size()));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  auto next_batch = [&]() {
    std::vector<int> idx;
    const auto want = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size());
    while (idx.size() < want) {
      if (cursor >= order.size()) {
        detail::shuffle(order, rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    return make_batch(ds, idx);
  };

  for (int ep = 0; ep < cfg.n_epochs; ++ep) {
    // A fresh permutation per epoch: batches are drawn without replacement.
    cursor = order.size();
    double res_sum = 0.0, lin_sum = 0.0, pen_sum = 0.0;
    for (int bi = 0; bi < cfg.n_batches; ++bi) {
      const Batch b = next_batch();
      if (cfg.train_mlp) {
        const ResidualLoss rl = residual_loss(params, b, modes);
        res_sum += rl.value;
        mlp_opt.step(params.mlp, rl.grad);
      }
      const Matrix raw = mlp_forward(params.mlp, b.x);
      LinearLoss ll;
      for (int s = 0; s < cfg.n_linear_steps; ++s) {
        ll = linear_loss(params, b, modes, cfg, raw);
        const Matrix g_kt = ll.grad_k * t.asDiagonal();
        const Matrix g_lt = t.asDiagonal() * ll.grad_chol;
        Matrix g_diag(nx, 1);
        for (int i = 0; i < nx; ++i) g_diag(i) = g_lt(i, i) * std::exp(log_diag(i));
        const Matrix g_off = g_lt.triangularView<Eigen::StrictlyLower>();
        k_opt.apply(k_tilde, g_kt);
        off_opt.apply(off, g_off);
        diag_opt.apply(log_diag, g_diag);
        assemble();
      }
      if (!cfg.train_mlp) {
        res_sum += cfg.n_linear_steps > 0 ? ll.imitation : residual_loss(params, b, modes).value;
      }
      lin_sum += ll.value;
      pen_sum += ll.penalty;
    }
    const double nb = static_cast<double>(cfg.n_batches);
    rep.residual_loss.push_back(res_sum / nb);
    rep.linear_loss.push_back(lin_sum / nb);
    rep.penalty.push_back(pen_sum / nb);
    rep.epochs_run = ep + 1;
    if (!params.k.allFinite() || !params.chol.allFinite() || !params.mlp.all_finite()) {
      throw std::runtime_error("train: parameters became non-finite at epoch " + std::to_string(ep + 1));
    }
    if (checkpoint && cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0) {
      checkpoint(ep + 1, params);
    }
    const int w = cfg.convergence_window;
    if (w > 0 && ep + 1 > w) {
      const double now = rep.residual_loss.back();
      const double then = rep.residual_loss[rep.residual_loss.size() - 1 - static_cast<std::size_t>(w)];
      if (std::abs(now - then) <= cfg.convergence_tol * std::max(std::abs(then), 1e-300)) {
        rep.converged = true;
        break;
      }
    }
  }

  const CertificateCheck chk = verify_certificate(params.k, params.p(), modes);
  rep.trained_margins = chk.margins;
  if (!chk.valid) {
    rep.rejected = true;
    params.k = warm.k;
    params.chol = warm.chol;
    rep.margins = verify_certificate(params.k, params.p(), modes).margins;
  } else {
    rep.margins = chk.margins;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (report) *report = std::move(rep);
  return params;
}

}  // namespace freqguard
