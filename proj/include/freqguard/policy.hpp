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

// Combined controller u = Kx + Π[π(x)], where π is the residual MLP and Π
// is the minimal-norm correction onto the half-space
//
//   V_lin(x, q) + g(x, q)ᵀ ξ ≤ -ε,
//   V_lin = xᵀ(A_clᵀP + P A_cl)x,   g = 2 BᵀP x,
//
// so the Lie derivative of V = xᵀPx stays below -ε for the active mode.
// Also holds the mode estimator used when the mode is not observed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "freqguard/dynamics.hpp"
#include "freqguard/lqrgen.hpp"
#include "freqguard/lyapsynth.hpp"
#include "freqguard/mlp.hpp"

namespace freqguard {

inline constexpr double kZeroStateTol = 1e-9;
inline constexpr double kGradTol = 1e-12;  // on ‖g‖²
inline constexpr double kFeasibilitySlack = 1e-9;
// Projection slack. Must stay small against V_lin near the settling band,
// otherwise the projection itself drives a limit cycle.
inline constexpr double kDefaultEpsilon = 1e-7;

struct PolicyParams {
  Matrix k;     // n x 2n
  Matrix chol;  // lower triangular, positive diagonal; P = chol·cholᵀ
  MlpParams mlp;
  double epsilon = kDefaultEpsilon;
  std::optional<double> u_bound;

  SymMatrix p() const { return SymMatrix(Matrix(chol * chol.transpose())); }

  void validate(const ModeSet& modes) const {
    const int nx = modes.state_dim(), nu = modes.bus_count();
    if (k.rows() != nu || k.cols() != nx) throw std::invalid_argument("policy: K has wrong shape");
    if (chol.rows() != nx || chol.cols() != nx) {
      throw std::invalid_argument("policy: Cholesky factor has wrong shape");
    }
    for (int i = 0; i < nx; ++i) {
      if (!(chol(i, i) > 0.0)) throw std::invalid_argument("policy: factor diagonal must be > 0");
      for (int j = i + 1; j < nx; ++j)
        if (chol(i, j) != 0.0) throw std::invalid_argument("policy: factor must be lower triangular");
    }
    if (mlp.input_dim() != nx || mlp.output_dim() != nu) {
      throw std::invalid_argument("policy: MLP shape does not match the grid");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("policy: epsilon must be > 0");
    if (u_bound && !(*u_bound > 0.0)) throw std::invalid_argument("policy: u_bound must be > 0");
    if (!k.allFinite() || !chol.allFinite() || !mlp.all_finite()) {
      throw std::invalid_argument("policy: non-finite parameters");
    }
  }

  /// Policy seeded from a certificate with a given MLP.
  static PolicyParams from_certificate(const LyapunovCertificate& cert, MlpParams mlp,
                                       double epsilon = kDefaultEpsilon) {
    PolicyParams p;
    p.k = cert.k;
    p.chol = cholesky(cert.p);
    p.mlp = std::move(mlp);
    p.epsilon = epsilon;
    return p;
  }
};

struct StabilityTerms {
  double v_lin = 0.0;
  Vector g;
};

/// V_lin = 2 (Px)ᵀ A_cl x and g = 2 BᵀPx with the continuous pair of mode q.
inline StabilityTerms stability_terms(const Vector& x, int q, const Matrix& k, const Matrix& p,
                                      const ModeSet& modes) {
  const Mode& m = modes[q];
  const Vector px = p * x;
  const Vector acl_x = m.a * x + m.b * (k * x);
  return {2.0 * px.dot(acl_x), Vector(2.0 * m.b.transpose() * px)};
}

struct Projection {
  Vector value;
  double lambda = 0.0;
  bool active = false;
  bool degenerate = false;  // ‖g‖² ≤ kGradTol, raw passed through
};

/// Closed-form solution of min ½‖ξ - raw‖² s.t. V_lin + gᵀξ ≤ -ε.
inline Projection project_detail(const Vector& raw, double v_lin, const Vector& g,
                                 double epsilon) {
  Projection out;
  const double gg = g.squaredNorm();
  if (gg <= kGradTol) {
    out.value = raw;
    out.degenerate = true;
    return out;
  }
  const double lambda = (g.dot(raw) + v_lin + epsilon) / gg;
  if (lambda > 0.0) {
    out.lambda = lambda;
    out.active = true;
    out.value = raw - lambda * g;
  } else {
    out.value = raw;
  }
  return out;
}

inline Vector project(const Vector& raw, double v_lin, const Vector& g, double epsilon) {
  return project_detail(raw, v_lin, g, epsilon).value;
}

/// Counters accumulated by act(); shared by all steps of one or more rollouts.
struct PolicyTelemetry {
  long steps = 0;
  long zero_state = 0;
  long active = 0;
  long degenerate = 0;
  long degenerate_unstable = 0;  // ‖g‖ tiny and V_lin ≥ 0
  long boxed_alternations = 0;
  long boxed_violations = 0;     // stability inequality violated while reachable in the box
  long boxed_unreachable = 0;    // box and half-space do not intersect
  long estimated = 0;
  long mode_mismatches = 0;      // estimate differs from the true mode
  long true_mode_violations = 0; // decrease condition fails for the true mode

  void merge(const PolicyTelemetry& o) {
    steps += o.steps;
    zero_state += o.zero_state;
    active += o.active;
    degenerate += o.degenerate;
    degenerate_unstable += o.degenerate_unstable;
    boxed_alternations += o.boxed_alternations;
    boxed_violations += o.boxed_violations;
    boxed_unreachable += o.boxed_unreachable;
    estimated += o.estimated;
    mode_mismatches += o.mode_mismatches;
    true_mode_violations += o.true_mode_violations;
  }
};

/// Precomputed P for repeated act() calls with fixed parameters.
class Policy {
 public:
  Policy(PolicyParams params, const ModeSet& modes)
      : params_(std::move(params)), modes_(&modes), p_(params_.p().matrix()) {
    params_.validate(modes);
  }

  const PolicyParams& params() const { return params_; }
  const Matrix& p() const { return p_; }
  const ModeSet& modes() const { return *modes_; }

  StabilityTerms terms(const Vector& x, int q) const {
    return stability_terms(x, q, params_.k, p_, *modes_);
  }

  /// u = Kx + Π[π(x)] for the (estimated) mode `q_hat`.
  Vector act(const Vector& x, int q_hat, PolicyTelemetry* tel = nullptr) const {
    return act_with_raw(x, q_hat, mlp_forward(params_.mlp, x), tel);
  }

  /// Same as act() with the MLP output supplied.
  Vector act_with_raw(const Vector& x, int q_hat, const Vector& raw,
                      PolicyTelemetry* tel = nullptr) const {
    if (tel) ++tel->steps;
    const int nu = modes_->bus_count();
    if (x.norm() < kZeroStateTol) {
      if (tel) ++tel->zero_state;
      return Vector::Zero(nu);
    }
    const StabilityTerms st = terms(x, q_hat);
    const Vector kx = params_.k * x;
    Projection pr = project_detail(raw, st.v_lin, st.g, params_.epsilon);
    if (tel) {
      if (pr.active) ++tel->active;
      if (pr.degenerate) {
        ++tel->degenerate;
        if (st.v_lin >= 0.0) ++tel->degenerate_unstable;
      }
    }
    if (!params_.u_bound) return kx + pr.value;
    return boxed(kx, pr.value, st, tel);
  }

 private:
  /// Alternates the half-space projection and the box clip on the total
  /// action until the iterate stops moving (at most 50 rounds).
  Vector boxed(const Vector& kx, Vector xi, const StabilityTerms& st, PolicyTelemetry* tel) const {
    const double b = *params_.u_bound;
    const double eps = params_.epsilon;
    int rounds = 0;
    for (; rounds < 50; ++rounds) {
      const Vector clipped = (kx + xi).cwiseMax(-b).cwiseMin(b) - kx;
      const Vector next = project(clipped, st.v_lin, st.g, eps);
      const double move = (next - xi).norm();
      xi = next;
      if (move <= 1e-12 * std::max(1.0, xi.norm())) break;
    }
    const Vector u = (kx + xi).cwiseMax(-b).cwiseMin(b);
    if (tel) {
      tel->boxed_alternations += rounds + 1;
      const Vector xi_u = u - kx;
      if (st.v_lin + st.g.dot(xi_u) > -eps + kFeasibilitySlack) {
        // Smallest gᵀξ over the box decides whether the intersection exists.
        double best = 0.0;
        for (Eigen::Index i = 0; i < st.g.size(); ++i) {
          best += st.g(i) * (st.g(i) > 0.0 ? -b - kx(i) : b - kx(i));
        }
        if (st.v_lin + best <= -eps) {
          ++tel->boxed_violations;
        } else {
          ++tel->boxed_unreachable;
        }
      }
    }
    return u;
  }

  PolicyParams params_;
  const ModeSet* modes_;
  Matrix p_;
};

// --- mode estimator -------------------------------------------------------

/// Classifier on (ω(t), ω(t+1), u(t)). Only the bus sums are used: the
/// network coupling cancels in 1ᵀω, so the common-mode frequency obeys a
/// scalar first-order law whose time constant is the inertia. Per-bus
/// inputs let the network memorise trajectories instead. The sums
/// (s, Δs/dt, Σu) are divided by their training RMS and normalised to unit
/// length.
struct EstimatorParams {
  MlpParams net;          // 3 -> ... -> p
  Vector block_scale;     // 3 entries
  double dt = 1e-3;
  int fallback_mode = 0;  // used before any transition is observed

  int mode_count() const { return net.output_dim(); }
};

inline constexpr int kEstimatorInputs = 3;

inline Vector estimator_raw_features(const Vector& omega_t, const Vector& omega_next,
                                     const Vector& u_t, double dt) {
  Vector f(kEstimatorInputs);
  f << omega_t.sum(), (omega_next.sum() - omega_t.sum()) / dt, u_t.sum();
  return f;
}

inline Vector estimator_features(const Vector& omega_t, const Vector& omega_next,
                                 const Vector& u_t, const Vector& block_scale, double dt) {
  Vector f = estimator_raw_features(omega_t, omega_next, u_t, dt).cwiseQuotient(block_scale);
  const double nrm = f.norm();
  if (nrm > 0.0 && std::isfinite(nrm)) f /= nrm;
  return f;
}

/// Index of the largest score; the first (lowest id) wins ties.
inline int argmax_lowest(const Vector& scores) {
  int best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i)
    if (scores(i) > scores(best)) best = static_cast<int>(i);
  return best;
}

inline int estimate_mode(const EstimatorParams& est, const Vector& omega_t,
                         const Vector& omega_next, const Vector& u_t) {
  const Vector f = estimator_features(omega_t, omega_next, u_t, est.block_scale, est.dt);
  return argmax_lowest(mlp_forward(est.net, f));
}

struct EstimatorSamples {
  Matrix omega_t, omega_next, u_t;  // one sample per column
  std::vector<int> label;
  std::vector<int> traj_id;
};

/// Consecutive pairs within each expert trajectory, labelled by q(t).
inline EstimatorSamples estimator_samples(const ExpertDataset& ds, int n_bus) {
  std::vector<int> cols;
  for (int i = 0; i + 1 < ds.size(); ++i) {
    if (ds.traj_id[i + 1] == ds.traj_id[i] && ds.step[i + 1] == ds.step[i] + 1) cols.push_back(i);
  }
  EstimatorSamples s;
  const auto m = static_cast<Eigen::Index>(cols.size());
  s.omega_t.resize(n_bus, m);
  s.omega_next.resize(n_bus, m);
  s.u_t.resize(n_bus, m);
  for (Eigen::Index c = 0; c < m; ++c) {
    const int i = cols[static_cast<std::size_t>(c)];
    s.omega_t.col(c) = ds.states.col(i).tail(n_bus);
    s.omega_next.col(c) = ds.states.col(i + 1).tail(n_bus);
    s.u_t.col(c) = ds.actions.col(i);
    s.label.push_back(ds.modes[static_cast<std::size_t>(i)]);
    s.traj_id.push_back(ds.traj_id[static_cast<std::size_t>(i)]);
  }
  return s;
}

struct EstimatorOptions {
  std::vector<int> hidden{64, 64};
  double learning_rate = 3e-3;
  int epochs = 60;
  int batch_size = 256;
  double train_fraction = 0.8;  // split by trajectory
};

struct EstimatorReport {
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  int train_samples = 0;
  int heldout_samples = 0;
  std::vector<double> epoch_loss;
};

namespace detail {

inline double softmax_xent(const Matrix& scores, const std::vector<int>& labels, Matrix* d_scores) {
  const Eigen::Index m = scores.cols();
  double loss = 0.0;
  if (d_scores) d_scores->resize(scores.rows(), m);
  for (Eigen::Index c = 0; c < m; ++c) {
    const double mx = scores.col(c).maxCoeff();
    const Vector e = (scores.col(c).array() - mx).exp().matrix();
    const double z = e.sum();
    const int y = labels[static_cast<std::size_t>(c)];
    loss += -(scores(y, c) - mx - std::log(z));
    if (d_scores) {
      d_scores->col(c) = e / z;
      (*d_scores)(y, c) -= 1.0;
    }
  }
  if (d_scores) *d_scores /= static_cast<double>(m);
  return loss / static_cast<double>(m);
}

inline void shuffle(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace detail

/// Softmax cross-entropy with Adam on an 80/20 trajectory split.
inline EstimatorParams train_estimator(const ExpertDataset& ds, const ModeSet& modes,
                                       const EstimatorOptions& opt, std::uint64_t seed,
                                       EstimatorReport* report = nullptr) {
  const int n = modes.bus_count();
  const EstimatorSamples s = estimator_samples(ds, n);
  const auto m = static_cast<int>(s.label.size());
  if (m < 2) throw std::invalid_argument("train_estimator: need at least two transitions");
  for (int q : s.label)
    if (q < 0 || q >= modes.size()) throw std::invalid_argument("train_estimator: label out of range");

  Rng rng(seed);
  std::vector<int> trajs(static_cast<std::size_t>(ds.trajectories()));
  std::iota(trajs.begin(), trajs.end(), 0);
  detail::shuffle(trajs, rng);
  const int n_train_traj = std::max(
      1, std::min(static_cast<int>(trajs.size()) - 1,
                  static_cast<int>(std::lround(opt.train_fraction * trajs.size()))));
  std::vector<char> is_train(trajs.size(), 0);
  for (int i = 0; i < n_train_traj; ++i) is_train[trajs[i]] = 1;
  if (trajs.size() == 1) is_train[0] = 1;

  EstimatorParams est;
  est.dt = modes.dt();
  est.fallback_mode = (modes.size() - 1) / 2;

  // RMS of each raw feature over the training part.
  est.block_scale = Vector::Zero(kEstimatorInputs);
  long n_train = 0;
  for (int c = 0; c < m; ++c) {
    if (!is_train[s.traj_id[c]]) continue;
    ++n_train;
    est.block_scale += estimator_raw_features(s.omega_t.col(c), s.omega_next.col(c), s.u_t.col(c),
                                              est.dt)
                           .cwiseAbs2();
  }
  for (int b = 0; b < kEstimatorInputs; ++b) {
    est.block_scale(b) = std::sqrt(est.block_scale(b) / static_cast<double>(n_train));
    if (!(est.block_scale(b) > 0.0) || !std::isfinite(est.block_scale(b))) est.block_scale(b) = 1.0;
  }

  Matrix feats(kEstimatorInputs, m);
  std::vector<int> train_idx, test_idx;
  for (int c = 0; c < m; ++c) {
    feats.col(c) = estimator_features(s.omega_t.col(c), s.omega_next.col(c), s.u_t.col(c),
                                      est.block_scale, est.dt);
    (is_train[s.traj_id[c]] ? train_idx : test_idx).push_back(c);
  }

  std::vector<int> sizes{kEstimatorInputs};
  sizes.insert(sizes.end(), opt.hidden.begin(), opt.hidden.end());
  sizes.push_back(modes.size());
  est.net = MlpParams::init(sizes, rng);
  MlpOptimizer adam(est.net, opt.learning_rate, true);

  EstimatorReport rep;
  const int bs = std::max(1, opt.batch_size);
  for (int ep = 0; ep < opt.epochs; ++ep) {
    detail::shuffle(train_idx, rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += static_cast<std::size_t>(bs)) {
      const std::size_t end = std::min(train_idx.size(), start + static_cast<std::size_t>(bs));
      Matrix xb(kEstimatorInputs, static_cast<Eigen::Index>(end - start));
      std::vector<int> yb;
      for (std::size_t i = start; i < end; ++i) {
        xb.col(static_cast<Eigen::Index>(i - start)) = feats.col(train_idx[i]);
        yb.push_back(s.label[static_cast<std::size_t>(train_idx[i])]);
      }
      MlpCache cache;
      const Matrix scores = mlp_forward(est.net, xb, &cache);
      Matrix d;
      total += detail::softmax_xent(scores, yb, &d);
      MlpGrad g = MlpGrad::zeros_like(est.net);
      mlp_backward(est.net, cache, d, g);
      adam.step(est.net, g);
      ++batches;
    }
    rep.epoch_loss.push_back(total / std::max(1, batches));
  }

  auto accuracy = [&](const std::vector<int>& idx) {
    if (idx.empty()) return 0.0;
    int hit = 0;
    for (std::size_t start = 0; start < idx.size(); start += 4096) {
      const std::size_t end = std::min(idx.size(), start + 4096);
      Matrix xb(kEstimatorInputs, static_cast<Eigen::Index>(end - start));
      for (std::size_t i = start; i < end; ++i) xb.col(static_cast<Eigen::Index>(i - start)) = feats.col(idx[i]);
      const Matrix scores = mlp_forward(est.net, xb);
      for (std::size_t i = start; i < end; ++i) {
        if (argmax_lowest(scores.col(static_cast<Eigen::Index>(i - start))) ==
            s.label[static_cast<std::size_t>(idx[i])])
          ++hit;
      }
    }
    return static_cast<double>(hit) / static_cast<double>(idx.size());
  };
  rep.train_accuracy = accuracy(train_idx);
  rep.heldout_accuracy = accuracy(test_idx);
  rep.train_samples = static_cast<int>(train_idx.size());
  rep.heldout_samples = static_cast<int>(test_idx.size());
  if (report) *report = std::move(rep);
  return est;
}

// --- closed-loop controllers ----------------------------------------------

enum class ModeSource { kTrue, kEstimated };

/// Rollout controller for a policy. With estimated modes, step k uses the
/// estimate from the transition (ω_{k-1}, ω_k, u_{k-1}); step 0 falls back
/// to the estimator's fallback mode. Telemetry is accumulated into `tel`.
inline Controller make_policy_controller(std::shared_ptr<const Policy> policy,
                                         std::shared_ptr<const EstimatorParams> est,
                                         ModeSource source,
                                         std::shared_ptr<PolicyTelemetry> tel = nullptr) {
  if (source == ModeSource::kEstimated && !est) {
    throw std::invalid_argument("policy controller: estimated modes need an estimator");
  }
  struct State {
    bool has_prev = false;
    Vector prev_omega, prev_u;
  };
  auto state = std::make_shared<State>();
  return [policy, est, source, tel, state](const Vector& x, int mode, int) {
    const int n = policy->modes().bus_count();
    int q_hat = mode;
    if (source == ModeSource::kEstimated) {
      q_hat = state->has_prev ? estimate_mode(*est, state->prev_omega, x.tail(n), state->prev_u)
                              : est->fallback_mode;
      if (tel) {
        ++tel->estimated;
        if (q_hat != mode) ++tel->mode_mismatches;
      }
    }
    const Vector raw = mlp_forward(policy->params().mlp, x);
    Vector u = policy->act_with_raw(x, q_hat, raw, tel.get());
    if (tel && x.norm() >= kZeroStateTol) {
      const StabilityTerms st = policy->terms(x, mode);
      if (st.v_lin + st.g.dot(u - policy->params().k * x) > -policy->params().epsilon + kFeasibilitySlack) {
        ++tel->true_mode_violations;
      }
    }
    state->has_prev = true;
    state->prev_omega = x.tail(n);
    state->prev_u = u;
    return u;
  };
}

}  // namespace freqguard
