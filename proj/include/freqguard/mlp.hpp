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

// Fully connected network with tanh hidden layers and a linear output.
// Inputs are multiplied element-wise by a fixed `input_scale` before the
// first layer. Batches are column-major: one sample per column.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "freqguard/numkernel.hpp"
#include "freqguard/rng.hpp"

namespace freqguard {

struct DenseLayer {
  Matrix w;  // out x in
  Vector b;  // out
};

struct MlpParams {
  Vector input_scale;
  std::vector<DenseLayer> layers;

  int input_dim() const { return static_cast<int>(input_scale.size()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().b.size()); }
  std::vector<int> sizes() const {
    std::vector<int> s{input_dim()};
    for (const DenseLayer& l : layers) s.push_back(static_cast<int>(l.b.size()));
    return s;
  }
  bool all_finite() const {
    if (!input_scale.allFinite()) return false;
    for (const DenseLayer& l : layers)
      if (!l.w.allFinite() || !l.b.allFinite()) return false;
    return true;
  }

  /// All weights and biases zero; input scale one.
  static MlpParams zeros(const std::vector<int>& sizes) {
    if (sizes.size() < 2) throw std::invalid_argument("mlp: need at least input and output sizes");
    MlpParams p;
    p.input_scale = Vector::Ones(sizes.front());
    for (std::size_t i = 1; i < sizes.size(); ++i) {
      p.layers.push_back({Matrix::Zero(sizes[i], sizes[i - 1]), Vector::Zero(sizes[i])});
    }
    return p;
  }

  /// Glorot-normal hidden weights; the output layer is scaled by
  /// `output_gain`, so a small gain starts the network near zero.
  static MlpParams init(const std::vector<int>& sizes, Rng& rng, double output_gain = 1.0) {
    MlpParams p = zeros(sizes);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      Matrix& w = p.layers[l].w;
      const double std = std::sqrt(2.0 / static_cast<double>(w.rows() + w.cols())) *
                         (l + 1 == p.layers.size() ? output_gain : 1.0);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = std * rng.normal();
    }
    return p;
  }
};

/// Same shapes as MlpParams; also used for optimizer moments.
struct MlpGrad {
  std::vector<DenseLayer> layers;

  static MlpGrad zeros_like(const MlpParams& p) {
    MlpGrad g;
    for (const DenseLayer& l : p.layers) {
      g.layers.push_back({Matrix::Zero(l.w.rows(), l.w.cols()), Vector::Zero(l.b.size())});
    }
    return g;
  }
};

struct MlpCache {
  std::vector<Matrix> activations;  // input (scaled), then each hidden output
};

/// Forward pass over a batch; fills `cache` when given.
inline Matrix mlp_forward(const MlpParams& p, const Matrix& x, MlpCache* cache = nullptr) {
  if (x.rows() != p.input_dim()) throw std::invalid_argument("mlp_forward: input dimension");
  Matrix h = p.input_scale.asDiagonal() * x;
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(h);
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Matrix z = p.layers[l].w * h;
    z.colwise() += p.layers[l].b;
    if (l + 1 < p.layers.size()) {
      h = z.array().tanh().matrix();
      if (cache) cache->activations.push_back(h);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

inline Vector mlp_forward(const MlpParams& p, const Vector& x) {
  return mlp_forward(p, Matrix(x)).col(0);
}

/// Backward pass: accumulates parameter gradients into `grad` and returns
/// the gradient with respect to the raw (unscaled) input batch.
inline Matrix mlp_backward(const MlpParams& p, const MlpCache& cache, const Matrix& d_out,
                           MlpGrad& grad) {
  Matrix delta = d_out;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const Matrix& in = cache.activations[l];
    grad.layers[l].w.noalias() += delta * in.transpose();
    grad.layers[l].b += delta.rowwise().sum();
    Matrix d_in = p.layers[l].w.transpose() * delta;
    if (l > 0) {
      // tanh' = 1 - h²
      d_in.array() *= (1.0 - in.array().square());
    }
    delta = std::move(d_in);
  }
  return p.input_scale.asDiagonal() * delta;
}

/// Adam (or plain gradient descent when `adaptive` is false) over MLP params.
class MlpOptimizer {
 public:
  MlpOptimizer(const MlpParams& p, double lr, bool adaptive)
      : lr_(lr), adaptive_(adaptive), m_(MlpGrad::zeros_like(p)), v_(MlpGrad::zeros_like(p)) {}

  void step(MlpParams& p, const MlpGrad& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_), c2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      update(p.layers[l].w, g.layers[l].w, m_.layers[l].w, v_.layers[l].w, c1, c2);
      update(p.layers[l].b, g.layers[l].b, m_.layers[l].b, v_.layers[l].b, c1, c2);
    }
  }

 private:
  template <typename T>
  void update(T& param, const T& grad, T& m, T& v, double c1, double c2) {
    if (!adaptive_) {
      param -= lr_ * grad;
      return;
    }
    m = kBeta1 * m + (1.0 - kBeta1) * grad;
    v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseAbs2();
    param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
  }

  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double lr_;
  bool adaptive_;
  int t_ = 0;
  MlpGrad m_, v_;
};

}  // namespace freqguard
