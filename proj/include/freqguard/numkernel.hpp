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

// Dense kernels shared by every other module: symmetric eigensolver,
// Cholesky factorization, matrix exponential and a guarded linear solve.
// All functions are pure and thread-safe.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace freqguard {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class NumericError : public std::runtime_error {
 public:
  enum class Kind { kNonFinite, kNotPositiveDefinite, kSingular, kDimension };

  NumericError(Kind kind, const std::string& what, double condition = 0.0)
      : std::runtime_error(what), kind_(kind), condition_(condition) {}

  Kind kind() const { return kind_; }
  /// Reciprocal-condition based estimate of cond(a); only set for kSingular.
  double condition() const { return condition_; }

 private:
  Kind kind_;
  double condition_;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Symmetric matrix with exactly mirrored storage.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(Eigen::Index n) : data_(Matrix::Zero(n, n)) {}

  /// Symmetrizes `m` as (m + mᵀ)/2; the result is bit-exactly symmetric.
  explicit SymMatrix(const Matrix& m) {
    if (m.rows() != m.cols()) {
      throw NumericError(NumericError::Kind::kDimension,
                         "SymMatrix: input is not square");
    }
    const Eigen::Index n = m.rows();
    data_.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      data_(j, j) = m(j, j);
      for (Eigen::Index i = j + 1; i < n; ++i) {
        const double v = 0.5 * (m(i, j) + m(j, i));
        data_(i, j) = v;
        data_(j, i) = v;
      }
    }
  }

  static SymMatrix identity(Eigen::Index n) {
    return SymMatrix(Matrix(Matrix::Identity(n, n)));
  }
  static SymMatrix diagonal(const Vector& d) {
    return SymMatrix(Matrix(d.asDiagonal()));
  }

  Eigen::Index dim() const { return data_.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return data_(i, j); }
  void set(Eigen::Index i, Eigen::Index j, double v) {
    data_(i, j) = v;
    data_(j, i) = v;
  }
  const Matrix& matrix() const { return data_; }
  double frobenius() const { return data_.norm(); }

 private:
  Matrix data_;
};

struct SymEigen {
  Vector values;   // ascending
  Matrix vectors;  // columns are orthonormal eigenvectors
};

/// Symmetric eigendecomposition m = V diag(λ) Vᵀ with λ ascending
/// (tridiagonalization + implicit QR, via Eigen).
inline SymEigen sym_eig(const SymMatrix& m) {
  const Matrix& src = m.matrix();
  if (!all_finite(src)) {
    throw NumericError(NumericError::Kind::kNonFinite,
                       "sym_eig: input contains non-finite entries");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(src, Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success) {
    throw NumericError(NumericError::Kind::kNonFinite, "sym_eig: QR iteration did not converge");
  }
  return {es.eigenvalues(), es.eigenvectors()};
}

inline double min_eigenvalue(const SymMatrix& m) { return sym_eig(m).values(0); }
inline double max_eigenvalue(const SymMatrix& m) {
  return sym_eig(m).values(m.dim() - 1);
}

/// Lower-triangular L with L Lᵀ = m and strictly positive diagonal.
inline Matrix cholesky(const SymMatrix& m) {
  const Matrix& a = m.matrix();
  if (!all_finite(a)) {
    throw NumericError(NumericError::Kind::kNonFinite,
                       "cholesky: input contains non-finite entries");
  }
  const Eigen::Index n = m.dim();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) {
      throw NumericError(NumericError::Kind::kNotPositiveDefinite,
                         "cholesky: non-positive pivot " + std::to_string(d) +
                             " at column " + std::to_string(j));
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

/// e^{m·scale} by scaling and squaring around a degree-18 Taylor core.
/// The scaled norm is brought to ≤ 0.5 before the series is summed.
inline Matrix expm(const Matrix& m, double scale) {
  if (m.rows() != m.cols()) {
    throw NumericError(NumericError::Kind::kDimension, "expm: matrix is not square");
  }
  if (!all_finite(m) || !std::isfinite(scale)) {
    throw NumericError(NumericError::Kind::kNonFinite,
                       "expm: input contains non-finite entries");
  }
  const Eigen::Index n = m.rows();
  Matrix a = m * scale;
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  a /= std::ldexp(1.0, squarings);

  constexpr int kOrder = 18;
  Matrix result = Matrix::Identity(n, n);
  Matrix term = Matrix::Identity(n, n);
  for (int k = 1; k <= kOrder; ++k) {
    term = (term * a) / static_cast<double>(k);
    result += term;
  }
  for (int i = 0; i < squarings; ++i) result = result * result;
  return result;
}

/// Solves a·x = b by partially pivoted LU. Rejects a when its estimated
/// condition number exceeds 1e12.
inline Matrix solve(const Matrix& a, const Matrix& b) {
  if (a.rows() != a.cols() || a.rows() != b.rows()) {
    throw NumericError(NumericError::Kind::kDimension, "solve: dimension mismatch");
  }
  if (!all_finite(a) || !all_finite(b)) {
    throw NumericError(NumericError::Kind::kNonFinite,
                       "solve: input contains non-finite entries");
  }
  Eigen::PartialPivLU<Matrix> lu(a);
  const double rcond = lu.rcond();
  if (!(rcond > 1e-12)) {
    const double cond = rcond > 0.0 ? 1.0 / rcond : INFINITY;
    throw NumericError(NumericError::Kind::kSingular,
                       "solve: matrix is singular or ill-conditioned (cond ~ " +
                           std::to_string(cond) + ")",
                       cond);
  }
  Matrix x = lu.solve(b);
  // One step of iterative refinement.
  const Matrix r = b - a * x;
  x += lu.solve(r);
  return x;
}

inline Matrix inverse(const Matrix& a) {
  return solve(a, Matrix::Identity(a.rows(), a.cols()));
}

}  // namespace freqguard
