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

#include <memory>

#include "freqguard/lyapsynth.hpp"
#include "support.hpp"

namespace {

using freqguard::GridSpec;
using freqguard::LyapunovCertificate;
using freqguard::LyapunovSolution;
using freqguard::Matrix;
using freqguard::Mode;
using freqguard::ModeSet;
using freqguard::Rng;
using freqguard::SymMatrix;
using freqguard::Vector;
using namespace fgtest;

// One "bus" is a two-dimensional state here.
ModeSet custom_modes(const std::vector<Matrix>& as, const Matrix& b) {
  std::vector<Mode> modes;
  for (const Matrix& a : as) {
    Mode m;
    m.inertia_s = 1.0;
    m.inertia = Vector::Ones(1);
    m.a = a;
    m.b = b;
    m.ad = freqguard::expm(a, 1e-3);
    m.bd = b * 1e-3;
    modes.push_back(m);
  }
  return ModeSet(SymMatrix(1), Vector::Constant(1, 0.5), 1e-3, std::move(modes));
}

TEST(Certificate, HandMargins) {
  const ModeSet stable = custom_modes({-Matrix::Identity(2, 2)}, Matrix::Zero(2, 1));
  auto chk = freqguard::verify_certificate(Matrix::Zero(1, 2), SymMatrix::identity(2), stable);
  ASSERT_EQ(chk.margins.size(), 1u);
  EXPECT_DOUBLE_EQ(chk.margins[0], -2.0);
  EXPECT_DOUBLE_EQ(chk.min_p_eigenvalue, 1.0);
  EXPECT_TRUE(chk.valid);

  Matrix a = -Matrix::Identity(2, 2);
  a(0, 0) = 0.1;
  const ModeSet mixed = custom_modes({-Matrix::Identity(2, 2), a}, Matrix::Zero(2, 1));
  chk = freqguard::verify_certificate(Matrix::Zero(1, 2), SymMatrix::identity(2), mixed);
  EXPECT_DOUBLE_EQ(chk.margins[1], 0.2);
  EXPECT_FALSE(chk.valid);

  Vector d(2);
  d << 1.0, -1e-3;
  chk = freqguard::verify_certificate(Matrix::Zero(1, 2), SymMatrix::diagonal(d), stable);
  EXPECT_FALSE(chk.valid);
}

TEST(Certificate, ExtractionFromIdentity) {
  const ModeSet ms = custom_modes({-Matrix::Identity(2, 2)}, Matrix::Identity(2, 1));
  Matrix y(1, 2);
  y << -0.5, 0.25;
  const LyapunovCertificate c = freqguard::extract_certificate(Matrix::Identity(2, 2), y, ms);
  EXPECT_EQ(c.k, y);
  EXPECT_EQ(c.p.matrix(), Matrix(Matrix::Identity(2, 2)));
  // A + BK = [[-1.5, 0.25], [0, -1]].
  Matrix acl(2, 2);
  acl << -1.5, 0.25, 0, -1;
  const Matrix m = acl + acl.transpose();
  EXPECT_NEAR(c.margins[0], freqguard::max_eigenvalue(SymMatrix(m)), 1e-14);
  EXPECT_TRUE(c.valid);
}

TEST(Solver, SmallGridsAreCertified) {
  GridSpec one;
  one.n = 1;
  one.buses = {{0.5, 1.0}};
  one.inertia_s = {0.5, 2.0, 9.0};
  for (const auto& spec : {one, two_bus({0.5, 3.0, 9.0}, 0.1)}) {
    const ModeSet ms = freqguard::build_modes(spec, 1e-3);
    const LyapunovSolution sol = freqguard::solve_common_lyapunov(ms, {});
    const LyapunovCertificate c = freqguard::extract_certificate(sol.x, sol.y, ms);
    EXPECT_TRUE(c.valid);
    for (double m : c.margins) EXPECT_LT(m, 0.0);
    EXPECT_GT(c.min_p_eigenvalue, 0.0);
  }
}

TEST(Solver, UncontrollableUnstableModeFails) {
  Matrix a = -Matrix::Identity(2, 2);
  a(0, 0) = 0.5;
  const ModeSet ms = custom_modes({-Matrix::Identity(2, 2), a}, Matrix::Zero(2, 1));
  freqguard::LyapunovSolverOptions opt;
  opt.max_iterations = 2000;
  try {
    freqguard::solve_common_lyapunov(ms, opt);
    FAIL();
  } catch (const freqguard::LyapunovSolverError& e) {
    EXPECT_EQ(e.worst_mode(), 1);
    EXPECT_GT(e.worst_margin(), 0.0);
  }
}

class BundledCertificate : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    modes_ = std::make_unique<ModeSet>(freqguard::build_modes(bundled_grid(), 1e-3));
    sol_ = std::make_unique<LyapunovSolution>(freqguard::solve_common_lyapunov(*modes_, {}));
    cert_ = std::make_unique<LyapunovCertificate>(
        freqguard::extract_certificate(sol_->x, sol_->y, *modes_));
  }
  static void TearDownTestSuite() {
    cert_.reset();
    sol_.reset();
    modes_.reset();
  }
  static std::unique_ptr<ModeSet> modes_;
  static std::unique_ptr<LyapunovSolution> sol_;
  static std::unique_ptr<LyapunovCertificate> cert_;
};

std::unique_ptr<ModeSet> BundledCertificate::modes_;
std::unique_ptr<LyapunovSolution> BundledCertificate::sol_;
std::unique_ptr<LyapunovCertificate> BundledCertificate::cert_;

TEST_F(BundledCertificate, IsValidForEveryMode) {
  ASSERT_EQ(cert_->margins.size(), 9u);
  EXPECT_TRUE(cert_->valid);
  for (double m : cert_->margins) EXPECT_LT(m, 0.0);
  for (double m : cert_->discrete_margins) EXPECT_LT(m, 0.0);
  EXPECT_GT(cert_->min_p_eigenvalue, 0.0);
  RecordProperty("solve_seconds", std::to_string(sol_->seconds));
}

TEST_F(BundledCertificate, LyapunovDecreaseOnRandomStates) {
  Rng rng(13);
  const Matrix& p = cert_->p.matrix();
  for (int q = 0; q < modes_->size(); ++q) {
    const Matrix acl = (*modes_)[q].a + (*modes_)[q].b * cert_->k;
    const Matrix adcl = (*modes_)[q].ad + (*modes_)[q].bd * cert_->k;
    for (int s = 0; s < 10000; ++s) {
      const Vector x = random_vector(rng, 24);
      ASSERT_GT(x.dot(p * x), 0.0);
      ASSERT_LT(2.0 * x.dot(p * (acl * x)), 0.0) << "mode " << q;
      const Vector xn = adcl * x;
      ASSERT_LT(xn.dot(p * xn), x.dot(p * x)) << "mode " << q;
    }
  }
}

TEST_F(BundledCertificate, CongruentConditionsAgreeInSign) {
  for (int q = 0; q < modes_->size(); ++q) {
    const auto& m = (*modes_)[q];
    EXPECT_LT(freqguard::max_eigenvalue(freqguard::lmi_matrix(m.a, m.b, sol_->x, sol_->y)), 0.0);
    EXPECT_LT(freqguard::max_eigenvalue(freqguard::discrete_lmi_matrix(m.ad, m.bd, sol_->x, sol_->y)),
              0.0);
  }
  EXPECT_LT(sol_->worst_margin, 0.0);
}

TEST_F(BundledCertificate, SolveIsDeterministic) {
  const LyapunovSolution again = freqguard::solve_common_lyapunov(*modes_, {});
  EXPECT_EQ(again.iterations, sol_->iterations);
  EXPECT_LE((again.x - sol_->x).cwiseAbs().maxCoeff(), 1e-10 * sol_->x.cwiseAbs().maxCoeff());
  EXPECT_LE((again.y - sol_->y).cwiseAbs().maxCoeff(), 1e-10 * sol_->y.cwiseAbs().maxCoeff());
}

}  // namespace
