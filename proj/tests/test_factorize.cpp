// Copyright 2026 The Bolaco Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <vector>

#include "bolaco/covariance.hpp"
#include "bolaco/factorize.hpp"
#include "bolaco/linalg.hpp"
#include "test_util.hpp"

namespace bolaco {
namespace {

using testing::randn;

CovarianceStats stats_of(const Eigen::MatrixXd& y) {
  CovAccumulator acc(y.rows());
  acc.accumulate_batch(y);
  return finalize_scm(acc);
}

TEST(EigSym, Identity) {
  const SymmetricEigen e = eig_sym_desc(Eigen::Matrix3d::Identity());
  EXPECT_TRUE(e.values.isApprox(Eigen::Vector3d::Ones()));
}

TEST(EigSym, DiagonalIsSortedWithPermutedBasis) {
  const SymmetricEigen e = eig_sym_desc(Eigen::Vector3d(3, 1, 2).asDiagonal().toDenseMatrix());
  EXPECT_TRUE(e.values.isApprox(Eigen::Vector3d(3, 2, 1)));
  EXPECT_NEAR(std::abs(e.vectors(0, 0)), 1.0, 1e-12);
  EXPECT_NEAR(std::abs(e.vectors(2, 1)), 1.0, 1e-12);
  EXPECT_NEAR(std::abs(e.vectors(1, 2)), 1.0, 1e-12);
}

TEST(EigSym, RandomPsdReconstructs) {
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Eigen::MatrixXd g = randn(8, 8, rng);
    const Eigen::MatrixXd a = g * g.transpose();
    const SymmetricEigen e = eig_sym_desc(a);
    EXPECT_LT((e.vectors * e.values.asDiagonal() * e.vectors.transpose() - a).norm(), 1e-8);
    EXPECT_LT((e.vectors.transpose() * e.vectors - Eigen::MatrixXd::Identity(8, 8)).norm(), 1e-8);
    for (Eigen::Index i = 0; i < 8; ++i) {
      EXPECT_LT((a * e.vectors.col(i) - e.values(i) * e.vectors.col(i)).norm(), 1e-7 * a.norm());
      if (i > 0) EXPECT_GE(e.values(i - 1), e.values(i));
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(a);
    EXPECT_TRUE(e.values.reverse().isApprox(oracle.eigenvalues(), 1e-10));
  }
}

TEST(EigSym, RejectsAsymmetric) {
  Eigen::Matrix2d a;
  a << 1, 2, 0, 1;
  EXPECT_BOLACO_ERROR(eig_sym_desc(a), ErrorKind::invalid_argument);
}

TEST(EigSym, IterationCapReportsNonConvergence) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd g = randn(12, 12, rng);
  JacobiOptions opt;
  opt.max_sweeps = 1;
  EXPECT_BOLACO_ERROR(eig_sym_desc(g + g.transpose(), opt), ErrorKind::numerical);
}

TEST(RankFromRatio, Examples) {
  EXPECT_EQ(rank_from_ratio(4096, 4096, 0.2), 1640);
  EXPECT_EQ(rank_from_ratio(4096, 4096, 0.0), std::nullopt);
  EXPECT_EQ(rank_from_ratio(64, 64, 0.5), 16);
}

TEST(RankFromRatio, RoundingAndClamp) {
  // 64x64 budget 32: 0.875 -> 4 rounds up to 8 (tie), 0.9 -> 3.2 clamps to 8.
  EXPECT_EQ(rank_from_ratio(64, 64, 0.875), 8);
  EXPECT_EQ(rank_from_ratio(64, 64, 0.99), 8);
  // 0.625 -> 12, a tie between 8 and 16, goes up.
  EXPECT_EQ(rank_from_ratio(64, 64, 0.625), 16);
  // 64x176 budget 46.93: 0.2 -> 37.5 -> 40.
  EXPECT_EQ(rank_from_ratio(64, 176, 0.2), 40);
}

TEST(RankFromRatio, RejectsBadRatio) {
  EXPECT_BOLACO_ERROR(rank_from_ratio(8, 8, 1.0), ErrorKind::invalid_argument);
  EXPECT_BOLACO_ERROR(rank_from_ratio(8, 8, -0.1), ErrorKind::invalid_argument);
}

TEST(RankFromRatio, AlwaysMultipleOfEightAndSaves) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> dim(8, 600);
  std::uniform_real_distribution<double> lam(0.0, 0.999);
  for (int i = 0; i < 2000; ++i) {
    const int d1 = dim(rng), d2 = dim(rng);
    const auto r = rank_from_ratio(d1, d2, lam(rng));
    if (!r) continue;
    EXPECT_EQ(*r % 8, 0);
    EXPECT_GE(*r, 8);
    EXPECT_LT(static_cast<long>(*r) * (d1 + d2), static_cast<long>(d1) * d2);
  }
}

TEST(Afm, ExactSubspaceReproduces) {
  std::mt19937_64 rng(4);
  // Inputs confined so that the outputs W X span a 2-dim subspace.
  const Eigen::MatrixXd w = randn(6, 5, rng);
  const Eigen::MatrixXd x = randn(5, 2, rng) * randn(2, 200, rng);
  Eigen::MatrixXd xc = x.colwise() - x.rowwise().mean();
  const Eigen::MatrixXd y = w * xc;
  const LowRankFactors f = afm_decompose(w, stats_of(y), 2);
  EXPECT_LT((apply_factors(f, xc) - y).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(f.bias.norm(), 1e-8);
}

TEST(Afm, FullRankIsIdentityProjection) {
  std::mt19937_64 rng(5);
  const Eigen::MatrixXd w = randn(7, 4, rng);
  const Eigen::MatrixXd y = randn(7, 50, rng);
  const LowRankFactors f = afm_decompose(w, stats_of(y), 7);
  EXPECT_LT((f.b.transpose() * f.b - Eigen::MatrixXd::Identity(7, 7)).norm(), 1e-8);
  EXPECT_LT((f.b * f.a - w).norm(), 1e-8);
  EXPECT_LT(f.bias.norm(), 1e-8);
}

TEST(Afm, ResidualEqualsDiscardedEigenvalues) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd w = randn(16, 16, rng);
  const Eigen::MatrixXd scales = Eigen::VectorXd::LinSpaced(16, 3.0, 0.1).asDiagonal();
  const Eigen::MatrixXd x = (scales * randn(16, 4000, rng)).colwise() + Eigen::VectorXd::Constant(16, 0.5);
  const Eigen::MatrixXd y = w * x;
  const CovarianceStats st = stats_of(y);
  const LowRankFactors f = afm_decompose(w, st, 4);
  const double msr = (apply_factors(f, x) - y).colwise().squaredNorm().mean();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(st.cov);
  const double discarded = oracle.eigenvalues().head(12).sum();  // ascending order
  EXPECT_NEAR(msr / discarded, 1.0, 0.02);
}

TEST(Afm, BasisOrthonormalAndProjectorIdempotent) {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd w = randn(10, 6, rng);
  const LowRankFactors f = afm_decompose(w, stats_of(randn(10, 40, rng)), 3);
  EXPECT_LT((f.b.transpose() * f.b - Eigen::Matrix3d::Identity()).norm(), 1e-8);
  const Eigen::MatrixXd p = f.b * f.b.transpose();
  EXPECT_LT((p * p - p).norm(), 1e-10);
  EXPECT_EQ(f.parameter_count(), 3u * 16u + 10u);
}

TEST(Afm, RankChecks) {
  std::mt19937_64 rng(9);
  const CovarianceStats st = stats_of(randn(4, 10, rng));
  EXPECT_BOLACO_ERROR(afm_decompose(randn(4, 3, rng), st, 0), ErrorKind::invalid_argument);
  EXPECT_BOLACO_ERROR(afm_decompose(randn(4, 3, rng), st, 5), ErrorKind::invalid_argument);
  EXPECT_BOLACO_ERROR(afm_decompose(randn(5, 3, rng), st, 2), ErrorKind::dimension_mismatch);
}

TEST(Svd, RankOneExact) {
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd w = randn(7, 1, rng) * randn(1, 5, rng);
  const LowRankFactors f = svd_truncate(w, 1);
  EXPECT_LT((f.b * f.a - w).norm(), 1e-10);
  EXPECT_TRUE(f.bias.isZero(0.0));
}

TEST(Svd, FullRankExactBothOrientations) {
  std::mt19937_64 rng(12);
  for (auto [r, c] : {std::pair{9, 4}, std::pair{4, 9}}) {
    const Eigen::MatrixXd w = randn(r, c, rng);
    const LowRankFactors f = svd_truncate(w, std::min(r, c));
    EXPECT_LT((f.b * f.a - w).norm(), 1e-8);
  }
}

TEST(Svd, TruncationErrorMatchesSingularValues) {
  for (auto [r, c] : {std::pair{12, 8}, std::pair{8, 12}}) {
    std::mt19937_64 rng(14);
    const Eigen::MatrixXd w = randn(r, c, rng);
    const LowRankFactors f = svd_truncate(w, 3);
    // Singular values from the eigenvalues of W^T W, via an independent solver.
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w.transpose() * w);
    const Eigen::VectorXd ev = es.eigenvalues().reverse();
    double discarded = 0.0;
    for (Eigen::Index i = 3; i < ev.size(); ++i) discarded += std::max(0.0, ev(i));
    EXPECT_NEAR((w - f.b * f.a).squaredNorm(), discarded, 1e-8);
  }
}

TEST(Svd, RankChecks) {
  std::mt19937_64 rng(15);
  EXPECT_BOLACO_ERROR(svd_truncate(randn(4, 3, rng), 4), ErrorKind::invalid_argument);
  EXPECT_BOLACO_ERROR(svd_truncate(randn(4, 3, rng), 0), ErrorKind::invalid_argument);
}

TEST(ApplyFactors, IdentityFactors) {
  std::mt19937_64 rng(16);
  LowRankFactors f;
  const Eigen::MatrixXd w = randn(4, 4, rng), x = randn(4, 3, rng);
  f.b = Eigen::MatrixXd::Identity(4, 4);
  f.a = w;
  f.bias = Eigen::VectorXd::Zero(4);
  f.rank = 4;
  EXPECT_TRUE(apply_factors(f, x).isApprox(w * x));
}

TEST(ApplyFactors, ZeroInputGivesBias) {
  std::mt19937_64 rng(18);
  const LowRankFactors f = afm_decompose(randn(5, 3, rng), stats_of(randn(5, 9, rng).array() + 2.0), 2);
  const Eigen::MatrixXd y = apply_factors(f, Eigen::MatrixXd::Zero(3, 4));
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_EQ(y.col(j), f.bias);
}

TEST(ApplyFactors, MatchesDenseOracle) {
  std::mt19937_64 rng(20);
  const LowRankFactors f = afm_decompose(randn(6, 5, rng), stats_of(randn(6, 30, rng)), 3);
  const Eigen::MatrixXd x = randn(5, 7, rng);
  const Eigen::MatrixXd dense = ((f.b * f.a) * x).colwise() + f.bias;
  EXPECT_LT((apply_factors(f, x) - dense).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_BOLACO_ERROR(apply_factors(f, randn(4, 2, rng)), ErrorKind::dimension_mismatch);
}

TEST(ReconstructionError, ExactFactorsAreZero) {
  std::mt19937_64 rng(21);
  const Eigen::MatrixXd w = randn(5, 4, rng);
  EXPECT_LT(reconstruction_error(w, svd_truncate(w, 4), randn(4, 10, rng)), 1e-8);
}

TEST(ReconstructionError, AfmMatchesAffineOptimum) {
  std::mt19937_64 rng(22);
  const Eigen::MatrixXd w = randn(12, 10, rng);
  const Eigen::MatrixXd x = randn(10, 300, rng);
  const Eigen::MatrixXd y = w * x;
  const CovarianceStats st = stats_of(y);
  // Best rank-r map plus a free bias: truncated SVD of the centered outputs.
  const Eigen::MatrixXd centered = y.colwise() - y.rowwise().mean();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const Eigen::VectorXd sv = svd.singularValues();
  double prev = std::numeric_limits<double>::infinity();
  for (int r = 1; r <= 12; ++r) {
    const double err = reconstruction_error(w, afm_decompose(w, st, r), x);
    EXPECT_LE(err, prev + 1e-9);
    const double optimal = std::sqrt(sv.tail(sv.size() - std::min<Eigen::Index>(r, sv.size())).squaredNorm());
    EXPECT_NEAR(err, optimal, 1e-8 * y.norm());
    prev = err;
  }
}

}  // namespace
}  // namespace bolaco
