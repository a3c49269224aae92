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

// Low-rank replacement of a single linear layer y = W x (W is d2 x d1).
//
// The feature-based path projects the layer output onto the leading principal
// directions of its calibration features:
//
//   B = U_r,   A = U_r^T W,   bias = (I - U_r U_r^T) E[y]
//
// The weight-based path is plain truncated SVD, B = U_r S_r, A = V_r^T.

#ifndef BOLACO_FACTORIZE_HPP
#define BOLACO_FACTORIZE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "bolaco/covariance.hpp"
#include "bolaco/error.hpp"
#include "bolaco/linalg.hpp"

namespace bolaco {

enum class FactorMethod : int { afm = 0, svd = 1 };

inline std::string_view to_string(FactorMethod m) { return m == FactorMethod::afm ? "afm" : "svd"; }

struct LowRankFactors {
  Eigen::MatrixXd b;     // d2 x r
  Eigen::MatrixXd a;     // r x d1
  Eigen::VectorXd bias;  // d2, zero for svd
  int rank = 0;
  FactorMethod method = FactorMethod::afm;

  Eigen::Index rows() const { return b.rows(); }
  Eigen::Index cols() const { return a.cols(); }

  /// Stored parameters: r (d1 + d2), plus the d2 bias for the feature-based method.
  std::uint64_t parameter_count() const {
    const auto r = static_cast<std::uint64_t>(rank);
    std::uint64_t n = r * static_cast<std::uint64_t>(rows() + cols());
    if (method == FactorMethod::afm) n += static_cast<std::uint64_t>(rows());
    return n;
  }
};

/// Eigendecomposition of a layer's feature covariance together with the feature mean.
/// Independent of the rank, so it is computed once per layer and reused.
struct FeatureBasis {
  Eigen::VectorXd eigenvalues;   // descending, noise below zero clamped to 0
  Eigen::MatrixXd eigenvectors;  // columns
  Eigen::VectorXd mean;

  Eigen::Index dim() const { return mean.size(); }
};

inline FeatureBasis feature_basis(const CovarianceStats& stats) {
  SymmetricEigen e = eig_sym_desc(stats.cov);
  FeatureBasis basis;
  basis.eigenvalues = e.values.cwiseMax(0.0);
  basis.eigenvectors = std::move(e.vectors);
  basis.mean = stats.mean;
  return basis;
}

/// Rank that removes a fraction `lambda` of a d2 x d1 layer's parameters,
/// rounded to the nearest multiple of 8 (ties upward) and clamped to at least 8.
/// Returns nullopt when factoring at that rank would not save parameters.
inline std::optional<int> rank_from_ratio(std::int64_t d1, std::int64_t d2, double lambda) {
  detail::require(d1 >= 1 && d2 >= 1, ErrorKind::invalid_argument, "layer dims must be positive");
  detail::require(lambda >= 0.0 && lambda < 1.0, ErrorKind::invalid_argument,
                  "compression ratio must lie in [0, 1), got " + std::to_string(lambda));
  const double budget = static_cast<double>(d1) * static_cast<double>(d2) / static_cast<double>(d1 + d2);
  const double target = (1.0 - lambda) * budget;
  auto r = static_cast<std::int64_t>(8.0 * std::floor(target / 8.0 + 0.5));
  r = std::max<std::int64_t>(r, 8);
  if (r * (d1 + d2) >= d1 * d2) return std::nullopt;
  return static_cast<int>(r);
}

namespace detail {

inline void check_rank(int r, Eigen::Index max_rank) {
  require(r >= 1 && r <= max_rank, ErrorKind::invalid_argument,
          "rank " + std::to_string(r) + " outside [1, " + std::to_string(max_rank) + "]");
}

}  // namespace detail

inline LowRankFactors afm_decompose(const Eigen::MatrixXd& w, const FeatureBasis& basis, int r) {
  detail::require(basis.dim() == w.rows(), ErrorKind::dimension_mismatch,
                  "feature statistics of dimension " + std::to_string(basis.dim()) +
                      " do not match layer output dimension " + std::to_string(w.rows()));
  detail::check_rank(r, w.rows());
  LowRankFactors f;
  f.method = FactorMethod::afm;
  f.rank = r;
  f.b = basis.eigenvectors.leftCols(r);
  f.a.noalias() = f.b.transpose() * w;
  f.bias = basis.mean - f.b * (f.b.transpose() * basis.mean);
  return f;
}

inline LowRankFactors afm_decompose(const Eigen::MatrixXd& w, const CovarianceStats& stats, int r) {
  detail::require(stats.dim() == w.rows(), ErrorKind::dimension_mismatch,
                  "feature statistics do not match layer output dimension");
  detail::check_rank(r, w.rows());
  return afm_decompose(w, feature_basis(stats), r);
}

/// Best rank-r Frobenius approximation of W, via the eigendecomposition of the
/// smaller Gram matrix. Singular values below 1e-12 * sigma_max count as zero.
inline LowRankFactors svd_truncate(const Eigen::MatrixXd& w, int r) {
  const Eigen::Index d2 = w.rows();
  const Eigen::Index d1 = w.cols();
  detail::check_rank(r, std::min(d1, d2));
  LowRankFactors f;
  f.method = FactorMethod::svd;
  f.rank = r;
  f.bias = Eigen::VectorXd::Zero(d2);
  if (d1 <= d2) {
    // W^T W = V S^2 V^T; B = W V_r = U_r S_r.
    const SymmetricEigen e = eig_sym_desc(w.transpose() * w);
    const Eigen::MatrixXd v = e.vectors.leftCols(r);
    f.a = v.transpose();
    f.b.noalias() = w * v;
  } else {
    // W W^T = U S^2 U^T; A = S_r^-1 U_r^T W = V_r^T.
    const SymmetricEigen e = eig_sym_desc(w * w.transpose());
    const Eigen::MatrixXd u = e.vectors.leftCols(r);
    const double smax = std::sqrt(std::max(e.values(0), 0.0));
    f.b.resize(d2, r);
    f.a.resize(r, d1);
    const Eigen::MatrixXd ut_w = u.transpose() * w;
    for (int i = 0; i < r; ++i) {
      const double sigma = std::sqrt(std::max(e.values(i), 0.0));
      if (sigma <= 1e-12 * smax || sigma == 0.0) {
        f.b.col(i).setZero();
        f.a.row(i).setZero();
      } else {
        f.b.col(i) = u.col(i) * sigma;
        f.a.row(i) = ut_w.row(i) / sigma;
      }
    }
  }
  return f;
}

/// B (A x) + bias per column; B A is never materialized.
inline Eigen::MatrixXd apply_factors(const LowRankFactors& f, const Eigen::MatrixXd& x) {
  detail::require(x.rows() == f.cols(), ErrorKind::dimension_mismatch,
                  "input has " + std::to_string(x.rows()) + " rows, factors expect " +
                      std::to_string(f.cols()));
  const Eigen::MatrixXd ax = f.a * x;
  Eigen::MatrixXd y = f.b * ax;
  y.colwise() += f.bias;
  return y;
}

/// || W X - apply_factors(f, X) ||_F
inline double reconstruction_error(const Eigen::MatrixXd& w, const LowRankFactors& f,
                                   const Eigen::MatrixXd& x) {
  detail::require(w.rows() == f.rows() && w.cols() == f.cols(), ErrorKind::dimension_mismatch,
                  "factor shape does not match the weight");
  detail::require(x.rows() == w.cols(), ErrorKind::dimension_mismatch,
                  "input rows do not match the weight");
  return (w * x - apply_factors(f, x)).norm();
}

}  // namespace bolaco

#endif  // BOLACO_FACTORIZE_HPP
