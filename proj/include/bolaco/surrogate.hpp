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

// Gaussian-process surrogate with a Matern-5/2 kernel plus white noise, and
// the closed-form expected improvement for minimization.

#ifndef BOLACO_SURROGATE_HPP
#define BOLACO_SURROGATE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "bolaco/error.hpp"

namespace bolaco {

/// Hyperparameters are fixed, never fitted. Smoothness is 5/2.
struct KernelParams {
  Eigen::VectorXd lengthscales;
  double signal_variance = 1.0;
  double noise_variance = 1e-3;  // on the standardized target scale

  void validate() const {
    detail::require(lengthscales.size() > 0 && (lengthscales.array() > 0.0).all(), ErrorKind::invalid_argument,
                    "length scales must be positive");
    detail::require(signal_variance > 0.0 && noise_variance > 0.0, ErrorKind::invalid_argument,
                    "kernel variances must be positive");
  }
};

struct Observation {
  Eigen::VectorXd point;
  double value = 0.0;
};

/// k = s2 (1 + sqrt5 d + 5 d^2 / 3) exp(-sqrt5 d), d the length-scaled distance.
inline double matern_kernel(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const KernelParams& p) {
  detail::require(x.size() == y.size() && x.size() == p.lengthscales.size(), ErrorKind::dimension_mismatch,
                  "kernel inputs and length scales differ in dimension");
  const double d = (x - y).cwiseQuotient(p.lengthscales).norm();
  const double s5d = std::sqrt(5.0) * d;
  return p.signal_variance * (1.0 + s5d + 5.0 * d * d / 3.0) * std::exp(-s5d);
}

struct GPState {
  KernelParams params;
  std::vector<Eigen::VectorXd> points;
  Eigen::VectorXd values_standardized;
  double target_mean = 0.0;
  double target_std = 1.0;
  Eigen::MatrixXd chol;  // lower factor of K + noise I
  Eigen::VectorXd alpha;

  Eigen::Index dim() const { return params.lengthscales.size(); }
};

/// Fits the surrogate. Points closer than 1e-12 are merged (their values averaged).
inline GPState gp_fit(std::span<const Observation> observations, const KernelParams& params) {
  detail::require(!observations.empty(), ErrorKind::invalid_argument, "GP fit needs at least one observation");
  params.validate();
  GPState s;
  s.params = params;
  std::vector<double> sums;
  std::vector<int> counts;
  for (const Observation& o : observations) {
    detail::require(o.point.size() == params.lengthscales.size(), ErrorKind::dimension_mismatch,
                    "observation dimension does not match the kernel");
    detail::require(o.point.allFinite() && std::isfinite(o.value), ErrorKind::invalid_argument,
                    "observations must be finite");
    std::size_t k = 0;
    for (; k < s.points.size(); ++k)
      if ((s.points[k] - o.point).norm() <= 1e-12) break;
    if (k == s.points.size()) {
      s.points.push_back(o.point);
      sums.push_back(0.0);
      counts.push_back(0);
    }
    sums[k] += o.value;
    ++counts[k];
  }
  const auto n = static_cast<Eigen::Index>(s.points.size());
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = sums[static_cast<std::size_t>(i)] / counts[static_cast<std::size_t>(i)];
  s.target_mean = y.mean();
  const double var = (y.array() - s.target_mean).square().mean();
  s.target_std = var > 1e-24 ? std::sqrt(var) : 1.0;
  s.values_standardized = (y.array() - s.target_mean) / s.target_std;

  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      k(i, j) = k(j, i) = matern_kernel(s.points[static_cast<std::size_t>(i)], s.points[static_cast<std::size_t>(j)], params);

  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::LLT<Eigen::MatrixXd> llt(k + s.params.noise_variance * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() == Eigen::Success) {
      s.chol = llt.matrixL();
      s.alpha = llt.solve(s.values_standardized);
      return s;
    }
    s.params.noise_variance *= 10.0;
  }
  throw Error(ErrorKind::numerical, "GP kernel matrix is not positive definite even with extra noise");
}

struct Posterior {
  double mu = 0.0;
  double sigma2 = 0.0;
};

inline Posterior gp_posterior(const GPState& s, const Eigen::VectorXd& x) {
  detail::require(x.size() == s.dim(), ErrorKind::dimension_mismatch, "query dimension does not match the GP");
  const auto n = static_cast<Eigen::Index>(s.points.size());
  Eigen::VectorXd kx(n);
  for (Eigen::Index i = 0; i < n; ++i) kx(i) = matern_kernel(x, s.points[static_cast<std::size_t>(i)], s.params);
  const Eigen::VectorXd v = s.chol.triangularView<Eigen::Lower>().solve(kx);
  Posterior p;
  p.mu = s.target_mean + s.target_std * kx.dot(s.alpha);
  p.sigma2 = std::max(0.0, s.params.signal_variance - v.squaredNorm()) * s.target_std * s.target_std;
  return p;
}

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// E[max(0, best - H)] for H ~ N(mu, sigma^2).
inline double expected_improvement(double mu, double sigma, double best) {
  const double gap = best - mu;
  if (sigma < 1e-12) return std::max(0.0, gap);
  const double z = gap / sigma;
  return std::max(0.0, gap * normal_cdf(z) + sigma * normal_pdf(z));
}

inline double expected_improvement(const GPState& s, const Eigen::VectorXd& x, double best) {
  detail::require(std::isfinite(best), ErrorKind::invalid_argument, "incumbent value must be finite");
  const Posterior p = gp_posterior(s, x);
  return expected_improvement(p.mu, std::sqrt(p.sigma2), best);
}

}  // namespace bolaco

#endif  // BOLACO_SURROGATE_HPP
