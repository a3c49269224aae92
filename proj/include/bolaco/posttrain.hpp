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

// Diagonal subspace adapters for factored layers:
//
//   y = (B A + diag(lambda_b) B' diag(lambda_d) A') x + bias
//
// where B' / A' are the leading r' columns / rows of the frozen factors and
// only the two diagonals are trained.

#ifndef BOLACO_POSTTRAIN_HPP
#define BOLACO_POSTTRAIN_HPP

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "bolaco/error.hpp"
#include "bolaco/factorize.hpp"

namespace bolaco {

struct Adapter {
  int r_prime = 0;
  Eigen::MatrixXd b_sub;  // d2 x r'
  Eigen::MatrixXd a_sub;  // r' x d1
  Eigen::VectorXd lambda_b;
  Eigen::VectorXd lambda_d;
};

/// lambda_b starts at 0.1 and lambda_d at 0, so a fresh adapter contributes exactly zero.
inline Adapter init_adapters(const LowRankFactors& f, int r_prime) {
  detail::require(r_prime >= 1 && r_prime <= f.rank, ErrorKind::invalid_argument,
                  "adapter rank " + std::to_string(r_prime) + " exceeds factor rank " +
                      std::to_string(f.rank));
  Adapter ad;
  ad.r_prime = r_prime;
  ad.b_sub = f.b.leftCols(r_prime);
  ad.a_sub = f.a.topRows(r_prime);
  ad.lambda_b = Eigen::VectorXd::Constant(f.rows(), 0.1);
  ad.lambda_d = Eigen::VectorXd::Zero(r_prime);
  return ad;
}

namespace detail {

inline void check_adapter(const LowRankFactors& f, const Adapter& ad, const Eigen::MatrixXd& x) {
  require(ad.b_sub.rows() == f.rows() && ad.a_sub.cols() == f.cols() &&
              ad.lambda_b.size() == f.rows() && ad.lambda_d.size() == ad.r_prime &&
              ad.b_sub.cols() == ad.r_prime && ad.a_sub.rows() == ad.r_prime,
          ErrorKind::dimension_mismatch, "adapter does not match its factors");
  require(x.rows() == f.cols(), ErrorKind::dimension_mismatch,
          "adapter input has the wrong number of rows");
}

}  // namespace detail

inline Eigen::MatrixXd adapter_forward(const LowRankFactors& f, const Adapter& ad,
                                       const Eigen::MatrixXd& x) {
  detail::check_adapter(f, ad, x);
  Eigen::MatrixXd y = apply_factors(f, x);
  const Eigen::MatrixXd q = ad.lambda_d.asDiagonal() * (ad.a_sub * x);
  y.noalias() += ad.lambda_b.asDiagonal() * (ad.b_sub * q);
  return y;
}

struct AdapterGrad {
  Eigen::VectorXd lambda_b;
  Eigen::VectorXd lambda_d;
};

/// Gradient of 0.5 * ||adapter_forward(f, ad, x) - target||_F^2 with respect to both diagonals.
inline AdapterGrad adapter_grad(const LowRankFactors& f, const Adapter& ad, const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& target) {
  detail::check_adapter(f, ad, x);
  detail::require(target.rows() == f.rows() && target.cols() == x.cols(),
                  ErrorKind::dimension_mismatch, "target shape does not match the output");
  const Eigen::MatrixXd q = ad.a_sub * x;
  const Eigen::MatrixXd p = ad.b_sub * (ad.lambda_d.asDiagonal() * q);
  Eigen::MatrixXd y = apply_factors(f, x);
  y.noalias() += ad.lambda_b.asDiagonal() * p;
  const Eigen::MatrixXd residual = y - target;
  const Eigen::MatrixXd back = (ad.lambda_b.asDiagonal() * ad.b_sub).transpose() * residual;
  AdapterGrad g;
  g.lambda_b = residual.cwiseProduct(p).rowwise().sum();
  g.lambda_d = back.cwiseProduct(q).rowwise().sum();
  return g;
}

inline double adapter_loss(const LowRankFactors& f, const Adapter& ad, const Eigen::MatrixXd& x,
                           const Eigen::MatrixXd& target) {
  return 0.5 * (adapter_forward(f, ad, x) - target).squaredNorm();
}

struct PosttrainOptions {
  int steps = 100;
  double lr = 1e-2;
  int r_prime = 8;
  bool backtracking = true;  // halve lr and reject the step when the loss goes up
};

struct PosttrainResult {
  Adapter adapter;             // best iterate
  std::vector<double> losses;  // accepted loss per step, losses[0] is the initial loss
};

namespace detail {

/// Loss and gradient with the frozen parts precomputed: y0 = B A x + bias and Q = A' x.
struct AdapterProblem {
  Eigen::MatrixXd y0, q, target;
  Eigen::MatrixXd b_sub;

  AdapterProblem(const LowRankFactors& f, const Adapter& ad, const Eigen::MatrixXd& x, const Eigen::MatrixXd& t)
      : y0(apply_factors(f, x)), q(ad.a_sub * x), target(t), b_sub(ad.b_sub) {}

  Eigen::MatrixXd branch(const Adapter& ad) const { return b_sub * (ad.lambda_d.asDiagonal() * q); }

  double loss(const Adapter& ad) const {
    return 0.5 * (y0 + ad.lambda_b.asDiagonal() * branch(ad) - target).squaredNorm();
  }

  AdapterGrad grad(const Adapter& ad) const {
    const Eigen::MatrixXd p = branch(ad);
    const Eigen::MatrixXd residual = y0 + ad.lambda_b.asDiagonal() * p - target;
    AdapterGrad g;
    g.lambda_b = residual.cwiseProduct(p).rowwise().sum();
    g.lambda_d = ((ad.lambda_b.asDiagonal() * b_sub).transpose() * residual).cwiseProduct(q).rowwise().sum();
    return g;
  }
};

}  // namespace detail

/// Gradient descent on 0.5 ||adapter_forward(f, ad, x) - target||^2.
///
/// For AFM and truncated-SVD factors the residual on W x is orthogonal to
/// span(B), so a fresh adapter sits at a stationary point when the target is
/// W x on the same inputs. Useful targets come from the original network while
/// x comes from the compressed one.
inline PosttrainResult posttrain_to_target(const LowRankFactors& f, const Eigen::MatrixXd& x_calib,
                                           const Eigen::MatrixXd& target, const PosttrainOptions& opt = {}) {
  detail::require(opt.steps >= 0, ErrorKind::invalid_argument, "steps must be non-negative");
  detail::require(opt.lr > 0.0, ErrorKind::invalid_argument, "learning rate must be positive");
  detail::require(target.rows() == f.rows() && target.cols() == x_calib.cols(), ErrorKind::dimension_mismatch,
                  "target shape does not match the output");
  PosttrainResult out;
  Adapter current = init_adapters(f, opt.r_prime);
  detail::check_adapter(f, current, x_calib);
  const detail::AdapterProblem problem(f, current, x_calib, target);
  double loss = problem.loss(current);
  const double initial = loss;
  out.losses.push_back(loss);
  out.adapter = current;
  double best = loss;
  double lr = opt.lr;

  for (int step = 0; step < opt.steps; ++step) {
    const AdapterGrad g = problem.grad(current);
    Adapter trial = current;
    trial.lambda_b -= lr * g.lambda_b;
    trial.lambda_d -= lr * g.lambda_d;
    const double trial_loss = problem.loss(trial);
    if (!opt.backtracking) {
      if (!std::isfinite(trial_loss) || trial_loss > 10.0 * initial) {
        throw Error(ErrorKind::numerical,
                    "post-training diverged (loss " + std::to_string(trial_loss) +
                        "); try a smaller learning rate");
      }
      current = std::move(trial);
      loss = trial_loss;
    } else if (std::isfinite(trial_loss) && trial_loss <= loss) {
      current = std::move(trial);
      loss = trial_loss;
    } else {
      lr *= 0.5;
      if (lr < opt.lr * 1e-12) break;
    }
    out.losses.push_back(loss);
    if (loss < best) {
      best = loss;
      out.adapter = current;
    }
  }
  return out;
}

/// Target is W_original x_calib.
inline PosttrainResult posttrain_layer(const Eigen::MatrixXd& w_original, const LowRankFactors& f,
                                       const Eigen::MatrixXd& x_calib, const PosttrainOptions& opt = {}) {
  detail::require(w_original.rows() == f.rows() && w_original.cols() == f.cols(),
                  ErrorKind::dimension_mismatch, "original weight does not match the factors");
  detail::require(x_calib.rows() == f.cols(), ErrorKind::dimension_mismatch,
                  "calibration input has the wrong number of rows");
  return posttrain_to_target(f, x_calib, w_original * x_calib, opt);
}

/// Folds the adapter into wider factors: B' = [B | diag(lambda_b) B_r'], A' = [A ; diag(lambda_d) A_r'].
inline LowRankFactors merge_adapter(const LowRankFactors& f, const Adapter& ad) {
  LowRankFactors m;
  m.method = f.method;
  m.rank = f.rank + ad.r_prime;
  m.bias = f.bias;
  m.b.resize(f.rows(), m.rank);
  m.b << f.b, ad.lambda_b.asDiagonal() * ad.b_sub;
  m.a.resize(m.rank, f.cols());
  m.a << f.a, ad.lambda_d.asDiagonal() * ad.a_sub;
  return m;
}

}  // namespace bolaco

#endif  // BOLACO_POSTTRAIN_HPP
