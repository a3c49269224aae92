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

#ifndef BOLACO_LINALG_HPP
#define BOLACO_LINALG_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "bolaco/error.hpp"

namespace bolaco {

struct SymmetricEigen {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // column i pairs with values(i)
};

struct JacobiOptions {
  int max_sweeps = 100;
  double tolerance = 1e-12;  // off-diagonal Frobenius norm relative to the trace
  double symmetry_tolerance = 1e-9;
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix, eigenvalues descending.
inline SymmetricEigen eig_sym_desc(const Eigen::MatrixXd& input, const JacobiOptions& opt = {}) {
  detail::require(input.rows() == input.cols(), ErrorKind::dimension_mismatch,
                  "eigendecomposition needs a square matrix");
  const Eigen::Index n = input.rows();
  const double norm = input.norm();
  detail::require(std::isfinite(norm), ErrorKind::numerical, "matrix has non-finite entries");
  detail::require((input - input.transpose()).norm() <= opt.symmetry_tolerance * norm,
                  ErrorKind::invalid_argument, "matrix is not symmetric");

  Eigen::MatrixXd a = 0.5 * (input + input.transpose());
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

  // Trace sets the scale for PSD input; the Frobenius norm covers indefinite input.
  const double scale = std::max(std::abs(a.trace()), norm);
  const double threshold = opt.tolerance * scale;
  auto off_diagonal = [&] {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  bool converged = scale == 0.0 || off_diagonal() <= threshold;
  for (int sweep = 0; sweep < opt.max_sweeps && !converged; ++sweep) {
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::hypot(theta, 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = a(q, p) = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = a(r, p);
          const double arq = a(r, q);
          a(r, p) = a(p, r) = c * arp - s * arq;
          a(r, q) = a(q, r) = s * arp + c * arq;
        }
        for (Eigen::Index r = 0; r < n; ++r) {
          const double vrp = v(r, p);
          const double vrq = v(r, q);
          v(r, p) = c * vrp - s * vrq;
          v(r, q) = s * vrp + c * vrq;
        }
      }
    }
    converged = off_diagonal() <= threshold;
  }
  if (!converged) throw Error(ErrorKind::numerical, "Jacobi eigensolver did not converge");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    out.values(k) = a(order[k], order[k]);
    out.vectors.col(k) = v.col(order[k]);
  }
  return out;
}

}  // namespace bolaco

#endif  // BOLACO_LINALG_HPP
