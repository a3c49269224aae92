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

// Streaming feature statistics: Welford accumulation, pairwise merge, sample
// covariance and the pooled covariance over calibration groups.

#ifndef BOLACO_COVARIANCE_HPP
#define BOLACO_COVARIANCE_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "bolaco/binary_io.hpp"
#include "bolaco/error.hpp"

namespace bolaco {

/// Finalized statistics of one feature stream.
struct CovarianceStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::uint64_t count = 0;

  Eigen::Index dim() const { return mean.size(); }
};

/// Running mean and scatter (sum of outer products of deviations) of one feature stream.
/// Accumulators are plain values: fill one per worker or group, combine with merge().
class CovAccumulator {
 public:
  explicit CovAccumulator(Eigen::Index dim) {
    detail::require(dim >= 1, ErrorKind::invalid_argument,
                    "accumulator dimension must be positive");
    mean_ = Eigen::VectorXd::Zero(dim);
    scatter_ = Eigen::MatrixXd::Zero(dim, dim);
  }

  Eigen::Index dim() const { return mean_.size(); }
  std::uint64_t count() const { return count_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& scatter() const { return scatter_; }

  /// Welford update with one sample.
  void accumulate(const Eigen::Ref<const Eigen::VectorXd>& sample) {
    check_sample(sample.size(), sample.allFinite());
    ++count_;
    const Eigen::VectorXd delta = sample - mean_;
    mean_ += delta / static_cast<double>(count_);
    scatter_.noalias() += delta * (sample - mean_).transpose();
  }

  /// Adds every column of `samples`. The block is reduced two-pass and merged in,
  /// which matches per-sample accumulation up to rounding.
  void accumulate_batch(const Eigen::Ref<const Eigen::MatrixXd>& samples) {
    if (samples.cols() == 0) return;
    check_sample(samples.rows(), samples.allFinite());
    CovAccumulator block(dim());
    block.count_ = static_cast<std::uint64_t>(samples.cols());
    block.mean_ = samples.rowwise().mean();
    const Eigen::MatrixXd centered = samples.colwise() - block.mean_;
    block.scatter_.noalias() = centered * centered.transpose();
    merge(block);
  }

  /// Pairwise combine: the result equals accumulating both streams in sequence.
  void merge(const CovAccumulator& other) {
    detail::require(other.dim() == dim(), ErrorKind::dimension_mismatch,
                    "cannot merge accumulators of dimension " + std::to_string(dim()) + " and " +
                        std::to_string(other.dim()));
    if (other.count_ == 0) return;
    if (count_ == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(count_);
    const double nb = static_cast<double>(other.count_);
    const double n = na + nb;
    const Eigen::VectorXd delta = other.mean_ - mean_;
    mean_ += delta * (nb / n);
    scatter_ += other.scatter_;
    scatter_.noalias() += (delta * delta.transpose()) * (na * nb / n);
    count_ += other.count_;
  }

 private:
  void check_sample(Eigen::Index size, bool finite) const {
    detail::require(size == dim(), ErrorKind::dimension_mismatch,
                    "sample of length " + std::to_string(size) + " fed to accumulator of dimension " +
                        std::to_string(dim()));
    detail::require(finite, ErrorKind::invalid_argument, "sample contains non-finite entries");
  }

  std::uint64_t count_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd scatter_;
};

inline CovAccumulator accumulator_new(Eigen::Index dim) { return CovAccumulator(dim); }

inline CovAccumulator merge(CovAccumulator a, const CovAccumulator& b) {
  a.merge(b);
  return a;
}

/// Sample covariance with the n-1 denominator; symmetry is re-enforced.
inline CovarianceStats finalize_scm(const CovAccumulator& acc) {
  detail::require(acc.count() >= 2, ErrorKind::insufficient_samples,
                  "sample covariance needs at least two samples, have " +
                      std::to_string(acc.count()));
  CovarianceStats out;
  out.mean = acc.mean();
  out.count = acc.count();
  const Eigen::MatrixXd cov = acc.scatter() / static_cast<double>(acc.count() - 1);
  out.cov = 0.5 * (cov + cov.transpose());
  return out;
}

/// Pooled covariance: the unweighted mean of the group covariances. The pooled
/// mean is count-weighted, so it equals the global mean of a partition.
inline CovarianceStats pooled(std::span<const CovarianceStats> groups) {
  detail::require(!groups.empty(), ErrorKind::invalid_argument,
                  "pooled covariance needs at least one group");
  const Eigen::Index dim = groups.front().dim();
  CovarianceStats out;
  out.mean = Eigen::VectorXd::Zero(dim);
  out.cov = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& g : groups) {
    detail::require(g.dim() == dim && g.cov.rows() == dim && g.cov.cols() == dim,
                    ErrorKind::dimension_mismatch, "pooled groups have different dimensions");
    out.cov += g.cov;
    out.mean += g.mean * static_cast<double>(g.count);
    out.count += g.count;
  }
  out.cov /= static_cast<double>(groups.size());
  if (out.count > 0) out.mean /= static_cast<double>(out.count);
  return out;
}

// "BOLC" file: magic, u32 version, u64 dim, u64 count, f64 mean[dim], f64 cov[dim*dim] row-major.
inline constexpr std::uint32_t kStatsFormatVersion = 1;

inline void write_stats(std::ostream& os, const CovarianceStats& stats) {
  os.write("BOLC", 4);
  detail::write_le<std::uint32_t>(os, kStatsFormatVersion);
  detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(stats.dim()));
  detail::write_le<std::uint64_t>(os, stats.count);
  for (Eigen::Index i = 0; i < stats.dim(); ++i) detail::write_le<double>(os, stats.mean(i));
  for (Eigen::Index i = 0; i < stats.dim(); ++i)
    for (Eigen::Index j = 0; j < stats.dim(); ++j) detail::write_le<double>(os, stats.cov(i, j));
}

inline CovarianceStats read_stats(std::istream& is, const std::string& name = "stats") {
  detail::read_magic(is, "BOLC", name);
  const auto version = detail::read_le<std::uint32_t>(is, "version");
  detail::require(version == kStatsFormatVersion, ErrorKind::io,
                  name + ": unsupported stats version " + std::to_string(version));
  const auto dim = detail::read_le<std::uint64_t>(is, "dim");
  detail::require(dim >= 1 && dim < (1ULL << 20), ErrorKind::io, name + ": implausible dimension");
  CovarianceStats stats;
  stats.count = detail::read_le<std::uint64_t>(is, "count");
  const auto d = static_cast<Eigen::Index>(dim);
  stats.mean.resize(d);
  stats.cov.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) stats.mean(i) = detail::read_le<double>(is, "mean");
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) stats.cov(i, j) = detail::read_le<double>(is, "cov");
  return stats;
}

inline void save_stats(const std::filesystem::path& path, const CovarianceStats& stats) {
  auto os = detail::open_output(path);
  write_stats(os, stats);
  if (!os) throw Error(ErrorKind::io, "failed writing " + path.string());
}

inline CovarianceStats load_stats(const std::filesystem::path& path) {
  auto is = detail::open_input(path);
  return read_stats(is, path.string());
}

}  // namespace bolaco

#endif  // BOLACO_COVARIANCE_HPP
