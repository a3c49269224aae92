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

#ifndef BOLACO_COMPRESS_HPP
#define BOLACO_COMPRESS_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <span>

#include "bolaco/allocation.hpp"
#include "bolaco/error.hpp"
#include "bolaco/factorize.hpp"
#include "bolaco/model.hpp"
#include "bolaco/posttrain.hpp"

namespace bolaco {

/// A base model with some linear layers replaced by low-rank factors
/// (and optionally diagonal adapters on top of them).
struct CompressedModel {
  std::shared_ptr<const Model> base;
  FactorMap factors;
  AdapterMap adapters;
  Allocation allocation;
};

inline Eigen::MatrixXd forward(const CompressedModel& m, std::span<const int> tokens,
                               const FeatureTap* tap = nullptr) {
  return forward(*m.base, tokens, LayerOverrides{&m.factors, &m.adapters}, tap);
}

using BasisMap = std::map<LayerId, FeatureBasis>;

inline BasisMap feature_bases(const StatsMap& stats) {
  BasisMap out;
  for (const auto& [id, s] : stats) out.emplace(id, feature_basis(s));
  return out;
}

/// Replaces every layer with an assigned rank by its feature-based factors.
inline CompressedModel compress_model(std::shared_ptr<const Model> model, const Allocation& alloc,
                                      const BasisMap& bases) {
  detail::require(model != nullptr, ErrorKind::invalid_argument, "no model to compress");
  CompressedModel out;
  out.base = model;
  out.allocation = alloc;
  for (const auto& [id, rank] : alloc.ranks) {
    if (!rank) continue;
    const auto it = bases.find(id);
    if (it == bases.end()) throw Error(ErrorKind::missing_input, "missing feature statistics for layer " + id.str());
    out.factors.emplace(id, afm_decompose(model->weight(id), it->second, *rank));
  }
  return out;
}

inline CompressedModel compress_model(std::shared_ptr<const Model> model, const Allocation& alloc,
                                      const StatsMap& stats) {
  BasisMap bases;
  for (const auto& [id, rank] : alloc.ranks) {
    if (!rank) continue;
    const auto it = stats.find(id);
    if (it == stats.end()) throw Error(ErrorKind::missing_input, "missing feature statistics for layer " + id.str());
    bases.emplace(id, feature_basis(it->second));
  }
  return compress_model(std::move(model), alloc, bases);
}

/// Stored parameters of the seven linear categories; a factored layer counts
/// r (d1 + d2) plus its bias, widened by any adapter it carries.
inline std::uint64_t param_count(const CompressedModel& m) {
  std::uint64_t n = 0;
  for (const LayerId& id : m.base->layer_ids()) {
    const auto it = m.factors.find(id);
    if (it == m.factors.end()) {
      n += static_cast<std::uint64_t>(m.base->weight(id).size());
      continue;
    }
    n += it->second.parameter_count();
    const auto ad = m.adapters.find(id);
    if (ad != m.adapters.end()) {
      n += static_cast<std::uint64_t>(ad->second.r_prime) *
           static_cast<std::uint64_t>(it->second.rows() + it->second.cols());
    }
  }
  return n;
}

/// 1 - param_count(compressed) / param_count(base).
inline double compression_ratio(const CompressedModel& m) {
  return 1.0 - static_cast<double>(param_count(m)) / static_cast<double>(param_count(*m.base));
}

}  // namespace bolaco

#endif  // BOLACO_COMPRESS_HPP
