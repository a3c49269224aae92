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

// Grouping schemes and compression-ratio allocations under a parameter budget.
//
// A group shares one ratio lambda across its member layers. The budget is the
// parameter-weighted mean of the realized per-layer ratio over all seven
// linear categories, which must land within kBudgetTolerance of rho.

#ifndef BOLACO_ALLOCATION_HPP
#define BOLACO_ALLOCATION_HPP

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bolaco/error.hpp"
#include "bolaco/factorize.hpp"
#include "bolaco/model.hpp"
#include "bolaco/random.hpp"

namespace bolaco {

inline constexpr double kBudgetTolerance = 0.01;
inline constexpr double kMaxGroupRatio = 0.95;

enum class GroupKind { attention, ffn };
enum class SchemeName { five_by_one, five_by_four, custom };

inline std::string to_string(SchemeName s) {
  switch (s) {
    case SchemeName::five_by_one: return "5x1";
    case SchemeName::five_by_four: return "5x4";
    default: return "custom";
  }
}

inline SchemeName parse_scheme_name(std::string_view s) {
  if (s == "5x1") return SchemeName::five_by_one;
  if (s == "5x4") return SchemeName::five_by_four;
  if (s == "custom") return SchemeName::custom;
  throw Error(ErrorKind::invalid_config, "unknown grouping scheme '" + std::string(s) + "'");
}

struct Group {
  std::string label;
  GroupKind kind = GroupKind::attention;
  std::vector<LayerId> members;
  double abstract_weight = 0.0;  // used only when `members` is empty
  bool na = false;               // excluded from compression and from the search
};

/// Layers not in any group stay uncompressed (attn_v in the LLaMA presets).
struct GroupingScheme {
  SchemeName name = SchemeName::custom;
  std::vector<Group> groups;
  int blocks = 1;  // layer partitions, 4 for 5x4

  std::size_t size() const { return groups.size(); }

  std::optional<std::size_t> group_of(const LayerId& id) const {
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (const LayerId& m : groups[g].members)
        if (m == id) return g;
    return std::nullopt;
  }

  bool compatible(const GroupingScheme& other) const {
    if (name != other.name || groups.size() != other.groups.size()) return false;
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (groups[g].label != other.groups[g].label || groups[g].members != other.groups[g].members) return false;
    return true;
  }
};

namespace detail {

struct GroupTemplate {
  const char* label;
  std::vector<Category> cats;
  GroupKind kind;
};

inline const std::vector<GroupTemplate>& five_group_templates() {
  static const std::vector<GroupTemplate> t = {
      {"attn_qk", {Category::attn_q, Category::attn_k}, GroupKind::attention},
      {"attn_o", {Category::attn_o}, GroupKind::attention},
      {"mlp_gate", {Category::mlp_gate}, GroupKind::ffn},
      {"mlp_up", {Category::mlp_up}, GroupKind::ffn},
      {"mlp_down", {Category::mlp_down}, GroupKind::ffn},
  };
  return t;
}

inline GroupingScheme five_groups(int n_layers, int blocks, SchemeName name) {
  require(n_layers >= 1, ErrorKind::invalid_config, "scheme needs at least one layer");
  require(blocks >= 1 && blocks <= n_layers, ErrorKind::invalid_config,
          "cannot split " + std::to_string(n_layers) + " layers into " + std::to_string(blocks) + " blocks");
  GroupingScheme s;
  s.name = name;
  s.blocks = blocks;
  for (int b = 0; b < blocks; ++b) {
    // Contiguous layer ranges, sizes differing by at most one.
    const int begin = b * n_layers / blocks;
    const int end = (b + 1) * n_layers / blocks;
    for (const auto& t : five_group_templates()) {
      Group g;
      g.label = blocks == 1 ? t.label : "b" + std::to_string(b) + "." + t.label;
      g.kind = t.kind;
      for (int l = begin; l < end; ++l)
        for (Category c : t.cats) g.members.push_back({l, c});
      s.groups.push_back(std::move(g));
    }
  }
  return s;
}

}  // namespace detail

/// attn_q/k share a group; each category shares one ratio across all layers.
inline GroupingScheme five_by_one(int n_layers) {
  return detail::five_groups(n_layers, 1, SchemeName::five_by_one);
}

/// five_by_one repeated over four contiguous layer blocks (20 groups).
inline GroupingScheme five_by_four(int n_layers) {
  return detail::five_groups(n_layers, 4, SchemeName::five_by_four);
}

/// One group holding a single category in every layer (sensitivity sweeps).
inline GroupingScheme single_category(Category c, int n_layers) {
  GroupingScheme s;
  s.name = SchemeName::custom;
  Group g;
  g.label = std::string(to_string(c));
  g.kind = is_attention(c) ? GroupKind::attention : GroupKind::ffn;
  for (int l = 0; l < n_layers; ++l) g.members.push_back({l, c});
  s.groups.push_back(std::move(g));
  return s;
}

/// Groups with weights only and no layers; the realized ratio is lambda itself.
inline GroupingScheme abstract_scheme(std::span<const double> weights, std::span<const GroupKind> kinds = {}) {
  GroupingScheme s;
  s.name = SchemeName::custom;
  for (std::size_t g = 0; g < weights.size(); ++g) {
    Group grp;
    grp.label = "g" + std::to_string(g);
    grp.kind = g < kinds.size() ? kinds[g] : GroupKind::attention;
    grp.abstract_weight = weights[g];
    s.groups.push_back(std::move(grp));
  }
  return s;
}

struct Allocation {
  GroupingScheme scheme;
  std::vector<std::optional<double>> lambdas;  // per group, nullopt = NA
  double target_rho = 0.0;
  std::map<LayerId, std::optional<int>> ranks;  // per layer; nullopt = left dense

  /// Coordinates seen by the surrogate: lambdas of the groups not NA in the scheme.
  std::vector<double> coordinates() const {
    std::vector<double> x;
    for (std::size_t g = 0; g < scheme.size(); ++g)
      if (!scheme.groups[g].na) x.push_back(lambdas[g].value_or(0.0));
    return x;
  }
};

/// Continuous budget repair on group weights. Non-NA ratios are scaled by a
/// common factor so the weighted mean hits rho, clipped to [0, 0.95], and the
/// clipped excess is redistributed over the rest (uniformly when the rest is all zero).
inline std::vector<std::optional<double>> repair_lambdas(std::span<const double> raw,
                                                         std::span<const double> weights,
                                                         const std::vector<bool>& na, double total_weight,
                                                         double rho, int max_iter = 20) {
  const std::size_t n = raw.size();
  detail::require(weights.size() == n && na.size() == n, ErrorKind::dimension_mismatch,
                  "raw ratios, weights and NA mask differ in length");
  detail::require(rho > 0.0 && rho < 1.0, ErrorKind::invalid_config, "rho must lie in (0, 1)");
  detail::require(total_weight > 0.0, ErrorKind::invalid_config, "total weight must be positive");
  double capacity = 0.0;
  for (std::size_t g = 0; g < n; ++g) {
    if (na[g]) continue;
    detail::require(raw[g] >= 0.0 && std::isfinite(raw[g]), ErrorKind::invalid_argument,
                    "raw ratios must be finite and non-negative");
    capacity += kMaxGroupRatio * weights[g];
  }
  const double target = rho * total_weight;
  detail::require(capacity > 0.0, ErrorKind::invalid_config, "every group is NA; nothing to compress");
  detail::require(target <= capacity * (1.0 + 1e-12), ErrorKind::invalid_config,
                  "budget rho=" + std::to_string(rho) + " unreachable with ratios capped at 0.95");

  std::vector<double> lam(n, 0.0);
  std::vector<bool> clipped(n, false);
  for (std::size_t g = 0; g < n; ++g)
    if (!na[g]) lam[g] = raw[g];

  for (int iter = 0; iter < max_iter; ++iter) {
    double fixed = 0.0, free_mass = 0.0, free_weight = 0.0;
    for (std::size_t g = 0; g < n; ++g) {
      if (na[g]) continue;
      if (clipped[g]) {
        fixed += kMaxGroupRatio * weights[g];
      } else {
        free_mass += lam[g] * weights[g];
        free_weight += weights[g];
      }
    }
    if (free_weight <= 0.0) break;
    const double want = target - fixed;
    for (std::size_t g = 0; g < n; ++g) {
      if (na[g] || clipped[g]) continue;
      lam[g] = free_mass > 0.0 ? lam[g] * (want / free_mass) : want / free_weight;
    }
    bool newly_clipped = false;
    for (std::size_t g = 0; g < n; ++g) {
      if (na[g] || clipped[g]) continue;
      if (lam[g] > kMaxGroupRatio) {
        lam[g] = kMaxGroupRatio;
        clipped[g] = true;
        newly_clipped = true;
      }
      lam[g] = std::max(lam[g], 0.0);
    }
    if (!newly_clipped) break;
  }

  std::vector<std::optional<double>> out(n);
  for (std::size_t g = 0; g < n; ++g)
    if (!na[g]) out[g] = lam[g];
  return out;
}

/// Budget geometry of a grouping scheme over a concrete model shape (or abstract weights).
class AllocationSpace {
 public:
  AllocationSpace(GroupingScheme scheme, std::optional<ModelConfig> config)
      : scheme_(std::move(scheme)), config_(std::move(config)) {
    detail::require(!scheme_.groups.empty(), ErrorKind::invalid_config, "scheme has no groups");
    if (config_) {
      for (const LayerId& id : all_layer_ids(*config_)) total_ += static_cast<double>(layer_shape(*config_, id.category).size());
    }
    for (const Group& g : scheme_.groups) {
      double w = 0.0;
      if (g.members.empty()) {
        w = g.abstract_weight;
      } else {
        detail::require(config_.has_value(), ErrorKind::invalid_config,
                        "group '" + g.label + "' has layers but no model shape was given");
        for (const LayerId& id : g.members) {
          detail::require(id.layer >= 0 && id.layer < config_->n_layers, ErrorKind::invalid_config,
                          "group '" + g.label + "' references " + id.str() + " outside the model");
          w += static_cast<double>(layer_shape(*config_, id.category).size());
        }
      }
      detail::require(w > 0.0, ErrorKind::invalid_config, "group '" + g.label + "' has zero weight");
      weights_.push_back(w);
      if (!config_) total_ += w;
    }
    build_lattices();
  }

  const GroupingScheme& scheme() const { return scheme_; }
  const std::optional<ModelConfig>& config() const { return config_; }
  std::span<const double> group_weights() const { return weights_; }
  double total_weight() const { return total_; }

  std::vector<bool> na_mask() const {
    std::vector<bool> na;
    for (const auto& g : scheme_.groups) na.push_back(g.na);
    return na;
  }

  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count_if(scheme_.groups.begin(), scheme_.groups.end(),
                                                  [](const Group& g) { return !g.na; }));
  }

  /// Per-layer ranks implied by group ratios.
  std::map<LayerId, std::optional<int>> derive_ranks(std::span<const std::optional<double>> lambdas) const {
    std::map<LayerId, std::optional<int>> ranks;
    if (!config_) return ranks;
    for (const LayerId& id : all_layer_ids(*config_)) ranks[id] = std::nullopt;
    for (std::size_t g = 0; g < scheme_.size(); ++g) {
      if (!lambdas[g] || scheme_.groups[g].na) continue;
      for (const LayerId& id : scheme_.groups[g].members) {
        const LayerShape s = layer_shape(*config_, id.category);
        ranks[id] = rank_from_ratio(s.cols, s.rows, *lambdas[g]);
      }
    }
    return ranks;
  }

  /// Builds an allocation from group ratios without repairing them.
  Allocation from_lambdas(std::vector<std::optional<double>> lambdas, double rho) const {
    detail::require(lambdas.size() == scheme_.size(), ErrorKind::dimension_mismatch,
                    "allocation has " + std::to_string(lambdas.size()) + " ratios for " +
                        std::to_string(scheme_.size()) + " groups");
    for (std::size_t g = 0; g < lambdas.size(); ++g) {
      if (scheme_.groups[g].na) lambdas[g].reset();
      if (lambdas[g]) {
        detail::require(*lambdas[g] >= 0.0 && *lambdas[g] < 1.0, ErrorKind::invalid_argument,
                        "group ratio outside [0, 1)");
      }
    }
    Allocation a;
    a.scheme = scheme_;
    a.target_rho = rho;
    a.ranks = derive_ranks(lambdas);
    a.lambdas = std::move(lambdas);
    return a;
  }

  /// Builds an allocation from explicit per-group ranks (nullopt = NA). Lambdas
  /// are the ratios whose rounded rank is the given one on the group's first member.
  Allocation from_group_ranks(std::span<const std::optional<int>> group_ranks, double rho) const {
    detail::require(config_.has_value(), ErrorKind::invalid_config, "rank allocations need a model shape");
    detail::require(group_ranks.size() == scheme_.size(), ErrorKind::dimension_mismatch,
                    "rank vector has " + std::to_string(group_ranks.size()) + " entries for " +
                        std::to_string(scheme_.size()) + " groups");
    Allocation a;
    a.scheme = scheme_;
    a.target_rho = rho;
    a.lambdas.resize(scheme_.size());
    for (const LayerId& id : all_layer_ids(*config_)) a.ranks[id] = std::nullopt;
    for (std::size_t g = 0; g < scheme_.size(); ++g) {
      if (!group_ranks[g]) continue;
      const int r = *group_ranks[g];
      const Group& grp = scheme_.groups[g];
      for (const LayerId& id : grp.members) {
        const LayerShape s = layer_shape(*config_, id.category);
        detail::require(r >= 1 && r <= std::min(s.rows, s.cols), ErrorKind::invalid_argument,
                        "rank " + std::to_string(r) + " invalid for " + id.str());
        a.ranks[id] = r;
      }
      const LayerShape s0 = layer_shape(*config_, grp.members.front().category);
      a.lambdas[g] = std::max(0.0, 1.0 - r / rank_budget(s0));
    }
    return a;
  }

  /// Parameter-weighted mean of the realized per-layer ratio, counting the bias
  /// of feature-based factors; NA and dense layers count as 0.
  double effective_ratio(const Allocation& a) const {
    double removed = 0.0;
    for (std::size_t g = 0; g < scheme_.size(); ++g) {
      if (!a.lambdas[g]) continue;
      const Group& grp = scheme_.groups[g];
      if (grp.members.empty()) {
        removed += weights_[g] * *a.lambdas[g];
        continue;
      }
      for (const LayerId& id : grp.members) {
        const auto it = a.ranks.find(id);
        if (it == a.ranks.end() || !it->second) continue;
        const LayerShape s = layer_shape(*config_, id.category);
        removed += static_cast<double>(s.size()) -
                   static_cast<double>(*it->second * (s.rows + s.cols) + s.rows);
      }
    }
    return removed / total_;
  }

  bool within_budget(const Allocation& a, double tol = kBudgetTolerance) const {
    return std::abs(effective_ratio(a) - a.target_rho) <= tol;
  }

  /// Continuous repair, then (for groups with layers) a move onto ratios whose
  /// rounded ranks meet the budget.
  Allocation repair(std::span<const double> raw, double rho) const {
    detail::require(raw.size() == scheme_.size(), ErrorKind::dimension_mismatch,
                    "raw ratio vector length does not match the scheme");
    auto lambdas = repair_lambdas(raw, weights_, na_mask(), total_, rho);
    if (!lattices_.empty()) lambdas = snap_to_ranks(lambdas, rho);
    return from_lambdas(std::move(lambdas), rho);
  }

 private:
  struct Option {
    double lambda;     // stored ratio
    double realized;   // realized ratio of the whole group
  };

  static double rank_budget(const LayerShape& s) {
    return static_cast<double>(s.rows) * static_cast<double>(s.cols) / static_cast<double>(s.rows + s.cols);
  }

  void build_lattices() {
    if (!config_) return;
    bool any_members = false;
    for (const Group& g : scheme_.groups) any_members |= !g.members.empty();
    if (!any_members) return;
    lattices_.resize(scheme_.size());
    for (std::size_t gi = 0; gi < scheme_.size(); ++gi) {
      const Group& g = scheme_.groups[gi];
      if (g.na || g.members.empty()) continue;
      auto realized = [&](double lambda) {
        double removed = 0.0;
        for (const LayerId& id : g.members) {
          const LayerShape s = layer_shape(*config_, id.category);
          if (auto r = rank_from_ratio(s.cols, s.rows, lambda)) {
            removed += static_cast<double>(s.size()) - static_cast<double>(*r * (s.rows + s.cols) + s.rows);
          }
        }
        return removed / weights_[gi];
      };
      auto& opts = lattices_[gi];
      opts.push_back({0.0, realized(0.0)});
      const LayerShape s0 = layer_shape(*config_, g.members.front().category);
      const double budget = rank_budget(s0);
      for (int r = 8; static_cast<std::int64_t>(r) * (s0.rows + s0.cols) < s0.size(); r += 8) {
        const double lambda = 1.0 - r / budget;
        if (lambda > kMaxGroupRatio || lambda <= 0.0) continue;
        opts.push_back({lambda, realized(lambda)});
      }
      std::sort(opts.begin(), opts.end(), [](const Option& a, const Option& b) { return a.realized < b.realized; });
    }
  }

  /// Picks one lattice option per group so the realized budget is within tolerance,
  /// minimizing the weighted squared move from the continuous ratios.
  std::vector<std::optional<double>> snap_to_ranks(const std::vector<std::optional<double>>& cont,
                                                   double rho) const {
    const std::size_t n = scheme_.size();
    std::vector<std::size_t> active;
    double fixed_removed = 0.0;  // abstract groups mixed with layer groups keep their ratio
    for (std::size_t g = 0; g < n; ++g) {
      if (!cont[g]) continue;
      if (lattices_[g].empty()) {
        fixed_removed += weights_[g] * *cont[g];
      } else {
        active.push_back(g);
      }
    }
    const double tol = kBudgetTolerance * (1.0 - 1e-6);
    auto budget_err = [&](const std::vector<std::size_t>& choice) {
      double removed = fixed_removed;
      for (std::size_t i = 0; i < active.size(); ++i) removed += weights_[active[i]] * lattices_[active[i]][choice[i]].realized;
      return removed / total_ - rho;
    };
    auto move_cost = [&](std::size_t i, std::size_t k) {
      const std::size_t g = active[i];
      const double d = lattices_[g][k].realized - *cont[g];
      return weights_[g] * d * d;
    };

    std::vector<std::size_t> best(active.size(), 0);
    double product = 1.0;
    for (std::size_t g : active) product *= static_cast<double>(lattices_[g].size());

    bool found = false;
    if (product <= 200000.0) {
      // Exhaustive over the lattice.
      std::vector<std::size_t> choice(active.size(), 0);
      double best_cost = std::numeric_limits<double>::infinity();
      while (true) {
        if (std::abs(budget_err(choice)) <= tol) {
          double cost = 0.0;
          for (std::size_t i = 0; i < active.size(); ++i) cost += move_cost(i, choice[i]);
          if (cost < best_cost) {
            best_cost = cost;
            best = choice;
            found = true;
          }
        }
        std::size_t i = 0;
        for (; i < active.size(); ++i) {
          if (++choice[i] < lattices_[active[i]].size()) break;
          choice[i] = 0;
        }
        if (i == active.size()) break;
      }
    } else {
      // Nearest option per group, then greedy single steps toward the budget.
      for (std::size_t i = 0; i < active.size(); ++i) {
        double c = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < lattices_[active[i]].size(); ++k) {
          if (move_cost(i, k) < c) {
            c = move_cost(i, k);
            best[i] = k;
          }
        }
      }
      for (int guard = 0; guard < 10000; ++guard) {
        const double err = budget_err(best);
        if (std::abs(err) <= tol) {
          found = true;
          break;
        }
        // err > 0: too much removed, step toward smaller realized ratio.
        const int dir = err > 0.0 ? -1 : 1;
        double best_score = std::numeric_limits<double>::infinity();
        std::optional<std::size_t> pick;
        for (std::size_t i = 0; i < active.size(); ++i) {
          const auto k = static_cast<std::ptrdiff_t>(best[i]) + dir;
          if (k < 0 || k >= static_cast<std::ptrdiff_t>(lattices_[active[i]].size())) continue;
          auto trial = best;
          trial[i] = static_cast<std::size_t>(k);
          const double gain = std::abs(err) - std::abs(budget_err(trial));
          if (gain <= 0.0) continue;
          const double score = (move_cost(i, trial[i]) - move_cost(i, best[i])) / gain;
          if (score < best_score) {
            best_score = score;
            pick = i;
          }
        }
        if (!pick) break;
        best[*pick] = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(best[*pick]) + dir);
      }
    }
    detail::require(found, ErrorKind::invalid_config,
                    "no rank assignment meets the budget rho=" + std::to_string(rho) + " within " +
                        std::to_string(kBudgetTolerance));
    std::vector<std::optional<double>> out = cont;
    for (std::size_t i = 0; i < active.size(); ++i) out[active[i]] = lattices_[active[i]][best[i]].lambda;
    return out;
  }

  GroupingScheme scheme_;
  std::optional<ModelConfig> config_;
  std::vector<double> weights_;
  double total_ = 0.0;
  std::vector<std::vector<Option>> lattices_;  // per group; empty when there is nothing to snap
};

inline Allocation repair_allocation(std::span<const double> raw, const AllocationSpace& space, double rho) {
  return space.repair(raw, rho);
}

/// Uniform(0, 1) raw ratio per group, then repaired.
inline Allocation sample_allocation(const AllocationSpace& space, double rho, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> raw(space.scheme().size());
  for (double& r : raw) r = u(rng);
  return space.repair(raw, rho);
}

inline Allocation sample_allocation(const AllocationSpace& space, double rho, std::uint64_t seed) {
  Rng rng = make_rng(seed, "sample_allocation");
  return sample_allocation(space, rho, rng);
}

/// Same ratio in every active group, repaired onto the budget.
inline Allocation uniform_allocation(const AllocationSpace& space, double rho) {
  std::vector<double> raw(space.scheme().size(), 1.0);
  return space.repair(raw, rho);
}

/// Every group NA: nothing is compressed.
inline Allocation identity_allocation(const AllocationSpace& space) {
  Allocation a = space.from_lambdas(std::vector<std::optional<double>>(space.scheme().size()), 0.0);
  return a;
}

// ---------------------------------------------------------------------------
// Serialization

/// {"scheme", "rho", "lambdas": [float|null], "ranks": {layer_id: int|null}};
/// custom schemes also carry their "groups".
inline nlohmann::json allocation_to_json(const Allocation& a) {
  nlohmann::json j;
  j["scheme"] = to_string(a.scheme.name);
  j["rho"] = a.target_rho;
  nlohmann::json lam = nlohmann::json::array();
  for (const auto& l : a.lambdas) lam.push_back(l ? nlohmann::json(*l) : nlohmann::json(nullptr));
  j["lambdas"] = lam;
  nlohmann::json ranks = nlohmann::json::object();
  for (const auto& [id, r] : a.ranks) ranks[id.str()] = r ? nlohmann::json(*r) : nlohmann::json(nullptr);
  j["ranks"] = ranks;
  if (a.scheme.name == SchemeName::custom) {
    nlohmann::json groups = nlohmann::json::array();
    for (const Group& g : a.scheme.groups) {
      nlohmann::json members = nlohmann::json::array();
      for (const LayerId& id : g.members) members.push_back(id.str());
      groups.push_back({{"label", g.label},
                        {"kind", g.kind == GroupKind::attention ? "attention" : "ffn"},
                        {"members", members},
                        {"na", g.na}});
    }
    j["groups"] = groups;
  }
  return j;
}

inline GroupingScheme scheme_for(SchemeName name, const ModelConfig& cfg) {
  switch (name) {
    case SchemeName::five_by_one: return five_by_one(cfg.n_layers);
    case SchemeName::five_by_four: return five_by_four(cfg.n_layers);
    default: throw Error(ErrorKind::invalid_config, "custom schemes must list their groups");
  }
}

namespace detail {

inline std::optional<int> rank_value(const nlohmann::json& v) {
  if (v.is_null()) return std::nullopt;
  if (v.is_string() && v.get<std::string>() == "NA") return std::nullopt;
  require(v.is_number_integer(), ErrorKind::invalid_config, "ranks must be integers or NA");
  return v.get<int>();
}

inline std::vector<std::optional<int>> flatten_rank_vector(const nlohmann::json& v) {
  std::vector<std::optional<int>> out;
  require(v.is_array() && !v.empty(), ErrorKind::invalid_config, "rank vector must be a non-empty array");
  if (v.front().is_array()) {
    for (const auto& row : v) {
      require(row.is_array(), ErrorKind::invalid_config, "nested rank vector rows must be arrays");
      for (const auto& x : row) out.push_back(rank_value(x));
    }
  } else {
    for (const auto& x : v) out.push_back(rank_value(x));
  }
  return out;
}

/// Replaces bare NA tokens with null so the table notation parses as JSON.
inline std::string na_to_null(std::string_view text) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const bool word_start = i == 0 || !std::isalnum(static_cast<unsigned char>(text[i - 1]));
    const bool word_end = i + 2 >= text.size() || !std::isalnum(static_cast<unsigned char>(text[i + 2]));
    if (text.compare(i, 2, "NA") == 0 && word_start && word_end) {
      out += "null";
      ++i;
    } else {
      out += text[i];
    }
  }
  return out;
}

}  // namespace detail

/// Parses an allocation. Accepts the JSON object written by allocation_to_json
/// or a bare rank vector in allocation-table notation, e.g.
/// "[744, 1616, 2512, 2408, NA]" for 5x1 or four such rows nested for 5x4.
inline Allocation allocation_from_json(const nlohmann::json& j, const ModelConfig& cfg, double rho_if_missing = 0.0) {
  if (j.is_array()) {
    const auto ranks = detail::flatten_rank_vector(j);
    const SchemeName name = j.front().is_array() ? SchemeName::five_by_four : SchemeName::five_by_one;
    const AllocationSpace space(scheme_for(name, cfg), cfg);
    return space.from_group_ranks(ranks, rho_if_missing);
  }
  detail::require(j.is_object() && j.contains("scheme"), ErrorKind::invalid_config,
                  "allocation JSON needs a \"scheme\" field");
  const SchemeName name = parse_scheme_name(j.at("scheme").get<std::string>());
  const double rho = j.value("rho", rho_if_missing);
  GroupingScheme scheme;
  if (name == SchemeName::custom) {
    detail::require(j.contains("groups"), ErrorKind::invalid_config, "custom allocation lacks \"groups\"");
    scheme.name = SchemeName::custom;
    for (const auto& gj : j.at("groups")) {
      Group g;
      g.label = gj.at("label").get<std::string>();
      g.kind = gj.value("kind", "attention") == "ffn" ? GroupKind::ffn : GroupKind::attention;
      g.na = gj.value("na", false);
      for (const auto& m : gj.at("members")) g.members.push_back(LayerId::parse(m.get<std::string>()));
      scheme.groups.push_back(std::move(g));
    }
  } else {
    scheme = scheme_for(name, cfg);
  }
  const AllocationSpace space(scheme, cfg);
  if (j.contains("rank_vector")) return space.from_group_ranks(detail::flatten_rank_vector(j.at("rank_vector")), rho);

  detail::require(j.contains("lambdas") && j.at("lambdas").is_array(), ErrorKind::invalid_config,
                  "allocation JSON needs a \"lambdas\" array");
  std::vector<std::optional<double>> lambdas;
  for (const auto& v : j.at("lambdas")) {
    if (v.is_null()) {
      lambdas.emplace_back();
    } else {
      detail::require(v.is_number(), ErrorKind::invalid_config, "lambdas must be numbers or null");
      lambdas.emplace_back(v.get<double>());
    }
  }
  Allocation a = space.from_lambdas(std::move(lambdas), rho);
  if (j.contains("ranks")) {
    // Explicit ranks win over the ones implied by lambdas.
    for (const auto& [key, v] : j.at("ranks").items()) {
      const LayerId id = LayerId::parse(key);
      detail::require(a.ranks.count(id) == 1, ErrorKind::invalid_config, "rank for unknown layer " + key);
      a.ranks[id] = detail::rank_value(v);
    }
  }
  return a;
}

inline Allocation parse_allocation(std::string_view text, const ModelConfig& cfg, double rho_if_missing = 0.0) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::na_to_null(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::invalid_config, std::string("allocation does not parse: ") + e.what());
  }
  return allocation_from_json(j, cfg, rho_if_missing);
}

/// Rank of each group (taken from its first member), nullopt when the group is left dense.
inline std::vector<std::optional<int>> group_ranks(const Allocation& a) {
  std::vector<std::optional<int>> out;
  for (const Group& g : a.scheme.groups) {
    std::optional<int> r;
    if (!g.members.empty()) {
      auto it = a.ranks.find(g.members.front());
      if (it != a.ranks.end()) r = it->second;
    }
    out.push_back(r);
  }
  return out;
}

/// Allocation-table notation: "[744, 1616, 2512, 2408, NA]", nested per block for 5x4.
inline std::string export_rank_vector(const Allocation& a) {
  const auto ranks = group_ranks(a);
  auto item = [](const std::optional<int>& r) { return r ? std::to_string(*r) : std::string("NA"); };
  const std::size_t per_row = a.scheme.name == SchemeName::five_by_four ? 5 : ranks.size();
  std::ostringstream os;
  const bool nested = a.scheme.name == SchemeName::five_by_four;
  if (nested) os << '[';
  for (std::size_t row = 0; row * per_row < ranks.size(); ++row) {
    if (row) os << ", ";
    os << '[';
    for (std::size_t i = 0; i < per_row; ++i) {
      if (i) os << ", ";
      os << item(ranks[row * per_row + i]);
    }
    os << ']';
  }
  if (nested) os << ']';
  return os.str();
}

}  // namespace bolaco

#endif  // BOLACO_ALLOCATION_HPP
