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

// Allocation search: validation selection by sensitivity, the compression
// objective, and the Bayesian-optimization loop over group ratios.

#ifndef BOLACO_SEARCH_HPP
#define BOLACO_SEARCH_HPP

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bolaco/allocation.hpp"
#include "bolaco/compress.hpp"
#include "bolaco/error.hpp"
#include "bolaco/model.hpp"
#include "bolaco/random.hpp"
#include "bolaco/surrogate.hpp"

namespace bolaco {

struct SearchConfig {
  int epochs = 50;  // total objective evaluations, initial design included
  int init_points = 10;
  int candidates_per_step = 1024;
  double beta_rkl = 1.0;
  std::uint64_t seed = 0;
  int probe_allocations = 20;
  int top_k = 16;
  double perturb_sigma = 0.05;
  double attention_lengthscale = 1.0;
  double ffn_lengthscale = 0.8;
  double noise_variance = 1e-3;
  std::vector<Allocation> warm_points;  // evaluated first, in order

  void validate() const {
    detail::require(epochs >= 1 && init_points >= 1 && candidates_per_step >= 1, ErrorKind::invalid_config,
                    "epochs, init_points and candidates_per_step must be positive");
    detail::require(epochs >= init_points, ErrorKind::invalid_config, "epochs must be at least init_points");
    detail::require(beta_rkl >= 0.0, ErrorKind::invalid_config, "beta_rkl must be non-negative");
    detail::require(probe_allocations >= 2, ErrorKind::invalid_config, "need at least two probe allocations");
    detail::require(top_k >= 1, ErrorKind::invalid_config, "top_k must be positive");
  }
};

struct Evaluation {
  double h = 0.0;
  double ppl = 0.0;
  double rkl = 0.0;
};

struct ObservationRecord {
  int epoch = 0;
  std::vector<std::optional<double>> lambdas;
  double h = 0.0;
  double ppl = 0.0;
  double rkl = 0.0;
  double beta_rkl = 0.0;
  double timestamp = 0.0;
};

struct ObservationLog {
  std::vector<ObservationRecord> records;

  std::size_t best_index() const {
    detail::require(!records.empty(), ErrorKind::invalid_argument, "empty observation log");
    std::size_t best = 0;
    for (std::size_t i = 1; i < records.size(); ++i)
      if (records[i].h < records[best].h) best = i;
    return best;
  }

  /// Running minimum of H after each record.
  std::vector<double> running_best() const {
    std::vector<double> out;
    double m = std::numeric_limits<double>::infinity();
    for (const auto& r : records) out.push_back(m = std::min(m, r.h));
    return out;
  }
};

inline nlohmann::json to_json(const ObservationRecord& r) {
  nlohmann::json lam = nlohmann::json::array();
  for (const auto& l : r.lambdas) lam.push_back(l ? nlohmann::json(*l) : nlohmann::json(nullptr));
  return {{"epoch", r.epoch}, {"lambdas", lam}, {"H", r.h},       {"ppl", r.ppl},
          {"rkl", r.rkl},     {"beta_rkl", r.beta_rkl}, {"timestamp", r.timestamp}};
}

inline ObservationRecord record_from_json(const nlohmann::json& j) {
  ObservationRecord r;
  r.epoch = j.at("epoch").get<int>();
  for (const auto& v : j.at("lambdas")) r.lambdas.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  r.h = j.at("H").get<double>();
  r.ppl = j.at("ppl").get<double>();
  r.rkl = j.at("rkl").get<double>();
  r.beta_rkl = j.value("beta_rkl", 0.0);
  r.timestamp = j.value("timestamp", 0.0);
  return r;
}

/// One JSON object per line.
inline void write_jsonl(std::ostream& os, const ObservationLog& log) {
  for (const auto& r : log.records) os << to_json(r).dump() << '\n';
}

inline ObservationLog read_jsonl(std::istream& is) {
  ObservationLog log;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      log.records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::invalid_config, std::string("bad observation record: ") + e.what());
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// Objective

/// H(alloc) = log ppl(compressed, val) + beta * KL(original || compressed) on a fixed
/// validation set. Original log-probabilities are computed once.
class CompressionObjective {
 public:
  CompressionObjective(std::shared_ptr<const Model> base, std::shared_ptr<const BasisMap> bases, TokenDataset val,
                       double beta)
      : base_(std::move(base)), bases_(std::move(bases)), val_(std::move(val)), beta_(beta) {
    detail::require(base_ && bases_, ErrorKind::invalid_argument, "objective needs a model and feature bases");
    detail::require(!val_.empty(), ErrorKind::invalid_argument, "objective needs validation data");
    for (const auto& seq : val_.sequences) base_logprobs_.push_back(log_softmax_rows(forward(*base_, std::span<const int>(seq))));
  }

  Evaluation operator()(const Allocation& alloc) const {
    const CompressedModel cm = compress_model(base_, alloc, *bases_);
    double nll = 0.0, kl = 0.0;
    std::size_t predicted = 0, positions = 0;
    for (std::size_t i = 0; i < val_.size(); ++i) {
      const auto& seq = val_.sequences[i];
      const Eigen::MatrixXd logits = forward(cm, std::span<const int>(seq));
      nll += sequence_nll_sum(logits, seq);
      kl += kl_sum_logprobs(base_logprobs_[i], log_softmax_rows(logits));
      predicted += seq.size() - 1;
      positions += seq.size();
    }
    Evaluation e;
    e.ppl = std::exp(nll / static_cast<double>(predicted));
    e.rkl = std::max(0.0, kl / static_cast<double>(positions));
    e.h = std::log(e.ppl) + beta_ * e.rkl;
    return e;
  }

  double beta() const { return beta_; }
  const TokenDataset& validation() const { return val_; }

 private:
  std::shared_ptr<const Model> base_;
  std::shared_ptr<const BasisMap> bases_;
  TokenDataset val_;
  double beta_;
  std::vector<Eigen::MatrixXd> base_logprobs_;
};

inline Evaluation objective(std::shared_ptr<const Model> original, const Allocation& alloc,
                            std::shared_ptr<const BasisMap> bases, const TokenDataset& val, double beta) {
  return CompressionObjective(std::move(original), std::move(bases), val, beta)(alloc);
}

// ---------------------------------------------------------------------------
// Validation selection

struct ValidationSet {
  TokenDataset sequences;            // top-k, most sensitive first
  std::vector<double> sensitivity;   // matching variances
  std::vector<std::size_t> ranking;  // every pool index, most sensitive first
  std::vector<double> pool_sensitivity;
};

/// Indices by descending variance; equal variances keep their original order.
inline std::vector<std::size_t> sensitivity_order(std::span<const double> variance) {
  std::vector<std::size_t> order(variance.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return variance[a] > variance[b]; });
  return order;
}

/// Ranks pool sequences by the variance of their perplexity across the probe
/// allocations and keeps the top k. Ties keep pool order.
inline ValidationSet select_validation(std::shared_ptr<const Model> model, const TokenDataset& pool,
                                       std::span<const Allocation> probes, int k, const BasisMap& bases) {
  detail::require(k >= 1 && static_cast<std::size_t>(k) <= pool.size(), ErrorKind::invalid_config,
                  "top_k must lie in [1, pool size]");
  detail::require(probes.size() >= 2, ErrorKind::invalid_config, "need at least two probe allocations");
  const std::size_t n = pool.size();
  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  for (const Allocation& probe : probes) {
    const CompressedModel cm = compress_model(model, probe, bases);
    const std::vector<double> nll = per_sample_nll(cm, pool);
    for (std::size_t i = 0; i < n; ++i) {
      const double ppl = std::exp(nll[i]);
      sum[i] += ppl;
      sum_sq[i] += ppl * ppl;
    }
  }
  const double m = static_cast<double>(probes.size());
  ValidationSet out;
  out.pool_sensitivity.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = sum[i] / m;
    out.pool_sensitivity[i] = std::max(0.0, sum_sq[i] / m - mean * mean);
  }
  out.ranking = sensitivity_order(out.pool_sensitivity);
  const std::span<const std::size_t> top(out.ranking.data(), static_cast<std::size_t>(k));
  out.sequences = pool.subset(top);
  for (std::size_t i : top) out.sensitivity.push_back(out.pool_sensitivity[i]);
  return out;
}

inline ValidationSet select_validation(std::shared_ptr<const Model> model, const TokenDataset& pool,
                                       const AllocationSpace& space, double rho, int n_probe, int k,
                                       const BasisMap& bases, std::uint64_t seed) {
  detail::require(n_probe >= 2, ErrorKind::invalid_config, "need at least two probe allocations");
  Rng rng = make_rng(seed, "probes");
  std::vector<Allocation> probes;
  for (int i = 0; i < n_probe; ++i) probes.push_back(sample_allocation(space, rho, rng));
  return select_validation(std::move(model), pool, probes, k, bases);
}

// ---------------------------------------------------------------------------
// Bayesian optimization

using ObjectiveFn = std::function<Evaluation(const Allocation&)>;
using Clock = std::function<double()>;

inline double wall_clock_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

struct SearchResult {
  Allocation best;
  Evaluation best_eval;
  std::size_t best_index = 0;
  ObservationLog log;
};

inline KernelParams search_kernel(const AllocationSpace& space, const SearchConfig& cfg) {
  KernelParams p;
  std::vector<double> ls;
  for (const Group& g : space.scheme().groups)
    if (!g.na) ls.push_back(g.kind == GroupKind::attention ? cfg.attention_lengthscale : cfg.ffn_lengthscale);
  p.lengthscales = Eigen::Map<const Eigen::VectorXd>(ls.data(), static_cast<Eigen::Index>(ls.size()));
  p.noise_variance = cfg.noise_variance;
  return p;
}

namespace detail {

inline Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

/// Random initial design (after any warm points), then one GP-guided evaluation
/// per remaining epoch: fit on every observation, score candidates by expected
/// improvement, evaluate the argmax. Returns the observation with minimal H.
inline SearchResult bo_search(const AllocationSpace& space, double rho, const ObjectiveFn& objective_fn,
                              const SearchConfig& cfg, const Clock& clock = wall_clock_seconds) {
  cfg.validate();
  detail::require(space.active_count() > 0, ErrorKind::invalid_config, "every group is NA; nothing to search");
  for (const Allocation& w : cfg.warm_points) {
    detail::require(w.scheme.compatible(space.scheme()), ErrorKind::invalid_config,
                    "warm-start allocation uses a different grouping scheme");
  }
  Rng init_rng = make_rng(cfg.seed, "bo.init");
  Rng cand_rng = make_rng(cfg.seed, "bo.candidates");
  const KernelParams kernel = search_kernel(space, cfg);

  SearchResult result;
  std::vector<Allocation> evaluated;
  std::vector<Observation> observations;
  auto evaluate = [&](Allocation a) {
    const Evaluation e = objective_fn(a);
    detail::require(std::isfinite(e.h), ErrorKind::numerical, "objective returned a non-finite value");
    ObservationRecord r;
    r.epoch = static_cast<int>(evaluated.size());
    r.lambdas = a.lambdas;
    r.h = e.h;
    r.ppl = e.ppl;
    r.rkl = e.rkl;
    r.beta_rkl = cfg.beta_rkl;
    r.timestamp = clock();
    result.log.records.push_back(std::move(r));
    observations.push_back({detail::to_vector(a.coordinates()), e.h});
    evaluated.push_back(std::move(a));
  };

  const auto total = static_cast<std::size_t>(cfg.epochs);
  for (const Allocation& w : cfg.warm_points) {
    if (evaluated.size() >= total) break;
    evaluate(w);
  }
  while (evaluated.size() < static_cast<std::size_t>(cfg.init_points) && evaluated.size() < total) {
    evaluate(sample_allocation(space, rho, init_rng));
  }

  const std::size_t n_fresh = static_cast<std::size_t>(cfg.candidates_per_step) * 3 / 4;
  std::normal_distribution<double> jitter(0.0, cfg.perturb_sigma);
  while (evaluated.size() < total) {
    const GPState gp = gp_fit(observations, kernel);
    const std::size_t inc = result.log.best_index();
    const double best = result.log.records[inc].h;
    const Allocation& incumbent = evaluated[inc];

    std::vector<Allocation> candidates;
    for (std::size_t c = 0; c < static_cast<std::size_t>(cfg.candidates_per_step); ++c) {
      try {
        if (c < n_fresh) {
          candidates.push_back(sample_allocation(space, rho, cand_rng));
        } else {
          std::vector<double> raw(space.scheme().size(), 0.0);
          for (std::size_t g = 0; g < raw.size(); ++g) raw[g] = std::max(0.0, incumbent.lambdas[g].value_or(0.0) + jitter(cand_rng));
          candidates.push_back(space.repair(raw, rho));
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::invalid_config) throw;
      }
    }
    detail::require(!candidates.empty(), ErrorKind::numerical, "every acquisition candidate was infeasible");

    auto seen = [&](const Eigen::VectorXd& x) {
      for (const Observation& o : observations)
        if ((o.point - x).norm() <= 1e-12) return true;
      return false;
    };
    std::optional<std::size_t> pick, pick_any;
    double best_ei = -1.0, best_ei_any = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const Eigen::VectorXd x = detail::to_vector(candidates[c].coordinates());
      const double ei = expected_improvement(gp, x, best);
      if (ei > best_ei_any) {
        best_ei_any = ei;
        pick_any = c;
      }
      if (ei > best_ei && !seen(x)) {
        best_ei = ei;
        pick = c;
      }
    }
    evaluate(std::move(candidates[pick ? *pick : *pick_any]));
  }

  result.best_index = result.log.best_index();
  result.best = evaluated[result.best_index];
  const auto& br = result.log.records[result.best_index];
  result.best_eval = {br.h, br.ppl, br.rkl};
  return result;
}

inline SearchResult bo_search(std::shared_ptr<const Model> original, const AllocationSpace& space, double rho,
                              std::shared_ptr<const BasisMap> bases, const ValidationSet& val,
                              const SearchConfig& cfg, const Clock& clock = wall_clock_seconds) {
  const CompressionObjective obj(std::move(original), std::move(bases), val.sequences, cfg.beta_rkl);
  return bo_search(space, rho, std::cref(obj), cfg, clock);
}

/// Seeds the search with a prior allocation as the first evaluated point and
/// `further_epochs` evaluations after it.
inline SearchConfig warm_start(const Allocation& prior, const SearchConfig& cfg, const AllocationSpace& space,
                               int further_epochs = 20) {
  detail::require(prior.scheme.compatible(space.scheme()), ErrorKind::invalid_config,
                  "prior allocation uses a different grouping scheme");
  detail::require(further_epochs >= 0, ErrorKind::invalid_config, "further epochs must be non-negative");
  SearchConfig out = cfg;
  out.warm_points = {prior};
  out.init_points = 1;
  out.epochs = 1 + further_epochs;
  return out;
}

/// Rebuilds the best allocation recorded in a log.
inline Allocation best_from_log(const ObservationLog& log, const AllocationSpace& space, double rho) {
  return space.from_lambdas(log.records[log.best_index()].lambdas, rho);
}

// ---------------------------------------------------------------------------
// Sensitivity sweeps

struct SweepPoint {
  Category category;
  double ratio = 0.0;
  double perplexity = 0.0;
};

/// Compresses only `category` (in every layer) at each ratio and records perplexity.
inline std::vector<SweepPoint> sensitivity_sweep(std::shared_ptr<const Model> model, Category category,
                                                 std::span<const double> ratios, const TokenDataset& data,
                                                 const BasisMap& bases) {
  const AllocationSpace space(single_category(category, model->config.n_layers), model->config);
  std::vector<SweepPoint> out;
  for (double ratio : ratios) {
    detail::require(ratio >= 0.0 && ratio < 1.0, ErrorKind::invalid_config, "sweep ratios must lie in [0, 1)");
    const Allocation a = space.from_lambdas({ratio}, ratio);
    out.push_back({category, ratio, perplexity(compress_model(model, a, bases), data)});
  }
  return out;
}

inline void write_sweep_csv(std::ostream& os, std::span<const SweepPoint> points) {
  os << "category,ratio,perplexity\n";
  for (const auto& p : points) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s,%.4f,%.10g\n", std::string(to_string(p.category)).c_str(), p.ratio, p.perplexity);
    os << buf;
  }
}

}  // namespace bolaco

#endif  // BOLACO_SEARCH_HPP
