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

// Forward-only LLaMA-shaped decoder: RMSNorm, rotary multi-head causal
// attention, SiLU-gated MLP, tied output head. Activations are stored one
// token per column so every linear layer is y = W x with W of shape d2 x d1.

#ifndef BOLACO_MODEL_HPP
#define BOLACO_MODEL_HPP

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bolaco/covariance.hpp"
#include "bolaco/data.hpp"
#include "bolaco/error.hpp"
#include "bolaco/factorize.hpp"
#include "bolaco/posttrain.hpp"
#include "bolaco/random.hpp"

namespace bolaco {

enum class Category : int { attn_q = 0, attn_k, attn_v, attn_o, mlp_gate, mlp_up, mlp_down };

inline constexpr std::array<Category, 7> kCategories = {
    Category::attn_q,   Category::attn_k, Category::attn_v,  Category::attn_o,
    Category::mlp_gate, Category::mlp_up, Category::mlp_down};

inline std::string_view to_string(Category c) {
  static constexpr std::array<std::string_view, 7> names = {
      "attn_q", "attn_k", "attn_v", "attn_o", "mlp_gate", "mlp_up", "mlp_down"};
  return names[static_cast<std::size_t>(c)];
}

inline std::optional<Category> parse_category(std::string_view s) {
  for (Category c : kCategories)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

inline bool is_attention(Category c) { return static_cast<int>(c) <= static_cast<int>(Category::attn_o); }

/// One linear layer of the network, named "layers.<l>.<category>".
struct LayerId {
  int layer = 0;
  Category category = Category::attn_q;

  auto operator<=>(const LayerId&) const = default;

  std::string str() const { return "layers." + std::to_string(layer) + "." + std::string(to_string(category)); }

  static LayerId parse(std::string_view s) {
    constexpr std::string_view prefix = "layers.";
    const auto dot = s.find('.', prefix.size());
    if (s.substr(0, prefix.size()) != prefix || dot == std::string_view::npos) {
      throw Error(ErrorKind::invalid_argument, "bad layer id '" + std::string(s) + "'");
    }
    const auto cat = parse_category(s.substr(dot + 1));
    const std::string num(s.substr(prefix.size(), dot - prefix.size()));
    if (!cat || num.empty() || num.find_first_not_of("0123456789") != std::string::npos) {
      throw Error(ErrorKind::invalid_argument, "bad layer id '" + std::string(s) + "'");
    }
    return LayerId{std::stoi(num), *cat};
  }
};

struct ModelConfig {
  int vocab = 256;
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 4;
  int d_ff = 176;
  int max_seq = 256;
  double norm_eps = 1e-5;

  void validate() const {
    detail::require(vocab > 0 && d_model > 0 && n_heads > 0 && n_layers > 0 && d_ff > 0 && max_seq > 1,
                    ErrorKind::invalid_config, "model config fields must be positive");
    detail::require(d_model % n_heads == 0, ErrorKind::invalid_config, "d_model must be divisible by n_heads");
    detail::require((d_model / n_heads) % 2 == 0, ErrorKind::invalid_config,
                    "head dimension must be even for rotary embeddings");
    detail::require(d_ff >= d_model, ErrorKind::invalid_config, "d_ff must be at least d_model");
    detail::require(norm_eps > 0.0, ErrorKind::invalid_config, "norm_eps must be positive");
  }

  /// Shapes of LLaMA-2-7b, used for allocation tables at full scale (no weights).
  static ModelConfig llama2_7b() { return {32000, 4096, 32, 32, 11008, 4096, 1e-5}; }
  static ModelConfig llama2_13b() { return {32000, 5120, 40, 40, 13824, 4096, 1e-5}; }

  bool operator==(const ModelConfig&) const = default;
};

struct LayerShape {
  std::int64_t rows = 0;  // d2, output
  std::int64_t cols = 0;  // d1, input

  std::int64_t size() const { return rows * cols; }
};

inline LayerShape layer_shape(const ModelConfig& cfg, Category c) {
  switch (c) {
    case Category::mlp_gate:
    case Category::mlp_up:
      return {cfg.d_ff, cfg.d_model};
    case Category::mlp_down:
      return {cfg.d_model, cfg.d_ff};
    default:
      return {cfg.d_model, cfg.d_model};
  }
}

inline std::vector<LayerId> all_layer_ids(const ModelConfig& cfg) {
  std::vector<LayerId> ids;
  for (int l = 0; l < cfg.n_layers; ++l)
    for (Category c : kCategories) ids.push_back({l, c});
  return ids;
}

struct Block {
  std::array<Eigen::MatrixXd, 7> weights;  // indexed by Category
  Eigen::VectorXd attn_norm;
  Eigen::VectorXd mlp_norm;
};

/// Weights are stored in double but hold f32-representable values (f32 on disk).
struct Model {
  ModelConfig config;
  Eigen::MatrixXd embedding;  // vocab x d_model, also the output head
  std::vector<Block> blocks;
  Eigen::VectorXd final_norm;

  const Eigen::MatrixXd& weight(const LayerId& id) const {
    return blocks.at(static_cast<std::size_t>(id.layer)).weights[static_cast<std::size_t>(id.category)];
  }
  Eigen::MatrixXd& weight(const LayerId& id) {
    return blocks.at(static_cast<std::size_t>(id.layer)).weights[static_cast<std::size_t>(id.category)];
  }
  std::vector<LayerId> layer_ids() const { return all_layer_ids(config); }
};

using FactorMap = std::map<LayerId, LowRankFactors>;
using AdapterMap = std::map<LayerId, Adapter>;

/// Replacement of linear layers during a forward pass.
struct LayerOverrides {
  const FactorMap* factors = nullptr;
  const AdapterMap* adapters = nullptr;
};

/// Called for every linear layer with its input and output (columns = tokens).
using FeatureTap = std::function<void(const LayerId&, const Eigen::MatrixXd& input, const Eigen::MatrixXd& output)>;

namespace detail {

inline Eigen::MatrixXd round_to_f32(Eigen::MatrixXd m) {
  return m.cast<float>().cast<double>();
}

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

inline Eigen::MatrixXd rms_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& scale, double eps) {
  Eigen::MatrixXd y(x.rows(), x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const double ms = x.col(t).squaredNorm() / static_cast<double>(x.rows());
    y.col(t) = x.col(t).cwiseProduct(scale) / std::sqrt(ms + eps);
  }
  return y;
}

inline void apply_rope(Eigen::MatrixXd& x, int n_heads) {
  const Eigen::Index hd = x.rows() / n_heads;
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    for (int h = 0; h < n_heads; ++h) {
      for (Eigen::Index i = 0; i < hd / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
        const double angle = static_cast<double>(t) * freq;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const Eigen::Index r0 = h * hd + 2 * i;
        const double a = x(r0, t);
        const double b = x(r0 + 1, t);
        x(r0, t) = a * c - b * s;
        x(r0 + 1, t) = a * s + b * c;
      }
    }
  }
}

inline Eigen::MatrixXd causal_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                                        const Eigen::MatrixXd& v, int n_heads) {
  const Eigen::Index n = q.cols();
  const Eigen::Index hd = q.rows() / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(q.rows(), n);
  Eigen::VectorXd scores(n);
  for (int h = 0; h < n_heads; ++h) {
    const auto qh = q.middleRows(h * hd, hd);
    const auto kh = k.middleRows(h * hd, hd);
    const auto vh = v.middleRows(h * hd, hd);
    for (Eigen::Index t = 0; t < n; ++t) {
      auto s = scores.head(t + 1);
      s.noalias() = kh.leftCols(t + 1).transpose() * qh.col(t);
      s *= inv_sqrt;
      s.array() -= s.maxCoeff();
      s = s.array().exp().matrix();
      s /= s.sum();
      out.col(t).segment(h * hd, hd).noalias() = vh.leftCols(t + 1) * s;
    }
  }
  return out;
}

}  // namespace detail

/// Deterministic stand-in weights. Each linear layer is a unit-scale low-rank
/// part of rank ceil(min_dim / 4) plus Gaussian noise at 0.1 relative scale, so
/// layer outputs have the decaying spectrum that feature-based compression relies on.
inline Model synth_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = make_rng(seed, "weights");
  Model m;
  m.config = cfg;
  m.embedding = detail::round_to_f32(detail::gaussian(cfg.vocab, cfg.d_model, rng));
  m.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& block : m.blocks) {
    for (Category c : kCategories) {
      const LayerShape s = layer_shape(cfg, c);
      const std::int64_t k = (std::min(s.rows, s.cols) + 3) / 4;
      const double d1 = static_cast<double>(s.cols);
      Eigen::MatrixXd low = detail::gaussian(s.rows, k, rng) * detail::gaussian(k, s.cols, rng);
      low /= std::sqrt(static_cast<double>(k) * d1);
      const Eigen::MatrixXd noise = detail::gaussian(s.rows, s.cols, rng) * (0.1 / std::sqrt(d1));
      block.weights[static_cast<std::size_t>(c)] = detail::round_to_f32(low + noise);
    }
    block.attn_norm = Eigen::VectorXd::Ones(cfg.d_model);
    block.mlp_norm = Eigen::VectorXd::Ones(cfg.d_model);
  }
  // Keeps the tied head's logits at a moderate scale.
  m.final_norm = Eigen::VectorXd::Constant(cfg.d_model, 0.25);
  return m;
}

/// Causal decoder pass; returns logits with one row per position.
inline Eigen::MatrixXd forward(const Model& model, std::span<const int> tokens, const LayerOverrides& over = {},
                               const FeatureTap* tap = nullptr) {
  const ModelConfig& cfg = model.config;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  detail::require(n >= 1 && n <= cfg.max_seq, ErrorKind::invalid_argument,
                  "sequence length " + std::to_string(n) + " outside [1, " + std::to_string(cfg.max_seq) + "]");
  Eigen::MatrixXd x(cfg.d_model, n);
  for (Eigen::Index t = 0; t < n; ++t) {
    const int tok = tokens[static_cast<std::size_t>(t)];
    detail::require(tok >= 0 && tok < cfg.vocab, ErrorKind::invalid_argument,
                    "token " + std::to_string(tok) + " outside the vocabulary");
    x.col(t) = model.embedding.row(tok).transpose();
  }

  auto linear = [&](int layer, Category c, const Eigen::MatrixXd& in) {
    const LayerId id{layer, c};
    Eigen::MatrixXd out;
    const LowRankFactors* f = nullptr;
    if (over.factors) {
      auto it = over.factors->find(id);
      if (it != over.factors->end()) f = &it->second;
    }
    if (f) {
      const Adapter* ad = nullptr;
      if (over.adapters) {
        auto it = over.adapters->find(id);
        if (it != over.adapters->end()) ad = &it->second;
      }
      out = ad ? adapter_forward(*f, *ad, in) : apply_factors(*f, in);
    } else {
      out.noalias() = model.weight(id) * in;
    }
    if (tap) (*tap)(id, in, out);
    return out;
  };

  for (int l = 0; l < cfg.n_layers; ++l) {
    const Block& block = model.blocks[static_cast<std::size_t>(l)];
    const Eigen::MatrixXd h = detail::rms_norm(x, block.attn_norm, cfg.norm_eps);
    Eigen::MatrixXd q = linear(l, Category::attn_q, h);
    Eigen::MatrixXd k = linear(l, Category::attn_k, h);
    const Eigen::MatrixXd v = linear(l, Category::attn_v, h);
    detail::apply_rope(q, cfg.n_heads);
    detail::apply_rope(k, cfg.n_heads);
    x += linear(l, Category::attn_o, detail::causal_attention(q, k, v, cfg.n_heads));

    const Eigen::MatrixXd h2 = detail::rms_norm(x, block.mlp_norm, cfg.norm_eps);
    const Eigen::MatrixXd gate = linear(l, Category::mlp_gate, h2);
    const Eigen::MatrixXd up = linear(l, Category::mlp_up, h2);
    const Eigen::MatrixXd act = (gate.array() / (1.0 + (-gate.array()).exp())) * up.array();
    x += linear(l, Category::mlp_down, act);
  }
  const Eigen::MatrixXd xf = detail::rms_norm(x, model.final_norm, cfg.norm_eps);
  return (model.embedding * xf).transpose();
}

// ---------------------------------------------------------------------------
// Logit-level metrics

/// Row-wise log-softmax with max subtraction.
inline Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

/// Summed next-token negative log-likelihood of a sequence; position t predicts token t+1.
inline double sequence_nll_sum(const Eigen::MatrixXd& logits, std::span<const int> tokens) {
  detail::require(tokens.size() >= 2, ErrorKind::invalid_argument, "sequence needs at least two tokens");
  detail::require(logits.rows() >= static_cast<Eigen::Index>(tokens.size()) - 1, ErrorKind::dimension_mismatch,
                  "fewer logit rows than predicted positions");
  const Eigen::MatrixXd lp = log_softmax_rows(logits.topRows(static_cast<Eigen::Index>(tokens.size()) - 1));
  double s = 0.0;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) s -= lp(static_cast<Eigen::Index>(t), tokens[t + 1]);
  return s;
}

/// Sum over rows of KL(p || q) for p, q given as log-probabilities.
inline double kl_sum_logprobs(const Eigen::MatrixXd& log_p, const Eigen::MatrixXd& log_q) {
  detail::require(log_p.rows() == log_q.rows() && log_p.cols() == log_q.cols(), ErrorKind::dimension_mismatch,
                  "distribution shapes differ");
  return (log_p.array().exp() * (log_p.array() - log_q.array())).sum();
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation. `Net` is anything with an ADL-visible
// forward(const Net&, std::span<const int>) returning logits.

template <class Net>
std::vector<double> per_sample_nll(const Net& net, const TokenDataset& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& seq : data.sequences) {
    const Eigen::MatrixXd logits = forward(net, std::span<const int>(seq));
    out.push_back(sequence_nll_sum(logits, seq) / static_cast<double>(seq.size() - 1));
  }
  return out;
}

/// exp of the mean next-token NLL over every predicted position of the dataset.
template <class Net>
double perplexity(const Net& net, const TokenDataset& data) {
  detail::require(!data.empty(), ErrorKind::invalid_argument, "perplexity of an empty dataset");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& seq : data.sequences) {
    total += sequence_nll_sum(forward(net, std::span<const int>(seq)), seq);
    count += seq.size() - 1;
  }
  return std::exp(total / static_cast<double>(count));
}

/// Mean over every position of KL(original || compressed) between next-token distributions.
template <class NetP, class NetQ>
double rkl(const NetP& original, const NetQ& compressed, const TokenDataset& data) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& seq : data.sequences) {
    const std::span<const int> s(seq);
    total += kl_sum_logprobs(log_softmax_rows(forward(original, s)), log_softmax_rows(forward(compressed, s)));
    count += seq.size();
  }
  return count ? std::max(0.0, total / static_cast<double>(count)) : 0.0;
}

// ---------------------------------------------------------------------------
// Feature capture

/// Streams every token-position output of the selected layers into one accumulator per layer.
inline std::map<LayerId, CovAccumulator> capture_features(const Model& model, const TokenDataset& data,
                                                          std::span<const LayerId> layer_ids) {
  std::map<LayerId, CovAccumulator> accs;
  for (const LayerId& id : layer_ids) {
    detail::require(id.layer >= 0 && id.layer < model.config.n_layers, ErrorKind::invalid_argument,
                    "layer id " + id.str() + " out of range");
    accs.emplace(id, CovAccumulator(model.weight(id).rows()));
  }
  const FeatureTap tap = [&](const LayerId& id, const Eigen::MatrixXd&, const Eigen::MatrixXd& out) {
    auto it = accs.find(id);
    if (it != accs.end()) it->second.accumulate_batch(out);
  };
  for (const auto& seq : data.sequences) forward(model, std::span<const int>(seq), {}, &tap);
  return accs;
}

using StatsMap = std::map<LayerId, CovarianceStats>;

/// Calibration statistics: one sample covariance per group, pooled across groups.
/// With a single group this is the plain sample covariance.
inline StatsMap calibration_stats(const Model& model, const std::vector<TokenDataset>& groups,
                                  std::span<const LayerId> layer_ids) {
  detail::require(!groups.empty(), ErrorKind::invalid_config, "calibration needs at least one group");
  std::map<LayerId, std::vector<CovarianceStats>> per_group;
  for (const auto& g : groups) {
    for (auto& [id, acc] : capture_features(model, g, layer_ids)) per_group[id].push_back(finalize_scm(acc));
  }
  StatsMap out;
  for (auto& [id, list] : per_group) out.emplace(id, pooled(list));
  return out;
}

/// Parameters of the seven linear categories.
inline std::uint64_t param_count(const Model& model) {
  std::uint64_t n = 0;
  for (const LayerId& id : model.layer_ids()) n += static_cast<std::uint64_t>(model.weight(id).size());
  return n;
}

/// Embedding (tied head) and norm scales, reported apart from the linear layers.
inline std::uint64_t auxiliary_param_count(const Model& model) {
  std::uint64_t n = static_cast<std::uint64_t>(model.embedding.size() + model.final_norm.size());
  for (const auto& b : model.blocks) n += static_cast<std::uint64_t>(b.attn_norm.size() + b.mlp_norm.size());
  return n;
}

}  // namespace bolaco

#endif  // BOLACO_MODEL_HPP
