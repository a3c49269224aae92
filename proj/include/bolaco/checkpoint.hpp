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

// Base and compressed checkpoints as tensor bundles.
//
// Tensor names: "config" (f64), "tok_embeddings", "final_norm",
// "layers.<l>.attn_norm", "layers.<l>.mlp_norm", "layers.<l>.<category>".
// A factored layer drops its dense weight and stores "<id>.B", "<id>.A",
// "<id>.bias" and "<id>.meta" = {method, rank}; an adapter adds "<id>.lambda_b",
// "<id>.lambda_d" and "<id>.adapter_meta" = {r_prime}. Compressed checkpoints
// also keep the allocation JSON as text in "allocation".

#ifndef BOLACO_CHECKPOINT_HPP
#define BOLACO_CHECKPOINT_HPP

#include <filesystem>
#include <memory>
#include <string>

#include "bolaco/allocation.hpp"
#include "bolaco/compress.hpp"
#include "bolaco/error.hpp"
#include "bolaco/model.hpp"
#include "bolaco/posttrain.hpp"
#include "bolaco/tensor_bundle.hpp"

namespace bolaco {

namespace detail {

inline std::string block_name(std::size_t l, const char* what) { return "layers." + std::to_string(l) + "." + what; }

inline ModelConfig config_from_tensor(const Tensor& t) {
  require(t.values.size() == 7, ErrorKind::io, "config tensor must hold 7 values");
  ModelConfig cfg;
  cfg.vocab = static_cast<int>(t.values[0]);
  cfg.d_model = static_cast<int>(t.values[1]);
  cfg.n_heads = static_cast<int>(t.values[2]);
  cfg.n_layers = static_cast<int>(t.values[3]);
  cfg.d_ff = static_cast<int>(t.values[4]);
  cfg.max_seq = static_cast<int>(t.values[5]);
  cfg.norm_eps = t.values[6];
  cfg.validate();
  return cfg;
}

inline Eigen::MatrixXd checked_matrix(const TensorBundle& b, const std::string& name, Eigen::Index rows,
                                      Eigen::Index cols) {
  Eigen::MatrixXd m = to_matrix(b.at(name));
  require(m.rows() == rows && m.cols() == cols, ErrorKind::io, "tensor '" + name + "' has the wrong shape");
  return m;
}

inline Eigen::VectorXd checked_vector(const TensorBundle& b, const std::string& name, Eigen::Index n) {
  Eigen::VectorXd v = to_vector(b.at(name));
  require(v.size() == n, ErrorKind::io, "tensor '" + name + "' has the wrong length");
  return v;
}

}  // namespace detail

/// `skip` lists dense weights to leave out (layers stored in factored form).
inline TensorBundle model_to_bundle(const Model& m, const FactorMap* skip = nullptr) {
  const ModelConfig& c = m.config;
  TensorBundle b;
  b.add(vector_tensor("config",
                      std::vector<double>{double(c.vocab), double(c.d_model), double(c.n_heads), double(c.n_layers),
                                          double(c.d_ff), double(c.max_seq), c.norm_eps},
                      DType::f64));
  b.add(matrix_tensor("tok_embeddings", m.embedding));
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    b.add(vector_tensor(detail::block_name(l, "attn_norm"), m.blocks[l].attn_norm));
    b.add(vector_tensor(detail::block_name(l, "mlp_norm"), m.blocks[l].mlp_norm));
    for (Category cat : kCategories) {
      const LayerId id{static_cast<int>(l), cat};
      if (skip && skip->count(id)) continue;
      b.add(matrix_tensor(id.str(), m.weight(id)));
    }
  }
  b.add(vector_tensor("final_norm", m.final_norm));
  return b;
}

/// Dense weights absent from the bundle come back as zeros (they are only
/// reached through factor overrides).
inline Model model_from_bundle(const TensorBundle& b) {
  Model m;
  m.config = detail::config_from_tensor(b.at("config"));
  const ModelConfig& c = m.config;
  m.embedding = detail::checked_matrix(b, "tok_embeddings", c.vocab, c.d_model);
  m.blocks.resize(static_cast<std::size_t>(c.n_layers));
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    m.blocks[l].attn_norm = detail::checked_vector(b, detail::block_name(l, "attn_norm"), c.d_model);
    m.blocks[l].mlp_norm = detail::checked_vector(b, detail::block_name(l, "mlp_norm"), c.d_model);
    for (Category cat : kCategories) {
      const LayerId id{static_cast<int>(l), cat};
      const LayerShape s = layer_shape(c, cat);
      m.weight(id) = b.find(id.str()) ? detail::checked_matrix(b, id.str(), s.rows, s.cols)
                                      : Eigen::MatrixXd::Zero(s.rows, s.cols);
    }
  }
  m.final_norm = detail::checked_vector(b, "final_norm", c.d_model);
  return m;
}

inline void save_model(const std::filesystem::path& path, const Model& m) { save_bundle(path, model_to_bundle(m)); }

inline Model load_model(const std::filesystem::path& path) { return model_from_bundle(load_bundle(path)); }

inline TensorBundle compressed_to_bundle(const CompressedModel& cm) {
  TensorBundle b = model_to_bundle(*cm.base, &cm.factors);
  for (const auto& [id, f] : cm.factors) {
    const std::string key = id.str();
    b.add(matrix_tensor(key + ".B", f.b));
    b.add(matrix_tensor(key + ".A", f.a));
    b.add(vector_tensor(key + ".bias", f.bias));
    b.add(vector_tensor(key + ".meta", std::vector<double>{double(static_cast<int>(f.method)), double(f.rank)},
                        DType::f64));
  }
  for (const auto& [id, ad] : cm.adapters) {
    const std::string key = id.str();
    b.add(vector_tensor(key + ".lambda_b", ad.lambda_b));
    b.add(vector_tensor(key + ".lambda_d", ad.lambda_d));
    b.add(vector_tensor(key + ".adapter_meta", std::vector<double>{double(ad.r_prime)}, DType::f64));
  }
  b.add(text_tensor("allocation", allocation_to_json(cm.allocation).dump()));
  return b;
}

inline CompressedModel compressed_from_bundle(const TensorBundle& b) {
  auto base = std::make_shared<Model>(model_from_bundle(b));
  CompressedModel cm;
  for (const LayerId& id : base->layer_ids()) {
    const std::string key = id.str();
    if (!b.find(key + ".meta")) continue;
    const Tensor& meta = b.at(key + ".meta");
    detail::require(meta.values.size() == 2, ErrorKind::io, key + ".meta must hold {method, rank}");
    const LayerShape s = layer_shape(base->config, id.category);
    LowRankFactors f;
    f.method = static_cast<FactorMethod>(static_cast<int>(meta.values[0]));
    f.rank = static_cast<int>(meta.values[1]);
    f.b = detail::checked_matrix(b, key + ".B", s.rows, f.rank);
    f.a = detail::checked_matrix(b, key + ".A", f.rank, s.cols);
    f.bias = detail::checked_vector(b, key + ".bias", s.rows);
    if (b.find(key + ".adapter_meta")) {
      const Tensor& am = b.at(key + ".adapter_meta");
      detail::require(am.values.size() == 1, ErrorKind::io, key + ".adapter_meta must hold {r_prime}");
      Adapter ad = init_adapters(f, static_cast<int>(am.values[0]));
      ad.lambda_b = detail::checked_vector(b, key + ".lambda_b", s.rows);
      ad.lambda_d = detail::checked_vector(b, key + ".lambda_d", ad.r_prime);
      cm.adapters.emplace(id, std::move(ad));
    }
    cm.factors.emplace(id, std::move(f));
  }
  if (const Tensor* t = b.find("allocation")) cm.allocation = parse_allocation(to_text(*t), base->config);
  cm.base = std::move(base);
  return cm;
}

inline void save_compressed(const std::filesystem::path& path, const CompressedModel& cm) {
  save_bundle(path, compressed_to_bundle(cm));
}

inline CompressedModel load_compressed(const std::filesystem::path& path) {
  return compressed_from_bundle(load_bundle(path));
}

}  // namespace bolaco

#endif  // BOLACO_CHECKPOINT_HPP
