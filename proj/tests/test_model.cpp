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

#include <memory>
#include <random>
#include <vector>

#include "bolaco/allocation.hpp"
#include "bolaco/compress.hpp"
#include "bolaco/data.hpp"
#include "bolaco/model.hpp"
#include "test_util.hpp"

namespace bolaco {
namespace {

/// Emits fixed logits regardless of the model; exercises the metric templates.
struct FixedLogits {
  Eigen::MatrixXd logits;
};

Eigen::MatrixXd forward(const FixedLogits& net, std::span<const int> tokens) {
  return net.logits.topRows(static_cast<Eigen::Index>(tokens.size()));
}

TokenDataset random_tokens(int n_seq, int len, std::uint64_t seed, int vocab = 256) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(0, vocab - 1);
  TokenDataset d;
  for (int i = 0; i < n_seq; ++i) {
    TokenSeq s(static_cast<std::size_t>(len));
    for (auto& t : s) t = tok(rng);
    d.sequences.push_back(std::move(s));
  }
  return d;
}

struct Fixture {
  std::shared_ptr<const Model> model = std::make_shared<Model>(synth_weights(ModelConfig{}, 1));
  TokenDataset calib = dataset_from_bytes(synthetic_corpus(2, 16 * 48), 48);
  StatsMap stats = calibration_stats(*model, split_groups(calib, 4, 3), model->layer_ids());
  BasisMap bases = feature_bases(stats);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

TEST(Config, DefaultsAndValidation) {
  const ModelConfig c;
  EXPECT_EQ(layer_shape(c, Category::attn_q).rows, 64);
  EXPECT_EQ(layer_shape(c, Category::mlp_gate).rows, 176);
  EXPECT_EQ(layer_shape(c, Category::mlp_gate).cols, 64);
  EXPECT_EQ(layer_shape(c, Category::mlp_down).cols, 176);
  ModelConfig bad = c;
  bad.n_heads = 5;
  EXPECT_BOLACO_ERROR(bad.validate(), ErrorKind::invalid_config);
  bad = c;
  bad.d_ff = 32;
  EXPECT_BOLACO_ERROR(bad.validate(), ErrorKind::invalid_config);
}

TEST(LayerIdTest, RoundTrip) {
  for (const LayerId& id : all_layer_ids(ModelConfig{})) EXPECT_EQ(LayerId::parse(id.str()), id);
  EXPECT_EQ((LayerId{2, Category::mlp_up}.str()), "layers.2.mlp_up");
  EXPECT_BOLACO_ERROR(LayerId::parse("layers.x.attn_q"), ErrorKind::invalid_argument);
  EXPECT_BOLACO_ERROR(LayerId::parse("layers.1.attn_z"), ErrorKind::invalid_argument);
}

TEST(SynthWeights, DeterministicWithShapes) {
  const Model a = synth_weights(ModelConfig{}, 5), b = synth_weights(ModelConfig{}, 5);
  const Model c = synth_weights(ModelConfig{}, 6);
  for (const LayerId& id : a.layer_ids()) {
    EXPECT_EQ(a.weight(id), b.weight(id));
    const LayerShape s = layer_shape(a.config, id.category);
    EXPECT_EQ(a.weight(id).rows(), s.rows);
    EXPECT_EQ(a.weight(id).cols(), s.cols);
    EXPECT_TRUE(a.weight(id).allFinite());
    // f32-representable
    EXPECT_EQ(a.weight(id), a.weight(id).cast<float>().cast<double>());
  }
  EXPECT_EQ(a.embedding, b.embedding);
  EXPECT_NE(a.weight({0, Category::attn_q}), c.weight({0, Category::attn_q}));
}

TEST(SynthWeights, FeatureSpectrumDecays) {
  const Model m = synth_weights(ModelConfig{}, 7);
  const auto accs = capture_features(m, random_tokens(8, 32, 8), m.layer_ids());
  for (const auto& [id, acc] : accs) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(finalize_scm(acc).cov);
    const Eigen::VectorXd ev = es.eigenvalues().reverse();
    const auto top = ev.size() / 4;
    EXPECT_GE(ev.head(top).sum() / ev.sum(), 0.7) << id.str();
  }
}

TEST(Forward, ShapesAndSoftmax) {
  const auto& f = fixture();
  const TokenSeq seq{1, 50, 200, 33, 7};
  const Eigen::MatrixXd logits = forward(*f.model, seq);
  EXPECT_EQ(logits.rows(), 5);
  EXPECT_EQ(logits.cols(), 256);
  const Eigen::MatrixXd lp = log_softmax_rows(logits);
  for (Eigen::Index i = 0; i < lp.rows(); ++i) EXPECT_NEAR(lp.row(i).array().exp().sum(), 1.0, 1e-9);
}

TEST(Forward, Causal) {
  const auto& f = fixture();
  TokenSeq seq{10, 20, 30, 40, 50, 60, 70, 80};
  const Eigen::MatrixXd base = forward(*f.model, seq);
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
    TokenSeq mutated = seq;
    for (std::size_t u = t + 1; u < seq.size(); ++u) mutated[u] = (mutated[u] * 7 + 3) % 256;
    const Eigen::MatrixXd m = forward(*f.model, mutated);
    EXPECT_EQ(m.topRows(static_cast<Eigen::Index>(t) + 1), base.topRows(static_cast<Eigen::Index>(t) + 1));
  }
}

TEST(Forward, DeterministicAndOrderIndependent) {
  const auto& f = fixture();
  const TokenDataset d = random_tokens(3, 12, 9);
  std::vector<Eigen::MatrixXd> first;
  for (const auto& s : d.sequences) first.push_back(forward(*f.model, s));
  for (int i = 2; i >= 0; --i) EXPECT_EQ(forward(*f.model, d.sequences[static_cast<std::size_t>(i)]), first[static_cast<std::size_t>(i)]);
}

TEST(Forward, Errors) {
  const auto& f = fixture();
  EXPECT_BOLACO_ERROR(forward(*f.model, TokenSeq{1, 256}), ErrorKind::invalid_argument);
  EXPECT_BOLACO_ERROR(forward(*f.model, TokenSeq(257, 1)), ErrorKind::invalid_argument);
}

TEST(Forward, EmptyFactorsBitIdentical) {
  const auto& f = fixture();
  CompressedModel cm{f.model, {}, {}, {}};
  const TokenSeq seq{3, 1, 4, 1, 5, 9, 2, 6};
  EXPECT_EQ(forward(cm, seq), forward(*f.model, seq));
}

TEST(Forward, FullRankAfmLayerIsNearExact) {
  const auto& f = fixture();
  const LayerId id{1, Category::attn_v};
  CompressedModel cm{f.model, {}, {}, {}};
  cm.factors.emplace(id, afm_decompose(f.model->weight(id), f.bases.at(id), 64));
  const TokenSeq seq(f.calib.sequences[0]);
  EXPECT_LE((forward(cm, seq) - forward(*f.model, seq)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Capture, CountsPositions) {
  const auto& f = fixture();
  TokenDataset d;
  d.sequences.push_back({1, 2, 3, 4, 5});
  const std::vector<LayerId> ids{{0, Category::attn_q}, {3, Category::mlp_down}};
  const auto accs = capture_features(*f.model, d, ids);
  ASSERT_EQ(accs.size(), 2u);
  for (const auto& [id, acc] : accs) EXPECT_EQ(acc.count(), 5u);
}

TEST(Capture, MatchesOfflineRecomputation) {
  const auto& f = fixture();
  const LayerId id{2, Category::attn_q};
  const TokenDataset d = random_tokens(2, 10, 10);
  Eigen::MatrixXd inputs(64, 0);
  const FeatureTap tap = [&](const LayerId& lid, const Eigen::MatrixXd& in, const Eigen::MatrixXd&) {
    if (lid != id) return;
    Eigen::MatrixXd grown(64, inputs.cols() + in.cols());
    grown << inputs, in;
    inputs = std::move(grown);
  };
  for (const auto& s : d.sequences) forward(*f.model, s, {}, &tap);
  const std::vector<LayerId> ids{id};
  const CovarianceStats got = finalize_scm(capture_features(*f.model, d, ids).at(id));
  const Eigen::MatrixXd y = f.model->weight(id) * inputs;
  EXPECT_LT((got.cov - testing::two_pass_cov(y)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((got.mean - y.rowwise().mean()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Capture, GroupedStatsArePooled) {
  const auto& f = fixture();
  const auto groups = split_groups(f.calib, 4, 3);
  const LayerId id{0, Category::mlp_up};
  std::vector<CovarianceStats> per;
  const std::vector<LayerId> ids{id};
  for (const auto& g : groups) per.push_back(finalize_scm(capture_features(*f.model, g, ids).at(id)));
  Eigen::MatrixXd mean_cov = Eigen::MatrixXd::Zero(176, 176);
  for (const auto& s : per) mean_cov += s.cov / 4.0;
  EXPECT_LT((f.stats.at(id).cov - mean_cov).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Perplexity, UniformLogits) {
  FixedLogits net{Eigen::MatrixXd::Zero(8, 256)};
  TokenDataset d;
  d.sequences.push_back({1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_NEAR(perplexity(net, d), 256.0, 1e-6);
}

TEST(Perplexity, ConfidentLogits) {
  const TokenSeq seq{4, 9, 2, 7};
  FixedLogits net{Eigen::MatrixXd::Zero(4, 256)};
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) net.logits(static_cast<Eigen::Index>(t), seq[t + 1]) = 30.0;
  TokenDataset d;
  d.sequences.push_back(seq);
  EXPECT_LE(perplexity(net, d), 1.0 + 1e-9);
}

TEST(Perplexity, HandComputedThreeTokens) {
  FixedLogits net{Eigen::MatrixXd::Zero(3, 3)};
  net.logits.row(0) << 1.0, 2.0, 0.0;
  net.logits.row(1) << 0.5, 0.0, -1.0;
  TokenDataset d;
  d.sequences.push_back({0, 1, 2});
  const double p1 = std::exp(2.0) / (std::exp(1.0) + std::exp(2.0) + 1.0);
  const double p2 = std::exp(-1.0) / (std::exp(0.5) + 1.0 + std::exp(-1.0));
  EXPECT_NEAR(perplexity(net, d), std::exp(-(std::log(p1) + std::log(p2)) / 2.0), 1e-12);
}

TEST(PerSampleNll, Aggregation) {
  const auto& f = fixture();
  const TokenDataset one = f.calib.slice(0, 1);
  EXPECT_NEAR(std::exp(per_sample_nll(*f.model, one)[0]), perplexity(*f.model, one), 1e-9);

  TokenDataset dup = one;
  dup.sequences.push_back(one.sequences[0]);
  const auto v = per_sample_nll(*f.model, dup);
  EXPECT_EQ(v[0], v[1]);

  TokenDataset mixed = f.calib.slice(0, 3);
  mixed.sequences[1].resize(20);
  const auto nll = per_sample_nll(*f.model, mixed);
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < nll.size(); ++i) {
    total += nll[i] * static_cast<double>(mixed.sequences[i].size() - 1);
    count += static_cast<double>(mixed.sequences[i].size() - 1);
  }
  EXPECT_NEAR(std::exp(total / count), perplexity(*f.model, mixed), 1e-9);
}

TEST(Rkl, IdenticalIsZero) {
  const auto& f = fixture();
  const CompressedModel cm{f.model, {}, {}, {}};
  EXPECT_NEAR(rkl(*f.model, cm, f.calib.slice(0, 2)), 0.0, 1e-9);
}

TEST(Rkl, HandArithmetic) {
  Eigen::MatrixXd lp(1, 2), lq(1, 2);
  lp << std::log(0.5), std::log(0.5);
  lq << std::log(0.75), std::log(0.25);
  EXPECT_NEAR(kl_sum_logprobs(lp, lq), 0.143841, 1e-6);
}

TEST(Rkl, NonNegative) {
  std::mt19937_64 rng(11);
  for (int c = 0; c < 100; ++c) {
    const Eigen::MatrixXd a = testing::randn(3, 17, rng) * 3.0, b = testing::randn(3, 17, rng) * 3.0;
    EXPECT_GE(kl_sum_logprobs(log_softmax_rows(a), log_softmax_rows(b)), -1e-12);
  }
  const auto& f = fixture();
  const AllocationSpace space(five_by_one(4), f.model->config);
  for (int c = 0; c < 3; ++c) {
    const CompressedModel cm = compress_model(f.model, sample_allocation(space, 0.3, c), f.bases);
    EXPECT_GE(rkl(*f.model, cm, f.calib.slice(0, 2)), 0.0);
  }
}

TEST(Compress, AllNaIsBitExact) {
  const auto& f = fixture();
  const AllocationSpace space(five_by_one(4), f.model->config);
  const CompressedModel cm = compress_model(f.model, identity_allocation(space), f.bases);
  EXPECT_TRUE(cm.factors.empty());
  const TokenSeq& s = f.calib.sequences[1];
  EXPECT_EQ(forward(cm, s), forward(*f.model, s));
  EXPECT_EQ(param_count(cm), param_count(*f.model));
  EXPECT_EQ(compression_ratio(cm), 0.0);
}

TEST(Compress, OnlyAttentionQkGroup) {
  const auto& f = fixture();
  const AllocationSpace space(five_by_one(4), f.model->config);
  const Allocation a = space.from_lambdas({0.5, std::nullopt, std::nullopt, std::nullopt, std::nullopt}, 0.1);
  const CompressedModel cm = compress_model(f.model, a, f.bases);
  EXPECT_EQ(cm.factors.size(), 8u);
  for (const auto& [id, fac] : cm.factors) {
    EXPECT_TRUE(id.category == Category::attn_q || id.category == Category::attn_k);
    EXPECT_EQ(fac.rank, 16);
  }
  EXPECT_LT(param_count(cm), param_count(*f.model));
}

TEST(Compress, ParamCountWithinRoundingSlack) {
  const auto& f = fixture();
  const AllocationSpace space(five_by_one(4), f.model->config);
  const double base = static_cast<double>(param_count(*f.model));
  for (double rho : {0.2, 0.3}) {
    for (int seed = 0; seed < 10; ++seed) {
      const CompressedModel cm = compress_model(f.model, sample_allocation(space, rho, seed), f.bases);
      double slack = 0.0;
      for (const auto& [id, fac] : cm.factors) slack += 8.0 * static_cast<double>(fac.rows() + fac.cols()) + fac.rows();
      EXPECT_LE(static_cast<double>(param_count(cm)), (1.0 - rho) * base + slack);
    }
  }
}

TEST(Compress, MissingStatsNamesLayer) {
  const auto& f = fixture();
  const AllocationSpace space(five_by_one(4), f.model->config);
  BasisMap partial = f.bases;
  partial.erase(LayerId{2, Category::mlp_up});
  try {
    compress_model(f.model, uniform_allocation(space, 0.2), partial);
    ADD_FAILURE() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_input);
    EXPECT_NE(std::string(e.what()).find("layers.2.mlp_up"), std::string::npos);
  }
}

TEST(ParamCount, HandArithmetic) {
  const auto& f = fixture();
  // 4 layers x (four 64x64 + two 176x64 + one 64x176).
  EXPECT_EQ(param_count(*f.model), 4u * (16384u + 22528u + 11264u));
  EXPECT_EQ(param_count(*f.model), 200704u);

  CompressedModel cm{f.model, {}, {}, {}};
  EXPECT_EQ(param_count(cm), param_count(*f.model));
  const LayerId id{0, Category::attn_o};
  cm.factors.emplace(id, afm_decompose(f.model->weight(id), f.bases.at(id), 16));
  EXPECT_EQ(cm.factors.at(id).parameter_count(), 2112u);
  EXPECT_EQ(param_count(cm), 200704u - 4096u + 2112u);
}

TEST(Data, WindowsAndGroups) {
  const TokenDataset d = dataset_from_bytes("abcdefghij", 4);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d.sequences[2], (TokenSeq{'i', 'j'}));
  EXPECT_EQ(dataset_from_bytes("abcde", 4).size(), 1u);  // 1-token tail dropped
  const TokenDataset c = dataset_from_bytes(synthetic_corpus(1, 640), 64);
  EXPECT_EQ(c.size(), 10u);
  EXPECT_BOLACO_ERROR(split_groups(c, 3, 0), ErrorKind::invalid_config);
  const auto g = split_groups(c, 5, 0);
  ASSERT_EQ(g.size(), 5u);
  for (const auto& x : g) EXPECT_EQ(x.size(), 2u);
  EXPECT_EQ(synthetic_corpus(4, 100), synthetic_corpus(4, 100));
  EXPECT_BOLACO_ERROR(load_text_dataset("/nonexistent/file.txt"), ErrorKind::missing_input);
}

}  // namespace
}  // namespace bolaco
