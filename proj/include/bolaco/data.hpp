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

#ifndef BOLACO_DATA_HPP
#define BOLACO_DATA_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bolaco/error.hpp"
#include "bolaco/random.hpp"

namespace bolaco {

using TokenSeq = std::vector<int>;

/// Byte-level token sequences. Every sequence has at least two tokens.
struct TokenDataset {
  std::vector<TokenSeq> sequences;

  std::size_t size() const { return sequences.size(); }
  bool empty() const { return sequences.empty(); }

  TokenDataset subset(std::span<const std::size_t> indices) const {
    TokenDataset out;
    out.sequences.reserve(indices.size());
    for (std::size_t i : indices) out.sequences.push_back(sequences.at(i));
    return out;
  }

  TokenDataset slice(std::size_t begin, std::size_t end) const {
    TokenDataset out;
    end = std::min(end, sequences.size());
    for (std::size_t i = begin; i < end; ++i) out.sequences.push_back(sequences[i]);
    return out;
  }
};

/// Splits raw bytes into non-overlapping windows of `window` tokens; a shorter
/// tail is kept only if it still has two tokens.
inline TokenDataset dataset_from_bytes(std::string_view text, int window = 128) {
  detail::require(window >= 2, ErrorKind::invalid_config, "window length must be at least 2");
  TokenDataset data;
  const auto w = static_cast<std::size_t>(window);
  for (std::size_t pos = 0; pos < text.size(); pos += w) {
    const std::size_t len = std::min(w, text.size() - pos);
    if (len < 2) break;
    TokenSeq seq(len);
    for (std::size_t i = 0; i < len; ++i) seq[i] = static_cast<unsigned char>(text[pos + i]);
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::missing_input, "cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline TokenDataset load_text_dataset(const std::filesystem::path& path, int window = 128) {
  TokenDataset data = dataset_from_bytes(read_text_file(path), window);
  detail::require(!data.empty(), ErrorKind::invalid_config, path.string() + " holds no usable sequences");
  return data;
}

/// Seeded pseudo-English text from a first-order word chain. Stands in for a
/// calibration corpus where none is available.
inline std::string synthetic_corpus(std::uint64_t seed, std::size_t n_bytes) {
  static constexpr std::array<std::string_view, 48> kWords = {
      "the",    "model",  "low",     "rank",   "layer",  "feature", "space",   "of",
      "a",      "and",    "to",      "in",     "is",     "data",    "weight",  "matrix",
      "search", "value",  "small",   "large",  "with",   "for",     "each",    "group",
      "we",     "find",   "that",    "this",   "over",   "many",    "sample",  "text",
      "time",   "under",  "compress", "ratio", "keeps",  "most",    "signal",  "noise",
      "from",   "into",   "river",   "stone",  "light",  "north",   "quiet",   "bright"};
  constexpr std::size_t n = kWords.size();
  Rng rng = make_rng(seed, "corpus");
  // Each word prefers a handful of successors.
  std::vector<std::array<std::size_t, 4>> next(n);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (auto& row : next)
    for (auto& s : row) s = pick(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> four(0, 3);

  std::string out;
  out.reserve(n_bytes + 16);
  std::size_t word = pick(rng);
  bool sentence_start = true;
  int words_in_sentence = 0;
  while (out.size() < n_bytes) {
    std::string w(kWords[word]);
    if (sentence_start) w[0] = static_cast<char>(w[0] - 'a' + 'A');
    out += w;
    ++words_in_sentence;
    sentence_start = false;
    if (words_in_sentence > 4 && u(rng) < 0.15) {
      out += u(rng) < 0.8 ? ". " : ".\n";
      sentence_start = true;
      words_in_sentence = 0;
    } else if (u(rng) < 0.05) {
      out += ", ";
    } else {
      out += ' ';
    }
    word = u(rng) < 0.85 ? next[word][static_cast<std::size_t>(four(rng))] : pick(rng);
  }
  out.resize(n_bytes);
  return out;
}

/// Shuffles sequence indices with `seed` and deals them into `m` equal groups.
inline std::vector<TokenDataset> split_groups(const TokenDataset& data, int m, std::uint64_t seed) {
  detail::require(m >= 1, ErrorKind::invalid_config, "group count must be positive");
  detail::require(data.size() % static_cast<std::size_t>(m) == 0, ErrorKind::invalid_config,
                  "sequence count " + std::to_string(data.size()) + " is not divisible by " +
                      std::to_string(m) + " groups");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, "calibration");
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t per = data.size() / static_cast<std::size_t>(m);
  std::vector<TokenDataset> groups(static_cast<std::size_t>(m));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    groups[g] = data.subset(std::span(order).subspan(g * per, per));
  }
  return groups;
}

}  // namespace bolaco

#endif  // BOLACO_DATA_HPP
