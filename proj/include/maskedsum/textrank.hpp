// Copyright 2026 The maskedsum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "maskedsum/tensor.hpp"

namespace maskedsum {

/// Word vectors for sentence similarity. Either loaded from a text file
/// (word followed by d floats per line) or hash-seeded random unit vectors.
class EmbeddingTable {
 public:
  // Hash mode: every word gets a deterministic unit vector.
  EmbeddingTable(std::size_t dim, std::uint64_t seed);
  // Explicit table; OOV words map to the zero vector.
  explicit EmbeddingTable(std::unordered_map<std::string, std::vector<double>> vectors);

  static EmbeddingTable load(std::istream& in, const std::string& source_name);
  static EmbeddingTable load_file(const std::filesystem::path& path);

  std::size_t dim() const { return dim_; }
  bool hashed() const { return hashed_; }
  std::size_t size() const { return table_.size(); }
  bool contains(std::string_view word) const;
  std::vector<double> lookup(std::string_view word) const;

  // Mean of the word vectors; zeros for an empty sentence.
  std::vector<double> mean_vector(std::span<const std::string> words) const;

 private:
  std::size_t dim_ = 0;
  bool hashed_ = false;
  std::uint64_t seed_ = 0;
  std::unordered_map<std::string, std::vector<double>> table_;
};

/// Cosine of the mean word vectors clamped to [0, 1]; 0 if either side is
/// empty or has a zero mean vector.
double sentence_similarity(std::span<const std::string> a, std::span<const std::string> b, const EmbeddingTable& emb);

struct SentenceGraph {
  std::vector<std::vector<std::string>> sentences;
  Tensor similarity;  // [n, n], symmetric, zero diagonal
  std::vector<double> scores;

  std::size_t size() const { return sentences.size(); }
};

SentenceGraph build_graph(std::vector<std::vector<std::string>> sentences, const EmbeddingTable& emb);

struct RankOptions {
  double damping = 0.85;
  double tol = 1e-6;
  std::size_t max_iter = 200;
};

struct RankResult {
  std::vector<double> scores;
  std::size_t iterations = 0;
  bool converged = false;
  double last_delta = 0.0;
};

/// Weighted PageRank over a similarity matrix. Rows with zero total weight
/// spread their score uniformly over all nodes.
RankResult rank(const Tensor& similarity, const RankOptions& options = {});
// Stores the scores into graph.scores as well.
RankResult rank(SentenceGraph& graph, const RankOptions& options = {});

/// Splits on '.', '!' or '?' followed by whitespace. Fragments shorter than
/// `min_tokens` are merged into the next sentence (or the previous one when
/// at the end).
std::vector<std::string> split_sentences(std::string_view text, std::size_t min_tokens = 3);

struct Extraction {
  std::vector<std::string> sentences;
  std::vector<std::size_t> selected;  // document order
  RankResult ranking;
  std::string text;
};

/// Top-k sentences by score (ties to the earlier sentence), emitted in
/// document order.
Extraction extract(std::string_view document, std::size_t k, const EmbeddingTable& emb,
                   const RankOptions& options = {});
std::string extract_summary(std::string_view document, std::size_t k, const EmbeddingTable& emb,
                            const RankOptions& options = {});

}  // namespace maskedsum
