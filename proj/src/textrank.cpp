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

#include "maskedsum/textrank.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "maskedsum/errors.hpp"
#include "maskedsum/rng.hpp"
#include "maskedsum/tokenizer.hpp"

namespace maskedsum {

EmbeddingTable::EmbeddingTable(std::size_t dim, std::uint64_t seed) : dim_(dim), hashed_(true), seed_(seed) {
  if (dim == 0) throw UsageError("embedding dimension must be positive");
}

EmbeddingTable::EmbeddingTable(std::unordered_map<std::string, std::vector<double>> vectors)
    : table_(std::move(vectors)) {
  if (table_.empty()) throw DataError("empty embedding table");
  dim_ = table_.begin()->second.size();
  for (const auto& [word, v] : table_) {
    if (v.size() != dim_) {
      throw DataError("embedding for '" + word + "' has dimension " + std::to_string(v.size()) + ", expected " +
                      std::to_string(dim_));
    }
  }
  if (dim_ == 0) throw DataError("embedding dimension must be positive");
}

EmbeddingTable EmbeddingTable::load(std::istream& in, const std::string& source_name) {
  std::unordered_map<std::string, std::vector<double>> vectors;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    std::vector<double> v;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw DataError(source_name + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
      }
    }
    if (v.empty()) throw DataError(source_name + ":" + std::to_string(line_no) + ": no vector for '" + word + "'");
    if (dim == 0) dim = v.size();
    if (v.size() != dim) {
      throw DataError(source_name + ":" + std::to_string(line_no) + ": dimension " + std::to_string(v.size()) +
                      ", expected " + std::to_string(dim));
    }
    vectors[word] = std::move(v);
  }
  if (vectors.empty()) throw DataError(source_name + ": no embeddings");
  return EmbeddingTable(std::move(vectors));
}

EmbeddingTable EmbeddingTable::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings " + path.string());
  return load(in, path.string());
}

bool EmbeddingTable::contains(std::string_view word) const {
  return hashed_ || table_.count(std::string(word)) > 0;
}

std::vector<double> EmbeddingTable::lookup(std::string_view word) const {
  if (!hashed_) {
    auto it = table_.find(std::string(word));
    return it == table_.end() ? std::vector<double>(dim_, 0.0) : it->second;
  }
  Rng rng(seed_ ^ stable_hash(word));
  std::vector<double> v(dim_);
  double norm = 0;
  for (auto& x : v) {
    x = rng.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::vector<double> EmbeddingTable::mean_vector(std::span<const std::string> words) const {
  std::vector<double> m(dim_, 0.0);
  if (words.empty()) return m;
  for (const auto& w : words) {
    const auto v = lookup(w);
    for (std::size_t i = 0; i < dim_; ++i) m[i] += v[i];
  }
  for (auto& x : m) x /= static_cast<double>(words.size());
  return m;
}

double sentence_similarity(std::span<const std::string> a, std::span<const std::string> b,
                           const EmbeddingTable& emb) {
  if (a.empty() || b.empty()) return 0.0;
  const auto u = emb.mean_vector(a), v = emb.mean_vector(b);
  double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), 0.0, 1.0);
}

SentenceGraph build_graph(std::vector<std::vector<std::string>> sentences, const EmbeddingTable& emb) {
  SentenceGraph g;
  const std::size_t n = sentences.size();
  g.similarity = Tensor({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = sentence_similarity(sentences[i], sentences[j], emb);
      g.similarity.at(i, j) = s;
      g.similarity.at(j, i) = s;
    }
  }
  g.sentences = std::move(sentences);
  return g;
}

RankResult rank(const Tensor& sim, const RankOptions& options) {
  if (sim.rank() != 2 || sim.dim(0) != sim.dim(1)) {
    throw DimensionError("similarity must be square, got " + shape_string(sim.shape()));
  }
  const std::size_t n = sim.dim(0);
  if (n == 0) throw DataError("rank on an empty graph");
  for (double x : sim.data()) {
    if (!std::isfinite(x)) throw NumericError("non-finite similarity");
  }
  const double d = options.damping;
  std::vector<double> out_weight(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < n; ++k) out_weight[j] += sim.at(j, k);
  }

  RankResult r;
  r.scores.assign(n, 1.0);
  std::vector<double> next(n);
  while (r.iterations < options.max_iter) {
    // Mass from nodes without edges is spread evenly.
    double dangling = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (out_weight[j] == 0.0) dangling += r.scores[j];
    }
    dangling /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      double in = dangling;
      for (std::size_t j = 0; j < n; ++j) {
        if (out_weight[j] > 0.0) in += sim.at(j, i) / out_weight[j] * r.scores[j];
      }
      next[i] = (1.0 - d) + d * in;
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) delta = std::max(delta, std::abs(next[i] - r.scores[i]));
    r.scores.swap(next);
    ++r.iterations;
    r.last_delta = delta;
    if (delta < options.tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

RankResult rank(SentenceGraph& graph, const RankOptions& options) {
  auto r = rank(graph.similarity, options);
  graph.scores = r.scores;
  return r;
}

std::vector<std::string> split_sentences(std::string_view text, std::size_t min_tokens) {
  std::vector<std::string> raw;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    current += c;
    const bool end = c == '.' || c == '!' || c == '?';
    if (end && (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1])))) {
      raw.push_back(current);
      current.clear();
    }
  }
  raw.push_back(current);

  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n\f\v");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r\n\f\v");
    return s.substr(b, e - b + 1);
  };

  std::vector<std::string> out;
  std::string carry;
  for (auto& piece : raw) {
    std::string s = trim(piece);
    if (s.empty()) continue;
    if (!carry.empty()) s = carry + " " + s;
    if (tokenize(s).size() < min_tokens) {
      carry = s;
      continue;
    }
    carry.clear();
    out.push_back(std::move(s));
  }
  if (!carry.empty()) {
    if (out.empty()) out.push_back(carry);
    else out.back() += " " + carry;
  }
  return out;
}

Extraction extract(std::string_view document, std::size_t k, const EmbeddingTable& emb, const RankOptions& options) {
  if (k == 0) throw UsageError("extractive summary needs k >= 1");
  Extraction ex;
  ex.sentences = split_sentences(document);
  if (ex.sentences.empty()) return ex;
  std::vector<std::vector<std::string>> tokens;
  for (const auto& s : ex.sentences) tokens.push_back(tokenize(s));
  auto graph = build_graph(std::move(tokens), emb);
  ex.ranking = rank(graph, options);

  std::vector<std::size_t> order(ex.sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ex.ranking.scores[a] > ex.ranking.scores[b]; });
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  ex.selected = order;
  for (std::size_t i = 0; i < order.size(); ++i) ex.text += (i ? " " : "") + ex.sentences[order[i]];
  return ex;
}

std::string extract_summary(std::string_view document, std::size_t k, const EmbeddingTable& emb,
                            const RankOptions& options) {
  return extract(document, k, emb, options).text;
}

}  // namespace maskedsum
