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

#include "maskedsum/rouge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

#include "maskedsum/errors.hpp"
#include "maskedsum/tokenizer.hpp"

namespace maskedsum {
namespace {

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts count_ngrams(std::span<const std::string> tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::vector<std::string_view> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++counts[std::move(gram)];
  }
  return counts;
}

RougeComponent make_component(std::size_t overlap, std::size_t cand_total, std::size_t ref_total) {
  if (cand_total == 0 || ref_total == 0) return {};
  RougeComponent c;
  c.precision = static_cast<double>(overlap) / static_cast<double>(cand_total);
  c.recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
  c.f1 = f_measure(c.precision, c.recall);
  return c;
}

void add_into(RougeComponent& acc, const RougeComponent& x) {
  acc.precision += x.precision;
  acc.recall += x.recall;
  acc.f1 += x.f1;
}

void divide(RougeComponent& acc, double n) {
  acc.precision /= n;
  acc.recall /= n;
  acc.f1 /= n;
}

}  // namespace

double f_measure(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

RougeComponent rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n) {
  if (n == 0) throw UsageError("rouge_n needs n >= 1");
  const auto cand = count_ngrams(candidate, n);
  const auto ref = count_ngrams(reference, n);
  std::size_t overlap = 0, cand_total = 0, ref_total = 0;
  for (const auto& [gram, c] : cand) {
    cand_total += c;
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(c, it->second);
  }
  for (const auto& [gram, c] : ref) ref_total += c;
  return make_component(overlap, cand_total, ref_total);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeComponent rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  return make_component(lcs_length(candidate, reference), candidate.size(), reference.size());
}

RougeScore rouge_all(std::span<const std::string> candidate, std::span<const std::string> reference) {
  return {rouge_n(candidate, reference, 1), rouge_n(candidate, reference, 2), rouge_l(candidate, reference)};
}

RougeScore rouge_text(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize(candidate);
  const auto r = tokenize(reference);
  return rouge_all(c, r);
}

void RewardWeights::validate() const {
  if (rouge1 < 0 || rouge2 < 0 || rougeL < 0) throw UsageError("reward weights must be nonnegative: " + to_string());
  if (std::abs(rouge1 + rouge2 + rougeL - 1.0) > 1e-9) throw UsageError("reward weights must sum to 1: " + to_string());
}

RewardWeights RewardWeights::parse(std::string_view text) {
  std::vector<double> parts;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("bad reward weight '" + item + "'");
    }
  }
  if (parts.size() != 3) throw UsageError("reward weights need three values w1,w2,wL");
  RewardWeights w{parts[0], parts[1], parts[2]};
  w.validate();
  return w;
}

std::string RewardWeights::to_string() const {
  std::ostringstream out;
  out.precision(17);
  out << rouge1 << ',' << rouge2 << ',' << rougeL;
  return out.str();
}

double combine(const RougeScore& score, const RewardWeights& weights) {
  return weights.rouge1 * score.rouge1.f1 + weights.rouge2 * score.rouge2.f1 + weights.rougeL * score.rougeL.f1;
}

double reward(std::string_view candidate, std::string_view reference, const RewardWeights& weights) {
  weights.validate();
  const double r = combine(rouge_text(candidate, reference), weights);
  return std::clamp(r, 0.0, 1.0);
}

CorpusRouge corpus_eval(std::span<const std::pair<std::string, std::string>> pairs, const RewardWeights& weights) {
  if (pairs.empty()) throw DataError("corpus_eval on an empty list");
  weights.validate();
  CorpusRouge out;
  for (const auto& [cand, ref] : pairs) {
    const auto s = rouge_text(cand, ref);
    add_into(out.mean.rouge1, s.rouge1);
    add_into(out.mean.rouge2, s.rouge2);
    add_into(out.mean.rougeL, s.rougeL);
    out.mean_reward += std::clamp(combine(s, weights), 0.0, 1.0);
  }
  const double n = static_cast<double>(pairs.size());
  divide(out.mean.rouge1, n);
  divide(out.mean.rouge2, n);
  divide(out.mean.rougeL, n);
  out.mean_reward /= n;
  out.count = pairs.size();
  return out;
}

void write_results(std::ostream& out, const CorpusRouge& result) {
  char line[128];
  auto row = [&](const char* name, const RougeComponent& c) {
    std::snprintf(line, sizeof line, "%s %.4f %.4f %.4f\n", name, c.precision, c.recall, c.f1);
    out << line;
  };
  row("rouge1", result.mean.rouge1);
  row("rouge2", result.mean.rouge2);
  row("rougeL", result.mean.rougeL);
  std::snprintf(line, sizeof line, "mean_reward %.4f\n", result.mean_reward);
  out << line;
}

}  // namespace maskedsum
