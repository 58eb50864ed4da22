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
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace maskedsum {

struct RougeComponent {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct RougeScore {
  RougeComponent rouge1;
  RougeComponent rouge2;
  RougeComponent rougeL;
};

// Harmonic mean, 0 when p + r == 0.
double f_measure(double precision, double recall);

/// Clipped n-gram overlap. Empty n-gram sets on either side give all zeros.
RougeComponent rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// Sentence-level ROUGE-L: the whole summary is one token stream.
RougeComponent rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);

RougeScore rouge_all(std::span<const std::string> candidate, std::span<const std::string> reference);

/// Texts are normalised with the same tokenizer used for model input.
RougeScore rouge_text(std::string_view candidate, std::string_view reference);

struct RewardWeights {
  double rouge1 = 0.4;
  double rouge2 = 0.3;
  double rougeL = 0.3;

  // Throws UsageError on negative weights or a sum off 1 by more than 1e-9.
  void validate() const;
  // "w1,w2,wL"
  static RewardWeights parse(std::string_view text);
  std::string to_string() const;
};

double combine(const RougeScore& score, const RewardWeights& weights);

/// Weighted F1 in [0, 1].
double reward(std::string_view candidate, std::string_view reference, const RewardWeights& weights);

struct CorpusRouge {
  RougeScore mean;
  double mean_reward = 0.0;
  std::size_t count = 0;
};

/// Unweighted mean of per-pair precision, recall and F1.
CorpusRouge corpus_eval(std::span<const std::pair<std::string, std::string>> pairs,
                        const RewardWeights& weights = {});

/// "rouge1 P R F1" style lines with 4 decimals, then "mean_reward X".
void write_results(std::ostream& out, const CorpusRouge& result);

}  // namespace maskedsum
