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
#include <unordered_set>
#include <vector>

#include "maskedsum/checkpoint.hpp"
#include "maskedsum/tokenizer.hpp"

namespace maskedsum {

struct Example {
  std::string id;
  std::string article;
  std::string summary;

  bool operator==(const Example&) const = default;
};

// One {"id", "article", "summary"} object per line. Blank lines are skipped.
std::vector<Example> read_jsonl(std::istream& in, const std::string& source_name);
std::vector<Example> load_jsonl(const std::filesystem::path& path);
void write_jsonl(std::ostream& out, std::span<const Example> examples);
void write_jsonl(const std::filesystem::path& path, std::span<const Example> examples);

struct CorpusSplits {
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<Example> test;
};

/// A directory with train.jsonl / val.jsonl / test.jsonl (missing files give
/// empty splits), or a single .jsonl file which becomes the train split.
CorpusSplits load_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& dir, const CorpusSplits& splits);

struct SyntheticSpec {
  std::size_t vocab_size = 100;  // distinct words in the generated text
  std::size_t num_examples = 500;
  std::size_t min_sentences = 4;
  std::size_t max_sentences = 6;
  std::size_t salient = 2;
  double noise_token_rate = 0.0;  // chance of a noise word after each salient-sentence word
  double distractor_rate = 0.5;   // share of noise-sentence words taken from the subject/object slots
  bool paraphrase = true;
  std::uint64_t seed = 1;

  void validate() const;
  void write(KeyValues& kv, const std::string& prefix = "synthetic.") const;
  static SyntheticSpec read(const KeyValues& kv, const std::string& prefix = "synthetic.");
};

/// Salient sentences are "the <subject> <verb> the <object>."; noise
/// sentences are 3-5 words from a disjoint noise lexicon mixed with subject
/// and object distractors, and never contain a verb. Summaries swap each verb
/// for its synonym when paraphrasing.
class SyntheticGrammar {
 public:
  static constexpr std::size_t kSlotSize = 10;
  // Throws UsageError when vocab_size cannot hold the slots plus ten noise words.
  explicit SyntheticGrammar(std::size_t vocab_size);

  const std::vector<std::string>& subjects() const { return subjects_; }
  const std::vector<std::string>& verbs() const { return verbs_; }
  const std::vector<std::string>& synonyms() const { return synonyms_; }
  const std::vector<std::string>& objects() const { return objects_; }
  const std::vector<std::string>& noise() const { return noise_; }
  // Subjects followed by objects.
  const std::vector<std::string>& distractors() const { return distractors_; }
  bool is_noise(const std::string& word) const { return noise_set_.count(word) > 0; }
  bool is_verb(const std::string& word) const { return verb_set_.count(word) > 0; }
  std::size_t lexicon_size() const;

  static std::size_t min_vocab_size() { return 2 + 4 * kSlotSize + 10; }

 private:
  std::vector<std::string> subjects_, verbs_, synonyms_, objects_, noise_, distractors_;
  std::unordered_set<std::string> noise_set_, verb_set_;
};

CorpusSplits generate_synthetic(const SyntheticSpec& spec);

/// Per-token labels for an article's tokens: true inside salient sentences.
/// A sentence (ending at ".") is salient when it contains a verb.
std::vector<bool> salience_labels(std::span<const std::string> article_tokens, const SyntheticGrammar& grammar);

/// The article with every noise sentence removed (the oracle mask).
std::string strip_noise_sentences(const std::string& article, const SyntheticGrammar& grammar);

struct LengthStats {
  std::size_t count = 0;
  std::size_t min = 0;
  std::size_t max = 0;
  double mean = 0.0;
  std::size_t bin_width = 16;
  std::vector<std::size_t> histogram;  // bin b counts lengths in [b*w, (b+1)*w)
};

struct CorpusStats {
  std::size_t examples = 0;
  LengthStats article;
  LengthStats summary;
  std::size_t distinct_tokens = 0;
  std::size_t total_tokens = 0;
  // Fraction of tokens found in the vocabulary; only when one is given.
  bool has_vocab = false;
  double vocab_coverage = 0.0;
};

CorpusStats compute_stats(std::span<const Example> examples, const Vocab* vocab = nullptr,
                          std::size_t bin_width = 16);
std::string format_stats(const std::string& name, const CorpusStats& stats);

}  // namespace maskedsum
