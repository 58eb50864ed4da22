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

#include "maskedsum/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "maskedsum/errors.hpp"
#include "maskedsum/rng.hpp"

namespace maskedsum {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string field(const nlohmann::json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(where + ": missing \"" + key + "\"");
  if (!it->is_string()) throw DataError(where + ": \"" + key + "\" is not a string");
  return it->get<std::string>();
}

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Consonant-vowel syllables; noise words are two of them.
std::vector<std::string> syllables() {
  const std::string consonants = "bdfgklmnprstvz";
  const std::string vowels = "aeiou";
  std::vector<std::string> out;
  for (char c : consonants) {
    for (char v : vowels) out.push_back(std::string{c, v});
  }
  return out;
}

std::string join_sentence(const std::vector<std::string>& words) {
  // words end with "."; attach it to the last word
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] == "." && i > 0) {
      s += ".";
      continue;
    }
    s += (i ? " " : "") + words[i];
  }
  return s;
}

std::string join_sentences(const std::vector<std::vector<std::string>>& sentences) {
  std::string s;
  for (std::size_t i = 0; i < sentences.size(); ++i) s += (i ? " " : "") + join_sentence(sentences[i]);
  return s;
}

LengthStats length_stats(const std::vector<std::size_t>& lengths, std::size_t bin_width) {
  LengthStats s;
  s.bin_width = bin_width;
  s.count = lengths.size();
  if (lengths.empty()) return s;
  s.min = *std::min_element(lengths.begin(), lengths.end());
  s.max = *std::max_element(lengths.begin(), lengths.end());
  s.mean = static_cast<double>(std::accumulate(lengths.begin(), lengths.end(), std::size_t{0})) /
           static_cast<double>(lengths.size());
  s.histogram.assign(s.max / bin_width + 1, 0);
  for (auto n : lengths) ++s.histogram[n / bin_width];
  return s;
}

std::string format_lengths(const std::string& label, const LengthStats& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s_tokens min %zu max %zu mean %.4f\n", label.c_str(), s.min, s.max, s.mean);
  std::string out = buf;
  out += label + "_histogram";
  for (std::size_t b = 0; b < s.histogram.size(); ++b) {
    out += " [" + std::to_string(b * s.bin_width) + "," + std::to_string((b + 1) * s.bin_width) +
           "):" + std::to_string(s.histogram[b]);
  }
  return out + "\n";
}

}  // namespace

std::vector<Example> read_jsonl(std::istream& in, const std::string& source_name) {
  std::vector<Example> out;
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source_name + ":" + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
    Example ex{field(obj, "id", where), field(obj, "article", where), field(obj, "summary", where)};
    if (ex.article.empty()) throw DataError(where + ": empty article for id '" + ex.id + "'");
    auto [it, fresh] = seen.emplace(ex.id, line_no);
    if (!fresh) {
      throw DataError(where + ": duplicate id '" + ex.id + "' (first on line " + std::to_string(it->second) + ")");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path.string());
  return read_jsonl(in, path.string());
}

void write_jsonl(std::ostream& out, std::span<const Example> examples) {
  for (const auto& ex : examples) {
    ordered_json obj;
    obj["id"] = ex.id;
    obj["article"] = ex.article;
    obj["summary"] = ex.summary;
    out << obj.dump() << '\n';
  }
}

void write_jsonl(const std::filesystem::path& path, std::span<const Example> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_jsonl(out, examples);
}

CorpusSplits load_corpus(const std::filesystem::path& path) {
  CorpusSplits s;
  if (std::filesystem::is_directory(path)) {
    auto part = [&](const char* name, std::vector<Example>& dst) {
      const auto p = path / name;
      if (std::filesystem::exists(p)) dst = load_jsonl(p);
    };
    part("train.jsonl", s.train);
    part("val.jsonl", s.val);
    part("test.jsonl", s.test);
    if (s.train.empty() && s.val.empty() && s.test.empty() &&
        !std::filesystem::exists(path / "train.jsonl")) {
      throw DataError("no train.jsonl, val.jsonl or test.jsonl in " + path.string());
    }
  } else {
    s.train = load_jsonl(path);
  }
  return s;
}

void write_corpus(const std::filesystem::path& dir, const CorpusSplits& splits) {
  std::filesystem::create_directories(dir);
  write_jsonl(dir / "train.jsonl", splits.train);
  write_jsonl(dir / "val.jsonl", splits.val);
  write_jsonl(dir / "test.jsonl", splits.test);
}

void SyntheticSpec::validate() const {
  if (vocab_size < SyntheticGrammar::min_vocab_size()) {
    throw UsageError("vocab_size " + std::to_string(vocab_size) + " too small for the grammar slots (need at least " +
                     std::to_string(SyntheticGrammar::min_vocab_size()) + ")");
  }
  if (num_examples == 0) throw UsageError("num_examples must be positive");
  if (min_sentences == 0 || min_sentences > max_sentences) throw UsageError("bad sentence count range");
  if (salient == 0 || salient > min_sentences) throw UsageError("salient count must be in [1, min_sentences]");
  if (salient > SyntheticGrammar::kSlotSize) throw UsageError("salient count exceeds the number of subjects");
  if (noise_token_rate < 0.0 || noise_token_rate >= 1.0) throw UsageError("noise_token_rate must be in [0, 1)");
  if (distractor_rate < 0.0 || distractor_rate > 1.0) throw UsageError("distractor_rate must be in [0, 1]");
}

void SyntheticSpec::write(KeyValues& kv, const std::string& prefix) const {
  kv[prefix + "vocab_size"] = std::to_string(vocab_size);
  kv[prefix + "num_examples"] = std::to_string(num_examples);
  kv[prefix + "min_sentences"] = std::to_string(min_sentences);
  kv[prefix + "max_sentences"] = std::to_string(max_sentences);
  kv[prefix + "salient"] = std::to_string(salient);
  kv[prefix + "noise_token_rate"] = format_double(noise_token_rate);
  kv[prefix + "distractor_rate"] = format_double(distractor_rate);
  kv[prefix + "paraphrase"] = paraphrase ? "true" : "false";
  kv[prefix + "seed"] = std::to_string(seed);
}

SyntheticSpec SyntheticSpec::read(const KeyValues& kv, const std::string& prefix) {
  SyntheticSpec s;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(prefix + key);
    return it == kv.end() ? nullptr : &it->second;
  };
  try {
    if (auto v = get("vocab_size")) s.vocab_size = std::stoul(*v);
    if (auto v = get("num_examples")) s.num_examples = std::stoul(*v);
    if (auto v = get("min_sentences")) s.min_sentences = std::stoul(*v);
    if (auto v = get("max_sentences")) s.max_sentences = std::stoul(*v);
    if (auto v = get("salient")) s.salient = std::stoul(*v);
    if (auto v = get("noise_token_rate")) s.noise_token_rate = std::stod(*v);
    if (auto v = get("distractor_rate")) s.distractor_rate = std::stod(*v);
    if (auto v = get("seed")) s.seed = std::stoull(*v);
  } catch (const std::exception&) {
    throw DataError("bad number in " + prefix + "* settings");
  }
  if (auto v = get("paraphrase")) {
    if (*v != "true" && *v != "false") throw DataError(prefix + "paraphrase must be true or false");
    s.paraphrase = *v == "true";
  }
  return s;
}

SyntheticGrammar::SyntheticGrammar(std::size_t vocab_size) {
  if (vocab_size < min_vocab_size()) {
    throw UsageError("vocab_size " + std::to_string(vocab_size) + " too small for the grammar slots (need at least " +
                     std::to_string(min_vocab_size()) + ")");
  }
  subjects_ = {"cat", "dog", "bird", "fox", "horse", "king", "queen", "pilot", "farmer", "doctor"};
  verbs_ = {"sees", "finds", "takes", "likes", "moves", "helps", "builds", "paints", "holds", "wants"};
  synonyms_ = {"spots", "discovers", "grabs", "enjoys", "shifts", "aids", "makes", "draws", "carries", "needs"};
  objects_ = {"apple", "river", "stone", "house", "boat", "tree", "bridge", "lamp", "book", "coin"};
  const auto syl = syllables();
  const std::size_t m = syl.size();
  const std::size_t count = vocab_size - (2 + 4 * kSlotSize);
  if (count > m * m) throw UsageError("vocab_size too large for the noise lexicon");
  for (std::size_t i = 0; i < count; ++i) {
    noise_.push_back(syl[i % m] + syl[(i / m + 3 * i) % m]);
  }
  noise_set_.insert(noise_.begin(), noise_.end());
  verb_set_.insert(verbs_.begin(), verbs_.end());
  distractors_ = subjects_;
  distractors_.insert(distractors_.end(), objects_.begin(), objects_.end());
  if (noise_set_.size() != noise_.size()) throw StateError("noise lexicon has duplicates");
}

std::size_t SyntheticGrammar::lexicon_size() const {
  return 2 + subjects_.size() + verbs_.size() + synonyms_.size() + objects_.size() + noise_.size();
}

CorpusSplits generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const SyntheticGrammar g(spec.vocab_size);
  Rng rng(spec.seed);
  std::vector<Example> all;
  for (std::size_t e = 0; e < spec.num_examples; ++e) {
    const std::size_t n = spec.min_sentences + rng.index(spec.max_sentences - spec.min_sentences + 1);
    std::vector<std::size_t> subj(g.subjects().size());
    std::iota(subj.begin(), subj.end(), 0);
    rng.shuffle(std::span<std::size_t>(subj));
    subj.resize(spec.salient);

    struct Fact {
      std::size_t s, v, o;
    };
    std::vector<Fact> facts;
    for (auto s : subj) facts.push_back({s, rng.index(g.verbs().size()), rng.index(g.objects().size())});

    std::vector<std::vector<std::string>> sentences;
    for (const auto& f : facts) {
      const std::vector<std::string> base{"the", g.subjects()[f.s], g.verbs()[f.v], "the", g.objects()[f.o]};
      std::vector<std::string> words;
      for (const auto& w : base) {
        words.push_back(w);
        if (spec.noise_token_rate > 0.0 && rng.bernoulli(spec.noise_token_rate)) {
          words.push_back(g.noise()[rng.index(g.noise().size())]);
        }
      }
      words.push_back(".");
      sentences.push_back(std::move(words));
    }
    for (std::size_t k = spec.salient; k < n; ++k) {
      const std::size_t len = 3 + rng.index(3);
      std::vector<std::string> words;
      for (std::size_t i = 0; i < len; ++i) {
        if (spec.distractor_rate > 0.0 && rng.bernoulli(spec.distractor_rate)) {
          words.push_back(g.distractors()[rng.index(g.distractors().size())]);
        } else {
          words.push_back(g.noise()[rng.index(g.noise().size())]);
        }
      }
      words.push_back(".");
      sentences.push_back(std::move(words));
    }
    rng.shuffle(std::span<std::vector<std::string>>(sentences));

    std::sort(facts.begin(), facts.end(), [](const Fact& a, const Fact& b) { return a.s < b.s; });
    std::vector<std::vector<std::string>> summary;
    for (const auto& f : facts) {
      const auto& verb = spec.paraphrase ? g.synonyms()[f.v] : g.verbs()[f.v];
      summary.push_back({"the", g.subjects()[f.s], verb, "the", g.objects()[f.o], "."});
    }

    char id[32];
    std::snprintf(id, sizeof id, "syn-%05zu", e);
    all.push_back({id, join_sentences(sentences), join_sentences(summary)});
  }

  CorpusSplits out;
  const std::size_t n_train = all.size() * 8 / 10;
  const std::size_t n_val = all.size() / 10;
  out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                 all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), all.end());
  return out;
}

std::vector<bool> salience_labels(std::span<const std::string> tokens, const SyntheticGrammar& grammar) {
  std::vector<bool> labels(tokens.size(), false);
  std::size_t start = 0;
  for (std::size_t i = 0; i <= tokens.size(); ++i) {
    if (i < tokens.size() && tokens[i] != ".") continue;
    const std::size_t end = std::min(i + 1, tokens.size());
    bool salient = false;
    for (std::size_t k = start; k < end; ++k) {
      if (grammar.is_verb(tokens[k])) salient = true;
    }
    for (std::size_t k = start; k < end; ++k) labels[k] = salient;
    start = end;
  }
  return labels;
}

std::string strip_noise_sentences(const std::string& article, const SyntheticGrammar& grammar) {
  const auto tokens = tokenize(article);
  const auto labels = salience_labels(tokens, grammar);
  std::vector<std::vector<std::string>> kept;
  std::vector<std::string> current;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (labels[i]) current.push_back(tokens[i]);
    if (tokens[i] == "." && !current.empty()) {
      kept.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) kept.push_back(std::move(current));
  return join_sentences(kept);
}

CorpusStats compute_stats(std::span<const Example> examples, const Vocab* vocab, std::size_t bin_width) {
  if (bin_width == 0) throw UsageError("histogram bin width must be positive");
  CorpusStats s;
  s.examples = examples.size();
  std::vector<std::size_t> art, sum;
  std::set<std::string> distinct;
  std::size_t known = 0;
  for (const auto& ex : examples) {
    for (const auto* text : {&ex.article, &ex.summary}) {
      const auto toks = tokenize(*text);
      (text == &ex.article ? art : sum).push_back(toks.size());
      for (const auto& t : toks) {
        distinct.insert(t);
        ++s.total_tokens;
        if (vocab != nullptr && vocab->find(t)) ++known;
      }
    }
  }
  s.article = length_stats(art, bin_width);
  s.summary = length_stats(sum, bin_width);
  s.distinct_tokens = distinct.size();
  if (vocab != nullptr) {
    s.has_vocab = true;
    s.vocab_coverage = s.total_tokens ? static_cast<double>(known) / static_cast<double>(s.total_tokens) : 0.0;
  }
  return s;
}

std::string format_stats(const std::string& name, const CorpusStats& s) {
  std::string out = "split " + name + "\n";
  out += "examples " + std::to_string(s.examples) + "\n";
  out += format_lengths("article", s.article);
  out += format_lengths("summary", s.summary);
  out += "distinct_tokens " + std::to_string(s.distinct_tokens) + "\n";
  out += "total_tokens " + std::to_string(s.total_tokens) + "\n";
  if (s.has_vocab) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "vocab_coverage %.4f\n", s.vocab_coverage);
    out += buf;
  }
  return out;
}

}  // namespace maskedsum
