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

#include "maskedsum/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "maskedsum/errors.hpp"

namespace maskedsum {
namespace {

const char* const kSpecialNames[kNumSpecials] = {"[PAD]", "[SOS]", "[EOS]", "[SEP]", "[UNK]"};

bool is_unicode_space(char32_t c) {
  switch (c) {
    case U'\t': case U'\n': case U'\v': case U'\f': case U'\r': case U' ':
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

// Decodes one UTF-8 code point starting at text[i]; malformed bytes decode as
// themselves so that tokenisation never fails.
char32_t next_code_point(std::string_view text, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  int len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 1;
  if (i + len > text.size()) len = 1;
  char32_t c = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
  for (int k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(text[i + k]);
    if ((b >> 6) != 0x2) {
      len = 1;
      c = b0;
      break;
    }
    c = (c << 6) | (b & 0x3F);
  }
  i += len;
  return c;
}

bool is_ascii_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u);
}

void emit_word(std::string_view word, std::vector<std::string>& out) {
  std::size_t begin = 0, end = word.size();
  while (begin < end && is_ascii_punct(word[begin])) ++begin;
  if (begin == end) {
    for (char c : word) out.emplace_back(1, c);
    return;
  }
  while (end > begin && is_ascii_punct(word[end - 1])) --end;
  for (std::size_t i = 0; i < begin; ++i) out.emplace_back(1, word[i]);
  std::string core(word.substr(begin, end - begin));
  for (auto& c : core) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  out.push_back(std::move(core));
  for (std::size_t i = end; i < word.size(); ++i) out.emplace_back(1, word[i]);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0, word_start = 0;
  bool in_word = false;
  while (i < text.size()) {
    const std::size_t at = i;
    const char32_t c = next_code_point(text, i);
    if (is_unicode_space(c)) {
      if (in_word) emit_word(text.substr(word_start, at - word_start), out);
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      word_start = at;
    }
  }
  if (in_word) emit_word(text.substr(word_start), out);
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> regular) {
  id_to_token_.assign(kSpecialNames, kSpecialNames + kNumSpecials);
  for (auto& t : regular) id_to_token_.push_back(std::move(t));
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token '" + id_to_token_[i] + "'");
    }
  }
}

int Vocab::id(std::string_view token) const { return find(token).value_or(kUnk); }

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocab::save(std::ostream& out) const {
  for (std::size_t i = kNumSpecials; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\n';
}

Vocab Vocab::load(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw DataError("empty line in vocabulary at line " + std::to_string(tokens.size() + 1));
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

void Vocab::save_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  save(out);
}

Vocab Vocab::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  return load(in);
}

Vocab build_vocab(std::span<const std::string> documents, std::size_t min_count, std::size_t max_size) {
  if (documents.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : documents) {
    for (auto& t : tokenize(doc)) ++counts[std::move(t)];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && tok != kSpecialNames[0] && tok != kSpecialNames[1] && tok != kSpecialNames[2] &&
        tok != kSpecialNames[3] && tok != kSpecialNames[4]) {
      kept.emplace_back(tok, n);
    }
  }
  // counts is ordered, so a stable sort by count keeps lexicographic ties.
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_size > 0 && kept.size() > max_size) kept.resize(max_size);
  std::vector<std::string> regular;
  regular.reserve(kept.size());
  for (auto& [tok, n] : kept) regular.push_back(std::move(tok));
  return Vocab(std::move(regular));
}

std::size_t TokenSequence::source_length() const {
  return static_cast<std::size_t>(std::count(segments.begin(), segments.end(), Segment::kSource));
}

TokenSequence encode_source(std::string_view source, const Vocab& vocab, std::size_t max_src) {
  TokenSequence seq;
  seq.ids.push_back(kSos);
  auto tokens = tokenize(source);
  if (tokens.size() > max_src) tokens.resize(max_src);
  for (const auto& t : tokens) seq.ids.push_back(vocab.id(t));
  seq.ids.push_back(kSep);
  seq.segments.assign(seq.ids.size(), Segment::kSource);
  return seq;
}

TokenSequence encode_pair(std::string_view source, std::string_view target, const Vocab& vocab, std::size_t max_src,
                          std::size_t max_tgt) {
  TokenSequence seq = encode_source(source, vocab, max_src);
  auto tokens = tokenize(target);
  if (tokens.size() > max_tgt) tokens.resize(max_tgt);
  for (const auto& t : tokens) {
    seq.ids.push_back(vocab.id(t));
    seq.segments.push_back(Segment::kTarget);
  }
  seq.ids.push_back(kEos);
  seq.segments.push_back(Segment::kTarget);
  return seq;
}

std::vector<std::string> decode(std::span<const int> ids, const Vocab& vocab) {
  std::vector<std::string> out;
  for (int id : ids) {
    if (!vocab.is_special(id)) out.push_back(vocab.token(id));
  }
  return out;
}

}  // namespace maskedsum
