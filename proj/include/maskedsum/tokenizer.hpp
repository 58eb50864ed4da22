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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace maskedsum {

inline constexpr int kPad = 0;
inline constexpr int kSos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSep = 3;
inline constexpr int kUnk = 4;
inline constexpr int kNumSpecials = 5;

/// Lowercases (ASCII), splits on Unicode whitespace and peels leading and
/// trailing ASCII punctuation off each word as single-character tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Space-joins tokens.
std::string join_tokens(std::span<const std::string> tokens);

class Vocab {
 public:
  // Specials only.
  Vocab();
  // Specials followed by `regular` in order. Duplicates are rejected.
  explicit Vocab(std::vector<std::string> regular);

  int id(std::string_view token) const;  // kUnk when absent
  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return id_to_token_.size(); }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

  // One regular token per line; line i holds id i + kNumSpecials.
  void save(std::ostream& out) const;
  static Vocab load(std::istream& in);
  void save_file(const std::filesystem::path& path) const;
  static Vocab load_file(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Tokens with frequency >= min_count, most frequent first, ties broken
/// lexicographically, at most max_size regular tokens (0 means unbounded).
Vocab build_vocab(std::span<const std::string> documents, std::size_t min_count, std::size_t max_size);

enum class Segment : std::uint8_t { kSource, kTarget };

struct TokenSequence {
  std::vector<int> ids;
  std::vector<Segment> segments;

  std::size_t size() const { return ids.size(); }
  // SOURCE positions, including SOS and SEP.
  std::size_t source_length() const;
  bool operator==(const TokenSequence&) const = default;
};

/// [SOS, source..., SEP, target..., EOS]; SOURCE through SEP inclusive.
TokenSequence encode_pair(std::string_view source, std::string_view target, const Vocab& vocab, std::size_t max_src,
                          std::size_t max_tgt);

/// [SOS, source..., SEP], the decoding prompt.
TokenSequence encode_source(std::string_view source, const Vocab& vocab, std::size_t max_src);

/// Regular tokens of `ids`, specials dropped.
std::vector<std::string> decode(std::span<const int> ids, const Vocab& vocab);

}  // namespace maskedsum
