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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maskedsum/autograd.hpp"
#include "maskedsum/checkpoint.hpp"
#include "maskedsum/rng.hpp"
#include "maskedsum/tokenizer.hpp"

namespace maskedsum {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 64;
  // Only active when a forward pass runs in training mode.
  double dropout = 0.1;

  void validate() const;
  void write(KeyValues& kv, const std::string& prefix = "model.") const;
  static ModelConfig read(const KeyValues& kv, const std::string& prefix = "model.");
};

/// Additive attention mask with entries in {0, kMasked}.
class AttentionMask {
 public:
  static constexpr double kMasked = -10000.0;

  explicit AttentionMask(std::size_t n) : n_(n), values_(n * n, 0.0) {}

  /// Source queries see all source keys; target queries see all source keys
  /// and target keys up to themselves.
  static AttentionMask seq2seq(std::span<const Segment> segments);

  std::size_t size() const { return n_; }
  double at(std::size_t query, std::size_t key) const { return values_[query * n_ + key]; }
  bool open(std::size_t query, std::size_t key) const { return at(query, key) == 0.0; }
  std::size_t open_count(std::size_t query) const;
  std::size_t total_open() const;

  /// Copy with the given key columns closed for every query row. Only entries
  /// that are open become masked; nothing is ever unmasked.
  AttentionMask with_masked_keys(std::span<const std::size_t> keys) const;

  // Throws NumericError when some query row has no open entry.
  void validate() const;
  Tensor tensor() const;

 private:
  std::size_t n_;
  std::vector<double> values_;
};

/// Post-softmax attention of one layer, one [n, n] matrix per head.
struct AttentionScores {
  std::size_t layer = 0;
  std::vector<Tensor> heads;

  bool empty() const { return heads.empty(); }
  // Mean over heads, [n, n].
  Tensor head_average() const;
};

enum class ApplyLayers { kCapturedOnly, kAll };

struct ForwardOptions {
  std::optional<std::size_t> capture_layer;
  bool capture_all = false;
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
  // Replaces the base mask on the selected layers.
  const AttentionMask* dynamic_mask = nullptr;
  ApplyLayers apply_layers = ApplyLayers::kAll;
  std::size_t dynamic_layer = 0;  // used with kCapturedOnly
};

struct ForwardResult {
  Var logits;                               // [n, vocab]
  std::vector<AttentionScores> attention;   // captured layers, in layer order

  const AttentionScores& layer(std::size_t l) const;
};

/// Shared pre-LN transformer stack with learned positions, used as a
/// seq2seq model purely through its attention mask.
class Transformer {
 public:
  Transformer(ModelConfig config, Rng& init_rng);

  const ModelConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  ForwardResult forward(Graph& g, std::span<const int> ids, const AttentionMask& mask,
                        const ForwardOptions& options = {});

 private:
  struct LayerParams {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };

  ModelConfig config_;
  ParameterSet params_;
  std::size_t tok_emb_, pos_emb_, lnf_g_, lnf_b_, w_out_, b_out_;
  std::vector<LayerParams> layers_;
};

/// Next-token targets for teacher forcing: position p predicts ids[p + 1]
/// whenever that token is in the TARGET segment, otherwise ignored (-1).
std::vector<int> next_token_targets(const TokenSequence& seq);

/// Mean cross-entropy over TARGET predictions. Throws DataError if the
/// sequence has no target token.
Var supervised_loss(Transformer& model, Graph& g, const TokenSequence& seq, const AttentionMask& mask,
                    const ForwardOptions& options = {});

/// Chooses source key positions to close before decoding starts. Called once
/// per document with the decoding prompt.
using MaskHook = std::function<std::vector<std::size_t>(const TokenSequence& prompt, Transformer& model)>;

struct DecodeOptions {
  // Where the masked keys apply; see ForwardOptions.
  ApplyLayers apply_layers = ApplyLayers::kAll;
  std::size_t dynamic_layer = 0;
};

struct DecodeResult {
  std::vector<int> ids;  // generated target ids, EOS excluded
  std::vector<std::string> tokens;
  std::string text;
  std::vector<std::size_t> masked_keys;
};

/// Greedy argmax decoding (ties go to the lower id) from
/// [SOS, source, SEP] until EOS, max_tgt tokens or max_seq_len.
DecodeResult greedy_decode(Transformer& model, const Vocab& vocab, std::string_view source, std::size_t max_src,
                           std::size_t max_tgt, const MaskHook& hook = {}, const DecodeOptions& options = {});

DecodeResult greedy_decode_prompt(Transformer& model, const Vocab& vocab, const TokenSequence& prompt,
                                  std::span<const std::size_t> masked_keys, std::size_t max_tgt,
                                  const DecodeOptions& options = {});

enum class Pooling { kAbsolute, kRelative };

struct StateOptions {
  std::size_t buckets = 4;
  Pooling pooling = Pooling::kAbsolute;

  std::size_t state_dim() const { return buckets + 1; }
};

/// Per-token agent state from captured attention, [positions.size(), 1 + buckets]:
///  column 0: head-averaged attention the token receives, averaged over query
///            rows and scaled by the number of keys (1 == uniform);
///  columns 1..: head-averaged attention the token gives, pooled into buckets
///            by absolute key position or by offset from the token.
Tensor state_vector(const AttentionScores& scores, std::span<const std::size_t> positions,
                    const StateOptions& options = {});

}  // namespace maskedsum
