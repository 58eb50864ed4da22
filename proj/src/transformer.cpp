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

#include "maskedsum/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "maskedsum/errors.hpp"
#include "maskedsum/ops.hpp"

namespace maskedsum {
namespace {

std::size_t parse_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError("bad integer for " + key + ": '" + it->second + "'");
  }
}

double parse_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw DataError("bad number for " + key + ": '" + it->second + "'");
  }
}

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

Tensor normal_init(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape), 0.0);
  for (auto& x : t.data()) x = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers == 0 || num_heads == 0 || d_model == 0 || d_ff == 0) {
    throw UsageError("model dimensions must be positive");
  }
  if (d_model % num_heads != 0) {
    throw UsageError("d_model " + std::to_string(d_model) + " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (max_seq_len < 8) throw UsageError("max_seq_len must be at least 8");
  if (vocab_size < static_cast<std::size_t>(kNumSpecials)) throw UsageError("vocab_size must cover the special tokens");
  if (dropout < 0.0 || dropout >= 1.0) throw UsageError("dropout must be in [0, 1)");
}

void ModelConfig::write(KeyValues& kv, const std::string& prefix) const {
  kv[prefix + "num_layers"] = std::to_string(num_layers);
  kv[prefix + "num_heads"] = std::to_string(num_heads);
  kv[prefix + "d_model"] = std::to_string(d_model);
  kv[prefix + "d_ff"] = std::to_string(d_ff);
  kv[prefix + "vocab_size"] = std::to_string(vocab_size);
  kv[prefix + "max_seq_len"] = std::to_string(max_seq_len);
  kv[prefix + "dropout"] = format_double(dropout);
}

ModelConfig ModelConfig::read(const KeyValues& kv, const std::string& prefix) {
  ModelConfig c;
  c.num_layers = parse_size(kv, prefix + "num_layers", c.num_layers);
  c.num_heads = parse_size(kv, prefix + "num_heads", c.num_heads);
  c.d_model = parse_size(kv, prefix + "d_model", c.d_model);
  c.d_ff = parse_size(kv, prefix + "d_ff", c.d_ff);
  c.vocab_size = parse_size(kv, prefix + "vocab_size", c.vocab_size);
  c.max_seq_len = parse_size(kv, prefix + "max_seq_len", c.max_seq_len);
  c.dropout = parse_double(kv, prefix + "dropout", c.dropout);
  return c;
}

AttentionMask AttentionMask::seq2seq(std::span<const Segment> segments) {
  const std::size_t n = segments.size();
  AttentionMask m(n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k < n; ++k) {
      bool visible;
      if (segments[k] == Segment::kSource) {
        visible = true;
      } else {
        visible = segments[q] == Segment::kTarget && k <= q;
      }
      m.values_[q * n + k] = visible ? 0.0 : kMasked;
    }
  }
  return m;
}

std::size_t AttentionMask::open_count(std::size_t query) const {
  std::size_t c = 0;
  for (std::size_t k = 0; k < n_; ++k) c += open(query, k) ? 1 : 0;
  return c;
}

std::size_t AttentionMask::total_open() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), 0.0));
}

AttentionMask AttentionMask::with_masked_keys(std::span<const std::size_t> keys) const {
  AttentionMask out = *this;
  for (std::size_t k : keys) {
    if (k >= n_) throw DimensionError("masked key " + std::to_string(k) + " outside mask of size " + std::to_string(n_));
    for (std::size_t q = 0; q < n_; ++q) out.values_[q * n_ + k] = kMasked;
  }
  return out;
}

void AttentionMask::validate() const {
  for (std::size_t q = 0; q < n_; ++q) {
    if (open_count(q) == 0) throw NumericError("attention mask row " + std::to_string(q) + " has no open entry");
  }
}

Tensor AttentionMask::tensor() const { return Tensor({n_, n_}, values_); }

Tensor AttentionScores::head_average() const {
  if (heads.empty()) throw StateError("no captured attention");
  Tensor avg(heads.front().shape(), 0.0);
  for (const auto& h : heads) {
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += h[i];
  }
  const double inv = 1.0 / static_cast<double>(heads.size());
  for (auto& x : avg.data()) x *= inv;
  return avg;
}

const AttentionScores& ForwardResult::layer(std::size_t l) const {
  for (const auto& a : attention) {
    if (a.layer == l) return a;
  }
  throw StateError("attention of layer " + std::to_string(l) + " was not captured");
}

Transformer::Transformer(ModelConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model, ff = config_.d_ff, v = config_.vocab_size;
  const double stddev = 0.02;
  tok_emb_ = params_.add("model.tok_emb", normal_init({v, d}, rng, stddev));
  pos_emb_ = params_.add("model.pos_emb", normal_init({config_.max_seq_len, d}, rng, stddev));
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = "model.layer" + std::to_string(l) + ".";
    LayerParams lp{};
    lp.ln1_g = params_.add(p + "ln1.gain", Tensor({d}, 1.0));
    lp.ln1_b = params_.add(p + "ln1.bias", Tensor({d}, 0.0));
    lp.wq = params_.add(p + "attn.wq", normal_init({d, d}, rng, stddev));
    lp.bq = params_.add(p + "attn.bq", Tensor({d}, 0.0));
    lp.wk = params_.add(p + "attn.wk", normal_init({d, d}, rng, stddev));
    lp.bk = params_.add(p + "attn.bk", Tensor({d}, 0.0));
    lp.wv = params_.add(p + "attn.wv", normal_init({d, d}, rng, stddev));
    lp.bv = params_.add(p + "attn.bv", Tensor({d}, 0.0));
    lp.wo = params_.add(p + "attn.wo", normal_init({d, d}, rng, stddev));
    lp.bo = params_.add(p + "attn.bo", Tensor({d}, 0.0));
    lp.ln2_g = params_.add(p + "ln2.gain", Tensor({d}, 1.0));
    lp.ln2_b = params_.add(p + "ln2.bias", Tensor({d}, 0.0));
    lp.w1 = params_.add(p + "ffn.w1", normal_init({d, ff}, rng, stddev));
    lp.b1 = params_.add(p + "ffn.b1", Tensor({ff}, 0.0));
    lp.w2 = params_.add(p + "ffn.w2", normal_init({ff, d}, rng, stddev));
    lp.b2 = params_.add(p + "ffn.b2", Tensor({d}, 0.0));
    layers_.push_back(lp);
  }
  lnf_g_ = params_.add("model.lnf.gain", Tensor({d}, 1.0));
  lnf_b_ = params_.add("model.lnf.bias", Tensor({d}, 0.0));
  w_out_ = params_.add("model.out.w", normal_init({d, v}, rng, stddev));
  b_out_ = params_.add("model.out.b", Tensor({v}, 0.0));
}

ForwardResult Transformer::forward(Graph& g, std::span<const int> ids, const AttentionMask& mask,
                                   const ForwardOptions& options) {
  const std::size_t n = ids.size();
  if (n == 0) throw DimensionError("forward on an empty sequence");
  if (n > config_.max_seq_len) {
    throw DimensionError("sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                         std::to_string(config_.max_seq_len));
  }
  if (mask.size() != n) {
    throw DimensionError("attention mask of size " + std::to_string(mask.size()) + " for sequence of length " +
                         std::to_string(n));
  }
  if (options.dynamic_mask != nullptr && options.dynamic_mask->size() != n) {
    throw DimensionError("dynamic mask of size " + std::to_string(options.dynamic_mask->size()) +
                         " for sequence of length " + std::to_string(n));
  }
  if (options.capture_layer && *options.capture_layer >= config_.num_layers) {
    throw UsageError("capture_layer " + std::to_string(*options.capture_layer) + " >= num_layers " +
                     std::to_string(config_.num_layers));
  }
  const double p_drop = options.training ? config_.dropout : 0.0;
  if (p_drop > 0.0 && options.rng == nullptr) throw UsageError("training forward with dropout needs an rng");
  auto drop = [&](Var x) { return p_drop > 0.0 ? dropout(x, p_drop, *options.rng) : x; };
  auto P = [&](std::size_t i) { return g.param(params_[i]); };

  std::vector<int> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  Var x = add(embedding(P(tok_emb_), ids), embedding(P(pos_emb_), positions));
  x = drop(x);

  const Var base_mask = g.constant(mask.tensor());
  std::optional<Var> dyn_mask;
  if (options.dynamic_mask != nullptr) dyn_mask = g.constant(options.dynamic_mask->tensor());

  const std::size_t heads = config_.num_heads;
  const std::size_t dh = config_.d_model / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardResult result;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& lp = layers_[l];
    const bool capture = options.capture_all || (options.capture_layer && *options.capture_layer == l);
    Var layer_mask = base_mask;
    if (dyn_mask && (options.apply_layers == ApplyLayers::kAll || options.dynamic_layer == l)) layer_mask = *dyn_mask;

    Var h = layernorm(x, P(lp.ln1_g), P(lp.ln1_b));
    Var q = add(matmul(h, P(lp.wq)), P(lp.bq));
    Var k = add(matmul(h, P(lp.wk)), P(lp.bk));
    Var v = add(matmul(h, P(lp.wv)), P(lp.bv));
    std::vector<Var> outs;
    AttentionScores captured;
    captured.layer = l;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Var qh = slice_lastdim(q, hd * dh, (hd + 1) * dh);
      Var kh = slice_lastdim(k, hd * dh, (hd + 1) * dh);
      Var vh = slice_lastdim(v, hd * dh, (hd + 1) * dh);
      Var scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_dh), layer_mask);
      Var probs = softmax_lastdim(scores);
      if (capture) captured.heads.push_back(probs.value());
      outs.push_back(matmul(probs, vh));
    }
    if (capture) result.attention.push_back(std::move(captured));
    Var attn = heads == 1 ? outs.front() : concat_lastdim(outs);
    attn = add(matmul(attn, P(lp.wo)), P(lp.bo));
    x = add(x, drop(attn));

    Var h2 = layernorm(x, P(lp.ln2_g), P(lp.ln2_b));
    Var f = gelu(add(matmul(h2, P(lp.w1)), P(lp.b1)));
    f = add(matmul(f, P(lp.w2)), P(lp.b2));
    x = add(x, drop(f));
  }
  x = layernorm(x, P(lnf_g_), P(lnf_b_));
  result.logits = add(matmul(x, P(w_out_)), P(b_out_));
  return result;
}

std::vector<int> next_token_targets(const TokenSequence& seq) {
  std::vector<int> targets(seq.size(), -1);
  for (std::size_t p = 0; p + 1 < seq.size(); ++p) {
    if (seq.segments[p + 1] == Segment::kTarget) targets[p] = seq.ids[p + 1];
  }
  return targets;
}

Var supervised_loss(Transformer& model, Graph& g, const TokenSequence& seq, const AttentionMask& mask,
                    const ForwardOptions& options) {
  const auto targets = next_token_targets(seq);
  if (std::all_of(targets.begin(), targets.end(), [](int t) { return t < 0; })) {
    throw DataError("sequence has no target positions");
  }
  auto out = model.forward(g, seq.ids, mask, options);
  return cross_entropy(out.logits, targets, -1);
}

DecodeResult greedy_decode_prompt(Transformer& model, const Vocab& vocab, const TokenSequence& prompt,
                                  std::span<const std::size_t> masked_keys, std::size_t max_tgt,
                                  const DecodeOptions& options) {
  DecodeResult result;
  result.masked_keys.assign(masked_keys.begin(), masked_keys.end());
  TokenSequence seq = prompt;
  const std::size_t limit = model.config().max_seq_len;
  while (result.ids.size() < max_tgt && seq.size() < limit) {
    const AttentionMask base = AttentionMask::seq2seq(seq.segments);
    Graph g(false);
    ForwardResult out;
    if (masked_keys.empty()) {
      out = model.forward(g, seq.ids, base);
    } else if (options.apply_layers == ApplyLayers::kAll) {
      out = model.forward(g, seq.ids, base.with_masked_keys(masked_keys));
    } else {
      const AttentionMask overlay = base.with_masked_keys(masked_keys);
      ForwardOptions fo;
      fo.dynamic_mask = &overlay;
      fo.apply_layers = ApplyLayers::kCapturedOnly;
      fo.dynamic_layer = options.dynamic_layer;
      out = model.forward(g, seq.ids, base, fo);
    }
    const auto& logits = out.logits.value();
    const std::size_t v = logits.dim(1);
    const double* row = logits.data().data() + (seq.size() - 1) * v;
    // max_element returns the first maximum, i.e. the lowest id on ties.
    const int next = static_cast<int>(std::max_element(row, row + v) - row);
    if (next == kEos) break;
    result.ids.push_back(next);
    seq.ids.push_back(next);
    seq.segments.push_back(Segment::kTarget);
  }
  result.tokens = decode(result.ids, vocab);
  result.text = join_tokens(result.tokens);
  return result;
}

DecodeResult greedy_decode(Transformer& model, const Vocab& vocab, std::string_view source, std::size_t max_src,
                           std::size_t max_tgt, const MaskHook& hook, const DecodeOptions& options) {
  const std::size_t room = model.config().max_seq_len > 2 ? model.config().max_seq_len - 2 : 0;
  TokenSequence prompt = encode_source(source, vocab, std::min(max_src, room));
  std::vector<std::size_t> masked;
  if (hook && max_tgt > 0) masked = hook(prompt, model);
  return greedy_decode_prompt(model, vocab, prompt, masked, max_tgt, options);
}

Tensor state_vector(const AttentionScores& scores, std::span<const std::size_t> positions,
                    const StateOptions& options) {
  if (options.buckets == 0) throw UsageError("state pooling needs at least one bucket");
  const Tensor avg = scores.head_average();
  const std::size_t n = avg.dim(0);
  const std::size_t width = options.state_dim();
  if (positions.empty()) throw DimensionError("state_vector over zero positions");
  Tensor out({positions.size(), width}, 0.0);
  const auto B = options.buckets;
  const auto half = static_cast<std::ptrdiff_t>(B / 2);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const std::size_t j = positions[r];
    if (j >= n) throw DimensionError("state position " + std::to_string(j) + " outside attention of size " +
                                     std::to_string(n));
    double received = 0.0;
    for (std::size_t q = 0; q < n; ++q) received += avg.at(q, j);
    out.at(r, 0) = received;  // column mean times n keys == column sum for square maps
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t bucket;
      if (options.pooling == Pooling::kAbsolute) {
        bucket = k * B / n;
      } else {
        const auto offset = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(j);
        bucket = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(offset + half, 0, static_cast<std::ptrdiff_t>(B) - 1));
      }
      out.at(r, 1 + bucket) += avg.at(j, k);
    }
  }
  return out;
}

}  // namespace maskedsum
