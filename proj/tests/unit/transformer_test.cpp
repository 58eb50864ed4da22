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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "maskedsum/checkpoint.hpp"
#include "maskedsum/errors.hpp"
#include "maskedsum/gradcheck.hpp"
#include "maskedsum/ops.hpp"
#include "maskedsum/optim.hpp"
#include "maskedsum/transformer.hpp"

namespace maskedsum {
namespace {

ModelConfig tiny_config(std::size_t vocab = 16) {
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.vocab_size = vocab;
  c.max_seq_len = 16;
  c.dropout = 0.0;
  return c;
}

// Random [SOS, src, SEP, tgt, EOS] over regular ids.
TokenSequence random_pair(Rng& rng, std::size_t src_len, std::size_t tgt_len, std::size_t vocab) {
  TokenSequence s;
  auto regular = [&] { return static_cast<int>(kNumSpecials + rng.index(vocab - kNumSpecials)); };
  s.ids.push_back(kSos);
  s.segments.push_back(Segment::kSource);
  for (std::size_t i = 0; i < src_len; ++i) {
    s.ids.push_back(regular());
    s.segments.push_back(Segment::kSource);
  }
  s.ids.push_back(kSep);
  s.segments.push_back(Segment::kSource);
  for (std::size_t i = 0; i < tgt_len; ++i) {
    s.ids.push_back(regular());
    s.segments.push_back(Segment::kTarget);
  }
  s.ids.push_back(kEos);
  s.segments.push_back(Segment::kTarget);
  return s;
}

void zero_param(Transformer& m, const std::string& name) {
  auto* p = m.parameters().find(name);
  ASSERT_NE(p, nullptr) << name;
  p->value.fill(0.0);
}

TEST(AttentionMask, Seq2SeqPattern) {
  std::vector<Segment> seg{Segment::kSource, Segment::kSource, Segment::kTarget, Segment::kTarget};
  auto m = AttentionMask::seq2seq(seg);
  // rows: queries, columns: keys
  const double X = AttentionMask::kMasked;
  const double expected[4][4] = {{0, 0, X, X}, {0, 0, X, X}, {0, 0, 0, X}, {0, 0, 0, 0}};
  for (std::size_t q = 0; q < 4; ++q) {
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(m.at(q, k), expected[q][k]) << q << "," << k;
  }
  EXPECT_NO_THROW(m.validate());
}

TEST(AttentionMask, OverlayOnlyCloses) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t src = 2 + rng.index(8), tgt = 1 + rng.index(6);
    std::vector<Segment> seg(src, Segment::kSource);
    seg.insert(seg.end(), tgt, Segment::kTarget);
    auto base = AttentionMask::seq2seq(seg);
    std::vector<std::size_t> keys;
    for (std::size_t k = 0; k < src; ++k) {
      if (rng.bernoulli(0.4)) keys.push_back(k);
    }
    auto over = base.with_masked_keys(keys);
    for (std::size_t q = 0; q < base.size(); ++q) {
      EXPECT_LE(over.open_count(q), base.open_count(q));
      for (std::size_t k = 0; k < base.size(); ++k) {
        if (!base.open(q, k)) EXPECT_FALSE(over.open(q, k));
        if (k >= src) EXPECT_EQ(over.at(q, k), base.at(q, k));
      }
    }
  }
}

TEST(AttentionMask, FullyClosedRowFailsValidation) {
  std::vector<Segment> seg{Segment::kSource, Segment::kSource, Segment::kTarget};
  auto m = AttentionMask::seq2seq(seg).with_masked_keys(std::vector<std::size_t>{0, 1});
  EXPECT_THROW(m.validate(), NumericError);
}

TEST(Forward, MaskedKeyGetsNegligibleWeightEverywhere) {
  Rng rng(11);
  Transformer model(tiny_config(), rng);
  auto seq = random_pair(rng, 6, 4, 16);
  const std::size_t j = 3;
  auto mask = AttentionMask::seq2seq(seq.segments).with_masked_keys(std::vector<std::size_t>{j});
  Graph g(false);
  ForwardOptions opts;
  opts.capture_all = true;
  auto out = model.forward(g, seq.ids, mask, opts);
  ASSERT_EQ(out.attention.size(), 2u);
  for (const auto& layer : out.attention) {
    ASSERT_EQ(layer.heads.size(), 2u);
    for (const auto& h : layer.heads) {
      for (std::size_t q = 0; q < seq.size(); ++q) {
        EXPECT_LT(h.at(q, j), 1e-4);
        for (std::size_t k = 0; k < seq.size(); ++k) {
          if (!mask.open(q, k)) EXPECT_LT(h.at(q, k), 1e-4);
        }
      }
    }
  }
}

TEST(Forward, AttentionRowsSumToOne) {
  Rng rng(12);
  Transformer model(tiny_config(), rng);
  for (int trial = 0; trial < 10; ++trial) {
    auto seq = random_pair(rng, 1 + rng.index(6), rng.index(5), 16);
    Graph g(false);
    ForwardOptions opts;
    opts.capture_all = true;
    auto out = model.forward(g, seq.ids, AttentionMask::seq2seq(seq.segments), opts);
    for (const auto& layer : out.attention) {
      for (const auto& h : layer.heads) {
        for (std::size_t q = 0; q < seq.size(); ++q) {
          double s = 0;
          for (std::size_t k = 0; k < seq.size(); ++k) s += h.at(q, k);
          EXPECT_NEAR(s, 1.0, 1e-9);
        }
      }
    }
  }
}

TEST(Forward, FutureTargetsDoNotChangeEarlierLogits) {
  Rng rng(13);
  Transformer model(tiny_config(), rng);
  for (int trial = 0; trial < 20; ++trial) {
    auto seq = random_pair(rng, 2 + rng.index(5), 2 + rng.index(5), 16);
    const auto mask = AttentionMask::seq2seq(seq.segments);
    const std::size_t first_tgt = seq.source_length();
    const std::size_t t = first_tgt + rng.index(seq.size() - first_tgt - 1);
    auto mutated = seq;
    for (std::size_t p = t + 1; p < seq.size(); ++p) {
      mutated.ids[p] = static_cast<int>(kNumSpecials + rng.index(16 - kNumSpecials));
    }
    Graph g1(false), g2(false);
    const auto a = model.forward(g1, seq.ids, mask).logits.value();
    const auto b = model.forward(g2, mutated.ids, mask).logits.value();
    const std::size_t v = a.dim(1);
    for (std::size_t p = 0; p <= t; ++p) {
      for (std::size_t c = 0; c < v; ++c) {
        // bitwise
        ASSERT_EQ(a.at(p, c), b.at(p, c)) << "position " << p << " with cut " << t;
      }
    }
  }
}

TEST(Forward, ZeroEmbeddingsGiveUniformAttention) {
  Rng rng(14);
  Transformer model(tiny_config(), rng);
  zero_param(model, "model.tok_emb");
  zero_param(model, "model.pos_emb");
  auto seq = random_pair(rng, 5, 4, 16);
  auto mask = AttentionMask::seq2seq(seq.segments);
  Graph g(false);
  ForwardOptions opts;
  opts.capture_layer = 0;
  auto out = model.forward(g, seq.ids, mask, opts);
  for (const auto& h : out.layer(0).heads) {
    for (std::size_t q = 0; q < seq.size(); ++q) {
      const double u = 1.0 / static_cast<double>(mask.open_count(q));
      for (std::size_t k = 0; k < seq.size(); ++k) {
        if (mask.open(q, k)) EXPECT_NEAR(h.at(q, k), u, 1e-9);
      }
    }
  }
}

TEST(Forward, ErrorCases) {
  Rng rng(15);
  Transformer model(tiny_config(), rng);
  auto seq = random_pair(rng, 3, 2, 16);
  Graph g(false);
  EXPECT_THROW(model.forward(g, seq.ids, AttentionMask(seq.size() + 1)), DimensionError);
  ForwardOptions opts;
  opts.capture_layer = 2;
  EXPECT_THROW(model.forward(g, seq.ids, AttentionMask::seq2seq(seq.segments), opts), UsageError);
  std::vector<int> long_ids(17, kSos);
  EXPECT_THROW(model.forward(g, long_ids, AttentionMask(17)), DimensionError);

  ModelConfig bad = tiny_config();
  bad.num_heads = 3;
  EXPECT_THROW(Transformer(bad, rng), UsageError);
  bad = tiny_config();
  bad.max_seq_len = 7;
  EXPECT_THROW(Transformer(bad, rng), UsageError);
}

TEST(Forward, DynamicMaskOnCapturedLayerOnly) {
  Rng rng(16);
  Transformer model(tiny_config(), rng);
  auto seq = random_pair(rng, 5, 3, 16);
  const auto base = AttentionMask::seq2seq(seq.segments);
  const auto dyn = base.with_masked_keys(std::vector<std::size_t>{2});
  Graph g(false);
  ForwardOptions opts;
  opts.capture_all = true;
  opts.dynamic_mask = &dyn;
  opts.apply_layers = ApplyLayers::kCapturedOnly;
  opts.dynamic_layer = 1;
  auto out = model.forward(g, seq.ids, base, opts);
  EXPECT_GT(out.layer(0).head_average().at(0, 2), 1e-3);
  EXPECT_LT(out.layer(1).head_average().at(0, 2), 1e-4);
}

TEST(SupervisedLoss, ZeroOutputLayerGivesLogV) {
  Rng rng(17);
  Transformer model(tiny_config(), rng);
  zero_param(model, "model.out.w");
  zero_param(model, "model.out.b");
  auto seq = random_pair(rng, 4, 3, 16);
  Graph g(false);
  auto loss = supervised_loss(model, g, seq, AttentionMask::seq2seq(seq.segments));
  EXPECT_NEAR(loss.value().item(), std::log(16.0), 1e-9);
}

TEST(SupervisedLoss, ConfidentCorrectLogitsGiveNearZero) {
  Rng rng(18);
  Transformer model(tiny_config(), rng);
  zero_param(model, "model.out.w");
  auto* b = model.parameters().find("model.out.b");
  b->value.fill(0.0);
  b->value[kEos] = 50.0;
  // Every target prediction is EOS.
  TokenSequence seq;
  seq.ids = {kSos, 7, 8, kSep, kEos};
  seq.segments = {Segment::kSource, Segment::kSource, Segment::kSource, Segment::kSource, Segment::kTarget};
  Graph g(false);
  auto loss = supervised_loss(model, g, seq, AttentionMask::seq2seq(seq.segments));
  EXPECT_LT(loss.value().item(), 1e-6);
}

TEST(SupervisedLoss, NoTargetIsDataError) {
  Rng rng(19);
  Transformer model(tiny_config(), rng);
  TokenSequence seq;
  seq.ids = {kSos, 7, kSep};
  seq.segments.assign(3, Segment::kSource);
  Graph g;
  EXPECT_THROW(supervised_loss(model, g, seq, AttentionMask::seq2seq(seq.segments)), DataError);
}

TEST(SupervisedLoss, TargetsSkipSourcePositions) {
  TokenSequence seq;
  seq.ids = {kSos, 7, kSep, 9, kEos};
  seq.segments = {Segment::kSource, Segment::kSource, Segment::kSource, Segment::kTarget, Segment::kTarget};
  EXPECT_EQ(next_token_targets(seq), (std::vector<int>{-1, -1, 9, kEos, -1}));
}

TEST(SupervisedLoss, GradientsMatchFiniteDifferences) {
  Rng rng(20);
  ModelConfig c = tiny_config(12);
  c.max_seq_len = 12;
  Transformer model(c, rng);
  // Non-trivial layernorm gains and biases.
  for (auto& p : model.parameters()) {
    if (p.name.find("ln") != std::string::npos) {
      for (auto& x : p.value.data()) x += rng.uniform(-0.3, 0.3);
    }
    if (p.name.find(".b") != std::string::npos) {
      for (auto& x : p.value.data()) x += rng.uniform(-0.1, 0.1);
    }
  }
  // Scale up the weights so attention is far from uniform.
  for (auto& p : model.parameters()) {
    if (p.name.find("attn.w") != std::string::npos) {
      for (auto& x : p.value.data()) x *= 20.0;
    }
  }
  auto seq = random_pair(rng, 4, 3, 12);
  const auto mask = AttentionMask::seq2seq(seq.segments);
  auto report = check_gradients(model.parameters(), [&](Graph& g) { return supervised_loss(model, g, seq, mask); });
  EXPECT_TRUE(report.passed()) << report.to_string();
  EXPECT_EQ(report.blocks.size(), model.parameters().size());
  EXPECT_LT(report.max_rel_error(), 1e-4);
}

TEST(Decode, ZeroMaxTargetIsEmpty) {
  Rng rng(21);
  Vocab vocab({"a", "b", "c"});
  Transformer model(tiny_config(vocab.size()), rng);
  auto r = greedy_decode(model, vocab, "a b c", 8, 0);
  EXPECT_TRUE(r.ids.empty());
  EXPECT_EQ(r.text, "");
  auto empty = greedy_decode(model, vocab, "", 8, 3);
  EXPECT_LE(empty.ids.size(), 3u);
}

TEST(Decode, SameSeedSameOutput) {
  Vocab vocab({"a", "b", "c", "d"});
  auto run = [&] {
    Rng rng(22);
    Transformer model(tiny_config(vocab.size()), rng);
    return greedy_decode(model, vocab, "a b c d a", 8, 6);
  };
  const auto x = run(), y = run();
  EXPECT_EQ(x.ids, y.ids);
  EXPECT_EQ(x.text, y.text);
}

TEST(Decode, TiesGoToLowestId) {
  Rng rng(23);
  Vocab vocab({"a", "b", "c"});
  Transformer model(tiny_config(vocab.size()), rng);
  zero_param(model, "model.out.w");
  auto* b = model.parameters().find("model.out.b");
  b->value.fill(0.0);
  b->value[6] = 1.0;
  b->value[7] = 1.0;
  auto r = greedy_decode(model, vocab, "a", 8, 2);
  EXPECT_EQ(r.ids, (std::vector<int>{6, 6}));
  EXPECT_EQ(r.text, "b b");
}

TEST(Decode, HookMasksAreReportedAndStopAtEos) {
  Rng rng(24);
  Vocab vocab({"a", "b"});
  Transformer model(tiny_config(vocab.size()), rng);
  zero_param(model, "model.out.w");
  auto* b = model.parameters().find("model.out.b");
  b->value.fill(0.0);
  b->value[kEos] = 1.0;
  int calls = 0;
  MaskHook hook = [&](const TokenSequence& prompt, Transformer&) {
    ++calls;
    EXPECT_EQ(prompt.ids.front(), kSos);
    EXPECT_EQ(prompt.ids.back(), kSep);
    return std::vector<std::size_t>{1};
  };
  auto r = greedy_decode(model, vocab, "a b", 8, 5, hook);
  EXPECT_EQ(calls, 1);
  EXPECT_TRUE(r.ids.empty());
  EXPECT_EQ(r.masked_keys, (std::vector<std::size_t>{1}));
}

// Teacher-forced training on a small copy task: the loss falls window over
// window and greedy decoding reproduces every training source.
TEST(Training, CopyTaskOverfits) {
  std::vector<std::string> words{"red", "green", "blue", "cyan", "pink", "gray"};
  Vocab vocab(words);
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.d_model = 32;
  c.d_ff = 64;
  c.vocab_size = vocab.size();
  c.max_seq_len = 16;
  c.dropout = 0.0;
  Rng rng(25);
  Transformer model(c, rng);
  std::vector<std::string> sources;
  for (int i = 0; i < 10; ++i) {
    std::string s;
    const std::size_t len = 3 + rng.index(2);
    for (std::size_t k = 0; k < len; ++k) s += (k ? " " : "") + words[rng.index(words.size())];
    sources.push_back(s);
  }
  std::vector<TokenSequence> data;
  for (const auto& s : sources) data.push_back(encode_pair(s, s, vocab, 6, 6));

  Adam adam({.lr = 3e-3});
  std::vector<double> losses;
  for (int step = 0; step < 500; ++step) {
    model.parameters().zero_grad();
    double total = 0;
    for (const auto& seq : data) {
      Graph g;
      auto loss = scale(supervised_loss(model, g, seq, AttentionMask::seq2seq(seq.segments)), 0.1);
      total += loss.value().item();
      g.backward(loss);
    }
    adam.step(model.parameters());
    losses.push_back(total);
  }
  double prev = INFINITY;
  for (std::size_t w = 0; w + 20 <= losses.size(); w += 20) {
    const double avg = std::accumulate(losses.begin() + w, losses.begin() + w + 20, 0.0) / 20.0;
    EXPECT_LT(avg, prev) << "window starting at step " << w;
    prev = avg;
  }
  for (const auto& s : sources) EXPECT_EQ(greedy_decode(model, vocab, s, 6, 6).text, s);
}

TEST(StateVector, UniformAttentionGivesIdenticalRows) {
  AttentionScores scores;
  const std::size_t n = 7;
  Tensor u({n, n}, 1.0 / n);
  scores.heads = {u, u};
  std::vector<std::size_t> pos{1, 2, 3, 4, 5};
  auto s = state_vector(scores, pos);
  ASSERT_EQ(s.shape(), (Shape{5, 5}));
  for (std::size_t r = 0; r < pos.size(); ++r) {
    EXPECT_NEAR(s.at(r, 0), 1.0, 1e-12);
    for (std::size_t c = 0; c < s.dim(1); ++c) EXPECT_EQ(s.at(r, c), s.at(0, c));
  }
}

TEST(StateVector, BucketsConserveRowMassAndAreNonnegative) {
  Rng rng(26);
  for (auto pooling : {Pooling::kAbsolute, Pooling::kRelative}) {
    for (std::size_t buckets : {1, 2, 3, 4, 7}) {
      const std::size_t n = 3 + rng.index(10);
      AttentionScores scores;
      for (int h = 0; h < 3; ++h) {
        Tensor t({n, n});
        for (std::size_t q = 0; q < n; ++q) {
          double z = 0;
          for (std::size_t k = 0; k < n; ++k) z += (t.at(q, k) = rng.uniform());
          for (std::size_t k = 0; k < n; ++k) t.at(q, k) /= z;
        }
        scores.heads.push_back(t);
      }
      const Tensor avg = scores.head_average();
      std::vector<std::size_t> pos(n);
      std::iota(pos.begin(), pos.end(), 0);
      StateOptions opts{buckets, pooling};
      auto s = state_vector(scores, pos, opts);
      ASSERT_EQ(s.dim(1), buckets + 1);
      for (std::size_t r = 0; r < n; ++r) {
        double pooled = 0, received = 0;
        for (std::size_t c = 1; c <= buckets; ++c) {
          EXPECT_GE(s.at(r, c), 0.0);
          pooled += s.at(r, c);
        }
        for (std::size_t q = 0; q < n; ++q) received += avg.at(q, r);
        EXPECT_NEAR(pooled, 1.0, 1e-9);
        EXPECT_NEAR(s.at(r, 0), received, 1e-12);
        EXPECT_GE(s.at(r, 0), 0.0);
      }
    }
  }
}

TEST(StateVector, RelativePoolingBuckets) {
  // Query at position 2 of 5, four buckets: offsets -2,-1 -> 0 and 1; 0 -> 2;
  // +1,+2 clamp to 3.
  AttentionScores scores;
  Tensor t({5, 5}, 0.0);
  const double row[5] = {0.1, 0.2, 0.3, 0.15, 0.25};
  for (std::size_t k = 0; k < 5; ++k) t.at(2, k) = row[k];
  scores.heads = {t};
  std::vector<std::size_t> pos{2};
  auto s = state_vector(scores, pos, {4, Pooling::kRelative});
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.1);
  EXPECT_DOUBLE_EQ(s.at(0, 2), 0.2);
  EXPECT_DOUBLE_EQ(s.at(0, 3), 0.3);
  EXPECT_DOUBLE_EQ(s.at(0, 4), 0.4);
  auto a = state_vector(scores, pos, {2, Pooling::kAbsolute});
  EXPECT_DOUBLE_EQ(a.at(0, 1), 0.1 + 0.2 + 0.3);
  EXPECT_DOUBLE_EQ(a.at(0, 2), 0.15 + 0.25);
}

// Without position embeddings two copies of a token are indistinguishable,
// so swapping them must leave their state rows in place.
TEST(StateVector, DuplicateTokensShareStateRows) {
  Rng rng(27);
  Transformer model(tiny_config(), rng);
  zero_param(model, "model.pos_emb");
  TokenSequence seq;
  seq.ids = {kSos, 9, 6, 7, 9, 11, kSep, 8, kEos};
  seq.segments.assign(7, Segment::kSource);
  seq.segments.push_back(Segment::kTarget);
  seq.segments.push_back(Segment::kTarget);
  Graph g(false);
  ForwardOptions opts;
  opts.capture_layer = 1;
  auto out = model.forward(g, seq.ids, AttentionMask::seq2seq(seq.segments), opts);
  std::vector<std::size_t> pos{1, 2, 3, 4, 5};
  auto s = state_vector(out.layer(1), pos);
  for (std::size_t c = 0; c < s.dim(1); ++c) EXPECT_NEAR(s.at(0, c), s.at(3, c), 1e-12) << c;
  // and a distinct token differs
  EXPECT_GT(std::abs(s.at(0, 0) - s.at(1, 0)), 1e-9);
}

TEST(StateVector, Errors) {
  AttentionScores empty;
  std::vector<std::size_t> pos{0};
  EXPECT_THROW(state_vector(empty, pos), StateError);
  AttentionScores scores;
  scores.heads = {Tensor({3, 3}, 1.0 / 3)};
  std::vector<std::size_t> far{3};
  EXPECT_THROW(state_vector(scores, far), DimensionError);
}

TEST(Checkpoint, ModelRoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / "maskedsum_transformer_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";
  Rng rng(28);
  ModelConfig c = tiny_config();
  Transformer a(c, rng);
  KeyValues header;
  c.write(header);
  save_checkpoint(path, header, {&a.parameters()});

  auto ck = load_checkpoint(path);
  ModelConfig c2 = ModelConfig::read(ck.header);
  EXPECT_EQ(c2.d_model, c.d_model);
  EXPECT_EQ(c2.dropout, c.dropout);
  Rng other(999);
  Transformer b(c2, other);
  assign_parameters(b.parameters(), ck.records);

  auto seq = random_pair(rng, 4, 3, 16);
  const auto mask = AttentionMask::seq2seq(seq.segments);
  Graph g1(false), g2(false);
  EXPECT_EQ(a.forward(g1, seq.ids, mask).logits.value(), b.forward(g2, seq.ids, mask).logits.value());
  std::filesystem::remove_all(dir);
}

TEST(ModelConfig, ReadRejectsGarbage) {
  KeyValues kv{{"model.d_model", "sixty"}};
  EXPECT_THROW(ModelConfig::read(kv), DataError);
}

}  // namespace
}  // namespace maskedsum
