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
#include <fstream>
#include <numeric>
#include <sstream>

#include "maskedsum/checkpoint.hpp"
#include "maskedsum/errors.hpp"
#include "maskedsum/ops.hpp"
#include "maskedsum/pipeline.hpp"

namespace maskedsum {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("maskedsum_pipeline_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const fs::path& p) {
  const auto text = slurp(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

std::string param_bytes(const ParameterSet& ps) {
  std::ostringstream out;
  write_parameters(out, {&ps});
  return out.str();
}

RunConfig tiny_config() {
  RunConfig c;
  c.model.num_layers = 2;
  c.model.num_heads = 2;
  c.model.d_model = 16;
  c.model.d_ff = 32;
  c.model.dropout = 0.0;
  c.agent.hidden = {8};
  c.epochs = 2;
  c.batch_size = 4;
  c.accumulation = 1;
  c.lr = 1e-3;
  c.rl_episodes = 12;
  c.rl_eval_every = 5;
  c.embedding_dim = 8;
  c.max_tgt = 8;
  c.resolve();
  return c;
}

CorpusSplits tiny_corpus(std::size_t n = 40) {
  SyntheticSpec spec;
  spec.num_examples = n;
  spec.min_sentences = 3;
  spec.max_sentences = 4;
  return generate_synthetic(spec);
}

// RunConfig --------------------------------------------------------------------

TEST(RunConfig, KeyValuesRoundTrip) {
  RunConfig c = tiny_config();
  c.capture_layer = 0;
  c.state.pooling = Pooling::kRelative;
  c.apply_layers = ApplyLayers::kCapturedOnly;
  c.joint_finetune = false;
  c.lr = 0.1 + 0.2;  // not exactly representable in short decimal
  c.reward_weights = RewardWeights::parse("0.5,0.25,0.25");
  c.corpus_path = "data/x";
  const auto kv = c.to_key_values();
  const auto back = RunConfig::from_key_values(kv);
  EXPECT_EQ(back.to_key_values(), kv);
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.capture_layer, std::optional<std::size_t>(0));
  EXPECT_EQ(back.apply_layers, ApplyLayers::kCapturedOnly);
  EXPECT_FALSE(back.joint_finetune);
}

TEST(RunConfig, OutputDirIsNotPartOfTheConfig) {
  RunConfig a = tiny_config(), b = tiny_config();
  a.out_dir = "one";
  b.out_dir = "two";
  EXPECT_EQ(a.to_key_values(), b.to_key_values());
}

TEST(RunConfig, UnknownKeyAndBadValuesAreDataErrors) {
  auto kv = RunConfig{}.to_key_values();
  kv["train.epochz"] = "3";
  EXPECT_THROW(RunConfig::from_key_values(kv), DataError);
  kv = RunConfig{}.to_key_values();
  kv["train.lr"] = "fast";
  EXPECT_THROW(RunConfig::from_key_values(kv), DataError);
  kv = RunConfig{}.to_key_values();
  kv["rl.joint_finetune"] = "maybe";
  EXPECT_THROW(RunConfig::from_key_values(kv), DataError);
  kv = RunConfig{}.to_key_values();
  kv["state.pooling"] = "max";
  EXPECT_THROW(RunConfig::from_key_values(kv), DataError);
}

TEST(RunConfig, PartialFileKeepsDefaults) {
  const auto dir = scratch("partial");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "c.txt");
    out << "# comment\ntrain.epochs=9\nseed=42\n";
  }
  const auto c = RunConfig::load(dir / "c.txt");
  EXPECT_EQ(c.epochs, 9u);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.batch_size, RunConfig{}.batch_size);
  EXPECT_THROW(RunConfig::load(dir / "missing.txt"), DataError);
  fs::remove_all(dir);
}

TEST(RunConfig, ValidationCatchesRanges) {
  RunConfig c = tiny_config();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny_config();
  c.accumulation = 0;
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny_config();
  c.max_src = c.model.max_seq_len;
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny_config();
  c.capture_layer = c.model.num_layers;
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny_config();
  c.state.buckets = 7;
  EXPECT_THROW(c.validate(), UsageError);  // agent state_dim not re-derived
  c.resolve();
  EXPECT_EQ(c.agent.state_dim, 8u);
}

// Supervised phase -------------------------------------------------------------

struct StepperFixture {
  RunConfig config = tiny_config();
  CorpusSplits corpus = tiny_corpus();
  Vocab vocab = build_corpus_vocab(corpus.train, config);
  std::vector<TokenSequence> data;

  StepperFixture() {
    config.model.vocab_size = vocab.size();
    data = encode_examples(corpus.train, vocab, config);
  }
  Transformer fresh_model(std::uint64_t seed = 3) {
    Rng rng(seed);
    return Transformer(config.model, rng);
  }
};

// Per-example gradients summed in different groupings give the same update.
TEST(SupervisedStepper, AccumulationMatchesDirectBatch) {
  StepperFixture f;
  f.config.model.dropout = 0.1;  // dropout draws happen in example order either way
  std::vector<std::size_t> order(16);
  std::iota(order.begin(), order.end(), 5);
  auto direct = f.fresh_model();
  auto accumulated = f.fresh_model();
  const auto before = param_bytes(direct.parameters());
  Rng rd(11), ra(11);
  SupervisedStepper sd(direct, {.lr = 1e-2}, 16, 1, &rd);
  SupervisedStepper sa(accumulated, {.lr = 1e-2}, 4, 4, &ra);
  const auto ld = sd.run(f.data, order);
  const auto la = sa.run(f.data, order);
  ASSERT_EQ(ld.size(), 1u);
  ASSERT_EQ(la.size(), 1u);
  EXPECT_NEAR(ld[0], la[0], 1e-12);
  EXPECT_NE(param_bytes(direct.parameters()), before);
  double worst = 0.0;
  for (std::size_t p = 0; p < direct.parameters().size(); ++p) {
    const auto& a = direct.parameters()[p].value.data();
    const auto& b = accumulated.parameters()[p].value.data();
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  EXPECT_LE(worst, 1e-10);
}

// A trailing partial batch reports the mean over its own examples.
TEST(SupervisedStepper, TrailingPartialBatch) {
  StepperFixture f;
  auto model = f.fresh_model();
  auto reference = f.fresh_model();
  Rng r1(1), r2(1);
  SupervisedStepper s(model, {.lr = 1e-3}, 2, 1, &r1);
  SupervisedStepper ref(reference, {.lr = 1e-3}, 2, 1, &r2);
  const std::vector<std::size_t> three{0, 1, 2}, two{0, 1};
  const auto losses = s.run(f.data, three);
  ref.run(f.data, two);
  ASSERT_EQ(losses.size(), 2u);
  EXPECT_EQ(s.steps(), 2u);
  Graph g(false);
  const double expected =
      supervised_loss(reference, g, f.data[2], AttentionMask::seq2seq(f.data[2].segments)).value().item();
  EXPECT_EQ(losses[1], expected);
}

TEST(SupervisedStepper, ZeroLearningRateLeavesParametersBitIdentical) {
  StepperFixture f;
  auto model = f.fresh_model();
  const auto before = param_bytes(model.parameters());
  std::vector<std::size_t> order(f.data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(2);
  SupervisedStepper s(model, {.lr = 0.0}, 4, 2, &rng);
  s.run(f.data, order);
  EXPECT_GT(s.steps(), 0u);
  EXPECT_EQ(param_bytes(model.parameters()), before);
}

double corpus_loss(Transformer& model, std::span<const TokenSequence> data) {
  double total = 0.0;
  for (const auto& seq : data) {
    Graph g(false);
    total += supervised_loss(model, g, seq, AttentionMask::seq2seq(seq.segments)).value().item();
  }
  return total / static_cast<double>(data.size());
}

TEST(SupervisedStepper, TenExampleCorpusOverfits) {
  StepperFixture f;
  std::vector<TokenSequence> ten(f.data.begin(), f.data.begin() + 10);
  auto model = f.fresh_model();
  const double initial = corpus_loss(model, ten);
  Rng rng(4);
  SupervisedStepper s(model, {.lr = 3e-3}, 10, 1, &rng);
  std::vector<std::size_t> order(10);
  std::iota(order.begin(), order.end(), 0);
  for (int step = 0; step < 500; ++step) s.run(ten, order);
  EXPECT_EQ(s.steps(), 500u);
  const double final_loss = corpus_loss(model, ten);
  EXPECT_LT(final_loss, 0.1 * initial) << "initial " << initial << " final " << final_loss;
}

TEST(TrainSupervised, SameSeedSameLossesAndFiles) {
  const auto a = scratch("sup_a"), b = scratch("sup_b");
  RunConfig c = tiny_config();
  c.model.dropout = 0.1;
  const auto corpus = tiny_corpus();
  const auto vocab = build_corpus_vocab(corpus.train, c);
  const auto ra = train_supervised(c, corpus, vocab, a);
  const auto rb = train_supervised(c, corpus, vocab, b);
  ASSERT_FALSE(ra.step_losses.empty());
  EXPECT_EQ(ra.step_losses, rb.step_losses);  // exact doubles
  for (const char* f : {"model.ckpt", "vocab.txt", "config.txt", "supervised_steps.csv", "supervised_epochs.csv"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  c.seed = 2;
  const auto rc = train_supervised(c, corpus, vocab, scratch("sup_c"));
  EXPECT_NE(ra.step_losses, rc.step_losses);
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(scratch("sup_c"));
}

TEST(TrainSupervised, CurveLengthsMatchSteps) {
  const auto dir = scratch("sup_len");
  RunConfig c = tiny_config();
  c.epochs = 3;
  c.batch_size = 3;
  c.accumulation = 2;
  const auto corpus = tiny_corpus();  // 32 training examples
  const auto vocab = build_corpus_vocab(corpus.train, c);
  const auto r = train_supervised(c, corpus, vocab, dir);
  const std::size_t per_epoch = (corpus.train.size() + 5) / 6;
  EXPECT_EQ(r.step_losses.size(), 3 * per_epoch);
  ASSERT_EQ(r.epochs.size(), 3u);
  EXPECT_EQ(r.epochs.back().steps, 3 * per_epoch);
  EXPECT_EQ(count_lines(dir / "supervised_steps.csv"), 1 + 3 * per_epoch);
  EXPECT_EQ(count_lines(dir / "supervised_epochs.csv"), 1 + 3u);
  // Never constructs an agent.
  const auto ck = load_run_checkpoint(dir / "model.ckpt");
  EXPECT_FALSE(ck.agent.has_value());
  EXPECT_EQ(ck.header.at(kCheckpointKind), "supervised");
  fs::remove_all(dir);
}

TEST(TrainSupervised, TiesGoToTheLaterEpoch) {
  const auto dir = scratch("sup_ties");
  RunConfig c = tiny_config();
  c.lr = 0.0;  // every epoch scores the same
  c.epochs = 3;
  const auto corpus = tiny_corpus();
  const auto vocab = build_corpus_vocab(corpus.train, c);
  const auto r = train_supervised(c, corpus, vocab, dir);
  EXPECT_EQ(r.best_epoch, 3u);
  fs::remove_all(dir);
}

TEST(TrainSupervised, VocabMismatchIsDataError) {
  RunConfig c = tiny_config();
  const auto corpus = tiny_corpus();
  const Vocab foreign({"zebra", "quartz"});
  EXPECT_THROW(train_supervised(c, corpus, foreign, scratch("sup_mismatch")), DataError);
  fs::remove_all(scratch("sup_mismatch"));
  CorpusSplits empty;
  EXPECT_THROW(train_supervised(c, empty, foreign, scratch("sup_empty")), DataError);
  fs::remove_all(scratch("sup_empty"));
}

// Checkpoints --------------------------------------------------------------------

TEST(RunCheckpoint, RoundTripRestoresModelAndAgent) {
  const auto dir = scratch("ckpt");
  RunConfig c = tiny_config();
  c.model.vocab_size = 20;
  Rng rng(5);
  Transformer model(c.model, rng);
  ActorCritic agent(c.agent, rng);
  for (auto& p : agent.parameters()) {
    for (auto& x : p.value.data()) x = rng.normal();
  }
  save_run_checkpoint(dir / "x.ckpt", c, "rl", model, &agent);
  const auto back = load_run_checkpoint(dir / "x.ckpt");
  EXPECT_EQ(back.config.to_key_values(), c.to_key_values());
  ASSERT_TRUE(back.model && back.agent);
  EXPECT_EQ(param_bytes(back.model->parameters()), param_bytes(model.parameters()));
  EXPECT_EQ(param_bytes(back.agent->parameters()), param_bytes(agent.parameters()));
  EXPECT_THROW(load_run_checkpoint(dir / "nope.ckpt"), DataError);
  fs::remove_all(dir);
}

// RL phase ---------------------------------------------------------------------

struct RlFixture {
  RunConfig config = tiny_config();
  CorpusSplits corpus = tiny_corpus();
  Vocab vocab = build_corpus_vocab(corpus.train, config);
  std::optional<Transformer> model;

  RlFixture() {
    config.model.vocab_size = vocab.size();
    Rng rng(8);
    model.emplace(config.model, rng);
    // A little supervised training so decodes are not all one token.
    const auto data = encode_examples(corpus.train, vocab, config);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    SupervisedStepper s(*model, {.lr = 3e-3}, 8, 1, &rng);
    for (int e = 0; e < 3; ++e) s.run(data, order);
  }
};

// Policy that attends every token with probability exactly one.
void freeze_attend_all(ActorCritic& agent) {
  for (auto& p : agent.parameters()) {
    std::fill(p.value.data().begin(), p.value.data().end(), 0.0);
    if (p.name == "agent.policy.b") {
      p.value.data()[kActionMask] = -1e4;
      p.value.data()[kActionAttend] = 1e4;
    }
  }
}

TEST(RlTrainer, AttendAllAgentReproducesSupervisedRewards) {
  RlFixture f;
  f.config.agent.lr = 0.0;
  f.config.agent.beta = 0.0;
  f.config.joint_finetune = false;
  Rng rng(1);
  ActorCritic agent(f.config.agent, rng);
  freeze_attend_all(agent);
  RlTrainer trainer(f.config, *f.model, agent, f.vocab, rng);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& ex = f.corpus.train[i];
    const auto rec = trainer.episode(ex, i + 1);
    const auto plain = summarize(*f.model, f.vocab, f.config, ex.article);
    EXPECT_EQ(rec.reward, reward(plain.text, ex.summary, f.config.reward_weights)) << ex.id;
    EXPECT_EQ(rec.masked_fraction, 0.0);
  }
  EXPECT_EQ(trainer.mean_reward(f.corpus.val, true), trainer.mean_reward(f.corpus.val, false));
}

TEST(RlTrainer, EpisodeRecordsAreBounded) {
  RlFixture f;
  Rng rng(2);
  ActorCritic agent(f.config.agent, rng);
  RlTrainer trainer(f.config, *f.model, agent, f.vocab, rng);
  for (std::size_t i = 0; i < 15; ++i) {
    const auto& ex = f.corpus.train[i];
    const auto rec = trainer.episode(ex, i + 1);
    EXPECT_EQ(rec.length, std::min(tokenize(ex.article).size(), f.config.max_src));
    EXPECT_GE(rec.masked_fraction, 0.0);
    EXPECT_LE(rec.masked_fraction, 1.0);
    EXPECT_GE(rec.reward, 0.0);
    EXPECT_LE(rec.reward, 1.0);
    EXPECT_LE(rec.entropy, 0.0);
    EXPECT_GE(rec.critic, 0.0);
  }
}

TEST(RlTrainer, MismatchedStateDimIsDataError) {
  RlFixture f;
  Rng rng(2);
  AgentConfig ac = f.config.agent;
  ac.state_dim = 3;
  ActorCritic agent(ac, rng);
  EXPECT_THROW(RlTrainer(f.config, *f.model, agent, f.vocab, rng), DataError);
}

TEST(TrainRl, FrozenModelWhenJointFinetuneIsOff) {
  RlFixture f;
  f.config.joint_finetune = false;
  const auto dir = scratch("rl_frozen");
  const auto before = param_bytes(f.model->parameters());
  const auto r = train_rl(f.config, f.corpus, f.vocab, *f.model, dir);
  EXPECT_EQ(param_bytes(f.model->parameters()), before);
  const auto ck = load_run_checkpoint(dir / "rl.ckpt");
  ASSERT_TRUE(ck.agent.has_value());
  EXPECT_EQ(ck.header.at(kCheckpointKind), "rl");
  EXPECT_EQ(std::hash<std::string>{}(param_bytes(ck.model->parameters())), std::hash<std::string>{}(before));
  EXPECT_EQ(r.episodes.size(), f.config.rl_episodes);
  EXPECT_EQ(count_lines(dir / "rl_episodes.csv"), 1 + f.config.rl_episodes);
  // Episode 0, every fifth episode, and the last one.
  ASSERT_EQ(r.val_rewards.size(), 4u);
  EXPECT_EQ(r.val_rewards.back().first, f.config.rl_episodes);
  EXPECT_EQ(r.final_val_reward, r.val_rewards.back().second);
  // The zero-initialised policy ties and so attends everything at first.
  EXPECT_EQ(r.val_rewards.front().second, r.supervised_val_reward);
  fs::remove_all(dir);
}

TEST(TrainRl, JointFinetuneMovesTheModel) {
  RlFixture f;
  f.config.joint_finetune = true;
  f.config.rl_model_lr = 1e-3;
  const auto before = param_bytes(f.model->parameters());
  train_rl(f.config, f.corpus, f.vocab, *f.model, scratch("rl_joint"));
  EXPECT_NE(param_bytes(f.model->parameters()), before);
  fs::remove_all(scratch("rl_joint"));
}

TEST(TrainRl, SameSeedSameFiles) {
  RlFixture f1, f2;
  const auto a = scratch("rl_a"), b = scratch("rl_b");
  train_rl(f1.config, f1.corpus, f1.vocab, *f1.model, a);
  train_rl(f2.config, f2.corpus, f2.vocab, *f2.model, b);
  for (const char* name : {"rl.ckpt", "config.txt", "rl_episodes.csv", "rl_val.csv"}) {
    EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(MaskRates, CountsEveryArticleToken) {
  RlFixture f;
  Rng rng(3);
  ActorCritic agent(f.config.agent, rng);
  const SyntheticGrammar g(SyntheticSpec{}.vocab_size);
  const auto r = mask_rates(*f.model, agent, f.vocab, f.config, f.corpus.val, g);
  std::size_t tokens = 0;
  for (const auto& ex : f.corpus.val) tokens += tokenize(ex.article).size();
  EXPECT_EQ(r.noise_tokens + r.salient_tokens, tokens);
  // Zero-initialised heads: p_mask is one half everywhere, greedy attends.
  EXPECT_DOUBLE_EQ(r.noise_p_mask, 0.5);
  EXPECT_DOUBLE_EQ(r.salient_p_mask, 0.5);
  EXPECT_EQ(r.noise_greedy, 0.0);
  EXPECT_DOUBLE_EQ(r.gap(), 0.0);
}

// Evaluation ---------------------------------------------------------------------

TEST(Evaluate, TableShapeOracleAndDeterminism) {
  RlFixture f;
  Rng rng(4);
  ActorCritic agent(f.config.agent, rng);
  const auto emb = make_embeddings(f.config);
  const auto a = scratch("eval_a"), b = scratch("eval_b");
  const auto r = evaluate(f.config, f.corpus.test, &*f.model, &agent, &f.vocab, emb, a);
  evaluate(f.config, f.corpus.test, &*f.model, &agent, &f.vocab, emb, b);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.rows[0].name, "baseline");
  EXPECT_EQ(r.rows[1].name, "model");
  EXPECT_EQ(r.rows[2].name, "model+agent");
  EXPECT_EQ(r.rows[3].name, "oracle");
  for (const auto& row : r.rows) EXPECT_TRUE(row.available) << row.name;
  const auto table = r.table();
  EXPECT_NE(table.find("rouge1  rouge2  rougeL"), std::string::npos);
  EXPECT_NE(table.find("oracle       1.0000  1.0000  1.0000"), std::string::npos) << table;
  EXPECT_EQ(slurp(a / "report.txt"), table);
  for (const auto& e : fs::directory_iterator(a)) {
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  EXPECT_EQ(count_lines(a / "summaries_model.txt"), f.corpus.test.size());
  EXPECT_TRUE(fs::exists(a / "results_model_agent.txt"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Evaluate, BaselineOnlyAndEmptySplit) {
  RunConfig c = tiny_config();
  const auto corpus = tiny_corpus();
  const auto emb = make_embeddings(c);
  const auto dir = scratch("eval_base");
  const auto r = evaluate(c, corpus.test, nullptr, nullptr, nullptr, emb, dir);
  EXPECT_TRUE(r.rows[0].available);
  EXPECT_FALSE(r.rows[1].available);
  EXPECT_FALSE(r.rows[2].available);
  EXPECT_NE(r.table().find("model           n/a     n/a     n/a\n"), std::string::npos) << r.table();
  EXPECT_THROW(evaluate(c, std::span<const Example>{}, nullptr, nullptr, nullptr, emb, dir), DataError);
  fs::remove_all(dir);
}

TEST(Evaluate, TextRankConvergesOnSyntheticDocuments) {
  RunConfig c = tiny_config();
  const auto corpus = tiny_corpus(100);
  std::size_t iterations = 0;
  const auto out = textrank_summaries(corpus.test, c, make_embeddings(c), &iterations);
  EXPECT_EQ(out.size(), corpus.test.size());
  EXPECT_LE(iterations, 200u);
  EXPECT_GT(iterations, 0u);
}

// Gradient checks ----------------------------------------------------------------

TEST(Gradcheck, SuitePassesOnFreshInit) {
  const auto suite = run_gradcheck(1);
  EXPECT_TRUE(suite.passed()) << suite.to_string();
  EXPECT_LT(suite.max_rel_error(), 1e-4);
  std::vector<std::string> names;
  for (const auto& c : suite.checks) names.push_back(c.first);
  for (const char* op : {"op.matmul", "op.softmax", "op.layernorm", "op.cross_entropy", "op.gelu", "op.dropout",
                         "supervised_loss", "a2c_loss"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), op), names.end()) << op;
  }
}

}  // namespace
}  // namespace maskedsum
