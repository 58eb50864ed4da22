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
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maskedsum/agent.hpp"
#include "maskedsum/corpus.hpp"
#include "maskedsum/gradcheck.hpp"
#include "maskedsum/optim.hpp"
#include "maskedsum/rouge.hpp"
#include "maskedsum/textrank.hpp"
#include "maskedsum/transformer.hpp"

namespace maskedsum {

/// Everything a run needs. Stored as flat key=value text.
struct RunConfig {
  std::uint64_t seed = 1;
  ModelConfig model;  // vocab_size is taken from the vocabulary
  AgentConfig agent;  // state_dim is taken from `state`

  // Agent state and mask placement.
  std::optional<std::size_t> capture_layer;  // default num_layers / 2
  StateOptions state;
  ApplyLayers apply_layers = ApplyLayers::kAll;

  std::size_t max_src = 44;
  std::size_t max_tgt = 16;
  std::size_t vocab_min_count = 1;
  std::size_t vocab_max_size = 0;

  // Supervised phase.
  std::size_t epochs = 6;
  std::size_t batch_size = 16;
  std::size_t accumulation = 4;
  double lr = 1.5e-4;
  std::size_t val_limit = 0;  // 0: whole validation split

  // RL phase.
  std::size_t rl_episodes = 3000;
  double rl_model_lr = 1.5e-4;
  bool joint_finetune = true;
  std::size_t rl_eval_every = 500;

  RewardWeights reward_weights;

  // TextRank baseline.
  std::size_t textrank_k = 3;
  std::size_t embedding_dim = 64;
  std::string embeddings_path;  // empty: hash embeddings

  std::string corpus_path;
  std::string checkpoint_path;
  std::string out_dir;

  std::size_t resolved_capture_layer() const;
  // Fills derived fields (agent.state_dim) and checks ranges.
  void resolve();
  void validate() const;

  // out_dir is left out so that runs differing only in output location
  // produce identical files.
  KeyValues to_key_values() const;
  static RunConfig from_key_values(const KeyValues& kv);
  static RunConfig load(const std::filesystem::path& path);
};

// Checkpoint header keys written on top of the run config.
inline constexpr const char* kCheckpointKind = "checkpoint.kind";

/// Model (and optionally agent) restored from a checkpoint file.
struct LoadedCheckpoint {
  RunConfig config;
  KeyValues header;
  std::optional<Transformer> model;
  std::optional<ActorCritic> agent;
};

void save_run_checkpoint(const std::filesystem::path& path, const RunConfig& config, const std::string& kind,
                         Transformer& model, ActorCritic* agent);
LoadedCheckpoint load_run_checkpoint(const std::filesystem::path& path);

/// Optimizer loop for teacher-forced training. Every example gets its own
/// graph; its loss is scaled by 1 / (batch_size * accumulation) and gradients
/// accumulate in the parameters until an optimizer step closes the effective
/// batch. A trailing partial batch is scaled by its own size.
class SupervisedStepper {
 public:
  SupervisedStepper(Transformer& model, AdamOptions adam, std::size_t batch_size, std::size_t accumulation,
                    Rng* dropout_rng);

  // Returns the mean example loss of every optimizer step taken.
  std::vector<double> run(std::span<const TokenSequence> data, std::span<const std::size_t> order);
  std::size_t steps() const { return adam_.steps(); }

 private:
  Transformer& model_;
  Adam adam_;
  std::size_t batch_size_, accumulation_;
  Rng* rng_;
};

std::vector<TokenSequence> encode_examples(std::span<const Example> examples, const Vocab& vocab,
                                           const RunConfig& config);

/// Vocabulary from the training split (articles and summaries).
Vocab build_corpus_vocab(std::span<const Example> train, const RunConfig& config);

/// Fraction of corpus tokens the vocabulary knows. DataError below `floor`.
double check_vocab_coverage(std::span<const Example> examples, const Vocab& vocab, double floor = 0.5);

/// Agent view of one prompt: per-article-token states and received attention.
struct Observation {
  Tensor states;                        // [T, state_dim]
  std::vector<std::size_t> positions;   // prompt positions of the article tokens
  std::vector<double> received;         // state column 0
  std::size_t length() const { return positions.size(); }
};

Observation observe(Transformer& model, const TokenSequence& prompt, const RunConfig& config);

/// Masked prompt positions for the given per-token actions.
std::vector<std::size_t> masked_positions(const Observation& obs, std::span<const int> actions);

/// Greedy summary for one article, optionally with the greedy agent mask.
DecodeResult summarize(Transformer& model, const Vocab& vocab, const RunConfig& config, const std::string& article,
                       ActorCritic* agent = nullptr);

struct SummaryScores {
  std::vector<std::string> summaries;
  CorpusRouge rouge;
};

SummaryScores score_model(Transformer& model, const Vocab& vocab, const RunConfig& config,
                          std::span<const Example> examples, ActorCritic* agent = nullptr);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double train_loss = 0.0;
  RougeScore val;
  double val_reward = 0.0;
  bool best = false;
};

struct SupervisedReport {
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  RougeScore best_val;
  double best_val_reward = 0.0;
  double seconds = 0.0;  // wall clock, never written to files
};

/// Writes <out>/model.ckpt (best validation ROUGE-1 F1, later epoch on ties),
/// <out>/vocab.txt, <out>/config.txt, <out>/supervised_steps.csv and
/// <out>/supervised_epochs.csv.
SupervisedReport train_supervised(const RunConfig& config, const CorpusSplits& corpus, const Vocab& vocab,
                                  const std::filesystem::path& out_dir);

struct EpisodeRecord {
  std::size_t episode = 0;
  std::string example_id;
  std::size_t length = 0;
  double reward = 0.0;
  double mean_advantage = 0.0;
  double actor = 0.0;
  double critic = 0.0;
  double entropy = 0.0;
  double masked_fraction = 0.0;
};

/// Per-episode A2C updates of the agent against a frozen or jointly tuned
/// model.
class RlTrainer {
 public:
  RlTrainer(const RunConfig& config, Transformer& model, ActorCritic& agent, const Vocab& vocab, Rng& rng);

  EpisodeRecord episode(const Example& example, std::size_t index);
  // Greedy agent when `use_agent`, plain model otherwise.
  double mean_reward(std::span<const Example> examples, bool use_agent);

  BaselineCache& cache() { return cache_; }

 private:
  const RunConfig& config_;
  Transformer& model_;
  ActorCritic& agent_;
  const Vocab& vocab_;
  Rng& rng_;
  Adam agent_opt_;
  Adam model_opt_;
  BaselineCache cache_;
};

struct RlReport {
  std::vector<EpisodeRecord> episodes;
  std::vector<std::pair<std::size_t, double>> val_rewards;  // (episode, mean greedy reward)
  double supervised_val_reward = 0.0;                       // model alone, before RL
  double final_val_reward = 0.0;                            // model + greedy agent, after RL
  double seconds = 0.0;
};

/// Loads nothing itself: `model` is the supervised model, updated in place
/// when joint_finetune is set. Writes <out>/rl.ckpt (model + agent),
/// <out>/config.txt, <out>/rl_episodes.csv and <out>/rl_val.csv.
RlReport train_rl(const RunConfig& config, const CorpusSplits& corpus, const Vocab& vocab, Transformer& model,
                  const std::filesystem::path& out_dir);

/// Expected masking rate (mean p_mask) and greedy masking rate over article
/// tokens of synthetic examples, split by sentence salience.
struct MaskRates {
  double noise_p_mask = 0.0;
  double salient_p_mask = 0.0;
  double noise_greedy = 0.0;
  double salient_greedy = 0.0;
  std::size_t noise_tokens = 0;
  std::size_t salient_tokens = 0;

  double gap() const { return noise_p_mask - salient_p_mask; }
};

MaskRates mask_rates(Transformer& model, ActorCritic& agent, const Vocab& vocab, const RunConfig& config,
                     std::span<const Example> examples, const SyntheticGrammar& grammar);

struct SystemRow {
  std::string name;
  bool available = false;
  CorpusRouge scores;
};

struct EvaluationReport {
  std::vector<SystemRow> rows;  // baseline, model, model+agent, oracle
  std::string table() const;
};

EmbeddingTable make_embeddings(const RunConfig& config);

/// TextRank summaries for every article.
std::vector<std::string> textrank_summaries(std::span<const Example> examples, const RunConfig& config,
                                            const EmbeddingTable& emb, std::size_t* max_iterations = nullptr);

/// Table-style report over `test`. Writes <out>/report.txt plus
/// results_<system>.txt and summaries_<system>.txt per available system.
EvaluationReport evaluate(const RunConfig& config, std::span<const Example> test, Transformer* model,
                          ActorCritic* agent, const Vocab* vocab, const EmbeddingTable& emb,
                          const std::filesystem::path& out_dir);

struct GradcheckSuite {
  std::vector<std::pair<std::string, GradCheckReport>> checks;

  bool passed() const;
  double max_rel_error() const;
  std::string to_string() const;
};

/// Finite-difference checks of every differentiable op, the supervised loss
/// of a tiny transformer and the A2C loss of a small agent.
GradcheckSuite run_gradcheck(std::uint64_t seed, const GradCheckOptions& options = {});

std::string format_double(double x);

}  // namespace maskedsum
