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

#include "maskedsum/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "maskedsum/checkpoint.hpp"
#include "maskedsum/errors.hpp"
#include "maskedsum/ops.hpp"

namespace maskedsum {

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t get_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError("config " + key + ": expected a nonnegative integer, got '" + it->second + "'");
  }
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw DataError("config " + key + ": expected a number, got '" + it->second + "'");
  }
}

bool get_bool(const KeyValues& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw DataError("config " + key + ": expected true or false, got '" + it->second + "'");
}

std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void write_config_file(const std::filesystem::path& path, const RunConfig& config) {
  auto out = open_out(path);
  write_key_values(out, config.to_key_values());
}

void require_finite(double x, const std::string& what) {
  if (!std::isfinite(x)) throw NumericError("non-finite " + what);
}

std::string file_safe(std::string name) {
  for (auto& c : name) {
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  }
  return name;
}

DecodeOptions decode_options(const RunConfig& config) {
  DecodeOptions o;
  o.apply_layers = config.apply_layers;
  o.dynamic_layer = config.resolved_capture_layer();
  return o;
}

}  // namespace

// RunConfig ------------------------------------------------------------------

std::size_t RunConfig::resolved_capture_layer() const {
  return capture_layer.value_or(model.num_layers / 2);
}

void RunConfig::resolve() {
  agent.state_dim = state.state_dim();
  validate();
}

void RunConfig::validate() const {
  ModelConfig m = model;
  m.vocab_size = std::max<std::size_t>(m.vocab_size, kNumSpecials);
  m.validate();
  agent.validate();
  if (agent.state_dim != state.state_dim()) {
    throw UsageError("agent state_dim " + std::to_string(agent.state_dim) + " does not match state buckets + 1 = " +
                     std::to_string(state.state_dim()));
  }
  if (state.buckets == 0) throw UsageError("state.buckets must be positive");
  if (resolved_capture_layer() >= model.num_layers) {
    throw UsageError("capture_layer " + std::to_string(resolved_capture_layer()) + " >= num_layers " +
                     std::to_string(model.num_layers));
  }
  if (max_src + max_tgt + 3 > model.max_seq_len) {
    throw UsageError("max_src + max_tgt + 3 = " + std::to_string(max_src + max_tgt + 3) + " exceeds max_seq_len " +
                     std::to_string(model.max_seq_len));
  }
  if (batch_size == 0) throw UsageError("batch_size must be at least 1");
  if (accumulation == 0) throw UsageError("accumulation must be at least 1");
  if (lr < 0.0 || rl_model_lr < 0.0) throw UsageError("learning rates must be nonnegative");
  if (rl_eval_every == 0) throw UsageError("rl.eval_every must be positive");
  if (textrank_k == 0) throw UsageError("textrank k must be at least 1");
  if (embedding_dim == 0) throw UsageError("embedding_dim must be positive");
  reward_weights.validate();
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  kv["seed"] = std::to_string(seed);
  model.write(kv, "model.");
  agent.write(kv, "agent.");
  kv["state.capture_layer"] = capture_layer ? std::to_string(*capture_layer) : "auto";
  kv["state.buckets"] = std::to_string(state.buckets);
  kv["state.pooling"] = state.pooling == Pooling::kAbsolute ? "absolute" : "relative";
  kv["state.apply_layers"] = apply_layers == ApplyLayers::kAll ? "all" : "captured";
  kv["data.max_src"] = std::to_string(max_src);
  kv["data.max_tgt"] = std::to_string(max_tgt);
  kv["vocab.min_count"] = std::to_string(vocab_min_count);
  kv["vocab.max_size"] = std::to_string(vocab_max_size);
  kv["train.epochs"] = std::to_string(epochs);
  kv["train.batch_size"] = std::to_string(batch_size);
  kv["train.accumulation"] = std::to_string(accumulation);
  kv["train.lr"] = format_double(lr);
  kv["train.val_limit"] = std::to_string(val_limit);
  kv["rl.episodes"] = std::to_string(rl_episodes);
  kv["rl.model_lr"] = format_double(rl_model_lr);
  kv["rl.joint_finetune"] = joint_finetune ? "true" : "false";
  kv["rl.eval_every"] = std::to_string(rl_eval_every);
  kv["reward.weights"] = reward_weights.to_string();
  kv["textrank.k"] = std::to_string(textrank_k);
  kv["textrank.embedding_dim"] = std::to_string(embedding_dim);
  kv["textrank.embeddings"] = embeddings_path;
  kv["paths.corpus"] = corpus_path;
  kv["paths.checkpoint"] = checkpoint_path;
  return kv;
}

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  const auto known = RunConfig{}.to_key_values();
  for (const auto& [key, value] : kv) {
    if (!known.count(key)) throw DataError("unknown config key '" + key + "'");
  }
  RunConfig c;
  c.seed = get_size(kv, "seed", c.seed);
  c.model = ModelConfig::read(kv, "model.");
  c.agent = AgentConfig::read(kv, "agent.");
  const std::string layer = get_string(kv, "state.capture_layer", "auto");
  if (layer != "auto") c.capture_layer = get_size(kv, "state.capture_layer", 0);
  c.state.buckets = get_size(kv, "state.buckets", c.state.buckets);
  const std::string pooling = get_string(kv, "state.pooling", "absolute");
  if (pooling == "absolute") c.state.pooling = Pooling::kAbsolute;
  else if (pooling == "relative") c.state.pooling = Pooling::kRelative;
  else throw DataError("config state.pooling: expected absolute or relative, got '" + pooling + "'");
  const std::string apply = get_string(kv, "state.apply_layers", "all");
  if (apply == "all") c.apply_layers = ApplyLayers::kAll;
  else if (apply == "captured") c.apply_layers = ApplyLayers::kCapturedOnly;
  else throw DataError("config state.apply_layers: expected all or captured, got '" + apply + "'");
  c.max_src = get_size(kv, "data.max_src", c.max_src);
  c.max_tgt = get_size(kv, "data.max_tgt", c.max_tgt);
  c.vocab_min_count = get_size(kv, "vocab.min_count", c.vocab_min_count);
  c.vocab_max_size = get_size(kv, "vocab.max_size", c.vocab_max_size);
  c.epochs = get_size(kv, "train.epochs", c.epochs);
  c.batch_size = get_size(kv, "train.batch_size", c.batch_size);
  c.accumulation = get_size(kv, "train.accumulation", c.accumulation);
  c.lr = get_double(kv, "train.lr", c.lr);
  c.val_limit = get_size(kv, "train.val_limit", c.val_limit);
  c.rl_episodes = get_size(kv, "rl.episodes", c.rl_episodes);
  c.rl_model_lr = get_double(kv, "rl.model_lr", c.rl_model_lr);
  c.joint_finetune = get_bool(kv, "rl.joint_finetune", c.joint_finetune);
  c.rl_eval_every = get_size(kv, "rl.eval_every", c.rl_eval_every);
  if (auto it = kv.find("reward.weights"); it != kv.end()) {
    try {
      c.reward_weights = RewardWeights::parse(it->second);
    } catch (const UsageError& e) {
      throw DataError(std::string("config reward.weights: ") + e.what());
    }
  }
  c.textrank_k = get_size(kv, "textrank.k", c.textrank_k);
  c.embedding_dim = get_size(kv, "textrank.embedding_dim", c.embedding_dim);
  c.embeddings_path = get_string(kv, "textrank.embeddings", c.embeddings_path);
  c.corpus_path = get_string(kv, "paths.corpus", c.corpus_path);
  c.checkpoint_path = get_string(kv, "paths.checkpoint", c.checkpoint_path);
  c.agent.state_dim = c.state.state_dim();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  return from_key_values(parse_key_values(in, path.string()));
}

// Checkpoints ----------------------------------------------------------------

void save_run_checkpoint(const std::filesystem::path& path, const RunConfig& config, const std::string& kind,
                         Transformer& model, ActorCritic* agent) {
  KeyValues header = config.to_key_values();
  model.config().write(header, "model.");
  header[kCheckpointKind] = kind;
  std::vector<const ParameterSet*> sets{&model.parameters()};
  if (agent != nullptr) sets.push_back(&agent->parameters());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_checkpoint(path, header, sets);
}

LoadedCheckpoint load_run_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  auto ck = load_checkpoint(path);
  LoadedCheckpoint out;
  out.header = ck.header;
  KeyValues kv = ck.header;
  kv.erase(kCheckpointKind);
  out.config = RunConfig::from_key_values(kv);
  Rng rng(0);
  out.model.emplace(out.config.model, rng);
  std::vector<ParameterRecord> model_records, agent_records;
  for (auto& r : ck.records) {
    (r.name.rfind("agent.", 0) == 0 ? agent_records : model_records).push_back(std::move(r));
  }
  assign_parameters(out.model->parameters(), model_records);
  if (!agent_records.empty()) {
    out.agent.emplace(out.config.agent, rng);
    assign_parameters(out.agent->parameters(), agent_records);
  }
  return out;
}

// Supervised phase -------------------------------------------------------------

SupervisedStepper::SupervisedStepper(Transformer& model, AdamOptions adam, std::size_t batch_size,
                                     std::size_t accumulation, Rng* dropout_rng)
    : model_(model), adam_(adam), batch_size_(batch_size), accumulation_(accumulation), rng_(dropout_rng) {
  if (batch_size == 0 || accumulation == 0) throw UsageError("batch size and accumulation must be positive");
}

std::vector<double> SupervisedStepper::run(std::span<const TokenSequence> data, std::span<const std::size_t> order) {
  const std::size_t effective = batch_size_ * accumulation_;
  ForwardOptions fo;
  fo.training = model_.config().dropout > 0.0;
  fo.rng = rng_;
  std::vector<double> losses;
  auto& params = model_.parameters();
  for (std::size_t start = 0; start < order.size(); start += effective) {
    const std::size_t end = std::min(order.size(), start + effective);
    const double inv = 1.0 / static_cast<double>(end - start);
    params.zero_grad();
    double total = 0.0;
    // Micro-batches of batch_size examples; each example is its own graph,
    // so the grouping only changes when gradients are summed, not how.
    for (std::size_t i = start; i < end; ++i) {
      const auto& seq = data[order[i]];
      Graph g;
      Var loss = supervised_loss(model_, g, seq, AttentionMask::seq2seq(seq.segments), fo);
      const double value = loss.value().item();
      require_finite(value, "training loss");
      total += value;
      g.backward(scale(loss, inv));
    }
    adam_.step(params);
    params.zero_grad();
    losses.push_back(total * inv);
  }
  return losses;
}

std::vector<TokenSequence> encode_examples(std::span<const Example> examples, const Vocab& vocab,
                                           const RunConfig& config) {
  std::vector<TokenSequence> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(encode_pair(ex.article, ex.summary, vocab, config.max_src, config.max_tgt));
  return out;
}

Vocab build_corpus_vocab(std::span<const Example> train, const RunConfig& config) {
  std::vector<std::string> docs;
  for (const auto& ex : train) {
    docs.push_back(ex.article);
    docs.push_back(ex.summary);
  }
  return build_vocab(docs, config.vocab_min_count, config.vocab_max_size);
}

double check_vocab_coverage(std::span<const Example> examples, const Vocab& vocab, double floor) {
  std::size_t known = 0, total = 0;
  for (const auto& ex : examples) {
    for (const auto* text : {&ex.article, &ex.summary}) {
      for (const auto& t : tokenize(*text)) {
        ++total;
        known += vocab.find(t).has_value();
      }
    }
  }
  const double coverage = total ? static_cast<double>(known) / static_cast<double>(total) : 1.0;
  if (coverage < floor) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "corpus/vocab mismatch: vocabulary covers %.1f%% of corpus tokens", 100 * coverage);
    throw DataError(buf);
  }
  return coverage;
}

Observation observe(Transformer& model, const TokenSequence& prompt, const RunConfig& config) {
  Observation obs;
  if (prompt.size() < 2) throw DataError("prompt too short");
  for (std::size_t p = 1; p + 1 < prompt.size(); ++p) obs.positions.push_back(p);
  if (obs.positions.empty()) return obs;
  Graph g(false);
  ForwardOptions fo;
  fo.capture_layer = config.resolved_capture_layer();
  auto out = model.forward(g, prompt.ids, AttentionMask::seq2seq(prompt.segments), fo);
  obs.states = state_vector(out.layer(*fo.capture_layer), obs.positions, config.state);
  for (std::size_t t = 0; t < obs.length(); ++t) obs.received.push_back(obs.states.at(t, 0));
  return obs;
}

std::vector<std::size_t> masked_positions(const Observation& obs, std::span<const int> actions) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    if (actions[t] == kActionMask) out.push_back(obs.positions[t]);
  }
  return out;
}

DecodeResult summarize(Transformer& model, const Vocab& vocab, const RunConfig& config, const std::string& article,
                       ActorCritic* agent) {
  const TokenSequence prompt = encode_source(article, vocab, config.max_src);
  std::vector<std::size_t> masked;
  if (agent != nullptr && config.max_tgt > 0) {
    const auto obs = observe(model, prompt, config);
    if (obs.length() > 0) {
      Graph g(false);
      auto policy = agent->evaluate(g, obs.states);
      auto actions = ActorCritic::greedy(policy.distribution);
      apply_guard(actions, obs.received);
      masked = masked_positions(obs, actions);
    }
  }
  return greedy_decode_prompt(model, vocab, prompt, masked, config.max_tgt, decode_options(config));
}

SummaryScores score_model(Transformer& model, const Vocab& vocab, const RunConfig& config,
                          std::span<const Example> examples, ActorCritic* agent) {
  SummaryScores s;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& ex : examples) {
    s.summaries.push_back(summarize(model, vocab, config, ex.article, agent).text);
    pairs.emplace_back(s.summaries.back(), ex.summary);
  }
  if (!pairs.empty()) s.rouge = corpus_eval(pairs, config.reward_weights);
  return s;
}

SupervisedReport train_supervised(const RunConfig& config_in, const CorpusSplits& corpus, const Vocab& vocab,
                                  const std::filesystem::path& out_dir) {
  const auto start = Clock::now();
  RunConfig config = config_in;
  config.model.vocab_size = vocab.size();
  config.resolve();
  if (corpus.train.empty()) throw DataError("training split is empty");
  check_vocab_coverage(corpus.train, vocab);

  std::filesystem::create_directories(out_dir);
  vocab.save_file(out_dir / "vocab.txt");
  write_config_file(out_dir / "config.txt", config);
  auto steps_csv = open_out(out_dir / "supervised_steps.csv");
  auto epochs_csv = open_out(out_dir / "supervised_epochs.csv");
  steps_csv << "step,epoch,loss\n";
  epochs_csv << "epoch,steps,train_loss,val_rouge1,val_rouge2,val_rougeL,val_reward,best\n";

  Rng rng(config.seed);
  Transformer model(config.model, rng);
  const auto data = encode_examples(corpus.train, vocab, config);
  std::span<const Example> val(corpus.val);
  if (config.val_limit > 0 && val.size() > config.val_limit) val = val.first(config.val_limit);

  SupervisedStepper stepper(model, {.lr = config.lr}, config.batch_size, config.accumulation, &rng);
  SupervisedReport report;
  double best = -1.0;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    const auto losses = stepper.run(data, order);
    for (double l : losses) {
      report.step_losses.push_back(l);
      steps_csv << report.step_losses.size() << ',' << epoch << ',' << format_double(l) << '\n';
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.steps = stepper.steps();
    rec.train_loss = losses.empty() ? 0.0 : std::accumulate(losses.begin(), losses.end(), 0.0) / losses.size();
    if (!val.empty()) {
      const auto scores = score_model(model, vocab, config, val);
      rec.val = scores.rouge.mean;
      rec.val_reward = scores.rouge.mean_reward;
    }
    // Ties go to the later epoch.
    if (rec.val.rouge1.f1 >= best) {
      best = rec.val.rouge1.f1;
      rec.best = true;
      report.best_epoch = epoch;
      report.best_val = rec.val;
      report.best_val_reward = rec.val_reward;
      save_run_checkpoint(out_dir / "model.ckpt", config, "supervised", model, nullptr);
    }
    epochs_csv << epoch << ',' << rec.steps << ',' << format_double(rec.train_loss) << ','
               << format_double(rec.val.rouge1.f1) << ',' << format_double(rec.val.rouge2.f1) << ','
               << format_double(rec.val.rougeL.f1) << ',' << format_double(rec.val_reward) << ','
               << (rec.best ? 1 : 0) << '\n';
    report.epochs.push_back(rec);
  }
  if (config.epochs == 0) save_run_checkpoint(out_dir / "model.ckpt", config, "supervised", model, nullptr);
  report.seconds = seconds_since(start);
  return report;
}

// RL phase ---------------------------------------------------------------------

RlTrainer::RlTrainer(const RunConfig& config, Transformer& model, ActorCritic& agent, const Vocab& vocab, Rng& rng)
    : config_(config),
      model_(model),
      agent_(agent),
      vocab_(vocab),
      rng_(rng),
      agent_opt_({.lr = config.agent.lr}),
      model_opt_({.lr = config.rl_model_lr}),
      cache_(config.agent.baseline) {
  if (model.config().vocab_size != vocab.size()) {
    throw DataError("corpus/vocab mismatch: model has " + std::to_string(model.config().vocab_size) +
                    " token ids, vocabulary has " + std::to_string(vocab.size()));
  }
  if (agent.config().state_dim != config.state.state_dim()) {
    throw DataError("agent state_dim " + std::to_string(agent.config().state_dim) + " does not match the state size " +
                    std::to_string(config.state.state_dim()));
  }
}

EpisodeRecord RlTrainer::episode(const Example& example, std::size_t index) {
  EpisodeRecord rec;
  rec.episode = index;
  rec.example_id = example.id;
  const TokenSequence prompt = encode_source(example.article, vocab_, config_.max_src);
  const auto obs = observe(model_, prompt, config_);
  rec.length = obs.length();
  if (obs.length() == 0) {
    const auto out = greedy_decode_prompt(model_, vocab_, prompt, {}, config_.max_tgt);
    rec.reward = reward(out.text, example.summary, config_.reward_weights);
    require_finite(rec.reward, "reward");
    return rec;
  }

  Graph g;
  auto policy = agent_.evaluate(g, obs.states);
  auto actions = ActorCritic::sample(policy.distribution, rng_);
  apply_guard(actions, obs.received);
  const auto masked = masked_positions(obs, actions);
  const auto out = greedy_decode_prompt(model_, vocab_, prompt, masked, config_.max_tgt, decode_options(config_));
  rec.reward = reward(out.text, example.summary, config_.reward_weights);
  require_finite(rec.reward, "reward");

  const auto& values = policy.values.value().values();
  const auto base = cache_.baseline(example.id, values);
  const auto adv = advantage(rec.reward, base);
  auto loss = a2c_loss(policy, actions, rec.reward, adv, config_.agent.beta, config_.agent.value_coef);
  rec.mean_advantage = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(adv.size());
  rec.actor = loss.actor.value().item();
  rec.critic = loss.critic.value().item();
  rec.entropy = loss.entropy.value().item();
  require_finite(loss.total.value().item(), "agent loss");
  rec.masked_fraction = static_cast<double>(masked.size()) / static_cast<double>(actions.size());
  agent_update(g, loss, agent_, agent_opt_);
  cache_.update(example.id, values);

  if (config_.joint_finetune) {
    const auto seq = encode_pair(example.article, example.summary, vocab_, config_.max_src, config_.max_tgt);
    const auto base_mask = AttentionMask::seq2seq(seq.segments);
    const auto overlay = base_mask.with_masked_keys(masked);
    ForwardOptions fo;
    if (config_.apply_layers == ApplyLayers::kCapturedOnly) {
      fo.dynamic_mask = &overlay;
      fo.apply_layers = ApplyLayers::kCapturedOnly;
      fo.dynamic_layer = config_.resolved_capture_layer();
    }
    const AttentionMask& mask = config_.apply_layers == ApplyLayers::kAll ? overlay : base_mask;
    auto& params = model_.parameters();
    params.zero_grad();
    Graph mg;
    Var sl = supervised_loss(model_, mg, seq, mask, fo);
    require_finite(sl.value().item(), "joint fine-tuning loss");
    mg.backward(sl);
    model_opt_.step(params);
    params.zero_grad();
  }
  return rec;
}

double RlTrainer::mean_reward(std::span<const Example> examples, bool use_agent) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) {
    const auto out = summarize(model_, vocab_, config_, ex.article, use_agent ? &agent_ : nullptr);
    total += reward(out.text, ex.summary, config_.reward_weights);
  }
  return total / static_cast<double>(examples.size());
}

RlReport train_rl(const RunConfig& config_in, const CorpusSplits& corpus, const Vocab& vocab, Transformer& model,
                  const std::filesystem::path& out_dir) {
  const auto start = Clock::now();
  RunConfig config = config_in;
  config.model = model.config();
  config.resolve();
  if (corpus.train.empty()) throw DataError("training split is empty");
  check_vocab_coverage(corpus.train, vocab);

  std::filesystem::create_directories(out_dir);
  write_config_file(out_dir / "config.txt", config);
  auto episodes_csv = open_out(out_dir / "rl_episodes.csv");
  auto val_csv = open_out(out_dir / "rl_val.csv");
  episodes_csv << "episode,example_id,T,reward,mean_advantage,L_actor,L_critic,L_entropy,masked_fraction\n";
  val_csv << "episode,val_reward\n";

  Rng rng(config.seed);
  ActorCritic agent(config.agent, rng);
  RlTrainer trainer(config, model, agent, vocab, rng);
  std::span<const Example> val(corpus.val);
  if (config.val_limit > 0 && val.size() > config.val_limit) val = val.first(config.val_limit);

  RlReport report;
  report.supervised_val_reward = trainer.mean_reward(val, false);
  auto record_val = [&](std::size_t episode) {
    const double r = trainer.mean_reward(val, true);
    report.val_rewards.emplace_back(episode, r);
    val_csv << episode << ',' << format_double(r) << '\n';
    return r;
  };
  report.final_val_reward = record_val(0);

  std::vector<std::size_t> order(corpus.train.size());
  std::size_t cursor = order.size();
  for (std::size_t e = 1; e <= config.rl_episodes; ++e) {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(std::span<std::size_t>(order));
      cursor = 0;
    }
    const auto rec = trainer.episode(corpus.train[order[cursor++]], e);
    episodes_csv << rec.episode << ',' << rec.example_id << ',' << rec.length << ',' << format_double(rec.reward)
                 << ',' << format_double(rec.mean_advantage) << ',' << format_double(rec.actor) << ','
                 << format_double(rec.critic) << ',' << format_double(rec.entropy) << ','
                 << format_double(rec.masked_fraction) << '\n';
    report.episodes.push_back(rec);
    if (e % config.rl_eval_every == 0 || e == config.rl_episodes) report.final_val_reward = record_val(e);
  }
  save_run_checkpoint(out_dir / "rl.ckpt", config, "rl", model, &agent);
  report.seconds = seconds_since(start);
  return report;
}

MaskRates mask_rates(Transformer& model, ActorCritic& agent, const Vocab& vocab, const RunConfig& config,
                     std::span<const Example> examples, const SyntheticGrammar& grammar) {
  MaskRates r;
  for (const auto& ex : examples) {
    const auto prompt = encode_source(ex.article, vocab, config.max_src);
    const auto obs = observe(model, prompt, config);
    if (obs.length() == 0) continue;
    const auto labels = salience_labels(tokenize(ex.article), grammar);
    Graph g(false);
    auto policy = agent.evaluate(g, obs.states);
    auto actions = ActorCritic::greedy(policy.distribution);
    apply_guard(actions, obs.received);
    for (std::size_t t = 0; t < obs.length(); ++t) {
      const double p = policy.distribution.p_mask(t);
      const double m = actions[t] == kActionMask ? 1.0 : 0.0;
      if (labels[t]) {
        r.salient_p_mask += p;
        r.salient_greedy += m;
        ++r.salient_tokens;
      } else {
        r.noise_p_mask += p;
        r.noise_greedy += m;
        ++r.noise_tokens;
      }
    }
  }
  if (r.noise_tokens) {
    r.noise_p_mask /= static_cast<double>(r.noise_tokens);
    r.noise_greedy /= static_cast<double>(r.noise_tokens);
  }
  if (r.salient_tokens) {
    r.salient_p_mask /= static_cast<double>(r.salient_tokens);
    r.salient_greedy /= static_cast<double>(r.salient_tokens);
  }
  return r;
}

// Evaluation -------------------------------------------------------------------

std::string EvaluationReport::table() const {
  std::string out = "system       rouge1  rouge2  rougeL\n";
  char buf[160];
  for (const auto& row : rows) {
    if (row.available) {
      std::snprintf(buf, sizeof buf, "%-12s %6.4f  %6.4f  %6.4f\n", row.name.c_str(), row.scores.mean.rouge1.f1,
                    row.scores.mean.rouge2.f1, row.scores.mean.rougeL.f1);
    } else {
      std::snprintf(buf, sizeof buf, "%-12s %6s  %6s  %6s\n", row.name.c_str(), "n/a", "n/a", "n/a");
    }
    out += buf;
  }
  return out;
}

EmbeddingTable make_embeddings(const RunConfig& config) {
  if (!config.embeddings_path.empty()) return EmbeddingTable::load_file(config.embeddings_path);
  return EmbeddingTable(config.embedding_dim, config.seed);
}

std::vector<std::string> textrank_summaries(std::span<const Example> examples, const RunConfig& config,
                                            const EmbeddingTable& emb, std::size_t* max_iterations) {
  std::vector<std::string> out;
  std::size_t worst = 0;
  for (const auto& ex : examples) {
    auto r = extract(ex.article, config.textrank_k, emb);
    worst = std::max(worst, r.ranking.iterations);
    if (!r.sentences.empty() && !r.ranking.converged) {
      throw NumericError("TextRank did not converge within " + std::to_string(r.ranking.iterations) +
                         " iterations on " + ex.id);
    }
    out.push_back(std::move(r.text));
  }
  if (max_iterations != nullptr) *max_iterations = worst;
  return out;
}

EvaluationReport evaluate(const RunConfig& config, std::span<const Example> test, Transformer* model,
                          ActorCritic* agent, const Vocab* vocab, const EmbeddingTable& emb,
                          const std::filesystem::path& out_dir) {
  if (test.empty()) throw DataError("evaluation split is empty");
  std::filesystem::create_directories(out_dir);
  EvaluationReport report;

  auto add_row = [&](const std::string& name, const std::vector<std::string>* summaries) {
    SystemRow row;
    row.name = name;
    if (summaries != nullptr) {
      std::vector<std::pair<std::string, std::string>> pairs;
      for (std::size_t i = 0; i < test.size(); ++i) pairs.emplace_back((*summaries)[i], test[i].summary);
      row.scores = corpus_eval(pairs, config.reward_weights);
      row.available = true;
      auto results = open_out(out_dir / ("results_" + file_safe(name) + ".txt"));
      write_results(results, row.scores);
      auto text = open_out(out_dir / ("summaries_" + file_safe(name) + ".txt"));
      for (const auto& s : *summaries) text << s << '\n';
    }
    report.rows.push_back(row);
  };

  const auto baseline = textrank_summaries(test, config, emb);
  add_row("baseline", &baseline);
  if (model != nullptr && vocab != nullptr) {
    const auto plain = score_model(*model, *vocab, config, test).summaries;
    add_row("model", &plain);
    if (agent != nullptr) {
      const auto masked = score_model(*model, *vocab, config, test, agent).summaries;
      add_row("model+agent", &masked);
    } else {
      add_row("model+agent", nullptr);
    }
  } else {
    add_row("model", nullptr);
    add_row("model+agent", nullptr);
  }
  std::vector<std::string> references;
  for (const auto& ex : test) references.push_back(ex.summary);
  add_row("oracle", &references);

  auto out = open_out(out_dir / "report.txt");
  out << report.table();
  return report;
}

// Gradient checks ----------------------------------------------------------------

bool GradcheckSuite::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.second.passed(); });
}

double GradcheckSuite::max_rel_error() const {
  double m = 0.0;
  for (const auto& c : checks) m = std::max(m, c.second.max_rel_error());
  return m;
}

std::string GradcheckSuite::to_string() const {
  std::string out;
  char buf[200];
  for (const auto& [name, report] : checks) {
    for (const auto& b : report.blocks) {
      std::snprintf(buf, sizeof buf, "%-16s %-36s %.3e %s\n", name.c_str(), b.name.c_str(), b.max_rel_error,
                    b.max_rel_error <= report.tolerance ? "ok" : "FAIL");
      out += buf;
    }
    if (report.blocks.empty()) out += name + " (no parameters)\n";
  }
  std::snprintf(buf, sizeof buf, "max_rel_error %.3e %s\n", max_rel_error(), passed() ? "PASS" : "FAIL");
  return out + buf;
}

GradcheckSuite run_gradcheck(std::uint64_t seed, const GradCheckOptions& options) {
  GradcheckSuite suite;
  Rng rng(seed);
  auto random = [&](Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = rng.uniform(lo, hi);
    return t;
  };
  // Entries kept away from zero so relu's kink is never straddled.
  auto away_from_zero = [&](Shape shape) {
    Tensor t(std::move(shape));
    for (auto& x : t.data()) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
    return t;
  };

  ParameterSet ps;
  ps.add("x", away_from_zero({3, 4}));
  ps.add("y", random({3, 4}, -1.0, 1.0));
  ps.add("row", random({4}, -1.0, 1.0));
  ps.add("pos", random({3, 4}, 0.5, 2.0));
  const Tensor weights = random({3, 4}, -1.0, 1.0);
  const std::vector<int> ids{2, 0, 2, 1};
  const std::vector<int> targets{1, -1, 3};
  const std::vector<int> picks{3, 0, 1};

  using OpFn = std::function<Var(Var x, Var y, Var row, Var pos)>;
  const std::vector<std::pair<std::string, OpFn>> ops = {
      {"add", [](Var x, Var, Var row, Var) { return add(x, row); }},
      {"sub", [](Var x, Var y, Var, Var) { return sub(x, y); }},
      {"mul", [](Var x, Var y, Var, Var) { return mul(x, y); }},
      {"mul_broadcast", [](Var x, Var, Var row, Var) { return mul(x, row); }},
      {"scale", [](Var x, Var, Var, Var) { return scale(x, -2.5); }},
      {"add_scalar", [](Var x, Var, Var, Var) { return add_scalar(x, 0.7); }},
      {"neg", [](Var x, Var, Var, Var) { return neg(x); }},
      {"relu", [](Var x, Var, Var, Var) { return relu(x); }},
      {"gelu", [](Var x, Var, Var, Var) { return gelu(x); }},
      {"tanh", [](Var x, Var, Var, Var) { return tanh(x); }},
      {"log", [](Var, Var, Var, Var pos) { return log(pos); }},
      {"matmul", [](Var x, Var y, Var, Var) { return matmul(x, transpose(y)); }},
      {"transpose", [](Var x, Var, Var, Var) { return reshape(transpose(x), {3, 4}); }},
      {"softmax", [](Var x, Var, Var, Var) { return softmax_lastdim(scale(x, 3.0)); }},
      {"log_softmax", [](Var x, Var, Var, Var) { return log_softmax_lastdim(x); }},
      {"layernorm", [](Var x, Var, Var row, Var) { return layernorm(x, row, mul(row, row)); }},
      {"embedding", [&ids](Var x, Var, Var, Var) { return embedding(x, ids); }},
      {"concat", [](Var x, Var y, Var, Var) { return concat_lastdim({x, slice_lastdim(y, 1, 3), x}); }},
      {"slice", [](Var x, Var, Var, Var) { return slice_lastdim(x, 1, 3); }},
      {"reshape", [](Var x, Var, Var, Var) { return reshape(x, {2, 6}); }},
      {"pick", [&picks](Var x, Var, Var, Var) { return pick(x, picks); }},
      {"dropout", [seed](Var x, Var, Var, Var) {
         Rng fixed(seed + 17);  // same mask on every evaluation
         return dropout(x, 0.3, fixed);
       }},
  };
  for (const auto& [name, fn] : ops) {
    auto report = check_gradients(ps, [&](Graph& g) {
      Var out = fn(g.param(ps[0]), g.param(ps[1]), g.param(ps[2]), g.param(ps[3]));
      Rng wr(seed + 5);
      Tensor w(out.shape());
      for (auto& v : w.data()) v = wr.uniform(-1.0, 1.0);
      return sum(mul(out, g.constant(w)));
    }, options);
    suite.checks.emplace_back("op." + name, std::move(report));
  }
  suite.checks.emplace_back("op.cross_entropy", check_gradients(ps, [&](Graph& g) {
    return cross_entropy(g.param(ps[0]), targets, -1);
  }, options));
  suite.checks.emplace_back("op.sum", check_gradients(ps, [&](Graph& g) { return sum(g.param(ps[1])); }, options));
  suite.checks.emplace_back("op.mean", check_gradients(ps, [&](Graph& g) {
    return mean(mul(g.param(ps[0]), g.constant(weights)));
  }, options));

  // Tiny transformer: 2 layers, d_model 16, non-trivial layernorm parameters.
  ModelConfig mc;
  mc.num_layers = 2;
  mc.num_heads = 2;
  mc.d_model = 16;
  mc.d_ff = 32;
  mc.vocab_size = 12;
  mc.max_seq_len = 12;
  mc.dropout = 0.0;
  Transformer model(mc, rng);
  for (auto& p : model.parameters()) {
    const bool ln = p.name.find(".gain") != std::string::npos || p.name.find("ln") != std::string::npos;
    for (auto& x : p.value.data()) x += ln ? rng.uniform(-0.3, 0.3) : rng.uniform(-0.1, 0.1);
  }
  TokenSequence seq;
  seq.ids = {kSos, 7, 9, 5, 11, kSep, 8, 6, kEos};
  seq.segments.assign(6, Segment::kSource);
  seq.segments.insert(seq.segments.end(), 3, Segment::kTarget);
  const auto base = AttentionMask::seq2seq(seq.segments);
  const auto overlay = base.with_masked_keys(std::vector<std::size_t>{2});
  suite.checks.emplace_back("supervised_loss", check_gradients(model.parameters(), [&](Graph& g) {
    return supervised_loss(model, g, seq, base);
  }, options));
  suite.checks.emplace_back("supervised_loss_masked", check_gradients(model.parameters(), [&](Graph& g) {
    return supervised_loss(model, g, seq, overlay);
  }, options));

  AgentConfig ac;
  ac.hidden = {8, 6};
  ac.beta = 0.1;
  ActorCritic agent(ac, rng);
  for (auto& p : agent.parameters()) {
    for (auto& x : p.value.data()) x = rng.uniform(-0.7, 0.7);
  }
  const Tensor states = random({6, ac.state_dim}, -1.0, 1.0);
  const std::vector<int> actions{0, 1, 1, 0, 0, 1};
  const std::vector<double> adv{0.3, -0.2, 0.5, 0.1, -0.4, 0.05};
  suite.checks.emplace_back("a2c_loss", check_gradients(agent.parameters(), [&](Graph& g) {
    auto policy = agent.evaluate(g, states);
    return a2c_loss(policy, actions, 0.6, adv, ac.beta, ac.value_coef).total;
  }, options));
  return suite;
}

}  // namespace maskedsum
