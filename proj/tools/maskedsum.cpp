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

// Command-line front end for the maskedsum workflow.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "maskedsum/errors.hpp"
#include "maskedsum/pipeline.hpp"

namespace fs = std::filesystem;
using namespace maskedsum;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::string short_weights(const RewardWeights& w) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%g,%g,%g", w.rouge1, w.rouge2, w.rougeL);
  return buf;
}

// Flags shared by every command. Values only override the config when given.
struct Common {
  std::string config_path;
  std::uint64_t seed = RunConfig{}.seed;
  std::string out = "out";
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;

  void attach(CLI::App* cmd, bool with_out = true) {
    cmd->add_option("--config", config_path, "key=value run config file");
    seed_opt = cmd->add_option("--seed", seed, "random seed (overrides the config)")->capture_default_str();
    if (with_out) out_opt = cmd->add_option("--out", out, "output directory")->capture_default_str();
  }

  RunConfig load() const {
    RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    apply_seed(c);
    return c;
  }

  void apply_seed(RunConfig& c) const {
    if (seed_opt->count() > 0) c.seed = seed;
  }
};

struct ModelFlags {
  std::string reward_weights;
  CLI::Option* weights_opt = nullptr;

  void attach(CLI::App* cmd) {
    weights_opt = cmd->add_option("--reward-weights", reward_weights, "ROUGE-1,ROUGE-2,ROUGE-L reward weights")
                      ->default_str(short_weights(RewardWeights{}));
  }
  void apply(RunConfig& c) const {
    if (weights_opt->count() > 0) c.reward_weights = RewardWeights::parse(reward_weights);
  }
};

struct TextRankFlags {
  std::size_t k = RunConfig{}.textrank_k;
  bool hash_embeddings = false;
  std::string embeddings;
  CLI::Option* k_opt = nullptr;
  CLI::Option* emb_opt = nullptr;

  void attach(CLI::App* cmd) {
    k_opt = cmd->add_option("--k", k, "sentences per TextRank summary")->capture_default_str();
    auto* hash = cmd->add_flag("--hash-embeddings", hash_embeddings,
                               "deterministic hashed word vectors (default unless --embeddings)");
    emb_opt = cmd->add_option("--embeddings", embeddings, "word vector file: word v1 v2 ... per line");
    hash->excludes(emb_opt);
  }
  void apply(RunConfig& c) const {
    if (k_opt->count() > 0) c.textrank_k = k;
    if (emb_opt->count() > 0) c.embeddings_path = embeddings;
    if (hash_embeddings) c.embeddings_path.clear();
  }
};

void log_seed(const RunConfig& c) { std::fprintf(stderr, "seed %llu\n", static_cast<unsigned long long>(c.seed)); }

fs::path vocab_beside(const std::string& checkpoint) { return fs::path(checkpoint).parent_path() / "vocab.txt"; }

Vocab load_vocab(const std::string& explicit_path, const std::string& checkpoint) {
  const fs::path path = explicit_path.empty() ? vocab_beside(checkpoint) : fs::path(explicit_path);
  if (!fs::exists(path)) throw DataError("vocabulary not found: " + path.string());
  return Vocab::load_file(path);
}

void write_resolved_config(const fs::path& out, const RunConfig& c) {
  fs::create_directories(out);
  std::ofstream f(out / "config.txt", std::ios::binary);
  if (!f) throw DataError("cannot write " + (out / "config.txt").string());
  write_key_values(f, c.to_key_values());
}

// Test split of a corpus directory, or every example of a single file.
std::vector<Example> evaluation_split(const std::string& path) {
  if (fs::is_directory(path)) return load_corpus(path).test;
  return load_jsonl(path);
}

// One document per line; .jsonl inputs contribute their articles.
std::vector<std::string> read_documents(const std::string& path) {
  if (fs::path(path).extension() == ".jsonl") {
    std::vector<std::string> docs;
    for (auto& ex : load_jsonl(path)) docs.push_back(std::move(ex.article));
    return docs;
  }
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input " + path);
  std::vector<std::string> docs;
  for (std::string line; std::getline(in, line);) docs.push_back(line);
  return docs;
}

int run(int argc, char** argv) {
  CLI::App app{"maskedsum: transformer summarizer with a learned attention-mask agent"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // build-vocab
  auto* bv = app.add_subcommand("build-vocab", "build the vocabulary of a corpus' training split");
  Common bv_common;
  bv_common.attach(bv);
  std::string bv_corpus;
  bv->add_option("--corpus", bv_corpus, "corpus directory or .jsonl file")->required();

  // gen-synthetic
  auto* gs = app.add_subcommand("gen-synthetic", "write a synthetic salient/noise corpus");
  Common gs_common;
  gs_common.attach(gs);
  SyntheticSpec spec;
  gs->add_option("--num-examples", spec.num_examples, "examples over all splits")->capture_default_str();
  gs->add_option("--vocab-size", spec.vocab_size, "distinct words in the generated text")->capture_default_str();
  gs->add_option("--min-sentences", spec.min_sentences, "sentences per article, lower bound")->capture_default_str();
  gs->add_option("--max-sentences", spec.max_sentences, "sentences per article, upper bound")->capture_default_str();
  gs->add_option("--salient", spec.salient, "salient sentences per article")->capture_default_str();
  gs->add_option("--noise-rate", spec.noise_token_rate, "chance of a noise word after each salient word")
      ->capture_default_str();
  gs->add_option("--distractor-rate", spec.distractor_rate, "share of noise words drawn from subject/object slots")
      ->capture_default_str();
  bool no_paraphrase = false;
  gs->add_flag("--no-paraphrase", no_paraphrase, "copy verbs into summaries instead of synonyms");

  // stats
  auto* st = app.add_subcommand("stats", "print corpus statistics");
  Common st_common;
  st_common.attach(st);
  std::string st_corpus, st_vocab;
  std::size_t st_bin = 16;
  st->add_option("--corpus", st_corpus, "corpus directory or .jsonl file")->required();
  st->add_option("--vocab", st_vocab, "vocabulary for coverage figures");
  st->add_option("--bin-width", st_bin, "token-length histogram bin width")->capture_default_str();

  // train-supervised
  auto* ts = app.add_subcommand("train-supervised", "teacher-forced training of the summarizer");
  Common ts_common;
  ts_common.attach(ts);
  ModelFlags ts_model;
  ts_model.attach(ts);
  std::string ts_corpus, ts_vocab;
  ts->add_option("--corpus", ts_corpus, "corpus directory or .jsonl file");
  ts->add_option("--vocab", ts_vocab, "existing vocabulary (default: built from the training split)");

  // train-rl
  auto* tr = app.add_subcommand("train-rl", "actor-critic training of the mask agent");
  Common tr_common;
  tr_common.attach(tr);
  ModelFlags tr_model;
  tr_model.attach(tr);
  std::string tr_corpus, tr_checkpoint, tr_vocab, tr_joint;
  tr->add_option("--corpus", tr_corpus, "corpus directory or .jsonl file");
  tr->add_option("--checkpoint", tr_checkpoint, "supervised checkpoint");
  tr->add_option("--vocab", tr_vocab, "vocabulary (default: vocab.txt beside the checkpoint)");
  tr->add_option("--joint-finetune", tr_joint, "also update the summarizer under sampled masks")
      ->check(CLI::IsMember({"true", "false"}))
      ->default_str(RunConfig{}.joint_finetune ? "true" : "false");

  // summarize
  auto* sm = app.add_subcommand("summarize", "print one summary line per input document");
  Common sm_common;
  sm_common.attach(sm, false);
  std::string sm_input, sm_checkpoint, sm_vocab;
  bool sm_no_agent = false;
  sm->add_option("--input", sm_input, "one document per line, or a .jsonl corpus file")->required();
  sm->add_option("--checkpoint", sm_checkpoint, "supervised or RL checkpoint")->required();
  sm->add_option("--vocab", sm_vocab, "vocabulary (default: vocab.txt beside the checkpoint)");
  sm->add_flag("--no-agent", sm_no_agent, "ignore the agent stored in an RL checkpoint");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "ROUGE report: baseline / model / model+agent / oracle");
  Common ev_common;
  ev_common.attach(ev);
  ModelFlags ev_model;
  ev_model.attach(ev);
  TextRankFlags ev_tr;
  ev_tr.attach(ev);
  std::string ev_corpus, ev_checkpoint, ev_vocab, ev_agent;
  ev->add_option("--corpus", ev_corpus, "corpus directory (test split) or .jsonl file");
  ev->add_option("--checkpoint", ev_checkpoint, "model checkpoint; RL checkpoints also fill the model+agent row");
  ev->add_option("--agent-checkpoint", ev_agent, "take the agent from this RL checkpoint instead");
  ev->add_option("--vocab", ev_vocab, "vocabulary (default: vocab.txt beside the checkpoint)");

  // baseline-textrank
  auto* bt = app.add_subcommand("baseline-textrank", "extractive TextRank summaries and their ROUGE");
  Common bt_common;
  bt_common.attach(bt);
  ModelFlags bt_model;
  bt_model.attach(bt);
  TextRankFlags bt_tr;
  bt_tr.attach(bt);
  std::string bt_corpus;
  bt->add_option("--corpus", bt_corpus, "corpus directory (test split) or .jsonl file");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  Common gc_common;
  gc_common.attach(gc, false);
  double gc_tol = GradCheckOptions{}.tolerance;
  gc->add_option("--tolerance", gc_tol, "maximum relative error")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (bv->parsed()) {
    RunConfig c = bv_common.load();
    log_seed(c);
    const auto corpus = load_corpus(bv_corpus);
    const auto vocab = build_corpus_vocab(corpus.train, c);
    fs::create_directories(bv_common.out);
    vocab.save_file(fs::path(bv_common.out) / "vocab.txt");
    std::printf("vocab_size %zu\n", vocab.size());
  } else if (gs->parsed()) {
    RunConfig c = gs_common.load();
    log_seed(c);
    spec.seed = c.seed;
    spec.paraphrase = !no_paraphrase;
    const auto corpus = generate_synthetic(spec);
    write_corpus(gs_common.out, corpus);
    KeyValues kv;
    spec.write(kv);
    std::ofstream f(fs::path(gs_common.out) / "synthetic.txt", std::ios::binary);
    write_key_values(f, kv);
    std::printf("train %zu val %zu test %zu\n", corpus.train.size(), corpus.val.size(), corpus.test.size());
  } else if (st->parsed()) {
    RunConfig c = st_common.load();
    log_seed(c);
    const auto corpus = load_corpus(st_corpus);
    std::optional<Vocab> vocab;
    if (!st_vocab.empty()) vocab = Vocab::load_file(st_vocab);
    std::string text;
    const std::pair<const char*, const std::vector<Example>*> splits[] = {
        {"train", &corpus.train}, {"val", &corpus.val}, {"test", &corpus.test}};
    for (const auto& [name, examples] : splits) {
      text += format_stats(name, compute_stats(*examples, vocab ? &*vocab : nullptr, st_bin));
    }
    std::fputs(text.c_str(), stdout);
    if (st_common.out_opt->count() > 0) {
      fs::create_directories(st_common.out);
      std::ofstream f(fs::path(st_common.out) / "stats.txt", std::ios::binary);
      f << text;
    }
  } else if (ts->parsed()) {
    RunConfig c = ts_common.load();
    ts_model.apply(c);
    if (!ts_corpus.empty()) c.corpus_path = ts_corpus;
    if (c.corpus_path.empty()) throw UsageError("train-supervised needs --corpus (or paths.corpus in the config)");
    log_seed(c);
    const auto corpus = load_corpus(c.corpus_path);
    const Vocab vocab = ts_vocab.empty() ? build_corpus_vocab(corpus.train, c) : Vocab::load_file(ts_vocab);
    const auto report = train_supervised(c, corpus, vocab, ts_common.out);
    std::fprintf(stderr, "supervised phase: %.1f s\n", report.seconds);
    std::printf("best_epoch %zu val_rouge1 %.4f val_reward %.4f\n", report.best_epoch, report.best_val.rouge1.f1,
                report.best_val_reward);
  } else if (tr->parsed()) {
    std::string checkpoint = tr_checkpoint;
    RunConfig c = tr_common.load();
    if (checkpoint.empty()) checkpoint = c.checkpoint_path;
    if (checkpoint.empty()) throw UsageError("train-rl needs --checkpoint (or paths.checkpoint in the config)");
    auto loaded = load_run_checkpoint(checkpoint);
    if (tr_common.config_path.empty()) {
      c = loaded.config;
      tr_common.apply_seed(c);
    }
    c.model = loaded.model->config();
    c.checkpoint_path = checkpoint;
    tr_model.apply(c);
    if (!tr_joint.empty()) c.joint_finetune = tr_joint == "true";
    if (!tr_corpus.empty()) c.corpus_path = tr_corpus;
    if (c.corpus_path.empty()) throw UsageError("train-rl needs --corpus (or paths.corpus in the config)");
    log_seed(c);
    const auto corpus = load_corpus(c.corpus_path);
    const Vocab vocab = load_vocab(tr_vocab, checkpoint);
    const auto report = train_rl(c, corpus, vocab, *loaded.model, tr_common.out);
    vocab.save_file(fs::path(tr_common.out) / "vocab.txt");
    std::fprintf(stderr, "rl phase: %.1f s\n", report.seconds);
    std::printf("supervised_val_reward %.4f final_val_reward %.4f\n", report.supervised_val_reward,
                report.final_val_reward);
  } else if (sm->parsed()) {
    auto loaded = load_run_checkpoint(sm_checkpoint);
    RunConfig c = loaded.config;
    if (!sm_common.config_path.empty()) {
      c = RunConfig::load(sm_common.config_path);
      c.model = loaded.model->config();
    }
    sm_common.apply_seed(c);
    c.resolve();
    log_seed(c);
    const Vocab vocab = load_vocab(sm_vocab, sm_checkpoint);
    ActorCritic* agent = (loaded.agent && !sm_no_agent) ? &*loaded.agent : nullptr;
    for (const auto& doc : read_documents(sm_input)) {
      const auto out = summarize(*loaded.model, vocab, c, doc, agent);
      std::printf("%s\n", out.text.c_str());
    }
  } else if (ev->parsed()) {
    RunConfig c = ev_common.load();
    std::optional<LoadedCheckpoint> model_ck, agent_ck;
    std::optional<Vocab> vocab;
    if (!ev_checkpoint.empty()) {
      model_ck = load_run_checkpoint(ev_checkpoint);
      if (ev_common.config_path.empty()) {
        c = model_ck->config;
        ev_common.apply_seed(c);
      }
      c.model = model_ck->model->config();
      vocab = load_vocab(ev_vocab, ev_checkpoint);
    }
    if (!ev_agent.empty()) {
      if (!model_ck) throw UsageError("--agent-checkpoint needs --checkpoint");
      agent_ck = load_run_checkpoint(ev_agent);
      if (!agent_ck->agent) throw DataError("no agent parameters in " + ev_agent);
    }
    ev_model.apply(c);
    ev_tr.apply(c);
    if (!ev_corpus.empty()) c.corpus_path = ev_corpus;
    if (c.corpus_path.empty()) throw UsageError("evaluate needs --corpus (or paths.corpus in the config)");
    c.resolve();
    log_seed(c);
    const auto test = evaluation_split(c.corpus_path);
    ActorCritic* agent = nullptr;
    if (agent_ck) agent = &*agent_ck->agent;
    else if (model_ck && model_ck->agent) agent = &*model_ck->agent;
    const auto emb = make_embeddings(c);
    write_resolved_config(ev_common.out, c);
    const auto report = evaluate(c, test, model_ck ? &*model_ck->model : nullptr, agent, vocab ? &*vocab : nullptr,
                                 emb, ev_common.out);
    std::fputs(report.table().c_str(), stdout);
  } else if (bt->parsed()) {
    RunConfig c = bt_common.load();
    bt_model.apply(c);
    bt_tr.apply(c);
    if (!bt_corpus.empty()) c.corpus_path = bt_corpus;
    if (c.corpus_path.empty()) throw UsageError("baseline-textrank needs --corpus (or paths.corpus in the config)");
    log_seed(c);
    const auto test = evaluation_split(c.corpus_path);
    if (test.empty()) throw DataError("no documents in " + c.corpus_path);
    std::size_t iterations = 0;
    const auto summaries = textrank_summaries(test, c, make_embeddings(c), &iterations);
    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t i = 0; i < test.size(); ++i) pairs.emplace_back(summaries[i], test[i].summary);
    const auto scores = corpus_eval(pairs, c.reward_weights);
    write_resolved_config(bt_common.out, c);
    const fs::path out(bt_common.out);
    std::ofstream sf(out / "summaries_baseline.txt", std::ios::binary);
    for (const auto& s : summaries) sf << s << '\n';
    std::ofstream rf(out / "results_baseline.txt", std::ios::binary);
    write_results(rf, scores);
    std::fprintf(stderr, "textrank: at most %zu power iterations\n", iterations);
    std::printf("baseline rouge1 %.4f rouge2 %.4f rougeL %.4f\n", scores.mean.rouge1.f1, scores.mean.rouge2.f1,
                scores.mean.rougeL.f1);
  } else if (gc->parsed()) {
    RunConfig c = gc_common.load();
    log_seed(c);
    GradCheckOptions options;
    options.tolerance = gc_tol;
    const auto suite = run_gradcheck(c.seed, options);
    std::fputs(suite.to_string().c_str(), stdout);
    if (!suite.passed()) return kNumeric;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    // DataError and anything else that comes from the inputs.
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
}
