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

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "maskedsum/autograd.hpp"
#include "maskedsum/checkpoint.hpp"
#include "maskedsum/optim.hpp"
#include "maskedsum/rng.hpp"

namespace maskedsum {

// Action encoding: index 0 closes the token (mask), index 1 keeps it (attend).
inline constexpr int kActionMask = 0;
inline constexpr int kActionAttend = 1;

enum class BaselineMode { kPreviousValue, kCurrentValue };

struct AgentConfig {
  std::size_t state_dim = 5;
  std::vector<std::size_t> hidden{32};
  double beta = 0.01;  // entropy coefficient
  double lr = 1e-3;
  double value_coef = 1.0;
  BaselineMode baseline = BaselineMode::kPreviousValue;

  void validate() const;
  void write(KeyValues& kv, const std::string& prefix = "agent.") const;
  static AgentConfig read(const KeyValues& kv, const std::string& prefix = "agent.");
};

struct PolicyDistribution {
  // probs[t] = {p_mask, p_attend}
  std::vector<std::array<double, 2>> probs;

  std::size_t size() const { return probs.size(); }
  double p_mask(std::size_t t) const { return probs[t][kActionMask]; }
  double p_attend(std::size_t t) const { return probs[t][kActionAttend]; }
};

/// Graph outputs of one evaluation of the actor-critic network.
struct PolicyOutput {
  Var log_probs;  // [T, 2]
  Var probs;      // [T, 2]
  Var values;     // [T]
  PolicyDistribution distribution;
};

/// Shared tanh trunk with a two-way policy head and a scalar value head,
/// applied independently to every token state.
class ActorCritic {
 public:
  ActorCritic(AgentConfig config, Rng& init_rng);

  const AgentConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  PolicyOutput evaluate(Graph& g, const Tensor& states);

  // Independent per-token draws.
  static std::vector<int> sample(const PolicyDistribution& dist, Rng& rng);
  // Most likely action per token; ties keep the token.
  static std::vector<int> greedy(const PolicyDistribution& dist);

  std::size_t policy_weight_index() const { return policy_w_; }
  std::size_t policy_bias_index() const { return policy_b_; }
  std::size_t value_weight_index() const { return value_w_; }
  std::size_t value_bias_index() const { return value_b_; }

 private:
  AgentConfig config_;
  ParameterSet params_;
  std::vector<std::pair<std::size_t, std::size_t>> trunk_;
  std::size_t policy_w_, policy_b_, value_w_, value_b_;
};

/// Episodic advantage: Q(s_t, a_t) = R for every t, A_t = R - b_t.
std::vector<double> advantage(double reward, std::span<const double> baseline);

/// Previous-episode critic values per example id.
class BaselineCache {
 public:
  explicit BaselineCache(BaselineMode mode = BaselineMode::kPreviousValue) : mode_(mode) {}

  // Cached values from the last episode of this example when available and
  // of matching length, otherwise the current values.
  std::vector<double> baseline(const std::string& example_id, std::span<const double> current_values) const;
  void update(const std::string& example_id, std::span<const double> values);
  void reset() { cache_.clear(); }
  std::size_t size() const { return cache_.size(); }

 private:
  BaselineMode mode_;
  std::map<std::string, std::vector<double>> cache_;
};

struct A2CLoss {
  Var total;
  Var actor;
  Var critic;
  Var entropy;
};

/// total = actor + value_coef * critic + beta * entropy with
///   actor   = -(1/2T) sum_t log pi(a_t|s_t) * A_t          (A_t constant)
///   critic  =  (1/2T) sum_t (R - V(s_t))^2
///   entropy =  (1/2T) sum_t sum_i P_t(i) log P_t(i)
A2CLoss a2c_loss(const PolicyOutput& policy, std::span<const int> actions, double reward,
                 std::span<const double> advantages, double beta, double value_coef = 1.0);

/// One Adam step on the agent's parameters from `loss.total`.
void agent_update(Graph& g, const A2CLoss& loss, ActorCritic& agent, Adam& optimizer);

/// Keeps at least one token open: if every action masks, the token with the
/// largest `attention_received` is flipped to attend. Returns true if applied.
bool apply_guard(std::vector<int>& actions, std::span<const double> attention_received);

struct Trajectory {
  std::string example_id;
  Tensor states;
  std::vector<int> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> baseline;
  double reward = 0.0;
  std::vector<double> advantages;
  std::vector<double> entropy_terms;  // sum_i P log P per token

  std::size_t length() const { return actions.size(); }
  double masked_fraction() const;
};

/// Fills the per-token fields of a trajectory from a policy evaluation.
Trajectory make_trajectory(std::string example_id, const Tensor& states, const PolicyOutput& policy,
                           std::vector<int> actions);

/// Toy environment: tokens are salient or noise, states encode saliency
/// linearly in feature 0, and reward = fraction of salient tokens attended
/// minus fraction of noise tokens attended (optimum 1).
class SalienceBandit {
 public:
  struct Episode {
    std::string example_id;
    Tensor states;
    std::vector<bool> salient;
  };

  SalienceBandit(std::size_t num_examples, std::size_t tokens, std::size_t state_dim, std::uint64_t seed);

  const Episode& episode(std::size_t i) const { return episodes_[i % episodes_.size()]; }
  std::size_t size() const { return episodes_.size(); }
  static double reward(const Episode& ep, std::span<const int> actions);
  static constexpr double optimal_reward() { return 1.0; }

 private:
  std::vector<Episode> episodes_;
};

struct BanditRun {
  std::vector<double> rewards;
  double final_mean = 0.0;  // mean over the final window
};

/// A2C on the bandit for `episodes` steps; final_mean over the last `window`.
BanditRun run_bandit(const AgentConfig& config, std::size_t episodes, std::size_t window, std::uint64_t seed);

}  // namespace maskedsum
