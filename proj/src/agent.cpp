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

#include "maskedsum/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "maskedsum/errors.hpp"
#include "maskedsum/ops.hpp"

namespace maskedsum {
namespace {

std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

double read_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw DataError("bad number for " + key + ": '" + it->second + "'");
  }
}

}  // namespace

void AgentConfig::validate() const {
  if (state_dim == 0) throw UsageError("agent state_dim must be positive");
  if (beta < 0.0) throw UsageError("entropy coefficient must be nonnegative");
  if (lr < 0.0) throw UsageError("agent learning rate must be nonnegative");
  for (auto h : hidden) {
    if (h == 0) throw UsageError("agent hidden sizes must be positive");
  }
}

void AgentConfig::write(KeyValues& kv, const std::string& prefix) const {
  kv[prefix + "state_dim"] = std::to_string(state_dim);
  std::string hs;
  for (std::size_t i = 0; i < hidden.size(); ++i) hs += (i ? "," : "") + std::to_string(hidden[i]);
  kv[prefix + "hidden"] = hs;
  kv[prefix + "beta"] = format_double(beta);
  kv[prefix + "lr"] = format_double(lr);
  kv[prefix + "value_coef"] = format_double(value_coef);
  kv[prefix + "baseline"] = baseline == BaselineMode::kPreviousValue ? "previous_value" : "current_value";
}

AgentConfig AgentConfig::read(const KeyValues& kv, const std::string& prefix) {
  AgentConfig c;
  if (auto it = kv.find(prefix + "state_dim"); it != kv.end()) c.state_dim = std::stoul(it->second);
  if (auto it = kv.find(prefix + "hidden"); it != kv.end()) {
    c.hidden.clear();
    std::istringstream in(it->second);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (!item.empty()) c.hidden.push_back(std::stoul(item));
    }
  }
  c.beta = read_double(kv, prefix + "beta", c.beta);
  c.lr = read_double(kv, prefix + "lr", c.lr);
  c.value_coef = read_double(kv, prefix + "value_coef", c.value_coef);
  if (auto it = kv.find(prefix + "baseline"); it != kv.end()) {
    if (it->second == "previous_value") c.baseline = BaselineMode::kPreviousValue;
    else if (it->second == "current_value") c.baseline = BaselineMode::kCurrentValue;
    else throw DataError("unknown baseline mode '" + it->second + "'");
  }
  return c;
}

ActorCritic::ActorCritic(AgentConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  std::size_t fan_in = config_.state_dim;
  for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
    const std::size_t out = config_.hidden[i];
    Tensor w({fan_in, out}, 0.0);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : w.data()) x = rng.normal(0.0, stddev);
    const std::string p = "agent.trunk" + std::to_string(i) + ".";
    const auto wi = params_.add(p + "w", std::move(w));
    const auto bi = params_.add(p + "b", Tensor({out}, 0.0));
    trunk_.emplace_back(wi, bi);
    fan_in = out;
  }
  // Zero heads: the initial policy is uniform and the initial value is 0.
  policy_w_ = params_.add("agent.policy.w", Tensor({fan_in, 2}, 0.0));
  policy_b_ = params_.add("agent.policy.b", Tensor({2}, 0.0));
  value_w_ = params_.add("agent.value.w", Tensor({fan_in, 1}, 0.0));
  value_b_ = params_.add("agent.value.b", Tensor({1}, 0.0));
}

PolicyOutput ActorCritic::evaluate(Graph& g, const Tensor& states) {
  if (states.rank() != 2 || states.dim(1) != config_.state_dim) {
    throw DimensionError("agent expects states [T, " + std::to_string(config_.state_dim) + "], got " +
                         shape_string(states.shape()));
  }
  const std::size_t T = states.dim(0);
  Var h = g.constant(states);
  for (const auto& [w, b] : trunk_) h = tanh(add(matmul(h, g.param(params_[w])), g.param(params_[b])));
  Var logits = add(matmul(h, g.param(params_[policy_w_])), g.param(params_[policy_b_]));
  PolicyOutput out;
  out.log_probs = log_softmax_lastdim(logits);
  out.probs = softmax_lastdim(logits);
  out.values = reshape(add(matmul(h, g.param(params_[value_w_])), g.param(params_[value_b_])), {T});
  const auto& p = out.probs.value();
  out.distribution.probs.resize(T);
  for (std::size_t t = 0; t < T; ++t) out.distribution.probs[t] = {p.at(t, 0), p.at(t, 1)};
  return out;
}

std::vector<int> ActorCritic::sample(const PolicyDistribution& dist, Rng& rng) {
  std::vector<int> actions(dist.size());
  for (std::size_t t = 0; t < dist.size(); ++t) {
    actions[t] = rng.uniform() < dist.p_mask(t) ? kActionMask : kActionAttend;
  }
  return actions;
}

std::vector<int> ActorCritic::greedy(const PolicyDistribution& dist) {
  std::vector<int> actions(dist.size());
  for (std::size_t t = 0; t < dist.size(); ++t) {
    actions[t] = dist.p_mask(t) > dist.p_attend(t) ? kActionMask : kActionAttend;
  }
  return actions;
}

std::vector<double> advantage(double reward, std::span<const double> baseline) {
  std::vector<double> a(baseline.size());
  for (std::size_t t = 0; t < a.size(); ++t) a[t] = reward - baseline[t];
  return a;
}

std::vector<double> BaselineCache::baseline(const std::string& example_id, std::span<const double> current) const {
  if (mode_ == BaselineMode::kPreviousValue) {
    auto it = cache_.find(example_id);
    if (it != cache_.end() && it->second.size() == current.size()) return it->second;
  }
  return {current.begin(), current.end()};
}

void BaselineCache::update(const std::string& example_id, std::span<const double> values) {
  cache_[example_id].assign(values.begin(), values.end());
}

A2CLoss a2c_loss(const PolicyOutput& policy, std::span<const int> actions, double reward,
                 std::span<const double> advantages, double beta, double value_coef) {
  const std::size_t T = actions.size();
  if (T == 0) throw DataError("a2c_loss on an empty trajectory");
  if (advantages.size() != T || policy.values.size() != T) {
    throw DimensionError("a2c_loss: " + std::to_string(T) + " actions, " + std::to_string(advantages.size()) +
                         " advantages, " + std::to_string(policy.values.size()) + " values");
  }
  Graph& g = policy.values.graph();
  const double c = 1.0 / (2.0 * static_cast<double>(T));
  Var adv = g.constant(Tensor::vector({advantages.begin(), advantages.end()}));
  A2CLoss loss;
  loss.actor = scale(sum(mul(pick(policy.log_probs, actions), adv)), -c);
  Var err = add_scalar(neg(policy.values), reward);
  loss.critic = scale(sum(mul(err, err)), c);
  loss.entropy = scale(sum(mul(policy.probs, policy.log_probs)), c);
  loss.total = add(add(loss.actor, scale(loss.critic, value_coef)), scale(loss.entropy, beta));
  return loss;
}

void agent_update(Graph& g, const A2CLoss& loss, ActorCritic& agent, Adam& optimizer) {
  auto& params = agent.parameters();
  params.zero_grad();
  g.backward(loss.total);
  optimizer.step(params);
  params.zero_grad();
}

bool apply_guard(std::vector<int>& actions, std::span<const double> attention_received) {
  if (actions.empty()) return false;
  if (std::any_of(actions.begin(), actions.end(), [](int a) { return a == kActionAttend; })) return false;
  if (attention_received.size() != actions.size()) {
    throw DimensionError("guard: attention for " + std::to_string(attention_received.size()) + " of " +
                         std::to_string(actions.size()) + " tokens");
  }
  const auto top = std::max_element(attention_received.begin(), attention_received.end()) - attention_received.begin();
  actions[static_cast<std::size_t>(top)] = kActionAttend;
  return true;
}

double Trajectory::masked_fraction() const {
  if (actions.empty()) return 0.0;
  const auto masked = std::count(actions.begin(), actions.end(), kActionMask);
  return static_cast<double>(masked) / static_cast<double>(actions.size());
}

Trajectory make_trajectory(std::string example_id, const Tensor& states, const PolicyOutput& policy,
                           std::vector<int> actions) {
  Trajectory tr;
  tr.example_id = std::move(example_id);
  tr.states = states;
  const std::size_t T = actions.size();
  const auto& lp = policy.log_probs.value();
  const auto& p = policy.probs.value();
  const auto& v = policy.values.value();
  for (std::size_t t = 0; t < T; ++t) {
    tr.log_probs.push_back(lp.at(t, static_cast<std::size_t>(actions[t])));
    tr.values.push_back(v[t]);
    tr.entropy_terms.push_back(p.at(t, 0) * lp.at(t, 0) + p.at(t, 1) * lp.at(t, 1));
  }
  tr.actions = std::move(actions);
  return tr;
}

SalienceBandit::SalienceBandit(std::size_t num_examples, std::size_t tokens, std::size_t state_dim,
                               std::uint64_t seed) {
  if (tokens < 2 || state_dim == 0 || num_examples == 0) throw UsageError("degenerate bandit configuration");
  Rng rng(seed);
  for (std::size_t e = 0; e < num_examples; ++e) {
    Episode ep;
    ep.example_id = "bandit-" + std::to_string(e);
    ep.states = Tensor({tokens, state_dim}, 0.0);
    ep.salient.resize(tokens);
    // At least one token of each kind.
    ep.salient[0] = true;
    ep.salient[1] = false;
    for (std::size_t t = 2; t < tokens; ++t) ep.salient[t] = rng.bernoulli(0.5);
    std::vector<bool> shuffled = ep.salient;
    for (std::size_t i = tokens; i > 1; --i) {
      const auto j = rng.index(i);
      const bool tmp = shuffled[i - 1];
      shuffled[i - 1] = shuffled[j];
      shuffled[j] = tmp;
    }
    ep.salient = shuffled;
    for (std::size_t t = 0; t < tokens; ++t) {
      ep.states.at(t, 0) = (ep.salient[t] ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
      for (std::size_t f = 1; f < state_dim; ++f) ep.states.at(t, f) = rng.uniform(-1.0, 1.0);
    }
    episodes_.push_back(std::move(ep));
  }
}

double SalienceBandit::reward(const Episode& ep, std::span<const int> actions) {
  double salient = 0, noise = 0, salient_on = 0, noise_on = 0;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    const bool on = actions[t] == kActionAttend;
    if (ep.salient[t]) {
      ++salient;
      salient_on += on;
    } else {
      ++noise;
      noise_on += on;
    }
  }
  return salient_on / salient - noise_on / noise;
}

BanditRun run_bandit(const AgentConfig& config, std::size_t episodes, std::size_t window, std::uint64_t seed) {
  Rng rng(seed);
  SalienceBandit env(16, 8, config.state_dim, seed ^ 0x5eed5eedULL);
  ActorCritic agent(config, rng);
  Adam adam({.lr = config.lr});
  BaselineCache cache(config.baseline);
  BanditRun run;
  for (std::size_t e = 0; e < episodes; ++e) {
    const auto& ep = env.episode(rng.index(env.size()));
    Graph g;
    auto policy = agent.evaluate(g, ep.states);
    auto actions = ActorCritic::sample(policy.distribution, rng);
    const double r = SalienceBandit::reward(ep, actions);
    const auto& values = policy.values.value().values();
    const auto base = cache.baseline(ep.example_id, values);
    const auto adv = advantage(r, base);
    auto loss = a2c_loss(policy, actions, r, adv, config.beta, config.value_coef);
    agent_update(g, loss, agent, adam);
    cache.update(ep.example_id, values);
    run.rewards.push_back(r);
  }
  const std::size_t w = std::min(window, run.rewards.size());
  if (w > 0) {
    run.final_mean = std::accumulate(run.rewards.end() - static_cast<std::ptrdiff_t>(w), run.rewards.end(), 0.0) /
                     static_cast<double>(w);
  }
  return run;
}

}  // namespace maskedsum
