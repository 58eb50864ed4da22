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

#include "maskedsum/autograd.hpp"

#include <algorithm>

#include "maskedsum/errors.hpp"

namespace maskedsum {

std::size_t ParameterSet::add(std::string name, Tensor init) {
  if (find(name) != nullptr) throw UsageError("duplicate parameter name: " + name);
  Parameter p;
  p.name = std::move(name);
  p.grad = Tensor(init.shape(), 0.0);
  p.value = std::move(init);
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

Parameter* ParameterSet::find(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) {
    p.grad.fill(0.0);
    p.has_grad = false;
  }
}

const Tensor& Var::value() const { return graph_->value(id_); }

bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Tensor Var::grad() const {
  const auto g = graph_->upstream(id_);
  Tensor out(shape(), 0.0);
  if (!g.empty()) std::copy(g.begin(), g.end(), out.data().begin());
  return out;
}

Var Graph::constant(Tensor value) { return leaf(std::move(value), false); }

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(Parameter& p) {
  Node n;
  n.op = "param:" + p.name;
  n.value = p.value;
  n.requires_grad = record_;
  n.param = record_ ? &p : nullptr;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::make_node(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  bool any = false;
  for (const auto& v : inputs) {
    if (&v.graph() != this) throw UsageError("op '" + n.op + "' mixes nodes from different graphs");
    n.inputs.push_back(v.id());
    any = any || nodes_[v.id()].requires_grad;
  }
  n.requires_grad = record_ && any;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Graph::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw UsageError("backward on a node of another graph");
  if (loss.size() != 1) throw DimensionError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  if (backward_done_) throw StateError("backward already ran on this graph; call zero_grad() first");
  backward_done_ = true;
  auto& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad.assign(1, 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr) continue;
    auto dst = n.param->grad.data();
    if (!n.grad.empty()) {
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    }
    n.param->has_grad = true;
  }
}

void Graph::zero_grad() {
  for (auto& n : nodes_) n.grad.clear();
  backward_done_ = false;
}

}  // namespace maskedsum
