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
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "maskedsum/tensor.hpp"

namespace maskedsum {

/// A named learnable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Set once a backward pass has written into grad.
  bool has_grad = false;
};

/// Ordered collection of parameters owned by a model. Modules refer to their
/// parameters by index so that copies of a model stay self-consistent.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor init);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }
  std::size_t num_scalars() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  // Gradient of the last backward pass; zeros if the node received none.
  Tensor grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Backward rule: reads the node's upstream gradient and accumulates into the
/// gradients of its inputs via Graph::grad_buffer.
using BackwardFn = std::function<void(Graph&, std::size_t self)>;

/// Define-by-run tape. Nodes are appended in creation order, which is a
/// topological order, and backward walks them in reverse exactly once.
class Graph {
 public:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<double> grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  // With record=false no backward closures are kept (inference mode).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad);
  Var param(Parameter& p);

  // Appends an op node. The node requires grad iff recording is on and any
  // input requires grad; otherwise `backward` is dropped.
  Var make_node(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  void backward(Var loss);
  // Clears node gradients so that backward may run again.
  void zero_grad();

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  std::span<const double> upstream(std::size_t id) const { return nodes_[id].grad; }
  // Gradient accumulator for an input node, allocated on first use. Empty
  // span if the node does not require grad.
  std::span<double> grad_buffer(std::size_t id);

 private:
  std::deque<Node> nodes_;
  bool record_;
  bool backward_done_ = false;
};

}  // namespace maskedsum
