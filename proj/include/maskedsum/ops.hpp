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
#include <span>
#include <vector>

#include "maskedsum/autograd.hpp"

namespace maskedsum {

class Rng;

// Elementwise binary ops. `b` either matches `a` exactly or broadcasts over
// the trailing axes of `a` (e.g. a [n, d] plus a bias [d]).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);
Var neg(Var a);

Var relu(Var a);
// Exact form 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(Var a);
Var tanh(Var a);
Var log(Var a);

Var matmul(Var a, Var b);
Var transpose(Var a);

Var softmax_lastdim(Var x);
Var log_softmax_lastdim(Var x);

// Normalises each last-axis slice to zero mean and unit variance, then applies
// gain and bias of shape [d].
Var layernorm(Var x, Var gain, Var bias, double eps = 1e-12);

// Rows of `table` [V, d] selected by ids; result [ids.size(), d].
Var embedding(Var table, std::span<const int> ids);

// Mean negative log-likelihood over rows whose target != ignore_index.
// logits [n, V]. Rows with ignore_index contribute zero loss and gradient.
Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index = -1);

Var concat_lastdim(const std::vector<Var>& parts);
Var slice_lastdim(Var x, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);

// Picks one entry per row: x [n, k], indices [n] -> [n].
Var pick(Var x, std::span<const int> indices);

Var sum(Var x);
Var mean(Var x);

// Value copy with no gradient path.
Var detach(Var x);

// Inverted dropout; identity when p == 0.
Var dropout(Var x, double p, Rng& rng);

}  // namespace maskedsum
