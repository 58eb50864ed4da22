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
#include <functional>
#include <string>
#include <vector>

#include "maskedsum/autograd.hpp"

namespace maskedsum {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative errors are taken against max(|analytic|, |numeric|, floor) so
  // that entries with vanishing gradient compare absolutely.
  double floor = 1e-6;
};

struct GradCheckBlock {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double tolerance = 0.0;

  bool passed() const;
  double max_rel_error() const;
  // Names of blocks above tolerance.
  std::vector<std::string> failures() const;
  std::string to_string() const;
};

using LossBuilder = std::function<Var(Graph&)>;

/// Compares backward() gradients of `loss` against central differences for
/// every scalar of every parameter in `params`. The builder must be a pure
/// function of the parameter values.
GradCheckReport check_gradients(ParameterSet& params, const LossBuilder& loss, const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace maskedsum
