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

#include "maskedsum/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace maskedsum {

bool GradCheckReport::passed() const { return failures().empty(); }

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& b : blocks) worst = std::max(worst, b.max_rel_error);
  return worst;
}

std::vector<std::string> GradCheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& b : blocks) {
    if (!(b.max_rel_error <= tolerance)) out.push_back(b.name);
  }
  return out;
}

std::string GradCheckReport::to_string() const {
  std::ostringstream out;
  char line[256];
  for (const auto& b : blocks) {
    std::snprintf(line, sizeof line, "%-32s entries=%-6zu max_rel=%.3e max_abs=%.3e %s\n", b.name.c_str(), b.entries,
                  b.max_rel_error, b.max_abs_error, b.max_rel_error <= tolerance ? "ok" : "FAIL");
    out << line;
  }
  return out.str();
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport check_gradients(ParameterSet& params, const LossBuilder& loss, const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = options.tolerance;

  params.zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }

  auto evaluate = [&loss] {
    Graph g(false);
    return loss(g).value().item();
  };

  for (auto& p : params) {
    GradCheckBlock block;
    block.name = p.name;
    block.entries = p.value.size();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + options.step;
      const double up = evaluate();
      p.value[i] = saved - options.step;
      const double down = evaluate();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = p.grad[i];
      block.max_abs_error = std::max(block.max_abs_error, std::abs(analytic - numeric));
      const double rel = relative_error(analytic, numeric, options.floor);
      // NaN propagates as a failure.
      if (!(rel <= block.max_rel_error)) block.max_rel_error = std::isnan(rel) ? INFINITY : rel;
    }
    report.blocks.push_back(std::move(block));
  }
  params.zero_grad();
  return report;
}

}  // namespace maskedsum
