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

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "maskedsum/autograd.hpp"
#include "maskedsum/checkpoint.hpp"
#include "maskedsum/errors.hpp"
#include "maskedsum/gradcheck.hpp"
#include "maskedsum/ops.hpp"
#include "maskedsum/optim.hpp"
#include "maskedsum/rng.hpp"

namespace maskedsum {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0);
  for (auto& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

// sum(w * f(...)) with fixed random weights so every output entry gets a
// distinct upstream gradient.
Var weighted_sum(Var y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, y.graph().constant(random_tensor(y.shape(), rng))));
}

TEST(Matmul, IdentityAndHandArithmetic) {
  Graph g(false);
  auto eye = g.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  auto m = g.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(matmul(eye, m).value(), m.value());
  auto r = matmul(g.constant(Tensor::matrix({{1, 2}})), g.constant(Tensor::matrix({{3}, {4}})));
  EXPECT_EQ(r.value().shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(r.value().item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph g;
  auto a = g.constant(Tensor({2, 3}));
  auto b = g.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("and [2, 3]"), std::string::npos);
  }
}

// Hand-rolled central differences, independent of the library gradcheck.
TEST(Matmul, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  ParameterSet ps;
  ps.add("a", random_tensor({3, 4}, rng));
  ps.add("b", random_tensor({4, 2}, rng));
  auto loss = [&](Graph& g) { return weighted_sum(matmul(g.param(ps[0]), g.param(ps[1])), 99); };
  {
    Graph g;
    g.backward(loss(g));
  }
  const double h = 1e-5;
  for (auto& p : ps) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + h;
      Graph g1(false);
      const double up = loss(g1).value().item();
      p.value[i] = saved - h;
      Graph g2(false);
      const double down = loss(g2).value().item();
      p.value[i] = saved;
      const double numeric = (up - down) / (2 * h);
      EXPECT_LT(std::abs(numeric - p.grad[i]) / std::max(std::abs(numeric), 1e-8), 1e-6) << p.name << "[" << i << "]";
    }
  }
}

TEST(Softmax, Examples) {
  Graph g(false);
  auto u = softmax_lastdim(g.constant(Tensor::vector({0, 0, 0}))).value();
  for (double x : u.data()) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);

  auto s = softmax_lastdim(g.constant(Tensor::vector({0, -10000}))).value();
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_LT(s[1], 1e-4);

  auto t = softmax_lastdim(g.constant(Tensor::vector({1, 2, 3}))).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(t[i], std::exp(i + 1.0) / z, 1e-12);
}

TEST(Softmax, NonFiniteInputIsNumericError) {
  Graph g;
  EXPECT_THROW(softmax_lastdim(g.constant(Tensor::vector({0, NAN}))), NumericError);
}

TEST(Softmax, RowsNormalisedAndShiftInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng.index(5), n = 1 + rng.index(9);
    Tensor x = random_tensor({rows, n}, rng, -20, 20);
    Tensor shifted = x;
    for (std::size_t r = 0; r < rows; ++r) {
      const double c = rng.uniform(-50, 50);
      for (std::size_t j = 0; j < n; ++j) shifted.at(r, j) += c;
    }
    Graph g(false);
    auto y = softmax_lastdim(g.constant(x)).value();
    auto ys = softmax_lastdim(g.constant(shifted)).value();
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(y.at(r, j), 0.0);
        total += y.at(r, j);
        EXPECT_NEAR(y.at(r, j), ys.at(r, j), 1e-9);
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(LayerNorm, UnitGainOutputIsStandardised) {
  Rng rng(5);
  Graph g(false);
  const std::size_t d = 16;
  auto x = g.constant(random_tensor({6, d}, rng, -3, 7));
  auto y = layernorm(x, g.constant(Tensor({d}, 1.0)), g.constant(Tensor({d}, 0.0))).value();
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < d; ++j) mu += y.at(r, j);
    mu /= d;
    for (std::size_t j = 0; j < d; ++j) var += (y.at(r, j) - mu) * (y.at(r, j) - mu);
    var /= d;
    EXPECT_LT(std::abs(mu), 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(Backward, SumAndSquare) {
  ParameterSet ps;
  ps.add("w", Tensor::vector({0.5, -1.0, 3.0}));
  {
    Graph g;
    g.backward(sum(g.param(ps[0])));
  }
  EXPECT_EQ(ps[0].grad, Tensor::vector({1, 1, 1}));

  ParameterSet sq;
  sq.add("w", Tensor::vector({1, 2}));
  Graph g;
  auto w = g.param(sq[0]);
  g.backward(sum(mul(w, w)));
  EXPECT_EQ(sq[0].grad, Tensor::vector({2, 4}));
}

TEST(Backward, RejectsNonScalarAndSecondCall) {
  ParameterSet ps;
  ps.add("w", Tensor::vector({1, 2}));
  Graph g;
  auto w = g.param(ps[0]);
  EXPECT_THROW(g.backward(w), DimensionError);
  auto loss = sum(w);
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), StateError);
  g.zero_grad();
  EXPECT_NO_THROW(g.backward(loss));
  EXPECT_EQ(ps[0].grad, Tensor::vector({2, 2}));
}

TEST(Backward, EveryReachableParameterGetsGrad) {
  ParameterSet ps;
  ps.add("used", Tensor::vector({1, 2}));
  ps.add("also", Tensor::vector({3}));
  Graph g;
  g.backward(add(sum(g.param(ps[0])), sum(g.param(ps[1]))));
  for (const auto& p : ps) EXPECT_TRUE(p.has_grad) << p.name;
}

TEST(Backward, GradientLinearityAcrossGraphs) {
  Rng rng(11);
  ParameterSet ps;
  ps.add("w", random_tensor({3, 3}, rng));
  auto f1 = [&](Graph& g) { return weighted_sum(tanh(g.param(ps[0])), 1); };
  auto f2 = [&](Graph& g) { return weighted_sum(gelu(g.param(ps[0])), 2); };

  {
    Graph g;
    g.backward(add(f1(g), f2(g)));
  }
  const Tensor joint = ps[0].grad;
  ps.zero_grad();
  {
    Graph g;
    g.backward(f1(g));
  }
  {
    Graph g;
    g.backward(f2(g));
  }
  EXPECT_EQ(ps[0].grad, joint);
}

TEST(Backward, TwoLayerMlpMatchesFiniteDifferences) {
  Rng rng(21);
  ParameterSet ps;
  ps.add("w1", random_tensor({5, 8}, rng));
  ps.add("b1", random_tensor({8}, rng));
  ps.add("w2", random_tensor({8, 3}, rng));
  ps.add("b2", random_tensor({3}, rng));
  const Tensor x = random_tensor({4, 5}, rng);
  const std::vector<int> y{0, 2, 1, 2};
  auto loss = [&](Graph& g) {
    auto h = tanh(add(matmul(g.constant(x), g.param(ps[0])), g.param(ps[1])));
    return cross_entropy(add(matmul(h, g.param(ps[2])), g.param(ps[3])), y);
  };
  GradCheckOptions opts;
  opts.tolerance = 1e-5;
  auto report = check_gradients(ps, loss, opts);
  EXPECT_TRUE(report.passed()) << report.to_string();
}

// Every differentiable op on random inputs, relative error < 1e-5.
class OpGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const std::string op = GetParam();
  Rng rng(std::hash<std::string>{}(op) % 1000);
  ParameterSet ps;
  ps.add("x", random_tensor({3, 4}, rng));
  ps.add("y", random_tensor({3, 4}, rng));
  ps.add("row", random_tensor({4}, rng));
  ps.add("pos", random_tensor({3, 4}, rng, 0.5, 2.0));
  const std::vector<int> ids{2, 0, 2, 1};
  const std::vector<int> targets{1, -1, 3};

  auto build = [&](Graph& g) -> Var {
    auto x = g.param(ps[0]);
    auto y = g.param(ps[1]);
    auto row = g.param(ps[2]);
    auto pos = g.param(ps[3]);
    Var out;
    if (op == "add") out = add(x, row);
    else if (op == "sub") out = sub(x, y);
    else if (op == "mul") out = mul(x, row);
    else if (op == "scale") out = scale(x, -2.5);
    else if (op == "add_scalar") out = add_scalar(x, 0.7);
    else if (op == "relu") out = relu(x);
    else if (op == "gelu") out = gelu(x);
    else if (op == "tanh") out = tanh(x);
    else if (op == "log") out = log(pos);
    else if (op == "matmul") out = matmul(x, transpose(y));
    else if (op == "softmax") out = softmax_lastdim(scale(x, 3.0));
    else if (op == "log_softmax") out = log_softmax_lastdim(x);
    else if (op == "layernorm") out = layernorm(x, row, mul(row, row));
    else if (op == "embedding") out = embedding(x, ids);
    else if (op == "cross_entropy") return cross_entropy(x, targets, -1);
    else if (op == "concat") out = concat_lastdim({x, slice_lastdim(y, 1, 3), x});
    else if (op == "reshape") out = reshape(x, {2, 6});
    else if (op == "pick") out = pick(x, std::vector<int>{3, 0, 1});
    else if (op == "sum") return sum(x);
    else if (op == "mean") return mean(mul(x, y));
    else ADD_FAILURE() << "unknown op " << op;
    return weighted_sum(out, 5);
  };
  GradCheckOptions opts;
  opts.tolerance = 1e-5;
  auto report = check_gradients(ps, build, opts);
  EXPECT_TRUE(report.passed()) << op << "\n" << report.to_string();
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient,
                         ::testing::Values("add", "sub", "mul", "scale", "add_scalar", "relu", "gelu", "tanh", "log",
                                           "matmul", "softmax", "log_softmax", "layernorm", "embedding",
                                           "cross_entropy", "concat", "reshape", "pick", "sum", "mean"));

TEST(CrossEntropy, IgnoredRowsContributeNothing) {
  ParameterSet ps;
  ps.add("logits", Tensor::matrix({{1, 2, 3}, {5, -1, 0}}));
  Graph g;
  auto loss = cross_entropy(g.param(ps[0]), std::vector<int>{2, -1}, -1);
  const double expected = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  EXPECT_NEAR(loss.value().item(), expected, 1e-12);
  g.backward(loss);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(ps[0].grad.at(1, j), 0.0);
}

TEST(Dropout, ZeroRateIsIdentityAndScalesKeptUnits) {
  Rng rng(1);
  Graph g(false);
  auto x = g.constant(Tensor({1000}, 1.0));
  EXPECT_EQ(dropout(x, 0.0, rng).value(), x.value());
  auto y = dropout(x, 0.25, rng).value();
  std::size_t kept = 0;
  for (double v : y.data()) {
    if (v != 0.0) {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
      ++kept;
    }
  }
  EXPECT_GT(kept, 650u);
  EXPECT_LT(kept, 850u);
}

TEST(Inference, NoRecordingGraphTracksNoGradients) {
  ParameterSet ps;
  ps.add("w", Tensor::vector({1, 2}));
  Graph g(false);
  auto y = sum(mul(g.param(ps[0]), g.param(ps[0])));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_DOUBLE_EQ(y.value().item(), 5.0);
}

// Reference recurrence written independently of Adam::step.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8, m = 0, v = 0;
  int t = 0;
  double step(double w, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    return w - lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
};

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParameterSet ps;
  ps.add("w", Tensor::vector({1.5, -2.0}));
  ps[0].has_grad = true;
  Adam adam({.lr = 0.1});
  adam.step(ps);
  EXPECT_EQ(ps[0].value, Tensor::vector({1.5, -2.0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet ps;
  ps.add("w", Tensor::scalar(3.0));
  ps[0].grad[0] = 1.0;
  ps[0].has_grad = true;
  Adam adam({.lr = 0.1});
  adam.step(ps);
  // m_hat / sqrt(v_hat) == 1 on the first step.
  EXPECT_NEAR(ps[0].value.item(), 3.0 - 0.1 * (1.0 / (1.0 + 1e-8)), 1e-15);
  EXPECT_EQ(ps[0].grad[0], 1.0);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, QuadraticBowlMatchesReferenceRecurrence) {
  ParameterSet ps;
  ps.add("w", Tensor::scalar(5.0));
  Adam adam({.lr = 0.1});
  ScalarAdam ref{.lr = 0.1};
  double w_ref = 5.0;
  for (int i = 0; i < 200; ++i) {
    ps.zero_grad();
    Graph g;
    auto w = g.param(ps[0]);
    g.backward(sum(mul(w, w)));
    w_ref = ref.step(w_ref, 2.0 * w_ref);
    adam.step(ps);
    ASSERT_NEAR(ps[0].value.item(), w_ref, 1e-12) << "step " << i;
  }
  EXPECT_LT(std::abs(ps[0].value.item()), 0.1);
}

TEST(Adam, MissingGradientsAreListed) {
  ParameterSet ps;
  ps.add("alpha", Tensor::scalar(1.0));
  ps.add("beta", Tensor::scalar(1.0));
  ps[0].has_grad = true;
  Adam adam;
  try {
    adam.step(ps);
    FAIL();
  } catch (const StateError& e) {
    EXPECT_NE(std::string(e.what()).find("beta"), std::string::npos);
    EXPECT_EQ(std::string(e.what()).find("alpha"), std::string::npos);
  }
}

TEST(ParameterBlob, RoundTripIsBitExact) {
  Rng rng(8);
  ParameterSet a;
  a.add("layer.w", random_tensor({3, 5}, rng, -1e3, 1e3));
  a.add("layer.b", Tensor::vector({-0.0, 1e-308, 6.02e23}));
  a.add("s", Tensor::scalar(M_PI));
  std::stringstream buf;
  write_parameters(buf, {&a});
  const std::string bytes = buf.str();
  auto records = read_parameters(buf);
  ASSERT_EQ(records.size(), 3u);

  ParameterSet b;
  b.add("s", Tensor::scalar(0));
  b.add("layer.w", Tensor({3, 5}));
  b.add("layer.b", Tensor({3}));
  assign_parameters(b, records);
  for (const auto& p : a) {
    const auto* q = b.find(p.name);
    ASSERT_NE(q, nullptr);
    EXPECT_EQ(0, std::memcmp(p.value.data().data(), q->value.data().data(), p.value.size() * sizeof(double)));
  }
  std::stringstream again;
  write_parameters(again, {&a});
  EXPECT_EQ(again.str(), bytes);
  // u32 version + name/rank/dims/values of the scalar record.
  EXPECT_EQ(bytes.substr(0, 4), std::string("\x01\x00\x00\x00", 4));
}

TEST(ParameterBlob, ShapeMismatchAndTruncationAreDataErrors) {
  ParameterSet a;
  a.add("w", Tensor({2, 2}, 1.0));
  std::stringstream buf;
  write_parameters(buf, {&a});
  std::string bytes = buf.str();

  std::stringstream in1(bytes);
  ParameterSet wrong;
  wrong.add("w", Tensor({4}));
  EXPECT_THROW(assign_parameters(wrong, read_parameters(in1)), DataError);

  std::stringstream in2(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_parameters(in2), DataError);
}

TEST(GradCheck, CorruptedBackwardRuleIsReportedByBlock) {
  Rng rng(2);
  ParameterSet ps;
  ps.add("good", random_tensor({3}, rng));
  ps.add("bad", random_tensor({3}, rng));
  // square whose backward forgets the factor 2
  auto bad_square = [](Var x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v *= v;
    const auto ix = x.id();
    return x.graph().make_node("bad_square", std::move(out), {x}, [ix](Graph& g, std::size_t self) {
      auto up = g.upstream(self);
      auto gx = g.grad_buffer(ix);
      const auto& xv = g.value(ix);
      for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i] * xv[i];
    });
  };
  auto report = check_gradients(ps, [&](Graph& g) {
    auto good = g.param(ps[0]);
    return add(sum(mul(good, good)), sum(bad_square(g.param(ps[1]))));
  });
  EXPECT_FALSE(report.passed());
  ASSERT_EQ(report.failures(), std::vector<std::string>{"bad"});
}

TEST(GradCheck, EmptyParameterSetPassesVacuously) {
  ParameterSet none;
  auto report = check_gradients(none, [](Graph& g) { return sum(g.constant(Tensor::vector({1, 2}))); });
  EXPECT_TRUE(report.passed());
  EXPECT_TRUE(report.blocks.empty());
}

}  // namespace
}  // namespace maskedsum
