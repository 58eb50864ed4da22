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

#include "maskedsum/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "maskedsum/errors.hpp"
#include "maskedsum/rng.hpp"

namespace maskedsum {
namespace {

// b broadcasts over a when b's shape equals a trailing suffix of a's shape.
void check_broadcast(const char* op, const Shape& a, const Shape& b) {
  bool ok = b.size() <= a.size();
  for (std::size_t i = 0; ok && i < b.size(); ++i) {
    ok = a[a.size() - b.size() + i] == b[i];
  }
  if (!ok) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(b) + " onto " + shape_string(a));
  }
}

void check_finite(const char* op, std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

std::size_t rows_of(const Tensor& t) { return t.size() / t.last_dim(); }

}  // namespace

Var add(Var a, Var b) {
  check_broadcast("add", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor out = av;
  const std::size_t m = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % m];
  const auto ia = a.id(), ib = b.id();
  return a.graph().make_node("add", std::move(out), {a, b}, [ia, ib, m](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    if (auto ga = g.grad_buffer(ia); !ga.empty()) {
      for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
    }
    if (auto gb = g.grad_buffer(ib); !gb.empty()) {
      for (std::size_t i = 0; i < up.size(); ++i) gb[i % m] += up[i];
    }
  });
}

Var sub(Var a, Var b) {
  check_broadcast("sub", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor out = av;
  const std::size_t m = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i % m];
  const auto ia = a.id(), ib = b.id();
  return a.graph().make_node("sub", std::move(out), {a, b}, [ia, ib, m](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    if (auto ga = g.grad_buffer(ia); !ga.empty()) {
      for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
    }
    if (auto gb = g.grad_buffer(ib); !gb.empty()) {
      for (std::size_t i = 0; i < up.size(); ++i) gb[i % m] -= up[i];
    }
  });
}

Var mul(Var a, Var b) {
  check_broadcast("mul", a.shape(), b.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor out = av;
  const std::size_t m = bv.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i % m];
  const auto ia = a.id(), ib = b.id();
  return a.graph().make_node("mul", std::move(out), {a, b}, [ia, ib, m](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    const auto& x = g.value(ia);
    const auto& y = g.value(ib);
    if (auto ga = g.grad_buffer(ia); !ga.empty()) {
      for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * y[i % m];
    }
    if (auto gb = g.grad_buffer(ib); !gb.empty()) {
      for (std::size_t i = 0; i < up.size(); ++i) gb[i % m] += up[i] * x[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& x : out.data()) x *= factor;
  const auto ia = a.id();
  return a.graph().make_node("scale", std::move(out), {a}, [ia, factor](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    auto ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += factor * up[i];
  });
}

Var add_scalar(Var a, double c) {
  Tensor out = a.value();
  for (auto& x : out.data()) x += c;
  const auto ia = a.id();
  return a.graph().make_node("add_scalar", std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    auto ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i];
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& x : out.data()) x = x > 0.0 ? x : 0.0;
  const auto ia = a.id();
  return a.graph().make_node("relu", std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    const auto& x = g.value(ia);
    auto ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < up.size(); ++i) {
      if (x[i] > 0.0) ga[i] += up[i];
    }
  });
}

Var gelu(Var a) {
  Tensor out = a.value();
  for (auto& x : out.data()) x = 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const auto ia = a.id();
  return a.graph().make_node("gelu", std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    const auto& x = g.value(ia);
    auto ga = g.grad_buffer(ia);
    const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x[i] * x[i]);
      ga[i] += up[i] * (cdf + x[i] * pdf);
    }
  });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (auto& x : out.data()) x = std::tanh(x);
  const auto ia = a.id();
  return a.graph().make_node("tanh", std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    const auto& y = g.value(self);
    auto ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] * (1.0 - y[i] * y[i]);
  });
}

Var log(Var a) {
  Tensor out = a.value();
  for (auto& x : out.data()) {
    if (!(x > 0.0)) throw NumericError("log: non-positive input");
    x = std::log(x);
  }
  const auto ia = a.id();
  return a.graph().make_node("log", std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    const auto& x = g.value(ia);
    auto ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < up.size(); ++i) ga[i] += up[i] / x[i];
  });
}

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n}, 0.0);
  const double* A = av.data().data();
  const double* B = bv.data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  const auto ia = a.id(), ib = b.id();
  return a.graph().make_node("matmul", std::move(out), {a, b}, [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const double* up = g.upstream(self).data();
    const double* A = g.value(ia).data().data();
    const double* B = g.value(ib).data().data();
    // dA = dC * B^T
    if (auto ga = g.grad_buffer(ia); !ga.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          const double* urow = up + i * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += urow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    // dB = A^T * dC
    if (auto gb = g.grad_buffer(ib); !gb.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* urow = up + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          double* grow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) grow[j] += aip * urow[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  const auto& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_string(av.shape()));
  const std::size_t m = av.dim(0), n = av.dim(1);
  Tensor out({n, m}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  }
  const auto ia = a.id();
  return a.graph().make_node("transpose", std::move(out), {a}, [ia, m, n](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    auto ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += up[j * m + i];
    }
  });
}

Var softmax_lastdim(Var x) {
  const auto& xv = x.value();
  check_finite("softmax_lastdim", xv.data());
  const std::size_t n = xv.last_dim();
  const std::size_t rows = rows_of(xv);
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  }
  const auto ix = x.id();
  return x.graph().make_node("softmax", std::move(out), {x}, [ix, n, rows](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    const auto& y = g.value(self);
    auto gx = g.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += up[off + j] * y[off + j];
      for (std::size_t j = 0; j < n; ++j) gx[off + j] += y[off + j] * (up[off + j] - dot);
    }
  });
}

Var log_softmax_lastdim(Var x) {
  const auto& xv = x.value();
  check_finite("log_softmax_lastdim", xv.data());
  const std::size_t n = xv.last_dim();
  const std::size_t rows = rows_of(xv);
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data().data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) row[j] -= lse;
  }
  const auto ix = x.id();
  return x.graph().make_node("log_softmax", std::move(out), {x}, [ix, n, rows](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    const auto& y = g.value(self);
    auto gx = g.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = r * n;
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += up[off + j];
      for (std::size_t j = 0; j < n; ++j) gx[off + j] += up[off + j] - std::exp(y[off + j]) * total;
    }
  });
}

Var layernorm(Var x, Var gain, Var bias, double eps) {
  const auto& xv = x.value();
  const std::size_t d = xv.last_dim();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layernorm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                         " do not match last dim of " + shape_string(xv.shape()));
  }
  const std::size_t rows = rows_of(xv);
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  // Cache normalised values and inverse std for the backward pass.
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  Tensor out(xv.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[off + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv[off + j] - mu) * (xv[off + j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[off + j] = (xv[off + j] - mu) * inv_std[r];
      out[off + j] = xhat[off + j] * gv[j] + bv[j];
    }
  }
  const auto ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.graph().make_node(
      "layernorm", std::move(out), {x, gain, bias},
      [ix, ig, ib, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, std::size_t self) {
        auto up = g.upstream(self);
        const auto& gv = g.value(ig);
        if (auto gg = g.grad_buffer(ig); !gg.empty()) {
          for (std::size_t i = 0; i < up.size(); ++i) gg[i % d] += up[i] * xhat[i];
        }
        if (auto gb = g.grad_buffer(ib); !gb.empty()) {
          for (std::size_t i = 0; i < up.size(); ++i) gb[i % d] += up[i];
        }
        if (auto gx = g.grad_buffer(ix); !gx.empty()) {
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t off = r * d;
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dy = up[off + j] * gv[j];
              sum_dy += dy;
              sum_dy_xhat += dy * xhat[off + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double dy = up[off + j] * gv[j];
              gx[off + j] += inv_std[r] * (dy - inv_d * sum_dy - xhat[off + j] * inv_d * sum_dy_xhat);
            }
          }
        }
      });
}

Var embedding(Var table, std::span<const int> ids) {
  const auto& tv = table.value();
  if (tv.rank() != 2) throw DimensionError("embedding: table must be rank 2, got " + shape_string(tv.shape()));
  const std::size_t vocab = tv.dim(0), d = tv.dim(1);
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  Tensor out({ids.size(), d}, 0.0);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw DimensionError("embedding: id " + std::to_string(ids[r]) + " outside table of " + std::to_string(vocab) +
                           " rows");
    }
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  const auto it = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return table.graph().make_node("embedding", std::move(out), {table},
                                 [it, d, idv = std::move(idv)](Graph& g, std::size_t self) {
                                   auto up = g.upstream(self);
                                   auto gt = g.grad_buffer(it);
                                   for (std::size_t r = 0; r < idv.size(); ++r) {
                                     const std::size_t base = static_cast<std::size_t>(idv[r]) * d;
                                     for (std::size_t j = 0; j < d; ++j) gt[base + j] += up[r * d + j];
                                   }
                                 });
}

Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index) {
  const auto& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != targets.size()) {
    throw DimensionError("cross_entropy: logits " + shape_string(lv.shape()) + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  check_finite("cross_entropy", lv.data());
  const std::size_t rows = lv.dim(0), v = lv.dim(1);
  std::vector<double> probs(lv.size());
  std::size_t counted = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = lv.data().data() + r * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] = std::exp(row[j] - mx) / z;
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw DimensionError("cross_entropy: target " + std::to_string(targets[r]) + " outside " + std::to_string(v) +
                           " classes");
    }
    total += mx + std::log(z) - row[targets[r]];
    ++counted;
  }
  const double loss = counted ? total / static_cast<double>(counted) : 0.0;
  const auto il = logits.id();
  std::vector<int> tv(targets.begin(), targets.end());
  return logits.graph().make_node(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [il, v, counted, ignore_index, tv = std::move(tv), probs = std::move(probs)](Graph& g, std::size_t self) {
        if (counted == 0) return;
        const double up = g.upstream(self)[0] / static_cast<double>(counted);
        auto gl = g.grad_buffer(il);
        for (std::size_t r = 0; r < tv.size(); ++r) {
          if (tv[r] == ignore_index) continue;
          for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += up * probs[r * v + j];
          gl[r * v + static_cast<std::size_t>(tv[r])] -= up;
        }
      });
}

Var concat_lastdim(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_lastdim: no inputs");
  const auto& first = parts.front().value();
  const std::size_t rows = rows_of(first);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    Shape lead(v.shape().begin(), v.shape().end() - (v.rank() ? 1 : 0));
    Shape lead0(first.shape().begin(), first.shape().end() - (first.rank() ? 1 : 0));
    if (lead != lead0) {
      throw DimensionError("concat_lastdim: leading dims differ between " + shape_string(first.shape()) + " and " +
                           shape_string(v.shape()));
    }
    widths.push_back(v.last_dim());
    total += v.last_dim();
  }
  Shape shape = first.shape();
  if (shape.empty()) shape.push_back(total);
  else shape.back() = total;
  Tensor out(shape, 0.0);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                  out.data().begin() + static_cast<std::ptrdiff_t>(r * total + col));
    }
    col += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts.front().graph().make_node(
      "concat", std::move(out), parts, [ids, widths, rows, total](Graph& g, std::size_t self) {
        auto up = g.upstream(self);
        std::size_t col = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (auto gk = g.grad_buffer(ids[k]); !gk.empty()) {
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < widths[k]; ++j) gk[r * widths[k] + j] += up[r * total + col + j];
            }
          }
          col += widths[k];
        }
      });
}

Var slice_lastdim(Var x, std::size_t begin, std::size_t end) {
  const auto& xv = x.value();
  const std::size_t n = xv.last_dim();
  if (begin >= end || end > n) {
    throw DimensionError("slice_lastdim: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_string(xv.shape()));
  }
  const std::size_t rows = rows_of(xv);
  const std::size_t w = end - begin;
  Shape shape = xv.shape();
  if (shape.empty()) shape.push_back(w);
  else shape.back() = w;
  Tensor out(shape, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(r * n + begin), w,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * w));
  }
  const auto ix = x.id();
  return x.graph().make_node("slice", std::move(out), {x}, [ix, rows, n, w, begin](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    auto gx = g.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) gx[r * n + begin + j] += up[r * w + j];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const auto ix = x.id();
  return x.graph().make_node("reshape", std::move(out), {x}, [ix](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    auto gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i];
  });
}

Var pick(Var x, std::span<const int> indices) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || xv.dim(0) != indices.size()) {
    throw DimensionError("pick: " + shape_string(xv.shape()) + " vs " + std::to_string(indices.size()) + " indices");
  }
  const std::size_t k = xv.dim(1);
  Tensor out({indices.size()}, 0.0);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || static_cast<std::size_t>(indices[r]) >= k) {
      throw DimensionError("pick: index " + std::to_string(indices[r]) + " outside " + std::to_string(k) + " columns");
    }
    out[r] = xv[r * k + static_cast<std::size_t>(indices[r])];
  }
  const auto ix = x.id();
  std::vector<int> iv(indices.begin(), indices.end());
  return x.graph().make_node("pick", std::move(out), {x}, [ix, k, iv = std::move(iv)](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    auto gx = g.grad_buffer(ix);
    for (std::size_t r = 0; r < iv.size(); ++r) gx[r * k + static_cast<std::size_t>(iv[r])] += up[r];
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const auto ix = x.id();
  return x.graph().make_node("sum", Tensor::scalar(total), {x}, [ix](Graph& g, std::size_t self) {
    const double up = g.upstream(self)[0];
    auto gx = g.grad_buffer(ix);
    for (auto& v : gx) v += up;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var detach(Var x) { return x.graph().constant(x.value()); }

Var dropout(Var x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw UsageError("dropout probability must be < 1");
  const auto& xv = x.value();
  std::vector<double> keep(xv.size());
  const double inv = 1.0 / (1.0 - p);
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    keep[i] = rng.bernoulli(p) ? 0.0 : inv;
    out[i] *= keep[i];
  }
  const auto ix = x.id();
  return x.graph().make_node("dropout", std::move(out), {x}, [ix, keep = std::move(keep)](Graph& g, std::size_t self) {
    auto up = g.upstream(self);
    auto gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < up.size(); ++i) gx[i] += up[i] * keep[i];
  });
}

}  // namespace maskedsum
