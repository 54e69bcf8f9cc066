#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hft/rng.hpp"
#include "hft/tensor.hpp"

namespace hft {

namespace detail {

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// da[m x k] += g[m x n] * b^T   (b is [k x n])
inline void gemm_acc_nt(const double* g, const double* b, double* da, std::size_t m, std::size_t k,
                        std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    double* dai = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      dai[p] += s;
    }
  }
}

// db[k x n] += a^T * g   (a is [m x k], g is [m x n])
inline void gemm_acc_tn(const double* a, const double* g, double* db, std::size_t m, std::size_t k,
                        std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* dbp = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbp[j] += av * gi[j];
    }
  }
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor result(a.shape(), std::move(out));
  auto ctx = detail::begin_op({&a, &b});
  if (ctx.active()) {
    const int pa = ctx.parents[0], pb = ctx.parents[1];
    ctx.attach(result, [pa, pb](Tape& t, const std::vector<double>& g) {
      if (pa >= 0) t.accumulate(pa, g);
      if (pb >= 0) t.accumulate(pb, g);
    });
  }
  return result;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Tensor result(a.shape(), std::move(out));
  auto ctx = detail::begin_op({&a, &b});
  if (ctx.active()) {
    const int pa = ctx.parents[0], pb = ctx.parents[1];
    ctx.attach(result, [pa, pb](Tape& t, const std::vector<double>& g) {
      if (pa >= 0) t.accumulate(pa, g);
      if (pb >= 0) {
        std::vector<double> ng(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
        t.accumulate(pb, ng);
      }
    });
  }
  return result;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor result(a.shape(), std::move(out));
  auto ctx = detail::begin_op({&a, &b});
  if (ctx.active()) {
    const int pa = ctx.parents[0], pb = ctx.parents[1];
    auto da = a.storage();
    auto db = b.storage();
    ctx.attach(result, [pa, pb, da, db](Tape& t, const std::vector<double>& g) {
      if (pa >= 0) {
        std::vector<double> ga(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (*db)[i];
        t.accumulate(pa, ga);
      }
      if (pb >= 0) {
        std::vector<double> gb(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * (*da)[i];
        t.accumulate(pb, gb);
      }
    });
  }
  return result;
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  Tensor result(a.shape(), std::move(out));
  auto ctx = detail::begin_op({&a});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    ctx.attach(result, [pa, c](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * c;
      t.accumulate(pa, ga);
    });
  }
  return result;
}

// x [n x d] + bias [d], broadcast over rows.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    throw ShapeError("add_bias: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(bias.shape()));
  }
  const std::size_t d = bias.dim(0);
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  const auto& bv = bias.values();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + bv[j];
  Tensor result(x.shape(), std::move(out));
  auto ctx = detail::begin_op({&x, &bias});
  if (ctx.active()) {
    const int px = ctx.parents[0], pb = ctx.parents[1];
    ctx.attach(result, [px, pb, rows, d](Tape& t, const std::vector<double>& g) {
      if (px >= 0) t.accumulate(px, g);
      if (pb >= 0) {
        std::vector<double> gb(d, 0.0);
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        t.accumulate(pb, gb);
      }
    });
  }
  return result;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  Tensor result({m, n}, std::move(out));
  auto ctx = detail::begin_op({&a, &b});
  if (ctx.active()) {
    const int pa = ctx.parents[0], pb = ctx.parents[1];
    auto da = a.storage();
    auto db = b.storage();
    ctx.attach(result, [pa, pb, da, db, m, k, n](Tape& t, const std::vector<double>& g) {
      if (pa >= 0) {
        std::vector<double> ga(m * k, 0.0);
        detail::gemm_acc_nt(g.data(), db->data(), ga.data(), m, k, n);
        t.accumulate(pa, ga);
      }
      if (pb >= 0) {
        std::vector<double> gb(k * n, 0.0);
        detail::gemm_acc_tn(da->data(), g.data(), gb.data(), m, k, n);
        t.accumulate(pb, gb);
      }
    });
  }
  return result;
}

// Batched matmul: [N,m,k] x [N,k,n] -> [N,m,n]
inline Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    detail::gemm_acc(a.values().data() + s * m * k, b.values().data() + s * k * n,
                     out.data() + s * m * n, m, k, n);
  }
  Tensor result({batch, m, n}, std::move(out));
  auto ctx = detail::begin_op({&a, &b});
  if (ctx.active()) {
    const int pa = ctx.parents[0], pb = ctx.parents[1];
    auto da = a.storage();
    auto db = b.storage();
    ctx.attach(result, [pa, pb, da, db, batch, m, k, n](Tape& t, const std::vector<double>& g) {
      if (pa >= 0) {
        std::vector<double> ga(batch * m * k, 0.0);
        for (std::size_t s = 0; s < batch; ++s)
          detail::gemm_acc_nt(g.data() + s * m * n, db->data() + s * k * n, ga.data() + s * m * k,
                              m, k, n);
        t.accumulate(pa, ga);
      }
      if (pb >= 0) {
        std::vector<double> gb(batch * k * n, 0.0);
        for (std::size_t s = 0; s < batch; ++s)
          detail::gemm_acc_tn(da->data() + s * m * k, g.data() + s * m * n, gb.data() + s * k * n,
                              m, k, n);
        t.accumulate(pb, gb);
      }
    });
  }
  return result;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank-2, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto& av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  Tensor result({n, m}, std::move(out));
  auto ctx = detail::begin_op({&a});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    ctx.attach(result, [pa, m, n](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(m * n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = g[j * m + i];
      t.accumulate(pa, ga);
    });
  }
  return result;
}

inline Tensor transpose_last2(const Tensor& a) {
  if (a.rank() != 3)
    throw ShapeError("transpose_last2: expected rank-3, got " + shape_str(a.shape()));
  const std::size_t batch = a.dim(0), m = a.dim(1), n = a.dim(2);
  std::vector<double> out(batch * m * n);
  const auto& av = a.values();
  for (std::size_t s = 0; s < batch; ++s)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[s * m * n + j * m + i] = av[s * m * n + i * n + j];
  Tensor result({batch, n, m}, std::move(out));
  auto ctx = detail::begin_op({&a});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    ctx.attach(result, [pa, batch, m, n](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(batch * m * n);
      for (std::size_t s = 0; s < batch; ++s)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            ga[s * m * n + i * n + j] = g[s * m * n + j * m + i];
      t.accumulate(pa, ga);
    });
  }
  return result;
}

inline Tensor reshape(const Tensor& a, Shape new_shape) {
  if (numel(new_shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(new_shape));
  Tensor result(std::move(new_shape), a.values());
  auto ctx = detail::begin_op({&a});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    ctx.attach(result, [pa](Tape& t, const std::vector<double>& g) {
      if (pa >= 0) t.accumulate(pa, g);
    });
  }
  return result;
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor result({1}, {s});
  auto ctx = detail::begin_op({&a});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    const std::size_t n = a.size();
    ctx.attach(result, [pa, n](Tape& t, const std::vector<double>& g) {
      if (pa >= 0) t.accumulate(pa, std::vector<double>(n, g[0]));
    });
  }
  return result;
}

inline Tensor mean(const Tensor& a) {
  const std::size_t n = a.size();
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor result({1}, {s / static_cast<double>(n)});
  auto ctx = detail::begin_op({&a});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    ctx.attach(result, [pa, n](Tape& t, const std::vector<double>& g) {
      if (pa >= 0) t.accumulate(pa, std::vector<double>(n, g[0] / static_cast<double>(n)));
    });
  }
  return result;
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  Tensor result(a.shape(), std::move(out));
  auto ctx = detail::begin_op({&a});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    auto da = a.storage();
    ctx.attach(result, [pa, da](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = (*da)[i] > 0.0 ? g[i] : 0.0;
      t.accumulate(pa, ga);
    });
  }
  return result;
}

// GELU, tanh approximation.
inline Tensor gelu(const Tensor& a) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    const double u = kSqrt2OverPi * (x + kCubic * x * x * x);
    out[i] = 0.5 * x * (1.0 + std::tanh(u));
  }
  Tensor result(a.shape(), std::move(out));
  auto ctx = detail::begin_op({&a});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    auto da = a.storage();
    ctx.attach(result, [pa, da](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = (*da)[i];
        const double u = kSqrt2OverPi * (x + kCubic * x * x * x);
        const double th = std::tanh(u);
        const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * x * x);
        ga[i] = g[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
      }
      t.accumulate(pa, ga);
    });
  }
  return result;
}

namespace detail {

// Stable softmax over the trailing axis; writes probabilities into out.
inline void softmax_rows(const double* x, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double* pr = out + r * cols;
    double mx = xr[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      pr[c] = std::exp(xr[c] - mx);
      s += pr[c];
    }
    const double inv = 1.0 / s;
    for (std::size_t c = 0; c < cols; ++c) pr[c] *= inv;
  }
}

// dx = p * (g - sum(g*p)) rowwise.
inline void softmax_backward_rows(const double* p, const double* g, double* dx, std::size_t rows,
                                  std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* pr = p + r * cols;
    const double* gr = g + r * cols;
    double* dr = dx + r * cols;
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * pr[c];
    for (std::size_t c = 0; c < cols; ++c) dr[c] = pr[c] * (gr[c] - dot);
  }
}

}  // namespace detail

// Softmax over the last axis of a tensor of any rank >= 1.
inline Tensor softmax(const Tensor& a) {
  const std::size_t cols = a.shape().back();
  const std::size_t rows = a.size() / cols;
  std::vector<double> out(a.size());
  detail::softmax_rows(a.values().data(), out.data(), rows, cols);
  Tensor result(a.shape(), std::move(out));
  auto ctx = detail::begin_op({&a});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    auto probs = result.storage();
    ctx.attach(result, [pa, probs, rows, cols](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(g.size());
      detail::softmax_backward_rows(probs->data(), g.data(), ga.data(), rows, cols);
      t.accumulate(pa, ga);
    });
  }
  return result;
}

// Softmax over attention score rows [B*H, L, L] with padded key columns
// masked out. Masked columns receive an additive -1e9 before the stable
// softmax, which underflows their probability to exactly zero.
inline Tensor attention_softmax(const Tensor& scores, const std::vector<std::uint8_t>& key_mask,
                                std::size_t n_heads) {
  if (scores.rank() != 3 || scores.dim(1) != scores.dim(2))
    throw ShapeError("attention_softmax: expected [groups, L, L], got " +
                     shape_str(scores.shape()));
  const std::size_t groups = scores.dim(0), len = scores.dim(1);
  if (n_heads == 0 || groups % n_heads != 0)
    throw ShapeError("attention_softmax: group count not divisible by head count");
  const std::size_t batch = groups / n_heads;
  if (key_mask.size() != batch * len)
    throw ShapeError("attention_softmax: mask length does not match scores");
  constexpr double kMaskPenalty = -1e9;
  std::vector<double> masked(scores.size());
  const auto& sv = scores.values();
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    const std::size_t b = gidx / n_heads;
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t idx = (gidx * len + i) * len + j;
        masked[idx] = sv[idx] + (key_mask[b * len + j] ? 0.0 : kMaskPenalty);
      }
  }
  std::vector<double> out(scores.size());
  detail::softmax_rows(masked.data(), out.data(), groups * len, len);
  Tensor result(scores.shape(), std::move(out));
  auto ctx = detail::begin_op({&scores});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    auto probs = result.storage();
    const std::size_t rows = groups * len;
    ctx.attach(result, [pa, probs, rows, len](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(g.size());
      detail::softmax_backward_rows(probs->data(), g.data(), ga.data(), rows, len);
      t.accumulate(pa, ga);
    });
  }
  return result;
}

// Mean over the batch of -log softmax(logits)[i, target_i].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy: expected [batch, classes], got " + shape_str(logits.shape()));
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != batch)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                     std::to_string(batch));
  const auto& xv = logits.values();
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t t = targets[i];
    if (t >= classes)
      throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range for " +
                       std::to_string(classes) + " classes");
    const double* row = xv.data() + i * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - mx);
    total += mx + std::log(s) - row[t];
  }
  Tensor result({1}, {total / static_cast<double>(batch)});
  auto ctx = detail::begin_op({&logits});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    auto data = logits.storage();
    ctx.attach(result, [pa, data, targets, batch, classes](Tape& t,
                                                           const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(batch * classes);
      detail::softmax_rows(data->data(), ga.data(), batch, classes);
      const double scale_g = g[0] / static_cast<double>(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t c = 0; c < classes; ++c) ga[i * classes + c] *= scale_g;
        ga[i * classes + targets[i]] -= scale_g;
      }
      t.accumulate(pa, ga);
    });
  }
  return result;
}

// Per-row normalization to zero mean and unit variance, then affine.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 2) throw ShapeError("layer_norm: expected rank >= 2, got " + shape_str(x.shape()));
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
    throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(d) + "]");
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const std::size_t rows = x.size() / d;
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  Tensor result(x.shape(), std::move(out));
  auto ctx = detail::begin_op({&x, &gamma, &beta});
  if (ctx.active()) {
    const int px = ctx.parents[0], pg = ctx.parents[1], pb = ctx.parents[2];
    auto gamma_data = gamma.storage();
    auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
    ctx.attach(result, [px, pg, pb, gamma_data, xh, is, rows, d](Tape& t,
                                                                 const std::vector<double>& g) {
      if (px >= 0) {
        std::vector<double> gx(rows * d);
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_gy = 0.0, mean_gyh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gy = g[r * d + j] * (*gamma_data)[j];
            mean_gy += gy;
            mean_gyh += gy * (*xh)[r * d + j];
          }
          mean_gy /= static_cast<double>(d);
          mean_gyh /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double gy = g[r * d + j] * (*gamma_data)[j];
            gx[r * d + j] = ((*is)[r]) * (gy - mean_gy - (*xh)[r * d + j] * mean_gyh);
          }
        }
        t.accumulate(px, gx);
      }
      if (pg >= 0) {
        std::vector<double> gg(d, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xh)[r * d + j];
        t.accumulate(pg, gg);
      }
      if (pb >= 0) {
        std::vector<double> gb(d, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        t.accumulate(pb, gb);
      }
    });
  }
  return result;
}

// Inverted dropout: in train mode each element is zeroed with probability p
// and survivors are scaled by 1/(1-p); eval mode is the identity. The mask is
// drawn from the supplied generator only.
inline Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must lie in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  Tensor result(x.shape(), std::move(out));
  auto ctx = detail::begin_op({&x});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    auto m = std::make_shared<std::vector<double>>(std::move(mask));
    ctx.attach(result, [pa, m](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (*m)[i];
      t.accumulate(pa, ga);
    });
  }
  return result;
}

// Row gather: out[r] = table[indices[r]]. Differentiable w.r.t. the table
// (scatter-add backward); repeated indices accumulate.
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
  if (table.rank() != 2)
    throw ShapeError("gather_rows: expected rank-2 table, got " + shape_str(table.shape()));
  const std::size_t n_rows = table.dim(0), d = table.dim(1);
  for (std::size_t idx : indices) {
    if (idx >= n_rows)
      throw IndexError("gather_rows: index " + std::to_string(idx) + " out of range for " +
                       std::to_string(n_rows) + " rows");
  }
  std::vector<double> out(indices.size() * d);
  const auto& tv = table.values();
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(tv.data() + indices[r] * d, d, out.data() + r * d);
  Tensor result({indices.size(), d}, std::move(out));
  auto ctx = detail::begin_op({&table});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    const std::size_t table_size = table.size();
    ctx.attach(result, [pa, indices, d, table_size](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(table_size, 0.0);
      for (std::size_t r = 0; r < indices.size(); ++r)
        for (std::size_t j = 0; j < d; ++j) ga[indices[r] * d + j] += g[r * d + j];
      t.accumulate(pa, ga);
    });
  }
  return result;
}

// Embedding lookup is a row gather over the embedding table.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
  return gather_rows(table, ids);
}

inline Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  return gather_rows(x, rows);
}

// Scale row r of x [n x d] by row_scales[r].
inline Tensor scale_rows(const Tensor& x, const std::vector<double>& row_scales) {
  if (x.rank() != 2 || x.dim(0) != row_scales.size())
    throw ShapeError("scale_rows: expected [" + std::to_string(row_scales.size()) + ", d], got " +
                     shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] * row_scales[r];
  Tensor result(x.shape(), std::move(out));
  auto ctx = detail::begin_op({&x});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    ctx.attach(result, [pa, row_scales, n, d](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(g.size());
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) ga[r * d + j] = g[r * d + j] * row_scales[r];
      t.accumulate(pa, ga);
    });
  }
  return result;
}

// Concatenate [B x Fi] blocks along columns.
inline Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = xs[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& x : xs) {
    if (x.rank() != 2 || x.dim(0) != rows)
      throw ShapeError("concat_cols: row count mismatch at " + shape_str(x.shape()));
    total += x.dim(1);
  }
  std::vector<double> out(rows * total);
  std::size_t col = 0;
  for (const Tensor& x : xs) {
    const std::size_t d = x.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(x.values().data() + r * d, d, out.data() + r * total + col);
    col += d;
  }
  Tensor result({rows, total}, std::move(out));
  std::vector<const Tensor*> ptrs;
  for (const Tensor& x : xs) ptrs.push_back(&x);
  Tape* tape = Tape::active();
  bool any = false;
  if (tape) {
    for (const Tensor* x : ptrs)
      if (tape->is_tracked(*x) || x->requires_grad()) any = true;
  }
  if (tape && any) {
    std::vector<int> parents;
    std::vector<std::size_t> widths;
    for (const Tensor* x : ptrs) {
      parents.push_back(tape->node_for(*x));
      widths.push_back(x->dim(1));
    }
    const int node = tape->add_node(
        parents, result.size(),
        [parents, widths, rows, total](Tape& t, const std::vector<double>& g) {
          std::size_t col = 0;
          for (std::size_t i = 0; i < parents.size(); ++i) {
            const std::size_t d = widths[i];
            if (parents[i] >= 0) {
              std::vector<double> ga(rows * d);
              for (std::size_t r = 0; r < rows; ++r)
                std::copy_n(g.data() + r * total + col, d, ga.data() + r * d);
              t.accumulate(parents[i], ga);
            }
            col += d;
          }
        });
    tape->attach(result, node);
  }
  return result;
}

// [B*L, d] -> [B*H, L, d/H]; pure element permutation.
inline Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t len,
                          std::size_t n_heads) {
  if (x.rank() != 2 || x.dim(0) != batch * len || x.dim(1) % n_heads != 0)
    throw ShapeError("split_heads: cannot split " + shape_str(x.shape()));
  const std::size_t d = x.dim(1), dh = d / n_heads;
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t h = 0; h < n_heads; ++h)
        std::copy_n(xv.data() + (b * len + l) * d + h * dh, dh,
                    out.data() + ((b * n_heads + h) * len + l) * dh);
  Tensor result({batch * n_heads, len, dh}, std::move(out));
  auto ctx = detail::begin_op({&x});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    ctx.attach(result, [pa, batch, len, n_heads, d, dh](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(g.size());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t h = 0; h < n_heads; ++h)
            std::copy_n(g.data() + ((b * n_heads + h) * len + l) * dh, dh,
                        ga.data() + (b * len + l) * d + h * dh);
      t.accumulate(pa, ga);
    });
  }
  return result;
}

// [B*H, L, dh] -> [B*L, H*dh]; inverse of split_heads.
inline Tensor merge_heads(const Tensor& x, std::size_t n_heads) {
  if (x.rank() != 3 || x.dim(0) % n_heads != 0)
    throw ShapeError("merge_heads: cannot merge " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0) / n_heads, len = x.dim(1), dh = x.dim(2);
  const std::size_t d = n_heads * dh;
  std::vector<double> out(x.size());
  const auto& xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t l = 0; l < len; ++l)
        std::copy_n(xv.data() + ((b * n_heads + h) * len + l) * dh, dh,
                    out.data() + (b * len + l) * d + h * dh);
  Tensor result({batch * len, d}, std::move(out));
  auto ctx = detail::begin_op({&x});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    ctx.attach(result, [pa, batch, len, n_heads, d, dh](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(g.size());
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < n_heads; ++h)
          for (std::size_t l = 0; l < len; ++l)
            std::copy_n(g.data() + (b * len + l) * d + h * dh, dh,
                        ga.data() + ((b * n_heads + h) * len + l) * dh);
      t.accumulate(pa, ga);
    });
  }
  return result;
}

// 1-D convolution over time for text: x [B, L, E], kernel [w, E, F],
// bias [F] -> [B, L, F]. The input is implicitly zero-padded on the right by
// w-1 positions, so one window starts at every time step.
inline Tensor conv1d_same(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  if (x.rank() != 3 || kernel.rank() != 3 || bias.rank() != 1)
    throw ShapeError("conv1d_same: expected x[B,L,E], kernel[w,E,F], bias[F]");
  const std::size_t batch = x.dim(0), len = x.dim(1), embed = x.dim(2);
  const std::size_t width = kernel.dim(0), filters = kernel.dim(2);
  if (kernel.dim(1) != embed)
    throw ShapeError("conv1d_same: kernel embed dim " + shape_str(kernel.shape()) +
                     " does not match input " + shape_str(x.shape()));
  if (bias.dim(0) != filters) throw ShapeError("conv1d_same: bias does not match filter count");
  const auto& xv = x.values();
  const auto& kv = kernel.values();
  const auto& bv = bias.values();
  std::vector<double> out(batch * len * filters);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t0 = 0; t0 < len; ++t0) {
      double* o = out.data() + (b * len + t0) * filters;
      for (std::size_t f = 0; f < filters; ++f) o[f] = bv[f];
      const std::size_t jmax = std::min(width, len - t0);
      for (std::size_t j = 0; j < jmax; ++j) {
        const double* xr = xv.data() + (b * len + t0 + j) * embed;
        const double* kr = kv.data() + j * embed * filters;
        for (std::size_t e = 0; e < embed; ++e) {
          const double xe = xr[e];
          const double* kf = kr + e * filters;
          for (std::size_t f = 0; f < filters; ++f) o[f] += xe * kf[f];
        }
      }
    }
  Tensor result({batch, len, filters}, std::move(out));
  auto ctx = detail::begin_op({&x, &kernel, &bias});
  if (ctx.active()) {
    const int px = ctx.parents[0], pk = ctx.parents[1], pb = ctx.parents[2];
    auto xd = x.storage();
    auto kd = kernel.storage();
    ctx.attach(result, [px, pk, pb, xd, kd, batch, len, embed, width,
                        filters](Tape& t, const std::vector<double>& g) {
      if (px >= 0) {
        std::vector<double> gx(batch * len * embed, 0.0);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t0 = 0; t0 < len; ++t0) {
            const double* gr = g.data() + (b * len + t0) * filters;
            const std::size_t jmax = std::min(width, len - t0);
            for (std::size_t j = 0; j < jmax; ++j) {
              double* gxr = gx.data() + (b * len + t0 + j) * embed;
              const double* kr = kd->data() + j * embed * filters;
              for (std::size_t e = 0; e < embed; ++e) {
                double s = 0.0;
                const double* kf = kr + e * filters;
                for (std::size_t f = 0; f < filters; ++f) s += gr[f] * kf[f];
                gxr[e] += s;
              }
            }
          }
        t.accumulate(px, gx);
      }
      if (pk >= 0) {
        std::vector<double> gk(width * embed * filters, 0.0);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t0 = 0; t0 < len; ++t0) {
            const double* gr = g.data() + (b * len + t0) * filters;
            const std::size_t jmax = std::min(width, len - t0);
            for (std::size_t j = 0; j < jmax; ++j) {
              const double* xr = xd->data() + (b * len + t0 + j) * embed;
              double* gkr = gk.data() + j * embed * filters;
              for (std::size_t e = 0; e < embed; ++e) {
                const double xe = xr[e];
                double* gkf = gkr + e * filters;
                for (std::size_t f = 0; f < filters; ++f) gkf[f] += xe * gr[f];
              }
            }
          }
        t.accumulate(pk, gk);
      }
      if (pb >= 0) {
        std::vector<double> gb(filters, 0.0);
        for (std::size_t i = 0; i < batch * len; ++i)
          for (std::size_t f = 0; f < filters; ++f) gb[f] += g[i * filters + f];
        t.accumulate(pb, gb);
      }
    });
  }
  return result;
}

// Max over time restricted to the first lengths[b] positions of each
// sequence: x [B, L, F] -> [B, F]. Ties go to the earliest position.
inline Tensor masked_max_over_time(const Tensor& x, const std::vector<std::size_t>& lengths) {
  if (x.rank() != 3) throw ShapeError("masked_max_over_time: expected [B,L,F], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), len = x.dim(1), filters = x.dim(2);
  if (lengths.size() != batch)
    throw ShapeError("masked_max_over_time: lengths size does not match batch");
  const auto& xv = x.values();
  std::vector<double> out(batch * filters);
  std::vector<std::size_t> arg(batch * filters);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t n = lengths[b];
    if (n == 0 || n > len)
      throw ContractError("masked_max_over_time: invalid length " + std::to_string(n));
    for (std::size_t f = 0; f < filters; ++f) {
      double best = xv[(b * len) * filters + f];
      std::size_t best_t = 0;
      for (std::size_t t0 = 1; t0 < n; ++t0) {
        const double v = xv[(b * len + t0) * filters + f];
        if (v > best) {
          best = v;
          best_t = t0;
        }
      }
      out[b * filters + f] = best;
      arg[b * filters + f] = best_t;
    }
  }
  Tensor result({batch, filters}, std::move(out));
  auto ctx = detail::begin_op({&x});
  if (ctx.active()) {
    const int pa = ctx.parents[0];
    auto argmax = std::make_shared<std::vector<std::size_t>>(std::move(arg));
    ctx.attach(result, [pa, argmax, batch, len, filters](Tape& t, const std::vector<double>& g) {
      if (pa < 0) return;
      std::vector<double> ga(batch * len * filters, 0.0);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t f = 0; f < filters; ++f)
          ga[(b * len + (*argmax)[b * filters + f]) * filters + f] += g[b * filters + f];
      t.accumulate(pa, ga);
    });
  }
  return result;
}

}  // namespace hft
