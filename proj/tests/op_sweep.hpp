#pragma once

// One finite-difference trial per differentiable op, shared by the unit
// sweep and the acceptance gradient suite. Non-scalar outputs are reduced
// through a fixed random projection so sign and routing errors cannot
// cancel; ops with kinks sample away from them.

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hft/grad_check.hpp"
#include "hft/ops.hpp"
#include "hft/rng.hpp"

namespace hft_test {

using TrialFn = std::function<double(hft::Rng&)>;

inline hft::Tensor rand_tensor(hft::Shape shape, hft::Rng& rng, bool requires_grad = true) {
  std::vector<double> v(hft::numel(shape));
  for (double& x : v) x = rng.normal();
  return hft::Tensor(std::move(shape), std::move(v), requires_grad);
}

inline hft::Tensor rand_tensor_away_from_zero(hft::Shape shape, hft::Rng& rng) {
  std::vector<double> v(hft::numel(shape));
  for (double& x : v) {
    const double n = rng.normal();
    x = (n < 0.0 ? -1.0 : 1.0) * (0.1 + std::fabs(n));
  }
  return hft::Tensor(std::move(shape), std::move(v), true);
}

inline std::vector<double> spaced_random_values(std::size_t n, hft::Rng& rng) {
  std::vector<double> v(n);
  bool ok = false;
  while (!ok) {
    for (double& x : v) x = rng.uniform01() * 10.0;
    ok = true;
    for (std::size_t i = 0; i < n && ok; ++i)
      for (std::size_t j = i + 1; j < n && ok; ++j)
        if (std::fabs(v[i] - v[j]) < 1e-2) ok = false;
  }
  return v;
}

inline hft::Tensor project(const hft::Tensor& x, const hft::Tensor& w) {
  return hft::sum(hft::mul(x, w));
}

inline std::size_t rdim(hft::Rng& rng) { return 1 + rng.uniform_index(4); }

// (op name, single random trial returning the max relative error)
inline std::vector<std::pair<std::string, TrialFn>> all_op_trials() {
  using hft::Rng;
  using hft::Tensor;
  std::vector<std::pair<std::string, TrialFn>> trials;

  trials.emplace_back("add", [](Rng& rng) {
    const std::size_t m = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({m, n}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::add(in[0], in[1]), w); },
        {rand_tensor({m, n}, rng), rand_tensor({m, n}, rng)});
  });
  trials.emplace_back("sub", [](Rng& rng) {
    const std::size_t m = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({m, n}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::sub(in[0], in[1]), w); },
        {rand_tensor({m, n}, rng), rand_tensor({m, n}, rng)});
  });
  trials.emplace_back("mul", [](Rng& rng) {
    const std::size_t m = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({m, n}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::mul(in[0], in[1]), w); },
        {rand_tensor({m, n}, rng), rand_tensor({m, n}, rng)});
  });
  trials.emplace_back("scale", [](Rng& rng) {
    const std::size_t n = rdim(rng);
    Tensor w = rand_tensor({n}, rng, false);
    const double c = rng.normal() * 3.0;
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::scale(in[0], c), w); },
        {rand_tensor({n}, rng)});
  });
  trials.emplace_back("add_bias", [](Rng& rng) {
    const std::size_t m = rdim(rng), d = rdim(rng);
    Tensor w = rand_tensor({m, d}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::add_bias(in[0], in[1]), w); },
        {rand_tensor({m, d}, rng), rand_tensor({d}, rng)});
  });
  trials.emplace_back("matmul", [](Rng& rng) {
    const std::size_t m = rdim(rng), k = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({m, n}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::matmul(in[0], in[1]), w); },
        {rand_tensor({m, k}, rng), rand_tensor({k, n}, rng)});
  });
  trials.emplace_back("bmm", [](Rng& rng) {
    const std::size_t s = rdim(rng), m = rdim(rng), k = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({s, m, n}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::bmm(in[0], in[1]), w); },
        {rand_tensor({s, m, k}, rng), rand_tensor({s, k, n}, rng)});
  });
  trials.emplace_back("transpose", [](Rng& rng) {
    const std::size_t m = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({n, m}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::transpose(in[0]), w); },
        {rand_tensor({m, n}, rng)});
  });
  trials.emplace_back("transpose_last2", [](Rng& rng) {
    const std::size_t s = rdim(rng), m = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({s, n, m}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::transpose_last2(in[0]), w); },
        {rand_tensor({s, m, n}, rng)});
  });
  trials.emplace_back("reshape", [](Rng& rng) {
    const std::size_t m = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({m * n}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) {
          return project(hft::reshape(in[0], {in[0].size()}), w);
        },
        {rand_tensor({m, n}, rng)});
  });
  trials.emplace_back("sum", [](Rng& rng) {
    return hft::grad_check([](const std::vector<Tensor>& in) { return hft::sum(in[0]); },
                           {rand_tensor({rdim(rng), rdim(rng)}, rng)});
  });
  trials.emplace_back("mean", [](Rng& rng) {
    return hft::grad_check([](const std::vector<Tensor>& in) { return hft::mean(in[0]); },
                           {rand_tensor({rdim(rng), rdim(rng)}, rng)});
  });
  trials.emplace_back("relu", [](Rng& rng) {
    const std::size_t m = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({m, n}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::relu(in[0]), w); },
        {rand_tensor_away_from_zero({m, n}, rng)});
  });
  trials.emplace_back("gelu", [](Rng& rng) {
    const std::size_t m = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({m, n}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::gelu(in[0]), w); },
        {rand_tensor({m, n}, rng)});
  });
  trials.emplace_back("softmax", [](Rng& rng) {
    const std::size_t m = rdim(rng), n = 1 + rng.uniform_index(6);
    Tensor w = rand_tensor({m, n}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::softmax(in[0]), w); },
        {rand_tensor({m, n}, rng)});
  });
  trials.emplace_back("attention_softmax", [](Rng& rng) {
    const std::size_t batch = 1 + rng.uniform_index(2);
    const std::size_t heads = 1 + rng.uniform_index(2);
    const std::size_t len = 2 + rng.uniform_index(3);
    std::vector<std::uint8_t> mask(batch * len);
    for (std::size_t b = 0; b < batch; ++b) {
      mask[b * len] = 1;
      for (std::size_t l = 1; l < len; ++l) mask[b * len + l] = rng.bernoulli(0.7) ? 1 : 0;
    }
    Tensor w = rand_tensor({batch * heads, len, len}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) {
          return project(hft::attention_softmax(in[0], mask, heads), w);
        },
        {rand_tensor({batch * heads, len, len}, rng)});
  });
  trials.emplace_back("cross_entropy", [](Rng& rng) {
    const std::size_t b = 1 + rng.uniform_index(4), c = 2 + rng.uniform_index(5);
    std::vector<std::size_t> targets(b);
    for (auto& t : targets) t = rng.uniform_index(c);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return hft::cross_entropy(in[0], targets); },
        {rand_tensor({b, c}, rng)});
  });
  trials.emplace_back("layer_norm", [](Rng& rng) {
    const std::size_t m = rdim(rng), d = 2 + rng.uniform_index(5);
    Tensor w = rand_tensor({m, d}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) {
          return project(hft::layer_norm(in[0], in[1], in[2], 1e-5), w);
        },
        {rand_tensor({m, d}, rng), rand_tensor({d}, rng), rand_tensor({d}, rng)});
  });
  trials.emplace_back("dropout", [](Rng& rng) {
    const std::size_t m = rdim(rng), n = rdim(rng);
    Tensor w = rand_tensor({m, n}, rng, false);
    const std::uint64_t mask_seed = rng.next_u64();
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) {
          Rng mask_rng(mask_seed);  // re-seeded per call, so f is deterministic
          return project(hft::dropout(in[0], 0.3, hft::Mode::train, mask_rng), w);
        },
        {rand_tensor({m, n}, rng)});
  });
  trials.emplace_back("gather_rows", [](Rng& rng) {
    const std::size_t rows = 2 + rng.uniform_index(4), d = rdim(rng);
    const std::size_t n = 1 + rng.uniform_index(6);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = rng.uniform_index(rows);
    Tensor w = rand_tensor({n, d}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::gather_rows(in[0], idx), w); },
        {rand_tensor({rows, d}, rng)});
  });
  trials.emplace_back("scale_rows", [](Rng& rng) {
    const std::size_t m = rdim(rng), d = rdim(rng);
    std::vector<double> scales(m);
    for (double& s : scales) s = rng.normal();
    Tensor w = rand_tensor({m, d}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::scale_rows(in[0], scales), w); },
        {rand_tensor({m, d}, rng)});
  });
  trials.emplace_back("concat_cols", [](Rng& rng) {
    const std::size_t m = rdim(rng), d1 = rdim(rng), d2 = rdim(rng);
    Tensor w = rand_tensor({m, d1 + d2}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) { return project(hft::concat_cols({in[0], in[1]}), w); },
        {rand_tensor({m, d1}, rng), rand_tensor({m, d2}, rng)});
  });
  trials.emplace_back("split_merge_heads", [](Rng& rng) {
    const std::size_t batch = 1 + rng.uniform_index(2), len = 1 + rng.uniform_index(3);
    const std::size_t heads = 1 + rng.uniform_index(2);
    const std::size_t d = heads * (1 + rng.uniform_index(3));
    Tensor w = rand_tensor({batch * len, d}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) {
          return project(hft::merge_heads(hft::split_heads(in[0], batch, len, heads), heads), w);
        },
        {rand_tensor({batch * len, d}, rng)});
  });
  trials.emplace_back("conv1d_same", [](Rng& rng) {
    const std::size_t b = 1 + rng.uniform_index(2), l = 1 + rng.uniform_index(4);
    const std::size_t e = rdim(rng), width = 1 + rng.uniform_index(4), f = rdim(rng);
    Tensor w = rand_tensor({b, l, f}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) {
          return project(hft::conv1d_same(in[0], in[1], in[2]), w);
        },
        {rand_tensor({b, l, e}, rng), rand_tensor({width, e, f}, rng), rand_tensor({f}, rng)});
  });
  trials.emplace_back("masked_max_over_time", [](Rng& rng) {
    const std::size_t b = 1 + rng.uniform_index(2), l = 2 + rng.uniform_index(3);
    const std::size_t f = rdim(rng);
    std::vector<std::size_t> lengths(b);
    for (auto& n : lengths) n = 1 + rng.uniform_index(l);
    hft::Tensor x({b, l, f}, spaced_random_values(b * l * f, rng), true);
    Tensor w = rand_tensor({b, f}, rng, false);
    return hft::grad_check(
        [&](const std::vector<Tensor>& in) {
          return project(hft::masked_max_over_time(in[0], lengths), w);
        },
        {x});
  });
  return trials;
}

}  // namespace hft_test
