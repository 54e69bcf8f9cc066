#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hft/errors.hpp"
#include "hft/ops.hpp"
#include "hft/rng.hpp"
#include "hft/tensor.hpp"

namespace hft {

// Level-local classifier: dropout, then a linear map to class logits. The
// softmax is folded into the loss and into prediction; logits order suffices
// for argmax. One independent head per hierarchy level; head parameters are
// never transferred or shared across levels.
struct HeadParams {
  int level = 0;  // 2 or 3
  std::size_t in_dim = 0;
  std::size_t num_classes = 0;
  double dropout_p = 0.0;
  Tensor w;  // [in_dim, num_classes]
  Tensor b;  // [num_classes]

  template <class Fn>
  void for_each_param(Fn&& fn) {
    fn("W", w);
    fn("b", b);
  }

  HeadParams clone() const {
    HeadParams copy = *this;
    copy.w = w.clone();
    copy.b = b.clone();
    return copy;
  }
};

inline HeadParams init_head(int level, std::size_t in_dim, std::size_t num_classes,
                            double dropout_p, std::uint64_t seed) {
  if (in_dim < 1 || num_classes < 1) throw ConfigError("head: dimensions must be >= 1");
  HeadParams h;
  h.level = level;
  h.in_dim = in_dim;
  h.num_classes = num_classes;
  h.dropout_p = dropout_p;
  Rng rng(seed);
  std::vector<double> wv(in_dim * num_classes);
  for (double& x : wv) x = rng.truncated_normal(0.02, 2.0);
  h.w = Tensor({in_dim, num_classes}, std::move(wv), true);
  h.b = Tensor::zeros({num_classes}, true);
  return h;
}

inline Tensor head_forward(HeadParams& head, const Tensor& features, Mode mode, Rng& rng) {
  if (features.rank() != 2 || features.dim(1) != head.in_dim)
    throw ShapeError("head_forward: features " + shape_str(features.shape()) +
                     " do not match in_dim " + std::to_string(head.in_dim));
  Tensor x = dropout(features, head.dropout_p, mode, rng);
  return add_bias(matmul(x, head.w), head.b);
}

// Per-row argmax of the logits (equivalently of their softmax); ties break
// toward the lowest class index.
inline std::vector<std::size_t> predict(const Tensor& logits) {
  if (logits.rank() != 2)
    throw ShapeError("predict: expected [batch, classes], got " + shape_str(logits.shape()));
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<std::size_t> out(batch);
  const auto& v = logits.values();
  for (std::size_t i = 0; i < batch; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (v[i * classes + c] > v[i * classes + best]) best = c;
    out[i] = best;
  }
  return out;
}

}  // namespace hft
