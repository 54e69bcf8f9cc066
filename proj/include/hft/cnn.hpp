#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hft/errors.hpp"
#include "hft/ops.hpp"
#include "hft/rng.hpp"
#include "hft/tensor.hpp"

namespace hft {

// Text-CNN backbone: embedding lookup, three parallel convolution widths
// with ReLU, masked max-over-time pooling, concatenation. The embedding is a
// trainable lookup table standing in for pretrained word vectors; checkpoint
// loading is the injection point for externally trained embeddings.
struct CnnConfig {
  std::size_t vocab_size = 0;  // filled from the corpus when 0
  std::size_t embed_dim = 300;
  std::array<std::size_t, 3> kernel_widths = {3, 4, 5};
  std::size_t filters_per_width = 100;
  double dropout_p = 0.1;

  std::size_t feature_dim() const { return 3 * filters_per_width; }

  void validate() const {
    if (vocab_size < 1 || embed_dim < 1 || filters_per_width < 1)
      throw ConfigError("cnn config: all dimensions must be >= 1");
    for (std::size_t w : kernel_widths)
      if (w < 1) throw ConfigError("cnn config: kernel widths must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
      throw ConfigError("cnn config: dropout_p must lie in [0, 1)");
  }
};

struct CnnConvParams {
  Tensor kernel;  // [width, embed_dim, filters]
  Tensor bias;    // [filters]
};

struct CnnParams {
  CnnConfig config;
  Tensor token_embedding;  // [vocab, embed_dim]
  std::array<CnnConvParams, 3> convs;

  std::size_t feature_dim() const { return config.feature_dim(); }

  template <class Fn>
  void for_each_param(Fn&& fn) {
    fn("token_embedding", token_embedding);
    for (std::size_t i = 0; i < convs.size(); ++i) {
      const std::string prefix = "convs/" + std::to_string(i) + "/";
      fn(prefix + "kernel", convs[i].kernel);
      fn(prefix + "bias", convs[i].bias);
    }
  }

  CnnParams clone() const {
    CnnParams copy;
    copy.config = config;
    copy.token_embedding = token_embedding.clone();
    for (std::size_t i = 0; i < convs.size(); ++i)
      copy.convs[i] = CnnConvParams{convs[i].kernel.clone(), convs[i].bias.clone()};
    return copy;
  }
};

inline CnnParams init_cnn(const CnnConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  CnnParams p;
  p.config = config;
  auto weight = [&rng](Shape shape) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.truncated_normal(0.02, 2.0);
    return Tensor(std::move(shape), std::move(v), true);
  };
  p.token_embedding = weight({config.vocab_size, config.embed_dim});
  for (std::size_t i = 0; i < 3; ++i) {
    p.convs[i].kernel = weight({config.kernel_widths[i], config.embed_dim,
                                config.filters_per_width});
    p.convs[i].bias = Tensor::zeros({config.filters_per_width}, true);
  }
  return p;
}

// Pad embeddings are zeroed and pooling is restricted to real positions, so
// the features cannot depend on trailing pad count. Convolution windows past
// the real length see implicit zeros only.
inline Tensor encode_batch_cnn(CnnParams& params, const std::vector<std::size_t>& token_ids,
                               const std::vector<std::uint8_t>& mask, std::size_t batch,
                               std::size_t seq_len, Mode mode, Rng& rng) {
  const CnnConfig& cfg = params.config;
  if (token_ids.size() != batch * seq_len || mask.size() != batch * seq_len)
    throw ShapeError("encode_batch_cnn: ids/mask must hold batch * seq_len entries");

  std::vector<double> keep(mask.size());
  std::vector<std::size_t> lengths(batch, 0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t l = 0; l < seq_len; ++l) {
      keep[b * seq_len + l] = mask[b * seq_len + l] ? 1.0 : 0.0;
      lengths[b] += mask[b * seq_len + l];
    }
  for (std::size_t b = 0; b < batch; ++b)
    if (lengths[b] == 0) throw ContractError("encode_batch_cnn: sequence with empty mask");

  Tensor embedded = scale_rows(embedding_lookup(params.token_embedding, token_ids), keep);
  Tensor x = reshape(embedded, {batch, seq_len, cfg.embed_dim});
  std::vector<Tensor> pooled;
  pooled.reserve(3);
  for (CnnConvParams& conv : params.convs) {
    Tensor y = relu(conv1d_same(x, conv.kernel, conv.bias));
    pooled.push_back(masked_max_over_time(y, lengths));
  }
  Tensor features = concat_cols(pooled);
  return dropout(features, cfg.dropout_p, mode, rng);
}

}  // namespace hft
