#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hft/errors.hpp"
#include "hft/ops.hpp"
#include "hft/rng.hpp"
#include "hft/tensor.hpp"

namespace hft {

// Desk-scale bidirectional transformer encoder. The defaults are sized for
// CPU experiments; n_layers 12 and d_model 768 restore the standard
// base-size encoder geometry this design follows.
struct TransformerConfig {
  std::size_t vocab_size = 0;     // filled from the corpus when 0
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 0;           // 0 -> 4 * d_model
  std::size_t max_positions = 0;  // filled from the corpus (max_len + 1) when 0
  double dropout_p = 0.1;

  std::size_t resolved_d_ff() const { return d_ff == 0 ? 4 * d_model : d_ff; }

  void validate() const {
    if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || max_positions < 1)
      throw ConfigError("transformer config: all dimensions must be >= 1");
    if (d_model % n_heads != 0)
      throw ConfigError("transformer config: n_heads " + std::to_string(n_heads) +
                        " must divide d_model " + std::to_string(d_model));
    if (dropout_p < 0.0 || dropout_p >= 1.0)
      throw ConfigError("transformer config: dropout_p must lie in [0, 1)");
  }
};

struct TransformerLayerParams {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

// The transferable encoder state: exactly the parameters that hierarchical
// fine-tuning carries from one level to the next. Classifier heads live
// elsewhere and are never shared.
struct EncoderParams {
  TransformerConfig config;
  Tensor token_embedding;     // [vocab, d_model]
  Tensor position_embedding;  // [max_positions, d_model]
  Tensor emb_ln_gamma, emb_ln_beta;
  std::vector<TransformerLayerParams> layers;

  std::size_t feature_dim() const { return config.d_model; }

  template <class Fn>
  void for_each_param(Fn&& fn) {
    fn("token_embedding", token_embedding);
    fn("position_embedding", position_embedding);
    fn("emb_ln_gamma", emb_ln_gamma);
    fn("emb_ln_beta", emb_ln_beta);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string prefix = "layers/" + std::to_string(i) + "/";
      TransformerLayerParams& l = layers[i];
      fn(prefix + "w_q", l.w_q);
      fn(prefix + "b_q", l.b_q);
      fn(prefix + "w_k", l.w_k);
      fn(prefix + "b_k", l.b_k);
      fn(prefix + "w_v", l.w_v);
      fn(prefix + "b_v", l.b_v);
      fn(prefix + "w_o", l.w_o);
      fn(prefix + "b_o", l.b_o);
      fn(prefix + "ff_w1", l.ff_w1);
      fn(prefix + "ff_b1", l.ff_b1);
      fn(prefix + "ff_w2", l.ff_w2);
      fn(prefix + "ff_b2", l.ff_b2);
      fn(prefix + "ln1_gamma", l.ln1_gamma);
      fn(prefix + "ln1_beta", l.ln1_beta);
      fn(prefix + "ln2_gamma", l.ln2_gamma);
      fn(prefix + "ln2_beta", l.ln2_beta);
    }
  }

  EncoderParams clone() const {
    EncoderParams copy;
    copy.config = config;
    copy.token_embedding = token_embedding.clone();
    copy.position_embedding = position_embedding.clone();
    copy.emb_ln_gamma = emb_ln_gamma.clone();
    copy.emb_ln_beta = emb_ln_beta.clone();
    copy.layers.reserve(layers.size());
    for (const TransformerLayerParams& l : layers) {
      copy.layers.push_back(TransformerLayerParams{
          l.w_q.clone(), l.b_q.clone(), l.w_k.clone(), l.b_k.clone(), l.w_v.clone(),
          l.b_v.clone(), l.w_o.clone(), l.b_o.clone(), l.ff_w1.clone(), l.ff_b1.clone(),
          l.ff_w2.clone(), l.ff_b2.clone(), l.ln1_gamma.clone(), l.ln1_beta.clone(),
          l.ln2_gamma.clone(), l.ln2_beta.clone()});
    }
    return copy;
  }
};

namespace detail {

inline Tensor init_weight(Shape shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.truncated_normal(0.02, 2.0);
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor init_zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }

inline Tensor init_ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

}  // namespace detail

// Weights ~ Normal(0, 0.02) truncated at two sigma; biases and layer-norm
// shifts zero; layer-norm gains one. Deterministic for a given seed.
inline EncoderParams init_encoder(const TransformerConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  EncoderParams p;
  p.config = config;
  const std::size_t d = config.d_model, ff = config.resolved_d_ff();
  p.token_embedding = detail::init_weight({config.vocab_size, d}, rng);
  p.position_embedding = detail::init_weight({config.max_positions, d}, rng);
  p.emb_ln_gamma = detail::init_ones({d});
  p.emb_ln_beta = detail::init_zeros({d});
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    TransformerLayerParams l;
    l.w_q = detail::init_weight({d, d}, rng);
    l.b_q = detail::init_zeros({d});
    l.w_k = detail::init_weight({d, d}, rng);
    l.b_k = detail::init_zeros({d});
    l.w_v = detail::init_weight({d, d}, rng);
    l.b_v = detail::init_zeros({d});
    l.w_o = detail::init_weight({d, d}, rng);
    l.b_o = detail::init_zeros({d});
    l.ff_w1 = detail::init_weight({d, ff}, rng);
    l.ff_b1 = detail::init_zeros({ff});
    l.ff_w2 = detail::init_weight({ff, d}, rng);
    l.ff_b2 = detail::init_zeros({d});
    l.ln1_gamma = detail::init_ones({d});
    l.ln1_beta = detail::init_zeros({d});
    l.ln2_gamma = detail::init_ones({d});
    l.ln2_beta = detail::init_zeros({d});
    p.layers.push_back(std::move(l));
  }
  return p;
}

// Forward pass over a padded batch: token + position embeddings with layer
// norm, then pre-norm blocks of masked multi-head self-attention and GELU
// feed-forward, each with a residual connection. Padded key columns receive
// -1e9 before the attention softmax, so their weight underflows to zero and
// the pooled output does not depend on pad positions. Returns the final
// hidden state of position 0 (the <cls> slot) for each sequence.
inline Tensor encode_batch(EncoderParams& params, const std::vector<std::size_t>& token_ids,
                           const std::vector<std::uint8_t>& mask, std::size_t batch,
                           std::size_t seq_len, Mode mode, Rng& rng) {
  const TransformerConfig& cfg = params.config;
  if (seq_len > cfg.max_positions)
    throw ConfigError("sequence length " + std::to_string(seq_len) + " exceeds max_positions " +
                      std::to_string(cfg.max_positions));
  if (token_ids.size() != batch * seq_len || mask.size() != batch * seq_len)
    throw ShapeError("encode_batch: ids/mask must hold batch * seq_len entries");
  const std::size_t d = cfg.d_model, heads = cfg.n_heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(d / heads));
  constexpr double kLnEps = 1e-5;

  std::vector<std::size_t> positions(batch * seq_len);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t l = 0; l < seq_len; ++l) positions[b * seq_len + l] = l;

  Tensor h = add(embedding_lookup(params.token_embedding, token_ids),
                 embedding_lookup(params.position_embedding, positions));
  h = layer_norm(h, params.emb_ln_gamma, params.emb_ln_beta, kLnEps);

  for (TransformerLayerParams& l : params.layers) {
    Tensor x = layer_norm(h, l.ln1_gamma, l.ln1_beta, kLnEps);
    Tensor q = split_heads(add_bias(matmul(x, l.w_q), l.b_q), batch, seq_len, heads);
    Tensor k = split_heads(add_bias(matmul(x, l.w_k), l.b_k), batch, seq_len, heads);
    Tensor v = split_heads(add_bias(matmul(x, l.w_v), l.b_v), batch, seq_len, heads);
    Tensor scores = scale(bmm(q, transpose_last2(k)), attn_scale);
    Tensor probs = attention_softmax(scores, mask, heads);
    probs = dropout(probs, cfg.dropout_p, mode, rng);
    Tensor context = merge_heads(bmm(probs, v), heads);
    Tensor attn_out = add_bias(matmul(context, l.w_o), l.b_o);
    attn_out = dropout(attn_out, cfg.dropout_p, mode, rng);
    h = add(h, attn_out);

    Tensor y = layer_norm(h, l.ln2_gamma, l.ln2_beta, kLnEps);
    Tensor ff = add_bias(matmul(gelu(add_bias(matmul(y, l.ff_w1), l.ff_b1)), l.ff_w2), l.ff_b2);
    ff = dropout(ff, cfg.dropout_p, mode, rng);
    h = add(h, ff);
  }

  std::vector<std::size_t> cls_rows(batch);
  for (std::size_t b = 0; b < batch; ++b) cls_rows[b] = b * seq_len;
  return select_rows(h, cls_rows);
}

}  // namespace hft
