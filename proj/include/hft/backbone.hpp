#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "hft/cnn.hpp"
#include "hft/train_config.hpp"
#include "hft/transformer.hpp"

namespace hft {

// Either encoder behind one interface. Both expose the same contract: a
// batch of padded token ids plus mask goes in, a [batch x feature_dim]
// representation comes out, and the whole parameter set is what levels
// transfer in the hft regime.
using BackboneParams = std::variant<EncoderParams, CnnParams>;

inline std::size_t feature_dim(const BackboneParams& p) {
  return std::visit([](const auto& params) { return params.feature_dim(); }, p);
}

inline BackboneParams clone_backbone(const BackboneParams& p) {
  return std::visit([](const auto& params) { return BackboneParams(params.clone()); }, p);
}

template <class Fn>
inline void for_each_backbone_param(BackboneParams& p, Fn&& fn) {
  std::visit([&](auto& params) { params.for_each_param(fn); }, p);
}

inline Tensor backbone_forward(BackboneParams& p, const std::vector<std::size_t>& token_ids,
                               const std::vector<std::uint8_t>& mask, std::size_t batch,
                               std::size_t seq_len, Mode mode, Rng& rng) {
  if (auto* enc = std::get_if<EncoderParams>(&p))
    return encode_batch(*enc, token_ids, mask, batch, seq_len, mode, rng);
  return encode_batch_cnn(std::get<CnnParams>(p), token_ids, mask, batch, seq_len, mode, rng);
}

inline BackboneParams init_backbone(const TrainConfig& cfg, std::uint64_t seed) {
  if (cfg.backbone == Backbone::transformer)
    return init_encoder(cfg.transformer, seed);
  return init_cnn(cfg.cnn, seed);
}

namespace detail {

// Zero-valued parameter structures with the configured shapes, used as the
// destination when loading checkpoints.
inline EncoderParams encoder_shell(const TransformerConfig& config) {
  config.validate();
  EncoderParams p;
  p.config = config;
  const std::size_t d = config.d_model, ff = config.resolved_d_ff();
  p.token_embedding = Tensor::zeros({config.vocab_size, d}, true);
  p.position_embedding = Tensor::zeros({config.max_positions, d}, true);
  p.emb_ln_gamma = Tensor::zeros({d}, true);
  p.emb_ln_beta = Tensor::zeros({d}, true);
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    TransformerLayerParams l;
    l.w_q = Tensor::zeros({d, d}, true);
    l.b_q = Tensor::zeros({d}, true);
    l.w_k = Tensor::zeros({d, d}, true);
    l.b_k = Tensor::zeros({d}, true);
    l.w_v = Tensor::zeros({d, d}, true);
    l.b_v = Tensor::zeros({d}, true);
    l.w_o = Tensor::zeros({d, d}, true);
    l.b_o = Tensor::zeros({d}, true);
    l.ff_w1 = Tensor::zeros({d, ff}, true);
    l.ff_b1 = Tensor::zeros({ff}, true);
    l.ff_w2 = Tensor::zeros({ff, d}, true);
    l.ff_b2 = Tensor::zeros({d}, true);
    l.ln1_gamma = Tensor::zeros({d}, true);
    l.ln1_beta = Tensor::zeros({d}, true);
    l.ln2_gamma = Tensor::zeros({d}, true);
    l.ln2_beta = Tensor::zeros({d}, true);
    p.layers.push_back(std::move(l));
  }
  return p;
}

inline CnnParams cnn_shell(const CnnConfig& config) {
  config.validate();
  CnnParams p;
  p.config = config;
  p.token_embedding = Tensor::zeros({config.vocab_size, config.embed_dim}, true);
  for (std::size_t i = 0; i < 3; ++i) {
    p.convs[i].kernel = Tensor::zeros(
        {config.kernel_widths[i], config.embed_dim, config.filters_per_width}, true);
    p.convs[i].bias = Tensor::zeros({config.filters_per_width}, true);
  }
  return p;
}

}  // namespace detail

inline BackboneParams backbone_shell(const TrainConfig& cfg) {
  if (cfg.backbone == Backbone::transformer) return detail::encoder_shell(cfg.transformer);
  return detail::cnn_shell(cfg.cnn);
}

}  // namespace hft
