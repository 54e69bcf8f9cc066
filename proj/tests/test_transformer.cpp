#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "hft/grad_check.hpp"
#include "hft/head.hpp"
#include "hft/transformer.hpp"

namespace {

using hft::EncoderParams;
using hft::Tensor;
using hft::TransformerConfig;

TransformerConfig toy_config() {
  TransformerConfig cfg;
  cfg.vocab_size = 20;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.max_positions = 16;
  cfg.dropout_p = 0.1;
  return cfg;
}

std::vector<double> collect_values(EncoderParams& p) {
  std::vector<double> out;
  p.for_each_param([&](const std::string&, Tensor& t) {
    out.insert(out.end(), t.values().begin(), t.values().end());
  });
  return out;
}

TEST(InitEncoder, DeterministicBitwise) {
  EncoderParams a = hft::init_encoder(toy_config(), 123);
  EncoderParams b = hft::init_encoder(toy_config(), 123);
  EXPECT_EQ(collect_values(a), collect_values(b));
  EncoderParams c = hft::init_encoder(toy_config(), 124);
  EXPECT_NE(collect_values(a), collect_values(c));
}

TEST(InitEncoder, GammaOneBiasZero) {
  EncoderParams p = hft::init_encoder(toy_config(), 9);
  for (double v : p.emb_ln_gamma.values()) EXPECT_DOUBLE_EQ(v, 1.0);
  for (const auto& l : p.layers) {
    for (double v : l.ln1_gamma.values()) EXPECT_DOUBLE_EQ(v, 1.0);
    for (double v : l.ln2_gamma.values()) EXPECT_DOUBLE_EQ(v, 1.0);
    for (double v : l.b_q.values()) EXPECT_DOUBLE_EQ(v, 0.0);
    for (double v : l.ff_b1.values()) EXPECT_DOUBLE_EQ(v, 0.0);
    for (double v : l.ln1_beta.values()) EXPECT_DOUBLE_EQ(v, 0.0);
  }
}

TEST(InitEncoder, EmbeddingSpread) {
  TransformerConfig cfg = toy_config();
  cfg.vocab_size = 200;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  EncoderParams p = hft::init_encoder(cfg, 77);
  const auto& v = p.token_embedding.values();
  ASSERT_GE(v.size(), 10000u);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  EXPECT_NEAR(std::sqrt(var), 0.02, 0.003);
  for (double x : v) EXPECT_LE(std::fabs(x), 0.04 + 1e-12);  // two-sigma truncation
}

TEST(EncodeBatch, DegenerateAllPadExceptCls) {
  EncoderParams p = hft::init_encoder(toy_config(), 5);
  hft::Rng rng(1);
  const std::size_t len = 6;
  std::vector<std::size_t> ids(len, 0);
  ids[0] = 2;
  std::vector<std::uint8_t> mask(len, 0);
  mask[0] = 1;
  Tensor pooled = hft::encode_batch(p, ids, mask, 1, len, hft::Mode::eval, rng);
  ASSERT_EQ(pooled.shape(), (hft::Shape{1, 8}));
  for (std::size_t i = 0; i < pooled.size(); ++i) EXPECT_TRUE(std::isfinite(pooled.at(i)));
}

TEST(EncodeBatch, TrailingPadsDoNotChangePooledOutput) {
  EncoderParams p = hft::init_encoder(toy_config(), 5);
  hft::Rng rng(1);
  // Two sequences, real lengths 4 and 2 (cls included).
  const std::vector<std::size_t> ids6 = {2, 5, 9, 13, 0, 0, 2, 7, 0, 0, 0, 0};
  const std::vector<std::uint8_t> mask6 = {1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0};
  Tensor short_out = hft::encode_batch(p, ids6, mask6, 2, 6, hft::Mode::eval, rng);

  std::vector<std::size_t> ids9 = {2, 5, 9, 13, 0, 0, 0, 0, 0, 2, 7, 0, 0, 0, 0, 0, 0, 0};
  std::vector<std::uint8_t> mask9 = {1, 1, 1, 1, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0};
  Tensor long_out = hft::encode_batch(p, ids9, mask9, 2, 9, hft::Mode::eval, rng);

  for (std::size_t i = 0; i < short_out.size(); ++i)
    EXPECT_NEAR(short_out.at(i), long_out.at(i), 1e-9);
}

TEST(EncodeBatch, MaskedPositionContentIsIrrelevant) {
  EncoderParams p = hft::init_encoder(toy_config(), 5);
  hft::Rng rng(1);
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0, 0, 0};
  const std::vector<std::size_t> ids_a = {2, 5, 9, 0, 0, 0};
  const std::vector<std::size_t> ids_b = {2, 5, 9, 17, 3, 11};  // junk in masked slots
  Tensor a = hft::encode_batch(p, ids_a, mask, 1, 6, hft::Mode::eval, rng);
  Tensor b = hft::encode_batch(p, ids_b, mask, 1, 6, hft::Mode::eval, rng);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-9);
}

TEST(EncodeBatch, PermutingTokensWithZeroPositionsKeepsPooledOutput) {
  EncoderParams p = hft::init_encoder(toy_config(), 5);
  std::fill(p.position_embedding.values().begin(), p.position_embedding.values().end(), 0.0);
  hft::Rng rng(1);
  const std::vector<std::uint8_t> mask(6, 1);
  const std::vector<std::size_t> ids = {2, 5, 9, 13, 7, 11};
  const std::vector<std::size_t> permuted = {2, 11, 13, 5, 9, 7};
  Tensor a = hft::encode_batch(p, ids, mask, 1, 6, hft::Mode::eval, rng);
  Tensor b = hft::encode_batch(p, permuted, mask, 1, 6, hft::Mode::eval, rng);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-9);
}

TEST(EncodeBatch, EvalModeIsBitwiseDeterministic) {
  EncoderParams p = hft::init_encoder(toy_config(), 5);
  hft::Rng rng_a(1), rng_b(99);
  const std::vector<std::size_t> ids = {2, 5, 9, 13, 0, 0};
  const std::vector<std::uint8_t> mask = {1, 1, 1, 1, 0, 0};
  Tensor a = hft::encode_batch(p, ids, mask, 1, 6, hft::Mode::eval, rng_a);
  Tensor b = hft::encode_batch(p, ids, mask, 1, 6, hft::Mode::eval, rng_b);
  EXPECT_EQ(a.values(), b.values());
}

TEST(EncodeBatch, Errors) {
  EncoderParams p = hft::init_encoder(toy_config(), 5);
  hft::Rng rng(1);
  std::vector<std::size_t> bad_ids = {2, 25, 0, 0, 0, 0};  // 25 >= vocab 20
  std::vector<std::uint8_t> mask = {1, 1, 0, 0, 0, 0};
  EXPECT_THROW(hft::encode_batch(p, bad_ids, mask, 1, 6, hft::Mode::eval, rng), hft::IndexError);

  std::vector<std::size_t> long_ids(20, 2);
  std::vector<std::uint8_t> long_mask(20, 1);
  EXPECT_THROW(hft::encode_batch(p, long_ids, long_mask, 1, 20, hft::Mode::eval, rng),
               hft::ConfigError);
}

TEST(EncodeBatch, EndToEndGradCheck) {
  EncoderParams encoder = hft::init_encoder(toy_config(), 21);
  hft::HeadParams head = hft::init_head(2, 8, 3, 0.0, 22);
  const std::vector<std::size_t> ids = {2, 5, 9, 13, 0, 0, 2, 7, 11, 0, 0, 0};
  const std::vector<std::uint8_t> mask = {1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0};
  const std::vector<std::size_t> targets = {0, 2};

  // Rescale all parameters to O(1) so no gradient sits below the resolution
  // of central differences.
  hft::Rng scale_rng(4242);
  std::vector<Tensor> params;
  std::vector<Tensor> key_biases;
  encoder.for_each_param([&](const std::string& name, Tensor& t) {
    // The key bias shifts every attention score in a row by the same amount,
    // which the softmax cancels: its true gradient is identically zero and a
    // finite-difference quotient there measures rounding noise only. It is
    // checked separately below.
    if (name.size() >= 3 && name.substr(name.size() - 3) == "b_k")
      key_biases.push_back(t);
    else
      params.push_back(t);
  });
  head.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
  for (Tensor& t : params)
    for (double& v : t.values()) v = 0.5 * scale_rng.normal();

  auto f = [&](const std::vector<Tensor>&) {
    hft::Rng rng(0);
    Tensor pooled = hft::encode_batch(encoder, ids, mask, 2, 6, hft::Mode::eval, rng);
    Tensor logits = hft::head_forward(head, pooled, hft::Mode::eval, rng);
    return hft::cross_entropy(logits, targets);
  };
  EXPECT_LE(hft::grad_check(f, params), 1e-4);

  for (Tensor& t : key_biases) t.zero_grad();
  hft::Tape tape;
  {
    hft::TapeScope scope(tape);
    tape.backward(f({}));
  }
  for (const Tensor& t : key_biases)
    for (double g : t.grad()) EXPECT_NEAR(g, 0.0, 1e-12);
}

}  // namespace
