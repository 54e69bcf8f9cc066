#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "hft/cnn.hpp"
#include "hft/grad_check.hpp"
#include "hft/head.hpp"

namespace {

using hft::CnnConfig;
using hft::CnnParams;
using hft::Tensor;

CnnConfig toy_config() {
  CnnConfig cfg;
  cfg.vocab_size = 20;
  cfg.embed_dim = 6;
  cfg.kernel_widths = {2, 3, 4};
  cfg.filters_per_width = 5;
  cfg.dropout_p = 0.1;
  return cfg;
}

std::vector<double> collect_values(CnnParams& p) {
  std::vector<double> out;
  p.for_each_param([&](const std::string&, Tensor& t) {
    out.insert(out.end(), t.values().begin(), t.values().end());
  });
  return out;
}

TEST(InitCnn, DeterministicBitwise) {
  CnnParams a = hft::init_cnn(toy_config(), 55);
  CnnParams b = hft::init_cnn(toy_config(), 55);
  EXPECT_EQ(collect_values(a), collect_values(b));
}

TEST(InitCnn, DefaultFeatureDimIs300) {
  CnnConfig cfg;
  EXPECT_EQ(cfg.feature_dim(), 300u);  // 3 widths x 100 filters
}

TEST(InitCnn, BiasesZero) {
  CnnParams p = hft::init_cnn(toy_config(), 55);
  for (const auto& conv : p.convs)
    for (double v : conv.bias.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(EncodeBatchCnn, ShortSequenceStillFinite) {
  CnnParams p = hft::init_cnn(toy_config(), 3);
  hft::Rng rng(1);
  // Sequence length 2 < max kernel width 4.
  const std::vector<std::size_t> ids = {2, 7};
  const std::vector<std::uint8_t> mask = {1, 1};
  Tensor out = hft::encode_batch_cnn(p, ids, mask, 1, 2, hft::Mode::eval, rng);
  ASSERT_EQ(out.shape(), (hft::Shape{1, 15}));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_TRUE(std::isfinite(out.at(i)));
}

TEST(EncodeBatchCnn, TrailingPadsDoNotChangeFeatures) {
  CnnParams p = hft::init_cnn(toy_config(), 3);
  hft::Rng rng(1);
  const std::vector<std::size_t> ids5 = {2, 7, 9, 0, 0};
  const std::vector<std::uint8_t> mask5 = {1, 1, 1, 0, 0};
  Tensor a = hft::encode_batch_cnn(p, ids5, mask5, 1, 5, hft::Mode::eval, rng);

  const std::vector<std::size_t> ids8 = {2, 7, 9, 0, 0, 0, 0, 0};
  const std::vector<std::uint8_t> mask8 = {1, 1, 1, 0, 0, 0, 0, 0};
  Tensor b = hft::encode_batch_cnn(p, ids8, mask8, 1, 8, hft::Mode::eval, rng);

  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-9);
}

TEST(EncodeBatchCnn, MaskedPositionContentIsIrrelevant) {
  CnnParams p = hft::init_cnn(toy_config(), 3);
  hft::Rng rng(1);
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0, 0};
  const std::vector<std::size_t> ids_a = {2, 7, 9, 0, 0};
  const std::vector<std::size_t> ids_b = {2, 7, 9, 13, 5};
  Tensor a = hft::encode_batch_cnn(p, ids_a, mask, 1, 5, hft::Mode::eval, rng);
  Tensor b = hft::encode_batch_cnn(p, ids_b, mask, 1, 5, hft::Mode::eval, rng);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-9);
}

TEST(EncodeBatchCnn, OutputShapeIndependentOfLength) {
  CnnParams p = hft::init_cnn(toy_config(), 3);
  hft::Rng rng(1);
  for (std::size_t len : {2u, 5u, 11u}) {
    std::vector<std::size_t> ids(len, 7);
    ids[0] = 2;
    std::vector<std::uint8_t> mask(len, 1);
    Tensor out = hft::encode_batch_cnn(p, ids, mask, 1, len, hft::Mode::eval, rng);
    EXPECT_EQ(out.shape(), (hft::Shape{1, 15}));
  }
}

TEST(EncodeBatchCnn, EvalModeIsBitwiseDeterministic) {
  CnnParams p = hft::init_cnn(toy_config(), 3);
  hft::Rng rng_a(1), rng_b(2);
  const std::vector<std::size_t> ids = {2, 7, 9, 4, 0};
  const std::vector<std::uint8_t> mask = {1, 1, 1, 1, 0};
  Tensor a = hft::encode_batch_cnn(p, ids, mask, 1, 5, hft::Mode::eval, rng_a);
  Tensor b = hft::encode_batch_cnn(p, ids, mask, 1, 5, hft::Mode::eval, rng_b);
  EXPECT_EQ(a.values(), b.values());
}

TEST(EncodeBatchCnn, EndToEndGradCheck) {
  CnnParams cnn = hft::init_cnn(toy_config(), 31);
  hft::HeadParams head = hft::init_head(2, 15, 3, 0.0, 32);
  const std::vector<std::size_t> ids = {2, 5, 9, 13, 0, 2, 7, 11, 0, 0};
  const std::vector<std::uint8_t> mask = {1, 1, 1, 1, 0, 1, 1, 1, 0, 0};
  const std::vector<std::size_t> targets = {0, 2};

  hft::Rng scale_rng(4242);
  std::vector<Tensor> params;
  cnn.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
  head.for_each_param([&](const std::string&, Tensor& t) { params.push_back(t); });
  for (Tensor& t : params)
    for (double& v : t.values()) v = 0.5 * scale_rng.normal();

  auto f = [&](const std::vector<Tensor>&) {
    hft::Rng rng(0);
    Tensor features = hft::encode_batch_cnn(cnn, ids, mask, 2, 5, hft::Mode::eval, rng);
    Tensor logits = hft::head_forward(head, features, hft::Mode::eval, rng);
    return hft::cross_entropy(logits, targets);
  };
  EXPECT_LE(hft::grad_check(f, params), 1e-4);
}

}  // namespace
