#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "hft/optimizer.hpp"
#include "hft/ops.hpp"
#include "hft/schedule.hpp"

namespace {

using hft::Tensor;

TEST(LrAt, ExactEndpointsAndMidpoint) {
  const double lr_max = 1e-3, lr_min = 0.0;
  EXPECT_DOUBLE_EQ(hft::lr_at(0, 1000, lr_max, lr_min), lr_max);
  EXPECT_DOUBLE_EQ(hft::lr_at(1000, 1000, lr_max, lr_min), lr_min);
  EXPECT_DOUBLE_EQ(hft::lr_at(500, 1000, lr_max, lr_min), (lr_max + lr_min) / 2.0);
}

TEST(LrAt, NonzeroFloorEndpoints) {
  const double lr_max = 3e-3, lr_min = 1e-4;
  EXPECT_DOUBLE_EQ(hft::lr_at(0, 10, lr_max, lr_min), lr_max);
  EXPECT_DOUBLE_EQ(hft::lr_at(10, 10, lr_max, lr_min), lr_min);
}

TEST(LrAt, ClampsPastHorizon) {
  EXPECT_DOUBLE_EQ(hft::lr_at(17, 10, 1e-3, 1e-5), 1e-5);
}

TEST(LrAt, MonotoneNonIncreasingAndBounded) {
  const double lr_max = 2e-3, lr_min = 1e-5;
  double prev = hft::lr_at(0, 1000, lr_max, lr_min);
  for (std::size_t step = 1; step <= 1000; ++step) {
    const double lr = hft::lr_at(step, 1000, lr_max, lr_min);
    EXPECT_LE(lr, prev);
    EXPECT_GE(lr, lr_min);
    EXPECT_LE(lr, lr_max);
    prev = lr;
  }
}

TEST(LrAt, ContractErrors) {
  EXPECT_THROW(hft::lr_at(0, 0, 1e-3, 0.0), hft::ContractError);
  EXPECT_THROW(hft::lr_at(0, 10, 1e-4, 1e-3), hft::ContractError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p = Tensor::row({1.0, -2.0, 3.0}, true);
  const std::vector<double> before = p.values();
  hft::AdamOptimizer opt({p});
  opt.zero_grad();
  opt.step(0.1);
  EXPECT_EQ(p.values(), before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // Bias-corrected first step: delta = lr * g / (|g| + eps) = -lr up to eps.
  Tensor p = Tensor::row({0.0}, true);
  hft::AdamOptimizer opt({p});
  opt.zero_grad();
  hft::Tape tape;
  {
    hft::TapeScope scope(tape);
    tape.backward(hft::sum(p));  // dL/dp = 1
  }
  opt.step(0.1);
  EXPECT_NEAR(p.values()[0], -0.1, 1e-8);
}

TEST(Adam, DeterministicTrajectories) {
  auto run = []() {
    Tensor p = Tensor::row({0.5, -0.25, 1.5}, true);
    hft::AdamOptimizer opt({p});
    for (int i = 0; i < 25; ++i) {
      opt.zero_grad();
      hft::Tape tape;
      {
        hft::TapeScope scope(tape);
        tape.backward(hft::sum(hft::mul(p, p)));
      }
      opt.step(1e-2);
    }
    return p.values();
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, RejectsUntrackedParameters) {
  Tensor p = Tensor::row({1.0});
  EXPECT_THROW(hft::AdamOptimizer({p}), hft::ContractError);
}

TEST(Adam, DescendsAQuadraticBowl) {
  Tensor p = Tensor::row({2.0, -3.0}, true);
  hft::AdamOptimizer opt({p});
  for (int i = 0; i < 400; ++i) {
    opt.zero_grad();
    hft::Tape tape;
    {
      hft::TapeScope scope(tape);
      tape.backward(hft::sum(hft::mul(p, p)));
    }
    opt.step(hft::lr_at(static_cast<std::size_t>(i), 400, 5e-2, 0.0));
  }
  EXPECT_NEAR(p.values()[0], 0.0, 1e-2);
  EXPECT_NEAR(p.values()[1], 0.0, 1e-2);
}

}  // namespace
