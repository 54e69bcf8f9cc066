// 100-trial finite-difference sweep over every differentiable op, with
// fixed seeds. The trial generators live in op_sweep.hpp and are shared
// with the acceptance suite.

#include <string>

#include "gtest/gtest.h"
#include "hft/rng.hpp"
#include "op_sweep.hpp"

namespace {

constexpr int kTrials = 100;
constexpr double kTol = 1e-4;

class OpGradients : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradients, HundredRandomTrials) {
  const auto trials = hft_test::all_op_trials();
  const auto& [name, trial] = trials.at(GetParam());
  hft::Rng rng(hft::Rng::derive(900, name));
  double worst = 0.0;
  for (int i = 0; i < kTrials; ++i) worst = std::max(worst, trial(rng));
  EXPECT_LE(worst, kTol) << "op " << name;
}

std::string op_name(const ::testing::TestParamInfo<std::size_t>& info) {
  return hft_test::all_op_trials().at(info.param).first;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradients,
                         ::testing::Range(std::size_t{0}, hft_test::all_op_trials().size()),
                         op_name);

}  // namespace
