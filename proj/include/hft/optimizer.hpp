#pragma once

#include <cmath>
#include <vector>

#include "hft/errors.hpp"
#include "hft/tensor.hpp"

namespace hft {

// Adam with bias correction. State shapes mirror the parameter shapes; the
// step counter is shared across all parameters of one optimizer instance.
// The update is pure arithmetic in a fixed order, so trajectories are
// bitwise reproducible.
struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(std::vector<Tensor> params, AdamConfig config = {})
      : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
      if (!p.requires_grad())
        throw ContractError("optimizer parameter without requires_grad");
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  std::size_t step_count() const { return step_; }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  void step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& values = params_[i].values();
      const auto& grad = params_[i].grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < values.size(); ++j) {
        const double g = grad[j];
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
        const double m_hat = m[j] / bc1;
        const double v_hat = v[j] / bc2;
        values[j] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
  AdamConfig config_;
};

}  // namespace hft
