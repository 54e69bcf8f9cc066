#pragma once

#include <functional>
#include <vector>

#include "hft/ops.hpp"
#include "hft/tensor.hpp"

namespace hft {

// Central finite-difference check of reverse-mode gradients.
//
// f must be deterministic (run dropout in eval mode or re-seed inside f) and
// produce a scalar. Returns the maximum over all input coordinates of
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                         std::vector<Tensor> inputs, double eps = 1e-5) {
  for (const Tensor& t : inputs) {
    if (!t.requires_grad())
      throw ContractError("grad_check: all inputs must have requires_grad set");
  }

  // Analytic pass.
  for (Tensor& t : inputs) t.zero_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor out = f(inputs);
    if (out.size() != 1)
      throw ContractError("grad_check: f must return a scalar, got " + shape_str(out.shape()));
    tape.backward(out);
  }

  // Numeric pass, perturbing one coordinate at a time with no tape active.
  double max_rel_err = 0.0;
  for (Tensor& t : inputs) {
    auto& vals = t.values();
    const auto& analytic = t.grad();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = f(inputs).item();
      vals[i] = saved - eps;
      const double down = f(inputs).item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max(1e-8, std::fabs(analytic[i]) + std::fabs(numeric));
      max_rel_err = std::max(max_rel_err, std::fabs(analytic[i] - numeric) / denom);
    }
  }
  return max_rel_err;
}

}  // namespace hft
