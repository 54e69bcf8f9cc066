#pragma once

#include <cmath>
#include <cstddef>

#include "hft/errors.hpp"

namespace hft {

// Cosine annealing from lr_max down to lr_min over total_steps:
//   lr(t) = lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2
// The endpoints are returned exactly; steps past the horizon clamp to
// lr_min. Monotone non-increasing in t.
inline double lr_at(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (total_steps < 1) throw ContractError("lr_at: total_steps must be >= 1");
  if (lr_min < 0.0 || lr_max < lr_min)
    throw ContractError("lr_at: need lr_max >= lr_min >= 0");
  if (step == 0) return lr_max;
  if (step >= total_steps) return lr_min;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * progress));
}

}  // namespace hft
