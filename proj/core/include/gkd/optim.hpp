// SPDX-License-Identifier: Apache-2.0
/**
 * @file   optim.hpp
 * @brief  SGD with momentum, coupled weight decay and a milestone
 *         step-decay learning-rate schedule.
 */
#pragma once

#include <span>
#include <vector>

namespace gkd {

struct SGDConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<int> milestones{10, 18, 24};
  double gamma = 0.1;

  void validate() const;
};

/// lr0 * gamma^(number of milestones <= epoch).
double lr_at(const SGDConfig& cfg, int epoch);

/// Momentum buffers, one per parameter tensor.
struct SGDState {
  std::vector<std::vector<double>> velocity;
};

/// v <- momentum * v + (g + wd * w);  w <- w - lr_at(epoch) * v
void sgd_step(std::span<const std::span<double>> params,
              std::span<const std::span<const double>> grads, SGDState& state,
              const SGDConfig& cfg, int epoch);

}  // namespace gkd
