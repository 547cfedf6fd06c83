// SPDX-License-Identifier: Apache-2.0
#include "gkd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace gkd {

void SGDConfig::validate() const {
  if (!(lr0 > 0.0)) throw std::invalid_argument("lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) {
    throw std::invalid_argument("weight_decay must be non-negative");
  }
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) {
      throw std::invalid_argument("milestones must be strictly increasing");
    }
  }
}

double lr_at(const SGDConfig& cfg, int epoch) {
  if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
  int passed = 0;
  for (int m : cfg.milestones) {
    if (m <= epoch) ++passed;
  }
  return cfg.lr0 * std::pow(cfg.gamma, passed);
}

void sgd_step(std::span<const std::span<double>> params,
              std::span<const std::span<const double>> grads, SGDState& state,
              const SGDConfig& cfg, int epoch) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("parameter/gradient tensor count mismatch");
  }
  if (state.velocity.empty()) {
    state.velocity.resize(params.size());
    for (std::size_t t = 0; t < params.size(); ++t) {
      state.velocity[t].assign(params[t].size(), 0.0);
    }
  }
  if (state.velocity.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match parameters");
  }
  const double lr = lr_at(cfg, epoch);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto w = params[t];
    auto g = grads[t];
    auto& v = state.velocity[t];
    if (w.size() != g.size() || v.size() != w.size()) {
      throw std::invalid_argument("parameter/gradient shape mismatch");
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = cfg.momentum * v[i] + (g[i] + cfg.weight_decay * w[i]);
      w[i] -= lr * v[i];
    }
  }
}

}  // namespace gkd
