// SPDX-License-Identifier: Apache-2.0
#include "gkd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace gkd {

namespace {

void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("temperature must be positive and finite");
  }
}

}  // namespace

void check_logits(LogitSpan z) {
  if (z.empty()) throw std::invalid_argument("empty logits");
  for (double v : z) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite logit");
  }
}

void check_probabilities(ProbSpan p, double tol) {
  if (p.empty()) throw std::invalid_argument("empty probability vector");
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("probability outside [0, 1]");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) {
    throw std::invalid_argument("probabilities do not sum to one (sum=" +
                                std::to_string(sum) + ")");
  }
}

double log_sum_exp(LogitSpan z) {
  if (z.empty()) throw std::invalid_argument("empty logits");
  const double m = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - m);
  return m + std::log(acc);
}

double log_sum_exp(LogitSpan z, std::span<const std::size_t> indices,
                   double temperature) {
  if (indices.empty()) return -std::numeric_limits<double>::infinity();
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i : indices) m = std::max(m, z[i] / temperature);
  double acc = 0.0;
  for (std::size_t i : indices) acc += std::exp(z[i] / temperature - m);
  return m + std::log(acc);
}

void softmax_into(LogitSpan z, double temperature, std::span<double> out) {
  check_temperature(temperature);
  if (z.empty()) throw std::invalid_argument("empty logits");
  if (out.size() != z.size()) {
    throw std::invalid_argument("softmax output length mismatch");
  }
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z) m = std::max(m, v / temperature);
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] / temperature - m);
    acc += out[i];
  }
  const double inv = 1.0 / acc;
  for (double& v : out) v *= inv;
}

std::vector<double> softmax(LogitSpan z, double temperature) {
  std::vector<double> out(z.size());
  softmax_into(z, temperature, out);
  return out;
}

std::vector<double> log_softmax(LogitSpan z, double temperature) {
  check_temperature(temperature);
  if (z.empty()) throw std::invalid_argument("empty logits");
  std::vector<double> scaled(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) scaled[i] = z[i] / temperature;
  const double lse = log_sum_exp(scaled);
  for (double& v : scaled) v -= lse;
  return scaled;
}

double kl_divergence(ProbSpan p, ProbSpan q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("KL length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) {
      throw std::domain_error("KL undefined (support mismatch)");
    }
    acc += p[i] * std::log(p[i] / q[i]);
  }
  // Rounding can leave a tiny negative residue for p == q.
  return std::max(acc, 0.0);
}

double kl_divergence_log(std::span<const double> log_p,
                         std::span<const double> log_q) {
  if (log_p.size() != log_q.size()) {
    throw std::invalid_argument("KL length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    if (std::isinf(log_p[i]) && log_p[i] < 0) continue;
    if (std::isinf(log_q[i]) && log_q[i] < 0) {
      throw std::domain_error("KL undefined (support mismatch)");
    }
    acc += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
  }
  return std::max(acc, 0.0);
}

}  // namespace gkd
