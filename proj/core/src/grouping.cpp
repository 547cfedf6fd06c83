// SPDX-License-Identifier: Apache-2.0
#include "gkd/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gkd {

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("tau must lie in (0, 1]");
  }
}

}  // namespace

RankedPrediction rank(ProbSpan p) {
  if (p.empty()) throw std::invalid_argument("empty probability vector");
  RankedPrediction r;
  r.order.resize(p.size());
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  r.cumulative.resize(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[r.order[i]];
    r.cumulative[i] = acc;
  }
  return r;
}

std::size_t select_k(const RankedPrediction& ranked, double tau) {
  check_tau(tau);
  const std::size_t c = ranked.cumulative.size();
  if (c == 0) throw std::invalid_argument("empty ranking");
  // Floating-point running sums saturate at 1 before the last class once
  // tail probabilities fall below ulp(1); full coverage must still mean
  // every class.
  if (tau == 1.0) return c;
  double best_dist = std::abs(ranked.cumulative[0] - tau);
  for (std::size_t i = 1; i < c; ++i) {
    best_dist = std::min(best_dist, std::abs(ranked.cumulative[i] - tau));
  }
  for (std::size_t i = 0; i < c; ++i) {
    if (std::abs(ranked.cumulative[i] - tau) <= best_dist + kSelectTieTolerance) {
      return i + 1;
    }
  }
  return c;
}

Partition make_partition(const RankedPrediction& ranked, std::size_t k,
                         double tau) {
  const std::size_t c = ranked.order.size();
  if (k < 1 || k > c) throw std::invalid_argument("k must lie in [1, C]");
  Partition part;
  part.k = k;
  part.tau = tau;
  part.phi.assign(ranked.order.begin(), ranked.order.begin() + k);
  part.psi.assign(ranked.order.begin() + k, ranked.order.end());
  return part;
}

Partition partition_from_probs(ProbSpan p, double tau) {
  check_tau(tau);
  if (p.empty()) throw std::invalid_argument("empty probability vector");
  const std::size_t c = p.size();
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Equivalent to the stable descending sort used by rank().
  const auto before = [&](std::size_t a, std::size_t b) {
    return p[a] > p[b] || (p[a] == p[b] && a < b);
  };
  // Running sums never decrease, so once the prefix reaches tau no later
  // position can be strictly closer; select_k on the prefix is exact.
  RankedPrediction prefix;
  std::size_t m = tau == 1.0 ? c : std::min<std::size_t>(c, 16);
  for (;;) {
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m),
                      order.end(), before);
    prefix.cumulative.resize(m);
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      acc += p[order[i]];
      prefix.cumulative[i] = acc;
    }
    if (m == c || acc >= tau) break;
    m = std::min(c, 2 * m);
  }
  const std::size_t k = tau == 1.0 ? c : select_k(prefix, tau);
  Partition part;
  part.k = k;
  part.tau = tau;
  part.phi.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  part.psi.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  return part;
}

Partition build_partition(LogitSpan student_logits, double tau,
                          double temperature) {
  check_tau(tau);
  check_logits(student_logits);
  const auto p = softmax(student_logits, temperature);
  const auto ranked = rank(p);
  return make_partition(ranked, select_k(ranked, tau), tau);
}

}  // namespace gkd
