// SPDX-License-Identifier: Apache-2.0
/**
 * @file   grouping.hpp
 * @brief  Split classes into a primary group (top-k by probability) and a
 *         secondary tail group using a cumulative-probability threshold.
 */
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gkd/numerics.hpp"

namespace gkd {

/// Classes sorted by descending probability (ties by ascending index) and
/// the running sums of the sorted probabilities.
struct RankedPrediction {
  std::vector<std::size_t> order;
  std::vector<double> cumulative;
};

/// Index split of {0, ..., C-1}. `phi` lists the k highest-ranked classes
/// in rank order, `psi` the remainder in rank order.
struct Partition {
  std::vector<std::size_t> phi;
  std::vector<std::size_t> psi;
  std::size_t k = 0;
  double tau = 1.0;

  std::size_t num_classes() const { return phi.size() + psi.size(); }
  bool secondary_empty() const { return psi.empty(); }
};

/// Two distances to tau closer than this are treated as equal and the
/// smaller k wins.
inline constexpr double kSelectTieTolerance = 1e-12;

RankedPrediction rank(ProbSpan p);

/// k in [1, C] minimising |cumulative[k-1] - tau|, smallest k on ties.
/// tau == 1 always selects every class.
std::size_t select_k(const RankedPrediction& ranked, double tau);

/// Partition taking the first k classes of `ranked.order` as primary.
Partition make_partition(const RankedPrediction& ranked, std::size_t k,
                         double tau);

/// Same split as make_partition(rank(p), select_k(rank(p), tau), tau) but
/// only sorts as much of p as the threshold needs; `psi` is returned in
/// unspecified order.
Partition partition_from_probs(ProbSpan p, double tau);

/// Ranks softmax(student_logits / T) and splits at select_k(tau).
Partition build_partition(LogitSpan student_logits, double tau,
                          double temperature = 1.0);

}  // namespace gkd
