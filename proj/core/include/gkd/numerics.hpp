// SPDX-License-Identifier: Apache-2.0
/**
 * @file   numerics.hpp
 * @brief  Stable log-sum-exp, temperature softmax and KL divergence.
 *
 * All routines accumulate in double precision and are pure functions of
 * their arguments.
 */
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gkd {

/// Raw class scores for a single sample.
using LogitSpan = std::span<const double>;
/// Probabilities over classes; entries in [0, 1] summing to one.
using ProbSpan = std::span<const double>;

/// Throws std::invalid_argument unless the logits are non-empty and finite.
void check_logits(LogitSpan z);

/// Throws std::invalid_argument unless p is a probability vector
/// (entries in [0, 1], sum within `tol` of one).
void check_probabilities(ProbSpan p, double tol = 1e-12);

/// log(sum_i exp(z_i)) with max-shift; never overflows for finite input.
double log_sum_exp(LogitSpan z);

/// log-sum-exp of z_i / temperature restricted to `indices`.
/// Returns -infinity for an empty index set.
double log_sum_exp(LogitSpan z, std::span<const std::size_t> indices,
                   double temperature = 1.0);

/// p_i = exp(z_i/T) / sum_j exp(z_j/T).
std::vector<double> softmax(LogitSpan z, double temperature = 1.0);

/// Writes softmax(z, T) into `out` (same length as z).
void softmax_into(LogitSpan z, double temperature, std::span<double> out);

/// log softmax(z, T).
std::vector<double> log_softmax(LogitSpan z, double temperature = 1.0);

/// KL(p || q) = sum_i p_i log(p_i / q_i) with 0 log(0/q) = 0.
/// Throws if lengths differ or p_i > 0 where q_i = 0.
double kl_divergence(ProbSpan p, ProbSpan q);

/// KL between two distributions given as log-probabilities. Entries of
/// log_p equal to -inf contribute zero.
double kl_divergence_log(std::span<const double> log_p,
                         std::span<const double> log_q);

}  // namespace gkd
