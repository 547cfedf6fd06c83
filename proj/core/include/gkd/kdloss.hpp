// SPDX-License-Identifier: Apache-2.0
/**
 * @file   kdloss.hpp
 * @brief  Grouped knowledge-distillation losses.
 *
 * The KL divergence between teacher and student predictions splits exactly
 * over a partition (Phi, Psi) of the classes:
 *
 *   KL(pT || pS) = pT_phi * KL(phatT || phatS)      (primary term)
 *                + pT_psi * KL(pcheckT || pcheckS)  (secondary term)
 *                + KL([pT_phi, pT_psi] || [pS_phi, pS_psi])  (binary term)
 *
 * where phat/pcheck are the predictions renormalised inside each group.
 * The grouped loss keeps the primary and binary terms with free weights
 * and drops the secondary term.
 *
 * Everything is evaluated from logits in log space so that tail groups
 * with vanishing mass stay finite. Partitions and teacher quantities are
 * constants for differentiation: gradients flow into the student logits
 * only.
 */
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gkd/grouping.hpp"
#include "gkd/numerics.hpp"

namespace gkd {

enum class Lambda1Mode {
  constant,      ///< lambda1 is the fixed configured weight
  teacher_mass,  ///< lambda1 := teacher's primary-group mass, per sample
};

struct KDConfig {
  double tau = 0.93;
  double lambda1 = 8.0;
  double lambda2 = 1.0;
  double temperature = 1.0;
  Lambda1Mode lambda1_mode = Lambda1Mode::constant;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

/// Within-group and group-mass probabilities for teacher and student,
/// all computed over the same partition.
struct GroupedProbs {
  std::vector<double> p_hat_t;    ///< teacher over Phi (rank order)
  std::vector<double> p_hat_s;    ///< student over Phi
  std::vector<double> p_check_t;  ///< teacher over Psi
  std::vector<double> p_check_s;  ///< student over Psi
  std::array<double, 2> pb_t{1.0, 0.0};  ///< [p_phi, p_psi] teacher
  std::array<double, 2> pb_s{1.0, 0.0};  ///< [p_phi, p_psi] student
};

struct DecompositionReport {
  double full_kd = 0.0;
  double primary = 0.0;
  double secondary = 0.0;
  double binary = 0.0;
  double p_phi_t = 1.0;
  double p_psi_t = 0.0;
  /// |full - (p_phi_t*primary + p_psi_t*secondary + binary)|
  double residual = 0.0;
};

GroupedProbs grouped_probs(LogitSpan z_t, LogitSpan z_s, const Partition& part,
                           double temperature = 1.0);

/// KL(softmax(z_t/T) || softmax(z_s/T)).
double classic_kd(LogitSpan z_t, LogitSpan z_s, double temperature = 1.0);

DecompositionReport decompose(LogitSpan z_t, LogitSpan z_s,
                              const Partition& part, double temperature = 1.0);

/// lambda1 * primary + lambda2 * binary over the partition built from the
/// student logits.
double gkd_loss(LogitSpan z_t, LogitSpan z_s, const KDConfig& cfg);

/// d gkd_loss / d z_s.
std::vector<double> gkd_backward(LogitSpan z_t, LogitSpan z_s,
                                 const KDConfig& cfg);

/// d classic_kd / d z_s = (pS - pT) / T.
std::vector<double> kd_backward(LogitSpan z_t, LogitSpan z_s,
                                double temperature = 1.0);

/// Loss assemblies for the term ablation.
enum class KDVariant {
  full_kd,                   ///< classic KL on full predictions
  primary_only,              ///< lambda1 * primary
  primary_binary,            ///< lambda1 * primary + lambda2 * binary (GKD)
  primary_secondary_binary,  ///< exact reconstruction, weights pT_phi, pT_psi, 1
};

KDVariant parse_kd_variant(std::string_view name);
std::string_view to_string(KDVariant v);

double ablation_loss(KDVariant variant, LogitSpan z_t, LogitSpan z_s,
                     const KDConfig& cfg);

std::vector<double> ablation_backward(KDVariant variant, LogitSpan z_t,
                                      LogitSpan z_s, const KDConfig& cfg);

/// Per-sample result of the fused forward/backward used during training.
struct KDSample {
  double loss = 0.0;
  std::size_t k = 0;
  DecompositionReport terms;
};

/// Evaluates `variant` on one sample and, when `grad_out` is non-empty,
/// writes d loss / d z_s into it. The decomposition terms are always
/// reported so training can log them regardless of the variant.
KDSample kd_forward_backward(KDVariant variant, LogitSpan z_t, LogitSpan z_s,
                             const KDConfig& cfg, std::span<double> grad_out);

}  // namespace gkd
