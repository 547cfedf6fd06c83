// SPDX-License-Identifier: Apache-2.0
/**
 * @file   marginloss.hpp
 * @brief  Cosine classification heads with additive angular (ArcFace),
 *         additive cosine (CosFace) or no margin, plus softmax
 *         cross-entropy and the analytic backward pass.
 */
#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gkd/numerics.hpp"

namespace gkd {

enum class HeadKind { arcface, cosface, plain };

HeadKind parse_head_kind(std::string_view name);
std::string_view to_string(HeadKind kind);

/// Cosines are clamped to [-1 + eps, 1 - eps]; clamped entries pass no
/// gradient.
inline constexpr double kCosineClamp = 1e-7;

struct CosineHead {
  Eigen::MatrixXd weights;  ///< C x d class prototypes, one per row
  double scale = 64.0;
  double margin = 0.5;
  HeadKind kind = HeadKind::arcface;

  std::size_t num_classes() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }
  void validate() const;
};

/// Preset matching the common ArcFace setting (s = 64, m = 0.5).
CosineHead arcface_head(Eigen::MatrixXd weights);
/// Preset for the CosFace variant (s = 64, m = 0.4).
CosineHead cosface_head(Eigen::MatrixXd weights);

/// cos(theta_j) between the normalised embedding and each normalised
/// prototype, clamped.
std::vector<double> cosine_logits(std::span<const double> embedding,
                                  const CosineHead& head);

/// Applies the head's margin to the label entry, then multiplies all
/// entries by the scale.
std::vector<double> apply_margin(std::span<const double> cosines,
                                 std::size_t label, const CosineHead& head);

/// -log softmax(logits)[label].
double ce_loss(LogitSpan logits, std::size_t label);

/// ce_loss(apply_margin(cosine_logits(embedding), label), label).
double head_loss(std::span<const double> embedding, std::size_t label,
                 const CosineHead& head);

struct HeadGradients {
  std::vector<double> embedding;
  Eigen::MatrixXd weights;  ///< same shape as CosineHead::weights
};

HeadGradients head_backward(std::span<const double> embedding,
                            std::size_t label, const CosineHead& head);

// Batched forms used by training. Rows of `embeddings` are samples.

struct CosineBatch {
  Eigen::MatrixXd cosines;     ///< B x C, clamped
  Eigen::MatrixXd unit_emb;    ///< B x d
  Eigen::VectorXd emb_norm;    ///< B
  Eigen::MatrixXd unit_w;      ///< C x d
  Eigen::VectorXd w_norm;      ///< C
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clamped;  ///< B x C
};

CosineBatch cosine_forward(const Eigen::MatrixXd& embeddings,
                           const CosineHead& head);

struct MarginedBatch {
  Eigen::MatrixXd logits;         ///< B x C, scaled
  Eigen::VectorXd target_slope;   ///< d(margined target cosine)/d(cosine)
};

MarginedBatch apply_margin(const Eigen::MatrixXd& cosines,
                           std::span<const std::size_t> labels,
                           const CosineHead& head);

struct HeadBatchGradients {
  Eigen::MatrixXd embeddings;  ///< B x d
  Eigen::MatrixXd weights;     ///< C x d
};

/// Backpropagates d loss / d cosines through clamp and normalisation.
HeadBatchGradients cosine_backward(const CosineBatch& fwd,
                                   const Eigen::MatrixXd& grad_cosines);

}  // namespace gkd
