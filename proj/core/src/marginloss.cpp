// SPDX-License-Identifier: Apache-2.0
#include "gkd/marginloss.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gkd {

HeadKind parse_head_kind(std::string_view name) {
  if (name == "arcface") return HeadKind::arcface;
  if (name == "cosface") return HeadKind::cosface;
  if (name == "plain") return HeadKind::plain;
  throw std::invalid_argument("unknown head kind: " + std::string(name));
}

std::string_view to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::arcface:
      return "arcface";
    case HeadKind::cosface:
      return "cosface";
    case HeadKind::plain:
      return "plain";
  }
  return "unknown";
}

void CosineHead::validate() const {
  if (weights.rows() < 2 || weights.cols() < 1) {
    throw std::invalid_argument("head needs at least two classes");
  }
  if (!(scale > 0.0)) throw std::invalid_argument("head scale must be positive");
  if (!(margin >= 0.0)) throw std::invalid_argument("head margin must be >= 0");
  if (kind == HeadKind::arcface && !(margin < std::numbers::pi / 2)) {
    throw std::invalid_argument("arcface margin must be below pi/2");
  }
}

CosineHead arcface_head(Eigen::MatrixXd weights) {
  return CosineHead{std::move(weights), 64.0, 0.5, HeadKind::arcface};
}

CosineHead cosface_head(Eigen::MatrixXd weights) {
  return CosineHead{std::move(weights), 64.0, 0.4, HeadKind::cosface};
}

CosineBatch cosine_forward(const Eigen::MatrixXd& embeddings,
                           const CosineHead& head) {
  head.validate();
  if (static_cast<std::size_t>(embeddings.cols()) != head.dim()) {
    throw std::invalid_argument("embedding dimension does not match head");
  }
  CosineBatch f;
  f.emb_norm = embeddings.rowwise().norm();
  f.w_norm = head.weights.rowwise().norm();
  if ((f.emb_norm.array() <= 0.0).any()) {
    throw std::invalid_argument("zero-norm embedding");
  }
  if ((f.w_norm.array() <= 0.0).any()) {
    throw std::invalid_argument("zero-norm prototype");
  }
  f.unit_emb = f.emb_norm.cwiseInverse().asDiagonal() * embeddings;
  f.unit_w = f.w_norm.cwiseInverse().asDiagonal() * head.weights;
  f.cosines.noalias() = f.unit_emb * f.unit_w.transpose();
  constexpr double lo = -1.0 + kCosineClamp;
  constexpr double hi = 1.0 - kCosineClamp;
  f.clamped = (f.cosines.array() < lo) || (f.cosines.array() > hi);
  f.cosines = f.cosines.cwiseMax(lo).cwiseMin(hi);
  return f;
}

MarginedBatch apply_margin(const Eigen::MatrixXd& cosines,
                           std::span<const std::size_t> labels,
                           const CosineHead& head) {
  if (labels.size() != static_cast<std::size_t>(cosines.rows())) {
    throw std::invalid_argument("label count does not match batch");
  }
  MarginedBatch out;
  out.logits = cosines;
  out.target_slope = Eigen::VectorXd::Ones(cosines.rows());
  const double m = head.margin;
  const double cos_m = std::cos(m);
  const double sin_m = std::sin(m);
  // theta + m <= pi  <=>  cos(theta) >= cos(pi - m) = -cos(m)
  const double threshold = -cos_m;
  for (Eigen::Index b = 0; b < cosines.rows(); ++b) {
    const auto y = static_cast<Eigen::Index>(labels[b]);
    if (y < 0 || y >= cosines.cols()) {
      throw std::invalid_argument("label out of range");
    }
    const double c = cosines(b, y);
    switch (head.kind) {
      case HeadKind::arcface:
        if (c >= threshold) {
          const double sin_t = std::sqrt(std::max(0.0, 1.0 - c * c));
          out.logits(b, y) = c * cos_m - sin_t * sin_m;
          out.target_slope(b) = cos_m + c * sin_m / sin_t;
        } else {
          out.logits(b, y) = c - m * sin_m;
        }
        break;
      case HeadKind::cosface:
        out.logits(b, y) = c - m;
        break;
      case HeadKind::plain:
        break;
    }
  }
  out.logits *= head.scale;
  return out;
}

HeadBatchGradients cosine_backward(const CosineBatch& fwd,
                                   const Eigen::MatrixXd& grad_cosines) {
  const Eigen::MatrixXd g =
      fwd.clamped.select(Eigen::MatrixXd::Zero(grad_cosines.rows(),
                                               grad_cosines.cols()),
                         grad_cosines);
  HeadBatchGradients out;
  // d/d unit vectors
  Eigen::MatrixXd g_unit_emb = g * fwd.unit_w;              // B x d
  Eigen::MatrixXd g_unit_w = g.transpose() * fwd.unit_emb;  // C x d
  // Through x / |x|: (g - (g . u) u) / |x|
  const Eigen::VectorXd proj_e = (g_unit_emb.cwiseProduct(fwd.unit_emb)).rowwise().sum();
  out.embeddings = fwd.emb_norm.cwiseInverse().asDiagonal() *
                   (g_unit_emb - proj_e.asDiagonal() * fwd.unit_emb);
  const Eigen::VectorXd proj_w = (g_unit_w.cwiseProduct(fwd.unit_w)).rowwise().sum();
  out.weights = fwd.w_norm.cwiseInverse().asDiagonal() *
                (g_unit_w - proj_w.asDiagonal() * fwd.unit_w);
  return out;
}

std::vector<double> cosine_logits(std::span<const double> embedding,
                                  const CosineHead& head) {
  const Eigen::MatrixXd e = Eigen::Map<const Eigen::RowVectorXd>(
      embedding.data(), static_cast<Eigen::Index>(embedding.size()));
  const auto f = cosine_forward(e, head);
  return {f.cosines.data(), f.cosines.data() + f.cosines.size()};
}

std::vector<double> apply_margin(std::span<const double> cosines,
                                 std::size_t label, const CosineHead& head) {
  const Eigen::MatrixXd c = Eigen::Map<const Eigen::RowVectorXd>(
      cosines.data(), static_cast<Eigen::Index>(cosines.size()));
  const std::size_t labels[] = {label};
  const auto m = apply_margin(c, labels, head);
  return {m.logits.data(), m.logits.data() + m.logits.size()};
}

double ce_loss(LogitSpan logits, std::size_t label) {
  if (label >= logits.size()) throw std::invalid_argument("label out of range");
  return log_sum_exp(logits) - logits[label];
}

double head_loss(std::span<const double> embedding, std::size_t label,
                 const CosineHead& head) {
  return ce_loss(apply_margin(cosine_logits(embedding, head), label, head), label);
}

HeadGradients head_backward(std::span<const double> embedding,
                            std::size_t label, const CosineHead& head) {
  const Eigen::MatrixXd e = Eigen::Map<const Eigen::RowVectorXd>(
      embedding.data(), static_cast<Eigen::Index>(embedding.size()));
  const auto fwd = cosine_forward(e, head);
  const std::size_t labels[] = {label};
  const auto marg = apply_margin(fwd.cosines, labels, head);
  const std::vector<double> row(marg.logits.data(),
                                marg.logits.data() + marg.logits.size());
  const auto p = softmax(row);
  Eigen::MatrixXd g_cos(1, static_cast<Eigen::Index>(row.size()));
  for (std::size_t j = 0; j < row.size(); ++j) {
    g_cos(0, static_cast<Eigen::Index>(j)) = head.scale * (p[j] - (j == label ? 1.0 : 0.0));
  }
  g_cos(0, static_cast<Eigen::Index>(label)) *= marg.target_slope(0);
  const auto g = cosine_backward(fwd, g_cos);
  HeadGradients out;
  out.embedding.assign(g.embeddings.data(), g.embeddings.data() + g.embeddings.size());
  out.weights = g.weights;
  return out;
}

}  // namespace gkd
