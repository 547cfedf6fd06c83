// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  MLP embedding networks with a cosine classification head,
 *         manual forward/backward, the composite distillation step and
 *         binary checkpoints.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gkd/kdloss.hpp"
#include "gkd/marginloss.hpp"

namespace gkd {

enum class Activation { relu };

struct MLPSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t embedding_dim = 0;
  Activation activation = Activation::relu;

  void validate() const;
  bool operator==(const MLPSpec&) const = default;
};

struct HeadSpec {
  std::size_t num_classes = 0;
  HeadKind kind = HeadKind::arcface;
  double scale = 64.0;
  double margin = 0.5;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  ///< out x in
  Eigen::VectorXd bias;    ///< out
};

/// Backbone layers followed by the cosine head. Hidden layers use ReLU,
/// the final embedding layer is linear.
struct ModelBundle {
  MLPSpec spec;
  std::vector<DenseLayer> layers;
  CosineHead head;
  bool frozen = false;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return head.num_classes(); }
  std::size_t parameter_count() const;
};

/// Xavier-uniform weights, zero biases, random unit prototypes.
ModelBundle init_model(const MLPSpec& spec, const HeadSpec& head,
                       std::uint64_t seed);

/// Activations kept for the backward pass. `inputs[l]` is the input of
/// layer l, `pre[l]` its affine output.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre;
};

struct ForwardResult {
  Eigen::MatrixXd embeddings;  ///< B x d
  ForwardCache cache;
};

/// Rows of `x` are samples.
ForwardResult forward(const ModelBundle& m, const Eigen::MatrixXd& x);

struct SampleForward {
  std::vector<double> embedding;
  ForwardCache cache;
};

SampleForward forward(const ModelBundle& m, std::span<const double> x);

/// Embeddings only, without keeping a cache.
Eigen::MatrixXd embed(const ModelBundle& m, const Eigen::MatrixXd& x);

struct Gradients {
  std::vector<DenseLayer> layers;
  Eigen::MatrixXd head_weights;

  static Gradients zeros_like(const ModelBundle& m);
  Gradients& operator+=(const Gradients& other);
};

/// Reverse-mode gradients of the backbone for an upstream gradient on the
/// embeddings; the head entry is zero. Throws on frozen models.
Gradients backward(const ModelBundle& m, const ForwardCache& cache,
                   const Eigen::MatrixXd& grad_embeddings);

/// Flat views over every trainable tensor, in a fixed order shared by
/// parameter_views and gradient_views.
std::vector<std::span<double>> parameter_views(ModelBundle& m);
std::vector<std::span<const double>> parameter_views(const ModelBundle& m);
std::vector<std::span<const double>> gradient_views(const Gradients& g);

// ---------------------------------------------------------------------------
// Composite loss

enum class KDLogitsSource { pre_margin, post_margin };

struct Batch {
  Eigen::MatrixXd features;         ///< B x input_dim
  std::vector<std::size_t> labels;  ///< B
};

struct LossSetup {
  /// Distillation term; nullopt trains on classification loss alone.
  std::optional<KDVariant> variant = KDVariant::primary_binary;
  KDConfig kd;
  KDLogitsSource kd_source = KDLogitsSource::pre_margin;
};

/// Batch means of every loss component.
struct LossTerms {
  double total = 0.0;
  double cls = 0.0;
  double kd = 0.0;
  double full_kd = 0.0;
  double primary = 0.0;
  double secondary = 0.0;
  double binary = 0.0;
  double residual = 0.0;
  double max_residual = 0.0;
  double mean_k = 0.0;
  double p_phi_t = 0.0;
};

struct StepResult {
  LossTerms terms;
  Gradients grads;
};

/// Logits a model contributes to the distillation path: s * cos(theta)
/// (pre_margin) or the margined logits for the given labels (post_margin).
Eigen::MatrixXd kd_logits(const ModelBundle& m, const Eigen::MatrixXd& x,
                          std::span<const std::size_t> labels,
                          KDLogitsSource source);

/// L = mean CE(margined student logits) + mean L_kd(teacher, student),
/// with gradients for the student only.
StepResult total_loss_step(const ModelBundle& teacher,
                           const ModelBundle& student, const Batch& batch,
                           const LossSetup& setup);

/// Same as above with teacher KD logits supplied (B x C); they may be
/// empty when setup.variant is nullopt.
StepResult total_loss_step(const Eigen::MatrixXd& teacher_logits,
                           const ModelBundle& student, const Batch& batch,
                           const LossSetup& setup);

/// Loss only; used by gradient checks.
LossTerms total_loss(const Eigen::MatrixXd& teacher_logits,
                     const ModelBundle& student, const Batch& batch,
                     const LossSetup& setup);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  MLPSpec spec;
  HeadSpec head;
  bool frozen = false;
  std::uint64_t rng_seed = 0;
  std::vector<TensorShape> shapes;
  std::vector<double> values;  ///< row-major tensors in shape-table order
};

Checkpoint save(const ModelBundle& m);
ModelBundle load(const Checkpoint& ckpt);

/// Little-endian: "GKD1", u32 version, u32 header length, JSON header,
/// raw f64 values.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const ModelBundle& m);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace gkd
