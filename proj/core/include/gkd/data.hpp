// SPDX-License-Identifier: Apache-2.0
/**
 * @file   data.hpp
 * @brief  Synthetic identity data, IDX file I/O and pair-based
 *         verification evaluation.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace gkd {

struct Dataset {
  Eigen::MatrixXd features;         ///< N x D
  std::vector<std::size_t> labels;  ///< N
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
};

struct SyntheticSpec {
  std::size_t num_classes = 256;  ///< training identities
  std::size_t feature_dim = 64;
  std::size_t samples_per_class = 100;
  std::size_t eval_classes = 64;
  std::size_t eval_samples_per_class = 20;
  double noise_sigma = 1.0;
  double center_scale = 1.0;
  std::uint64_t seed = 0;
  /// Held-out identities are fresh centers (open set) rather than
  /// new samples of the training identities.
  bool disjoint_eval = true;
  /// Optional nuisance rendering. With nuisance_dim > 0 each latent sample
  /// s = center + noise is observed as tanh(A s + nuisance_scale * B v),
  /// v ~ N(0, I_nuisance_dim), with A and B fixed random mixing matrices
  /// shared by all identities. Zero keeps the latent samples as features.
  std::size_t nuisance_dim = 0;
  double nuisance_scale = 1.0;

  void validate() const;
};

struct SyntheticData {
  Dataset train;
  Dataset eval;
  Eigen::MatrixXd train_centers;
  Eigen::MatrixXd eval_centers;
};

/// Centers uniform on the sphere of radius center_scale; latent samples
/// are center + N(0, noise_sigma^2 I), optionally passed through the
/// nuisance rendering.
SyntheticData generate(const SyntheticSpec& spec);

/// Negates the second half of the feature coordinates of each row with
/// probability 1/2.
void flip_augment(Eigen::MatrixXd& rows, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// IDX

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  ///< count * rows * cols
};

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path,
                      std::span<const std::uint8_t> labels);

/// (v - 127.5) / 128
constexpr double normalize_pixel(std::uint8_t v) {
  return (static_cast<double>(v) - 127.5) / 128.0;
}

/// Parses an images/labels pair and normalises pixels to [-1, 1].
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

// ---------------------------------------------------------------------------
// Verification

struct Pair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool same = false;
};

inline constexpr int kNumFolds = 10;

struct PairList {
  std::vector<Pair> pairs;
  std::vector<int> folds;  ///< fold id in [0, 10) per pair
};

/// num_pairs/2 positive and num_pairs/2 negative pairs, distinct while
/// possible; folds assigned round-robin separately within each polarity.
PairList make_pairs(std::span<const std::size_t> labels, std::size_t num_pairs,
                    std::uint64_t seed);

void write_pairs_csv(const std::filesystem::path& path, const PairList& pairs);

struct VerificationReport {
  double accuracy = 0.0;  ///< mean held-out fold accuracy
  std::vector<double> fold_accuracy;
  /// TPR at FPR target; targets with too few negatives are absent.
  std::map<double, double> tpr_at_fpr;
  double threshold = 0.0;  ///< best threshold on all pairs
};

inline constexpr double kFprTargets[] = {1e-1, 1e-2, 1e-3};

/// Cosine similarity per pair.
std::vector<double> pair_similarities(const Eigen::MatrixXd& embeddings,
                                      const PairList& pairs);

/// Threshold t maximising accuracy of "same iff sim >= t" over the
/// candidates {distinct sims} U {+inf}; ties go to the smallest t.
double best_threshold(std::span<const double> sims, const std::vector<bool>& same);

/// TPR at the smallest threshold whose FPR <= target; nullopt when there
/// are fewer than 1/target negatives.
std::optional<double> tpr_at_fpr(std::span<const double> sims,
                                 const std::vector<bool>& same, double target);

VerificationReport verify(const Eigen::MatrixXd& embeddings, const PairList& pairs);

}  // namespace gkd
