// SPDX-License-Identifier: Apache-2.0
/**
 * @file   harness.hpp
 * @brief  Experiment orchestration: teacher training, distillation runs,
 *         hyper-parameter sweeps and per-sample diagnostics.
 *
 * Every run is deterministic given its configuration. Metrics are written
 * as line-delimited JSON: a header line holding the resolved configuration
 * followed by one record per epoch.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gkd/data.hpp"
#include "gkd/kdloss.hpp"
#include "gkd/model.hpp"
#include "gkd/optim.hpp"

namespace gkd {

/// Residual ceiling for the per-epoch mean of the decomposition audit.
inline constexpr double kAuditResidualLimit = 1e-8;

struct IdxSource {
  std::string train_images;
  std::string train_labels;
  std::string eval_images;
  std::string eval_labels;
};

/// Synthetic data used when a configuration does not say otherwise: 256
/// training identities with 25 samples each, rendered through an 8-dim
/// nuisance channel.
inline SyntheticSpec default_data_spec() {
  SyntheticSpec s;
  s.num_classes = 256;
  s.feature_dim = 64;
  s.samples_per_class = 25;
  s.eval_classes = 64;
  s.eval_samples_per_class = 20;
  s.noise_sigma = 0.3;
  s.center_scale = 8.0;
  s.nuisance_dim = 8;
  s.nuisance_scale = 1.5;
  return s;
}

struct ExperimentConfig {
  SyntheticSpec data = default_data_spec();
  std::optional<IdxSource> idx;
  std::size_t eval_pairs = 2000;
  std::uint64_t pair_seed = 7;

  MLPSpec teacher{64, {512, 512}, 128};
  MLPSpec student{64, {16}, 128};
  HeadKind head_kind = HeadKind::arcface;
  double head_scale = 64.0;
  double head_margin = 0.5;

  KDConfig kd;
  SGDConfig sgd;
  int epochs = 30;
  /// Teacher-only overrides of sgd.lr0 and epochs; unset means shared.
  std::optional<double> teacher_lr0 = 0.01;
  std::optional<int> teacher_epochs = 10;
  std::size_t batch_size = 128;
  std::uint64_t seed = 1;
  /// "scratch" or a KDVariant name.
  std::string variant = "primary_binary";
  KDLogitsSource kd_source = KDLogitsSource::pre_margin;
  bool flip_augment = false;
  /// Wall-clock time breaks byte-identical metrics, so it is opt-in.
  bool log_wall_time = false;

  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string out_dir = "out";
  std::string teacher_checkpoint;

  void validate() const;
  HeadSpec head_spec(std::size_t num_classes) const;
  /// nullopt for "scratch".
  std::optional<KDVariant> kd_variant() const;
};

ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

struct PreparedData {
  Dataset train;
  Dataset eval;
  PairList pairs;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

struct MetricsRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss_cls = 0.0;
  std::optional<double> loss_kd;
  std::optional<double> full_kd;
  std::optional<double> primary;
  std::optional<double> secondary;
  std::optional<double> binary;
  std::optional<double> residual;
  std::optional<double> mean_k;
  std::optional<double> p_phi_t;
  double accuracy = 0.0;
  std::map<double, double> tpr_at_fpr;
  double wall_seconds = 0.0;
};

/// JSON line for one record; wall_seconds only when requested.
std::string to_json_line(const MetricsRecord& r, bool with_wall_time);

struct RunResult {
  ModelBundle model;
  std::vector<MetricsRecord> history;
  VerificationReport initial_eval;  ///< before any update
  VerificationReport final_eval;
  bool audit_ok = true;
  std::string audit_message;
};

/// Trains `spec` with the classification loss and, when `teacher` is set
/// and cfg.variant is a KD variant, the distillation term.
RunResult run_training(const ExperimentConfig& cfg, const MLPSpec& spec,
                       const PreparedData& data, const ModelBundle* teacher,
                       std::uint64_t seed);

/// Verification of a model's embeddings on the eval split.
VerificationReport evaluate(const ModelBundle& m, const PreparedData& data);

// Subcommands. Each writes into cfg.out_dir and returns whether the run's
// self-audit held.

struct CommandResult {
  bool ok = true;
  std::string message;
  std::filesystem::path output;
};

/// Writes teacher.ckpt (frozen) and teacher_metrics.jsonl.
CommandResult train_teacher(const ExperimentConfig& cfg);

/// Writes metrics.jsonl and student.ckpt.
CommandResult distill(const ExperimentConfig& cfg,
                      const std::filesystem::path& teacher_checkpoint);

enum class SweepKind { tau, lambda1, lambda2, variant };

SweepKind parse_sweep_kind(const std::string& name);
/// Sweep points used when none are given.
std::vector<std::string> default_sweep_values(SweepKind kind);
/// Applies one sweep point to a copy of the configuration.
ExperimentConfig apply_sweep_point(const ExperimentConfig& cfg, SweepKind kind,
                                   const std::string& value);

struct SweepRow {
  std::string value;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracy;  ///< per seed
  std::vector<std::map<double, double>> tpr;
  double median_accuracy = 0.0;
  bool audit_ok = true;
};

/// One run per (point, seed) against a shared teacher; `jobs` > 1 runs
/// them on worker threads with results collected in a fixed order.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepKind kind,
                                const std::vector<std::string>& values,
                                const ModelBundle& teacher,
                                const PreparedData& data, unsigned jobs = 1);

/// Writes summary.csv and runs.csv for the sweep.
CommandResult ablate(const ExperimentConfig& cfg, SweepKind kind,
                     const std::vector<std::string>& values,
                     const std::filesystem::path& teacher_checkpoint,
                     unsigned jobs = 1);

enum class Split { train, eval };

/// Writes diagnose.csv (sample_id,rank,class_id,p_teacher,p_student,in_phi)
/// and diagnose_terms.csv.
CommandResult diagnose(const ExperimentConfig& cfg,
                       const std::filesystem::path& teacher_checkpoint,
                       const std::filesystem::path& student_checkpoint,
                       const std::vector<std::size_t>& sample_ids, double tau,
                       Split split = Split::train);

double median(std::vector<double> values);

}  // namespace gkd
