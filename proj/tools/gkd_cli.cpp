// SPDX-License-Identifier: Apache-2.0
// gkd: command-line front end for teacher training, distillation,
// ablation sweeps and diagnostics.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gkd/harness.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<double> tau;
  std::optional<std::string> lambda1;
  std::optional<double> lambda2;
  std::optional<std::string> variant;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment configuration");
  cmd->add_option("--tau", o.tau, "cumulative probability threshold");
  cmd->add_option("--lambda1", o.lambda1, "primary term weight or 'teacher_mass'");
  cmd->add_option("--lambda2", o.lambda2, "binary term weight");
  cmd->add_option("--variant", o.variant,
                  "scratch|full_kd|primary_only|primary_binary|primary_secondary_binary");
  cmd->add_option("--seed", o.seed, "experiment seed");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--out", o.out, "output directory");
}

gkd::ExperimentConfig resolve(const Overrides& o) {
  gkd::ExperimentConfig cfg = o.config.empty() ? gkd::ExperimentConfig{}
                                               : gkd::load_config(o.config);
  if (o.tau) cfg.kd.tau = *o.tau;
  if (o.lambda1) {
    if (*o.lambda1 == "teacher_mass") {
      cfg.kd.lambda1_mode = gkd::Lambda1Mode::teacher_mass;
    } else {
      cfg.kd.lambda1_mode = gkd::Lambda1Mode::constant;
      cfg.kd.lambda1 = std::stod(*o.lambda1);
    }
  }
  if (o.lambda2) cfg.kd.lambda2 = *o.lambda2;
  if (o.variant) cfg.variant = *o.variant;
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.seeds = {*o.seed};
  }
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.out) cfg.out_dir = *o.out;
  cfg.validate();
  return cfg;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::filesystem::path teacher_path(const gkd::ExperimentConfig& cfg,
                                   const std::string& flag) {
  if (!flag.empty()) return flag;
  if (!cfg.teacher_checkpoint.empty()) return cfg.teacher_checkpoint;
  return std::filesystem::path(cfg.out_dir) / "teacher.ckpt";
}

int report(const gkd::CommandResult& r) {
  if (r.ok) {
    std::cout << "wrote " << r.output.string() << '\n';
    return 0;
  }
  std::cerr << "self-audit failed: " << r.message << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grouped knowledge distillation experiments"};
  app.require_subcommand(1);

  Overrides teach_o, distill_o, ablate_o, diag_o;
  std::string distill_teacher, ablate_teacher, diag_teacher, diag_student;
  std::string sweep = "tau", values, seeds, samples = "0", split = "train";
  unsigned jobs = 1;

  auto* teach = app.add_subcommand("train-teacher", "train and freeze the teacher");
  add_common(teach, teach_o);

  auto* dist = app.add_subcommand("distill", "distill a student from a frozen teacher");
  add_common(dist, distill_o);
  dist->add_option("--teacher", distill_teacher, "teacher checkpoint");

  auto* abl = app.add_subcommand("ablate", "sweep tau, lambda1, lambda2 or the loss variant");
  add_common(abl, ablate_o);
  abl->add_option("--teacher", ablate_teacher, "teacher checkpoint");
  abl->add_option("--sweep", sweep, "tau|lambda1|lambda2|variant");
  abl->add_option("--values", values, "comma-separated sweep points");
  abl->add_option("--seeds", seeds, "comma-separated seeds (default: config seeds)");
  abl->add_option("--jobs", jobs, "parallel runs");

  auto* diag = app.add_subcommand("diagnose", "dump ranked teacher/student predictions");
  add_common(diag, diag_o);
  diag->add_option("--teacher", diag_teacher, "teacher checkpoint");
  diag->add_option("--student", diag_student, "student checkpoint");
  diag->add_option("--samples", samples, "comma-separated sample ids");
  diag->add_option("--split", split, "train|eval")->check(CLI::IsMember({"train", "eval"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*teach) {
      return report(gkd::train_teacher(resolve(teach_o)));
    }
    if (*dist) {
      const auto cfg = resolve(distill_o);
      return report(gkd::distill(cfg, teacher_path(cfg, distill_teacher)));
    }
    if (*abl) {
      auto cfg = resolve(ablate_o);
      if (!seeds.empty()) {
        cfg.seeds.clear();
        for (const auto& s : split_list(seeds)) cfg.seeds.push_back(std::stoull(s));
      }
      const auto kind = gkd::parse_sweep_kind(sweep);
      const auto points = values.empty() ? gkd::default_sweep_values(kind) : split_list(values);
      return report(gkd::ablate(cfg, kind, points, teacher_path(cfg, ablate_teacher), jobs));
    }
    if (*diag) {
      const auto cfg = resolve(diag_o);
      std::vector<std::size_t> ids;
      for (const auto& s : split_list(samples)) ids.push_back(std::stoull(s));
      const auto student = diag_student.empty()
                               ? std::filesystem::path(cfg.out_dir) / "student.ckpt"
                               : std::filesystem::path(diag_student);
      return report(gkd::diagnose(cfg, teacher_path(cfg, diag_teacher), student, ids,
                                  cfg.kd.tau,
                                  split == "eval" ? gkd::Split::eval : gkd::Split::train));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
