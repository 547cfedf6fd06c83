// SPDX-License-Identifier: Apache-2.0
#include "gkd/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace gkd {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  if (!idx) data.validate();
  teacher.validate();
  student.validate();
  kd.validate();
  sgd.validate();
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (teacher_epochs && *teacher_epochs < 0) {
    throw std::invalid_argument("teacher_epochs must be >= 0");
  }
  if (teacher_lr0 && !(*teacher_lr0 > 0.0)) {
    throw std::invalid_argument("teacher_lr0 must be > 0");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (teacher.embedding_dim == 0 || student.embedding_dim == 0) {
    throw std::invalid_argument("embedding_dim must be >= 1");
  }
  if (teacher.input_dim != student.input_dim) {
    throw std::invalid_argument("teacher and student input_dim differ");
  }
  if (seeds.empty()) throw std::invalid_argument("seeds must not be empty");
  (void)kd_variant();
}

HeadSpec ExperimentConfig::head_spec(std::size_t num_classes) const {
  return HeadSpec{num_classes, head_kind, head_scale, head_margin};
}

std::optional<KDVariant> ExperimentConfig::kd_variant() const {
  if (variant == "scratch") return std::nullopt;
  return parse_kd_variant(variant);
}

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

MLPSpec mlp_from_json(const json& j, MLPSpec spec) {
  read_opt(j, "input_dim", spec.input_dim);
  read_opt(j, "hidden_dims", spec.hidden_dims);
  read_opt(j, "embedding_dim", spec.embedding_dim);
  if (auto it = j.find("activation"); it != j.end() && it->get<std::string>() != "relu") {
    throw std::invalid_argument("unsupported activation");
  }
  return spec;
}

json mlp_to_json(const MLPSpec& s) {
  return {{"input_dim", s.input_dim},
          {"hidden_dims", s.hidden_dims},
          {"embedding_dim", s.embedding_dim},
          {"activation", "relu"}};
}


}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  ExperimentConfig cfg;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid config JSON: ") + e.what());
  }
  try {
    if (auto it = j.find("data"); it != j.end()) {
      const auto& d = *it;
      read_opt(d, "num_classes", cfg.data.num_classes);
      read_opt(d, "feature_dim", cfg.data.feature_dim);
      read_opt(d, "samples_per_class", cfg.data.samples_per_class);
      read_opt(d, "eval_classes", cfg.data.eval_classes);
      read_opt(d, "eval_samples_per_class", cfg.data.eval_samples_per_class);
      read_opt(d, "noise_sigma", cfg.data.noise_sigma);
      read_opt(d, "center_scale", cfg.data.center_scale);
      read_opt(d, "seed", cfg.data.seed);
      read_opt(d, "disjoint_eval", cfg.data.disjoint_eval);
      read_opt(d, "nuisance_dim", cfg.data.nuisance_dim);
      read_opt(d, "nuisance_scale", cfg.data.nuisance_scale);
    }
    if (auto it = j.find("idx"); it != j.end() && !it->is_null()) {
      IdxSource src;
      src.train_images = it->at("train_images").get<std::string>();
      src.train_labels = it->at("train_labels").get<std::string>();
      src.eval_images = it->at("eval_images").get<std::string>();
      src.eval_labels = it->at("eval_labels").get<std::string>();
      cfg.idx = src;
    }
    read_opt(j, "eval_pairs", cfg.eval_pairs);
    read_opt(j, "pair_seed", cfg.pair_seed);
    if (auto it = j.find("teacher"); it != j.end()) cfg.teacher = mlp_from_json(*it, cfg.teacher);
    if (auto it = j.find("student"); it != j.end()) cfg.student = mlp_from_json(*it, cfg.student);
    if (auto it = j.find("head"); it != j.end()) {
      if (auto k = it->find("kind"); k != it->end()) {
        cfg.head_kind = parse_head_kind(k->get<std::string>());
        if (cfg.head_kind == HeadKind::cosface) cfg.head_margin = 0.4;
      }
      read_opt(*it, "scale", cfg.head_scale);
      read_opt(*it, "margin", cfg.head_margin);
    }
    if (auto it = j.find("kd"); it != j.end()) {
      read_opt(*it, "tau", cfg.kd.tau);
      read_opt(*it, "lambda2", cfg.kd.lambda2);
      read_opt(*it, "temperature", cfg.kd.temperature);
      if (auto l1 = it->find("lambda1"); l1 != it->end()) {
        if (l1->is_string()) {
          if (l1->get<std::string>() != "teacher_mass") {
            throw std::invalid_argument("lambda1 must be a number or \"teacher_mass\"");
          }
          cfg.kd.lambda1_mode = Lambda1Mode::teacher_mass;
        } else {
          cfg.kd.lambda1 = l1->get<double>();
          cfg.kd.lambda1_mode = Lambda1Mode::constant;
        }
      }
      if (auto src = it->find("logits_source"); src != it->end()) {
        const auto s = src->get<std::string>();
        if (s == "pre_margin") cfg.kd_source = KDLogitsSource::pre_margin;
        else if (s == "post_margin") cfg.kd_source = KDLogitsSource::post_margin;
        else throw std::invalid_argument("unknown kd logits_source: " + s);
      }
    }
    if (auto it = j.find("sgd"); it != j.end()) {
      read_opt(*it, "lr0", cfg.sgd.lr0);
      read_opt(*it, "momentum", cfg.sgd.momentum);
      read_opt(*it, "weight_decay", cfg.sgd.weight_decay);
      read_opt(*it, "milestones", cfg.sgd.milestones);
      read_opt(*it, "gamma", cfg.sgd.gamma);
    }
    read_opt(j, "epochs", cfg.epochs);
    if (auto it = j.find("teacher_lr0"); it != j.end()) {
      cfg.teacher_lr0 = it->is_null() ? std::nullopt : std::optional<double>(it->get<double>());
    }
    if (auto it = j.find("teacher_epochs"); it != j.end()) {
      cfg.teacher_epochs = it->is_null() ? std::nullopt : std::optional<int>(it->get<int>());
    }
    read_opt(j, "batch_size", cfg.batch_size);
    read_opt(j, "seed", cfg.seed);
    read_opt(j, "variant", cfg.variant);
    read_opt(j, "flip_augment", cfg.flip_augment);
    read_opt(j, "log_wall_time", cfg.log_wall_time);
    read_opt(j, "seeds", cfg.seeds);
    read_opt(j, "out_dir", cfg.out_dir);
    read_opt(j, "teacher_checkpoint", cfg.teacher_checkpoint);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid config field: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["data"] = {{"num_classes", cfg.data.num_classes},
               {"feature_dim", cfg.data.feature_dim},
               {"samples_per_class", cfg.data.samples_per_class},
               {"eval_classes", cfg.data.eval_classes},
               {"eval_samples_per_class", cfg.data.eval_samples_per_class},
               {"noise_sigma", cfg.data.noise_sigma},
               {"center_scale", cfg.data.center_scale},
               {"seed", cfg.data.seed},
               {"disjoint_eval", cfg.data.disjoint_eval},
               {"nuisance_dim", cfg.data.nuisance_dim},
               {"nuisance_scale", cfg.data.nuisance_scale}};
  if (cfg.idx) {
    j["idx"] = {{"train_images", cfg.idx->train_images},
                {"train_labels", cfg.idx->train_labels},
                {"eval_images", cfg.idx->eval_images},
                {"eval_labels", cfg.idx->eval_labels}};
  } else {
    j["idx"] = nullptr;
  }
  j["eval_pairs"] = cfg.eval_pairs;
  j["pair_seed"] = cfg.pair_seed;
  j["teacher"] = mlp_to_json(cfg.teacher);
  j["student"] = mlp_to_json(cfg.student);
  j["head"] = {{"kind", std::string(to_string(cfg.head_kind))},
               {"scale", cfg.head_scale},
               {"margin", cfg.head_margin}};
  json kd = {{"tau", cfg.kd.tau}};
  if (cfg.kd.lambda1_mode == Lambda1Mode::teacher_mass) {
    kd["lambda1"] = "teacher_mass";
  } else {
    kd["lambda1"] = cfg.kd.lambda1;
  }
  kd["lambda2"] = cfg.kd.lambda2;
  kd["temperature"] = cfg.kd.temperature;
  kd["logits_source"] =
      cfg.kd_source == KDLogitsSource::pre_margin ? "pre_margin" : "post_margin";
  j["kd"] = kd;
  j["sgd"] = {{"lr0", cfg.sgd.lr0},
              {"momentum", cfg.sgd.momentum},
              {"weight_decay", cfg.sgd.weight_decay},
              {"milestones", cfg.sgd.milestones},
              {"gamma", cfg.sgd.gamma}};
  j["epochs"] = cfg.epochs;
  j["teacher_lr0"] = cfg.teacher_lr0 ? json(*cfg.teacher_lr0) : json(nullptr);
  j["teacher_epochs"] = cfg.teacher_epochs ? json(*cfg.teacher_epochs) : json(nullptr);
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["variant"] = cfg.variant;
  j["flip_augment"] = cfg.flip_augment;
  j["log_wall_time"] = cfg.log_wall_time;
  j["seeds"] = cfg.seeds;
  j["out_dir"] = cfg.out_dir;
  j["teacher_checkpoint"] = cfg.teacher_checkpoint;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Data

PreparedData prepare_data(const ExperimentConfig& cfg) {
  PreparedData d;
  if (cfg.idx) {
    d.train = load_idx(cfg.idx->train_images, cfg.idx->train_labels);
    d.eval = load_idx(cfg.idx->eval_images, cfg.idx->eval_labels);
  } else {
    auto gen = generate(cfg.data);
    d.train = std::move(gen.train);
    d.eval = std::move(gen.eval);
  }
  if (static_cast<std::size_t>(d.train.features.cols()) != cfg.student.input_dim) {
    throw std::invalid_argument("dataset feature dimension does not match input_dim");
  }
  d.pairs = make_pairs(d.eval.labels, cfg.eval_pairs, cfg.pair_seed);
  return d;
}

// ---------------------------------------------------------------------------
// Metrics

std::string to_json_line(const MetricsRecord& r, bool with_wall_time) {
  json j;
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["loss_cls"] = r.loss_cls;
  auto opt = [&](const char* key, const std::optional<double>& v) {
    j[key] = v ? json(*v) : json(nullptr);
  };
  opt("loss_kd", r.loss_kd);
  opt("full_kd", r.full_kd);
  opt("primary", r.primary);
  opt("secondary", r.secondary);
  opt("binary", r.binary);
  opt("residual", r.residual);
  opt("mean_k", r.mean_k);
  opt("p_phi_t", r.p_phi_t);
  j["accuracy"] = r.accuracy;
  json tpr = json::object();
  for (double target : kFprTargets) {
    std::ostringstream key;
    key << target;
    auto it = r.tpr_at_fpr.find(target);
    tpr[key.str()] = it == r.tpr_at_fpr.end() ? json(nullptr) : json(it->second);
  }
  j["tpr_at_fpr"] = tpr;
  if (with_wall_time) j["wall_seconds"] = r.wall_seconds;
  return j.dump();
}

VerificationReport evaluate(const ModelBundle& m, const PreparedData& data) {
  return verify(embed(m, data.eval.features), data.pairs);
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ---------------------------------------------------------------------------
// Training

RunResult run_training(const ExperimentConfig& cfg, const MLPSpec& spec,
                       const PreparedData& data, const ModelBundle* teacher,
                       std::uint64_t seed) {
  cfg.validate();
  const auto variant = cfg.kd_variant();
  const bool distill = variant.has_value() && teacher != nullptr;
  const std::size_t num_classes = data.train.num_classes;
  if (distill) {
    if (!teacher->frozen) throw std::logic_error("teacher must be frozen");
    if (teacher->num_classes() != num_classes) {
      throw std::invalid_argument("teacher/student class count mismatch");
    }
  }

  RunResult out;
  out.model = init_model(spec, cfg.head_spec(num_classes), seed);
  std::seed_seq order_seed{seed, std::uint64_t{0x5eed}};
  std::mt19937_64 rng(order_seed);

  LossSetup setup;
  setup.variant = distill ? variant : std::nullopt;
  setup.kd = cfg.kd;
  setup.kd_source = cfg.kd_source;

  const std::size_t n = data.train.size();
  // Frozen teacher on fixed inputs: its logits never change, so compute
  // them once unless augmentation perturbs the inputs.
  Eigen::MatrixXd teacher_all;
  if (distill && !cfg.flip_augment) {
    teacher_all = kd_logits(*teacher, data.train.features, data.train.labels, cfg.kd_source);
  }

  out.initial_eval = evaluate(out.model, data);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SGDState state;
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    LossTerms acc;
    double max_residual = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const auto bsz = static_cast<Eigen::Index>(end - start);
      Batch batch;
      batch.features.resize(bsz, data.train.features.cols());
      batch.labels.resize(static_cast<std::size_t>(bsz));
      Eigen::MatrixXd zt;
      if (distill && !cfg.flip_augment) zt.resize(bsz, teacher_all.cols());
      for (Eigen::Index i = 0; i < bsz; ++i) {
        const auto src = static_cast<Eigen::Index>(perm[start + static_cast<std::size_t>(i)]);
        batch.features.row(i) = data.train.features.row(src);
        batch.labels[static_cast<std::size_t>(i)] = data.train.labels[static_cast<std::size_t>(src)];
        if (zt.size() > 0) zt.row(i) = teacher_all.row(src);
      }
      if (cfg.flip_augment) {
        flip_augment(batch.features, rng);
        if (distill) zt = kd_logits(*teacher, batch.features, batch.labels, cfg.kd_source);
      }

      auto step = total_loss_step(zt, out.model, batch, setup);
      const double w = static_cast<double>(bsz);
      acc.cls += w * step.terms.cls;
      acc.kd += w * step.terms.kd;
      acc.full_kd += w * step.terms.full_kd;
      acc.primary += w * step.terms.primary;
      acc.secondary += w * step.terms.secondary;
      acc.binary += w * step.terms.binary;
      acc.residual += w * step.terms.residual;
      acc.mean_k += w * step.terms.mean_k;
      acc.p_phi_t += w * step.terms.p_phi_t;
      max_residual = std::max(max_residual, step.terms.max_residual);

      auto params = parameter_views(out.model);
      auto grads = gradient_views(step.grads);
      sgd_step(params, grads, state, cfg.sgd, epoch);
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(cfg.sgd, epoch);
    rec.loss_cls = acc.cls * inv_n;
    if (distill) {
      rec.loss_kd = acc.kd * inv_n;
      rec.full_kd = acc.full_kd * inv_n;
      rec.primary = acc.primary * inv_n;
      rec.secondary = acc.secondary * inv_n;
      rec.binary = acc.binary * inv_n;
      rec.residual = acc.residual * inv_n;
      rec.mean_k = acc.mean_k * inv_n;
      rec.p_phi_t = acc.p_phi_t * inv_n;
    }
    const auto report = evaluate(out.model, data);
    rec.accuracy = report.accuracy;
    rec.tpr_at_fpr = report.tpr_at_fpr;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(rec.loss_cls) || (rec.loss_kd && !finite(*rec.loss_kd))) {
      out.audit_ok = false;
      out.audit_message = "non-finite loss at epoch " + std::to_string(epoch);
    }
    if (rec.residual && !(*rec.residual <= kAuditResidualLimit)) {
      out.audit_ok = false;
      std::ostringstream msg;
      msg << "decomposition residual " << *rec.residual << " exceeds "
          << kAuditResidualLimit << " at epoch " << epoch;
      out.audit_message = msg.str();
    }
    out.history.push_back(std::move(rec));
  }
  out.final_eval = out.history.empty() ? out.initial_eval : evaluate(out.model, data);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

void write_metrics(const std::filesystem::path& path, const ExperimentConfig& cfg,
                   const RunResult& run) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write metrics: " + path.string());
  os << "{\"config\":" << config_to_json(cfg) << "}\n";
  for (const auto& rec : run.history) os << to_json_line(rec, cfg.log_wall_time) << '\n';
}

void write_timing(const std::filesystem::path& path, const RunResult& run) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) return;
  for (const auto& rec : run.history) {
    os << "{\"epoch\":" << rec.epoch << ",\"wall_seconds\":" << rec.wall_seconds << "}\n";
  }
}

std::string fmt_num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

CommandResult train_teacher(const ExperimentConfig& cfg) {
  ExperimentConfig tcfg = cfg;
  tcfg.variant = "scratch";
  if (cfg.teacher_lr0) tcfg.sgd.lr0 = *cfg.teacher_lr0;
  if (cfg.teacher_epochs) tcfg.epochs = *cfg.teacher_epochs;
  const auto data = prepare_data(tcfg);
  auto run = run_training(tcfg, tcfg.teacher, data, nullptr, tcfg.seed);
  run.model.frozen = true;

  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  const auto ckpt = dir / "teacher.ckpt";
  save_model(ckpt, run.model);
  write_metrics(dir / "teacher_metrics.jsonl", tcfg, run);
  write_timing(dir / "teacher_timing.jsonl", run);
  return {run.audit_ok, run.audit_message, ckpt};
}

CommandResult distill(const ExperimentConfig& cfg,
                      const std::filesystem::path& teacher_checkpoint) {
  const auto data = prepare_data(cfg);
  std::optional<ModelBundle> teacher;
  if (cfg.kd_variant()) {
    teacher = load_model(teacher_checkpoint);
    if (!teacher->frozen) throw std::runtime_error("teacher checkpoint is not frozen");
    if (teacher->num_classes() != data.train.num_classes) {
      throw std::invalid_argument("teacher/student class count mismatch");
    }
  }
  const auto run =
      run_training(cfg, cfg.student, data, teacher ? &*teacher : nullptr, cfg.seed);

  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  save_model(dir / "student.ckpt", run.model);
  write_metrics(dir / "metrics.jsonl", cfg, run);
  write_timing(dir / "timing.jsonl", run);
  return {run.audit_ok, run.audit_message, dir / "metrics.jsonl"};
}

SweepKind parse_sweep_kind(const std::string& name) {
  if (name == "tau" || name == "taus") return SweepKind::tau;
  if (name == "lambda1" || name == "lambda1s") return SweepKind::lambda1;
  if (name == "lambda2" || name == "lambda2s") return SweepKind::lambda2;
  if (name == "variant" || name == "variants") return SweepKind::variant;
  throw std::invalid_argument("unknown sweep kind: " + name);
}

std::vector<std::string> default_sweep_values(SweepKind kind) {
  switch (kind) {
    case SweepKind::tau:
      return {"1.0", "0.99", "0.97", "0.95", "0.93", "0.91"};
    case SweepKind::lambda1:
      return {"teacher_mass", "2", "4", "8", "10"};
    case SweepKind::lambda2:
      return {"0", "1", "2"};
    case SweepKind::variant:
      return {"scratch", "full_kd", "primary_only", "primary_binary"};
  }
  return {};
}

ExperimentConfig apply_sweep_point(const ExperimentConfig& cfg, SweepKind kind,
                                   const std::string& value) {
  ExperimentConfig c = cfg;
  auto number = [&]() {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("bad sweep value: " + value);
    return v;
  };
  switch (kind) {
    case SweepKind::tau:
      c.kd.tau = number();
      break;
    case SweepKind::lambda1:
      if (value == "teacher_mass") {
        c.kd.lambda1_mode = Lambda1Mode::teacher_mass;
      } else {
        c.kd.lambda1_mode = Lambda1Mode::constant;
        c.kd.lambda1 = number();
      }
      break;
    case SweepKind::lambda2:
      c.kd.lambda2 = number();
      break;
    case SweepKind::variant:
      c.variant = value;
      break;
  }
  c.validate();
  return c;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, SweepKind kind,
                                const std::vector<std::string>& values,
                                const ModelBundle& teacher, const PreparedData& data,
                                unsigned jobs) {
  struct Job {
    std::size_t point;
    std::size_t seed_index;
    ExperimentConfig cfg;
  };
  std::vector<Job> work;
  for (std::size_t p = 0; p < values.size(); ++p) {
    const auto pc = apply_sweep_point(cfg, kind, values[p]);
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) work.push_back({p, s, pc});
  }
  std::vector<RunResult> results(work.size());
  auto run_one = [&](std::size_t i) {
    results[i] = run_training(work[i].cfg, work[i].cfg.student, data, &teacher,
                              cfg.seeds[work[i].seed_index]);
  };
  if (jobs <= 1) {
    for (std::size_t i = 0; i < work.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> workers;
    for (unsigned w = 0; w < jobs; ++w) {
      workers.push_back(std::async(std::launch::async, [&] {
        for (std::size_t i = next++; i < work.size(); i = next++) run_one(i);
      }));
    }
    for (auto& f : workers) f.get();
  }

  std::vector<SweepRow> rows(values.size());
  for (std::size_t p = 0; p < values.size(); ++p) {
    rows[p].value = values[p];
    rows[p].seeds = cfg.seeds;
  }
  for (std::size_t i = 0; i < work.size(); ++i) {
    auto& row = rows[work[i].point];
    row.accuracy.push_back(results[i].final_eval.accuracy);
    row.tpr.push_back(results[i].final_eval.tpr_at_fpr);
    row.audit_ok = row.audit_ok && results[i].audit_ok;
  }
  for (auto& row : rows) row.median_accuracy = median(row.accuracy);
  return rows;
}

CommandResult ablate(const ExperimentConfig& cfg, SweepKind kind,
                     const std::vector<std::string>& values,
                     const std::filesystem::path& teacher_checkpoint, unsigned jobs) {
  const auto data = prepare_data(cfg);
  const auto teacher = load_model(teacher_checkpoint);
  if (!teacher.frozen) throw std::runtime_error("teacher checkpoint is not frozen");
  const auto rows = run_sweep(cfg, kind, values, teacher, data, jobs);

  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  const char* kind_name[] = {"tau", "lambda1", "lambda2", "variant"};
  {
    std::ofstream os(dir / "summary.csv", std::ios::trunc);
    os << "sweep,value,variant,tau,lambda1,lambda2,num_seeds,median_accuracy,"
          "mean_accuracy,min_accuracy,max_accuracy,median_tpr_fpr_1e-1,"
          "median_tpr_fpr_1e-2,median_tpr_fpr_1e-3\n";
    for (const auto& row : rows) {
      const auto pc = apply_sweep_point(cfg, kind, row.value);
      const double mean =
          std::accumulate(row.accuracy.begin(), row.accuracy.end(), 0.0) /
          static_cast<double>(row.accuracy.size());
      os << kind_name[static_cast<int>(kind)] << ',' << row.value << ',' << pc.variant
         << ',' << fmt_num(pc.kd.tau) << ','
         << (pc.kd.lambda1_mode == Lambda1Mode::teacher_mass ? std::string("teacher_mass")
                                                            : fmt_num(pc.kd.lambda1))
         << ',' << fmt_num(pc.kd.lambda2) << ',' << row.accuracy.size() << ','
         << fmt_num(row.median_accuracy) << ',' << fmt_num(mean) << ','
         << fmt_num(*std::min_element(row.accuracy.begin(), row.accuracy.end())) << ','
         << fmt_num(*std::max_element(row.accuracy.begin(), row.accuracy.end()));
      for (double target : kFprTargets) {
        std::vector<double> v;
        for (const auto& t : row.tpr) {
          if (auto it = t.find(target); it != t.end()) v.push_back(it->second);
        }
        os << ',' << (v.size() == row.tpr.size() && !v.empty() ? fmt_num(median(v)) : "");
      }
      os << '\n';
    }
  }
  {
    std::ofstream os(dir / "runs.csv", std::ios::trunc);
    os << "sweep,value,seed,accuracy\n";
    for (const auto& row : rows) {
      for (std::size_t s = 0; s < row.accuracy.size(); ++s) {
        os << kind_name[static_cast<int>(kind)] << ',' << row.value << ','
           << row.seeds[s] << ',' << fmt_num(row.accuracy[s]) << '\n';
      }
    }
  }
  bool ok = true;
  for (const auto& row : rows) ok = ok && row.audit_ok;
  return {ok, ok ? "" : "self-audit failed for at least one sweep run", dir / "summary.csv"};
}

CommandResult diagnose(const ExperimentConfig& cfg,
                       const std::filesystem::path& teacher_checkpoint,
                       const std::filesystem::path& student_checkpoint,
                       const std::vector<std::size_t>& sample_ids, double tau,
                       Split split) {
  KDConfig kd = cfg.kd;
  kd.tau = tau;
  kd.validate();
  const auto data = prepare_data(cfg);
  const auto teacher = load_model(teacher_checkpoint);
  const auto student = load_model(student_checkpoint);
  if (teacher.num_classes() != student.num_classes()) {
    throw std::invalid_argument("teacher/student class count mismatch");
  }
  const Dataset& ds = split == Split::train ? data.train : data.eval;
  if (split == Split::eval && cfg.kd_source == KDLogitsSource::post_margin) {
    throw std::invalid_argument("post-margin diagnostics need training labels");
  }
  for (std::size_t id : sample_ids) {
    if (id >= ds.size()) {
      throw std::out_of_range("bad sample id " + std::to_string(id));
    }
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(sample_ids.size()), ds.features.cols());
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(sample_ids[i]));
    labels.push_back(split == Split::train ? ds.labels[sample_ids[i]] : 0);
  }
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMat zt = kd_logits(teacher, x, labels, cfg.kd_source);
  const RowMat zs = kd_logits(student, x, labels, cfg.kd_source);

  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "diagnose.csv", std::ios::trunc);
  std::ofstream terms(dir / "diagnose_terms.csv", std::ios::trunc);
  os << "sample_id,rank,class_id,p_teacher,p_student,in_phi\n";
  terms << "sample_id,label,k,tau,cumulative_at_k,p_phi_t,primary,secondary,binary,"
           "full_kd,residual\n";
  os << std::setprecision(12);
  const auto c = static_cast<std::size_t>(zt.cols());
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    const std::span<const double> rt(zt.row(static_cast<Eigen::Index>(i)).data(), c);
    const std::span<const double> rs(zs.row(static_cast<Eigen::Index>(i)).data(), c);
    const auto pt = softmax(rt, kd.temperature);
    const auto ps = softmax(rs, kd.temperature);
    const auto ranked = rank(ps);
    const auto part = make_partition(ranked, select_k(ranked, tau), tau);
    for (std::size_t r = 0; r < c; ++r) {
      const std::size_t cls = ranked.order[r];
      os << sample_ids[i] << ',' << r << ',' << cls << ',' << pt[cls] << ',' << ps[cls]
         << ',' << (r < part.k ? 1 : 0) << '\n';
    }
    const auto rep = decompose(rt, rs, part, kd.temperature);
    terms << sample_ids[i] << ',' << ds.labels[sample_ids[i]]
          << ',' << part.k << ',' << fmt_num(tau) << ','
          << fmt_num(ranked.cumulative[part.k - 1]) << ',' << fmt_num(rep.p_phi_t) << ','
          << fmt_num(rep.primary) << ',' << fmt_num(rep.secondary) << ','
          << fmt_num(rep.binary) << ',' << fmt_num(rep.full_kd) << ','
          << fmt_num(rep.residual) << '\n';
  }
  return {true, "", dir / "diagnose.csv"};
}

}  // namespace gkd
