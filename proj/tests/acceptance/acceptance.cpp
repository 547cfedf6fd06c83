// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "gkd/data.hpp"
#include "gkd/grouping.hpp"
#include "gkd/harness.hpp"
#include "gkd/kdloss.hpp"
#include "gkd/marginloss.hpp"
#include "gkd/model.hpp"

namespace fs = std::filesystem;
using namespace gkd;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// True when no +-h nudge of a single logit changes the primary group.
bool partition_stable(const std::vector<double>& zs, double tau, double temperature, double h) {
  const auto base = build_partition(zs, tau, temperature);
  for (std::size_t i = 0; i < zs.size(); ++i) {
    for (double s : {h, -h}) {
      auto z = zs;
      z[i] += s;
      if (build_partition(z, tau, temperature).phi != base.phi) return false;
    }
  }
  return true;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                              double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// ---------------------------------------------------------------------------

Outcome decomposition_identity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> spread(0.5, 8.0);
  double worst = 0.0;
  std::size_t n = 0;
  for (std::size_t c : {8u, 64u, 512u, 4096u}) {
    for (double tau : {0.5, 0.93, 0.99}) {
      for (int i = 0; i < 1000; ++i) {
        const auto zt = oracle::random_logits(rng, c, spread(rng));
        const auto zs = oracle::random_logits(rng, c, spread(rng));
        const auto part = build_partition(zs, tau);
        const auto r = decompose(zt, zs, part);
        const double rebuilt = r.p_phi_t * r.primary + r.p_psi_t * r.secondary + r.binary;
        const double full = classic_kd(zt, zs);
        worst = std::max(worst, std::abs(full - rebuilt) / std::max(full, 1e-300));
        ++n;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && secs < 30.0,
          std::to_string(n) + " pairs, max relative residual " + fmt(worst) + ", " +
              fmt(secs) + " s (limit 30 s)"};
}

Outcome reduction() {
  std::mt19937_64 rng(1002);
  std::uniform_real_distribution<double> spread(0.5, 8.0);
  std::uniform_int_distribution<std::size_t> classes(2, 600);
  KDConfig cfg;
  cfg.tau = 1.0;
  cfg.lambda1 = 1.0;
  cfg.lambda2 = 1.0;
  cfg.temperature = 1.0;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t c = classes(rng);
    const auto zt = oracle::random_logits(rng, c, spread(rng));
    const auto zs = oracle::random_logits(rng, c, spread(rng));
    worst = std::max(worst, std::abs(gkd_loss(zt, zs, cfg) - classic_kd(zt, zs)));
  }
  return {worst <= 1e-9, "1000 pairs, max |gkd - kd| " + fmt(worst)};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1003);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& key, double err) { worst[key] = std::max(worst[key], err); };

  // Distillation losses with respect to student logits.
  int gkd_checked = 0;
  for (std::size_t c : {8u, 32u, 128u, 512u}) {
    for (int rep = 0; rep < 8; ++rep) {
      const auto zt = oracle::random_logits(rng, c, 2.0);
      const auto zs = oracle::random_logits(rng, c, 2.0);
      KDConfig cfg;
      cfg.tau = rep % 2 ? 0.93 : 0.7;
      cfg.temperature = rep % 3 == 0 ? 2.0 : 1.0;
      if (rep % 4 == 3) cfg.lambda1_mode = Lambda1Mode::teacher_mass;
      // Central differences straddling a change of partition measure a jump,
      // not a derivative; such draws are skipped.
      if (partition_stable(zs, cfg.tau, cfg.temperature, 1e-5)) {
        const auto num = oracle::central_diff(
            [&](const oracle::Vec& z) { return gkd_loss(zt, z, cfg); }, zs);
        note("gkd_backward", oracle::max_rel_error(gkd_backward(zt, zs, cfg), num));
        ++gkd_checked;
      }
      for (double t : {1.0, 4.0}) {
        const auto num = oracle::central_diff(
            [&](const oracle::Vec& z) { return classic_kd(zt, z, t); }, zs);
        note("kd_backward", oracle::max_rel_error(kd_backward(zt, zs, t), num));
      }
    }
  }

  // Margin heads with respect to embedding and prototypes.
  for (auto kind : {HeadKind::arcface, HeadKind::cosface}) {
    for (int rep = 0; rep < 6; ++rep) {
      auto head = kind == HeadKind::arcface ? arcface_head(random_matrix(rng, 10, 16))
                                            : cosface_head(random_matrix(rng, 10, 16));
      const oracle::Vec e = oracle::random_logits(rng, 16, 1.0);
      const std::size_t y = static_cast<std::size_t>(rep);
      const auto g = head_backward(e, y, head);
      const auto num_e = oracle::central_diff(
          [&](const oracle::Vec& x) { return head_loss(x, y, head); }, e);
      note("head_backward", oracle::max_rel_error(g.embedding, num_e));
      const oracle::Vec w(head.weights.data(), head.weights.data() + head.weights.size());
      const auto num_w = oracle::central_diff(
          [&](const oracle::Vec& flat) {
            auto h = head;
            h.weights = Eigen::Map<const Eigen::MatrixXd>(flat.data(), 10, 16);
            return head_loss(e, y, h);
          },
          w);
      note("head_backward",
           oracle::max_rel_error(oracle::Vec(g.weights.data(), g.weights.data() + g.weights.size()),
                                 num_w));
    }
  }

  // MLP backward through a random linear read-out of the embeddings.
  for (int rep = 0; rep < 4; ++rep) {
    auto m = init_model(MLPSpec{6, {12, 9}, 5}, HeadSpec{4, HeadKind::arcface, 64.0, 0.5},
                        static_cast<std::uint64_t>(rep));
    for (auto& layer : m.layers) layer.bias = random_matrix(rng, layer.bias.size(), 1, 0.3);
    const auto x = random_matrix(rng, 4, 6);
    const auto r = random_matrix(rng, 4, 5);
    const auto g = backward(m, forward(m, x).cache, r);
    auto params = parameter_views(m);
    const auto grads = gradient_views(g);
    oracle::Vec ana, num;
    for (std::size_t t = 0; t + 1 < params.size(); ++t) {
      for (std::size_t i = 0; i < params[t].size(); ++i) {
        const double keep = params[t][i];
        params[t][i] = keep + 1e-5;
        const double up = (embed(m, x).array() * r.array()).sum();
        params[t][i] = keep - 1e-5;
        const double down = (embed(m, x).array() * r.array()).sum();
        params[t][i] = keep;
        ana.push_back(grads[t][i]);
        num.push_back((up - down) / 2e-5);
      }
    }
    note("model backward", oracle::max_rel_error(ana, num));
  }

  // Composite classification + distillation loss over all student parameters.
  for (auto source : {KDLogitsSource::pre_margin, KDLogitsSource::post_margin}) {
    for (auto variant : {KDVariant::full_kd, KDVariant::primary_only, KDVariant::primary_binary,
                         KDVariant::primary_secondary_binary}) {
      const MLPSpec spec{5, {7}, 4};
      auto teacher = init_model(spec, HeadSpec{6, HeadKind::arcface, 4.0, 0.5}, 31);
      teacher.frozen = true;
      auto student = init_model(spec, HeadSpec{6, HeadKind::arcface, 4.0, 0.5}, 32);
      for (auto& layer : student.layers) layer.bias = random_matrix(rng, layer.bias.size(), 1, 0.3);
      Batch batch;
      batch.features = random_matrix(rng, 2, 5);
      batch.labels = {1, 4};
      LossSetup setup;
      setup.variant = variant;
      setup.kd.tau = 0.7;
      setup.kd_source = source;
      const auto zt = kd_logits(teacher, batch.features, batch.labels, source);
      const auto step = total_loss_step(zt, student, batch, setup);
      auto params = parameter_views(student);
      const auto grads = gradient_views(step.grads);
      oracle::Vec ana, num;
      for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].size(); ++i) {
          const double keep = params[t][i];
          params[t][i] = keep + 1e-5;
          const double up = total_loss(zt, student, batch, setup).total;
          params[t][i] = keep - 1e-5;
          const double down = total_loss(zt, student, batch, setup).total;
          params[t][i] = keep;
          ana.push_back(grads[t][i]);
          num.push_back((up - down) / 2e-5);
        }
      }
      note("composite", oracle::max_rel_error(ana, num));
    }
  }

  const double secs = seconds_since(t0);
  bool pass = secs < 60.0 && gkd_checked >= 8;
  std::string detail;
  for (const auto& [key, err] : worst) {
    const double limit = key == "composite" ? 1e-3 : 1e-4;
    pass = pass && err <= limit;
    detail += key + " " + fmt(err) + " (<= " + fmt(limit) + "), ";
  }
  detail += std::to_string(gkd_checked) + " gkd cases, " + fmt(secs) + " s (limit 60 s)";
  return {pass, detail};
}

Outcome secondary_omission() {
  std::mt19937_64 rng(1004);
  std::uniform_int_distribution<std::size_t> classes(4, 300);
  std::uniform_real_distribution<double> tau_pick(0.3, 0.95);
  double worst = 0.0;
  int nontrivial = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = classes(rng);
    auto zt = oracle::random_logits(rng, c, 3.0);
    const auto zs = oracle::random_logits(rng, c, 3.0);
    KDConfig cfg;
    cfg.tau = tau_pick(rng);
    const double before = gkd_loss(zt, zs, cfg);
    const auto part = build_partition(zs, cfg.tau);
    std::vector<double> vals;
    for (auto i : part.psi) vals.push_back(zt[i]);
    std::shuffle(vals.begin(), vals.end(), rng);
    for (std::size_t j = 0; j < part.psi.size(); ++j) zt[part.psi[j]] = vals[j];
    nontrivial += part.psi.size() > 1 ? 1 : 0;
    worst = std::max(worst, std::abs(gkd_loss(zt, zs, cfg) - before));
  }
  return {worst <= 1e-12 && nontrivial >= 50,
          "100 trials (" + std::to_string(nontrivial) + " with |Psi| > 1), max change " +
              fmt(worst)};
}

Outcome select_k_oracle() {
  std::mt19937_64 rng(1005);
  std::uniform_int_distribution<std::size_t> classes(1, 200);
  std::uniform_real_distribution<double> tau_pick(0.0, 1.0);
  int mismatches = 0, non_monotone = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = oracle::random_probs(rng, classes(rng), i % 4);
    const auto ranked = rank(p);
    const double tau = i % 10 == 0 ? 1.0 : tau_pick(rng);
    if (select_k(ranked, tau) != oracle::brute_select_k(p, tau)) ++mismatches;
    std::size_t prev = 0;
    for (int g = 1; g <= 50; ++g) {
      const std::size_t k = select_k(ranked, g / 50.0);
      if (k < prev) {
        ++non_monotone;
        break;
      }
      prev = k;
    }
  }
  return {mismatches == 0 && non_monotone == 0,
          "10000 vectors, " + std::to_string(mismatches) + " oracle mismatches, " +
              std::to_string(non_monotone) + " monotonicity violations"};
}

// ---------------------------------------------------------------------------
// Trend criteria share one teacher and one prepared dataset.

struct TrendContext {
  ExperimentConfig cfg;
  PreparedData data;
  ModelBundle teacher;
  double teacher_accuracy = 0.0;
  double setup_seconds = 0.0;
  unsigned jobs = 1;
  std::map<std::string, std::vector<double>> variant_acc;  // filled by the variant comparison
};

TrendContext make_trend_context(const fs::path& work, unsigned jobs) {
  const auto t0 = Clock::now();
  TrendContext ctx;
  ctx.cfg = ExperimentConfig{};
  ctx.cfg.seeds = {1, 2, 3, 4, 5};
  ctx.cfg.out_dir = (work / "teacher").string();
  ctx.jobs = jobs;
  const auto res = train_teacher(ctx.cfg);
  ctx.teacher = load_model(res.output);
  ctx.data = prepare_data(ctx.cfg);
  ctx.teacher_accuracy = evaluate(ctx.teacher, ctx.data).accuracy;
  ctx.setup_seconds = seconds_since(t0);
  return ctx;
}

Outcome variant_trend(TrendContext& ctx) {
  const auto t0 = Clock::now();
  const std::vector<std::string> variants{"scratch", "full_kd", "primary_only", "primary_binary"};
  const auto rows = run_sweep(ctx.cfg, SweepKind::variant, variants, ctx.teacher, ctx.data, ctx.jobs);
  std::map<std::string, double> med;
  bool audit = true;
  for (const auto& row : rows) {
    med[row.value] = row.median_accuracy;
    ctx.variant_acc[row.value] = row.accuracy;
    audit = audit && row.audit_ok;
  }
  const double secs = seconds_since(t0) + ctx.setup_seconds;
  const double gkd = med["primary_binary"], po = med["primary_only"];
  const double full = med["full_kd"], scratch = med["scratch"];
  const bool order = gkd >= po && po >= full - 0.003;
  const bool gain = gkd >= scratch + 0.005;
  std::string detail = "median acc % over 5 seeds: teacher " + pct(ctx.teacher_accuracy) +
                       ", scratch " + pct(scratch) + ", full_kd " + pct(full) +
                       ", primary_only " + pct(po) + ", gkd " + pct(gkd) +
                       "; gkd>=primary_only>=full_kd-0.3pt " + (order ? "yes" : "no") +
                       ", gkd>=scratch+0.5pt " + (gain ? "yes" : "no") + ", " +
                       fmt(secs, 4) + " s (limit 900 s)";
  if (!audit) detail += ", self-audit failed";
  return {order && gain && audit && secs < 900.0, detail};
}

Outcome tau_trend(TrendContext& ctx) {
  const auto t0 = Clock::now();
  // tau = 0.93 is the default configuration, already run by the variant
  // comparison with identical seeds; reuse it when available.
  std::vector<std::string> taus{"1.0", "0.99", "0.95", "0.91"};
  const bool reuse = ctx.variant_acc.count("primary_binary") > 0;
  if (!reuse) taus.insert(taus.begin() + 3, "0.93");
  const auto rows = run_sweep(ctx.cfg, SweepKind::tau, taus, ctx.teacher, ctx.data, ctx.jobs);
  std::map<double, double> med;
  bool audit = true;
  for (const auto& row : rows) {
    med[std::stod(row.value)] = row.median_accuracy;
    audit = audit && row.audit_ok;
  }
  if (reuse) med[0.93] = median(ctx.variant_acc["primary_binary"]);
  const double base = med[1.0];
  double best_tau = 1.0, best = base;
  std::string detail = "median acc %:";
  for (auto it = med.rbegin(); it != med.rend(); ++it) {
    detail += " tau=" + fmt(it->first) + " " + pct(it->second);
    if (it->first < 1.0 && it->second > best) {
      best = it->second;
      best_tau = it->first;
    }
  }
  const bool pass = best_tau < 1.0 && best >= base + 0.003 && audit;
  detail += "; best tau<1: " + (best_tau < 1.0 ? fmt(best_tau) : std::string("none")) +
            " (+" + pct(best - base) + "pt over tau=1), " + fmt(seconds_since(t0), 4) + " s";
  if (!audit) detail += ", self-audit failed";
  return {pass, detail};
}

// ---------------------------------------------------------------------------

ExperimentConfig small_cli_config(const fs::path& work) {
  ExperimentConfig c;
  c.data.num_classes = 12;
  c.data.feature_dim = 10;
  c.data.samples_per_class = 15;
  c.data.eval_classes = 6;
  c.data.eval_samples_per_class = 8;
  c.data.noise_sigma = 0.5;
  c.data.center_scale = 2.0;
  c.eval_pairs = 100;
  c.teacher = MLPSpec{10, {32}, 12};
  c.student = MLPSpec{10, {24}, 12};
  c.head_scale = 16.0;
  c.epochs = 2;
  c.teacher_epochs.reset();
  c.batch_size = 32;
  c.seeds = {1, 2};
  c.out_dir = (work / "out").string();
  return c;
}

Outcome cli_determinism(const fs::path& work, const std::string& gkd_path) {
  fs::remove_all(work);
  fs::create_directories(work);
  const auto cfg = small_cli_config(work);
  const auto cfg_path = work / "config.json";
  {
    std::ofstream os(cfg_path);
    os << config_to_json(cfg);
  }
  const fs::path teacher = work / "teacher";
  const fs::path student = work / "student";

  struct Step {
    std::string name;
    std::function<bool(const fs::path& out)> run;
    std::vector<std::string> files;
  };
  auto cli = [&](const std::string& args) {
    const std::string cmd = "\"" + gkd_path + "\" " + args + " > \"" +
                            (work / "cli.log").string() + "\" 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  const std::string conf = "--config \"" + cfg_path.string() + "\" ";
  std::vector<Step> steps;
  if (!gkd_path.empty()) {
    steps = {
        {"train-teacher",
         [&](const fs::path& o) { return cli("train-teacher " + conf + "--out \"" + o.string() + "\""); },
         {"teacher_metrics.jsonl", "teacher.ckpt"}},
        {"distill",
         [&](const fs::path& o) {
           return cli("distill " + conf + "--teacher \"" + (teacher / "teacher.ckpt").string() +
                      "\" --out \"" + o.string() + "\"");
         },
         {"metrics.jsonl", "student.ckpt"}},
        {"ablate",
         [&](const fs::path& o) {
           return cli("ablate " + conf + "--teacher \"" + (teacher / "teacher.ckpt").string() +
                      "\" --sweep tau --values 1.0,0.93 --out \"" + o.string() + "\"");
         },
         {"summary.csv", "runs.csv"}},
        {"diagnose",
         [&](const fs::path& o) {
           return cli("diagnose " + conf + "--teacher \"" + (teacher / "teacher.ckpt").string() +
                      "\" --student \"" + (student / "student.ckpt").string() +
                      "\" --samples 0,3,7 --tau 0.93 --out \"" + o.string() + "\"");
         },
         {"diagnose.csv", "diagnose_terms.csv"}},
    };
  } else {
    auto with_out = [&](const fs::path& o) {
      auto c = cfg;
      c.out_dir = o.string();
      return c;
    };
    steps = {
        {"train-teacher", [&](const fs::path& o) { return train_teacher(with_out(o)).ok; },
         {"teacher_metrics.jsonl", "teacher.ckpt"}},
        {"distill",
         [&](const fs::path& o) { return distill(with_out(o), teacher / "teacher.ckpt").ok; },
         {"metrics.jsonl", "student.ckpt"}},
        {"ablate",
         [&](const fs::path& o) {
           return ablate(with_out(o), SweepKind::tau, {"1.0", "0.93"}, teacher / "teacher.ckpt").ok;
         },
         {"summary.csv", "runs.csv"}},
        {"diagnose",
         [&](const fs::path& o) {
           return diagnose(with_out(o), teacher / "teacher.ckpt", student / "student.ckpt",
                           {0, 3, 7}, 0.93)
               .ok;
         },
         {"diagnose.csv", "diagnose_terms.csv"}},
    };
  }

  const std::map<std::string, fs::path> out_of{{"train-teacher", teacher},
                                               {"distill", student},
                                               {"ablate", work / "ablate"},
                                               {"diagnose", work / "diagnose"}};
  bool pass = true;
  std::string detail = gkd_path.empty() ? "in-process: " : "via CLI: ";
  for (const auto& step : steps) {
    const auto out = out_of.at(step.name);
    bool same = step.run(out);
    std::vector<std::string> first;
    for (const auto& f : step.files) first.push_back(slurp(out / f));
    same = same && step.run(out);
    for (std::size_t i = 0; i < step.files.size(); ++i) {
      same = same && !first[i].empty() && slurp(out / step.files[i]) == first[i];
    }
    pass = pass && same;
    detail += step.name + (same ? " identical" : " DIFFERS") + ", ";
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

Outcome idx_round_trip(const fs::path& work) {
  fs::remove_all(work);
  fs::create_directories(work);
  IdxImages img;
  img.count = 4;
  img.rows = 8;
  img.cols = 8;
  for (int i = 0; i < 256; ++i) img.pixels.push_back(static_cast<std::uint8_t>(i));
  std::vector<std::uint8_t> labels{3, 1, 4, 1};
  write_idx_images(work / "images.idx", img);
  write_idx_labels(work / "labels.idx", labels);
  const auto back = read_idx_images(work / "images.idx");
  const auto back_labels = read_idx_labels(work / "labels.idx");
  write_idx_images(work / "images2.idx", back);
  write_idx_labels(work / "labels2.idx", back_labels);
  const bool bytes = slurp(work / "images.idx") == slurp(work / "images2.idx") &&
                     slurp(work / "labels.idx") == slurp(work / "labels2.idx");
  const bool values = back.pixels == img.pixels && back_labels == labels &&
                      back.count == 4 && back.rows == 8 && back.cols == 8;
  const auto ds = load_idx(work / "images.idx", work / "labels.idx");
  const double lo = ds.features.minCoeff(), hi = ds.features.maxCoeff();
  const bool bounds = ds.features(0, 0) == -0.99609375 && ds.features(3, 63) == 0.99609375 &&
                      lo == -0.99609375 && hi == 0.99609375;
  return {bytes && values && bounds,
          std::string("byte round trip ") + (bytes ? "exact" : "differs") + ", values " +
              (values ? "exact" : "differ") + ", pixel 0 -> " + fmt(ds.features(0, 0), 10) +
              ", pixel 255 -> " + fmt(ds.features(3, 63), 10)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GKD acceptance suite"};
  std::string gkd_path;
  std::string work = "acceptance_work";
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::string> only;
  app.add_option("--gkd", gkd_path, "gkd executable used for the CLI determinism check");
  app.add_option("--work", work, "scratch directory");
  app.add_option("--jobs", jobs, "parallel training runs for the trend criteria");
  app.add_option("--only", only, "run only the named criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path root(work);
  fs::create_directories(root);
  std::optional<TrendContext> trend;
  auto trend_ctx = [&]() -> TrendContext& {
    if (!trend) trend = make_trend_context(root / "trend", jobs);
    return *trend;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"decomposition-identity", decomposition_identity},
      {"reduction", reduction},
      {"gradient-suite", gradient_suite},
      {"secondary-omission", secondary_omission},
      {"select-k", select_k_oracle},
      {"variant-trend", [&] { return variant_trend(trend_ctx()); }},
      {"tau-trend", [&] { return tau_trend(trend_ctx()); }},
      {"determinism", [&] { return cli_determinism(root / "determinism", gkd_path); }},
      {"idx-parser", [&] { return idx_round_trip(root / "idx"); }},
  };

  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
