// SPDX-License-Identifier: Apache-2.0
#include "gkd/kdloss.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>
#include <stdexcept>

namespace gkd {

void KDConfig::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("tau must lie in (0, 1]");
  }
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw std::invalid_argument("lambda weights must be non-negative");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("temperature must be positive and finite");
  }
}

namespace {

struct GroupLogMass {
  double lse_phi = 0.0;
  double lse_psi = 0.0;
  double log_p_phi = 0.0;
  double log_p_psi = 0.0;
  double p_phi = 1.0;
  double p_psi = 0.0;
};

GroupLogMass group_mass(LogitSpan z, const Partition& part, double t) {
  GroupLogMass g;
  g.lse_phi = log_sum_exp(z, part.phi, t);
  if (part.psi.empty()) {
    g.lse_psi = -INFINITY;
    g.log_p_phi = 0.0;
    g.log_p_psi = -INFINITY;
    g.p_phi = 1.0;
    g.p_psi = 0.0;
    return g;
  }
  g.lse_psi = log_sum_exp(z, part.psi, t);
  // log p_phi = -log(1 + exp(lse_psi - lse_phi)); softplus form keeps the
  // near-one mass accurate.
  const double d = g.lse_psi - g.lse_phi;
  const double softplus = d > 0 ? d + std::log1p(std::exp(-d))
                                : std::log1p(std::exp(d));
  g.log_p_phi = -softplus;
  g.log_p_psi = d - softplus;
  g.p_phi = std::exp(g.log_p_phi);
  g.p_psi = std::exp(g.log_p_psi);
  return g;
}

double group_kl(LogitSpan z_t, LogitSpan z_s, std::span<const std::size_t> idx,
                double lse_t, double lse_s, double t) {
  double acc = 0.0;
  for (std::size_t i : idx) {
    const double lt = z_t[i] / t - lse_t;
    const double ls = z_s[i] / t - lse_s;
    acc += std::exp(lt) * (lt - ls);
  }
  return std::max(acc, 0.0);
}

double binary_kl(const GroupLogMass& t, const GroupLogMass& s) {
  double acc = t.p_phi * (t.log_p_phi - s.log_p_phi);
  if (t.p_psi > 0.0) acc += t.p_psi * (t.log_p_psi - s.log_p_psi);
  return std::max(acc, 0.0);
}

void check_pair(LogitSpan z_t, LogitSpan z_s) {
  check_logits(z_t);
  check_logits(z_s);
  if (z_t.size() != z_s.size()) {
    throw std::invalid_argument("teacher/student logit length mismatch");
  }
}

void check_partition(const Partition& part, std::size_t c) {
  if (part.num_classes() != c || part.phi.empty() || part.k != part.phi.size()) {
    throw std::invalid_argument("partition does not match logits");
  }
}

struct Weights {
  double primary = 0.0;
  double secondary = 0.0;
  double binary = 0.0;
};

Weights variant_weights(KDVariant v, const KDConfig& cfg, double p_phi_t,
                        double p_psi_t) {
  const double l1 =
      cfg.lambda1_mode == Lambda1Mode::teacher_mass ? p_phi_t : cfg.lambda1;
  switch (v) {
    case KDVariant::primary_only:
      return {l1, 0.0, 0.0};
    case KDVariant::primary_binary:
      return {l1, 0.0, cfg.lambda2};
    case KDVariant::primary_secondary_binary:
      return {p_phi_t, p_psi_t, 1.0};
    case KDVariant::full_kd:
      break;
  }
  throw std::invalid_argument("variant has no group weights");
}

}  // namespace

GroupedProbs grouped_probs(LogitSpan z_t, LogitSpan z_s, const Partition& part,
                           double temperature) {
  check_pair(z_t, z_s);
  check_partition(part, z_t.size());
  const auto mt = group_mass(z_t, part, temperature);
  const auto ms = group_mass(z_s, part, temperature);
  GroupedProbs g;
  auto fill = [&](LogitSpan z, std::span<const std::size_t> idx, double lse,
                  std::vector<double>& out) {
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(std::exp(z[i] / temperature - lse));
  };
  fill(z_t, part.phi, mt.lse_phi, g.p_hat_t);
  fill(z_s, part.phi, ms.lse_phi, g.p_hat_s);
  fill(z_t, part.psi, mt.lse_psi, g.p_check_t);
  fill(z_s, part.psi, ms.lse_psi, g.p_check_s);
  g.pb_t = {mt.p_phi, mt.p_psi};
  g.pb_s = {ms.p_phi, ms.p_psi};
  return g;
}

double classic_kd(LogitSpan z_t, LogitSpan z_s, double temperature) {
  check_pair(z_t, z_s);
  return kl_divergence_log(log_softmax(z_t, temperature),
                           log_softmax(z_s, temperature));
}

DecompositionReport decompose(LogitSpan z_t, LogitSpan z_s,
                              const Partition& part, double temperature) {
  check_pair(z_t, z_s);
  check_partition(part, z_t.size());
  const auto mt = group_mass(z_t, part, temperature);
  const auto ms = group_mass(z_s, part, temperature);
  DecompositionReport r;
  r.full_kd = classic_kd(z_t, z_s, temperature);
  r.primary = group_kl(z_t, z_s, part.phi, mt.lse_phi, ms.lse_phi, temperature);
  if (!part.psi.empty()) {
    r.secondary =
        group_kl(z_t, z_s, part.psi, mt.lse_psi, ms.lse_psi, temperature);
    r.binary = binary_kl(mt, ms);
  }
  r.p_phi_t = mt.p_phi;
  r.p_psi_t = mt.p_psi;
  r.residual = std::abs(r.full_kd - (r.p_phi_t * r.primary +
                                     r.p_psi_t * r.secondary + r.binary));
  return r;
}

namespace {

KDSample log_space_path(KDVariant variant, LogitSpan z_t, LogitSpan z_s,
                        const KDConfig& cfg, std::span<double> grad_out) {
  const double t = cfg.temperature;
  const std::size_t c = z_s.size();

  const auto p_s = softmax(z_s, t);
  const auto ranked = rank(p_s);
  const Partition part = make_partition(ranked, select_k(ranked, cfg.tau), cfg.tau);

  KDSample out;
  out.k = part.k;
  out.terms = decompose(z_t, z_s, part, t);

  if (variant == KDVariant::full_kd) {
    out.loss = out.terms.full_kd;
    if (!grad_out.empty()) {
      const auto p_t = softmax(z_t, t);
      for (std::size_t i = 0; i < c; ++i) grad_out[i] = (p_s[i] - p_t[i]) / t;
    }
    return out;
  }

  const Weights w =
      variant_weights(variant, cfg, out.terms.p_phi_t, out.terms.p_psi_t);
  out.loss = w.primary * out.terms.primary + w.secondary * out.terms.secondary +
             w.binary * out.terms.binary;
  if (grad_out.empty()) return out;

  const auto mt = group_mass(z_t, part, t);
  const auto ms = group_mass(z_s, part, t);
  // For i in group g: w_g_kl * (qS_i - qT_i) + w_binary * qS_i * (pS_g - pT_g),
  // q being the within-group probabilities.
  auto apply = [&](std::span<const std::size_t> idx, double lse_t, double lse_s,
                   double w_group, double mass_s, double mass_t) {
    for (std::size_t i : idx) {
      const double qt = std::exp(z_t[i] / t - lse_t);
      const double qs = std::exp(z_s[i] / t - lse_s);
      grad_out[i] = (w_group * (qs - qt) + w.binary * qs * (mass_s - mass_t)) / t;
    }
  };
  apply(part.phi, mt.lse_phi, ms.lse_phi, w.primary, ms.p_phi, mt.p_phi);
  if (!part.psi.empty()) {
    apply(part.psi, mt.lse_psi, ms.lse_psi, w.secondary, ms.p_psi, mt.p_psi);
  }
  return out;
}

// Shares one exponential per logit across every term. Only valid while
// all log-probabilities stay well inside the normal double range.
std::optional<KDSample> shared_exp_path(KDVariant variant, LogitSpan z_t,
                                        LogitSpan z_s, const KDConfig& cfg,
                                        std::span<double> grad_out) {
  constexpr double kMinLogProb = -700.0;
  const double t = cfg.temperature;
  const std::size_t c = z_s.size();
  std::vector<double> e_t(c), e_s(c);
  double max_t = -INFINITY, max_s = -INFINITY;
  for (std::size_t i = 0; i < c; ++i) {
    max_t = std::max(max_t, z_t[i] / t);
    max_s = std::max(max_s, z_s[i] / t);
  }
  double sum_t = 0.0, sum_s = 0.0;
  double min_t = INFINITY, min_s = INFINITY;
  for (std::size_t i = 0; i < c; ++i) {
    e_t[i] = std::exp(z_t[i] / t - max_t);
    e_s[i] = std::exp(z_s[i] / t - max_s);
    sum_t += e_t[i];
    sum_s += e_s[i];
    min_t = std::min(min_t, z_t[i] / t);
    min_s = std::min(min_s, z_s[i] / t);
  }
  const double lse_t = max_t + std::log(sum_t);
  const double lse_s = max_s + std::log(sum_s);
  if (min_t - lse_t < kMinLogProb || min_s - lse_s < kMinLogProb) {
    return std::nullopt;
  }

  std::vector<double> p_s(c);
  const double inv_s = 1.0 / sum_s;
  for (std::size_t i = 0; i < c; ++i) p_s[i] = e_s[i] * inv_s;
  const Partition part = partition_from_probs(p_s, cfg.tau);

  struct Group {
    double log_sum_t = 0.0, log_sum_s = 0.0;  // log of unnormalised group sums
    double kl = 0.0;
  };
  auto group = [&](std::span<const std::size_t> idx) {
    double st = 0.0, ss = 0.0;
    for (std::size_t i : idx) {
      st += e_t[i];
      ss += e_s[i];
    }
    Group g;
    g.log_sum_t = std::log(st);
    g.log_sum_s = std::log(ss);
    const double inv = 1.0 / st;
    double acc = 0.0;
    for (std::size_t i : idx) {
      const double lt = z_t[i] / t - max_t - g.log_sum_t;
      const double ls = z_s[i] / t - max_s - g.log_sum_s;
      acc += e_t[i] * inv * (lt - ls);
    }
    g.kl = std::max(acc, 0.0);
    return g;
  };
  auto masses = [](double log_phi, double log_psi) {
    GroupLogMass m;
    m.lse_phi = log_phi;
    m.lse_psi = log_psi;
    const double d = log_psi - log_phi;
    const double softplus = d > 0 ? d + std::log1p(std::exp(-d))
                                  : std::log1p(std::exp(d));
    m.log_p_phi = -softplus;
    m.log_p_psi = d - softplus;
    m.p_phi = std::exp(m.log_p_phi);
    m.p_psi = std::exp(m.log_p_psi);
    return m;
  };

  const Group phi = group(part.phi);
  GroupLogMass mt, ms;
  Group psi;
  if (part.psi.empty()) {
    mt.lse_psi = ms.lse_psi = -INFINITY;
    mt.log_p_psi = ms.log_p_psi = -INFINITY;
  } else {
    psi = group(part.psi);
    mt = masses(phi.log_sum_t, psi.log_sum_t);
    ms = masses(phi.log_sum_s, psi.log_sum_s);
  }

  KDSample out;
  out.k = part.k;
  DecompositionReport& r = out.terms;
  double full = 0.0;
  const double inv_t = 1.0 / sum_t;
  for (std::size_t i = 0; i < c; ++i) {
    const double at = z_t[i] / t - lse_t;
    const double as = z_s[i] / t - lse_s;
    full += e_t[i] * inv_t * (at - as);
  }
  r.full_kd = std::max(full, 0.0);
  r.primary = phi.kl;
  if (!part.psi.empty()) {
    r.secondary = psi.kl;
    r.binary = binary_kl(mt, ms);
  }
  r.p_phi_t = mt.p_phi;
  r.p_psi_t = mt.p_psi;
  r.residual = std::abs(r.full_kd - (r.p_phi_t * r.primary +
                                     r.p_psi_t * r.secondary + r.binary));

  if (variant == KDVariant::full_kd) {
    out.loss = r.full_kd;
    if (!grad_out.empty()) {
      for (std::size_t i = 0; i < c; ++i) {
        grad_out[i] = (p_s[i] - e_t[i] * inv_t) / t;
      }
    }
    return out;
  }
  const Weights w = variant_weights(variant, cfg, r.p_phi_t, r.p_psi_t);
  out.loss = w.primary * r.primary + w.secondary * r.secondary + w.binary * r.binary;
  if (grad_out.empty()) return out;
  auto apply = [&](std::span<const std::size_t> idx, const Group& g,
                   double w_group, double mass_s, double mass_t) {
    const double it = std::exp(-g.log_sum_t);
    const double is = std::exp(-g.log_sum_s);
    for (std::size_t i : idx) {
      const double qt = e_t[i] * it;
      const double qs = e_s[i] * is;
      grad_out[i] = (w_group * (qs - qt) + w.binary * qs * (mass_s - mass_t)) / t;
    }
  };
  apply(part.phi, phi, w.primary, ms.p_phi, mt.p_phi);
  if (!part.psi.empty()) apply(part.psi, psi, w.secondary, ms.p_psi, mt.p_psi);
  return out;
}

}  // namespace

KDSample kd_forward_backward(KDVariant variant, LogitSpan z_t, LogitSpan z_s,
                             const KDConfig& cfg, std::span<double> grad_out) {
  cfg.validate();
  check_pair(z_t, z_s);
  if (!grad_out.empty() && grad_out.size() != z_s.size()) {
    throw std::invalid_argument("gradient buffer length mismatch");
  }
  if (auto fast = shared_exp_path(variant, z_t, z_s, cfg, grad_out)) return *fast;
  return log_space_path(variant, z_t, z_s, cfg, grad_out);
}

double gkd_loss(LogitSpan z_t, LogitSpan z_s, const KDConfig& cfg) {
  return kd_forward_backward(KDVariant::primary_binary, z_t, z_s, cfg, {}).loss;
}

std::vector<double> gkd_backward(LogitSpan z_t, LogitSpan z_s,
                                 const KDConfig& cfg) {
  std::vector<double> g(z_s.size());
  kd_forward_backward(KDVariant::primary_binary, z_t, z_s, cfg, g);
  return g;
}

std::vector<double> kd_backward(LogitSpan z_t, LogitSpan z_s,
                                double temperature) {
  check_pair(z_t, z_s);
  const auto p_t = softmax(z_t, temperature);
  const auto p_s = softmax(z_s, temperature);
  std::vector<double> g(z_s.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (p_s[i] - p_t[i]) / temperature;
  }
  return g;
}

double ablation_loss(KDVariant variant, LogitSpan z_t, LogitSpan z_s,
                     const KDConfig& cfg) {
  return kd_forward_backward(variant, z_t, z_s, cfg, {}).loss;
}

std::vector<double> ablation_backward(KDVariant variant, LogitSpan z_t,
                                      LogitSpan z_s, const KDConfig& cfg) {
  std::vector<double> g(z_s.size());
  kd_forward_backward(variant, z_t, z_s, cfg, g);
  return g;
}

KDVariant parse_kd_variant(std::string_view name) {
  if (name == "full_kd") return KDVariant::full_kd;
  if (name == "primary_only") return KDVariant::primary_only;
  if (name == "primary_binary" || name == "gkd") return KDVariant::primary_binary;
  if (name == "primary_secondary_binary") {
    return KDVariant::primary_secondary_binary;
  }
  throw std::invalid_argument("unknown KD variant: " + std::string(name));
}

std::string_view to_string(KDVariant v) {
  switch (v) {
    case KDVariant::full_kd:
      return "full_kd";
    case KDVariant::primary_only:
      return "primary_only";
    case KDVariant::primary_binary:
      return "primary_binary";
    case KDVariant::primary_secondary_binary:
      return "primary_secondary_binary";
  }
  return "unknown";
}

}  // namespace gkd
