// SPDX-License-Identifier: Apache-2.0
/**
 * @file   oracles.hpp
 * @brief  Independent reference computations used by the test suites.
 *
 * Everything here is written for clarity rather than speed and shares no
 * code with the library: long-double arithmetic, explicit loops and
 * exhaustive searches.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline std::vector<long double> softmax_ld(const Vec& z, double t = 1.0) {
  long double m = -std::numeric_limits<long double>::infinity();
  for (double v : z) m = std::max(m, static_cast<long double>(v) / t);
  std::vector<long double> e(z.size());
  long double s = 0.0L;
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(z[i]) / t - m);
    s += e[i];
  }
  for (auto& v : e) v /= s;
  return e;
}

inline Vec softmax(const Vec& z, double t = 1.0) {
  const auto p = softmax_ld(z, t);
  return Vec(p.begin(), p.end());
}

/// KL(p || q) over an index subset, each side renormalised on the subset.
inline long double group_kl(const std::vector<long double>& p,
                            const std::vector<long double>& q,
                            const std::vector<std::size_t>& idx) {
  long double sp = 0.0L, sq = 0.0L;
  for (auto i : idx) {
    sp += p[i];
    sq += q[i];
  }
  long double acc = 0.0L;
  for (auto i : idx) {
    const long double a = p[i] / sp;
    const long double b = q[i] / sq;
    if (a > 0.0L) acc += a * std::log(a / b);
  }
  return acc;
}

inline long double full_kl(const Vec& zt, const Vec& zs, double t = 1.0) {
  const auto p = softmax_ld(zt, t);
  const auto q = softmax_ld(zs, t);
  std::vector<std::size_t> all(zt.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return group_kl(p, q, all);
}

/// Indices sorted by descending probability, ties by ascending index,
/// using an independent (value, index) pair sort.
inline std::vector<std::size_t> descending_order(const Vec& p) {
  std::vector<std::pair<double, std::size_t>> v;
  for (std::size_t i = 0; i < p.size(); ++i) v.emplace_back(-p[i], i);
  std::sort(v.begin(), v.end());
  std::vector<std::size_t> out;
  for (auto& e : v) out.push_back(e.second);
  return out;
}

/// Exhaustive argmin over k of |sum of the k largest probabilities - tau|.
/// Each candidate sum is recomputed from scratch; near-ties within `tol`
/// resolve to the smaller k. tau == 1 means every class.
inline std::size_t brute_select_k(const Vec& p, double tau, double tol = 1e-12) {
  const auto order = descending_order(p);
  if (tau == 1.0) return p.size();
  std::vector<double> dist(p.size());
  for (std::size_t k = 1; k <= p.size(); ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += p[order[j]];
    dist[k - 1] = std::abs(s - tau);
  }
  const double best = *std::min_element(dist.begin(), dist.end());
  for (std::size_t k = 1; k <= p.size(); ++k) {
    if (dist[k - 1] <= best + tol) return k;
  }
  return p.size();
}

struct GroupedLoss {
  long double primary = 0.0L;
  long double secondary = 0.0L;
  long double binary = 0.0L;
  long double p_phi_t = 1.0L;
  long double p_psi_t = 0.0L;
};

/// Grouped KL terms for an explicit primary index set.
inline GroupedLoss grouped_terms(const Vec& zt, const Vec& zs,
                                 const std::vector<std::size_t>& phi,
                                 double t = 1.0) {
  const auto p = softmax_ld(zt, t);
  const auto q = softmax_ld(zs, t);
  std::vector<bool> in(zt.size(), false);
  for (auto i : phi) in[i] = true;
  std::vector<std::size_t> psi;
  for (std::size_t i = 0; i < zt.size(); ++i) {
    if (!in[i]) psi.push_back(i);
  }
  GroupedLoss g;
  g.primary = group_kl(p, q, phi);
  if (psi.empty()) return g;
  g.secondary = group_kl(p, q, psi);
  long double pt = 0.0L, ps = 0.0L;
  for (auto i : phi) {
    pt += p[i];
    ps += q[i];
  }
  g.p_phi_t = pt;
  g.p_psi_t = 1.0L - pt;
  g.binary = pt * std::log(pt / ps) + (1.0L - pt) * std::log((1.0L - pt) / (1.0L - ps));
  return g;
}

/// Primary set of the student's top-k, k chosen by brute_select_k.
inline std::vector<std::size_t> student_phi(const Vec& zs, double tau, double t = 1.0) {
  const auto p = softmax(zs, t);
  const auto order = descending_order(p);
  const auto k = brute_select_k(p, tau);
  return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)};
}

/// Central differences of f at x with step h.
inline Vec central_diff(const std::function<double(const Vec&)>& f, Vec x,
                        double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max |a - n| / max(max |n|, floor): error relative to the gradient scale.
inline double max_rel_error(const Vec& analytic, const Vec& numeric,
                            double floor = 1e-8) {
  double err = 0.0, scale = floor;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    err = std::max(err, std::abs(analytic[i] - numeric[i]));
    scale = std::max(scale, std::abs(numeric[i]));
  }
  return err / scale;
}

inline Vec random_logits(std::mt19937_64& rng, std::size_t c, double spread) {
  std::normal_distribution<double> n(0.0, spread);
  Vec z(c);
  for (auto& v : z) v = n(rng);
  return z;
}

/// Random probability vector; `kind` varies the shape (flat, peaked,
/// with exact ties, with zeros).
inline Vec random_probs(std::mt19937_64& rng, std::size_t c, int kind) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec p(c);
  for (auto& v : p) v = u(rng);
  if (kind == 1) {
    for (auto& v : p) v = std::pow(v, 8.0);
  } else if (kind == 2) {
    for (auto& v : p) v = std::round(v * 4.0) + 1.0;
  } else if (kind == 3) {
    for (auto& v : p) v = v < 0.3 ? 0.0 : v;
    if (std::all_of(p.begin(), p.end(), [](double v) { return v == 0.0; })) p[0] = 1.0;
  }
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= s;
  return p;
}

/// Fold-wise threshold selection by exhaustive sweep: for each fold the
/// threshold (a similarity of the other folds, or +inf) with the best
/// accuracy on the other folds, smallest on ties, is applied to that fold.
inline double brute_verify_accuracy(const Vec& sims, const std::vector<bool>& same,
                                    const std::vector<int>& folds, int num_folds) {
  double total = 0.0;
  for (int f = 0; f < num_folds; ++f) {
    Vec cands{std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < sims.size(); ++i) {
      if (folds[i] != f) cands.push_back(sims[i]);
    }
    std::sort(cands.begin(), cands.end());
    double best_t = cands.back();
    long best_hits = -1;
    for (double t : cands) {
      long hits = 0;
      for (std::size_t i = 0; i < sims.size(); ++i) {
        if (folds[i] != f && (sims[i] >= t) == same[i]) ++hits;
      }
      if (hits > best_hits) {
        best_hits = hits;
        best_t = t;
      }
    }
    long hits = 0, n = 0;
    for (std::size_t i = 0; i < sims.size(); ++i) {
      if (folds[i] != f) continue;
      ++n;
      if ((sims[i] >= best_t) == same[i]) ++hits;
    }
    total += static_cast<double>(hits) / static_cast<double>(n);
  }
  return total / num_folds;
}

}  // namespace oracle
