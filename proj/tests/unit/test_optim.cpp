// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "gkd/optim.hpp"

using namespace gkd;

namespace {

struct Params {
  std::vector<std::vector<double>> tensors;
  std::vector<std::span<double>> views() {
    std::vector<std::span<double>> v;
    for (auto& t : tensors) v.emplace_back(t);
    return v;
  }
};

std::vector<std::span<const double>> const_views(const std::vector<std::vector<double>>& g) {
  std::vector<std::span<const double>> v;
  for (auto& t : g) v.emplace_back(t);
  return v;
}

SGDConfig plain(double lr, double momentum, double wd) {
  SGDConfig c;
  c.lr0 = lr;
  c.momentum = momentum;
  c.weight_decay = wd;
  c.milestones.clear();
  return c;
}

}  // namespace

TEST_CASE("lr schedule") {
  const SGDConfig cfg;
  CHECK(lr_at(cfg, 0) == 0.1);
  CHECK(std::abs(lr_at(cfg, 9) - 0.1) < 1e-18);
  CHECK(std::abs(lr_at(cfg, 10) - 0.01) < 1e-17);
  CHECK(std::abs(lr_at(cfg, 18) - 0.001) < 1e-18);
  CHECK(std::abs(lr_at(cfg, 24) - 1e-4) < 1e-19);
  for (int e = 0; e < 60; ++e) CHECK(lr_at(cfg, e + 1) <= lr_at(cfg, e));
  CHECK_THROWS(lr_at(cfg, -1));
}

TEST_CASE("momentum 0 and no decay is plain gradient descent") {
  Params p{{{1.0, -2.0, 3.0}, {0.5}}};
  const std::vector<std::vector<double>> g{{0.1, 0.2, -0.3}, {4.0}};
  SGDState st;
  sgd_step(p.views(), const_views(g), st, plain(0.5, 0.0, 0.0), 0);
  const std::vector<double> expected{1.0 - 0.05, -2.0 - 0.1, 3.0 + 0.15};
  for (int i = 0; i < 3; ++i) CHECK(std::abs(p.tensors[0][i] - expected[i]) < 1e-15);
  CHECK(std::abs(p.tensors[1][0] - (0.5 - 2.0)) < 1e-15);
}

TEST_CASE("zero gradient: velocity decays geometrically") {
  const double lr = 0.1, mu = 0.9;
  Params p{{{2.0}}};
  SGDState st;
  sgd_step(p.views(), const_views({{1.0}}), st, plain(lr, mu, 0.0), 0);
  // After the kick v0 = 1 and w = 2 - lr.
  double w_expected = 2.0 - lr;
  for (int n = 1; n <= 50; ++n) {
    sgd_step(p.views(), const_views({{0.0}}), st, plain(lr, mu, 0.0), 0);
    CHECK(std::abs(st.velocity[0][0] - std::pow(mu, n)) < 1e-14);
    // Closed form of the momentum tail: w_n = w_0 - lr * sum_{i=1..n} mu^i.
    w_expected = 2.0 - lr - lr * mu * (1.0 - std::pow(mu, n)) / (1.0 - mu);
    CHECK(std::abs(p.tensors[0][0] - w_expected) < 1e-13);
  }
  // The remaining distance to the limit is the untaken tail lr * mu^51 / (1 - mu).
  const double limit = 2.0 - lr - lr * mu / (1.0 - mu);
  CHECK(std::abs((p.tensors[0][0] - limit) - lr * std::pow(mu, 51) / (1.0 - mu)) < 1e-13);
}

TEST_CASE("quadratic bowl follows the scalar momentum recurrence") {
  const double lr = 0.1, mu = 0.9;
  Params p{{{1.0, -0.5}}};
  SGDState st;
  double w[2] = {1.0, -0.5}, v[2] = {0.0, 0.0};
  int settled = -1;
  for (int n = 1; n <= 400; ++n) {
    const std::vector<std::vector<double>> g{{p.tensors[0][0], p.tensors[0][1]}};
    sgd_step(p.views(), const_views(g), st, plain(lr, mu, 0.0), 0);
    for (int i = 0; i < 2; ++i) {
      v[i] = mu * v[i] + w[i];
      w[i] -= lr * v[i];
      CHECK(std::abs(p.tensors[0][i] - w[i]) <= 1e-15);
    }
    const bool small = std::abs(w[0]) < 1e-6 && std::abs(w[1]) < 1e-6;
    if (!small) settled = -1;
    else if (settled < 0) settled = n;
  }
  // Spectral radius sqrt(mu) ~ 0.949 sets the pace: from |w| = 1 the
  // iterate stays below 1e-6 from step 257 on.
  CHECK(settled == 257);
  CHECK(std::abs(p.tensors[0][0]) < 1e-8);
}

TEST_CASE("weight decay with zero gradient shrinks the parameters every step") {
  Params p{{{1.0, -2.0, 0.5}}};
  SGDState st;
  const SGDConfig cfg;
  double prev = 1.0 + 4.0 + 0.25;
  for (int n = 0; n < 100; ++n) {
    sgd_step(p.views(), const_views({{0.0, 0.0, 0.0}}), st, cfg, n % 30);
    double norm = 0.0;
    for (double x : p.tensors[0]) norm += x * x;
    CHECK(norm < prev);
    prev = norm;
  }
}

TEST_CASE("sgd_step is deterministic and validates shapes") {
  std::mt19937_64 rng(71);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> init{{}, {}}, g{{}, {}};
  for (int i = 0; i < 10; ++i) {
    init[0].push_back(n(rng));
    g[0].push_back(n(rng));
  }
  init[1] = {n(rng)};
  g[1] = {n(rng)};
  Params a{init}, b{init};
  SGDState sa, sb;
  for (int e = 0; e < 30; ++e) {
    sgd_step(a.views(), const_views(g), sa, SGDConfig{}, e);
    sgd_step(b.views(), const_views(g), sb, SGDConfig{}, e);
  }
  CHECK(a.tensors == b.tensors);

  Params bad{{{1.0, 2.0}}};
  SGDState s;
  CHECK_THROWS(sgd_step(bad.views(), const_views({{1.0}}), s, SGDConfig{}, 0));
  CHECK_THROWS(sgd_step(bad.views(), const_views({{1.0, 2.0}, {3.0}}), s, SGDConfig{}, 0));
  SGDConfig neg;
  neg.lr0 = -1.0;
  CHECK_THROWS(neg.validate());
  SGDConfig unsorted;
  unsorted.milestones = {18, 10};
  CHECK_THROWS(unsorted.validate());
}
