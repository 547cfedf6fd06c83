// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "gkd/grouping.hpp"
#include "gkd/kdloss.hpp"
#include "gkd/model.hpp"

namespace {

std::vector<double> logits(std::mt19937_64& rng, std::size_t c, double spread) {
  std::normal_distribution<double> n(0.0, spread);
  std::vector<double> z(c);
  for (auto& v : z) v = n(rng);
  return z;
}

void BM_Decompose(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto zt = logits(rng, c, 3.0);
  const auto zs = logits(rng, c, 3.0);
  for (auto _ : state) {
    const auto part = gkd::build_partition(zs, 0.93);
    benchmark::DoNotOptimize(gkd::decompose(zt, zs, part));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Decompose)->RangeMultiplier(8)->Range(8, 4096);

void BM_GkdBackward(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto zt = logits(rng, c, 3.0);
  const auto zs = logits(rng, c, 3.0);
  const gkd::KDConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(gkd::gkd_backward(zt, zs, cfg));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_GkdBackward)->RangeMultiplier(8)->Range(8, 4096);

// Fused loss-and-gradient path used by training.
void BM_KdForwardBackward(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto zt = logits(rng, c, 20.0);
  const auto zs = logits(rng, c, 20.0);
  const gkd::KDConfig cfg;
  std::vector<double> grad(c);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        gkd::kd_forward_backward(gkd::KDVariant::primary_binary, zt, zs, cfg, grad));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_KdForwardBackward)->RangeMultiplier(8)->Range(8, 4096);

void BM_TrainingStep(benchmark::State& state) {
  const auto classes = static_cast<std::size_t>(state.range(0));
  const gkd::HeadSpec head{classes, gkd::HeadKind::arcface, 64.0, 0.5};
  auto teacher = gkd::init_model(gkd::MLPSpec{64, {512, 512}, 128}, head, 1);
  teacher.frozen = true;
  const auto student = gkd::init_model(gkd::MLPSpec{64, {64}, 128}, head, 2);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  gkd::Batch batch;
  batch.features.resize(128, 64);
  for (Eigen::Index i = 0; i < batch.features.size(); ++i) batch.features.data()[i] = n(rng);
  for (std::size_t i = 0; i < 128; ++i) batch.labels.push_back(i % classes);
  const auto zt = gkd::kd_logits(teacher, batch.features, batch.labels,
                                 gkd::KDLogitsSource::pre_margin);
  const gkd::LossSetup setup;
  for (auto _ : state) benchmark::DoNotOptimize(gkd::total_loss_step(zt, student, batch, setup));
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_TrainingStep)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
