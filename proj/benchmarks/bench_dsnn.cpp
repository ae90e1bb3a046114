#include <benchmark/benchmark.h>

#include <random>

#include "canopy/dsnn.hpp"

using namespace canopy;

namespace {

dsnn::Batch<float> random_batch(std::size_t n, int hsi, int als, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0, 1);
  dsnn::Batch<float> b;
  b.hsi = {n, static_cast<std::size_t>(hsi), {}};
  b.als = {n, static_cast<std::size_t>(als), {}};
  for (std::size_t i = 0; i < n * hsi; ++i) b.hsi.data.push_back(g(rng));
  for (std::size_t i = 0; i < n * als; ++i) b.als.data.push_back(g(rng));
  return b;
}

void BM_TrainStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto model = dsnn::init_model<float>(dsnn::NetworkConfig::standard(20, 6, 7), 1);
  const auto batch = random_batch(n, 20, 6, 2);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 7);
  std::mt19937_64 rng(3);
  dsnn::Gradients<float> grads;
  for (auto _ : state) {
    benchmark::DoNotOptimize(dsnn::loss_and_gradients(model, batch, labels, grads, rng));
    dsnn::adam_step(model, grads, 1e-4);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(512);

void BM_PredictProba(benchmark::State& state) {
  const auto model = dsnn::init_model<float>(dsnn::NetworkConfig::standard(20, 6, 7), 1);
  const auto pixels = random_batch(4096, 20, 6, 4);
  const int threads = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(dsnn::predict_proba(model, pixels, threads));
  state.SetItemsProcessed(state.iterations() * 4096);
}
BENCHMARK(BM_PredictProba)->Arg(1)->Arg(4)->UseRealTime();

}  // namespace
