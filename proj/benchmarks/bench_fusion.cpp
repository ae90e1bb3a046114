#include <benchmark/benchmark.h>

#include <random>
#include <set>

#include "canopy/pseudolabel.hpp"

using namespace canopy;

namespace {

struct Workload {
  std::vector<pseudolabel::Candidate> candidates;
  std::vector<pseudolabel::Parent> parents;
  cohab::ScaledPrior prior;
};

Workload make_workload(std::size_t n_candidates, std::size_t n_parents) {
  constexpr int kClasses = 7;
  constexpr int kSide = 256;
  std::mt19937_64 rng(11);
  std::exponential_distribution<double> e(1.0);
  Workload w;
  for (int i = 0; i < kClasses; ++i) w.prior.species.push_back("s" + std::to_string(i));
  w.prior = cohab::ScaledPrior::uniform(w.prior.species);
  for (std::size_t i = 0; i < n_candidates; ++i) {
    pseudolabel::Candidate c{static_cast<int>(rng() % kSide), static_cast<int>(rng() % kSide), {}};
    double s = 0;
    for (int k = 0; k < kClasses; ++k) s += c.probs.emplace_back(k == 0 ? 20 * e(rng) : e(rng));
    for (auto& p : c.probs) p /= s;
    w.candidates.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < n_parents; ++i)
    w.parents.push_back({static_cast<int>(rng() % kSide), static_cast<int>(rng() % kSide),
                         static_cast<int>(rng() % kClasses)});
  return w;
}

void BM_AugmentedSet(benchmark::State& state) {
  const auto w = make_workload(static_cast<std::size_t>(state.range(0)), 400);
  pseudolabel::FusionConfig cfg;
  cfg.tau = 0.5;
  pseudolabel::AugmentOptions opt;
  opt.width = opt.height = 256;
  opt.shuffle_seed = 1;
  opt.threads = static_cast<int>(state.range(1));
  const std::set<pseudolabel::Coord> none;
  for (auto _ : state)
    benchmark::DoNotOptimize(pseudolabel::build_augmented_set(w.candidates, w.parents, w.prior, cfg, none, opt));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AugmentedSet)->Args({1000, 1})->Args({10000, 1})->Args({10000, 4})->UseRealTime();

}  // namespace
