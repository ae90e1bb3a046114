#include <benchmark/benchmark.h>

#include "canopy/synthscene.hpp"
#include "canopy/treetop.hpp"

using namespace canopy;

namespace {

const geodata::RasterCube& benchmark_chm() {
  static const auto scene = synth::generate_scene(synth::benchmark_scene_config(7));
  return scene.chm;
}

void BM_Preprocess(benchmark::State& state) {
  treetop::TreetopConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(treetop::preprocess_chm(benchmark_chm(), cfg));
}
BENCHMARK(BM_Preprocess);

void BM_Detect(benchmark::State& state) {
  treetop::TreetopConfig cfg;
  cfg.window = static_cast<int>(state.range(0));
  const auto smooth = treetop::preprocess_chm(benchmark_chm(), cfg);
  for (auto _ : state) benchmark::DoNotOptimize(treetop::detect_treetops(smooth, cfg));
}
BENCHMARK(BM_Detect)->Arg(3)->Arg(5)->Arg(15);

}  // namespace
