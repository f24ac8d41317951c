// Stability scoring and nearest-rank selection over large snapshot matrices.

#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "casp/adapt.hpp"
#include "casp/pseudo_labeling.hpp"
#include "casp/rng.hpp"

namespace {

using namespace casp;

SnapshotMatrix make_snapshots(int64_t n_samples, int64_t n_checkpoints, uint64_t seed) {
  Rng rng(seed);
  SnapshotMatrix snap;
  snap.preds = Tensor({n_checkpoints, n_samples});
  for (int64_t i = 0; i < snap.preds.numel(); ++i) snap.preds[i] = rng.normal();
  for (int64_t r = 0; r < n_checkpoints; ++r) snap.epochs.push_back(r * 3);
  for (int64_t i = 0; i < n_samples; ++i) snap.ids.push_back("s" + std::to_string(i));
  return snap;
}

void BM_Stability(benchmark::State& state) {
  const auto snap = make_snapshots(state.range(0), 6, 4);
  for (auto _ : state) {
    auto s = stability(snap);
    benchmark::DoNotOptimize(s.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SelectThreshold(benchmark::State& state) {
  Rng rng(5);
  std::vector<double> s(static_cast<size_t>(state.range(0)));
  for (auto& x : s) x = rng.uniform(0.0, 1.0);
  for (auto _ : state) {
    double thr = select_threshold(s, 95.0);
    benchmark::DoNotOptimize(thr);
  }
}

BENCHMARK(BM_Stability)->Arg(240)->Arg(4096);
BENCHMARK(BM_SelectThreshold)->Arg(240)->Arg(65536);

}  // namespace

BENCHMARK_MAIN();
