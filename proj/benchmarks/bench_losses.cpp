// NT-Xent cost at adaptation batch sizes: scalar evaluation and the tape
// version with a full backward pass.

#include <benchmark/benchmark.h>

#include "casp/autodiff.hpp"
#include "casp/losses.hpp"
#include "casp/rng.hpp"

namespace {

using namespace casp;

ContrastiveBatch make_batch(int64_t k, int64_t d, uint64_t seed) {
  Rng rng(seed);
  ContrastiveBatch b;
  b.h = Tensor({k, d});
  b.h_aug = Tensor({k, d});
  for (int64_t i = 0; i < b.h.numel(); ++i) b.h[i] = rng.normal();
  for (int64_t i = 0; i < b.h_aug.numel(); ++i) b.h_aug[i] = rng.normal();
  b.tau = 0.5;
  return b;
}

void BM_NtxentValue(benchmark::State& state) {
  const auto b = make_batch(state.range(0), 32, 3);
  for (auto _ : state) {
    double v = ntxent_batch_value(b);
    benchmark::DoNotOptimize(v);
  }
}

void BM_NtxentBackward(benchmark::State& state) {
  const auto b = make_batch(state.range(0), 32, 3);
  for (auto _ : state) {
    ad::Tape tape;
    const int h = tape.leaf(b.h, true);
    const int ha = tape.leaf(b.h_aug, true);
    const int loss = ntxent_batch_loss(tape, h, ha, b.tau);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(h).data());
  }
}

BENCHMARK(BM_NtxentValue)->Arg(24)->Arg(96);
BENCHMARK(BM_NtxentBackward)->Arg(24)->Arg(96);

}  // namespace
