// Encoder throughput: forward only (inference path) and forward + backward
// (training path), both fusion layouts.

#include <benchmark/benchmark.h>

#include <vector>

#include "casp/autodiff.hpp"
#include "casp/backbones.hpp"
#include "casp/batch.hpp"
#include "casp/data_model.hpp"
#include "casp/rng.hpp"

namespace {

using namespace casp;

constexpr std::array<int64_t, 3> kDims = {12, 16, 20};

std::vector<MultimodalSample> make_samples(int64_t n, int64_t seq_len, uint64_t seed) {
  Rng rng(seed);
  std::vector<MultimodalSample> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    auto& s = out[static_cast<size_t>(i)];
    s.id = "b" + std::to_string(i);
    for (Modality m : kModalities) {
      auto& f = s.feat(m);
      f.feat_dim = kDims[static_cast<size_t>(m)];
      f.seq_len = 1 + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(seq_len)));
      f.values.resize(static_cast<size_t>(f.seq_len * f.feat_dim));
      for (auto& v : f.values) v = static_cast<float>(rng.normal());
    }
  }
  return out;
}

Batch batch_of(const std::vector<MultimodalSample>& samples) {
  std::vector<const MultimodalSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return build_batch(ptrs);
}

FusionModel model_for(Fusion fusion) {
  EncoderConfig cfg;
  cfg.fusion = fusion;
  cfg.model_dim = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.feedforward_dim = 64;
  return init_model(cfg, kDims, 1);
}

void BM_EncodeForward(benchmark::State& state) {
  const Fusion fusion = state.range(1) == 0 ? Fusion::early : Fusion::late;
  const FusionModel model = model_for(fusion);
  const auto samples = make_samples(state.range(0), 8, 2);
  const Batch batch = batch_of(samples);
  for (auto _ : state) {
    Tensor h = encode(model, batch);
    benchmark::DoNotOptimize(h.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ForwardBackward(benchmark::State& state) {
  const Fusion fusion = state.range(1) == 0 ? Fusion::early : Fusion::late;
  const FusionModel model = model_for(fusion);
  const auto samples = make_samples(state.range(0), 8, 2);
  const Batch batch = batch_of(samples);
  const Tensor targets({state.range(0)});
  for (auto _ : state) {
    Forward fw = forward_graph(model, batch, GradScope::all);
    const int loss = ad::l1_loss(fw.tape, fw.yhat, targets);
    fw.tape.backward(loss);
    benchmark::DoNotOptimize(fw.tape.grad(fw.param_ids[0]).data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

BENCHMARK(BM_EncodeForward)->Args({24, 0})->Args({24, 1})->Args({96, 0});
BENCHMARK(BM_ForwardBackward)->Args({24, 0})->Args({24, 1});

}  // namespace
