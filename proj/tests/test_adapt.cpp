#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "casp/adapt.hpp"
#include "casp/errors.hpp"
#include "casp/jsonio.hpp"
#include "casp/synth.hpp"
#include "test_util.hpp"

using namespace casp;

namespace {

EncoderConfig adapt_encoder() {
  EncoderConfig cfg;
  cfg.fusion = Fusion::early;
  cfg.model_dim = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.feedforward_dim = 32;
  return cfg;
}

ShiftConfig adapt_task(uint64_t seed) {
  ShiftConfig cfg;
  cfg.name = "adapt";
  cfg.n_source = 96;
  cfg.n_target = 48;
  cfg.n_valid = 24;
  cfg.n_test = 24;
  cfg.seq_len = 4;
  cfg.feat_dims = {6, 8, 10};
  cfg.rotation = {0.6, 0.6, 0.6};
  cfg.seed = seed;
  return cfg;
}

bool params_identical(const std::vector<Parameter>& a, const std::vector<Parameter>& b) {
  for (size_t i = 0; i < a.size(); ++i)
    for (int64_t j = 0; j < a[i].value.numel(); ++j)
      if (a[i].value[j] != b[i].value[j]) return false;
  return true;
}

}  // namespace

TEST_SUITE("adapt") {

TEST_CASE("adapt config validation") {
  AdaptConfig cfg;
  CHECK_NOTHROW(validate_config(cfg));
  cfg.n_drop = 3;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = AdaptConfig{};
  cfg.n_drop = 0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = AdaptConfig{};
  cfg.tau = 0.0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = AdaptConfig{};
  cfg.epochs = 0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = AdaptConfig{};
  cfg.snapshot_interval = 0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
}

TEST_CASE("drop_modality hits each modality about a third of the time") {
  Rng data_rng(70);
  auto s = testutil::make_sample("x", {2, 2, 2}, {2, 2, 2}, data_rng);
  const auto batch = build_batch({&s});

  Rng rng(71);
  std::array<int64_t, 3> counts = {0, 0, 0};
  const int64_t trials = 10000;
  for (int64_t k = 0; k < trials; ++k) {
    const auto dropped = drop_modality(batch, 1, 0.0, rng);
    int hits = 0;
    for (size_t m = 0; m < 3; ++m) {
      bool all_fill = true;
      for (int64_t i = 0; i < dropped.features[m].numel(); ++i)
        all_fill &= dropped.features[m][i] == 0.0;
      if (all_fill) {
        ++counts[m];
        ++hits;
      }
    }
    CHECK(hits == 1);  // exactly one modality dropped per sample
  }
  for (int64_t c : counts)
    CHECK(std::abs(static_cast<double>(c) / trials - 1.0 / 3.0) < 0.02);
}

TEST_CASE("n_drop=2 keeps exactly one surviving modality") {
  Rng data_rng(72);
  auto s = testutil::make_sample("x", {3, 3, 3}, {2, 2, 2}, data_rng);
  const auto batch = build_batch({&s});
  Rng rng(73);
  for (int k = 0; k < 200; ++k) {
    const auto dropped = drop_modality(batch, 2, 0.0, rng);
    int survivors = 0;
    for (size_t m = 0; m < 3; ++m) {
      bool all_fill = true;
      for (int64_t i = 0; i < dropped.features[m].numel(); ++i)
        all_fill &= dropped.features[m][i] == 0.0;
      if (!all_fill) ++survivors;
    }
    CHECK(survivors == 1);
  }
}

TEST_CASE("drop fills only valid steps and never touches masks") {
  Rng data_rng(74);
  auto a = testutil::make_sample("a", {2, 2, 2}, {1, 2, 3}, data_rng);
  auto b = testutil::make_sample("b", {2, 2, 2}, {3, 1, 2}, data_rng);
  const auto batch = build_batch({&a, &b});

  Rng rng(75);
  const double fill = 7.5;
  const auto dropped = drop_modality(batch, 2, fill, rng);

  for (size_t m = 0; m < 3; ++m) {
    CHECK(dropped.masks[m].numel() == batch.masks[m].numel());
    for (int64_t i = 0; i < batch.masks[m].numel(); ++i)
      CHECK(dropped.masks[m][i] == batch.masks[m][i]);

    for (int64_t i = 0; i < batch.size; ++i)
      for (int64_t t = 0; t < batch.features[m].dim(1); ++t)
        for (int64_t j = 0; j < batch.features[m].dim(2); ++j) {
          const double got = dropped.features[m].at(i, t, j);
          if (batch.masks[m].at(i, t) == 0.0) {
            CHECK(got == batch.features[m].at(i, t, j));  // padding untouched
          } else {
            const bool changed = got != batch.features[m].at(i, t, j);
            if (changed) CHECK(got == fill);
          }
        }
  }
}

TEST_CASE("dropping a modality already at the fill value is a fixed point") {
  MultimodalSample s;
  s.id = "flat";
  for (Modality m : kModalities) {
    auto& f = s.feat(m);
    f.seq_len = 2;
    f.feat_dim = 2;
    f.values.assign(4, 0.0f);
  }
  const auto batch = build_batch({&s});
  Rng rng(76);
  const auto dropped = drop_modality(batch, 1, 0.0, rng);
  for (size_t m = 0; m < 3; ++m)
    for (int64_t i = 0; i < batch.features[m].numel(); ++i)
      CHECK(dropped.features[m][i] == batch.features[m][i]);
}

TEST_CASE("drop_modality is deterministic in the rng state") {
  Rng data_rng(77);
  auto s = testutil::make_sample("x", {2, 2, 2}, {2, 2, 2}, data_rng);
  const auto batch = build_batch({&s});
  Rng r1(78), r2(78);
  const auto d1 = drop_modality(batch, 1, 0.0, r1);
  const auto d2 = drop_modality(batch, 1, 0.0, r2);
  for (size_t m = 0; m < 3; ++m)
    for (int64_t i = 0; i < d1.features[m].numel(); ++i)
      CHECK(d1.features[m][i] == d2.features[m][i]);
}

TEST_CASE("snapshot matrix has floor(E/M)+1 rows labeled with their epochs") {
  const auto [source, target] = generate_task(adapt_task(80));
  const auto model = init_model(adapt_encoder(), source.feat_dims, 81);

  AdaptConfig cfg;
  cfg.epochs = 4;
  cfg.snapshot_interval = 2;
  cfg.seed = 82;
  const auto result = adapt(model, target, cfg);

  CHECK(result.snapshots.epochs == std::vector<int64_t>{0, 2, 4});
  CHECK(result.snapshots.preds.dim(0) == 3);
  CHECK(result.snapshots.preds.dim(1) ==
        static_cast<int64_t>(target.split("train").size()));
  CHECK(result.epoch_mean_loss.size() == 4);

  // ids follow the adaptation split order
  const auto& split = target.split("train");
  REQUIRE(result.snapshots.ids.size() == split.size());
  for (size_t i = 0; i < split.size(); ++i) CHECK(result.snapshots.ids[i] == split[i].id);

  // row 0 is the pristine source model
  const auto base = snapshot_predictions(model, sample_ptrs(split), cfg.batch_size);
  for (size_t i = 0; i < base.size(); ++i)
    CHECK(result.snapshots.preds.at(0, static_cast<int64_t>(i)) == base[i]);
}

TEST_CASE("zero learning rate leaves the model and every snapshot row unchanged") {
  const auto [source, target] = generate_task(adapt_task(83));
  const auto model = init_model(adapt_encoder(), source.feat_dims, 84);

  AdaptConfig cfg;
  cfg.epochs = 4;
  cfg.snapshot_interval = 2;
  cfg.learning_rate = 0.0;
  const auto result = adapt(model, target, cfg);

  CHECK(params_identical(model.params, result.model.params));
  const auto& preds = result.snapshots.preds;
  for (int64_t r = 1; r < preds.dim(0); ++r)
    for (int64_t c = 0; c < preds.dim(1); ++c) CHECK(preds.at(r, c) == preds.at(0, c));
}

TEST_CASE("adaptation updates norm parameters only") {
  const auto [source, target] = generate_task(adapt_task(85));
  const auto model = init_model(adapt_encoder(), source.feat_dims, 86);

  AdaptConfig cfg;
  cfg.epochs = 2;
  cfg.snapshot_interval = 1;
  const auto result = adapt(model, target, cfg);

  const auto [norm_idx, other_idx] = partition_parameters(model);
  for (int i : other_idx) {
    const auto& a = model.params[static_cast<size_t>(i)].value;
    const auto& b = result.model.params[static_cast<size_t>(i)].value;
    for (int64_t j = 0; j < a.numel(); ++j) CHECK(a[j] == b[j]);
  }
  bool changed = false;
  for (int i : norm_idx) {
    const auto& a = model.params[static_cast<size_t>(i)].value;
    const auto& b = result.model.params[static_cast<size_t>(i)].value;
    for (int64_t j = 0; j < a.numel(); ++j) changed |= a[j] != b[j];
  }
  CHECK(changed);
}

TEST_CASE("adaptation never reads hidden labels") {
  const auto [source, target] = generate_task(adapt_task(87));
  const auto model = init_model(adapt_encoder(), source.feat_dims, 88);

  // same features, different hidden labels: the outcome must be identical
  DomainDataset tweaked = target;
  for (auto& s : tweaked.split("train")) s.set_label(s.label() + 1.0, true);

  AdaptConfig cfg;
  cfg.epochs = 2;
  cfg.snapshot_interval = 2;
  const auto r1 = adapt(model, target, cfg);
  const auto r2 = adapt(model, tweaked, cfg);
  CHECK(params_identical(r1.model.params, r2.model.params));
}

TEST_CASE("adaptation is deterministic in the seed") {
  const auto [source, target] = generate_task(adapt_task(89));
  const auto model = init_model(adapt_encoder(), source.feat_dims, 90);
  AdaptConfig cfg;
  cfg.epochs = 2;
  cfg.snapshot_interval = 1;
  cfg.seed = 91;
  const auto r1 = adapt(model, target, cfg);
  const auto r2 = adapt(model, target, cfg);
  CHECK(params_identical(r1.model.params, r2.model.params));
  for (int64_t i = 0; i < r1.snapshots.preds.numel(); ++i)
    CHECK(r1.snapshots.preds[i] == r2.snapshots.preds[i]);
}

TEST_CASE("contrastive loss does not increase from first to last epoch") {
  // median over 5 seeds of (first - last); desk-scale sanity for the training signal
  std::vector<double> deltas;
  for (uint64_t seed : {92, 93, 94, 95, 96}) {
    const auto [source, target] = generate_task(adapt_task(seed));
    const auto model = init_model(adapt_encoder(), source.feat_dims, seed + 100);
    AdaptConfig cfg;
    cfg.epochs = 15;
    cfg.snapshot_interval = 15;
    cfg.seed = seed;
    const auto result = adapt(model, target, cfg);
    deltas.push_back(result.epoch_mean_loss.front() - result.epoch_mean_loss.back());
  }
  std::sort(deltas.begin(), deltas.end());
  CHECK(deltas[2] >= 0.0);
}

TEST_CASE("adapt refuses fewer than two samples") {
  const auto [source, target] = generate_task(adapt_task(97));
  const auto model = init_model(adapt_encoder(), source.feat_dims, 98);
  DomainDataset tiny = target;
  tiny.split("train").resize(1);
  AdaptConfig cfg;
  CHECK_THROWS_WITH_AS(adapt(model, tiny, cfg), doctest::Contains("at least 2"),
                       ValidationError);
}

TEST_CASE("snapshots survive the f32 round trip") {
  SnapshotMatrix snap;
  snap.epochs = {0, 3, 6};
  snap.ids = {"a", "b"};
  Rng rng(99);
  snap.preds = testutil::random_tensor({3, 2}, rng);

  testutil::TempDir tmp("adapt_snap");
  const auto path = tmp.path() / "snapshots.json";
  save_snapshots(snap, path);
  const auto back = load_snapshots(path);

  CHECK(back.epochs == snap.epochs);
  CHECK(back.ids == snap.ids);
  REQUIRE(back.preds.shape() == snap.preds.shape());
  for (int64_t i = 0; i < snap.preds.numel(); ++i)
    CHECK(back.preds[i] == static_cast<double>(static_cast<float>(snap.preds[i])));

  // corrupt manifest -> io error; truncated blob -> validation error
  io::write_text_file(path, "{ nope");
  CHECK_THROWS_AS(load_snapshots(path), IoError);
  save_snapshots(snap, path);
  std::filesystem::resize_file(tmp.path() / "snapshots.f32", 4);
  CHECK_THROWS_AS(load_snapshots(path), ValidationError);
}

}  // TEST_SUITE
