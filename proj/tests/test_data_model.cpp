#include <algorithm>

#include <doctest.h>

#include "casp/batch.hpp"
#include "casp/data_model.hpp"
#include "casp/errors.hpp"
#include "test_util.hpp"

using namespace casp;

TEST_SUITE("data_model") {

TEST_CASE("modality names round trip and the set is closed") {
  CHECK(std::string(to_string(Modality::audio)) == "audio");
  CHECK(std::string(to_string(Modality::video)) == "video");
  CHECK(std::string(to_string(Modality::text)) == "text");
  CHECK(modality_from_string("text") == Modality::text);
  CHECK_THROWS_AS(modality_from_string("Audio"), ValidationError);  // case-sensitive
  CHECK_THROWS_AS(modality_from_string("image"), ValidationError);
}

TEST_CASE("validate_dataset accepts a clean dataset") {
  const auto ds = testutil::make_dataset(4, 2, 2, {3, 4, 5}, 1);
  CHECK(validate_dataset(ds).empty());
}

TEST_CASE("validate_dataset names the sample and modality on missing features") {
  auto ds = testutil::make_dataset(4, 2, 2, {3, 4, 5}, 2);
  auto& s = ds.split("train")[1];
  s.feat(Modality::video).seq_len = 0;
  s.feat(Modality::video).values.clear();
  const auto violations = validate_dataset(ds);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].find(s.id) != std::string::npos);
  CHECK(violations[0].find("video") != std::string::npos);
}

TEST_CASE("validate_dataset flags out-of-range labels") {
  auto ds = testutil::make_dataset(3, 1, 1, {2, 2, 2}, 3);
  ds.split("train")[0].set_label(4.2);
  const auto violations = validate_dataset(ds);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].find("4.2") != std::string::npos);
}

TEST_CASE("validate_dataset requires a fully labeled test split") {
  auto ds = testutil::make_dataset(3, 1, 2, {2, 2, 2}, 4);
  ds.split("test")[1].clear_label();
  const auto violations = validate_dataset(ds);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].find("test") != std::string::npos);
}

TEST_CASE("validate_dataset is side-effect free and idempotent") {
  auto ds = testutil::make_dataset(3, 1, 1, {2, 2, 2}, 5);
  ds.split("train")[0].set_label(7.0);
  const auto first = validate_dataset(ds);
  const auto second = validate_dataset(ds);
  CHECK(first == second);
}

TEST_CASE("hidden labels are readable only while no guard is armed") {
  MultimodalSample s;
  s.set_label(1.5, true);
  CHECK(s.label() == 1.5);
  {
    HiddenLabelGuard guard;
    CHECK(HiddenLabelGuard::armed());
    CHECK_THROWS_AS(s.label(), GuardViolation);
    {
      HiddenLabelGuard inner;  // guards nest
      CHECK_THROWS_AS(s.label(), GuardViolation);
    }
    CHECK_THROWS_AS(s.label(), GuardViolation);
  }
  CHECK_FALSE(HiddenLabelGuard::armed());
  CHECK(s.label() == 1.5);

  MultimodalSample visible;
  visible.set_label(-0.5);
  HiddenLabelGuard guard;
  CHECK(visible.label() == -0.5);  // guard only blocks hidden labels
}

TEST_CASE("reading an absent label throws") {
  MultimodalSample s;
  CHECK_FALSE(s.has_label());
  CHECK_THROWS_AS(s.label(), ValidationError);
}

TEST_CASE("build_batch zero-pads and masks variable lengths") {
  Rng rng(6);
  auto a = testutil::make_sample("a", {2, 3, 4}, {1, 2, 3}, rng);
  auto b = testutil::make_sample("b", {2, 3, 4}, {3, 1, 2}, rng);
  const Batch batch = build_batch({&a, &b});

  CHECK(batch.size == 2);
  CHECK(batch.features[0].shape() == std::vector<int64_t>{2, 3, 2});
  CHECK(batch.features[1].shape() == std::vector<int64_t>{2, 2, 3});
  CHECK(batch.features[2].shape() == std::vector<int64_t>{2, 3, 4});
  CHECK(batch.ids == std::vector<std::string>{"a", "b"});

  // audio: a has 1 valid step, b has 3
  CHECK(batch.masks[0].at(0, 0) == 1.0);
  CHECK(batch.masks[0].at(0, 1) == 0.0);
  CHECK(batch.masks[0].at(0, 2) == 0.0);
  CHECK(batch.masks[0].at(1, 2) == 1.0);
  // padded steps are exactly zero
  CHECK(batch.features[0].at(0, 1, 0) == 0.0);
  CHECK(batch.features[0].at(0, 2, 1) == 0.0);
  // valid entries survive the f32 -> f64 upcast bit-exactly
  CHECK(batch.features[0].at(0, 0, 0) == static_cast<double>(a.feat(Modality::audio).at(0, 0)));
}

TEST_CASE("build_batch honors pad_to and rejects pad_to below the batch max") {
  Rng rng(7);
  auto a = testutil::make_sample("a", {2, 2, 2}, {2, 2, 2}, rng);
  const Batch padded = build_batch({&a}, {5, 0, 0});
  CHECK(padded.features[0].shape() == std::vector<int64_t>{1, 5, 2});
  CHECK(padded.masks[0].at(0, 4) == 0.0);
  CHECK_THROWS_AS(build_batch({&a}, {1, 0, 0}), ValidationError);
}

TEST_CASE("build_batch rejects mixed feat_dims") {
  Rng rng(8);
  auto a = testutil::make_sample("a", {2, 2, 2}, {1, 1, 1}, rng);
  auto b = testutil::make_sample("b", {3, 2, 2}, {1, 1, 1}, rng);
  CHECK_THROWS_AS(build_batch({&a, &b}), ValidationError);
}

TEST_CASE("make_batch_indices covers every index exactly once") {
  Rng rng(9);
  const auto batches = make_batch_indices(23, 5, &rng);
  std::vector<int64_t> seen;
  for (const auto& b : batches)
    for (int64_t i : b) seen.push_back(i);
  std::sort(seen.begin(), seen.end());
  REQUIRE(seen.size() == 23);
  for (int64_t i = 0; i < 23; ++i) CHECK(seen[static_cast<size_t>(i)] == i);
}

TEST_CASE("make_batch_indices folds a trailing singleton when min_last = 2") {
  const auto folded = make_batch_indices(25, 24, nullptr, 2);
  REQUIRE(folded.size() == 1);
  CHECK(folded[0].size() == 25);

  const auto kept = make_batch_indices(25, 24, nullptr, 1);
  REQUIRE(kept.size() == 2);
  CHECK(kept[1].size() == 1);

  // a lone sample cannot be folded anywhere
  const auto single = make_batch_indices(1, 24, nullptr, 2);
  REQUIRE(single.size() == 1);
  CHECK(single[0].size() == 1);
}

}  // TEST_SUITE
