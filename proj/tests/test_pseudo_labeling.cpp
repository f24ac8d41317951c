#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <doctest.h>

#include "casp/errors.hpp"
#include "casp/jsonio.hpp"
#include "casp/pseudo_labeling.hpp"
#include "test_util.hpp"

using namespace casp;

namespace {

// Six-sample snapshot trajectory fixture: a matrix of predictions at epochs
// 0, 3, 6, 9, 12, 15 with two clearly stable rows (cases 1 and 4).
SnapshotMatrix trajectory_fixture() {
  SnapshotMatrix snap;
  snap.epochs = {0, 3, 6, 9, 12, 15};
  snap.ids = {"case1", "case2", "case3", "case4", "case5", "case6"};
  const std::vector<std::vector<double>> per_sample = {
      {-2.38, -2.39, -2.40, -2.41, -2.41, -2.42}, {0.83, 0.32, -0.17, 0.08, 1.02, 1.14},
      {2.12, 1.17, 0.85, 1.25, -0.01, 0.18},      {-1.21, -1.21, -1.22, -1.23, -1.23, -1.23},
      {1.98, 1.99, 1.95, 2.11, 2.12, 2.11},       {1.68, 1.74, 1.20, 1.27, 1.01, 0.84}};
  snap.preds = Tensor({6, 6});
  for (size_t i = 0; i < per_sample.size(); ++i)
    for (size_t r = 0; r < per_sample[i].size(); ++r)
      snap.preds.at(static_cast<int64_t>(r), static_cast<int64_t>(i)) = per_sample[i][r];
  return snap;
}

// Quantile selection by exhaustive counting: try every candidate threshold
// (each observed s value) and pick the smallest one that keeps at least
// ceil((100-lambda)/100 * n) samples.
double brute_force_threshold(std::vector<double> s, double lambda) {
  std::sort(s.begin(), s.end());
  const auto n = static_cast<double>(s.size());
  auto want = static_cast<size_t>(std::ceil((100.0 - lambda) * n / 100.0 - 1e-9));
  want = std::max<size_t>(want, 1);
  for (double candidate : s) {
    size_t kept = 0;
    for (double x : s) kept += x <= candidate ? 1 : 0;
    if (kept >= want) return candidate;
  }
  return s.back();
}

}  // namespace

TEST_SUITE("pseudo_labeling") {

TEST_CASE("stability of the trajectory fixture matches hand computation") {
  const auto s = stability(trajectory_fixture());
  REQUIRE(s.size() == 6);
  const std::vector<double> want = {0.008, 0.462, 0.624, 0.004, 0.046, 0.22};
  for (size_t i = 0; i < want.size(); ++i) CHECK(s[i] == doctest::Approx(want[i]).epsilon(1e-9));
}

TEST_CASE("pseudo labels are means over every checkpoint row") {
  const auto p = average_pseudo_labels(trajectory_fixture());
  REQUIRE(p.size() == 6);
  CHECK(p[0] == doctest::Approx((-2.38 - 2.39 - 2.40 - 2.41 - 2.41 - 2.42) / 6.0));
  CHECK(p[3] == doctest::Approx((-1.21 - 1.21 - 1.22 - 1.23 - 1.23 - 1.23) / 6.0));
  CHECK(p[0] == doctest::Approx(-2.4016666666).epsilon(1e-9));
  CHECK(p[3] == doctest::Approx(-1.2216666666).epsilon(1e-9));
}

TEST_CASE("a constant trajectory has stability zero and pseudo label equal to it") {
  SnapshotMatrix snap;
  snap.epochs = {0, 2, 4};
  snap.ids = {"a", "b"};
  snap.preds = Tensor({3, 2}, {1.5, -0.25, 1.5, -0.25, 1.5, -0.25});
  const auto s = stability(snap);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == 0.0);
  const auto p = average_pseudo_labels(snap);
  CHECK(p[0] == doctest::Approx(1.5));
  CHECK(p[1] == doctest::Approx(-0.25));
}

TEST_CASE("stability needs two rows; averaging needs one") {
  SnapshotMatrix snap;
  snap.epochs = {0};
  snap.ids = {"a"};
  snap.preds = Tensor({1, 1}, {2.0});
  CHECK_THROWS_AS(stability(snap), ValidationError);
  CHECK(average_pseudo_labels(snap)[0] == 2.0);
}

TEST_CASE("threshold 0.012 on the fixture selects exactly the two stable cases") {
  const auto report = build_report_with_threshold(trajectory_fixture(), 0.012, 95.0);
  CHECK(report.selected ==
        std::vector<uint8_t>{1, 0, 0, 1, 0, 0});
  CHECK(report.threshold == 0.012);
  CHECK(report.pseudo[0] == doctest::Approx(-2.4016666666).epsilon(1e-9));
  CHECK(report.pseudo[3] == doctest::Approx(-1.2216666666).epsilon(1e-9));
}

TEST_CASE("nearest-rank selection on a small hand array") {
  const std::vector<double> s = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  // lambda 90: keep ceil(10*10/100) = 1 sample
  CHECK(select_threshold(s, 90.0) == doctest::Approx(0.1));
  // lambda 50: keep ceil(50*10/100) = 5
  CHECK(select_threshold(s, 50.0) == doctest::Approx(0.5));
  // lambda 99.9 clamps to rank 1
  CHECK(select_threshold(s, 99.9) == doctest::Approx(0.1));
  CHECK_THROWS_AS(select_threshold(s, 0.0), ValidationError);
  CHECK_THROWS_AS(select_threshold(s, 100.0), ValidationError);
  CHECK_THROWS_AS(select_threshold({}, 50.0), ValidationError);
}

TEST_CASE("ties at the threshold are all kept") {
  SnapshotMatrix snap;
  snap.epochs = {0, 1};
  snap.ids = {"a", "b", "c", "d"};
  // consecutive diffs: 0.1, 0.1, 0.1, 0.9 -> s = {0.1, 0.1, 0.1, 0.9}
  snap.preds = Tensor({2, 4}, {0.0, 0.0, 0.0, 0.0, 0.1, 0.1, 0.1, 0.9});
  const auto report = build_report(snap, 90.0);
  // rank ceil(10*4/100)=1 -> threshold 0.1, but every tied sample stays
  CHECK(report.threshold == doctest::Approx(0.1));
  CHECK(report.selected == std::vector<uint8_t>{1, 1, 1, 0});
}

TEST_CASE("quantile selection matches a brute-force oracle on random arrays") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t n = 1 + rng.uniform_int(40);
    std::vector<double> s(n);
    for (auto& x : s) x = rng.uniform(0.0, 2.0);
    for (double lambda : {50.0, 75.0, 90.0, 95.0}) {
      const double got = select_threshold(s, lambda);
      const double want = brute_force_threshold(s, lambda);
      CHECK(got == want);
    }
  }
}

TEST_CASE("selected count is non-increasing in lambda") {
  Rng rng(102);
  std::vector<double> s(64);
  for (auto& x : s) x = rng.uniform(0.0, 1.0);
  size_t prev = s.size() + 1;
  for (double lambda : {10.0, 30.0, 50.0, 70.0, 90.0, 99.0}) {
    const double thr = select_threshold(s, lambda);
    size_t kept = 0;
    for (double x : s) kept += x <= thr ? 1 : 0;
    CHECK(kept <= prev);
    CHECK(kept >= 1);
    prev = kept;
  }
}

TEST_CASE("build_report composes stability, averaging, and selection") {
  const auto snap = trajectory_fixture();
  const auto report = build_report(snap, 95.0);
  CHECK(report.ids == snap.ids);
  CHECK(report.lambda == 95.0);
  // rank ceil(5*6/100) = 1 -> the single most stable sample (case 4)
  CHECK(report.threshold == doctest::Approx(0.004).epsilon(1e-9));
  CHECK(report.selected == std::vector<uint8_t>{0, 0, 0, 1, 0, 0});

  const auto loose = build_report(snap, 50.0);
  size_t kept = 0;
  for (uint8_t b : loose.selected) kept += b;
  CHECK(kept == 3);  // ceil(50*6/100) = 3, no ties here
}

TEST_CASE("build_selftrain_set pairs selected samples with their pseudo labels") {
  auto ds = testutil::make_dataset(6, 1, 1, {2, 2, 2}, 103, /*hide_train_labels=*/true);
  auto snap = trajectory_fixture();
  for (size_t i = 0; i < snap.ids.size(); ++i) snap.ids[i] = ds.split("train")[i].id;

  const auto report = build_report_with_threshold(snap, 0.012, 95.0);
  const auto set = build_selftrain_set(ds, report);
  REQUIRE(set.samples.size() == 2);
  CHECK(set.samples[0] == &ds.split("train")[0]);
  CHECK(set.samples[1] == &ds.split("train")[3]);
  CHECK(set.labels[0] == doctest::Approx(-2.4016666666).epsilon(1e-9));
  CHECK(set.labels[1] == doctest::Approx(-1.2216666666).epsilon(1e-9));

  // selecting everything keeps the split order
  const auto all = build_selftrain_set(ds, build_report_with_threshold(snap, 1e9, 95.0));
  CHECK(all.samples.size() == 6);

  // selecting nothing demands an adjustment
  CHECK_THROWS_WITH_AS(build_selftrain_set(ds, build_report_with_threshold(snap, -1.0, 95.0)),
                       doctest::Contains("lower lambda"), ValidationError);
}

TEST_CASE("build_selftrain_set rejects id mismatches") {
  auto ds = testutil::make_dataset(6, 1, 1, {2, 2, 2}, 104);
  const auto snap = trajectory_fixture();  // ids case1..case6
  const auto report = build_report(snap, 50.0);
  CHECK_THROWS_WITH_AS(build_selftrain_set(ds, report), doctest::Contains("id mismatch"),
                       ValidationError);

  SnapshotMatrix small;
  small.epochs = {0, 1};
  small.ids = {"x"};
  small.preds = Tensor({2, 1}, {0.0, 0.0});
  CHECK_THROWS_AS(build_selftrain_set(ds, build_report(small, 50.0)), ValidationError);
}

TEST_CASE("reports round-trip through disk") {
  const auto report = build_report(trajectory_fixture(), 95.0);
  testutil::TempDir tmp("pseudo_report");
  const auto path = tmp.path() / "report.json";
  save_report(report, path);
  const auto back = load_report(path);
  CHECK(back.ids == report.ids);
  CHECK(back.selected == report.selected);
  CHECK(back.lambda == report.lambda);
  // stored values keep 6 significant digits, so allow half an ulp at digit 6
  for (size_t i = 0; i < report.s.size(); ++i) {
    CHECK(back.s[i] == doctest::Approx(report.s[i]).epsilon(1e-5));
    CHECK(back.pseudo[i] == doctest::Approx(report.pseudo[i]).epsilon(1e-5));
  }
  io::write_text_file(path, "{ nope");
  CHECK_THROWS_AS(load_report(path), IoError);
}

}  // TEST_SUITE
