#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "casp/adapt.hpp"
#include "casp/data_model.hpp"

namespace casp {

struct StabilityReport {
  std::vector<std::string> ids;
  std::vector<double> s;       // per-sample stability, >= 0
  std::vector<double> pseudo;  // checkpoint-averaged pseudo label
  double threshold = 0.0;
  double lambda = 0.0;
  std::vector<uint8_t> selected;  // selected[i] <=> s[i] <= threshold
};

// s_i = mean |consecutive checkpoint difference|; needs >= 2 snapshot rows.
std::vector<double> stability(const SnapshotMatrix& snap);

// mean over all checkpoint rows
std::vector<double> average_pseudo_labels(const SnapshotMatrix& snap);

// Nearest-rank (100-lambda)th percentile of s: sort ascending, take rank
// ceil((100-lambda)/100 * N) with minimum rank 1. lambda = 95 keeps the most
// stable ~5%. Ties at the threshold are all kept.
double select_threshold(const std::vector<double>& s, double lambda);

StabilityReport build_report(const SnapshotMatrix& snap, double lambda);
// External threshold (no quantile); lambda recorded for bookkeeping only.
StabilityReport build_report_with_threshold(const SnapshotMatrix& snap, double threshold,
                                            double lambda);

// Selected samples by reference, labels = pseudo labels. Feature data is never
// copied.
struct PseudoLabeledSet {
  std::vector<const MultimodalSample*> samples;
  std::vector<double> labels;
};

// Errors if the report ids do not match the target adaptation split, or if
// nothing is selected (demanding a lambda adjustment).
PseudoLabeledSet build_selftrain_set(const DomainDataset& target, const StabilityReport& report);

void save_report(const StabilityReport& report, const std::filesystem::path& path);
StabilityReport load_report(const std::filesystem::path& path);

}  // namespace casp
