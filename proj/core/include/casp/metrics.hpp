#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace casp {

// Mean absolute error over parallel prediction/label vectors.
double mae(const std::vector<double>& pred, const std::vector<double>& label);

// Sign-binarized accuracy: v >= 0 is the positive class, every sample counts.
double binary_accuracy(const std::vector<double>& pred, const std::vector<double>& label);

// Support-weighted binary F1 over the two sign classes. A class with zero
// predicted and zero actual members contributes F1 = 0 at weight 0.
double binary_f1(const std::vector<double>& pred, const std::vector<double>& label);

struct Metrics {
  double acc = 0.0;
  double f1 = 0.0;
  double mae = 0.0;
  int64_t n = 0;
};

Metrics compute_metrics(const std::vector<double>& pred, const std::vector<double>& label);

void save_metrics(const Metrics& m, const std::filesystem::path& path);
Metrics load_metrics(const std::filesystem::path& path);

}  // namespace casp
