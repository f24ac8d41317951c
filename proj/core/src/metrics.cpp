#include "casp/metrics.hpp"

#include <cmath>
#include <cstdint>

#include <json.hpp>

#include "casp/errors.hpp"
#include "casp/jsonio.hpp"
#include "casp/losses.hpp"

namespace casp {

namespace {

void check_lengths(const std::vector<double>& pred, const std::vector<double>& label,
                   const char* op) {
  if (pred.empty()) {
    throw ValidationError(std::string(op) + ": empty input");
  }
  if (pred.size() != label.size()) {
    throw ValidationError(std::string(op) + ": length mismatch (" +
                          std::to_string(pred.size()) + " vs " + std::to_string(label.size()) +
                          ")");
  }
}

inline bool positive(double v) { return v >= 0.0; }

}  // namespace

double mae(const std::vector<double>& pred, const std::vector<double>& label) {
  check_lengths(pred, label, "mae");
  return l1_loss(pred, label);
}

double binary_accuracy(const std::vector<double>& pred, const std::vector<double>& label) {
  check_lengths(pred, label, "binary_accuracy");
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (positive(pred[i]) == positive(label[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double binary_f1(const std::vector<double>& pred, const std::vector<double>& label) {
  check_lengths(pred, label, "binary_f1");
  // Class 1 = positive, class 0 = negative; one-vs-rest counts per class.
  int64_t tp[2] = {0, 0}, fp[2] = {0, 0}, fn[2] = {0, 0}, support[2] = {0, 0};
  for (size_t i = 0; i < pred.size(); ++i) {
    int p = positive(pred[i]) ? 1 : 0;
    int y = positive(label[i]) ? 1 : 0;
    ++support[y];
    if (p == y) {
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  double weighted = 0.0;
  for (int c = 0; c < 2; ++c) {
    double denom = 2.0 * tp[c] + fp[c] + fn[c];
    double f1c = denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;  // 0/0 class F1 = 0
    weighted += f1c * static_cast<double>(support[c]);
  }
  return weighted / static_cast<double>(pred.size());
}

Metrics compute_metrics(const std::vector<double>& pred, const std::vector<double>& label) {
  Metrics m;
  m.acc = binary_accuracy(pred, label);
  m.f1 = binary_f1(pred, label);
  m.mae = mae(pred, label);
  m.n = static_cast<int64_t>(pred.size());
  return m;
}

void save_metrics(const Metrics& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["acc"] = io::round_sig6(m.acc);
  j["f1"] = io::round_sig6(m.f1);
  j["mae"] = io::round_sig6(m.mae);
  j["n"] = m.n;
  io::write_text_file(path, j.dump(2) + "\n");
}

Metrics load_metrics(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt metrics file " + path.string() + ": " + e.what());
  }
  try {
    Metrics m;
    m.acc = j.at("acc").get<double>();
    m.f1 = j.at("f1").get<double>();
    m.mae = j.at("mae").get<double>();
    m.n = j.at("n").get<int64_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("metrics schema error " + path.string() + ": " + e.what());
  }
}

}  // namespace casp
