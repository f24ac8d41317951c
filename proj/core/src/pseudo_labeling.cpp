#include "casp/pseudo_labeling.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "casp/errors.hpp"
#include "casp/jsonio.hpp"

namespace casp {

using nlohmann::json;

std::vector<double> stability(const SnapshotMatrix& snap) {
  const int64_t rows = snap.preds.dim(0), n = snap.preds.dim(1);
  if (rows < 2) throw ValidationError("stability: need at least 2 snapshot rows");
  std::vector<double> s(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j + 1 < rows; ++j)
      acc += std::abs(snap.preds.at(j, i) - snap.preds.at(j + 1, i));
    s[static_cast<size_t>(i)] = acc / static_cast<double>(rows - 1);
  }
  return s;
}

std::vector<double> average_pseudo_labels(const SnapshotMatrix& snap) {
  const int64_t rows = snap.preds.dim(0), n = snap.preds.dim(1);
  if (rows < 1) throw ValidationError("average_pseudo_labels: empty snapshot matrix");
  std::vector<double> y(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < rows; ++j) acc += snap.preds.at(j, i);
    y[static_cast<size_t>(i)] = acc / static_cast<double>(rows);
  }
  return y;
}

double select_threshold(const std::vector<double>& s, double lambda) {
  if (s.empty()) throw ValidationError("select_threshold: empty stability array");
  if (!(lambda > 0.0 && lambda < 100.0))
    throw ValidationError("select_threshold: lambda must lie in (0, 100)");
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // 1e-9 slack keeps an exactly-integer rank from rounding up
  const auto rank = static_cast<int64_t>(std::ceil((100.0 - lambda) * n / 100.0 - 1e-9));
  const int64_t clamped = std::max<int64_t>(1, std::min<int64_t>(rank, sorted.size()));
  return sorted[static_cast<size_t>(clamped - 1)];
}

namespace {
StabilityReport make_report(const SnapshotMatrix& snap, double threshold, double lambda) {
  StabilityReport report;
  report.ids = snap.ids;
  report.s = stability(snap);
  report.pseudo = average_pseudo_labels(snap);
  report.threshold = threshold;
  report.lambda = lambda;
  report.selected.reserve(report.s.size());
  for (double v : report.s) report.selected.push_back(v <= threshold ? 1 : 0);
  return report;
}
}  // namespace

StabilityReport build_report(const SnapshotMatrix& snap, double lambda) {
  return make_report(snap, select_threshold(stability(snap), lambda), lambda);
}

StabilityReport build_report_with_threshold(const SnapshotMatrix& snap, double threshold,
                                            double lambda) {
  return make_report(snap, threshold, lambda);
}

PseudoLabeledSet build_selftrain_set(const DomainDataset& target, const StabilityReport& report) {
  const auto& split = target.split("train");
  if (split.size() != report.ids.size())
    throw ValidationError("build_selftrain_set: report covers " +
                          std::to_string(report.ids.size()) + " ids, split has " +
                          std::to_string(split.size()));
  PseudoLabeledSet set;
  for (size_t i = 0; i < split.size(); ++i) {
    if (split[i].id != report.ids[i])
      throw ValidationError("build_selftrain_set: id mismatch at position " + std::to_string(i) +
                            ": " + split[i].id + " vs " + report.ids[i]);
    if (!report.selected[i]) continue;
    set.samples.push_back(&split[i]);
    set.labels.push_back(report.pseudo[i]);
  }
  if (set.samples.empty())
    throw ValidationError(
        "build_selftrain_set: no samples selected; lower lambda (or raise the threshold)");
  return set;
}

void save_report(const StabilityReport& report, const std::filesystem::path& path) {
  json doc;
  doc["format_version"] = 1;
  doc["lambda"] = io::round_sig6(report.lambda);
  doc["threshold"] = io::round_sig6(report.threshold);
  doc["ids"] = report.ids;
  doc["stability"] = io::round_sig6(report.s);
  doc["pseudo_labels"] = io::round_sig6(report.pseudo);
  json sel = json::array();
  int64_t n_selected = 0;
  for (uint8_t b : report.selected) {
    sel.push_back(b != 0);
    n_selected += b != 0;
  }
  doc["selected"] = std::move(sel);
  doc["n_selected"] = n_selected;
  io::write_text_file(path, doc.dump(2) + "\n");
}

StabilityReport load_report(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(io::read_text_file(path));
  } catch (const json::exception& e) {
    throw IoError("corrupt stability report " + path.string() + ": " + e.what());
  }
  try {
    StabilityReport report;
    report.lambda = doc.at("lambda").get<double>();
    report.threshold = doc.at("threshold").get<double>();
    report.ids = doc.at("ids").get<std::vector<std::string>>();
    report.s = doc.at("stability").get<std::vector<double>>();
    report.pseudo = doc.at("pseudo_labels").get<std::vector<double>>();
    for (bool b : doc.at("selected").get<std::vector<bool>>())
      report.selected.push_back(b ? 1 : 0);
    if (report.s.size() != report.ids.size() || report.pseudo.size() != report.ids.size() ||
        report.selected.size() != report.ids.size())
      throw ValidationError("stability report is internally inconsistent");
    return report;
  } catch (const json::exception& e) {
    throw ValidationError("stability report schema error " + path.string() + ": " + e.what());
  }
}

}  // namespace casp
