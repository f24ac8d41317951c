#include "casp/data_model.hpp"

#include <atomic>
#include <cmath>

#include "casp/errors.hpp"

namespace casp {

const char* to_string(Modality m) {
  switch (m) {
    case Modality::audio:
      return "audio";
    case Modality::video:
      return "video";
    case Modality::text:
      return "text";
  }
  throw ValidationError("unknown modality enum value");
}

Modality modality_from_string(const std::string& s) {
  if (s == "audio") return Modality::audio;
  if (s == "video") return Modality::video;
  if (s == "text") return Modality::text;
  throw ValidationError("unknown modality: " + s);
}

namespace {
std::atomic<int>& guard_counter() {
  static std::atomic<int> n{0};
  return n;
}
}  // namespace

HiddenLabelGuard::HiddenLabelGuard() { guard_counter().fetch_add(1); }
HiddenLabelGuard::~HiddenLabelGuard() { guard_counter().fetch_sub(1); }
bool HiddenLabelGuard::armed() { return guard_counter().load() > 0; }

double MultimodalSample::label() const {
  if (!has_label_) throw ValidationError("sample " + id + " has no label");
  if (hidden_ && HiddenLabelGuard::armed())
    throw GuardViolation("hidden label of sample " + id + " read during adaptation");
  return label_;
}

const std::vector<MultimodalSample>& DomainDataset::split(const std::string& name_) const {
  auto it = splits.find(name_);
  if (it == splits.end()) throw ValidationError("dataset " + name + " has no split " + name_);
  return it->second;
}

std::vector<MultimodalSample>& DomainDataset::split(const std::string& name_) {
  auto it = splits.find(name_);
  if (it == splits.end()) throw ValidationError("dataset " + name + " has no split " + name_);
  return it->second;
}

std::vector<std::string> validate_dataset(const DomainDataset& ds) {
  std::vector<std::string> violations;
  auto add = [&](const std::string& msg) { violations.push_back(msg); };

  if (!(ds.label_range[0] < ds.label_range[1]))
    add("label_range [" + std::to_string(ds.label_range[0]) + ", " +
        std::to_string(ds.label_range[1]) + "] is not an increasing pair");
  for (Modality m : kModalities)
    if (ds.feat_dims[static_cast<size_t>(m)] < 1)
      add(std::string("feat_dim for ") + to_string(m) + " must be >= 1");

  for (const auto& name : kSplitNames)
    if (!ds.splits.count(name)) add("missing split: " + name);
  for (const auto& [name, _] : ds.splits)
    if (name != "train" && name != "valid" && name != "test") add("unknown split: " + name);

  for (const auto& [split_name, samples] : ds.splits) {
    for (const auto& s : samples) {
      for (Modality m : kModalities) {
        const auto& f = s.feat(m);
        const std::string where = "sample " + s.id + " (" + split_name + ") " + to_string(m);
        if (f.seq_len < 1 || f.feat_dim < 1) {
          add(where + ": empty features (seq_len " + std::to_string(f.seq_len) + ", feat_dim " +
              std::to_string(f.feat_dim) + ")");
          continue;
        }
        if (static_cast<int64_t>(f.values.size()) != f.seq_len * f.feat_dim) {
          add(where + ": value count does not match seq_len * feat_dim");
          continue;
        }
        if (f.feat_dim != ds.feat_dims[static_cast<size_t>(m)])
          add(where + ": feat_dim " + std::to_string(f.feat_dim) + " != dataset's " +
              std::to_string(ds.feat_dims[static_cast<size_t>(m)]));
        for (float v : f.values)
          if (!std::isfinite(v)) {
            add(where + ": non-finite value");
            break;
          }
      }
      if (s.has_label()) {
        // validation runs outside any guard scope; read directly
        const double y = s.label();
        if (!std::isfinite(y) || y < ds.label_range[0] || y > ds.label_range[1])
          add("sample " + s.id + " (" + split_name + "): label " + std::to_string(y) +
              " outside label_range");
      }
      if (split_name == "test" && !s.has_label())
        add("sample " + s.id + " (test): evaluation split must be fully labeled");
    }
  }
  return violations;
}

}  // namespace casp
