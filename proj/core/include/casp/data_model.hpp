#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace casp {

// Closed, case-sensitive modality set. Array indices everywhere follow this order.
enum class Modality : int { audio = 0, video = 1, text = 2 };

inline constexpr std::array<Modality, 3> kModalities = {Modality::audio, Modality::video,
                                                        Modality::text};
inline constexpr int kNumModalities = 3;

const char* to_string(Modality m);
Modality modality_from_string(const std::string& s);

// Feature matrix of shape (seq_len, feat_dim), row-major. Stored as f32 so the
// in-memory value is bit-identical to the on-disk blob encoding.
struct ModalityFeatures {
  int64_t seq_len = 0;
  int64_t feat_dim = 0;
  std::vector<float> values;  // seq_len * feat_dim entries

  float at(int64_t t, int64_t j) const {
    return values[static_cast<size_t>(t * feat_dim + j)];
  }
};

// Scoped guard that forbids reading hidden labels anywhere on the thread of
// execution. Adaptation and self-training arm it internally; tests arm it to
// prove a code path is label-free.
class HiddenLabelGuard {
 public:
  HiddenLabelGuard();
  ~HiddenLabelGuard();
  HiddenLabelGuard(const HiddenLabelGuard&) = delete;
  HiddenLabelGuard& operator=(const HiddenLabelGuard&) = delete;
  static bool armed();
};

class MultimodalSample {
 public:
  std::string id;
  std::array<ModalityFeatures, 3> features;  // indexed by Modality

  const ModalityFeatures& feat(Modality m) const { return features[static_cast<size_t>(m)]; }
  ModalityFeatures& feat(Modality m) { return features[static_cast<size_t>(m)]; }

  void set_label(double value, bool hidden = false) {
    label_ = value;
    has_label_ = true;
    hidden_ = hidden;
  }
  void clear_label() {
    has_label_ = false;
    hidden_ = false;
    label_ = 0.0;
  }
  bool has_label() const { return has_label_; }
  bool label_hidden() const { return hidden_; }
  // Throws GuardViolation if the label is hidden and a HiddenLabelGuard is armed.
  double label() const;

 private:
  double label_ = 0.0;
  bool has_label_ = false;
  bool hidden_ = false;
};

struct DomainDataset {
  std::string name;
  std::array<double, 2> label_range = {-3.0, 3.0};
  std::array<int64_t, 3> feat_dims = {0, 0, 0};  // indexed by Modality
  // exactly the keys "train", "valid", "test"
  std::map<std::string, std::vector<MultimodalSample>> splits;

  const std::vector<MultimodalSample>& split(const std::string& name_) const;
  std::vector<MultimodalSample>& split(const std::string& name_);
};

inline const std::array<std::string, 3> kSplitNames = {"train", "valid", "test"};

// Returns every invariant violation as a human-readable description naming the
// sample and field; empty means valid. Never mutates, never throws on bad data.
std::vector<std::string> validate_dataset(const DomainDataset& ds);

}  // namespace casp
