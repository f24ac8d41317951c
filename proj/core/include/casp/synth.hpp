#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include "casp/data_model.hpp"

namespace casp {

// Paired source/target generator. Both domains share the same latent-to-feature
// maps; the target applies a per-modality orthogonal rotation, its own noise
// level, and optional per-modality corruption noise on top. Labels equal the
// latent sentiment z (times label_rescale on the target side).
struct ShiftConfig {
  std::string name = "synthshift";
  int64_t n_source = 240;  // source train size
  int64_t n_target = 240;  // target adaptation split size (labels hidden)
  int64_t n_valid = 60;    // per domain
  int64_t n_test = 120;    // per domain
  int64_t seq_len = 8;     // max steps per modality; per-sample lengths vary
  std::array<int64_t, 3> feat_dims = {12, 16, 20};
  std::array<double, 2> label_range = {-3.0, 3.0};
  std::array<double, 3> rotation = {0.0, 0.0, 0.0};  // radians, target only
  double noise_sigma_source = 0.05;
  double noise_sigma_target = 0.05;
  std::array<double, 3> corruption = {0.0, 0.0, 0.0};  // extra noise scale, target only
  double label_rescale = 1.0;  // 1 = off; target labels and range scaled by this
  uint64_t seed = 7;
};

void validate_config(const ShiftConfig& cfg);

// Strict JSON round trip; unknown keys raise ConfigError naming the field.
ShiftConfig shift_config_from_json(const std::string& text);
std::string shift_config_to_json(const ShiftConfig& cfg);

std::pair<DomainDataset, DomainDataset> generate_task(const ShiftConfig& cfg);

}  // namespace casp
