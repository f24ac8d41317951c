#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "casp/backbones.hpp"
#include "casp/data_model.hpp"
#include "casp/losses.hpp"
#include "casp/train.hpp"

namespace casp {

struct AdaptConfig {
  int64_t epochs = 15;            // E
  int64_t snapshot_interval = 3;  // M
  int64_t n_drop = 1;             // modalities dropped per augmented view
  double fill = 0.0;              // value written into a dropped modality
  double tau = 0.5;
  double learning_rate = 1e-3;
  int64_t batch_size = 24;
  double grad_clip_norm = 0.8;
  LrSchedule lr_schedule;
  double weight_decay = 1e-4;
  NtxentVariant ntxent_variant = NtxentVariant::paper;
  uint64_t seed = 0;
};

void validate_config(const AdaptConfig& cfg);

// Row j holds predictions at epoch epochs[j]; row 0 is the pristine source
// model (epoch 0), rows follow every M-th epoch. n_checkpoints = floor(E/M)+1.
struct SnapshotMatrix {
  std::vector<int64_t> epochs;
  std::vector<std::string> ids;
  Tensor preds;  // (n_checkpoints, N_t)
};

// Per sample: choose n_drop modalities uniformly without replacement and
// overwrite their valid steps with fill. Masks stay untouched, so a dropped
// modality still counts as present (that is what separates it from padding).
Batch drop_modality(const Batch& batch, int64_t n_drop, double fill, Rng& rng);

// Evaluation-mode predictions in the given sample order.
std::vector<double> snapshot_predictions(const FusionModel& model,
                                         const std::vector<const MultimodalSample*>& samples,
                                         int64_t batch_size = 24);

struct AdaptResult {
  FusionModel model;
  SnapshotMatrix snapshots;
  std::vector<double> epoch_mean_loss;  // mean NT-Xent per epoch
  std::vector<double> step_grad_norms;  // post-clip, one per step
};

// Stage 1. Arms the hidden-label guard for its whole duration; only
// norm-affine parameters receive updates.
AdaptResult adapt(const FusionModel& source_model, const DomainDataset& target,
                  const AdaptConfig& cfg);

// snapshots.json + sibling f32 blob (row-major preds)
void save_snapshots(const SnapshotMatrix& snap, const std::filesystem::path& json_path);
SnapshotMatrix load_snapshots(const std::filesystem::path& json_path);

}  // namespace casp
