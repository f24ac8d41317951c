#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "casp/data_model.hpp"
#include "casp/rng.hpp"
#include "casp/tensor.hpp"

namespace casp {

// Zero-padded batch with per-step validity masks. A dropped modality keeps its
// mask (steps are real); a padded step has mask 0. Labels are carried by the
// caller, not the batch, so label access stays explicit and guard-checkable.
struct Batch {
  int64_t size = 0;
  std::array<Tensor, 3> features;  // per modality: (B, T_m, D_m), f64
  std::array<Tensor, 3> masks;     // per modality: (B, T_m), 1 = valid step
  std::vector<std::string> ids;
};

// pad_to, when nonzero per modality, forces that time dimension (must be >= the
// batch max); used by padding-invariance tests.
Batch build_batch(const std::vector<const MultimodalSample*>& samples,
                  const std::array<int64_t, 3>& pad_to = {0, 0, 0});

// Contiguous index ranges [0,n) cut into batches of batch_size. If shuffle_rng
// is non-null the order is shuffled first. With min_last = 2 a trailing
// singleton batch is folded into the previous batch (contrastive losses need
// K >= 2); with min_last = 1 the singleton stays.
std::vector<std::vector<int64_t>> make_batch_indices(int64_t n, int64_t batch_size,
                                                     Rng* shuffle_rng, int64_t min_last = 1);

std::vector<const MultimodalSample*> sample_ptrs(const std::vector<MultimodalSample>& samples);

}  // namespace casp
