#include "casp/batch.hpp"

#include <algorithm>

#include "casp/errors.hpp"

namespace casp {

Batch build_batch(const std::vector<const MultimodalSample*>& samples,
                  const std::array<int64_t, 3>& pad_to) {
  if (samples.empty()) throw ValidationError("build_batch: empty sample list");
  Batch b;
  b.size = static_cast<int64_t>(samples.size());
  for (Modality m : kModalities) {
    const size_t mi = static_cast<size_t>(m);
    int64_t max_len = 0;
    const int64_t d = samples[0]->feat(m).feat_dim;
    for (const auto* s : samples) {
      const auto& f = s->feat(m);
      if (f.feat_dim != d)
        throw ValidationError("build_batch: feat_dim mismatch within batch for " +
                              std::string(to_string(m)));
      max_len = std::max(max_len, f.seq_len);
    }
    if (pad_to[mi] > 0) {
      if (pad_to[mi] < max_len) throw ValidationError("build_batch: pad_to below batch max");
      max_len = pad_to[mi];
    }
    Tensor feat({b.size, max_len, d});
    Tensor mask({b.size, max_len});
    for (int64_t i = 0; i < b.size; ++i) {
      const auto& f = samples[static_cast<size_t>(i)]->feat(m);
      for (int64_t t = 0; t < f.seq_len; ++t) {
        mask.at(i, t) = 1.0;
        for (int64_t j = 0; j < d; ++j)
          feat.at(i, t, j) = static_cast<double>(f.at(t, j));
      }
    }
    b.features[mi] = std::move(feat);
    b.masks[mi] = std::move(mask);
  }
  b.ids.reserve(samples.size());
  for (const auto* s : samples) b.ids.push_back(s->id);
  return b;
}

std::vector<std::vector<int64_t>> make_batch_indices(int64_t n, int64_t batch_size,
                                                     Rng* shuffle_rng, int64_t min_last) {
  if (n < 1) throw ValidationError("make_batch_indices: empty dataset");
  if (batch_size < 1) throw ValidationError("make_batch_indices: batch_size must be >= 1");
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  if (shuffle_rng) shuffle_rng->shuffle(order);

  std::vector<std::vector<int64_t>> batches;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  if (batches.size() >= 2 && static_cast<int64_t>(batches.back().size()) < min_last) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    auto& prev = batches.back();
    prev.insert(prev.end(), tail.begin(), tail.end());
  }
  return batches;
}

std::vector<const MultimodalSample*> sample_ptrs(const std::vector<MultimodalSample>& samples) {
  std::vector<const MultimodalSample*> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

}  // namespace casp
