#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "casp/autodiff.hpp"
#include "casp/tensor.hpp"

namespace casp {

enum class NtxentVariant { paper, simclr };

const char* to_string(NtxentVariant v);
NtxentVariant ntxent_variant_from_string(const std::string& s);

struct ContrastiveBatch {
  Tensor h;      // (K, d_h) original representations
  Tensor h_aug;  // (K, d_h) augmented representations
  double tau = 0.5;
};

void validate_batch(const ContrastiveBatch& b);

double l1_loss(const std::vector<double>& yhat, const std::vector<double>& y);

// Zero-norm input is defined as similarity 0; warns on stderr once per process.
double cosine_sim(const std::vector<double>& u, const std::vector<double>& v);

enum class PairDirection { orig_to_aug, aug_to_orig };

// Per-pair loss exactly as formulated: the positive term is excluded from the
// denominator, and the negatives come from the anchor's own set (originals for
// orig_to_aug, augmented for aug_to_orig). Values can be negative. The simclr
// variant uses the canonical 2K-1 candidate set instead.
double ntxent_pair(size_t i, PairDirection dir, const ContrastiveBatch& b,
                   NtxentVariant variant = NtxentVariant::paper);

double ntxent_batch_value(const ContrastiveBatch& b, NtxentVariant variant = NtxentVariant::paper);

// Tape version for training; h_id/h_aug_id are (K, d_h) nodes. Returns a
// scalar node equal to ntxent_batch_value of the same inputs.
int ntxent_batch_loss(ad::Tape& tape, int h_id, int h_aug_id, double tau,
                      NtxentVariant variant = NtxentVariant::paper);

}  // namespace casp
