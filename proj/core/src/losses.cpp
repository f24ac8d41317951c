#include "casp/losses.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>

#include "casp/errors.hpp"

namespace casp {

const char* to_string(NtxentVariant v) { return v == NtxentVariant::paper ? "paper" : "simclr"; }

NtxentVariant ntxent_variant_from_string(const std::string& s) {
  if (s == "paper") return NtxentVariant::paper;
  if (s == "simclr") return NtxentVariant::simclr;
  throw ConfigError("unknown ntxent_variant: " + s);
}

void validate_batch(const ContrastiveBatch& b) {
  if (b.h.rank() != 2 || !b.h.same_shape(b.h_aug))
    throw ValidationError("contrastive batch: H and H_aug must be (K, d_h) with equal shapes");
  if (b.h.dim(0) < 2) throw ValidationError("contrastive batch: K must be >= 2");
  if (!(b.tau > 0.0)) throw ValidationError("contrastive batch: tau must be > 0");
  if (!b.h.all_finite() || !b.h_aug.all_finite())
    throw ValidationError("contrastive batch: non-finite representation");
}

double l1_loss(const std::vector<double>& yhat, const std::vector<double>& y) {
  if (yhat.size() != y.size()) throw ValidationError("l1_loss: length mismatch");
  if (yhat.empty()) throw ValidationError("l1_loss: empty input");
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i) s += std::abs(yhat[i] - y[i]);
  return s / static_cast<double>(y.size());
}

namespace {

void warn_zero_norm() {
  static std::atomic<bool> warned{false};
  if (!warned.exchange(true))
    std::fprintf(stderr, "warning: cosine similarity of a zero-norm vector defined as 0\n");
}

// rows of a (K, d) tensor, l2-normalized; zero rows stay zero (warned)
std::vector<std::vector<double>> normalized_rows(const Tensor& x) {
  const int64_t k = x.dim(0), d = x.dim(1);
  std::vector<std::vector<double>> rows(static_cast<size_t>(k),
                                        std::vector<double>(static_cast<size_t>(d), 0.0));
  for (int64_t i = 0; i < k; ++i) {
    double nrm = 0.0;
    for (int64_t j = 0; j < d; ++j) nrm += x.at(i, j) * x.at(i, j);
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) {
      warn_zero_norm();
      continue;
    }
    for (int64_t j = 0; j < d; ++j) rows[static_cast<size_t>(i)][static_cast<size_t>(j)] = x.at(i, j) / nrm;
  }
  return rows;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double logsumexp(const std::vector<double>& xs) {
  double mx = xs[0];
  for (double x : xs) mx = std::max(mx, x);
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - mx);
  return mx + std::log(acc);
}

}  // namespace

double cosine_sim(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw ValidationError("cosine_sim: length mismatch");
  if (u.empty()) throw ValidationError("cosine_sim: empty input");
  double nu = 0.0, nv = 0.0, uv = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    nu += u[i] * u[i];
    nv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) {
    warn_zero_norm();
    return 0.0;
  }
  return uv / (std::sqrt(nu) * std::sqrt(nv));
}

double ntxent_pair(size_t i, PairDirection dir, const ContrastiveBatch& b, NtxentVariant variant) {
  validate_batch(b);
  const size_t k = static_cast<size_t>(b.h.dim(0));
  if (i >= k) throw ValidationError("ntxent_pair: index out of range");
  const auto hn = normalized_rows(b.h);
  const auto an = normalized_rows(b.h_aug);

  const auto& anchors = dir == PairDirection::orig_to_aug ? hn : an;
  const auto& others = dir == PairDirection::orig_to_aug ? an : hn;
  const double pos = dot(anchors[i], others[i]) / b.tau;

  std::vector<double> negatives;
  if (variant == NtxentVariant::paper) {
    // denominator over the anchor's own set, positive excluded
    for (size_t j = 0; j < k; ++j)
      if (j != i) negatives.push_back(dot(anchors[i], anchors[j]) / b.tau);
  } else {
    // canonical 2K-1 candidates from the union, positive included
    for (size_t j = 0; j < k; ++j) {
      if (&anchors != &hn || j != i) negatives.push_back(dot(anchors[i], hn[j]) / b.tau);
    }
    for (size_t j = 0; j < k; ++j) {
      if (&anchors != &an || j != i) negatives.push_back(dot(anchors[i], an[j]) / b.tau);
    }
  }
  return -pos + logsumexp(negatives);
}

double ntxent_batch_value(const ContrastiveBatch& b, NtxentVariant variant) {
  validate_batch(b);
  const size_t k = static_cast<size_t>(b.h.dim(0));
  double acc = 0.0;
  for (size_t i = 0; i < k; ++i) {
    acc += ntxent_pair(i, PairDirection::orig_to_aug, b, variant);
    acc += ntxent_pair(i, PairDirection::aug_to_orig, b, variant);
  }
  return acc / (2.0 * static_cast<double>(k));
}

int ntxent_batch_loss(ad::Tape& tape, int h_id, int h_aug_id, double tau, NtxentVariant variant) {
  const Tensor& h = tape.value(h_id);
  if (h.rank() != 2 || !h.same_shape(tape.value(h_aug_id)))
    throw ValidationError("ntxent_batch_loss: H and H_aug must be (K, d_h) with equal shapes");
  const int64_t k = h.dim(0);
  if (k < 2) throw ValidationError("ntxent_batch_loss: K must be >= 2");
  if (!(tau > 0.0)) throw ValidationError("ntxent_batch_loss: tau must be > 0");

  const int hn = ad::l2_normalize_rows(tape, h_id);
  const int an = ad::l2_normalize_rows(tape, h_aug_id);

  if (variant == NtxentVariant::paper) {
    // L = (1/2K) [ -2 sum_i pos_i / tau + sum_i lse_hh_i + sum_i lse_aa_i ]
    const int pos = ad::rowwise_dot(tape, hn, an);
    const int s_hh = ad::scale(tape, ad::matmul_nt(tape, hn, hn), 1.0 / tau);
    const int s_aa = ad::scale(tape, ad::matmul_nt(tape, an, an), 1.0 / tau);
    const int lse = ad::add(tape, ad::logsumexp_offdiag(tape, s_hh),
                            ad::logsumexp_offdiag(tape, s_aa));
    int total = ad::add(tape, ad::scale(tape, ad::sum_all(tape, pos), -2.0 / tau),
                        ad::sum_all(tape, lse));
    return ad::scale(tape, total, 1.0 / (2.0 * static_cast<double>(k)));
  }

  // simclr: concat set, positives gathered at offset K, denominator = all
  // off-diagonal candidates (positive included)
  const int c = ad::concat_rows(tape, hn, an);
  const int s = ad::scale(tape, ad::matmul_nt(tape, c, c), 1.0 / tau);
  const int lse = ad::logsumexp_offdiag(tape, s);
  const int pos = ad::gather_pair(tape, s);
  int total = ad::add(tape, ad::sum_all(tape, lse), ad::scale(tape, ad::sum_all(tape, pos), -1.0));
  return ad::scale(tape, total, 1.0 / (2.0 * static_cast<double>(k)));
}

}  // namespace casp
