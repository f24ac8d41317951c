#pragma once

#include <functional>
#include <vector>

#include "casp/rng.hpp"
#include "casp/tensor.hpp"

namespace casp::ad {

// Define-by-run reverse-mode tape. A graph is built per forward pass; node ids
// index into the tape, and ops only ever reference earlier ids, so reverse
// creation order is a valid topological order for backward().
class Tape {
 public:
  int leaf(Tensor value, bool requires_grad = false);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor& value(int id) { return nodes_[static_cast<size_t>(id)].value; }

  // zero tensor until backward() has touched the node
  const Tensor& grad(int id) const;

  // root must be a scalar node (numel == 1)
  void backward(int root);

  size_t size() const { return nodes_.size(); }

 private:
  friend struct OpAccess;
  struct Node {
    Tensor value;
    Tensor grad;  // empty until needed
    bool requires_grad = false;
    std::function<void(Tape&)> back;  // nullptr for leaves
  };
  Tensor& grad_buf(int id);
  int push(Tensor value, bool requires_grad, std::function<void(Tape&)> back);
  std::vector<Node> nodes_;
};

// ---- elementwise / shape ----
int add(Tape& t, int a, int b);
int sub(Tape& t, int a, int b);
int scale(Tape& t, int a, double c);
int gelu(Tape& t, int a);
int reshape(Tape& t, int a, std::vector<int64_t> shape);
// sum_i x_i * w_i -> scalar (w is a constant)
int weighted_sum(Tape& t, int a, Tensor w);
int sum_all(Tape& t, int a);
int mean_all(Tape& t, int a);

// ---- linear algebra ----
int matmul(Tape& t, int a, int b);     // (M,K)x(K,N)
int matmul_nt(Tape& t, int a, int b);  // (M,K)x(N,K)^T -> (M,N)
int add_rowvec(Tape& t, int x, int v);
int linear(Tape& t, int x, int w, int b);  // rows x (in,out) + bias

// ---- nn building blocks ----
int layer_norm(Tape& t, int x, int gamma, int beta, double eps = 1e-5);
int dropout(Tape& t, int x, double rate, Rng& rng, bool training);
// multi-head self-attention over already-projected q,k,v of shape (B,T,d).
// mask is (B,T) with 1 for valid steps; masked keys are excluded from the
// softmax exactly (not via additive -inf), so padding cannot perturb valid rows.
int multihead_attention(Tape& t, int q, int k, int v, const Tensor& mask, int n_heads);
int masked_mean_pool(Tape& t, int x, const Tensor& mask);  // (B,T,d)->(B,d)
int concat_time(Tape& t, const std::vector<int>& xs);      // (B,Ti,d) -> (B,sum Ti,d)
int concat_cols(Tape& t, const std::vector<int>& xs);      // (B,di) -> (B,sum di)
int concat_rows(Tape& t, int a, int b);                    // (R1,C)+(R2,C)
// y[b,t,:] = x[b,t,:] + emb[seg[t],:]
int add_segment_embed(Tape& t, int x, int emb, const std::vector<int>& seg);

// ---- contrastive / losses ----
int l2_normalize_rows(Tape& t, int x);   // zero rows stay zero
int rowwise_dot(Tape& t, int a, int b);  // (R,C),(R,C) -> (R)
// out_i = log sum_{k != i} exp(S[i,k]); S square
int logsumexp_offdiag(Tape& t, int s);
// out_i = S[i, partner(i)] with partner(i) = i+K mod 2K; S is (2K,2K)
int gather_pair(Tape& t, int s);
int l1_loss(Tape& t, int pred, const Tensor& target);  // (R) vs (R) -> scalar

}  // namespace casp::ad
