#include "casp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace casp::ad {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                Tensor::shape_str(a.shape()) + " vs " +
                                Tensor::shape_str(b.shape()));
}

// C += A(M,K) * B(K,N)
void mm_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A(M,K) * B(N,K)^T
void mm_nt_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C(K,N) += A(M,K)^T * B(M,N)
void mm_tn_acc(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

struct OpAccess {
  static int push(Tape& t, Tensor v, bool rg) { return t.push(std::move(v), rg, nullptr); }
  static void set_back(Tape& t, int id, std::function<void(Tape&)> f) {
    t.nodes_[static_cast<size_t>(id)].back = std::move(f);
  }
  static Tensor& gbuf(Tape& t, int id) { return t.grad_buf(id); }
  static bool wants_grad(const Tape& t, int id) {
    return t.nodes_[static_cast<size_t>(id)].requires_grad;
  }
};

namespace {

bool req(Tape& t, int id) { return OpAccess::wants_grad(t, id); }

void accum(Tape& t, int id, const Tensor& contribution) {
  Tensor& g = OpAccess::gbuf(t, id);
  for (int64_t i = 0; i < g.numel(); ++i) g[i] += contribution[i];
}

}  // namespace

int Tape::leaf(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

int Tape::push(Tensor value, bool requires_grad, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty() && n.value.numel() > 0) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

const Tensor& Tape::grad(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) {
    static const Tensor kEmpty;
    return kEmpty;
  }
  return n.grad;
}

void Tape::backward(int root) {
  if (nodes_[static_cast<size_t>(root)].value.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar");
  grad_buf(root)[0] = 1.0;
  for (int id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.back || n.grad.empty() || !n.requires_grad) continue;
    n.back(*this);
  }
}

// ---------------------------------------------------------------------------
// elementwise / shape
// ---------------------------------------------------------------------------

int add(Tape& t, int a, int b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  check_same_shape(va, vb, "add");
  Tensor out = va;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
  bool rg = req(t, a) || req(t, b);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a, b](Tape& tp) {
      const Tensor& g = tp.grad(id);
      if (req(tp, a)) accum(tp, a, g);
      if (req(tp, b)) accum(tp, b, g);
    });
  return id;
}

int sub(Tape& t, int a, int b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  check_same_shape(va, vb, "sub");
  Tensor out = va;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
  bool rg = req(t, a) || req(t, b);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a, b](Tape& tp) {
      const Tensor& g = tp.grad(id);
      if (req(tp, a)) accum(tp, a, g);
      if (req(tp, b)) {
        Tensor& gb = OpAccess::gbuf(tp, b);
        for (int64_t i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
      }
    });
  return id;
}

int scale(Tape& t, int a, double c) {
  Tensor out = t.value(a);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  bool rg = req(t, a);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a, c](Tape& tp) {
      const Tensor& g = tp.grad(id);
      Tensor& ga = OpAccess::gbuf(tp, a);
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += c * g[i];
    });
  return id;
}

int gelu(Tape& t, int a) {
  const Tensor& x = t.value(a);
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440));
  }
  bool rg = req(t, a);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a](Tape& tp) {
      const Tensor& g = tp.grad(id);
      const Tensor& x = tp.value(a);
      Tensor& ga = OpAccess::gbuf(tp, a);
      for (int64_t i = 0; i < x.numel(); ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
        const double pdf = 0.39894228040143267794 * std::exp(-0.5 * v * v);
        ga[i] += g[i] * (cdf + v * pdf);
      }
    });
  return id;
}

int reshape(Tape& t, int a, std::vector<int64_t> shape) {
  const Tensor& x = t.value(a);
  if (Tensor::numel_of(shape) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor out(std::move(shape), x.vec());
  bool rg = req(t, a);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a](Tape& tp) {
      const Tensor& g = tp.grad(id);
      Tensor& ga = OpAccess::gbuf(tp, a);
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g[i];
    });
  return id;
}

int weighted_sum(Tape& t, int a, Tensor w) {
  const Tensor& x = t.value(a);
  check_same_shape(x, w, "weighted_sum");
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x[i] * w[i];
  bool rg = req(t, a);
  int id = OpAccess::push(t, Tensor::scalar(s), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a, w = std::move(w)](Tape& tp) {
      const double g = tp.grad(id)[0];
      Tensor& ga = OpAccess::gbuf(tp, a);
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g * w[i];
    });
  return id;
}

int sum_all(Tape& t, int a) {
  const Tensor& x = t.value(a);
  double s = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) s += x[i];
  bool rg = req(t, a);
  int id = OpAccess::push(t, Tensor::scalar(s), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a](Tape& tp) {
      const double g = tp.grad(id)[0];
      Tensor& ga = OpAccess::gbuf(tp, a);
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
  return id;
}

int mean_all(Tape& t, int a) {
  const int64_t n = t.value(a).numel();
  if (n == 0) throw std::invalid_argument("mean_all: empty tensor");
  return scale(t, sum_all(t, a), 1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

int matmul(Tape& t, int a, int b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(0))
    throw std::invalid_argument("matmul: bad shapes " + Tensor::shape_str(va.shape()) + " x " +
                                Tensor::shape_str(vb.shape()));
  const int64_t m = va.dim(0), k = va.dim(1), n = vb.dim(1);
  Tensor out({m, n});
  mm_acc(va.data(), vb.data(), out.data(), m, k, n);
  bool rg = req(t, a) || req(t, b);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a, b, m, k, n](Tape& tp) {
      const Tensor& g = tp.grad(id);
      if (req(tp, a))  // dA += dC * B^T
        mm_nt_acc(g.data(), tp.value(b).data(), OpAccess::gbuf(tp, a).data(), m, n, k);
      if (req(tp, b))  // dB += A^T * dC
        mm_tn_acc(tp.value(a).data(), g.data(), OpAccess::gbuf(tp, b).data(), m, k, n);
    });
  return id;
}

int matmul_nt(Tape& t, int a, int b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(1))
    throw std::invalid_argument("matmul_nt: bad shapes");
  const int64_t m = va.dim(0), k = va.dim(1), n = vb.dim(0);
  Tensor out({m, n});
  mm_nt_acc(va.data(), vb.data(), out.data(), m, k, n);
  bool rg = req(t, a) || req(t, b);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a, b, m, k, n](Tape& tp) {
      const Tensor& g = tp.grad(id);  // (m,n)
      if (req(tp, a))                 // dA += dC * B
        mm_acc(g.data(), tp.value(b).data(), OpAccess::gbuf(tp, a).data(), m, n, k);
      if (req(tp, b))  // dB += dC^T * A
        mm_tn_acc(g.data(), tp.value(a).data(), OpAccess::gbuf(tp, b).data(), m, n, k);
    });
  return id;
}

int add_rowvec(Tape& t, int x, int v) {
  const Tensor& vx = t.value(x);
  const Tensor& vv = t.value(v);
  if (vx.rank() != 2 || vv.rank() != 1 || vx.dim(1) != vv.dim(0))
    throw std::invalid_argument("add_rowvec: bad shapes");
  const int64_t r = vx.dim(0), c = vx.dim(1);
  Tensor out = vx;
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.at(i, j) += vv[j];
  bool rg = req(t, x) || req(t, v);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, x, v, r, c](Tape& tp) {
      const Tensor& g = tp.grad(id);
      if (req(tp, x)) accum(tp, x, g);
      if (req(tp, v)) {
        Tensor& gv = OpAccess::gbuf(tp, v);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) gv[j] += g.at(i, j);
      }
    });
  return id;
}

int linear(Tape& t, int x, int w, int b) { return add_rowvec(t, matmul(t, x, w), b); }

// ---------------------------------------------------------------------------
// nn building blocks
// ---------------------------------------------------------------------------

int layer_norm(Tape& t, int x, int gamma, int beta, double eps) {
  const Tensor& vx = t.value(x);
  if (vx.rank() != 2) throw std::invalid_argument("layer_norm: expected 2-D input");
  const int64_t r = vx.dim(0), c = vx.dim(1);
  const Tensor& g = t.value(gamma);
  const Tensor& bt = t.value(beta);
  if (g.numel() != c || bt.numel() != c) throw std::invalid_argument("layer_norm: affine size");

  Tensor xhat({r, c});
  Tensor inv_std({r});
  Tensor out({r, c});
  for (int64_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (int64_t j = 0; j < c; ++j) mean += vx.at(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double d = vx.at(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int64_t j = 0; j < c; ++j) {
      const double xh = (vx.at(i, j) - mean) * is;
      xhat.at(i, j) = xh;
      out.at(i, j) = g[j] * xh + bt[j];
    }
  }
  bool rg = req(t, x) || req(t, gamma) || req(t, beta);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id,
                       [id, x, gamma, beta, r, c, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)](Tape& tp) {
                         const Tensor& go = tp.grad(id);
                         const Tensor& g = tp.value(gamma);
                         if (req(tp, gamma)) {
                           Tensor& gg = OpAccess::gbuf(tp, gamma);
                           for (int64_t i = 0; i < r; ++i)
                             for (int64_t j = 0; j < c; ++j) gg[j] += go.at(i, j) * xhat.at(i, j);
                         }
                         if (req(tp, beta)) {
                           Tensor& gb = OpAccess::gbuf(tp, beta);
                           for (int64_t i = 0; i < r; ++i)
                             for (int64_t j = 0; j < c; ++j) gb[j] += go.at(i, j);
                         }
                         if (req(tp, x)) {
                           Tensor& gx = OpAccess::gbuf(tp, x);
                           for (int64_t i = 0; i < r; ++i) {
                             double m1 = 0.0, m2 = 0.0;  // mean(dxh), mean(dxh*xhat)
                             for (int64_t j = 0; j < c; ++j) {
                               const double dxh = go.at(i, j) * g[j];
                               m1 += dxh;
                               m2 += dxh * xhat.at(i, j);
                             }
                             m1 /= static_cast<double>(c);
                             m2 /= static_cast<double>(c);
                             for (int64_t j = 0; j < c; ++j) {
                               const double dxh = go.at(i, j) * g[j];
                               gx.at(i, j) += inv_std[i] * (dxh - m1 - xhat.at(i, j) * m2);
                             }
                           }
                         }
                       });
  return id;
}

int dropout(Tape& t, int x, double rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const Tensor& vx = t.value(x);
  const double keep = 1.0 - rate;
  Tensor mask(vx.shape());
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = (rng.uniform() < keep) ? 1.0 / keep : 0.0;
  Tensor out(vx.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = vx[i] * mask[i];
  bool rg = req(t, x);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, x, mask = std::move(mask)](Tape& tp) {
      const Tensor& g = tp.grad(id);
      Tensor& gx = OpAccess::gbuf(tp, x);
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[i] * mask[i];
    });
  return id;
}

int multihead_attention(Tape& t, int q, int k, int v, const Tensor& mask, int n_heads) {
  const Tensor& vq = t.value(q);
  const Tensor& vk = t.value(k);
  const Tensor& vv = t.value(v);
  if (vq.rank() != 3) throw std::invalid_argument("attention: expected (B,T,d)");
  check_same_shape(vq, vk, "attention q/k");
  check_same_shape(vq, vv, "attention q/v");
  const int64_t b = vq.dim(0), tt = vq.dim(1), d = vq.dim(2);
  if (n_heads <= 0 || d % n_heads != 0)
    throw std::invalid_argument("attention: n_heads must divide model dim");
  if (mask.rank() != 2 || mask.dim(0) != b || mask.dim(1) != tt)
    throw std::invalid_argument("attention: mask shape");
  const int64_t dk = d / n_heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dk));

  // softmax over valid keys only; probs stored for backward.
  // probs row layout: ((bi * n_heads) + h) * tt + i
  Tensor probs({b * n_heads * tt, tt});
  Tensor out({b, tt, d});
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t h = 0; h < n_heads; ++h) {
      for (int64_t i = 0; i < tt; ++i) {
        const int64_t prow = (bi * n_heads + h) * tt + i;
        const double* qrow = vq.data() + (bi * tt + i) * d + h * dk;
        double mx = -1e300;
        for (int64_t j = 0; j < tt; ++j) {
          if (mask.at(bi, j) == 0.0) continue;
          const double* krow = vk.data() + (bi * tt + j) * d + h * dk;
          double s = 0.0;
          for (int64_t p = 0; p < dk; ++p) s += qrow[p] * krow[p];
          s *= scl;
          probs.at(prow, j) = s;  // stash raw score temporarily
          if (s > mx) mx = s;
        }
        double denom = 0.0;
        for (int64_t j = 0; j < tt; ++j) {
          if (mask.at(bi, j) == 0.0) {
            probs.at(prow, j) = 0.0;
            continue;
          }
          const double e = std::exp(probs.at(prow, j) - mx);
          probs.at(prow, j) = e;
          denom += e;
        }
        if (denom > 0.0) {
          const double inv = 1.0 / denom;
          for (int64_t j = 0; j < tt; ++j) probs.at(prow, j) *= inv;
        }
        double* orow = out.data() + (bi * tt + i) * d + h * dk;
        for (int64_t j = 0; j < tt; ++j) {
          const double p = probs.at(prow, j);
          if (p == 0.0) continue;
          const double* vrow = vv.data() + (bi * tt + j) * d + h * dk;
          for (int64_t pp = 0; pp < dk; ++pp) orow[pp] += p * vrow[pp];
        }
      }
    }
  }

  bool rg = req(t, q) || req(t, k) || req(t, v);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(
        t, id,
        [id, q, k, v, b, tt, d, dk, n_heads, scl, probs = std::move(probs)](Tape& tp) {
          const Tensor& go = tp.grad(id);
          const bool nq = req(tp, q), nk = req(tp, k), nv = req(tp, v);
          Tensor* gq = nq ? &OpAccess::gbuf(tp, q) : nullptr;
          Tensor* gk = nk ? &OpAccess::gbuf(tp, k) : nullptr;
          Tensor* gv = nv ? &OpAccess::gbuf(tp, v) : nullptr;
          const Tensor& vq = tp.value(q);
          const Tensor& vk = tp.value(k);
          const Tensor& vv = tp.value(v);
          std::vector<double> dp(static_cast<size_t>(tt));
          for (int64_t bi = 0; bi < b; ++bi) {
            for (int64_t h = 0; h < n_heads; ++h) {
              for (int64_t i = 0; i < tt; ++i) {
                const int64_t prow = (bi * n_heads + h) * tt + i;
                const double* gorow = go.data() + (bi * tt + i) * d + h * dk;
                // dP[i,j] = dO_i . V_j ; dV_j += P[i,j] dO_i
                double dot_pp = 0.0;  // sum_j dP[i,j] P[i,j]
                for (int64_t j = 0; j < tt; ++j) {
                  const double p = probs.at(prow, j);
                  if (p == 0.0) {
                    dp[static_cast<size_t>(j)] = 0.0;
                    continue;
                  }
                  const double* vrow = vv.data() + (bi * tt + j) * d + h * dk;
                  double acc = 0.0;
                  for (int64_t pp = 0; pp < dk; ++pp) acc += gorow[pp] * vrow[pp];
                  dp[static_cast<size_t>(j)] = acc;
                  dot_pp += acc * p;
                  if (nv) {
                    double* gvrow = gv->data() + (bi * tt + j) * d + h * dk;
                    for (int64_t pp = 0; pp < dk; ++pp) gvrow[pp] += p * gorow[pp];
                  }
                }
                if (!nq && !nk) continue;
                const double* qrow = vq.data() + (bi * tt + i) * d + h * dk;
                for (int64_t j = 0; j < tt; ++j) {
                  const double p = probs.at(prow, j);
                  if (p == 0.0) continue;
                  const double ds = p * (dp[static_cast<size_t>(j)] - dot_pp) * scl;
                  if (ds == 0.0) continue;
                  const double* krow = vk.data() + (bi * tt + j) * d + h * dk;
                  if (nq) {
                    double* gqrow = gq->data() + (bi * tt + i) * d + h * dk;
                    for (int64_t pp = 0; pp < dk; ++pp) gqrow[pp] += ds * krow[pp];
                  }
                  if (nk) {
                    double* gkrow = gk->data() + (bi * tt + j) * d + h * dk;
                    for (int64_t pp = 0; pp < dk; ++pp) gkrow[pp] += ds * qrow[pp];
                  }
                }
              }
            }
          }
        });
  return id;
}

int masked_mean_pool(Tape& t, int x, const Tensor& mask) {
  const Tensor& vx = t.value(x);
  if (vx.rank() != 3) throw std::invalid_argument("masked_mean_pool: expected (B,T,d)");
  const int64_t b = vx.dim(0), tt = vx.dim(1), d = vx.dim(2);
  if (mask.rank() != 2 || mask.dim(0) != b || mask.dim(1) != tt)
    throw std::invalid_argument("masked_mean_pool: mask shape");
  Tensor out({b, d});
  Tensor counts({b});
  for (int64_t bi = 0; bi < b; ++bi) {
    double n = 0.0;
    for (int64_t ti = 0; ti < tt; ++ti) {
      if (mask.at(bi, ti) == 0.0) continue;
      n += 1.0;
      for (int64_t j = 0; j < d; ++j) out.at(bi, j) += vx.at(bi, ti, j);
    }
    counts[bi] = n;
    if (n > 0.0)
      for (int64_t j = 0; j < d; ++j) out.at(bi, j) /= n;
  }
  bool rg = req(t, x);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id,
                       [id, x, b, tt, d, mask, counts = std::move(counts)](Tape& tp) {
                         const Tensor& g = tp.grad(id);
                         Tensor& gx = OpAccess::gbuf(tp, x);
                         for (int64_t bi = 0; bi < b; ++bi) {
                           if (counts[bi] == 0.0) continue;
                           const double inv = 1.0 / counts[bi];
                           for (int64_t ti = 0; ti < tt; ++ti) {
                             if (mask.at(bi, ti) == 0.0) continue;
                             for (int64_t j = 0; j < d; ++j)
                               gx.at(bi, ti, j) += g.at(bi, j) * inv;
                           }
                         }
                       });
  return id;
}

int concat_time(Tape& t, const std::vector<int>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_time: no inputs");
  const int64_t b = t.value(xs[0]).dim(0), d = t.value(xs[0]).dim(2);
  int64_t total = 0;
  for (int x : xs) {
    const Tensor& vx = t.value(x);
    if (vx.rank() != 3 || vx.dim(0) != b || vx.dim(2) != d)
      throw std::invalid_argument("concat_time: incompatible shapes");
    total += vx.dim(1);
  }
  Tensor out({b, total, d});
  int64_t off = 0;
  for (int x : xs) {
    const Tensor& vx = t.value(x);
    const int64_t ti = vx.dim(1);
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t s = 0; s < ti; ++s)
        for (int64_t j = 0; j < d; ++j) out.at(bi, off + s, j) = vx.at(bi, s, j);
    off += ti;
  }
  bool rg = false;
  for (int x : xs) rg = rg || req(t, x);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, xs, b, d](Tape& tp) {
      const Tensor& g = tp.grad(id);
      int64_t off = 0;
      for (int x : xs) {
        const int64_t ti = tp.value(x).dim(1);
        if (req(tp, x)) {
          Tensor& gx = OpAccess::gbuf(tp, x);
          for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t s = 0; s < ti; ++s)
              for (int64_t j = 0; j < d; ++j) gx.at(bi, s, j) += g.at(bi, off + s, j);
        }
        off += ti;
      }
    });
  return id;
}

int concat_cols(Tape& t, const std::vector<int>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const int64_t b = t.value(xs[0]).dim(0);
  int64_t total = 0;
  for (int x : xs) {
    const Tensor& vx = t.value(x);
    if (vx.rank() != 2 || vx.dim(0) != b)
      throw std::invalid_argument("concat_cols: incompatible shapes");
    total += vx.dim(1);
  }
  Tensor out({b, total});
  int64_t off = 0;
  for (int x : xs) {
    const Tensor& vx = t.value(x);
    const int64_t c = vx.dim(1);
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t j = 0; j < c; ++j) out.at(bi, off + j) = vx.at(bi, j);
    off += c;
  }
  bool rg = false;
  for (int x : xs) rg = rg || req(t, x);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, xs, b](Tape& tp) {
      const Tensor& g = tp.grad(id);
      int64_t off = 0;
      for (int x : xs) {
        const int64_t c = tp.value(x).dim(1);
        if (req(tp, x)) {
          Tensor& gx = OpAccess::gbuf(tp, x);
          for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t j = 0; j < c; ++j) gx.at(bi, j) += g.at(bi, off + j);
        }
        off += c;
      }
    });
  return id;
}

int concat_rows(Tape& t, int a, int b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  if (va.rank() != 2 || vb.rank() != 2 || va.dim(1) != vb.dim(1))
    throw std::invalid_argument("concat_rows: incompatible shapes");
  const int64_t r1 = va.dim(0), r2 = vb.dim(0), c = va.dim(1);
  Tensor out({r1 + r2, c});
  for (int64_t i = 0; i < r1 * c; ++i) out[i] = va[i];
  for (int64_t i = 0; i < r2 * c; ++i) out[r1 * c + i] = vb[i];
  bool rg = req(t, a) || req(t, b);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a, b, r1, r2, c](Tape& tp) {
      const Tensor& g = tp.grad(id);
      if (req(tp, a)) {
        Tensor& ga = OpAccess::gbuf(tp, a);
        for (int64_t i = 0; i < r1 * c; ++i) ga[i] += g[i];
      }
      if (req(tp, b)) {
        Tensor& gb = OpAccess::gbuf(tp, b);
        for (int64_t i = 0; i < r2 * c; ++i) gb[i] += g[r1 * c + i];
      }
    });
  return id;
}

int add_segment_embed(Tape& t, int x, int emb, const std::vector<int>& seg) {
  const Tensor& vx = t.value(x);
  const Tensor& ve = t.value(emb);
  if (vx.rank() != 3 || ve.rank() != 2 || vx.dim(2) != ve.dim(1))
    throw std::invalid_argument("add_segment_embed: bad shapes");
  const int64_t b = vx.dim(0), tt = vx.dim(1), d = vx.dim(2), s = ve.dim(0);
  if (static_cast<int64_t>(seg.size()) != tt)
    throw std::invalid_argument("add_segment_embed: seg length");
  for (int si : seg)
    if (si < 0 || si >= s) throw std::invalid_argument("add_segment_embed: seg id out of range");
  Tensor out = vx;
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ti = 0; ti < tt; ++ti)
      for (int64_t j = 0; j < d; ++j) out.at(bi, ti, j) += ve.at(seg[static_cast<size_t>(ti)], j);
  bool rg = req(t, x) || req(t, emb);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, x, emb, seg, b, tt, d](Tape& tp) {
      const Tensor& g = tp.grad(id);
      if (req(tp, x)) accum(tp, x, g);
      if (req(tp, emb)) {
        Tensor& ge = OpAccess::gbuf(tp, emb);
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t ti = 0; ti < tt; ++ti)
            for (int64_t j = 0; j < d; ++j)
              ge.at(seg[static_cast<size_t>(ti)], j) += g.at(bi, ti, j);
      }
    });
  return id;
}

// ---------------------------------------------------------------------------
// contrastive / losses
// ---------------------------------------------------------------------------

int l2_normalize_rows(Tape& t, int x) {
  const Tensor& vx = t.value(x);
  if (vx.rank() != 2) throw std::invalid_argument("l2_normalize_rows: expected 2-D");
  const int64_t r = vx.dim(0), c = vx.dim(1);
  Tensor out({r, c});
  Tensor norms({r});
  for (int64_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += vx.at(i, j) * vx.at(i, j);
    const double nrm = std::sqrt(s);
    norms[i] = nrm;
    if (nrm > 0.0)
      for (int64_t j = 0; j < c; ++j) out.at(i, j) = vx.at(i, j) / nrm;
  }
  bool rg = req(t, x);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, x, r, c, norms = std::move(norms)](Tape& tp) {
      const Tensor& g = tp.grad(id);
      const Tensor& y = tp.value(id);
      Tensor& gx = OpAccess::gbuf(tp, x);
      for (int64_t i = 0; i < r; ++i) {
        if (norms[i] == 0.0) continue;  // subgradient 0 for the zero row
        double ydg = 0.0;
        for (int64_t j = 0; j < c; ++j) ydg += y.at(i, j) * g.at(i, j);
        const double inv = 1.0 / norms[i];
        for (int64_t j = 0; j < c; ++j) gx.at(i, j) += (g.at(i, j) - y.at(i, j) * ydg) * inv;
      }
    });
  return id;
}

int rowwise_dot(Tape& t, int a, int b) {
  const Tensor& va = t.value(a);
  const Tensor& vb = t.value(b);
  check_same_shape(va, vb, "rowwise_dot");
  if (va.rank() != 2) throw std::invalid_argument("rowwise_dot: expected 2-D");
  const int64_t r = va.dim(0), c = va.dim(1);
  Tensor out({r});
  for (int64_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < c; ++j) s += va.at(i, j) * vb.at(i, j);
    out[i] = s;
  }
  bool rg = req(t, a) || req(t, b);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, a, b, r, c](Tape& tp) {
      const Tensor& g = tp.grad(id);
      const Tensor& va = tp.value(a);
      const Tensor& vb = tp.value(b);
      if (req(tp, a)) {
        Tensor& ga = OpAccess::gbuf(tp, a);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) ga.at(i, j) += g[i] * vb.at(i, j);
      }
      if (req(tp, b)) {
        Tensor& gb = OpAccess::gbuf(tp, b);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) gb.at(i, j) += g[i] * va.at(i, j);
      }
    });
  return id;
}

int logsumexp_offdiag(Tape& t, int s) {
  const Tensor& vs = t.value(s);
  if (vs.rank() != 2 || vs.dim(0) != vs.dim(1))
    throw std::invalid_argument("logsumexp_offdiag: expected square matrix");
  const int64_t k = vs.dim(0);
  if (k < 2) throw std::invalid_argument("logsumexp_offdiag: need at least 2 rows");
  Tensor out({k});
  for (int64_t i = 0; i < k; ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < k; ++j) {
      if (j == i) continue;
      mx = std::max(mx, vs.at(i, j));
    }
    double acc = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      if (j == i) continue;
      acc += std::exp(vs.at(i, j) - mx);
    }
    out[i] = mx + std::log(acc);
  }
  bool rg = req(t, s);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, s, k](Tape& tp) {
      const Tensor& g = tp.grad(id);
      const Tensor& vs = tp.value(s);
      const Tensor& out = tp.value(id);
      Tensor& gs = OpAccess::gbuf(tp, s);
      for (int64_t i = 0; i < k; ++i) {
        if (g[i] == 0.0) continue;
        for (int64_t j = 0; j < k; ++j) {
          if (j == i) continue;
          gs.at(i, j) += g[i] * std::exp(vs.at(i, j) - out[i]);
        }
      }
    });
  return id;
}

int gather_pair(Tape& t, int s) {
  const Tensor& vs = t.value(s);
  if (vs.rank() != 2 || vs.dim(0) != vs.dim(1) || vs.dim(0) % 2 != 0)
    throw std::invalid_argument("gather_pair: expected even square matrix");
  const int64_t n = vs.dim(0), k = n / 2;
  Tensor out({n});
  for (int64_t i = 0; i < n; ++i) out[i] = vs.at(i, (i + k) % n);
  bool rg = req(t, s);
  int id = OpAccess::push(t, std::move(out), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, s, n, k](Tape& tp) {
      const Tensor& g = tp.grad(id);
      Tensor& gs = OpAccess::gbuf(tp, s);
      for (int64_t i = 0; i < n; ++i) gs.at(i, (i + k) % n) += g[i];
    });
  return id;
}

int l1_loss(Tape& t, int pred, const Tensor& target) {
  const Tensor& vp = t.value(pred);
  if (vp.rank() != 1 || !vp.same_shape(target))
    throw std::invalid_argument("l1_loss: prediction/target shape mismatch");
  const int64_t n = vp.numel();
  if (n == 0) throw std::invalid_argument("l1_loss: empty input");
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += std::abs(vp[i] - target[i]);
  s /= static_cast<double>(n);
  bool rg = req(t, pred);
  int id = OpAccess::push(t, Tensor::scalar(s), rg);
  if (rg)
    OpAccess::set_back(t, id, [id, pred, target, n](Tape& tp) {
      const double g = tp.grad(id)[0];
      const Tensor& vp = tp.value(pred);
      Tensor& gp = OpAccess::gbuf(tp, pred);
      const double inv = 1.0 / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) {
        const double d = vp[i] - target[i];
        const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        gp[i] += g * sign * inv;
      }
    });
  return id;
}

}  // namespace casp::ad
