#include <cmath>

#include <doctest.h>

#include "casp/autodiff.hpp"
#include "casp/rng.hpp"
#include "casp/tensor.hpp"
#include "test_util.hpp"

using casp::Rng;
using casp::Tensor;
using testutil::check_gradients;
using testutil::GraphSpec;
using testutil::random_tensor;
namespace ad = casp::ad;

namespace {

// Reduce an arbitrary node to a scalar with fixed random weights so every
// output element contributes to the gradient.
int reduce(ad::Tape& t, int id, const Tensor& w) { return ad::weighted_sum(t, id, w); }

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(11);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({3, 4}, rng);
  const Tensor w = random_tensor({3, 4}, rng);

  check_gradients({a, b}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ia = t.leaf(xs[0], true);
    const int ib = t.leaf(xs[1], true);
    s.leaves = {ia, ib};
    s.root = reduce(t, ad::add(t, ia, ib), w);
    return s;
  });
  check_gradients({a, b}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ia = t.leaf(xs[0], true);
    const int ib = t.leaf(xs[1], true);
    s.leaves = {ia, ib};
    s.root = reduce(t, ad::sub(t, ia, ib), w);
    return s;
  });
  check_gradients({a}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ia = t.leaf(xs[0], true);
    s.leaves = {ia};
    s.root = reduce(t, ad::scale(t, ia, -1.7), w);
    return s;
  });
  check_gradients({a}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ia = t.leaf(xs[0], true);
    s.leaves = {ia};
    s.root = reduce(t, ad::gelu(t, ia), w);
    return s;
  });
  check_gradients({a}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ia = t.leaf(xs[0], true);
    s.leaves = {ia};
    s.root = ad::sum_all(t, ia);
    return s;
  });
  check_gradients({a}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ia = t.leaf(xs[0], true);
    s.leaves = {ia};
    s.root = ad::mean_all(t, ia);
    return s;
  });
  Rng wr(5);
  const Tensor w43 = random_tensor({4, 3}, wr);
  check_gradients({a}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ia = t.leaf(xs[0], true);
    s.leaves = {ia};
    s.root = reduce(t, ad::reshape(t, ia, {4, 3}), w43);
    return s;
  });
}

TEST_CASE("gelu matches the exact Gaussian cdf form") {
  ad::Tape t;
  const int x = t.leaf(Tensor({3}, {0.0, 1.0, -2.0}));
  const Tensor y = t.value(ad::gelu(t, x));
  CHECK(y[0] == doctest::Approx(0.0));
  CHECK(y[1] == doctest::Approx(0.8413447460685429));  // 1 * Phi(1)
  CHECK(y[2] == doctest::Approx(-2.0 * 0.022750131948179195));
}

TEST_CASE("matmul family matches finite differences") {
  Rng rng(12);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  const Tensor bt = random_tensor({2, 4}, rng);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor wlin = random_tensor({4, 2}, rng);
  const Tensor bias = random_tensor({2}, rng);
  const Tensor w32 = random_tensor({3, 2}, rng);

  check_gradients({a, b}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ia = t.leaf(xs[0], true);
    const int ib = t.leaf(xs[1], true);
    s.leaves = {ia, ib};
    s.root = reduce(t, ad::matmul(t, ia, ib), w32);
    return s;
  });
  check_gradients({a, bt}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ia = t.leaf(xs[0], true);
    const int ib = t.leaf(xs[1], true);
    s.leaves = {ia, ib};
    s.root = reduce(t, ad::matmul_nt(t, ia, ib), w32);
    return s;
  });
  check_gradients({x, wlin, bias}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ix = t.leaf(xs[0], true);
    const int iw = t.leaf(xs[1], true);
    const int ib = t.leaf(xs[2], true);
    s.leaves = {ix, iw, ib};
    s.root = reduce(t, ad::linear(t, ix, iw, ib), w32);
    return s;
  });
}

TEST_CASE("add_rowvec gradient accumulates over rows") {
  Rng rng(13);
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor v = random_tensor({4}, rng);
  const Tensor w = random_tensor({3, 4}, rng);
  check_gradients({x, v}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ix = t.leaf(xs[0], true);
    const int iv = t.leaf(xs[1], true);
    s.leaves = {ix, iv};
    s.root = reduce(t, ad::add_rowvec(t, ix, iv), w);
    return s;
  });
}

TEST_CASE("layer_norm matches finite differences") {
  Rng rng(14);
  const Tensor x = random_tensor({4, 6}, rng);
  const Tensor g = random_tensor({6}, rng, 0.5);
  const Tensor b = random_tensor({6}, rng, 0.5);
  const Tensor w = random_tensor({4, 6}, rng);
  check_gradients({x, g, b}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ix = t.leaf(xs[0], true);
    const int ig = t.leaf(xs[1], true);
    const int ib = t.leaf(xs[2], true);
    s.leaves = {ix, ig, ib};
    s.root = reduce(t, ad::layer_norm(t, ix, ig, ib), w);
    return s;
  });
}

TEST_CASE("layer_norm output has zero mean and unit variance before affine") {
  Rng rng(15);
  ad::Tape t;
  const int x = t.leaf(random_tensor({2, 8}, rng));
  const int g = t.leaf(Tensor::full({8}, 1.0));
  const int b = t.leaf(Tensor::zeros({8}));
  const Tensor y = t.value(ad::layer_norm(t, x, g, b));
  for (int64_t i = 0; i < 2; ++i) {
    double mean = 0.0, var = 0.0;
    for (int64_t j = 0; j < 8; ++j) mean += y.at(i, j);
    mean /= 8.0;
    for (int64_t j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= 8.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks it slightly
  }
}

TEST_CASE("dropout is identity in eval mode and rescales kept entries in training") {
  Rng rng(16);
  const Tensor x = random_tensor({5, 7}, rng);
  ad::Tape t;
  const int ix = t.leaf(x);
  Rng r1(99);
  const Tensor eval_out = t.value(ad::dropout(t, ix, 0.5, r1, false));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(eval_out[i] == x[i]);

  Rng r2(99);
  const Tensor train_out = t.value(ad::dropout(t, ix, 0.5, r2, true));
  int64_t kept = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const bool zero = train_out[i] == 0.0;
    const bool scaled = std::abs(train_out[i] - 2.0 * x[i]) < 1e-12;
    CHECK((zero || scaled));
    kept += scaled ? 1 : 0;
  }
  CHECK(kept > 0);

  // same seed reproduces the same mask
  Rng r3(99);
  const Tensor again = t.value(ad::dropout(t, ix, 0.5, r3, true));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(again[i] == train_out[i]);
}

TEST_CASE("dropout gradient uses the saved mask") {
  Rng rng(17);
  const Tensor x = random_tensor({4, 4}, rng);
  const Tensor w = random_tensor({4, 4}, rng);
  const Rng r0(4242);
  check_gradients({x}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ix = t.leaf(xs[0], true);
    s.leaves = {ix};
    Rng r = r0;  // identical mask for every evaluation
    s.root = reduce(t, ad::dropout(t, ix, 0.3, r, true), w);
    return s;
  });
}

TEST_CASE("multihead_attention matches finite differences under masking") {
  Rng rng(18);
  const int64_t B = 2, T = 3, D = 4;
  const Tensor q = random_tensor({B, T, D}, rng);
  const Tensor k = random_tensor({B, T, D}, rng);
  const Tensor v = random_tensor({B, T, D}, rng);
  Tensor mask({B, T});
  mask.at(0, 0) = 1;
  mask.at(0, 1) = 1;
  mask.at(0, 2) = 0;  // padded step
  mask.at(1, 0) = 1;
  mask.at(1, 1) = 1;
  mask.at(1, 2) = 1;
  const Tensor w = random_tensor({B, T, D}, rng);
  check_gradients({q, k, v}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int iq = t.leaf(xs[0], true);
    const int ik = t.leaf(xs[1], true);
    const int iv = t.leaf(xs[2], true);
    s.leaves = {iq, ik, iv};
    s.root = reduce(t, ad::multihead_attention(t, iq, ik, iv, mask, 2), w);
    return s;
  });
}

TEST_CASE("masked keys cannot influence attention output") {
  Rng rng(19);
  const int64_t B = 1, T = 4, D = 4;
  Tensor q = random_tensor({B, T, D}, rng);
  Tensor k = random_tensor({B, T, D}, rng);
  Tensor v = random_tensor({B, T, D}, rng);
  Tensor mask({B, T});
  mask.at(0, 0) = 1;
  mask.at(0, 1) = 1;
  mask.at(0, 2) = 1;
  mask.at(0, 3) = 0;

  auto run = [&](const Tensor& kk, const Tensor& vv) {
    ad::Tape t;
    return t.value(
        ad::multihead_attention(t, t.leaf(q), t.leaf(kk), t.leaf(vv), mask, 2));
  };
  const Tensor base = run(k, v);
  Tensor k2 = k, v2 = v;
  for (int64_t j = 0; j < D; ++j) {
    k2.at(0, 3, j) = 1e6;
    v2.at(0, 3, j) = -1e6;
  }
  const Tensor poked = run(k2, v2);
  for (int64_t i = 0; i < base.numel(); ++i) CHECK(base[i] == poked[i]);
}

TEST_CASE("masked_mean_pool averages only valid steps") {
  ad::Tape t;
  Tensor x({1, 3, 2});
  x.at(0, 0, 0) = 1.0;
  x.at(0, 0, 1) = 2.0;
  x.at(0, 1, 0) = 3.0;
  x.at(0, 1, 1) = 4.0;
  x.at(0, 2, 0) = 100.0;  // padded, must not contribute
  x.at(0, 2, 1) = 100.0;
  Tensor mask({1, 3});
  mask.at(0, 0) = 1;
  mask.at(0, 1) = 1;
  const Tensor y = t.value(ad::masked_mean_pool(t, t.leaf(x), mask));
  CHECK(y.at(0, 0) == doctest::Approx(2.0));
  CHECK(y.at(0, 1) == doctest::Approx(3.0));

  Rng rng(20);
  const Tensor xr = random_tensor({2, 3, 4}, rng);
  Tensor m({2, 3});
  m.at(0, 0) = 1;
  m.at(0, 1) = 1;
  m.at(1, 0) = 1;
  m.at(1, 1) = 1;
  m.at(1, 2) = 1;
  const Tensor w = random_tensor({2, 4}, rng);
  check_gradients({xr}, [&](ad::Tape& tt, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ix = tt.leaf(xs[0], true);
    s.leaves = {ix};
    s.root = reduce(tt, ad::masked_mean_pool(tt, ix, m), w);
    return s;
  });
}

TEST_CASE("concat ops route gradients to their slices") {
  Rng rng(21);
  const Tensor a = random_tensor({2, 2, 3}, rng);
  const Tensor b = random_tensor({2, 4, 3}, rng);
  const Tensor wt = random_tensor({2, 6, 3}, rng);
  check_gradients({a, b}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ia = t.leaf(xs[0], true);
    const int ib = t.leaf(xs[1], true);
    s.leaves = {ia, ib};
    s.root = reduce(t, ad::concat_time(t, {ia, ib}), wt);
    return s;
  });

  const Tensor c = random_tensor({3, 2}, rng);
  const Tensor d = random_tensor({3, 5}, rng);
  const Tensor wc = random_tensor({3, 7}, rng);
  check_gradients({c, d}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ic = t.leaf(xs[0], true);
    const int id = t.leaf(xs[1], true);
    s.leaves = {ic, id};
    s.root = reduce(t, ad::concat_cols(t, {ic, id}), wc);
    return s;
  });

  const Tensor e = random_tensor({2, 4}, rng);
  const Tensor f = random_tensor({3, 4}, rng);
  const Tensor wr = random_tensor({5, 4}, rng);
  check_gradients({e, f}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ie = t.leaf(xs[0], true);
    const int if_ = t.leaf(xs[1], true);
    s.leaves = {ie, if_};
    s.root = reduce(t, ad::concat_rows(t, ie, if_), wr);
    return s;
  });
}

TEST_CASE("add_segment_embed adds one embedding row per time step") {
  Rng rng(22);
  const Tensor x = random_tensor({2, 4, 3}, rng);
  const Tensor emb = random_tensor({2, 3}, rng);
  const std::vector<int> seg = {0, 0, 1, 1};
  const Tensor w = random_tensor({2, 4, 3}, rng);
  check_gradients({x, emb}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ix = t.leaf(xs[0], true);
    const int ie = t.leaf(xs[1], true);
    s.leaves = {ix, ie};
    s.root = reduce(t, ad::add_segment_embed(t, ix, ie, seg), w);
    return s;
  });

  ad::Tape t;
  const Tensor y =
      t.value(ad::add_segment_embed(t, t.leaf(x), t.leaf(emb), seg));
  CHECK(y.at(1, 2, 0) == doctest::Approx(x.at(1, 2, 0) + emb.at(1, 0)));
  CHECK(y.at(0, 0, 2) == doctest::Approx(x.at(0, 0, 2) + emb.at(0, 2)));
}

TEST_CASE("contrastive helper ops match finite differences") {
  Rng rng(23);
  const Tensor x = random_tensor({4, 3}, rng);
  const Tensor w4 = random_tensor({4}, rng);
  const Tensor w43 = random_tensor({4, 3}, rng);

  check_gradients({x}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ix = t.leaf(xs[0], true);
    s.leaves = {ix};
    s.root = reduce(t, ad::l2_normalize_rows(t, ix), w43);
    return s;
  });

  const Tensor y = random_tensor({4, 3}, rng);
  check_gradients({x, y}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ix = t.leaf(xs[0], true);
    const int iy = t.leaf(xs[1], true);
    s.leaves = {ix, iy};
    s.root = reduce(t, ad::rowwise_dot(t, ix, iy), w4);
    return s;
  });

  const Tensor sq = random_tensor({4, 4}, rng);
  check_gradients({sq}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int is = t.leaf(xs[0], true);
    s.leaves = {is};
    s.root = reduce(t, ad::logsumexp_offdiag(t, is), w4);
    return s;
  });
  check_gradients({sq}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int is = t.leaf(xs[0], true);
    s.leaves = {is};
    s.root = reduce(t, ad::gather_pair(t, is), w4);
    return s;
  });
}

TEST_CASE("l2_normalize_rows leaves zero rows at zero with zero gradient") {
  ad::Tape t;
  Tensor x({2, 3});
  x.at(1, 0) = 3.0;
  x.at(1, 1) = 4.0;
  const int ix = t.leaf(x, true);
  const int iy = ad::l2_normalize_rows(t, ix);
  const Tensor& y = t.value(iy);
  CHECK(y.at(0, 0) == 0.0);
  CHECK(y.at(0, 1) == 0.0);
  CHECK(y.at(1, 0) == doctest::Approx(0.6));
  CHECK(y.at(1, 1) == doctest::Approx(0.8));
  const int root = ad::sum_all(t, iy);
  t.backward(root);
  const Tensor& g = t.grad(ix);
  CHECK(g.at(0, 0) == 0.0);
  CHECK(g.at(0, 2) == 0.0);
}

TEST_CASE("gather_pair picks the diagonal partner i+K mod 2K") {
  ad::Tape t;
  Tensor s({4, 4});
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) s.at(i, j) = 10.0 * static_cast<double>(i) + static_cast<double>(j);
  const Tensor out = t.value(ad::gather_pair(t, t.leaf(s)));
  CHECK(out[0] == 2.0);   // (0,2)
  CHECK(out[1] == 13.0);  // (1,3)
  CHECK(out[2] == 20.0);  // (2,0)
  CHECK(out[3] == 31.0);  // (3,1)
}

TEST_CASE("l1_loss value and subgradient away from ties") {
  ad::Tape t;
  const int pred = t.leaf(Tensor({2}, {1.0, -1.0}), true);
  const int loss = ad::l1_loss(t, pred, Tensor({2}, {0.0, 0.0}));
  CHECK(t.value(loss)[0] == doctest::Approx(1.0));
  t.backward(loss);
  CHECK(t.grad(pred)[0] == doctest::Approx(0.5));
  CHECK(t.grad(pred)[1] == doctest::Approx(-0.5));

  Rng rng(24);
  Tensor p = random_tensor({6}, rng);
  Tensor y = random_tensor({6}, rng);
  for (int64_t i = 0; i < 6; ++i) {
    if (std::abs(p[i] - y[i]) < 0.1) p[i] += 0.5;  // keep away from the kink
  }
  check_gradients({p}, [&](ad::Tape& tt, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ip = tt.leaf(xs[0], true);
    s.leaves = {ip};
    s.root = ad::l1_loss(tt, ip, y);
    return s;
  });
}

TEST_CASE("weighted_sum matches finite differences") {
  Rng rng(25);
  const Tensor x = random_tensor({3, 5}, rng);
  const Tensor w = random_tensor({3, 5}, rng);
  check_gradients({x}, [&](ad::Tape& t, const std::vector<Tensor>& xs) {
    GraphSpec s;
    const int ix = t.leaf(xs[0], true);
    s.leaves = {ix};
    s.root = ad::weighted_sum(t, ix, w);
    return s;
  });
}

TEST_CASE("backward accumulates through shared subexpressions") {
  // f(x) = sum(x + x); df/dx = 2 everywhere
  ad::Tape t;
  const int x = t.leaf(Tensor({3}, {1.0, 2.0, 3.0}), true);
  const int y = ad::add(t, x, x);
  const int root = ad::sum_all(t, y);
  t.backward(root);
  for (int64_t i = 0; i < 3; ++i) CHECK(t.grad(x)[i] == doctest::Approx(2.0));
}

}  // TEST_SUITE
