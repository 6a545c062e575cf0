#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "stepfill/nn.hpp"
#include "stepfill/rng.hpp"

using namespace stepfill;

namespace {

Vec random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Naive direct cross-correlation used as the oracle: indexes the padded
// signal explicitly instead of clamping loop bounds.
Vec conv_oracle(const Vec& x, const Vec& w, int pad) {
  std::int64_t n = static_cast<std::int64_t>(x.size());
  std::int64_t k = static_cast<std::int64_t>(w.size());
  std::int64_t out_len = n + 2 * pad - k + 1;
  Vec y(static_cast<std::size_t>(out_len), 0.0);
  for (std::int64_t i = 0; i < out_len; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      std::int64_t src = i + j - pad;
      double xv = (src >= 0 && src < n) ? x[static_cast<std::size_t>(src)] : 0.0;
      acc += w[static_cast<std::size_t>(j)] * xv;
    }
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

}  // namespace

TEST_CASE("conv1d forward matches the naive oracle") {
  CHECK(conv1d_forward({1, 2, 3}, {1, 10}, 0) == Vec{21, 32});
  Rng rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    Vec x = random_vec(145, rng);
    Vec w = random_vec(49, rng);
    Vec got = conv1d_forward(x, w, 24);
    Vec want = conv_oracle(x, w, 24);
    REQUIRE(got.size() == want.size());
    REQUIRE(got.size() == 145);  // same-length output with pad (k-1)/2
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("conv1d backward passes a finite-difference check") {
  Rng rng(5);
  Tensor w("w", {9});
  Tensor x("x", {32});
  for (auto& v : w.value) v = rng.uniform(-1, 1);
  for (auto& v : x.value) v = rng.uniform(-1, 1);
  Vec c = random_vec(32 + 2 * 4 - 9 + 1, rng);

  auto loss = [&]() {
    Vec y = conv1d_forward(x.value, w.value, 4);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += c[i] * y[i] * y[i];
    return acc;
  };
  // Analytic gradients.
  Vec y = conv1d_forward(x.value, w.value, 4);
  Vec dy(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dy[i] = 2.0 * c[i] * y[i];
  Vec dx(x.value.size(), 0.0), dw(w.value.size(), 0.0);
  conv1d_backward(x.value, w.value, 4, dy, dx, dw);
  w.grad = dw;
  x.grad = dx;
  std::vector<Tensor*> params = {&w, &x};
  Rng pick(1);
  auto report = finite_diff_check(params, loss, 1e-6, 16, pick);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("layer norm forward normalizes and backward checks out") {
  Rng rng(21);
  Vec x = random_vec(16, rng, -3, 3);
  Vec gain(16, 1.0), bias(16, 0.0);
  LayerNormCache cache;
  Vec y = layernorm_forward(x, gain, bias, 1e-5, cache);
  double mean = std::accumulate(y.begin(), y.end(), 0.0) / 16.0;
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= 16.0;
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks it slightly

  // Gain and bias apply elementwise.
  Vec g2 = random_vec(16, rng), b2 = random_vec(16, rng);
  LayerNormCache c2;
  Vec y2 = layernorm_forward(x, g2, b2, 1e-5, c2);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(y2[i] == doctest::Approx(g2[i] * y[i] + b2[i]).epsilon(1e-12));
  }

  Tensor tx("x", {16}), tg("g", {16}), tb("b", {16});
  tx.value = x;
  tg.value = g2;
  tb.value = b2;
  Vec c = random_vec(16, rng);
  auto loss = [&]() {
    LayerNormCache cc;
    Vec yy = layernorm_forward(tx.value, tg.value, tb.value, 1e-5, cc);
    double acc = 0.0;
    for (std::size_t i = 0; i < yy.size(); ++i) acc += c[i] * yy[i] * yy[i];
    return acc;
  };
  LayerNormCache cc;
  Vec yy = layernorm_forward(tx.value, tg.value, tb.value, 1e-5, cc);
  Vec dy(16);
  for (std::size_t i = 0; i < 16; ++i) dy[i] = 2.0 * c[i] * yy[i];
  Vec dx(16, 0.0), dgain(16, 0.0), dbias(16, 0.0);
  layernorm_backward(tg.value, cc, dy, dx, dgain, dbias);
  tx.grad = dx;
  tg.grad = dgain;
  tb.grad = dbias;
  std::vector<Tensor*> params = {&tx, &tg, &tb};
  Rng pick(2);
  auto report = finite_diff_check(params, loss, 1e-6, 16, pick);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("relu forward and backward") {
  Vec y = relu_forward({-1.0, 0.0, 2.5});
  CHECK(y == Vec{0.0, 0.0, 2.5});
  Vec dx(3, 0.0);
  relu_backward({-1.0, 0.0, 2.5}, {10.0, 10.0, 10.0}, dx);
  CHECK(dx[0] == 0.0);
  CHECK(dx[2] == 10.0);
}

TEST_CASE("average pool 145 -> 24 matches a direct mean and distributes grads") {
  Rng rng(31);
  Vec x = random_vec(145, rng);
  Vec y = avgpool145_forward(x);
  REQUIRE(static_cast<int>(y.size()) == kPoolOut);
  for (int o = 0; o < kPoolOut; ++o) {
    double mean = 0.0;
    for (int j = 0; j < kPoolKernel; ++j) {
      mean += x[static_cast<std::size_t>(o * kPoolStride + j)];
    }
    mean /= kPoolKernel;
    CHECK(y[static_cast<std::size_t>(o)] == doctest::Approx(mean).epsilon(1e-13));
  }
  // Last window must end exactly at the final element.
  CHECK((kPoolOut - 1) * kPoolStride + kPoolKernel == kLaprLength);

  Vec dy = random_vec(24, rng);
  Vec dx(145, 0.0);
  avgpool145_backward(dy, dx);
  // Oracle: accumulate dy/7 into each window member.
  Vec want(145, 0.0);
  for (int o = 0; o < kPoolOut; ++o) {
    for (int j = 0; j < kPoolKernel; ++j) {
      want[static_cast<std::size_t>(o * kPoolStride + j)] +=
          dy[static_cast<std::size_t>(o)] / kPoolKernel;
    }
  }
  for (std::size_t i = 0; i < 145; ++i) {
    CHECK(dx[i] == doctest::Approx(want[i]).epsilon(1e-13));
  }
  CHECK_THROWS(avgpool145_forward(Vec(100, 0.0)));
}

TEST_CASE("affine matches matrix multiply and its backward checks out") {
  Rng rng(41);
  const int out_dim = 3, in_dim = 5;
  Tensor W("W", {out_dim, in_dim}), b("b", {out_dim}), x("x", {in_dim});
  for (auto& v : W.value) v = rng.uniform(-1, 1);
  for (auto& v : b.value) v = rng.uniform(-1, 1);
  for (auto& v : x.value) v = rng.uniform(-1, 1);
  Vec y = affine_forward(W.value, b.value, x.value, out_dim, in_dim);
  for (int o = 0; o < out_dim; ++o) {
    double want = b.value[static_cast<std::size_t>(o)];
    for (int i = 0; i < in_dim; ++i) {
      want += W.value[static_cast<std::size_t>(o * in_dim + i)] *
              x.value[static_cast<std::size_t>(i)];
    }
    CHECK(y[static_cast<std::size_t>(o)] == doctest::Approx(want).epsilon(1e-13));
  }
  Vec c = random_vec(out_dim, rng);
  auto loss = [&]() {
    Vec yy = affine_forward(W.value, b.value, x.value, out_dim, in_dim);
    double acc = 0.0;
    for (int o = 0; o < out_dim; ++o) {
      acc += c[static_cast<std::size_t>(o)] * yy[static_cast<std::size_t>(o)] *
             yy[static_cast<std::size_t>(o)];
    }
    return acc;
  };
  Vec yy = affine_forward(W.value, b.value, x.value, out_dim, in_dim);
  Vec dy(out_dim);
  for (int o = 0; o < out_dim; ++o) {
    dy[static_cast<std::size_t>(o)] =
        2.0 * c[static_cast<std::size_t>(o)] * yy[static_cast<std::size_t>(o)];
  }
  Vec dW(W.numel(), 0.0), db(b.numel(), 0.0), dx(x.numel(), 0.0);
  affine_backward(W.value, x.value, dy, out_dim, in_dim, dW, db, dx);
  W.grad = dW;
  b.grad = db;
  x.grad = dx;
  std::vector<Tensor*> params = {&W, &b, &x};
  Rng pick(3);
  auto report = finite_diff_check(params, loss, 1e-6, 32, pick);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("masked softmax properties") {
  Vec logits = {1.0, 2.0, 3.0, -1.0};
  std::vector<int> mask = {1, 0, 1, 1};
  Vec w = masked_softmax_forward(logits, mask);
  CHECK(w[1] == 0.0);  // exactly zero, not epsilon
  double sum = w[0] + w[2] + w[3];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
  // Hand-computed ratios over the unmasked entries.
  double z = std::exp(1.0 - 3.0) + std::exp(0.0) + std::exp(-4.0);
  CHECK(w[0] == doctest::Approx(std::exp(-2.0) / z).epsilon(1e-13));
  CHECK(w[2] == doctest::Approx(1.0 / z).epsilon(1e-13));
  // Shift invariance.
  Vec shifted = logits;
  for (auto& v : shifted) v += 100.0;
  Vec w2 = masked_softmax_forward(shifted, mask);
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(w2[i] == doctest::Approx(w[i]).epsilon(1e-12));
  }
  CHECK_THROWS(masked_softmax_forward(logits, {0, 0, 0, 0}));
}

TEST_CASE("masked softmax backward checks out") {
  Rng rng(51);
  Tensor z("z", {8});
  for (auto& v : z.value) v = rng.uniform(-2, 2);
  std::vector<int> mask = {1, 1, 0, 1, 1, 0, 1, 1};
  Vec c = random_vec(8, rng);
  auto loss = [&]() {
    Vec w = masked_softmax_forward(z.value, mask);
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += c[i] * w[i];
    return acc;
  };
  Vec w = masked_softmax_forward(z.value, mask);
  Vec dlogits(8, 0.0);
  masked_softmax_backward(w, c, dlogits);
  z.grad = dlogits;
  std::vector<Tensor*> params = {&z};
  Rng pick(4);
  auto report = finite_diff_check(params, loss, 1e-6, 8, pick);
  CHECK(report.max_rel_err < 1e-6);
  // Gradient never flows into masked entries.
  CHECK(dlogits[2] == 0.0);
  CHECK(dlogits[5] == 0.0);
}

TEST_CASE("mae loss and derivative") {
  CHECK(mae_loss(3.0, 5.0) == doctest::Approx(2.0));
  CHECK(mae_loss_grad(3.0, 5.0) == doctest::Approx(-1.0));
  CHECK(mae_loss_grad(5.0, 3.0) == doctest::Approx(1.0));
  CHECK(mae_loss_grad(4.0, 4.0) == 0.0);
}

TEST_CASE("adam step matches a hand-rolled reference") {
  Tensor p("p", {2});
  p.value = {1.0, -2.0};
  AdamConfig cfg;
  cfg.lr = 0.1;
  // Reference state.
  Vec val = p.value, m(2, 0.0), v(2, 0.0);
  Rng rng(61);
  std::vector<Tensor*> params = {&p};
  for (int step = 1; step <= 5; ++step) {
    Vec g = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    p.grad = g;
    adam_step(params, cfg, step);
    for (int i = 0; i < 2; ++i) {
      auto ui = static_cast<std::size_t>(i);
      m[ui] = cfg.beta1 * m[ui] + (1 - cfg.beta1) * g[ui];
      v[ui] = cfg.beta2 * v[ui] + (1 - cfg.beta2) * g[ui] * g[ui];
      double mh = m[ui] / (1 - std::pow(cfg.beta1, step));
      double vh = v[ui] / (1 - std::pow(cfg.beta2, step));
      val[ui] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
      CHECK(p.value[ui] == doctest::Approx(val[ui]).epsilon(1e-12));
    }
    // Gradients are consumed.
    CHECK(p.grad[0] == 0.0);
    CHECK(p.grad[1] == 0.0);
  }
}

TEST_CASE("glorot init bounds and determinism") {
  Tensor a("a", {10, 20});
  Rng r1(9), r2(9);
  init_uniform_glorot(a, 20, 10, r1);
  double bound = std::sqrt(6.0 / 30.0);
  for (double v : a.value) {
    CHECK(std::fabs(v) <= bound);
  }
  Tensor b("b", {10, 20});
  init_uniform_glorot(b, 20, 10, r2);
  CHECK(a.value == b.value);
}

TEST_CASE("finite diff check flags a corrupted gradient") {
  Tensor p("p", {4});
  Rng rng(71);
  for (auto& v : p.value) v = rng.uniform(-1, 1);
  Vec c = random_vec(4, rng, 0.5, 2.0);
  auto loss = [&]() {
    double acc = 0.0;
    for (std::size_t i = 0; i < 4; ++i) acc += c[i] * p.value[i] * p.value[i];
    return acc;
  };
  for (std::size_t i = 0; i < 4; ++i) p.grad[i] = 2.0 * c[i] * p.value[i];
  std::vector<Tensor*> params = {&p};
  Rng pick(5);
  auto good = finite_diff_check(params, loss, 1e-6, 4, pick);
  CHECK(good.max_rel_err < 1e-8);
  // Corrupt one coordinate: the check must catch it.
  for (std::size_t i = 0; i < 4; ++i) p.grad[i] = 2.0 * c[i] * p.value[i];
  p.grad[2] *= 1.5;
  auto bad = finite_diff_check(params, loss, 1e-6, 4, pick);
  CHECK(bad.max_rel_err > 1e-2);
  CHECK(bad.worst_tensor == "p");
}
