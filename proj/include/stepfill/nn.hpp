#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stepfill/rng.hpp"

// Minimal scalar-autograd-free neural net kernel: every primitive has an
// explicit hand-derived backward. All math is double precision and loops are
// written so that summation order is fixed, keeping results bit-reproducible.

namespace stepfill {

using Vec = std::vector<double>;

// A named parameter tensor with gradient and Adam state.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  Vec value;
  Vec grad;
  Vec adam_m;
  Vec adam_v;

  Tensor() = default;
  Tensor(std::string n, std::vector<int> s);
  std::size_t numel() const { return value.size(); }
  void zero_grad();
};

// Glorot-style uniform init on [-sqrt(6/(fan_in+fan_out)), +...].
void init_uniform_glorot(Tensor& t, int fan_in, int fan_out, Rng& rng);

// --- 1-D cross-correlation (no kernel flip), zero padding. -----------------
// y[i] = sum_j w[j] * x(i + j - pad), x out of range treated as 0.
// Output length = len(x) + 2*pad - len(w) + 1; requires len(w) <= len(x) + 2*pad.
Vec conv1d_forward(const Vec& x, const Vec& w, int pad);
void conv1d_backward(const Vec& x, const Vec& w, int pad, const Vec& dy,
                     Vec& dx, Vec& dw);

// --- Layer norm over the whole vector. --------------------------------------
struct LayerNormCache {
  Vec xhat;
  double inv_std = 0.0;
};
Vec layernorm_forward(const Vec& x, const Vec& gain, const Vec& bias,
                      double eps, LayerNormCache& cache);
void layernorm_backward(const Vec& gain, const LayerNormCache& cache,
                        const Vec& dy, Vec& dx, Vec& dgain, Vec& dbias);

// --- ReLU. ------------------------------------------------------------------
Vec relu_forward(const Vec& x);
void relu_backward(const Vec& x, const Vec& dy, Vec& dx);

// --- Average pooling fixed to the 145 -> 24 encoder stage (kernel 7, stride 6).
constexpr int kLaprLength = 145;
constexpr int kPoolOut = 24;
constexpr int kPoolKernel = 7;
constexpr int kPoolStride = 6;
Vec avgpool145_forward(const Vec& x);
void avgpool145_backward(const Vec& dy, Vec& dx);

// --- Affine map y = W x + b with W stored row-major [out x in]. -------------
Vec affine_forward(const Vec& W, const Vec& b, const Vec& x, int out_dim,
                   int in_dim);
void affine_backward(const Vec& W, const Vec& x, const Vec& dy, int out_dim,
                     int in_dim, Vec& dW, Vec& db, Vec& dx);

// --- Masked softmax. ---------------------------------------------------------
// weights[j] = mask[j] * exp(z[j] - M) / sum, M = max over unmasked entries.
// Requires at least one unmasked entry.
Vec masked_softmax_forward(const Vec& logits, const std::vector<int>& mask);
void masked_softmax_backward(const Vec& weights, const Vec& dweights, Vec& dlogits);

// --- Mean absolute error for a single pair; batching is the caller's loop. --
double mae_loss(double pred, double target);
double mae_loss_grad(double pred, double target);  // d|p-t|/dp, 0 at the tie

// --- Adam optimizer step over a set of tensors. ------------------------------
struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};
// `step` is 1-based; gradients are consumed and reset to zero.
void adam_step(std::vector<Tensor*>& params, const AdamConfig& cfg, int step);

// --- Finite-difference gradient check. ---------------------------------------
// loss() must evaluate the scalar loss at the current parameter values;
// analytic gradients must already be stored in each tensor's grad. For up to
// `coords_per_tensor` randomly sampled coordinates per tensor, compares the
// central difference to the analytic value and returns the worst relative
// error  |ga - gfd| / max(denom_floor, |ga| + |gfd|).
struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  int worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};
FiniteDiffReport finite_diff_check(std::vector<Tensor*>& params,
                                   const std::function<double()>& loss,
                                   double h, int coords_per_tensor, Rng& rng,
                                   double denom_floor = 1e-8);

}  // namespace stepfill
