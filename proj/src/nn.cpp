#include "stepfill/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stepfill {

Tensor::Tensor(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
    count *= static_cast<std::size_t>(d);
  }
  value.assign(count, 0.0);
  grad.assign(count, 0.0);
  adam_m.assign(count, 0.0);
  adam_v.assign(count, 0.0);
}

void Tensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void init_uniform_glorot(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.value) v = rng.uniform(-bound, bound);
}

Vec conv1d_forward(const Vec& x, const Vec& w, int pad) {
  if (w.empty() || x.empty()) {
    throw std::invalid_argument("conv1d: empty input or kernel");
  }
  std::int64_t n = static_cast<std::int64_t>(x.size());
  std::int64_t k = static_cast<std::int64_t>(w.size());
  std::int64_t out_len = n + 2 * pad - k + 1;
  if (pad < 0 || out_len <= 0) {
    throw std::invalid_argument("conv1d: kernel longer than padded input");
  }
  Vec y(static_cast<std::size_t>(out_len), 0.0);
  for (std::int64_t i = 0; i < out_len; ++i) {
    double acc = 0.0;
    std::int64_t base = i - pad;
    std::int64_t j0 = std::max<std::int64_t>(0, -base);
    std::int64_t j1 = std::min<std::int64_t>(k, n - base);
    for (std::int64_t j = j0; j < j1; ++j) {
      acc += w[j] * x[base + j];
    }
    y[i] = acc;
  }
  return y;
}

void conv1d_backward(const Vec& x, const Vec& w, int pad, const Vec& dy,
                     Vec& dx, Vec& dw) {
  std::int64_t n = static_cast<std::int64_t>(x.size());
  std::int64_t k = static_cast<std::int64_t>(w.size());
  std::int64_t out_len = n + 2 * pad - k + 1;
  if (static_cast<std::int64_t>(dy.size()) != out_len) {
    throw std::invalid_argument("conv1d_backward: dy length mismatch");
  }
  dx.assign(x.size(), 0.0);
  dw.assign(w.size(), 0.0);
  for (std::int64_t i = 0; i < out_len; ++i) {
    double g = dy[i];
    if (g == 0.0) continue;
    std::int64_t base = i - pad;
    std::int64_t j0 = std::max<std::int64_t>(0, -base);
    std::int64_t j1 = std::min<std::int64_t>(k, n - base);
    for (std::int64_t j = j0; j < j1; ++j) {
      dw[j] += g * x[base + j];
      dx[base + j] += g * w[j];
    }
  }
}

Vec layernorm_forward(const Vec& x, const Vec& gain, const Vec& bias,
                      double eps, LayerNormCache& cache) {
  std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("layernorm: input too short");
  if (gain.size() != n || bias.size() != n) {
    throw std::invalid_argument("layernorm: gain/bias length mismatch");
  }
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x) {
    double d = v - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  cache.inv_std = 1.0 / std::sqrt(var + eps);
  cache.xhat.resize(n);
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i) {
    cache.xhat[i] = (x[i] - mean) * cache.inv_std;
    y[i] = gain[i] * cache.xhat[i] + bias[i];
  }
  return y;
}

void layernorm_backward(const Vec& gain, const LayerNormCache& cache,
                        const Vec& dy, Vec& dx, Vec& dgain, Vec& dbias) {
  std::size_t n = dy.size();
  if (cache.xhat.size() != n || gain.size() != n) {
    throw std::invalid_argument("layernorm_backward: size mismatch");
  }
  dx.assign(n, 0.0);
  dgain.assign(n, 0.0);
  dbias.assign(n, 0.0);
  // dxhat = dy * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
  double sum_dxhat = 0.0;
  double sum_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dxhat = dy[i] * gain[i];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * cache.xhat[i];
    dgain[i] = dy[i] * cache.xhat[i];
    dbias[i] = dy[i];
  }
  double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dxhat = dy[i] * gain[i];
    dx[i] = cache.inv_std *
            (dxhat - inv_n * sum_dxhat - cache.xhat[i] * inv_n * sum_dxhat_xhat);
  }
}

Vec relu_forward(const Vec& x) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

void relu_backward(const Vec& x, const Vec& dy, Vec& dx) {
  if (x.size() != dy.size()) {
    throw std::invalid_argument("relu_backward: size mismatch");
  }
  dx.assign(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

Vec avgpool145_forward(const Vec& x) {
  if (static_cast<int>(x.size()) != kLaprLength) {
    throw std::invalid_argument("avgpool145: input length must be 145");
  }
  Vec y(kPoolOut);
  for (int o = 0; o < kPoolOut; ++o) {
    double acc = 0.0;
    int b = o * kPoolStride;
    for (int j = 0; j < kPoolKernel; ++j) acc += x[b + j];
    y[o] = acc / kPoolKernel;
  }
  return y;
}

void avgpool145_backward(const Vec& dy, Vec& dx) {
  if (static_cast<int>(dy.size()) != kPoolOut) {
    throw std::invalid_argument("avgpool145_backward: dy length must be 24");
  }
  dx.assign(kLaprLength, 0.0);
  for (int o = 0; o < kPoolOut; ++o) {
    double g = dy[o] / kPoolKernel;
    int b = o * kPoolStride;
    for (int j = 0; j < kPoolKernel; ++j) dx[b + j] += g;
  }
}

Vec affine_forward(const Vec& W, const Vec& b, const Vec& x, int out_dim,
                   int in_dim) {
  if (static_cast<int>(x.size()) != in_dim ||
      static_cast<int>(W.size()) != out_dim * in_dim ||
      static_cast<int>(b.size()) != out_dim) {
    throw std::invalid_argument("affine_forward: shape mismatch");
  }
  Vec y(out_dim);
  for (int o = 0; o < out_dim; ++o) {
    double acc = b[o];
    const double* row = W.data() + static_cast<std::size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return y;
}

void affine_backward(const Vec& W, const Vec& x, const Vec& dy, int out_dim,
                     int in_dim, Vec& dW, Vec& db, Vec& dx) {
  if (static_cast<int>(dy.size()) != out_dim) {
    throw std::invalid_argument("affine_backward: dy shape mismatch");
  }
  dW.assign(static_cast<std::size_t>(out_dim) * in_dim, 0.0);
  db.assign(out_dim, 0.0);
  dx.assign(in_dim, 0.0);
  for (int o = 0; o < out_dim; ++o) {
    double g = dy[o];
    db[o] = g;
    const double* row = W.data() + static_cast<std::size_t>(o) * in_dim;
    double* drow = dW.data() + static_cast<std::size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) {
      drow[i] += g * x[i];
      dx[i] += g * row[i];
    }
  }
}

Vec masked_softmax_forward(const Vec& logits, const std::vector<int>& mask) {
  if (logits.size() != mask.size()) {
    throw std::invalid_argument("masked_softmax: size mismatch");
  }
  double m = -1e308;
  bool any = false;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) {
      any = true;
      if (logits[i] > m) m = logits[i];
    }
  }
  if (!any) {
    throw std::runtime_error("masked_softmax: all entries masked");
  }
  Vec w(logits.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask[i]) {
      w[i] = std::exp(logits[i] - m);
      sum += w[i];
    }
  }
  for (double& v : w) v /= sum;
  return w;
}

void masked_softmax_backward(const Vec& weights, const Vec& dweights,
                             Vec& dlogits) {
  if (weights.size() != dweights.size()) {
    throw std::invalid_argument("masked_softmax_backward: size mismatch");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) dot += weights[i] * dweights[i];
  dlogits.assign(weights.size(), 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    dlogits[i] = weights[i] * (dweights[i] - dot);
  }
}

double mae_loss(double pred, double target) { return std::fabs(pred - target); }

double mae_loss_grad(double pred, double target) {
  if (pred > target) return 1.0;
  if (pred < target) return -1.0;
  return 0.0;
}

void adam_step(std::vector<Tensor*>& params, const AdamConfig& cfg, int step) {
  if (step < 1) throw std::invalid_argument("adam_step: step must be >= 1");
  double bc1 = 1.0 - std::pow(cfg.beta1, step);
  double bc2 = 1.0 - std::pow(cfg.beta2, step);
  for (Tensor* t : params) {
    for (std::size_t i = 0; i < t->numel(); ++i) {
      double g = t->grad[i];
      t->adam_m[i] = cfg.beta1 * t->adam_m[i] + (1.0 - cfg.beta1) * g;
      t->adam_v[i] = cfg.beta2 * t->adam_v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = t->adam_m[i] / bc1;
      double vhat = t->adam_v[i] / bc2;
      t->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    t->zero_grad();
  }
}

FiniteDiffReport finite_diff_check(std::vector<Tensor*>& params,
                                   const std::function<double()>& loss,
                                   double h, int coords_per_tensor, Rng& rng,
                                   double denom_floor) {
  FiniteDiffReport rep;
  for (Tensor* t : params) {
    std::size_t n = t->numel();
    std::vector<std::size_t> coords;
    if (static_cast<int>(n) <= coords_per_tensor) {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int c = 0; c < coords_per_tensor; ++c) {
        coords.push_back(static_cast<std::size_t>(rng.uniform_int(n)));
      }
    }
    for (std::size_t i : coords) {
      double saved = t->value[i];
      t->value[i] = saved + h;
      double lp = loss();
      t->value[i] = saved - h;
      double lm = loss();
      t->value[i] = saved;
      double gfd = (lp - lm) / (2.0 * h);
      double ga = t->grad[i];
      double denom = std::max(denom_floor, std::fabs(ga) + std::fabs(gfd));
      double rel = std::fabs(ga - gfd) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_tensor = t->name;
        rep.worst_coord = static_cast<int>(i);
        rep.analytic = ga;
        rep.numeric = gfd;
      }
    }
  }
  return rep;
}

}  // namespace stepfill
