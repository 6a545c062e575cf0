#include "stepfill/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "stepfill/io_util.hpp"
#include "stepfill/parallel.hpp"

namespace stepfill {

AttentionModel::AttentionModel(int dk)
    : d_k(dk),
      enc_q_conv("enc_q.conv", {kConvKernel}),
      enc_q_gain("enc_q.gain", {kLaprLength}),
      enc_q_bias("enc_q.bias", {kLaprLength}),
      enc_k_conv("enc_k.conv", {kConvKernel}),
      enc_k_gain("enc_k.gain", {kLaprLength}),
      enc_k_bias("enc_k.bias", {kLaprLength}),
      enc_v_conv("enc_v.conv", {kConvKernel}),
      enc_v_gain("enc_v.gain", {kLaprLength}),
      enc_v_bias("enc_v.bias", {kLaprLength}),
      proj_q_w("proj_q.w", {dk, kQueryFeatures}),
      proj_q_b("proj_q.b", {dk}),
      proj_k_w("proj_k.w", {dk, kKeyFeatures}),
      proj_k_b("proj_k.b", {dk}),
      proj_v_w("proj_v.w", {kKeyFeatures}),
      proj_v_b("proj_v.b", {1}),
      theta("theta", {kWindowCells}) {
  if (dk <= 0) throw std::invalid_argument("AttentionModel: d_k must be positive");
}

std::vector<Tensor*> AttentionModel::params() {
  return {&enc_q_conv, &enc_q_gain, &enc_q_bias, &enc_k_conv, &enc_k_gain,
          &enc_k_bias, &enc_v_conv, &enc_v_gain, &enc_v_bias, &proj_q_w,
          &proj_q_b,   &proj_k_w,   &proj_k_b,   &proj_v_w,   &proj_v_b,
          &theta};
}

std::vector<const Tensor*> AttentionModel::params() const {
  auto* self = const_cast<AttentionModel*>(this);
  auto ps = self->params();
  return std::vector<const Tensor*>(ps.begin(), ps.end());
}

void AttentionModel::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x41545443ULL}));
  init_uniform_glorot(enc_q_conv, kConvKernel, kConvKernel, rng);
  init_uniform_glorot(enc_k_conv, kConvKernel, kConvKernel, rng);
  init_uniform_glorot(enc_v_conv, kConvKernel, kConvKernel, rng);
  for (Tensor* gain : {&enc_q_gain, &enc_k_gain, &enc_v_gain}) {
    std::fill(gain->value.begin(), gain->value.end(), 1.0);
  }
  for (Tensor* bias : {&enc_q_bias, &enc_k_bias, &enc_v_bias}) {
    std::fill(bias->value.begin(), bias->value.end(), 0.0);
  }
  init_uniform_glorot(proj_q_w, kQueryFeatures, d_k, rng);
  init_uniform_glorot(proj_k_w, kKeyFeatures, d_k, rng);
  init_uniform_glorot(proj_v_w, kKeyFeatures, 1, rng);
  std::fill(proj_q_b.value.begin(), proj_q_b.value.end(), 0.0);
  std::fill(proj_k_b.value.begin(), proj_k_b.value.end(), 0.0);
  proj_v_b.value[0] = 0.0;
  std::fill(theta.value.begin(), theta.value.end(), 0.0);
}

void AttentionModel::zero_grads() {
  for (Tensor* t : params()) t->zero_grad();
}

namespace {

// Flat gradient buffer aligned with AttentionModel::params() order, so
// parallel chunks can accumulate without touching the shared tensors.
struct ModelGrads {
  std::vector<Vec> g;

  explicit ModelGrads(const AttentionModel& m) {
    for (const Tensor* t : m.params()) g.emplace_back(t->numel(), 0.0);
  }
  void add_into(AttentionModel& m) const {
    auto ps = m.params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t j = 0; j < g[i].size(); ++j) ps[i]->grad[j] += g[i][j];
    }
  }
};

// Indices into ModelGrads::g / params() order.
enum ParamIndex {
  PQ_CONV = 0, PQ_GAIN, PQ_BIAS, PK_CONV, PK_GAIN, PK_BIAS,
  PV_CONV, PV_GAIN, PV_BIAS, PQW, PQB, PKW, PKB, PVW, PVB, PTHETA
};

struct EncodeCache {
  Vec x;       // the LAPR values
  Vec y1;      // conv output
  LayerNormCache ln;
  Vec y2;      // layer norm output (pre-ReLU)
  Vec enc;     // pooled 24-dim encoding
};

void encode_profile(const Tensor& conv, const Tensor& gain, const Tensor& bias,
                    const Lapr& lapr, EncodeCache& cache) {
  cache.x.assign(lapr.values.begin(), lapr.values.end());
  cache.y1 = conv1d_forward(cache.x, conv.value, kConvPad);
  cache.y2 = layernorm_forward(cache.y1, gain.value, bias.value, kLayerNormEps,
                               cache.ln);
  Vec y3 = relu_forward(cache.y2);
  cache.enc = avgpool145_forward(y3);
}

// Backward through one encoder; the profile itself is data, so no dx is
// propagated past the convolution.
void encode_backward(const Tensor& gain, const EncodeCache& cache, const Vec& denc,
                     Vec& dconv, Vec& dgain, Vec& dbias) {
  Vec dy3;
  avgpool145_backward(denc, dy3);
  Vec dy2;
  relu_backward(cache.y2, dy3, dy2);
  Vec dy1, dg, db;
  layernorm_backward(gain.value, cache.ln, dy2, dy1, dg, db);
  for (std::size_t i = 0; i < dg.size(); ++i) {
    dgain[i] += dg[i];
    dbias[i] += db[i];
  }
  // Convolution weight gradient only.
  std::int64_t n = static_cast<std::int64_t>(cache.x.size());
  for (std::int64_t i = 0; i < n; ++i) {
    double g = dy1[static_cast<std::size_t>(i)];
    if (g == 0.0) continue;
    std::int64_t base = i - kConvPad;
    std::int64_t j0 = std::max<std::int64_t>(0, -base);
    std::int64_t j1 = std::min<std::int64_t>(kConvKernel, n - base);
    for (std::int64_t j = j0; j < j1; ++j) {
      dconv[static_cast<std::size_t>(j)] += g * cache.x[static_cast<std::size_t>(base + j)];
    }
  }
}

struct CellRecord {
  int rel = 0;             // relative window index, 0..205
  std::int64_t u = -1;     // absolute hour of the cell
  EncodeCache enc_k;
  EncodeCache enc_v;
  Vec feat_k;              // 57
  Vec feat_v;              // 57
  Vec k;                   // d_k
  double v = 0.0;
};

struct InstanceForward {
  std::vector<int> mask;             // 206
  std::vector<CellRecord> cells;     // visible cells only, ascending rel
  EncodeCache enc_q;
  Vec feat_q;                        // 55
  Vec q;                             // d_k
  Vec weights;                       // 206, zero at masked
  double pooled = 0.0;               // attention-pooled normalized rate
  bool empty = false;
};

void build_kv_features(const ParticipantContext& ctx, std::int64_t u,
                       const Vec& enc, Vec& out) {
  out.assign(kKeyFeatures, 0.0);
  std::copy(enc.begin(), enc.end(), out.begin());
  const HourlyBlock& b = ctx.series->blocks[static_cast<std::size_t>(u)];
  out[static_cast<std::size_t>(kEncOut + b.day_of_week)] = 1.0;
  out[static_cast<std::size_t>(kEncOut + 7 + b.hour_of_day)] = 1.0;
  out[kKeyFeatures - 2] = ctx.norm_rate[static_cast<std::size_t>(u)];
  out[kKeyFeatures - 1] = ctx.has_hr[static_cast<std::size_t>(u)]
                              ? ctx.norm_hr[static_cast<std::size_t>(u)]
                              : 0.0;
}

InstanceForward forward_instance(const AttentionModel& model,
                                 const ParticipantContext& ctx, std::int64_t t) {
  InstanceForward f;
  auto cells = context_window(t, ctx.series->size());
  f.mask.assign(kWindowCells, 0);
  f.weights.assign(kWindowCells, 0.0);

  // Query over the profile centered at the target.
  Lapr lapr_q = build_lapr(ctx, t);
  encode_profile(model.enc_q_conv, model.enc_q_gain, model.enc_q_bias, lapr_q,
                 f.enc_q);
  f.feat_q.assign(kQueryFeatures, 0.0);
  std::copy(f.enc_q.enc.begin(), f.enc_q.enc.end(), f.feat_q.begin());
  const HourlyBlock& tb = ctx.series->blocks[static_cast<std::size_t>(t)];
  f.feat_q[static_cast<std::size_t>(kEncOut + tb.day_of_week)] = 1.0;
  f.feat_q[static_cast<std::size_t>(kEncOut + 7 + tb.hour_of_day)] = 1.0;
  f.q = affine_forward(model.proj_q_w.value, model.proj_q_b.value, f.feat_q,
                       model.d_k, kQueryFeatures);

  Vec logits(kWindowCells, 0.0);
  f.cells.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::int64_t u = cells[i].hour_index;
    if (u < 0 || !ctx.usable[static_cast<std::size_t>(u)]) continue;
    int rel = relative_index(cells[i].row, cells[i].col);
    f.mask[static_cast<std::size_t>(rel)] = 1;

    CellRecord rec;
    rec.rel = rel;
    rec.u = u;
    // The target's own hour is masked out of every profile the instance
    // sees, so a held-out truth can never flow into its own prediction.
    Lapr lapr_kv = build_lapr(ctx, u, t);
    encode_profile(model.enc_k_conv, model.enc_k_gain, model.enc_k_bias, lapr_kv,
                   rec.enc_k);
    encode_profile(model.enc_v_conv, model.enc_v_gain, model.enc_v_bias, lapr_kv,
                   rec.enc_v);
    build_kv_features(ctx, u, rec.enc_k.enc, rec.feat_k);
    build_kv_features(ctx, u, rec.enc_v.enc, rec.feat_v);
    rec.k = affine_forward(model.proj_k_w.value, model.proj_k_b.value, rec.feat_k,
                           model.d_k, kKeyFeatures);
    double v = model.proj_v_b.value[0];
    for (int j = 0; j < kKeyFeatures; ++j) {
      v += model.proj_v_w.value[static_cast<std::size_t>(j)] *
           rec.feat_v[static_cast<std::size_t>(j)];
    }
    rec.v = v;
    double dot = 0.0;
    for (int d = 0; d < model.d_k; ++d) {
      dot += f.q[static_cast<std::size_t>(d)] * rec.k[static_cast<std::size_t>(d)];
    }
    logits[static_cast<std::size_t>(rel)] =
        dot + model.theta.value[static_cast<std::size_t>(rel)];
    f.cells.push_back(std::move(rec));
  }

  if (f.cells.empty()) {
    f.empty = true;
    return f;
  }
  f.weights = masked_softmax_forward(logits, f.mask);
  double pooled = 0.0;
  for (const auto& rec : f.cells) {
    pooled += f.weights[static_cast<std::size_t>(rec.rel)] * rec.v;
  }
  f.pooled = pooled;
  return f;
}

double prediction_from_pooled(const ParticipantContext& ctx, double pooled,
                              int wear) {
  double rate = z_denormalize(pooled, ctx.stats.rate_mean, ctx.stats.rate_std);
  return clip_to_step_count(rate, wear, ctx.stats.max_rate);
}

// Forward + hand-derived backward for one training instance. Returns the
// absolute error; gradients scaled by grad_scale go into `grads`.
double instance_loss_backward_impl(const AttentionModel& model,
                                   const ParticipantContext& ctx, std::int64_t t,
                                   double grad_scale, ModelGrads& grads) {
  const HourlyBlock& blk = ctx.series->blocks[static_cast<std::size_t>(t)];
  if (!response_indicator(blk)) {
    throw std::invalid_argument(
        "attention training instance must be an observed block");
  }
  InstanceForward f = forward_instance(model, ctx, t);
  if (f.empty) {
    throw std::runtime_error("attention training instance has no visible context");
  }
  double pred = prediction_from_pooled(ctx, f.pooled, blk.wear_minutes);
  double truth = static_cast<double>(blk.steps);
  double loss = mae_loss(pred, truth);

  double rate = z_denormalize(f.pooled, ctx.stats.rate_mean, ctx.stats.rate_std);
  bool saturated = rate <= 0.0 || rate >= 1.5 * ctx.stats.max_rate;
  double ds = saturated ? 0.0
                        : grad_scale * mae_loss_grad(pred, truth) *
                              blk.wear_minutes * ctx.stats.rate_std;
  if (ds == 0.0) return loss;

  // Pooled value: s = sum_j a_j v_j.
  Vec dweights(kWindowCells, 0.0);
  for (const auto& rec : f.cells) {
    dweights[static_cast<std::size_t>(rec.rel)] = ds * rec.v;
  }
  Vec dlogits;
  masked_softmax_backward(f.weights, dweights, dlogits);

  Vec dq(static_cast<std::size_t>(model.d_k), 0.0);
  Vec dfeat, denc(kEncOut);
  for (const auto& rec : f.cells) {
    double a = f.weights[static_cast<std::size_t>(rec.rel)];
    double dlog = dlogits[static_cast<std::size_t>(rec.rel)];
    // theta
    grads.g[PTHETA][static_cast<std::size_t>(rec.rel)] += dlog;
    // value head
    double dv = ds * a;
    for (int j = 0; j < kKeyFeatures; ++j) {
      grads.g[PVW][static_cast<std::size_t>(j)] +=
          dv * rec.feat_v[static_cast<std::size_t>(j)];
    }
    grads.g[PVB][0] += dv;
    for (int j = 0; j < kEncOut; ++j) {
      denc[static_cast<std::size_t>(j)] =
          dv * model.proj_v_w.value[static_cast<std::size_t>(j)];
    }
    encode_backward(model.enc_v_gain, rec.enc_v, denc, grads.g[PV_CONV],
                    grads.g[PV_GAIN], grads.g[PV_BIAS]);
    // key side: dk_j = dlog * q, dq += dlog * k_j
    if (dlog != 0.0) {
      for (int d = 0; d < model.d_k; ++d) {
        dq[static_cast<std::size_t>(d)] +=
            dlog * rec.k[static_cast<std::size_t>(d)];
      }
      dfeat.assign(kKeyFeatures, 0.0);
      for (int d = 0; d < model.d_k; ++d) {
        double dk = dlog * f.q[static_cast<std::size_t>(d)];
        grads.g[PKB][static_cast<std::size_t>(d)] += dk;
        const double* row = model.proj_k_w.value.data() +
                            static_cast<std::size_t>(d) * kKeyFeatures;
        double* grow = grads.g[PKW].data() + static_cast<std::size_t>(d) * kKeyFeatures;
        for (int j = 0; j < kKeyFeatures; ++j) {
          grow[j] += dk * rec.feat_k[static_cast<std::size_t>(j)];
          dfeat[static_cast<std::size_t>(j)] += dk * row[j];
        }
      }
      std::copy(dfeat.begin(), dfeat.begin() + kEncOut, denc.begin());
      encode_backward(model.enc_k_gain, rec.enc_k, denc, grads.g[PK_CONV],
                      grads.g[PK_GAIN], grads.g[PK_BIAS]);
    }
  }
  // query projection
  dfeat.assign(kQueryFeatures, 0.0);
  for (int d = 0; d < model.d_k; ++d) {
    double g = dq[static_cast<std::size_t>(d)];
    if (g == 0.0) continue;
    grads.g[PQB][static_cast<std::size_t>(d)] += g;
    const double* row = model.proj_q_w.value.data() +
                        static_cast<std::size_t>(d) * kQueryFeatures;
    double* grow = grads.g[PQW].data() + static_cast<std::size_t>(d) * kQueryFeatures;
    for (int j = 0; j < kQueryFeatures; ++j) {
      grow[j] += g * f.feat_q[static_cast<std::size_t>(j)];
      dfeat[static_cast<std::size_t>(j)] += g * row[j];
    }
  }
  std::copy(dfeat.begin(), dfeat.begin() + kEncOut, denc.begin());
  encode_backward(model.enc_q_gain, f.enc_q, denc, grads.g[PQ_CONV],
                  grads.g[PQ_GAIN], grads.g[PQ_BIAS]);
  return loss;
}

}  // namespace

AttentionOutput attention_forward(const AttentionModel& model,
                                  const ParticipantContext& ctx, std::int64_t t) {
  InstanceForward f = forward_instance(model, ctx, t);
  AttentionOutput out;
  out.mask = std::move(f.mask);
  out.weights = std::move(f.weights);
  out.norm_rate = f.pooled;
  out.empty_context = f.empty;
  return out;
}

double predict_step_count(const AttentionModel& model,
                          const ParticipantContext& ctx,
                          const FillContext& fill_ctx, std::int64_t t,
                          std::optional<int> wear_override) {
  int wear = wear_override
                 ? *wear_override
                 : ctx.series->blocks[static_cast<std::size_t>(t)].wear_minutes;
  if (wear == 0) wear = 60;
  InstanceForward f = forward_instance(model, ctx, t);
  if (f.empty) {
    double rate = fill_predict_rate(fill_ctx, FillMethod::Median, FillFactor::DwHd, t);
    return rate * static_cast<double>(wear);
  }
  return prediction_from_pooled(ctx, f.pooled, wear);
}

double predict_step_count_ensemble(const std::vector<AttentionModel>& models,
                                   const ParticipantContext& ctx,
                                   const FillContext& fill_ctx, std::int64_t t,
                                   std::optional<int> wear_override) {
  if (models.empty()) {
    throw std::invalid_argument("predict_step_count_ensemble: no models");
  }
  double sum = 0.0;
  for (const auto& m : models) {
    sum += predict_step_count(m, ctx, fill_ctx, t, wear_override);
  }
  return sum / static_cast<double>(models.size());
}

double attention_instance_loss(const AttentionModel& model,
                               const ParticipantContext& ctx, std::int64_t t) {
  const HourlyBlock& blk = ctx.series->blocks[static_cast<std::size_t>(t)];
  if (!response_indicator(blk)) {
    throw std::invalid_argument(
        "attention training instance must be an observed block");
  }
  InstanceForward f = forward_instance(model, ctx, t);
  if (f.empty) {
    throw std::runtime_error("attention training instance has no visible context");
  }
  double pred = prediction_from_pooled(ctx, f.pooled, blk.wear_minutes);
  return mae_loss(pred, static_cast<double>(blk.steps));
}

double attention_instance_loss_backward(AttentionModel& model,
                                        const ParticipantContext& ctx,
                                        std::int64_t t, double grad_scale) {
  ModelGrads grads(model);
  double loss = instance_loss_backward_impl(model, ctx, t, grad_scale, grads);
  grads.add_into(model);
  return loss;
}

namespace {

std::vector<Vec> snapshot_values(const AttentionModel& m) {
  std::vector<Vec> vals;
  for (const Tensor* t : m.params()) vals.push_back(t->value);
  return vals;
}

void restore_values(AttentionModel& m, const std::vector<Vec>& vals) {
  auto ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = vals[i];
}

double validation_micro_mae(const AttentionModel& model,
                            const std::vector<ParticipantContext>& contexts,
                            const std::vector<TargetRef>& val_targets, int jobs) {
  if (val_targets.empty()) return 0.0;
  std::size_t chunks = num_chunks(val_targets.size(), kDefaultChunkSize);
  std::vector<double> chunk_ae(chunks, 0.0);
  parallel_chunks(val_targets.size(), kDefaultChunkSize, jobs,
                  [&](std::size_t ci, std::size_t b, std::size_t e) {
                    double acc = 0.0;
                    for (std::size_t i = b; i < e; ++i) {
                      const TargetRef& ref = val_targets[i];
                      const ParticipantContext& ctx =
                          contexts[static_cast<std::size_t>(ref.participant)];
                      const HourlyBlock& blk =
                          ctx.series->blocks[static_cast<std::size_t>(ref.t)];
                      InstanceForward f = forward_instance(model, ctx, ref.t);
                      double pred =
                          prediction_from_pooled(ctx, f.pooled, blk.wear_minutes);
                      acc += mae_loss(pred, static_cast<double>(blk.steps));
                    }
                    chunk_ae[ci] = acc;
                  });
  double sum = 0.0;
  for (double a : chunk_ae) sum += a;
  return sum / static_cast<double>(val_targets.size());
}

}  // namespace

FitResult fit_attention(const std::vector<ParticipantContext>& contexts,
                        const std::vector<TargetRef>& train_targets,
                        const std::vector<TargetRef>& val_targets,
                        const TrainConfig& cfg) {
  if (cfg.batch <= 0 || cfg.epochs < 0) {
    throw std::invalid_argument("fit_attention: bad batch/epochs");
  }
  // Instances without any visible context cell carry no gradient; validation
  // likewise only scores targets the model can actually attend from.
  auto has_context = [&](const TargetRef& ref) {
    const ParticipantContext& ctx = contexts[static_cast<std::size_t>(ref.participant)];
    auto cells = context_window(ref.t, ctx.series->size());
    for (const auto& c : cells) {
      if (c.hour_index >= 0 && ctx.usable[static_cast<std::size_t>(c.hour_index)]) {
        return true;
      }
    }
    return false;
  };
  std::vector<TargetRef> train;
  for (const auto& r : train_targets) {
    if (has_context(r)) train.push_back(r);
  }
  std::vector<TargetRef> val;
  for (const auto& r : val_targets) {
    if (has_context(r)) val.push_back(r);
  }
  if (train.empty()) {
    throw std::runtime_error("fit_attention: no trainable instances");
  }

  FitResult result;
  result.model = AttentionModel(cfg.d_k);
  result.model.init(cfg.seed);
  AttentionModel& model = result.model;
  AdamConfig adam = cfg.adam;
  adam.lr = cfg.lr;
  auto params = model.params();

  auto epoch_subset = [&](int epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, {0x45504F43ULL, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    if (cfg.max_instances_per_epoch > 0 && cfg.max_instances_per_epoch < order.size()) {
      order.resize(cfg.max_instances_per_epoch);
    }
    return order;
  };

  auto train_forward_mae = [&](const std::vector<std::size_t>& subset) {
    if (subset.empty()) return 0.0;
    std::size_t chunks = num_chunks(subset.size(), kDefaultChunkSize);
    std::vector<double> chunk_ae(chunks, 0.0);
    parallel_chunks(subset.size(), kDefaultChunkSize, cfg.jobs,
                    [&](std::size_t ci, std::size_t b, std::size_t e) {
                      double acc = 0.0;
                      for (std::size_t i = b; i < e; ++i) {
                        const TargetRef& ref = train[subset[i]];
                        acc += attention_instance_loss(
                            model, contexts[static_cast<std::size_t>(ref.participant)],
                            ref.t);
                      }
                      chunk_ae[ci] = acc;
                    });
    double sum = 0.0;
    for (double a : chunk_ae) sum += a;
    return sum / static_cast<double>(subset.size());
  };

  // Epoch 0: the untrained model, for a baseline row in the log.
  std::vector<Vec> best = snapshot_values(model);
  double best_val = validation_micro_mae(model, contexts, val, cfg.jobs);
  result.best_epoch = 0;
  result.log.push_back({0, train_forward_mae(epoch_subset(0)), best_val});

  int adam_step_count = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto subset = epoch_subset(epoch);
    double epoch_ae = 0.0;
    std::size_t pos = 0;
    while (pos < subset.size()) {
      std::size_t end = std::min(subset.size(), pos + static_cast<std::size_t>(cfg.batch));
      std::size_t bsize = end - pos;
      double scale = 1.0 / static_cast<double>(bsize);
      std::size_t chunks = num_chunks(bsize, kDefaultChunkSize);
      std::vector<ModelGrads> chunk_grads;
      chunk_grads.reserve(chunks);
      for (std::size_t c = 0; c < chunks; ++c) chunk_grads.emplace_back(model);
      std::vector<double> chunk_ae(chunks, 0.0);
      parallel_chunks(bsize, kDefaultChunkSize, cfg.jobs,
                      [&](std::size_t ci, std::size_t b, std::size_t e) {
                        double acc = 0.0;
                        for (std::size_t i = b; i < e; ++i) {
                          const TargetRef& ref = train[subset[pos + i]];
                          acc += instance_loss_backward_impl(
                              model,
                              contexts[static_cast<std::size_t>(ref.participant)],
                              ref.t, scale, chunk_grads[ci]);
                        }
                        chunk_ae[ci] = acc;
                      });
      for (std::size_t c = 0; c < chunks; ++c) {
        chunk_grads[c].add_into(model);
        epoch_ae += chunk_ae[c];
      }
      adam_step(params, adam, ++adam_step_count);
      pos = end;
    }
    double train_mae = epoch_ae / static_cast<double>(subset.size());
    double val_mae = validation_micro_mae(model, contexts, val, cfg.jobs);
    result.log.push_back({epoch, train_mae, val_mae});
    if (val_mae < best_val || val.empty()) {
      best_val = val_mae;
      best = snapshot_values(model);
      result.best_epoch = epoch;
    }
    if (cfg.patience > 0 && epoch - result.best_epoch >= cfg.patience) break;
  }
  restore_values(model, best);
  return result;
}

std::string training_log_to_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_mae,val_micro_mae\n";
  for (const auto& e : log) {
    out += format_int(e.epoch);
    out += ',';
    out += format_double(e.train_mae);
    out += ',';
    out += format_double(e.val_micro_mae);
    out += '\n';
  }
  return out;
}

std::string checkpoint_to_string(const AttentionModel& model) {
  std::string out = "stepfill-checkpoint 1\n";
  out += "d_k ";
  out += format_int(model.d_k);
  out += '\n';
  auto ps = model.params();
  out += "tensors ";
  out += format_int(static_cast<std::int64_t>(ps.size()));
  out += '\n';
  for (const Tensor* t : ps) {
    out += "tensor ";
    out += t->name;
    out += ' ';
    out += format_int(static_cast<std::int64_t>(t->numel()));
    out += '\n';
    for (std::size_t i = 0; i < t->numel(); ++i) {
      if (i) out += ' ';
      out += format_double(t->value[i]);
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t b = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (i > b) toks.push_back(line.substr(b, i - b));
  }
  return toks;
}

}  // namespace

AttentionModel checkpoint_from_string(const std::string& text,
                                      const std::string& origin) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
  auto fail = [&](const std::string& msg) -> std::runtime_error {
    return std::runtime_error(origin + ": bad checkpoint: " + msg);
  };
  if (lines.size() < 3 || lines[0] != "stepfill-checkpoint 1") {
    throw fail("missing or unsupported header");
  }
  auto dk_tok = tokenize(lines[1]);
  if (dk_tok.size() != 2 || dk_tok[0] != "d_k") throw fail("expected d_k line");
  int dk = static_cast<int>(parse_int(dk_tok[1], "d_k"));
  if (dk <= 0 || dk > 4096) throw fail("d_k out of range");
  auto nt_tok = tokenize(lines[2]);
  if (nt_tok.size() != 2 || nt_tok[0] != "tensors") throw fail("expected tensors line");
  std::int64_t n_tensors = parse_int(nt_tok[1], "tensors");

  AttentionModel model(dk);
  auto ps = model.params();
  if (n_tensors != static_cast<std::int64_t>(ps.size())) {
    throw fail("tensor count mismatch");
  }
  std::size_t li = 3;
  for (Tensor* t : ps) {
    if (li >= lines.size()) throw fail("truncated file");
    auto head = tokenize(lines[li]);
    if (head.size() != 3 || head[0] != "tensor") throw fail("expected tensor line");
    if (head[1] != t->name) {
      throw fail("expected tensor '" + t->name + "', found '" + head[1] + "'");
    }
    std::int64_t numel = parse_int(head[2], "tensor size");
    if (numel != static_cast<std::int64_t>(t->numel())) {
      throw fail("size mismatch for tensor '" + t->name + "'");
    }
    ++li;
    if (li >= lines.size()) throw fail("missing values for '" + t->name + "'");
    auto vals = tokenize(lines[li]);
    if (vals.size() != t->numel()) {
      throw fail("value count mismatch for '" + t->name + "'");
    }
    for (std::size_t i = 0; i < vals.size(); ++i) {
      t->value[i] = parse_double(vals[i], "tensor value");
    }
    ++li;
  }
  for (; li < lines.size(); ++li) {
    if (!lines[li].empty()) throw fail("trailing content");
  }
  return model;
}

void save_checkpoint(const AttentionModel& model, const std::string& path) {
  atomic_write_file(path, checkpoint_to_string(model));
}

AttentionModel load_checkpoint(const std::string& path) {
  return checkpoint_from_string(read_file(path), path);
}

AttentionMaps accumulate_attention_maps(const AttentionModel& model,
                                        const std::vector<ParticipantContext>& contexts,
                                        const std::vector<TargetRef>& targets) {
  AttentionMaps maps;
  for (const auto& ref : targets) {
    const ParticipantContext& ctx = contexts[static_cast<std::size_t>(ref.participant)];
    InstanceForward f = forward_instance(model, ctx, ref.t);
    if (f.empty) continue;
    int dow = ctx.series->blocks[static_cast<std::size_t>(ref.t)].day_of_week;
    for (int rel = 0; rel < kWindowCells; ++rel) {
      WindowCell cell = cell_of_relative_index(rel);
      std::size_t grid = static_cast<std::size_t>(cell.row * kWindowCols + cell.col);
      double w = f.weights[static_cast<std::size_t>(rel)];
      maps.overall[grid] += w;
      maps.by_dow[static_cast<std::size_t>(dow)][grid] += w;
    }
    maps.overall_count += 1;
    maps.dow_count[static_cast<std::size_t>(dow)] += 1;
  }
  auto normalize = [](std::array<double, kWindowRows * kWindowCols>& grid,
                      std::int64_t count) {
    if (count == 0) return;
    for (double& v : grid) v /= static_cast<double>(count);
  };
  normalize(maps.overall, maps.overall_count);
  for (int d = 0; d < 7; ++d) {
    normalize(maps.by_dow[static_cast<std::size_t>(d)],
              maps.dow_count[static_cast<std::size_t>(d)]);
  }
  return maps;
}

std::string attention_grid_to_csv(
    const std::array<double, kWindowRows * kWindowCols>& grid) {
  std::string out = "hour_offset";
  for (int c = 0; c < kWindowCols; ++c) {
    out += ",day";
    out += format_int(kDayOffsets[static_cast<std::size_t>(c)]);
  }
  out += '\n';
  for (int r = 0; r < kWindowRows; ++r) {
    out += format_int(r - kCenterRow);
    for (int c = 0; c < kWindowCols; ++c) {
      out += ',';
      out += format_double(grid[static_cast<std::size_t>(r * kWindowCols + c)]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace stepfill
