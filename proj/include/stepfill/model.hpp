#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stepfill/baselines.hpp"
#include "stepfill/core.hpp"
#include "stepfill/lapr.hpp"
#include "stepfill/nn.hpp"
#include "stepfill/window.hpp"

// Sparse self-attention imputer over the multi-timescale context window.
// Query/key/value vectors are produced by three independent profile encoders
// (conv -> layer norm -> ReLU -> average pool) over 145-hour activity
// profiles; attention logits are dot products plus a learned bias per
// relative window position; the value head is scalar, so the prediction is
// an attention-weighted average of per-cell value projections, denormalized
// and scaled by wear time.

namespace stepfill {

constexpr int kEncOut = kPoolOut;                     // 24
constexpr int kQueryFeatures = kEncOut + 7 + 24;      // 55
constexpr int kKeyFeatures = kEncOut + 7 + 24 + 2;    // 57: + rate + heart rate

struct AttentionModel {
  int d_k = 8;
  // Profile encoders (conv kernel 49, layer norm 145, pool to 24).
  Tensor enc_q_conv, enc_q_gain, enc_q_bias;
  Tensor enc_k_conv, enc_k_gain, enc_k_bias;
  Tensor enc_v_conv, enc_v_gain, enc_v_bias;
  // Projections.
  Tensor proj_q_w, proj_q_b;  // [d_k x 55], [d_k]
  Tensor proj_k_w, proj_k_b;  // [d_k x 57], [d_k]
  Tensor proj_v_w, proj_v_b;  // [57], [1]
  // Relative-position bias, one logit offset per window cell.
  Tensor theta;               // [206]

  explicit AttentionModel(int dk = 8);
  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  void init(std::uint64_t seed);
  void zero_grads();
};

constexpr int kConvKernel = 49;
constexpr int kConvPad = 24;
constexpr double kLayerNormEps = 1e-5;

// --- Forward ---------------------------------------------------------------------

struct AttentionOutput {
  double norm_rate = 0.0;                 // attention-pooled normalized rate
  std::vector<double> weights;            // 206 attention weights, 0 at masked
  std::vector<int> mask;                  // the combined response/range mask
  bool empty_context = false;             // no visible cell: fallback applies
};

// Attention weights and pooled value for target t. If no context cell is
// visible the output flags empty_context and the caller substitutes the
// dw_hd median fill.
AttentionOutput attention_forward(const AttentionModel& model,
                                  const ParticipantContext& ctx, std::int64_t t);

// Full prediction: pooled rate denormalized, clipped to [0, 1.5*max_rate],
// and scaled by wear minutes (override for masked blocks whose true wear is
// known; otherwise a missing block assumes 60). Falls back to the dw_hd
// median fill when the window has no visible cell.
double predict_step_count(const AttentionModel& model,
                          const ParticipantContext& ctx,
                          const FillContext& fill_ctx, std::int64_t t,
                          std::optional<int> wear_override = std::nullopt);

// Mean of the per-model predictions (checkpoint ensembling).
double predict_step_count_ensemble(const std::vector<AttentionModel>& models,
                                   const ParticipantContext& ctx,
                                   const FillContext& fill_ctx, std::int64_t t,
                                   std::optional<int> wear_override = std::nullopt);

// --- Training ---------------------------------------------------------------------

// Loss of one instance and, for the backward variant, gradient accumulation
// into the model tensors (scaled by `grad_scale`). Training always uses the
// block's recorded wear and steps, so t must be observed in the raw series.
double attention_instance_loss(const AttentionModel& model,
                               const ParticipantContext& ctx, std::int64_t t);
double attention_instance_loss_backward(AttentionModel& model,
                                        const ParticipantContext& ctx,
                                        std::int64_t t, double grad_scale);

struct TrainConfig {
  int d_k = 8;
  double lr = 0.01;
  int epochs = 30;
  int batch = 20000;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::size_t max_instances_per_epoch = 0;  // 0 = all
  int patience = 0;                         // epochs without val gain; 0 = off
  AdamConfig adam;                          // lr field is overridden by `lr`
};

struct EpochLog {
  int epoch = 0;            // 0 is the untrained model
  double train_mae = 0.0;   // over the instances the epoch touched
  double val_micro_mae = 0.0;
};

struct FitResult {
  AttentionModel model;     // best validation checkpoint
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

// Trains on all train-role instances with a visible context cell; validation
// Micro MAE decides the returned checkpoint. Contexts must have been built
// with every non-train eligible block held out.
FitResult fit_attention(const std::vector<ParticipantContext>& contexts,
                        const std::vector<TargetRef>& train_targets,
                        const std::vector<TargetRef>& val_targets,
                        const TrainConfig& cfg);

std::string training_log_to_csv(const std::vector<EpochLog>& log);

// --- Checkpoints --------------------------------------------------------------------
// Versioned plain-text format; doubles round-trip exactly.
std::string checkpoint_to_string(const AttentionModel& model);
AttentionModel checkpoint_from_string(const std::string& text,
                                      const std::string& origin);
void save_checkpoint(const AttentionModel& model, const std::string& path);
AttentionModel load_checkpoint(const std::string& path);

// --- Attention maps -----------------------------------------------------------------

struct AttentionMaps {
  // Mean attention weight per window cell (9 x 23 row-major, center zero).
  std::array<double, kWindowRows * kWindowCols> overall{};
  std::int64_t overall_count = 0;
  std::array<std::array<double, kWindowRows * kWindowCols>, 7> by_dow{};
  std::array<std::int64_t, 7> dow_count{};
};

AttentionMaps accumulate_attention_maps(const AttentionModel& model,
                                        const std::vector<ParticipantContext>& contexts,
                                        const std::vector<TargetRef>& targets);
std::string attention_grid_to_csv(
    const std::array<double, kWindowRows * kWindowCols>& grid);

}  // namespace stepfill
