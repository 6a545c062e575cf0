#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "stepfill/core.hpp"
#include "stepfill/lapr.hpp"
#include "stepfill/rng.hpp"
#include "stepfill/window.hpp"

// Baseline imputers: constant/statistical fills, neighbor-bracket fills,
// k-nearest-neighbor matching on activity profiles, a single linear
// regression over the context window, and chained per-position regressions
// with multiple-imputation sampling at inference time.

namespace stepfill {

// --- Statistical fills -----------------------------------------------------------
enum class FillMethod { Zero, Forward, Backward, AvgFb, Mean, MicroMean, Median };
enum class FillFactor { Participant, DayOfWeek, HourOfDay, DwHd };

FillMethod fill_method_from_name(const std::string& name);
FillFactor fill_factor_from_name(const std::string& name);

// Per-participant fill statistics. Mean/micro-mean/median cells are computed
// over observed non-holdout blocks within 06:00-22:59 (the hours that get
// evaluated); empty cells fall back to the participant median, daytime first.
// Forward/backward traversal is separate and walks all hours.
struct FillContext {
  const ParticipantSeries* series = nullptr;
  std::unordered_set<std::int64_t> holdout;
  // cell index: participant -> 0; day_of_week -> dow; hour_of_day -> hod;
  // dw_hd -> dow * 24 + hod.
  std::array<std::vector<double>, 4> mean_rate;        // per factor
  std::array<std::vector<std::uint8_t>, 4> has_cell;
  std::array<std::vector<double>, 4> micro_mean_rate;
  std::array<std::vector<double>, 4> median_rate;
  double participant_median_daytime = 0.0;
  double participant_median_all_hours = 0.0;  // forward/backward fallback
  bool any_daytime = false;
  bool any_usable = false;
};

FillContext build_fill_context(const ParticipantSeries& series,
                               const std::vector<std::int64_t>& holdout);

// Predicted step rate at block t. Forward/backward fills read the nearest
// non-missing block on the respective side regardless of hour; note that a
// neighboring held-out block still counts as non-missing there (the bracket
// fills deliberately see the raw series, an accepted leak of these baselines),
// while the statistical fills never touch holdout data.
double fill_predict_rate(const FillContext& ctx, FillMethod method,
                         FillFactor factor, std::int64_t t);

// Rate scaled by the block's wear minutes (wear as recorded; pass the truth
// wear for artificially masked blocks via `wear_override`).
double fill_predict_steps(const FillContext& ctx, FillMethod method,
                          FillFactor factor, std::int64_t t,
                          std::optional<int> wear_override = std::nullopt);

// --- k-nearest neighbors ------------------------------------------------------------
enum class KnnWeighting { Uniform, Softmax };

struct KnnConfig {
  int k = 35;
  KnnWeighting weighting = KnnWeighting::Uniform;
  double tau = 1e-2;  // softmax temperature over negative squared distances
};

// Pool: every usable block of the participant (all hours), profiled by its
// own-center-masked LAPR. Neighbors are ranked by squared Euclidean distance
// to the target's LAPR, ties broken by ascending hour index; fewer than k
// candidates means all are used; an empty pool falls back to the dw_hd
// median fill. Precomputes pool profiles, so build once per participant.
class KnnIndex {
 public:
  KnnIndex(const ParticipantContext& ctx, const FillContext& fill_ctx);

  double predict_rate(std::int64_t t, const KnnConfig& cfg) const;
  double predict_steps(std::int64_t t, const KnnConfig& cfg,
                       std::optional<int> wear_override = std::nullopt) const;

 private:
  const ParticipantContext* ctx_;
  const FillContext* fill_ctx_;
  std::vector<std::int64_t> pool_;        // usable hour indices, ascending
  std::vector<std::array<double, kLaprLength>> profiles_;
  std::vector<double> pool_rates_;        // raw step rates
};

// --- Window regression ---------------------------------------------------------------
// One linear model over 443 features: the context window's 206 normalized
// rates and 206 normalized heart rates (zero where unavailable) plus
// day-of-week and hour-of-day one-hots. Trained with Adam on the absolute
// error of predicted step counts.
constexpr int kRegressionFeatures = 2 * kWindowCells + 7 + 24;

struct RegressionModel {
  Vec w;     // kRegressionFeatures
  double b = 0.0;
};

struct RegressionConfig {
  double lr = 0.001;
  int epochs = 20;
  int batch = 50000;
  std::uint64_t seed = 1;
  std::size_t max_instances_per_epoch = 0;  // 0 = all
};

// A training instance: participant context index plus target hour.
struct TargetRef {
  int participant = 0;  // index into the context vector
  std::int64_t t = 0;
};

void regression_features(const ParticipantContext& ctx, std::int64_t t, Vec& out);

RegressionModel fit_regression(const std::vector<ParticipantContext>& contexts,
                               const std::vector<TargetRef>& train_targets,
                               const RegressionConfig& cfg);

double regression_predict_rate(const RegressionModel& model,
                               const ParticipantContext& ctx, std::int64_t t);
double regression_predict_steps(const RegressionModel& model,
                                const ParticipantContext& ctx, std::int64_t t,
                                std::optional<int> wear_override = std::nullopt);

// --- Chained per-position regressions (multiple imputation) ---------------------------
// One linear model per window position (the 206 cells plus the center), each
// predicting its position's normalized rate from the other 206 positions'
// current values plus the center's day-of-week/hour-of-day one-hots.
constexpr int kIterPositions = kWindowCells + 1;            // 207
constexpr int kIterFeatures = kWindowCells + 7 + 24;        // 237

struct IterativeModel {
  std::vector<Vec> w;   // kIterPositions x kIterFeatures
  Vec b;                // kIterPositions
  Vec sigma2;           // residual variance per position, from validation
};

struct IterativeConfig {
  double lr0 = 0.001;          // inverse-scaling schedule lr0 / t^0.25
  int epochs = 2;              // SGD epochs per position fit
  int batch = 10000;
  double epsilon = 0.01;       // epsilon-insensitive loss half-width
  double weight_decay = 1e-4;
  int sweeps = 2;              // chained passes during fitting
  std::uint64_t seed = 1;
  std::size_t max_rows = 0;    // cap on training windows, 0 = all
};

// Positions are flattened column-major (top-to-bottom, then left-to-right)
// and visited alternately from the start and end of that sequence, which
// places the center (flat index 103) last.
std::vector<int> iterative_visit_order();
int iterative_flat_index(int row, int col);

IterativeModel fit_iterative(const std::vector<ParticipantContext>& contexts,
                             const std::vector<TargetRef>& train_targets,
                             const std::vector<TargetRef>& val_targets,
                             const IterativeConfig& cfg);

struct IterativeSampleResult {
  double mean_steps = 0.0;
  std::vector<double> sample_steps;  // one predicted count per sample
};

// Multiple-imputation inference at target t: S chained sweeps from a
// zero-initialized missing state, each adding N(0, sigma2) noise to every
// imputed position and projecting back into the feasible rate range; the
// prediction is the mean of the per-sample step counts. The noise stream is
// derived from (seed, participant key, t), so a replay is exact.
IterativeSampleResult iterative_impute(const IterativeModel& model,
                                       const ParticipantContext& ctx,
                                       std::int64_t t, int n_samples,
                                       std::uint64_t seed,
                                       std::optional<int> wear_override = std::nullopt);

}  // namespace stepfill
