#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "stepfill/core.hpp"

// Evaluation machinery: error metrics, stratified train/val/test splits over
// observed blocks, result stratification bins, autocorrelation summaries, and
// a paired t-test helper.

namespace stepfill {

// --- Metrics -------------------------------------------------------------------
// Micro metrics pool every imputed block; macro metrics average per-participant
// summaries so heavy participants do not dominate. The 95% half-width is
// 1.96 * SEM of the per-participant MAEs.
struct MetricsResult {
  double micro_mae = 0.0;
  double macro_mae = 0.0;
  double micro_rmse = 0.0;
  double macro_rmse = 0.0;
  double macro_mae_ci = 0.0;
  std::int64_t n_blocks = 0;
  int n_participants = 0;
};

// abs_errors: one vector of |pred - true| per participant; empty vectors are
// skipped. Requires at least one non-empty vector.
MetricsResult compute_metrics(const std::vector<std::vector<double>>& abs_errors);

// --- Stratified splits -----------------------------------------------------------
enum class SplitRole : int { Train = 0, Val = 1, Test = 2 };

const char* split_role_name(SplitRole role);
SplitRole split_role_from_name(const std::string& name);

struct SplitRecord {
  std::string participant_id;
  std::int64_t hour_index = 0;
  int fold = 0;
  SplitRole role = SplitRole::Train;
};

// Blocks eligible for holdout evaluation: observed and within 06:00-22:59.
bool block_eligible(const HourlyBlock& b);

// Random-subsampling splits: per fold and participant, eligible blocks are
// sorted by step count, cut into up to 10 equal-count strata, and each
// stratum is shuffled (stream derived from seed/fold/participant/stratum)
// and dealt 80/15/5 by floor counts plus largest-remainder rounding with
// ties resolved train > val > test. Per-stratum counts therefore deviate
// from exact proportions by at most one block.
std::vector<SplitRecord> make_splits(const Cohort& cohort, int n_folds,
                                     std::uint64_t seed);

// Per-participant role lookup for one fold: role_of[t] in {-1 (not in
// split), 0 train, 1 val, 2 test} aligned with the series.
struct FoldView {
  std::unordered_map<std::string, std::vector<int>> role_by_participant;

  const std::vector<int>* roles(const std::string& pid) const;
};
FoldView fold_view(const std::vector<SplitRecord>& records, int fold,
                   const Cohort& cohort);

std::string splits_to_csv(const std::vector<SplitRecord>& records);
std::vector<SplitRecord> read_splits_csv(const std::string& path);

// --- Stratification bins -----------------------------------------------------------
// Participant missing rate over eligible hours (06:00-22:59): the fraction of
// such hours that are unobserved.
double participant_missing_rate(const ParticipantSeries& series);

// Five bins [0,.2) [.2,.4) [.4,.6) [.6,.8) [.8,1]; a rate of exactly 1 falls
// in the top bin.
int missing_rate_bin(double rate);
constexpr int kMissingRateBins = 5;

// True-count bins: bin 0 is exactly zero, bin i >= 1 covers [500(i-1)+1, 500i].
int step_count_bin(std::int64_t true_steps);
std::pair<std::int64_t, std::int64_t> step_count_bin_range(int bin);

struct StepBinStat {
  int bin = 0;
  std::int64_t n_blocks = 0;
  double micro_mae = 0.0;
};
// Per-bin micro MAE of one method; bins with no blocks are omitted.
std::vector<StepBinStat> step_bin_breakdown(const std::vector<std::int64_t>& truths,
                                            const std::vector<double>& preds);

// --- Autocorrelation ------------------------------------------------------------
// Median across participants of the lag-k Pearson correlation of observed
// step rates, using pairwise-complete pairs; a participant is excluded at a
// lag when it has fewer than min_pairs pairs or zero variance in either leg.
// Returned vector is indexed by lag (entry 0 unused, set to 1), NaN where no
// participant qualifies.
std::vector<double> acf_median(const Cohort& cohort, int max_lag,
                               int min_pairs = 30);
std::string acf_to_csv(const std::vector<double>& acf);

// --- Paired t-test ----------------------------------------------------------------
struct TTestResult {
  double t = 0.0;
  int df = 0;
  double p = 1.0;
};
// Two-sided paired t-test over per-participant paired values (say MAEs of two
// methods). Requires at least two pairs.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace stepfill
