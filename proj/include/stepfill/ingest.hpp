#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stepfill/core.hpp"

// Data acquisition: CSV formats, minute-to-hour rollup, weekday alignment
// between sources with unknown day-of-week conventions, and a seeded
// synthetic cohort generator used for tests and demos.

namespace stepfill {

// --- Hourly cohort CSV -------------------------------------------------------
// header: participant_id,day_index,day_of_week,hour_of_day,steps,wear_minutes,heart_rate
// Rows are grouped by participant and strictly consecutive in time; heart_rate
// is empty when absent. Unobserved blocks have steps=0, wear_minutes=0.
Cohort read_cohort_csv(const std::string& path);
std::string cohort_to_csv(const Cohort& cohort);

// --- Truth CSV (synthetic only) ----------------------------------------------
// Same schema plus was_masked in {0,1}: the complete pre-masking series with
// the blocks that the generator removed flagged.
struct TruthData {
  Cohort truth;
  std::vector<std::vector<std::uint8_t>> was_masked;  // aligned with truth
};
TruthData read_truth_csv(const std::string& path);
std::string truth_to_csv(const TruthData& truth);

// --- Minute-level records and rollup -----------------------------------------
// header: participant_id,minute_index,steps,heart_rate
// Present rows mark worn minutes; missing minutes are non-wear.
struct MinuteRecord {
  std::string participant_id;
  std::int64_t minute_index = 0;
  std::int64_t steps = 0;
  std::optional<double> heart_rate;
};
std::vector<MinuteRecord> read_minute_csv(const std::string& path);

// Aggregate minutes into hourly blocks. Hour t covers minutes [60t, 60t+60);
// wear_minutes counts present records, steps sum, heart_rate averages over
// records that carry one. The calendar anchor gives day-of-week/hour-of-day
// at minute 0. Records must be sorted by (participant, minute) and unique.
Cohort rollup_minutes(const std::vector<MinuteRecord>& records, int anchor_dow,
                      int anchor_hour);

// --- Weekday alignment ---------------------------------------------------------
// Mean daily step total per labeled day of week (days with no observed block
// are skipped; a label with no data contributes 0).
std::array<double, 7> weekday_profile(const ParticipantSeries& series);

// The shift s in 0..6 minimizing sum_d (profile[(d+s) % 7] - reference[d])^2,
// i.e. how far the series' labels are rotated ahead of the reference; ties
// pick the smallest s. Requires >= 7 distinct days of data.
int align_day_shift(const ParticipantSeries& series,
                    const std::array<double, 7>& reference);

// Relabel day_of_week by subtracting the shift (undoing the rotation).
void apply_day_shift(ParticipantSeries& series, int shift);

std::array<double, 7> read_reference_profile(const std::string& path);
std::string reference_profile_to_csv(const std::array<double, 7>& profile);

// --- Synthetic cohort -----------------------------------------------------------
struct SynthConfig {
  int participants = 20;
  int weeks = 26;
  std::uint64_t seed = 1;
  int start_day_of_week = 0;
  double missing_rate = 0.3;          // target masked fraction of daytime blocks
  double overnight_nonwear_prob = 0.85;  // chance a night (23:00-04:59) is off-wrist
  double base_daily_steps = 9000.0;
  double participant_scale_sd = 0.3;
  double weekend_multiplier = 0.75;
  double ar_coeff = 0.85;             // week-to-week activity level AR(1)
  double weekly_level_effect = 0.35;  // multiplier = exp(effect * level)
  double daily_noise_sd = 0.12;
  double hourly_noise_sd = 0.25;
  double zero_inflation_prob = 0.04;  // sporadic fully idle daytime hours
  double partial_wear_prob = 0.08;
  double hr_missing_prob = 0.02;
};

struct SynthResult {
  Cohort cohort;     // post-masking, what a device export would contain
  TruthData truth;   // complete series plus the masked flags
};

// Pure function of the config; equal configs give byte-equal CSVs.
SynthResult generate_synthetic(const SynthConfig& config);

}  // namespace stepfill
