#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

// Core domain types and numeric primitives shared by every other module.
// An hourly block is the unit of data: one participant-hour with a step
// count, minutes of device wear, and an optional heart-rate average.

namespace stepfill {

struct HourlyBlock {
  std::int64_t steps = 0;       // non-negative step count for the hour
  int wear_minutes = 0;         // minutes the device was worn, 0..60
  std::optional<double> heart_rate;  // mean HR over worn minutes, if recorded
  int day_index = 0;            // days since series start, >= 0
  int day_of_week = 0;          // 0 = Monday .. 6 = Sunday
  int hour_of_day = 0;          // 0..23
};

struct ParticipantSeries {
  std::string participant_id;
  std::vector<HourlyBlock> blocks;  // dense: blocks[t] is hour t since start

  std::int64_t size() const { return static_cast<std::int64_t>(blocks.size()); }
  bool in_range(std::int64_t t) const { return t >= 0 && t < size(); }
};

struct Cohort {
  std::vector<ParticipantSeries> participants;

  const ParticipantSeries* find(const std::string& pid) const;
};

// Normalization statistics over a participant's observed blocks.
struct NormStats {
  double rate_mean = 0.0;
  double rate_std = 1.0;
  double hr_mean = 0.0;
  double hr_std = 1.0;
  double max_rate = 0.0;        // max observed step rate (no outlier filter)
  bool rate_degenerate = false; // constant rates: std forced to 1
  bool hr_degenerate = false;   // constant or absent HR: std forced to 1
};

// A block responds (is observed) iff the device was worn at all that hour.
inline int response_indicator(const HourlyBlock& b) {
  return b.wear_minutes > 0 ? 1 : 0;
}

// Steps per minute of wear. Only defined for observed blocks.
double step_rate(const HourlyBlock& b);

// Mean/std of step rates and heart rates over observed blocks, with step
// rates above the `percentile` nearest-rank cutoff excluded from the rate
// moments (device-artifact guard). `max_rate` is the unfiltered maximum.
// Blocks whose index is in `holdout` are treated as unobserved.
// Requires at least two observed non-holdout blocks.
NormStats compute_norm_stats(const ParticipantSeries& series,
                             const std::vector<std::int64_t>& holdout,
                             double percentile = 0.999);

double z_normalize(double value, double mean, double std_dev);
double z_denormalize(double z, double mean, double std_dev);

// Map a (possibly negative) predicted rate to a step count for a block with
// `wear_minutes` of wear: clamp the rate to [0, 1.5 * max_rate] and scale.
double clip_to_step_count(double rate, int wear_minutes, double max_rate);

// Nearest-rank percentile cutoff: smallest element such that at least
// ceil(p * n) elements are <= it. `values` need not be sorted.
double percentile_nearest_rank(std::vector<double> values, double p);

// Median with the usual even-size convention (mean of the two middles).
double median(std::vector<double> values);

constexpr int kEligibleStartHour = 6;   // evaluation window start (inclusive)
constexpr int kEligibleEndHour = 22;    // evaluation window end (inclusive)

inline bool eligible_hour(int hour_of_day) {
  return hour_of_day >= kEligibleStartHour && hour_of_day <= kEligibleEndHour;
}

}  // namespace stepfill
