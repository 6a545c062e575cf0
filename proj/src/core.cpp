#include "stepfill/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace stepfill {

const ParticipantSeries* Cohort::find(const std::string& pid) const {
  for (const auto& p : participants) {
    if (p.participant_id == pid) return &p;
  }
  return nullptr;
}

double step_rate(const HourlyBlock& b) {
  if (b.wear_minutes <= 0) {
    throw std::invalid_argument("step_rate: block has no wear time");
  }
  return static_cast<double>(b.steps) / static_cast<double>(b.wear_minutes);
}

double percentile_nearest_rank(std::vector<double> values, double p) {
  if (values.empty()) {
    throw std::invalid_argument("percentile_nearest_rank: empty input");
  }
  if (p <= 0.0 || p > 1.0) {
    throw std::invalid_argument("percentile_nearest_rank: p must be in (0, 1]");
  }
  std::sort(values.begin(), values.end());
  auto n = static_cast<std::size_t>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n)));
  if (rank == 0) rank = 1;
  if (rank > n) rank = n;
  return values[rank - 1];
}

double median(std::vector<double> values) {
  if (values.empty()) {
    throw std::invalid_argument("median: empty input");
  }
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

struct Moments {
  double mean = 0.0;
  double std_dev = 1.0;
  bool degenerate = false;
};

// Population mean/std; constant input flags degeneracy and pins std to 1 so
// that z-normalization stays finite.
Moments population_moments(const std::vector<double>& xs) {
  Moments m;
  double sum = 0.0;
  for (double x : xs) sum += x;
  m.mean = sum / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) {
    double d = x - m.mean;
    ss += d * d;
  }
  double var = ss / static_cast<double>(xs.size());
  if (var <= 0.0) {
    m.std_dev = 1.0;
    m.degenerate = true;
  } else {
    m.std_dev = std::sqrt(var);
  }
  return m;
}

}  // namespace

NormStats compute_norm_stats(const ParticipantSeries& series,
                             const std::vector<std::int64_t>& holdout,
                             double percentile) {
  std::unordered_set<std::int64_t> held(holdout.begin(), holdout.end());
  std::vector<double> rates;
  std::vector<double> hrs;
  for (std::int64_t t = 0; t < series.size(); ++t) {
    const HourlyBlock& b = series.blocks[t];
    if (!response_indicator(b) || held.count(t)) continue;
    rates.push_back(step_rate(b));
    if (b.heart_rate) hrs.push_back(*b.heart_rate);
  }
  if (rates.size() < 2) {
    throw std::runtime_error(
        "compute_norm_stats: participant '" + series.participant_id +
        "' has fewer than two observed blocks outside the holdout");
  }

  NormStats stats;
  stats.max_rate = *std::max_element(rates.begin(), rates.end());

  double cutoff = percentile_nearest_rank(rates, percentile);
  std::vector<double> kept;
  kept.reserve(rates.size());
  for (double r : rates) {
    if (r <= cutoff) kept.push_back(r);
  }
  Moments rm = population_moments(kept);
  stats.rate_mean = rm.mean;
  stats.rate_std = rm.std_dev;
  stats.rate_degenerate = rm.degenerate;

  if (hrs.size() >= 2) {
    Moments hm = population_moments(hrs);
    stats.hr_mean = hm.mean;
    stats.hr_std = hm.std_dev;
    stats.hr_degenerate = hm.degenerate;
  } else {
    stats.hr_mean = hrs.size() == 1 ? hrs[0] : 0.0;
    stats.hr_std = 1.0;
    stats.hr_degenerate = true;
  }
  return stats;
}

double z_normalize(double value, double mean, double std_dev) {
  if (std_dev <= 0.0) {
    throw std::invalid_argument("z_normalize: std_dev must be positive");
  }
  return (value - mean) / std_dev;
}

double z_denormalize(double z, double mean, double std_dev) {
  if (std_dev <= 0.0) {
    throw std::invalid_argument("z_denormalize: std_dev must be positive");
  }
  return z * std_dev + mean;
}

double clip_to_step_count(double rate, int wear_minutes, double max_rate) {
  if (wear_minutes < 0 || wear_minutes > 60) {
    throw std::invalid_argument("clip_to_step_count: wear_minutes out of range");
  }
  if (max_rate < 0.0) {
    throw std::invalid_argument("clip_to_step_count: max_rate must be >= 0");
  }
  double hi = 1.5 * max_rate;
  double clamped = std::max(0.0, std::min(rate, hi));
  return clamped * static_cast<double>(wear_minutes);
}

}  // namespace stepfill
