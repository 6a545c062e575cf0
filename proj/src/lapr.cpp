#include "stepfill/lapr.hpp"

#include <stdexcept>

namespace stepfill {

double ParticipantContext::fill_at(std::int64_t t) const {
  int dow;
  int hod;
  if (series->in_range(t)) {
    const HourlyBlock& b = series->blocks[static_cast<std::size_t>(t)];
    dow = b.day_of_week;
    hod = b.hour_of_day;
  } else {
    // Extend the calendar arithmetically beyond the recorded range.
    std::int64_t abs_hour = start_hod + t;
    std::int64_t day = abs_hour >= 0 ? abs_hour / 24 : (abs_hour - 23) / 24;
    hod = static_cast<int>(abs_hour - day * 24);
    dow = static_cast<int>(((start_dow + day) % 7 + 7) % 7);
  }
  return fill_norm[static_cast<std::size_t>(dow * 24 + hod)];
}

ParticipantContext build_context(const ParticipantSeries& series,
                                 const std::vector<std::int64_t>& holdout) {
  ParticipantContext ctx;
  ctx.series = &series;
  ctx.holdout.insert(holdout.begin(), holdout.end());
  ctx.stats = compute_norm_stats(series, holdout);
  if (series.blocks.empty()) {
    throw std::invalid_argument("build_context: empty series");
  }
  ctx.start_dow = series.blocks[0].day_of_week;
  ctx.start_hod = series.blocks[0].hour_of_day;

  std::size_t n = series.blocks.size();
  ctx.usable.assign(n, 0);
  ctx.norm_rate.assign(n, 0.0);
  ctx.norm_hr.assign(n, 0.0);
  ctx.has_hr.assign(n, 0);
  std::array<std::vector<double>, 168> cell_rates;
  std::vector<double> all_rates;
  for (std::size_t t = 0; t < n; ++t) {
    const HourlyBlock& b = series.blocks[t];
    if (!response_indicator(b) || ctx.holdout.count(static_cast<std::int64_t>(t))) {
      continue;
    }
    ctx.usable[t] = 1;
    double z = z_normalize(step_rate(b), ctx.stats.rate_mean, ctx.stats.rate_std);
    ctx.norm_rate[t] = z;
    if (b.heart_rate) {
      ctx.has_hr[t] = 1;
      ctx.norm_hr[t] = z_normalize(*b.heart_rate, ctx.stats.hr_mean, ctx.stats.hr_std);
    }
    cell_rates[static_cast<std::size_t>(b.day_of_week * 24 + b.hour_of_day)].push_back(z);
    all_rates.push_back(z);
  }
  // all_rates is non-empty: compute_norm_stats demands two usable blocks.
  double participant_median = median(all_rates);
  for (std::size_t c = 0; c < 168; ++c) {
    ctx.fill_norm[c] = cell_rates[c].empty() ? participant_median
                                             : median(std::move(cell_rates[c]));
  }
  return ctx;
}

Lapr build_lapr(const ParticipantContext& ctx, std::int64_t center,
                std::int64_t extra_masked) {
  if (!ctx.series->in_range(center)) {
    throw std::invalid_argument("build_lapr: center out of range");
  }
  Lapr lapr;
  for (int i = 0; i < kLaprLength; ++i) {
    std::int64_t u = center - kLaprRadius + i;
    bool direct = ctx.is_usable(u) && u != center && u != extra_masked;
    if (direct) {
      lapr.values[static_cast<std::size_t>(i)] =
          ctx.norm_rate[static_cast<std::size_t>(u)];
    } else {
      lapr.values[static_cast<std::size_t>(i)] = ctx.fill_at(u);
      lapr.fill_mask[static_cast<std::size_t>(i)] = 1;
    }
  }
  return lapr;
}

}  // namespace stepfill
