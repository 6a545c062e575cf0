#include "stepfill/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "stepfill/io_util.hpp"
#include "stepfill/rng.hpp"

namespace stepfill {

namespace {

constexpr const char* kCohortHeader =
    "participant_id,day_index,day_of_week,hour_of_day,steps,wear_minutes,heart_rate";
constexpr const char* kTruthHeader =
    "participant_id,day_index,day_of_week,hour_of_day,steps,wear_minutes,heart_rate,was_masked";
constexpr const char* kMinuteHeader = "participant_id,minute_index,steps,heart_rate";

[[noreturn]] void fail_at(const std::string& path, std::size_t line,
                          const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::string content = read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= content.size()) {
    std::size_t pos = content.find('\n', start);
    if (pos == std::string::npos) {
      if (start < content.size()) lines.push_back(content.substr(start));
      break;
    }
    std::string line = content.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
    start = pos + 1;
  }
  return lines;
}

// Shared reader for the hourly schema, with or without the was_masked column.
void parse_hourly_rows(const std::string& path, bool with_mask, Cohort& cohort,
                       std::vector<std::vector<std::uint8_t>>* masks) {
  auto lines = read_lines(path);
  const char* expected_header = with_mask ? kTruthHeader : kCohortHeader;
  if (lines.empty() || lines[0] != expected_header) {
    fail_at(path, 1, std::string("expected header '") + expected_header + "'");
  }
  std::unordered_set<std::string> finished;
  ParticipantSeries* cur = nullptr;
  std::vector<std::uint8_t>* cur_mask = nullptr;
  std::size_t expected_fields = with_mask ? 8 : 7;

  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    auto f = split_csv_line(lines[li]);
    std::size_t ln = li + 1;
    if (f.size() != expected_fields) {
      fail_at(path, ln, "expected " + std::to_string(expected_fields) +
                            " fields, got " + std::to_string(f.size()));
    }
    const std::string& pid = f[0];
    if (pid.empty()) fail_at(path, ln, "empty participant_id");

    HourlyBlock b;
    try {
      b.day_index = static_cast<int>(parse_int(f[1], "day_index"));
      b.day_of_week = static_cast<int>(parse_int(f[2], "day_of_week"));
      b.hour_of_day = static_cast<int>(parse_int(f[3], "hour_of_day"));
      b.steps = parse_int(f[4], "steps");
      b.wear_minutes = static_cast<int>(parse_int(f[5], "wear_minutes"));
      if (!f[6].empty()) b.heart_rate = parse_double(f[6], "heart_rate");
    } catch (const std::exception& e) {
      fail_at(path, ln, e.what());
    }
    if (b.day_index < 0) fail_at(path, ln, "day_index must be >= 0");
    if (b.day_of_week < 0 || b.day_of_week > 6) {
      fail_at(path, ln, "day_of_week must be in 0..6");
    }
    if (b.hour_of_day < 0 || b.hour_of_day > 23) {
      fail_at(path, ln, "hour_of_day must be in 0..23");
    }
    if (b.steps < 0) fail_at(path, ln, "steps must be >= 0");
    if (b.wear_minutes < 0 || b.wear_minutes > 60) {
      fail_at(path, ln, "wear_minutes must be in 0..60");
    }
    if (b.wear_minutes == 0 && b.steps != 0) {
      fail_at(path, ln, "unworn block must have steps = 0");
    }
    if (b.wear_minutes == 0 && b.heart_rate) {
      fail_at(path, ln, "unworn block must have empty heart_rate");
    }
    if (b.heart_rate && *b.heart_rate < 0.0) {
      fail_at(path, ln, "heart_rate must be >= 0");
    }

    std::uint8_t masked = 0;
    if (with_mask) {
      std::int64_t m = 0;
      try {
        m = parse_int(f[7], "was_masked");
      } catch (const std::exception& e) {
        fail_at(path, ln, e.what());
      }
      if (m != 0 && m != 1) fail_at(path, ln, "was_masked must be 0 or 1");
      masked = static_cast<std::uint8_t>(m);
    }

    if (!cur || cur->participant_id != pid) {
      if (finished.count(pid)) {
        fail_at(path, ln, "participant '" + pid + "' appears in two groups");
      }
      if (cur) finished.insert(cur->participant_id);
      cohort.participants.emplace_back();
      cur = &cohort.participants.back();
      cur->participant_id = pid;
      if (masks) {
        masks->emplace_back();
        cur_mask = &masks->back();
      }
    } else {
      const HourlyBlock& prev = cur->blocks.back();
      int expect_hod = (prev.hour_of_day + 1) % 24;
      int expect_day = prev.day_index + (prev.hour_of_day == 23 ? 1 : 0);
      int expect_dow = prev.hour_of_day == 23 ? (prev.day_of_week + 1) % 7
                                              : prev.day_of_week;
      if (b.hour_of_day != expect_hod || b.day_index != expect_day ||
          b.day_of_week != expect_dow) {
        fail_at(path, ln, "blocks must advance by exactly one hour");
      }
    }
    cur->blocks.push_back(b);
    if (masks) cur_mask->push_back(masked);
  }
}

void append_hourly_row(std::string& out, const ParticipantSeries& p,
                       const HourlyBlock& b) {
  out += p.participant_id;
  out += ',';
  out += format_int(b.day_index);
  out += ',';
  out += format_int(b.day_of_week);
  out += ',';
  out += format_int(b.hour_of_day);
  out += ',';
  out += format_int(b.steps);
  out += ',';
  out += format_int(b.wear_minutes);
  out += ',';
  if (b.heart_rate) out += format_double(*b.heart_rate);
}

}  // namespace

Cohort read_cohort_csv(const std::string& path) {
  Cohort cohort;
  parse_hourly_rows(path, /*with_mask=*/false, cohort, nullptr);
  return cohort;
}

std::string cohort_to_csv(const Cohort& cohort) {
  std::string out = kCohortHeader;
  out += '\n';
  for (const auto& p : cohort.participants) {
    for (const auto& b : p.blocks) {
      append_hourly_row(out, p, b);
      out += '\n';
    }
  }
  return out;
}

TruthData read_truth_csv(const std::string& path) {
  TruthData td;
  parse_hourly_rows(path, /*with_mask=*/true, td.truth, &td.was_masked);
  return td;
}

std::string truth_to_csv(const TruthData& truth) {
  std::string out = kTruthHeader;
  out += '\n';
  for (std::size_t pi = 0; pi < truth.truth.participants.size(); ++pi) {
    const auto& p = truth.truth.participants[pi];
    const auto& mask = truth.was_masked[pi];
    for (std::size_t t = 0; t < p.blocks.size(); ++t) {
      append_hourly_row(out, p, p.blocks[t]);
      out += ',';
      out += mask[t] ? '1' : '0';
      out += '\n';
    }
  }
  return out;
}

std::vector<MinuteRecord> read_minute_csv(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kMinuteHeader) {
    fail_at(path, 1, std::string("expected header '") + kMinuteHeader + "'");
  }
  std::vector<MinuteRecord> records;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    auto f = split_csv_line(lines[li]);
    std::size_t ln = li + 1;
    if (f.size() != 4) fail_at(path, ln, "expected 4 fields");
    MinuteRecord r;
    r.participant_id = f[0];
    if (r.participant_id.empty()) fail_at(path, ln, "empty participant_id");
    try {
      r.minute_index = parse_int(f[1], "minute_index");
      r.steps = parse_int(f[2], "steps");
      if (!f[3].empty()) r.heart_rate = parse_double(f[3], "heart_rate");
    } catch (const std::exception& e) {
      fail_at(path, ln, e.what());
    }
    if (r.minute_index < 0) fail_at(path, ln, "minute_index must be >= 0");
    if (r.steps < 0) fail_at(path, ln, "steps must be >= 0");
    if (r.heart_rate && *r.heart_rate < 0.0) {
      fail_at(path, ln, "heart_rate must be >= 0");
    }
    records.push_back(std::move(r));
  }
  return records;
}

Cohort rollup_minutes(const std::vector<MinuteRecord>& records, int anchor_dow,
                      int anchor_hour) {
  if (anchor_dow < 0 || anchor_dow > 6) {
    throw std::invalid_argument("rollup_minutes: anchor_dow must be in 0..6");
  }
  if (anchor_hour < 0 || anchor_hour > 23) {
    throw std::invalid_argument("rollup_minutes: anchor_hour must be in 0..23");
  }
  Cohort cohort;
  std::unordered_set<std::string> finished;
  std::size_t i = 0;
  while (i < records.size()) {
    const std::string& pid = records[i].participant_id;
    if (finished.count(pid)) {
      throw std::runtime_error(
          "rollup_minutes: records for participant '" + pid +
          "' are not contiguous; input must be sorted by participant");
    }
    finished.insert(pid);
    std::size_t j = i;
    while (j < records.size() && records[j].participant_id == pid) ++j;
    for (std::size_t k = i + 1; k < j; ++k) {
      if (records[k].minute_index <= records[k - 1].minute_index) {
        throw std::runtime_error(
            "rollup_minutes: minute_index not strictly increasing for "
            "participant '" + pid + "' (duplicate or unsorted input)");
      }
    }
    std::int64_t hours = records[j - 1].minute_index / 60 + 1;
    ParticipantSeries series;
    series.participant_id = pid;
    series.blocks.assign(static_cast<std::size_t>(hours), HourlyBlock{});
    std::vector<double> hr_sum(static_cast<std::size_t>(hours), 0.0);
    std::vector<int> hr_count(static_cast<std::size_t>(hours), 0);
    for (std::size_t k = i; k < j; ++k) {
      std::int64_t h = records[k].minute_index / 60;
      HourlyBlock& b = series.blocks[static_cast<std::size_t>(h)];
      b.wear_minutes += 1;
      b.steps += records[k].steps;
      if (records[k].heart_rate) {
        hr_sum[static_cast<std::size_t>(h)] += *records[k].heart_rate;
        hr_count[static_cast<std::size_t>(h)] += 1;
      }
    }
    for (std::int64_t t = 0; t < hours; ++t) {
      HourlyBlock& b = series.blocks[static_cast<std::size_t>(t)];
      if (hr_count[static_cast<std::size_t>(t)] > 0) {
        b.heart_rate = hr_sum[static_cast<std::size_t>(t)] /
                       hr_count[static_cast<std::size_t>(t)];
      }
      std::int64_t abs_hour = anchor_hour + t;
      std::int64_t day = abs_hour / 24;
      b.hour_of_day = static_cast<int>(abs_hour % 24);
      b.day_index = static_cast<int>(day);
      b.day_of_week = static_cast<int>((anchor_dow + day) % 7);
    }
    cohort.participants.push_back(std::move(series));
    i = j;
  }
  return cohort;
}

std::array<double, 7> weekday_profile(const ParticipantSeries& series) {
  // Daily totals over days with at least one observed block.
  struct DayAgg {
    double steps = 0.0;
    int dow = 0;
    bool observed = false;
  };
  std::vector<DayAgg> days;
  for (const auto& b : series.blocks) {
    if (b.day_index >= static_cast<int>(days.size())) {
      days.resize(static_cast<std::size_t>(b.day_index) + 1);
    }
    DayAgg& d = days[static_cast<std::size_t>(b.day_index)];
    d.dow = b.day_of_week;
    if (response_indicator(b)) {
      d.observed = true;
      d.steps += static_cast<double>(b.steps);
    }
  }
  std::array<double, 7> sum{};
  std::array<int, 7> count{};
  for (const auto& d : days) {
    if (!d.observed) continue;
    sum[static_cast<std::size_t>(d.dow)] += d.steps;
    count[static_cast<std::size_t>(d.dow)] += 1;
  }
  std::array<double, 7> profile{};
  for (int d = 0; d < 7; ++d) {
    profile[static_cast<std::size_t>(d)] =
        count[static_cast<std::size_t>(d)] > 0
            ? sum[static_cast<std::size_t>(d)] / count[static_cast<std::size_t>(d)]
            : 0.0;
  }
  return profile;
}

int align_day_shift(const ParticipantSeries& series,
                    const std::array<double, 7>& reference) {
  std::unordered_set<int> distinct_days;
  for (const auto& b : series.blocks) {
    if (response_indicator(b)) distinct_days.insert(b.day_index);
  }
  if (distinct_days.size() < 7) {
    throw std::runtime_error(
        "align_day_shift: participant '" + series.participant_id +
        "' needs at least 7 days with observed data");
  }
  auto profile = weekday_profile(series);
  int best_shift = 0;
  double best = 0.0;
  for (int s = 0; s < 7; ++s) {
    double dissim = 0.0;
    for (int d = 0; d < 7; ++d) {
      double diff = profile[static_cast<std::size_t>((d + s) % 7)] -
                    reference[static_cast<std::size_t>(d)];
      dissim += diff * diff;
    }
    if (s == 0 || dissim < best) {
      best = dissim;
      best_shift = s;
    }
  }
  return best_shift;
}

void apply_day_shift(ParticipantSeries& series, int shift) {
  if (shift < 0 || shift > 6) {
    throw std::invalid_argument("apply_day_shift: shift must be in 0..6");
  }
  for (auto& b : series.blocks) {
    b.day_of_week = (b.day_of_week - shift + 7) % 7;
  }
}

std::array<double, 7> read_reference_profile(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty() || lines[0] != "day_of_week,mean_daily_steps") {
    fail_at(path, 1, "expected header 'day_of_week,mean_daily_steps'");
  }
  std::array<double, 7> profile{};
  std::array<bool, 7> seen{};
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    auto f = split_csv_line(lines[li]);
    std::size_t ln = li + 1;
    if (f.size() != 2) fail_at(path, ln, "expected 2 fields");
    int dow = 0;
    double v = 0.0;
    try {
      dow = static_cast<int>(parse_int(f[0], "day_of_week"));
      v = parse_double(f[1], "mean_daily_steps");
    } catch (const std::exception& e) {
      fail_at(path, ln, e.what());
    }
    if (dow < 0 || dow > 6) fail_at(path, ln, "day_of_week must be in 0..6");
    if (seen[static_cast<std::size_t>(dow)]) {
      fail_at(path, ln, "duplicate day_of_week");
    }
    seen[static_cast<std::size_t>(dow)] = true;
    profile[static_cast<std::size_t>(dow)] = v;
  }
  for (int d = 0; d < 7; ++d) {
    if (!seen[static_cast<std::size_t>(d)]) {
      throw std::runtime_error(path + ": missing day_of_week " + std::to_string(d));
    }
  }
  return profile;
}

std::string reference_profile_to_csv(const std::array<double, 7>& profile) {
  std::string out = "day_of_week,mean_daily_steps\n";
  for (int d = 0; d < 7; ++d) {
    out += format_int(d);
    out += ',';
    out += format_double(profile[static_cast<std::size_t>(d)]);
    out += '\n';
  }
  return out;
}

namespace {

// sin^2 activity bump over 05:00-22:59, zero overnight.
double diurnal_curve(int hour) {
  if (hour < 5 || hour > 22) return 0.0;
  double x = 3.14159265358979323846 * (hour - 5) / 18.0;
  double s = std::sin(x);
  return s * s;
}

}  // namespace

SynthResult generate_synthetic(const SynthConfig& cfg) {
  if (cfg.participants <= 0 || cfg.weeks <= 0) {
    throw std::invalid_argument("generate_synthetic: participants and weeks must be positive");
  }
  if (cfg.missing_rate < 0.0 || cfg.missing_rate > 0.95) {
    throw std::invalid_argument("generate_synthetic: missing_rate must be in [0, 0.95]");
  }
  if (cfg.start_day_of_week < 0 || cfg.start_day_of_week > 6) {
    throw std::invalid_argument("generate_synthetic: start_day_of_week must be in 0..6");
  }

  SynthResult out;
  int days = cfg.weeks * 7;
  int hours = days * 24;
  // Peak-hour steps chosen so a fully typical day totals base_daily_steps
  // (the diurnal curve integrates to 9 over its 18 active hours).
  double peak_steps = cfg.base_daily_steps / 9.0;

  int id_width = cfg.participants > 1000 ? 5 : 3;
  for (int pi = 0; pi < cfg.participants; ++pi) {
    std::string pid = "p";
    std::string num = std::to_string(pi);
    pid += std::string(static_cast<std::size_t>(std::max(0, id_width - static_cast<int>(num.size()))), '0');
    pid += num;

    Rng rng(derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(pi)}));
    Rng mask_rng(derive_seed(cfg.seed, {2, static_cast<std::uint64_t>(pi)}));

    double scale = std::exp(rng.normal(0.0, cfg.participant_scale_sd));
    int phase = static_cast<int>(rng.uniform_int(3)) - 1;  // -1, 0, +1 peak shift

    std::vector<double> week_level(static_cast<std::size_t>(cfg.weeks), 0.0);
    week_level[0] = rng.normal();
    for (int w = 1; w < cfg.weeks; ++w) {
      week_level[static_cast<std::size_t>(w)] =
          cfg.ar_coeff * week_level[static_cast<std::size_t>(w - 1)] +
          std::sqrt(1.0 - cfg.ar_coeff * cfg.ar_coeff) * rng.normal();
    }

    ParticipantSeries truth;
    truth.participant_id = pid;
    truth.blocks.reserve(static_cast<std::size_t>(hours));
    double log_noise_adjust = -0.5 * cfg.hourly_noise_sd * cfg.hourly_noise_sd;

    for (int d = 0; d < days; ++d) {
      int dow = (cfg.start_day_of_week + d) % 7;
      bool weekend = dow == 5 || dow == 6;
      double day_mult = (weekend ? cfg.weekend_multiplier : 1.0) *
                        std::exp(rng.normal(0.0, cfg.daily_noise_sd));
      double week_mult =
          std::exp(cfg.weekly_level_effect * week_level[static_cast<std::size_t>(d / 7)]);
      for (int h = 0; h < 24; ++h) {
        HourlyBlock b;
        b.day_index = d;
        b.day_of_week = dow;
        b.hour_of_day = h;
        b.wear_minutes = 60;
        if (rng.uniform01() < cfg.partial_wear_prob) {
          b.wear_minutes = 1 + static_cast<int>(rng.uniform_int(59));
        }
        int eff_hour = h - phase;
        double mean_steps = peak_steps * diurnal_curve(eff_hour) * scale *
                            day_mult * week_mult;
        double noisy = mean_steps *
                       std::exp(rng.normal(0.0, cfg.hourly_noise_sd) + log_noise_adjust);
        if (eligible_hour(h) && rng.uniform01() < cfg.zero_inflation_prob) {
          noisy = 0.0;
        }
        double rate = noisy / 60.0;
        b.steps = std::llround(rate * b.wear_minutes);
        if (b.steps < 0) b.steps = 0;
        double hr = 65.0 + 0.8 * rate + rng.normal(0.0, 5.0);
        if (hr < 40.0) hr = 40.0;
        if (rng.uniform01() >= cfg.hr_missing_prob) b.heart_rate = hr;
        truth.blocks.push_back(b);
      }
    }

    // Masking: whole nights off-wrist, then random daytime runs until the
    // target fraction of eligible blocks is hidden.
    std::vector<std::uint8_t> masked(truth.blocks.size(), 0);
    for (int d = 0; d < days; ++d) {
      if (mask_rng.uniform01() >= cfg.overnight_nonwear_prob) continue;
      // Night of day d: 23:00 that day through 04:59 the next.
      std::size_t start = static_cast<std::size_t>(d) * 24 + 23;
      for (std::size_t k = 0; k < 6 && start + k < masked.size(); ++k) {
        masked[start + k] = 1;
      }
    }
    std::vector<std::size_t> eligible_idx;
    for (std::size_t t = 0; t < truth.blocks.size(); ++t) {
      if (eligible_hour(truth.blocks[t].hour_of_day)) eligible_idx.push_back(t);
    }
    auto eligible_masked = [&]() {
      std::size_t n = 0;
      for (std::size_t t : eligible_idx) n += masked[t];
      return n;
    };
    double target_rate = cfg.missing_rate * mask_rng.uniform(0.8, 1.2);
    if (target_rate > 0.9) target_rate = 0.9;
    std::size_t target =
        static_cast<std::size_t>(std::llround(target_rate * static_cast<double>(eligible_idx.size())));
    std::size_t done = eligible_masked();
    std::size_t guard = 0;
    while (done < target && guard < 10 * truth.blocks.size()) {
      ++guard;
      std::size_t pick = eligible_idx[static_cast<std::size_t>(
          mask_rng.uniform_int(eligible_idx.size()))];
      if (masked[pick]) continue;
      std::size_t run = 1;
      while (run < 6 && mask_rng.uniform01() < 0.5) ++run;
      for (std::size_t k = 0; k < run && pick + k < masked.size(); ++k) {
        std::size_t t = pick + k;
        if (masked[t]) continue;
        masked[t] = 1;
        if (eligible_hour(truth.blocks[t].hour_of_day)) {
          ++done;
          if (done >= target) break;
        }
      }
    }

    ParticipantSeries observed = truth;
    for (std::size_t t = 0; t < observed.blocks.size(); ++t) {
      if (masked[t]) {
        observed.blocks[t].steps = 0;
        observed.blocks[t].wear_minutes = 0;
        observed.blocks[t].heart_rate.reset();
      }
    }

    out.cohort.participants.push_back(std::move(observed));
    out.truth.truth.participants.push_back(std::move(truth));
    out.truth.was_masked.push_back(std::move(masked));
  }
  return out;
}

}  // namespace stepfill
