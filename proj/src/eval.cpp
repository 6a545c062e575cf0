#include "stepfill/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "stepfill/io_util.hpp"
#include "stepfill/rng.hpp"

namespace stepfill {

MetricsResult compute_metrics(const std::vector<std::vector<double>>& abs_errors) {
  MetricsResult r;
  double sum_ae = 0.0;
  double sum_se = 0.0;
  std::vector<double> participant_mae;
  double macro_rmse_sum = 0.0;
  for (const auto& errs : abs_errors) {
    if (errs.empty()) continue;
    double p_ae = 0.0;
    double p_se = 0.0;
    for (double e : errs) {
      p_ae += e;
      p_se += e * e;
    }
    sum_ae += p_ae;
    sum_se += p_se;
    r.n_blocks += static_cast<std::int64_t>(errs.size());
    double n = static_cast<double>(errs.size());
    participant_mae.push_back(p_ae / n);
    macro_rmse_sum += std::sqrt(p_se / n);
  }
  if (participant_mae.empty()) {
    throw std::runtime_error("compute_metrics: no participant has any error");
  }
  r.n_participants = static_cast<int>(participant_mae.size());
  double nb = static_cast<double>(r.n_blocks);
  double np = static_cast<double>(r.n_participants);
  r.micro_mae = sum_ae / nb;
  r.micro_rmse = std::sqrt(sum_se / nb);
  double macro_sum = 0.0;
  for (double m : participant_mae) macro_sum += m;
  r.macro_mae = macro_sum / np;
  r.macro_rmse = macro_rmse_sum / np;
  if (r.n_participants > 1) {
    double ss = 0.0;
    for (double m : participant_mae) {
      double d = m - r.macro_mae;
      ss += d * d;
    }
    double sd = std::sqrt(ss / (np - 1.0));
    r.macro_mae_ci = 1.96 * sd / std::sqrt(np);
  }
  return r;
}

const char* split_role_name(SplitRole role) {
  switch (role) {
    case SplitRole::Train: return "train";
    case SplitRole::Val: return "val";
    case SplitRole::Test: return "test";
  }
  throw std::invalid_argument("split_role_name: bad role");
}

SplitRole split_role_from_name(const std::string& name) {
  if (name == "train") return SplitRole::Train;
  if (name == "val") return SplitRole::Val;
  if (name == "test") return SplitRole::Test;
  throw std::runtime_error("unknown split role '" + name + "'");
}

bool block_eligible(const HourlyBlock& b) {
  return response_indicator(b) == 1 && eligible_hour(b.hour_of_day);
}

namespace {

constexpr int kStrata = 10;
constexpr double kTrainFrac = 0.80;
constexpr double kValFrac = 0.15;
constexpr double kTestFrac = 0.05;

// floor counts plus largest-remainder rounding; ties train > val > test.
std::array<std::size_t, 3> deal_counts(std::size_t n) {
  std::array<double, 3> want = {kTrainFrac * static_cast<double>(n),
                                kValFrac * static_cast<double>(n),
                                kTestFrac * static_cast<double>(n)};
  std::array<std::size_t, 3> got{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    got[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::floor(want[static_cast<std::size_t>(i)]));
    rem[static_cast<std::size_t>(i)] = want[static_cast<std::size_t>(i)] - static_cast<double>(got[static_cast<std::size_t>(i)]);
    assigned += got[static_cast<std::size_t>(i)];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return rem[static_cast<std::size_t>(a)] > rem[static_cast<std::size_t>(b)]; });
  std::size_t left = n - assigned;
  for (std::size_t k = 0; k < left; ++k) {
    got[static_cast<std::size_t>(order[k % 3])] += 1;
  }
  return got;
}

}  // namespace

std::vector<SplitRecord> make_splits(const Cohort& cohort, int n_folds,
                                     std::uint64_t seed) {
  if (n_folds <= 0) throw std::invalid_argument("make_splits: n_folds must be positive");
  std::vector<SplitRecord> records;
  for (int fold = 0; fold < n_folds; ++fold) {
    for (const auto& p : cohort.participants) {
      // Eligible blocks sorted by (steps, hour) so strata are count-ordered
      // and the cut is deterministic.
      std::vector<std::int64_t> idx;
      for (std::int64_t t = 0; t < p.size(); ++t) {
        if (block_eligible(p.blocks[t])) idx.push_back(t);
      }
      if (idx.empty()) continue;
      std::sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
        if (p.blocks[a].steps != p.blocks[b].steps) {
          return p.blocks[a].steps < p.blocks[b].steps;
        }
        return a < b;
      });
      std::size_t n = idx.size();
      std::size_t strata = std::min<std::size_t>(kStrata, n);
      std::size_t base = n / strata;
      std::size_t extra = n % strata;
      std::size_t pos = 0;
      std::vector<SplitRecord> local;
      local.reserve(n);
      for (std::size_t s = 0; s < strata; ++s) {
        std::size_t len = base + (s < extra ? 1 : 0);
        std::vector<std::int64_t> stratum(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                          idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
        Rng rng(derive_seed(seed, {0x53504C4954ULL, static_cast<std::uint64_t>(fold),
                                   fnv1a64(p.participant_id),
                                   static_cast<std::uint64_t>(s)}));
        rng.shuffle(stratum);
        auto counts = deal_counts(stratum.size());
        for (std::size_t k = 0; k < stratum.size(); ++k) {
          SplitRole role = k < counts[0]                ? SplitRole::Train
                           : k < counts[0] + counts[1] ? SplitRole::Val
                                                        : SplitRole::Test;
          local.push_back({p.participant_id, stratum[k], fold, role});
        }
      }
      std::sort(local.begin(), local.end(),
                [](const SplitRecord& a, const SplitRecord& b) {
                  return a.hour_index < b.hour_index;
                });
      records.insert(records.end(), local.begin(), local.end());
    }
  }
  return records;
}

const std::vector<int>* FoldView::roles(const std::string& pid) const {
  auto it = role_by_participant.find(pid);
  return it == role_by_participant.end() ? nullptr : &it->second;
}

FoldView fold_view(const std::vector<SplitRecord>& records, int fold,
                   const Cohort& cohort) {
  FoldView view;
  for (const auto& p : cohort.participants) {
    view.role_by_participant[p.participant_id].assign(p.blocks.size(), -1);
  }
  bool any = false;
  for (const auto& r : records) {
    if (r.fold != fold) continue;
    any = true;
    auto it = view.role_by_participant.find(r.participant_id);
    if (it == view.role_by_participant.end()) {
      throw std::runtime_error("fold_view: split references unknown participant '" +
                               r.participant_id + "'");
    }
    if (r.hour_index < 0 ||
        r.hour_index >= static_cast<std::int64_t>(it->second.size())) {
      throw std::runtime_error("fold_view: hour_index out of range for '" +
                               r.participant_id + "'");
    }
    it->second[static_cast<std::size_t>(r.hour_index)] = static_cast<int>(r.role);
  }
  if (!any) {
    throw std::runtime_error("fold_view: no records for fold " + std::to_string(fold));
  }
  return view;
}

std::string splits_to_csv(const std::vector<SplitRecord>& records) {
  std::string out = "participant_id,hour_index,fold,role\n";
  for (const auto& r : records) {
    out += r.participant_id;
    out += ',';
    out += format_int(r.hour_index);
    out += ',';
    out += format_int(r.fold);
    out += ',';
    out += split_role_name(r.role);
    out += '\n';
  }
  return out;
}

std::vector<SplitRecord> read_splits_csv(const std::string& path) {
  std::string content = read_file(path);
  std::vector<SplitRecord> records;
  std::size_t start = 0;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (start <= content.size()) {
    std::size_t pos = content.find('\n', start);
    std::string line = pos == std::string::npos ? content.substr(start)
                                                : content.substr(start, pos - start);
    start = pos == std::string::npos ? content.size() + 1 : pos + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "participant_id,hour_index,fold,role") {
        throw std::runtime_error(path + ":1: expected header "
                                 "'participant_id,hour_index,fold,role'");
      }
      header_seen = true;
      continue;
    }
    auto f = split_csv_line(line);
    if (f.size() != 4) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 4 fields");
    }
    SplitRecord r;
    r.participant_id = f[0];
    try {
      r.hour_index = parse_int(f[1], "hour_index");
      r.fold = static_cast<int>(parse_int(f[2], "fold"));
      r.role = split_role_from_name(f[3]);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    records.push_back(std::move(r));
  }
  if (!header_seen) {
    throw std::runtime_error(path + ":1: empty splits file");
  }
  return records;
}

double participant_missing_rate(const ParticipantSeries& series) {
  std::int64_t total = 0;
  std::int64_t missing = 0;
  for (const auto& b : series.blocks) {
    if (!eligible_hour(b.hour_of_day)) continue;
    ++total;
    if (!response_indicator(b)) ++missing;
  }
  if (total == 0) return 0.0;
  return static_cast<double>(missing) / static_cast<double>(total);
}

int missing_rate_bin(double rate) {
  if (rate < 0.0 || rate > 1.0) {
    throw std::invalid_argument("missing_rate_bin: rate must be in [0, 1]");
  }
  int bin = static_cast<int>(rate / 0.2);
  return bin >= kMissingRateBins ? kMissingRateBins - 1 : bin;
}

int step_count_bin(std::int64_t true_steps) {
  if (true_steps < 0) throw std::invalid_argument("step_count_bin: negative steps");
  if (true_steps == 0) return 0;
  return static_cast<int>(1 + (true_steps - 1) / 500);
}

std::pair<std::int64_t, std::int64_t> step_count_bin_range(int bin) {
  if (bin < 0) throw std::invalid_argument("step_count_bin_range: negative bin");
  if (bin == 0) return {0, 0};
  return {500LL * (bin - 1) + 1, 500LL * bin};
}

std::vector<StepBinStat> step_bin_breakdown(const std::vector<std::int64_t>& truths,
                                            const std::vector<double>& preds) {
  if (truths.size() != preds.size()) {
    throw std::invalid_argument("step_bin_breakdown: size mismatch");
  }
  std::vector<double> ae_sum;
  std::vector<std::int64_t> count;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    int bin = step_count_bin(truths[i]);
    if (bin >= static_cast<int>(count.size())) {
      ae_sum.resize(static_cast<std::size_t>(bin) + 1, 0.0);
      count.resize(static_cast<std::size_t>(bin) + 1, 0);
    }
    ae_sum[static_cast<std::size_t>(bin)] +=
        std::fabs(preds[i] - static_cast<double>(truths[i]));
    count[static_cast<std::size_t>(bin)] += 1;
  }
  std::vector<StepBinStat> out;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    StepBinStat s;
    s.bin = static_cast<int>(b);
    s.n_blocks = count[b];
    s.micro_mae = ae_sum[b] / static_cast<double>(count[b]);
    out.push_back(s);
  }
  return out;
}

std::vector<double> acf_median(const Cohort& cohort, int max_lag, int min_pairs) {
  if (max_lag < 1) throw std::invalid_argument("acf_median: max_lag must be >= 1");
  std::vector<double> result(static_cast<std::size_t>(max_lag) + 1,
                             std::numeric_limits<double>::quiet_NaN());
  result[0] = 1.0;

  // Cache observed rates once per participant.
  std::vector<std::vector<double>> rates;
  std::vector<std::vector<char>> obs;
  for (const auto& p : cohort.participants) {
    std::vector<double> r(p.blocks.size(), 0.0);
    std::vector<char> o(p.blocks.size(), 0);
    for (std::size_t t = 0; t < p.blocks.size(); ++t) {
      if (response_indicator(p.blocks[t])) {
        o[t] = 1;
        r[t] = step_rate(p.blocks[t]);
      }
    }
    rates.push_back(std::move(r));
    obs.push_back(std::move(o));
  }

  for (int lag = 1; lag <= max_lag; ++lag) {
    std::vector<double> vals;
    for (std::size_t pi = 0; pi < rates.size(); ++pi) {
      const auto& r = rates[pi];
      const auto& o = obs[pi];
      std::int64_t n = 0;
      double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      std::size_t T = r.size();
      if (T <= static_cast<std::size_t>(lag)) continue;
      for (std::size_t t = 0; t + static_cast<std::size_t>(lag) < T; ++t) {
        if (!o[t] || !o[t + static_cast<std::size_t>(lag)]) continue;
        double x = r[t];
        double y = r[t + static_cast<std::size_t>(lag)];
        ++n;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
      }
      if (n < min_pairs) continue;
      double dn = static_cast<double>(n);
      double vx = sxx - sx * sx / dn;
      double vy = syy - sy * sy / dn;
      if (vx <= 0.0 || vy <= 0.0) continue;
      double cov = sxy - sx * sy / dn;
      vals.push_back(cov / std::sqrt(vx * vy));
    }
    if (!vals.empty()) {
      result[static_cast<std::size_t>(lag)] = median(std::move(vals));
    }
  }
  return result;
}

std::string acf_to_csv(const std::vector<double>& acf) {
  std::string out = "lag,median_acf\n";
  for (std::size_t lag = 1; lag < acf.size(); ++lag) {
    out += format_int(static_cast<std::int64_t>(lag));
    out += ',';
    if (std::isnan(acf[lag])) {
      out += "nan";
    } else {
      out += format_double(acf[lag]);
    }
    out += '\n';
  }
  return out;
}

namespace {

// Regularized incomplete beta via Lentz's continued fraction.
double betacf(double a, double b, double x) {
  const int max_iter = 300;
  const double eps = 3e-14;
  const double fpmin = 1e-300;
  double qab = a + b;
  double qap = a + 1.0;
  double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_beta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                   a * std::log(x) + b * std::log(1.0 - x);
  double front = std::exp(ln_beta);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * betacf(a, b, x) / a;
  }
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("paired_t_test: size mismatch");
  }
  if (a.size() < 2) {
    throw std::invalid_argument("paired_t_test: need at least two pairs");
  }
  double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  TTestResult r;
  r.df = static_cast<int>(a.size()) - 1;
  double sd = std::sqrt(ss / (n - 1.0));
  if (sd == 0.0) {
    r.t = mean == 0.0 ? 0.0 : (mean > 0.0 ? 1e308 : -1e308);
    r.p = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(n));
  double df = static_cast<double>(r.df);
  r.p = reg_inc_beta(df / 2.0, 0.5, df / (df + r.t * r.t));
  return r;
}

}  // namespace stepfill
