#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "stepfill/eval.hpp"
#include "stepfill/ingest.hpp"
#include "stepfill/io_util.hpp"
#include "stepfill/rng.hpp"

using namespace stepfill;

namespace {

// Flat-loop metrics oracle written independently of compute_metrics.
MetricsResult metrics_oracle(const std::vector<std::vector<double>>& errs) {
  MetricsResult r;
  std::vector<double> maes;
  std::vector<double> rmses;
  double ae = 0.0, se = 0.0;
  for (const auto& p : errs) {
    if (p.empty()) continue;
    double pa = 0.0, ps = 0.0;
    for (double e : p) {
      pa += e;
      ps += e * e;
      ae += e;
      se += e * e;
      ++r.n_blocks;
    }
    maes.push_back(pa / static_cast<double>(p.size()));
    rmses.push_back(std::sqrt(ps / static_cast<double>(p.size())));
  }
  r.n_participants = static_cast<int>(maes.size());
  r.micro_mae = ae / static_cast<double>(r.n_blocks);
  r.micro_rmse = std::sqrt(se / static_cast<double>(r.n_blocks));
  for (double m : maes) r.macro_mae += m;
  r.macro_mae /= static_cast<double>(maes.size());
  for (double m : rmses) r.macro_rmse += m;
  r.macro_rmse /= static_cast<double>(rmses.size());
  if (maes.size() > 1) {
    double ss = 0.0;
    for (double m : maes) ss += (m - r.macro_mae) * (m - r.macro_mae);
    double sd = std::sqrt(ss / (static_cast<double>(maes.size()) - 1.0));
    r.macro_mae_ci = 1.96 * sd / std::sqrt(static_cast<double>(maes.size()));
  }
  return r;
}

Cohort observed_cohort(int participants, int weeks, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.participants = participants;
  cfg.weeks = weeks;
  cfg.seed = seed;
  return generate_synthetic(cfg).cohort;
}

}  // namespace

TEST_CASE("metrics agree with the flat-loop oracle") {
  Rng rng(17);
  for (int rep = 0; rep < 40; ++rep) {
    std::vector<std::vector<double>> errs(1 + rng.uniform_int(8));
    for (auto& p : errs) {
      std::size_t n = rng.uniform_int(30);
      for (std::size_t i = 0; i < n; ++i) p.push_back(rng.uniform(0, 500));
    }
    bool any = false;
    for (auto& p : errs) any |= !p.empty();
    if (!any) {
      CHECK_THROWS(compute_metrics(errs));
      continue;
    }
    MetricsResult got = compute_metrics(errs);
    MetricsResult want = metrics_oracle(errs);
    CHECK(got.micro_mae == doctest::Approx(want.micro_mae).epsilon(1e-12));
    CHECK(got.macro_mae == doctest::Approx(want.macro_mae).epsilon(1e-12));
    CHECK(got.micro_rmse == doctest::Approx(want.micro_rmse).epsilon(1e-12));
    CHECK(got.macro_rmse == doctest::Approx(want.macro_rmse).epsilon(1e-12));
    CHECK(got.macro_mae_ci == doctest::Approx(want.macro_mae_ci).epsilon(1e-12));
    CHECK(got.n_blocks == want.n_blocks);
    CHECK(got.n_participants == want.n_participants);
  }
}

TEST_CASE("single-participant metrics collapse micro onto macro") {
  MetricsResult r = compute_metrics({{1.0, 3.0, 5.0}});
  CHECK(r.micro_mae == doctest::Approx(3.0));
  CHECK(r.macro_mae == doctest::Approx(3.0));
  CHECK(r.micro_rmse == doctest::Approx(r.macro_rmse));
  CHECK(r.macro_mae_ci == 0.0);
  CHECK(r.n_participants == 1);
}

TEST_CASE("splits partition eligible blocks with near-exact proportions") {
  Cohort cohort = observed_cohort(4, 6, 5);
  const int folds = 3;
  auto records = make_splits(cohort, folds, 77);

  // Same seed reproduces, different seed differs.
  auto again = make_splits(cohort, folds, 77);
  CHECK(splits_to_csv(records) == splits_to_csv(again));
  auto other = make_splits(cohort, folds, 78);
  CHECK(splits_to_csv(records) != splits_to_csv(other));

  for (int fold = 0; fold < folds; ++fold) {
    std::map<std::string, std::map<std::int64_t, SplitRole>> by_pid;
    for (const auto& r : records) {
      if (r.fold != fold) continue;
      bool fresh = by_pid[r.participant_id].emplace(r.hour_index, r.role).second;
      CHECK(fresh);  // no block assigned twice
    }
    for (const auto& p : cohort.participants) {
      std::size_t eligible = 0;
      for (std::int64_t t = 0; t < p.size(); ++t) {
        const auto& b = p.blocks[static_cast<std::size_t>(t)];
        bool elig = block_eligible(b);
        CHECK(elig == (b.wear_minutes > 0 && eligible_hour(b.hour_of_day)));
        if (elig) {
          ++eligible;
          REQUIRE(by_pid[p.participant_id].count(t) == 1);
        } else {
          CHECK(by_pid[p.participant_id].count(t) == 0);
        }
      }
      CHECK(by_pid[p.participant_id].size() == eligible);
      // Overall proportions: each of the <=10 strata deviates by at most one
      // block from exact 80/15/5, so totals deviate by at most 10.
      std::map<SplitRole, double> n;
      for (auto& [t, role] : by_pid[p.participant_id]) n[role] += 1.0;
      double total = static_cast<double>(by_pid[p.participant_id].size());
      CHECK(std::fabs(n[SplitRole::Train] - 0.80 * total) <= 10.0);
      CHECK(std::fabs(n[SplitRole::Val] - 0.15 * total) <= 10.0);
      CHECK(std::fabs(n[SplitRole::Test] - 0.05 * total) <= 10.0);
    }
  }
}

TEST_CASE("fold view exposes the role per block") {
  Cohort cohort = observed_cohort(2, 4, 6);
  auto records = make_splits(cohort, 2, 9);
  FoldView view = fold_view(records, 1, cohort);
  const auto* roles = view.roles(cohort.participants[0].participant_id);
  REQUIRE(roles != nullptr);
  REQUIRE(roles->size() ==
          static_cast<std::size_t>(cohort.participants[0].size()));
  std::map<std::int64_t, int> want;
  for (const auto& r : records) {
    if (r.fold == 1 && r.participant_id == cohort.participants[0].participant_id) {
      want[r.hour_index] = static_cast<int>(r.role);
    }
  }
  for (std::int64_t t = 0; t < cohort.participants[0].size(); ++t) {
    auto it = want.find(t);
    int expect = it == want.end() ? -1 : it->second;
    CHECK((*roles)[static_cast<std::size_t>(t)] == expect);
  }
  CHECK(view.roles("nobody") == nullptr);
  CHECK_THROWS(fold_view(records, 5, cohort));  // empty fold
}

TEST_CASE("splits csv round trip") {
  Cohort cohort = observed_cohort(2, 4, 8);
  auto records = make_splits(cohort, 2, 13);
  auto path = (std::filesystem::temp_directory_path() /
               ("stepfill_splits_" + std::to_string(::getpid()) + ".csv"))
                  .string();
  atomic_write_file(path, splits_to_csv(records));
  auto back = read_splits_csv(path);
  CHECK(splits_to_csv(back) == splits_to_csv(records));
  std::remove(path.c_str());
}

TEST_CASE("missing rate bins") {
  CHECK(missing_rate_bin(0.0) == 0);
  CHECK(missing_rate_bin(0.19) == 0);
  CHECK(missing_rate_bin(0.2) == 1);
  CHECK(missing_rate_bin(0.999) == 4);
  CHECK(missing_rate_bin(1.0) == 4);
  CHECK_THROWS(missing_rate_bin(-0.01));
  CHECK_THROWS(missing_rate_bin(1.01));
}

TEST_CASE("participant missing rate counts eligible hours only") {
  ParticipantSeries s;
  s.participant_id = "p";
  for (int i = 0; i < 48; ++i) {
    HourlyBlock b;
    b.day_index = i / 24;
    b.day_of_week = (i / 24) % 7;
    b.hour_of_day = i % 24;
    // Day one: all eligible hours observed; day two: all missing.
    b.wear_minutes = (i < 24) ? 60 : 0;
    s.blocks.push_back(b);
  }
  CHECK(participant_missing_rate(s) == doctest::Approx(0.5));
}

TEST_CASE("step count bins") {
  CHECK(step_count_bin(0) == 0);
  CHECK(step_count_bin(1) == 1);
  CHECK(step_count_bin(500) == 1);
  CHECK(step_count_bin(501) == 2);
  CHECK(step_count_bin(1000) == 2);
  auto [lo0, hi0] = step_count_bin_range(0);
  CHECK(lo0 == 0);
  CHECK(hi0 == 0);
  auto [lo2, hi2] = step_count_bin_range(2);
  CHECK(lo2 == 501);
  CHECK(hi2 == 1000);
  auto stats = step_bin_breakdown({0, 0, 250, 600}, {10.0, 20.0, 250.0, 0.0});
  REQUIRE(stats.size() == 3);
  CHECK(stats[0].bin == 0);
  CHECK(stats[0].n_blocks == 2);
  CHECK(stats[0].micro_mae == doctest::Approx(15.0));
  CHECK(stats[1].bin == 1);
  CHECK(stats[1].micro_mae == doctest::Approx(0.0));
  CHECK(stats[2].bin == 2);
  CHECK(stats[2].micro_mae == doctest::Approx(600.0));
}

TEST_CASE("acf finds a planted 24-hour period") {
  // Deterministic sinusoid with period 24: lag-24 correlation 1, lag-12 -1.
  Cohort cohort;
  for (int pi = 0; pi < 3; ++pi) {
    ParticipantSeries s;
    s.participant_id = "p" + std::to_string(pi);
    for (int i = 0; i < 24 * 30; ++i) {
      HourlyBlock b;
      b.day_index = i / 24;
      b.day_of_week = (i / 24) % 7;
      b.hour_of_day = i % 24;
      b.wear_minutes = 60;
      double rate = 5.0 + 4.0 * std::sin(2.0 * 3.14159265358979 * i / 24.0) +
                    0.1 * pi;
      b.steps = static_cast<std::int64_t>(std::llround(rate * 60.0));
      s.blocks.push_back(b);
    }
    cohort.participants.push_back(std::move(s));
  }
  auto acf = acf_median(cohort, 48, 30);
  REQUIRE(acf.size() == 49);
  CHECK(acf[0] == doctest::Approx(1.0));
  CHECK(acf[24] > 0.99);
  CHECK(acf[12] < -0.99);
  CHECK(acf[48] > 0.99);
}

TEST_CASE("acf respects the min-pairs and variance rules") {
  Cohort cohort;
  ParticipantSeries s;
  s.participant_id = "tiny";
  for (int i = 0; i < 40; ++i) {
    HourlyBlock b;
    b.day_index = i / 24;
    b.day_of_week = (i / 24) % 7;
    b.hour_of_day = i % 24;
    b.wear_minutes = 60;
    b.steps = 60 * (i % 3);
    s.blocks.push_back(b);
  }
  cohort.participants.push_back(s);
  auto acf = acf_median(cohort, 20, 30);
  // 40 blocks, lag 15 leaves only 25 pairs < 30: excluded, so NaN.
  CHECK(std::isnan(acf[15]));
  CHECK_FALSE(std::isnan(acf[5]));

  // Constant series: zero variance at every lag, all NaN.
  Cohort flat;
  ParticipantSeries f;
  f.participant_id = "flat";
  for (int i = 0; i < 200; ++i) {
    HourlyBlock b;
    b.day_index = i / 24;
    b.day_of_week = (i / 24) % 7;
    b.hour_of_day = i % 24;
    b.wear_minutes = 60;
    b.steps = 60;
    f.blocks.push_back(b);
  }
  flat.participants.push_back(f);
  auto acf2 = acf_median(flat, 5, 30);
  CHECK(std::isnan(acf2[3]));

  std::string csv = acf_to_csv(acf2);
  CHECK(csv.find("nan") != std::string::npos);
  CHECK(csv.rfind("lag,median_acf\n", 0) == 0);
}

TEST_CASE("paired t-test matches reference values") {
  // diffs {1, 2, 3, 4, 2}: reference t and p computed independently.
  TTestResult r = paired_t_test({5.0, 3.0, 8.0, 9.0, 4.0}, {4.0, 1.0, 5.0, 5.0, 2.0});
  CHECK(r.df == 4);
  CHECK(r.t == doctest::Approx(4.70678724331642).epsilon(1e-10));
  CHECK(r.p == doctest::Approx(0.00926169675951443).epsilon(1e-8));
  // diffs {1..5}.
  TTestResult r2 = paired_t_test({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
  CHECK(r2.t == doctest::Approx(4.24264068711928).epsilon(1e-10));
  CHECK(r2.p == doctest::Approx(0.0132355995636827).epsilon(1e-8));
  // Symmetric: swapping sides flips t, keeps p.
  TTestResult r3 = paired_t_test({0, 0, 0, 0, 0}, {1, 2, 3, 4, 5});
  CHECK(r3.t == doctest::Approx(-r2.t));
  CHECK(r3.p == doctest::Approx(r2.p));
  // Identical sides: t 0, p 1.
  TTestResult r4 = paired_t_test({1, 2}, {1, 2});
  CHECK(r4.t == 0.0);
  CHECK(r4.p == doctest::Approx(1.0));
  CHECK_THROWS(paired_t_test({1.0}, {2.0}));
  CHECK_THROWS(paired_t_test({1.0, 2.0}, {2.0}));
}
