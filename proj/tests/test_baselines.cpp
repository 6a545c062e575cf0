#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "stepfill/baselines.hpp"
#include "stepfill/ingest.hpp"

using namespace stepfill;

namespace {

ParticipantSeries patterned_series(int days = 21, int start_dow = 0) {
  ParticipantSeries s;
  s.participant_id = "p";
  for (int i = 0; i < 24 * days; ++i) {
    HourlyBlock b;
    b.day_index = i / 24;
    b.day_of_week = (start_dow + i / 24) % 7;
    b.hour_of_day = i % 24;
    b.wear_minutes = 60;
    b.steps = 60 * (10 + 3 * b.day_of_week + b.hour_of_day);
    s.blocks.push_back(b);
  }
  return s;
}

// Independent fill oracle: recompute a statistical fill straight off the raw
// series with plain loops.
double oracle_stat_fill(const ParticipantSeries& s,
                        const std::set<std::int64_t>& holdout, FillMethod m,
                        FillFactor f, std::int64_t t) {
  const HourlyBlock& tb = s.blocks[static_cast<std::size_t>(t)];
  std::vector<double> rates;
  double steps = 0.0, wear = 0.0;
  for (std::int64_t u = 0; u < s.size(); ++u) {
    const HourlyBlock& b = s.blocks[static_cast<std::size_t>(u)];
    if (b.wear_minutes == 0 || holdout.count(u)) continue;
    if (!eligible_hour(b.hour_of_day)) continue;
    bool match = true;
    if (f == FillFactor::DayOfWeek) match = b.day_of_week == tb.day_of_week;
    if (f == FillFactor::HourOfDay) match = b.hour_of_day == tb.hour_of_day;
    if (f == FillFactor::DwHd) {
      match = b.day_of_week == tb.day_of_week && b.hour_of_day == tb.hour_of_day;
    }
    if (!match) continue;
    rates.push_back(step_rate(b));
    steps += static_cast<double>(b.steps);
    wear += static_cast<double>(b.wear_minutes);
  }
  if (rates.empty()) {
    // Empty cell: the fill backs off to the participant daytime median.
    std::vector<double> day_rates;
    for (std::int64_t u = 0; u < s.size(); ++u) {
      const HourlyBlock& b = s.blocks[static_cast<std::size_t>(u)];
      if (b.wear_minutes == 0 || holdout.count(u)) continue;
      if (!eligible_hour(b.hour_of_day)) continue;
      day_rates.push_back(step_rate(b));
    }
    REQUIRE(!day_rates.empty());
    std::sort(day_rates.begin(), day_rates.end());
    std::size_t n = day_rates.size();
    return n % 2 ? day_rates[n / 2]
                 : 0.5 * (day_rates[n / 2 - 1] + day_rates[n / 2]);
  }
  if (m == FillMethod::Mean) {
    double sum = 0.0;
    for (double r : rates) sum += r;
    return sum / static_cast<double>(rates.size());
  }
  if (m == FillMethod::MicroMean) return steps / wear;
  std::sort(rates.begin(), rates.end());
  std::size_t n = rates.size();
  return n % 2 ? rates[n / 2] : 0.5 * (rates[n / 2 - 1] + rates[n / 2]);
}

}  // namespace

TEST_CASE("method and factor names parse") {
  CHECK(fill_method_from_name("avg_fb") == FillMethod::AvgFb);
  CHECK(fill_factor_from_name("dw_hd") == FillFactor::DwHd);
  CHECK_THROWS(fill_method_from_name("nope"));
  CHECK_THROWS(fill_factor_from_name("nope"));
}

TEST_CASE("statistical fills match the oracle across factors and methods") {
  SynthConfig cfg;
  cfg.participants = 1;
  cfg.weeks = 6;
  cfg.seed = 31;
  ParticipantSeries s = generate_synthetic(cfg).cohort.participants[0];
  std::vector<std::int64_t> holdout;
  std::set<std::int64_t> holdout_set;
  for (std::int64_t t = 11; t < s.size(); t += 37) {
    if (s.blocks[static_cast<std::size_t>(t)].wear_minutes > 0) {
      holdout.push_back(t);
      holdout_set.insert(t);
    }
  }
  FillContext ctx = build_fill_context(s, holdout);
  for (FillMethod m : {FillMethod::Mean, FillMethod::MicroMean, FillMethod::Median}) {
    for (FillFactor f : {FillFactor::Participant, FillFactor::DayOfWeek,
                         FillFactor::HourOfDay, FillFactor::DwHd}) {
      for (std::int64_t t : {std::int64_t(300), std::int64_t(701), holdout[2]}) {
        double got = fill_predict_rate(ctx, m, f, t);
        double want = oracle_stat_fill(s, holdout_set, m, f, t);
        CAPTURE(static_cast<int>(m));
        CAPTURE(static_cast<int>(f));
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("statistical fills ignore held-out blocks") {
  ParticipantSeries s = patterned_series(14);
  std::int64_t victim = 24 * 3 + 10;
  // Plant an absurd value in a block, then hold it out: fills cannot move.
  FillContext before = build_fill_context(s, {victim});
  double base = fill_predict_rate(before, FillMethod::Mean, FillFactor::DwHd, victim);
  s.blocks[static_cast<std::size_t>(victim)].steps = 60 * 100000;
  FillContext after = build_fill_context(s, {victim});
  double poisoned =
      fill_predict_rate(after, FillMethod::Mean, FillFactor::DwHd, victim);
  CHECK(poisoned == base);  // bitwise: the block never entered the statistics
}

TEST_CASE("zero fill predicts zero rate but scales wear for steps") {
  ParticipantSeries s = patterned_series(7);
  FillContext ctx = build_fill_context(s, {});
  CHECK(fill_predict_rate(ctx, FillMethod::Zero, FillFactor::Participant, 30) == 0.0);
  CHECK(fill_predict_steps(ctx, FillMethod::Zero, FillFactor::Participant, 30) == 0.0);
}

TEST_CASE("forward and backward fills bracket through raw data") {
  ParticipantSeries s = patterned_series(7);
  // Carve a gap at hours 50..52; brackets are 49 and 53.
  for (std::int64_t t = 50; t <= 52; ++t) {
    s.blocks[static_cast<std::size_t>(t)].wear_minutes = 0;
    s.blocks[static_cast<std::size_t>(t)].steps = 0;
  }
  FillContext ctx = build_fill_context(s, {});
  double left = step_rate(s.blocks[49]);
  double right = step_rate(s.blocks[53]);
  CHECK(fill_predict_rate(ctx, FillMethod::Forward, FillFactor::Participant, 51) ==
        doctest::Approx(left));
  CHECK(fill_predict_rate(ctx, FillMethod::Backward, FillFactor::Participant, 51) ==
        doctest::Approx(right));
  CHECK(fill_predict_rate(ctx, FillMethod::AvgFb, FillFactor::Participant, 51) ==
        doctest::Approx(0.5 * (left + right)));

  // A held-out neighbor still brackets (the documented raw-series behavior).
  FillContext held = build_fill_context(s, {49});
  CHECK(fill_predict_rate(held, FillMethod::Forward, FillFactor::Participant, 51) ==
        doctest::Approx(left));

  // No block before the start: falls back to the all-hours median.
  ParticipantSeries gap_start = patterned_series(7);
  for (std::int64_t t = 0; t < 5; ++t) {
    gap_start.blocks[static_cast<std::size_t>(t)].wear_minutes = 0;
    gap_start.blocks[static_cast<std::size_t>(t)].steps = 0;
  }
  FillContext ctx2 = build_fill_context(gap_start, {});
  CHECK(fill_predict_rate(ctx2, FillMethod::Forward, FillFactor::Participant, 2) ==
        doctest::Approx(ctx2.participant_median_all_hours));
  // avg_fb with only one side uses that side.
  CHECK(fill_predict_rate(ctx2, FillMethod::AvgFb, FillFactor::Participant, 2) ==
        doctest::Approx(step_rate(gap_start.blocks[5])));
}

TEST_CASE("fill steps use recorded wear, override, or a full hour") {
  ParticipantSeries s = patterned_series(7);
  s.blocks[80].wear_minutes = 30;
  s.blocks[90].wear_minutes = 0;
  s.blocks[90].steps = 0;
  FillContext ctx = build_fill_context(s, {});
  double r80 = fill_predict_rate(ctx, FillMethod::Median, FillFactor::DwHd, 80);
  CHECK(fill_predict_steps(ctx, FillMethod::Median, FillFactor::DwHd, 80) ==
        doctest::Approx(30.0 * r80));
  double r90 = fill_predict_rate(ctx, FillMethod::Median, FillFactor::DwHd, 90);
  CHECK(fill_predict_steps(ctx, FillMethod::Median, FillFactor::DwHd, 90) ==
        doctest::Approx(60.0 * r90));  // missing block assumes a full hour
  CHECK(fill_predict_steps(ctx, FillMethod::Median, FillFactor::DwHd, 90, 45) ==
        doctest::Approx(45.0 * r90));
}

TEST_CASE("knn k=1 recovers a planted twin") {
  // Repeating daily pattern: the same hour on other days is an exact profile
  // twin except for noise we plant ourselves.
  ParticipantSeries s = patterned_series(28, 0);
  // Make days identical regardless of dow so profiles repeat every 24 hours.
  for (auto& b : s.blocks) b.steps = 60 * (10 + b.hour_of_day);
  std::int64_t target = 24 * 14 + 12;
  s.blocks[static_cast<std::size_t>(target)].wear_minutes = 0;
  s.blocks[static_cast<std::size_t>(target)].steps = 0;
  ParticipantContext ctx = build_context(s, {});
  FillContext fill_ctx = build_fill_context(s, {});
  KnnIndex index(ctx, fill_ctx);
  KnnConfig cfg;
  cfg.k = 1;
  cfg.weighting = KnnWeighting::Uniform;
  double got = index.predict_rate(target, cfg);
  // Any same-hour block on another interior day has an identical profile and
  // rate 22; ties resolve to the earliest, but the rate is the same.
  CHECK(got == doctest::Approx(22.0).epsilon(1e-9));
}

TEST_CASE("knn matches a hand-rolled distance ranking") {
  SynthConfig scfg;
  scfg.participants = 1;
  scfg.weeks = 8;
  scfg.seed = 77;
  ParticipantSeries s = generate_synthetic(scfg).cohort.participants[0];
  ParticipantContext ctx = build_context(s, {});
  FillContext fill_ctx = build_fill_context(s, {});
  KnnIndex index(ctx, fill_ctx);

  std::int64_t target = -1;
  for (std::int64_t t = 200; t < s.size(); ++t) {
    if (!ctx.is_usable(t)) {
      target = t;
      break;
    }
  }
  REQUIRE(target >= 0);

  // Oracle: rank every usable block by squared profile distance.
  Lapr tl = build_lapr(ctx, target);
  struct Cand {
    double d;
    std::int64_t t;
    double rate;
  };
  std::vector<Cand> cands;
  for (std::int64_t u = 0; u < s.size(); ++u) {
    if (!ctx.is_usable(u)) continue;
    Lapr ul = build_lapr(ctx, u);
    double d = 0.0;
    for (int j = 0; j < kLaprLength; ++j) {
      double diff = tl.values[static_cast<std::size_t>(j)] -
                    ul.values[static_cast<std::size_t>(j)];
      d += diff * diff;
    }
    cands.push_back({d, u, step_rate(s.blocks[static_cast<std::size_t>(u)])});
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.d != b.d) return a.d < b.d;
    return a.t < b.t;
  });

  KnnConfig uni;
  uni.k = 7;
  uni.weighting = KnnWeighting::Uniform;
  double mean = 0.0;
  for (int i = 0; i < 7; ++i) mean += cands[static_cast<std::size_t>(i)].rate;
  mean /= 7.0;
  CHECK(index.predict_rate(target, uni) == doctest::Approx(mean).epsilon(1e-12));

  KnnConfig soft;
  soft.k = 7;
  soft.weighting = KnnWeighting::Softmax;
  soft.tau = 0.5;
  double dmin = cands[0].d;
  double wsum = 0.0, acc = 0.0;
  for (int i = 0; i < 7; ++i) {
    double w = std::exp((dmin - cands[static_cast<std::size_t>(i)].d) / soft.tau);
    wsum += w;
    acc += w * cands[static_cast<std::size_t>(i)].rate;
  }
  CHECK(index.predict_rate(target, soft) == doctest::Approx(acc / wsum).epsilon(1e-12));

  // k larger than the pool uses the whole pool.
  KnnConfig huge;
  huge.k = 1000000;
  huge.weighting = KnnWeighting::Uniform;
  double all = 0.0;
  for (const auto& c : cands) all += c.rate;
  all /= static_cast<double>(cands.size());
  CHECK(index.predict_rate(target, huge) == doctest::Approx(all).epsilon(1e-12));

  KnnConfig bad;
  bad.k = 0;
  CHECK_THROWS(index.predict_rate(target, bad));
  KnnConfig badtau;
  badtau.k = 3;
  badtau.weighting = KnnWeighting::Softmax;
  badtau.tau = 0.0;
  CHECK_THROWS(index.predict_rate(target, badtau));
}

TEST_CASE("regression features carry window rates and one-hots") {
  ParticipantSeries s = patterned_series(21);
  ParticipantContext ctx = build_context(s, {});
  std::int64_t t = 24 * 10 + 13;
  Vec feat;
  regression_features(ctx, t, feat);
  REQUIRE(static_cast<int>(feat.size()) == kRegressionFeatures);
  // Spot-check one window cell: -1 day, same hour = relative (4, 10).
  int ri = relative_index(4, 10);
  CHECK(feat[static_cast<std::size_t>(ri)] ==
        doctest::Approx(ctx.norm_rate[static_cast<std::size_t>(t - 24)]));
  const HourlyBlock& b = s.blocks[static_cast<std::size_t>(t)];
  CHECK(feat[static_cast<std::size_t>(2 * kWindowCells + b.day_of_week)] == 1.0);
  CHECK(feat[static_cast<std::size_t>(2 * kWindowCells + 7 + b.hour_of_day)] == 1.0);
  // Exactly two one-hot bits set.
  double onehot_sum = 0.0;
  for (int i = 2 * kWindowCells; i < kRegressionFeatures; ++i) {
    onehot_sum += feat[static_cast<std::size_t>(i)];
  }
  CHECK(onehot_sum == 2.0);
}

TEST_CASE("regression training reduces error and is deterministic") {
  SynthConfig scfg;
  scfg.participants = 3;
  scfg.weeks = 6;
  scfg.seed = 41;
  Cohort cohort = generate_synthetic(scfg).cohort;
  std::vector<ParticipantContext> ctxs;
  std::vector<TargetRef> refs;
  for (std::size_t pi = 0; pi < cohort.participants.size(); ++pi) {
    ctxs.push_back(build_context(cohort.participants[pi], {}));
    const auto& p = cohort.participants[pi];
    for (std::int64_t t = 0; t < p.size(); ++t) {
      const auto& b = p.blocks[static_cast<std::size_t>(t)];
      if (b.wear_minutes > 0 && eligible_hour(b.hour_of_day)) {
        refs.push_back({static_cast<int>(pi), t});
      }
    }
  }
  RegressionConfig cfg;
  cfg.epochs = 6;
  cfg.batch = 256;
  cfg.seed = 3;
  RegressionModel model = fit_regression(ctxs, refs, cfg);
  auto mae = [&](const RegressionModel& m) {
    double acc = 0.0;
    for (const auto& r : refs) {
      const auto& ctx = ctxs[static_cast<std::size_t>(r.participant)];
      const auto& b = ctx.series->blocks[static_cast<std::size_t>(r.t)];
      double pred = regression_predict_steps(m, ctx, r.t);
      acc += std::fabs(pred - static_cast<double>(b.steps));
    }
    return acc / static_cast<double>(refs.size());
  };
  RegressionModel zero;
  zero.w.assign(kRegressionFeatures, 0.0);
  CHECK(mae(model) < mae(zero));
  RegressionModel model2 = fit_regression(ctxs, refs, cfg);
  CHECK(model.w == model2.w);
  CHECK(model.b == model2.b);
}

TEST_CASE("iterative flat layout and visit order") {
  // Column-major flattening: first column top-to-bottom, then the next.
  CHECK(iterative_flat_index(0, 0) == 0);
  CHECK(iterative_flat_index(8, 0) == 8);
  CHECK(iterative_flat_index(0, 1) == 9);
  CHECK(iterative_flat_index(4, 11) == 103);  // center
  CHECK(iterative_flat_index(8, 22) == 206);
  auto order = iterative_visit_order();
  REQUIRE(static_cast<int>(order.size()) == kIterPositions);
  // Alternating ends: 0, 206, 1, 205, ...
  CHECK(order[0] == 0);
  CHECK(order[1] == 206);
  CHECK(order[2] == 1);
  CHECK(order[3] == 205);
  CHECK(order.back() == 103);  // the center is imputed last
  std::set<int> unique(order.begin(), order.end());
  CHECK(static_cast<int>(unique.size()) == kIterPositions);
}

TEST_CASE("iterative imputation replays exactly and samples spread") {
  SynthConfig scfg;
  scfg.participants = 2;
  scfg.weeks = 6;
  scfg.seed = 51;
  Cohort cohort = generate_synthetic(scfg).cohort;
  std::vector<ParticipantContext> ctxs;
  std::vector<TargetRef> train, val;
  for (std::size_t pi = 0; pi < cohort.participants.size(); ++pi) {
    ctxs.push_back(build_context(cohort.participants[pi], {}));
    const auto& p = cohort.participants[pi];
    for (std::int64_t t = 0; t < p.size(); ++t) {
      const auto& b = p.blocks[static_cast<std::size_t>(t)];
      if (b.wear_minutes > 0 && eligible_hour(b.hour_of_day)) {
        (t % 5 ? train : val).push_back({static_cast<int>(pi), t});
      }
    }
  }
  IterativeConfig cfg;
  cfg.seed = 5;
  cfg.max_rows = 400;
  IterativeModel model = fit_iterative(ctxs, train, val, cfg);
  REQUIRE(static_cast<int>(model.w.size()) == kIterPositions);
  REQUIRE(static_cast<int>(model.sigma2.size()) == kIterPositions);

  std::int64_t target = -1;
  for (std::int64_t t = 100; t < ctxs[0].series->size(); ++t) {
    if (!ctxs[0].is_usable(t) &&
        eligible_hour(ctxs[0].series->blocks[static_cast<std::size_t>(t)].hour_of_day)) {
      target = t;
      break;
    }
  }
  REQUIRE(target >= 0);

  auto a = iterative_impute(model, ctxs[0], target, 5, 99);
  auto b = iterative_impute(model, ctxs[0], target, 5, 99);
  CHECK(a.mean_steps == b.mean_steps);  // exact replay
  CHECK(a.sample_steps == b.sample_steps);
  REQUIRE(a.sample_steps.size() == 5);
  double mean = 0.0;
  for (double v : a.sample_steps) mean += v;
  mean /= 5.0;
  CHECK(a.mean_steps == doctest::Approx(mean).epsilon(1e-12));

  auto c = iterative_impute(model, ctxs[0], target, 5, 100);
  CHECK(a.mean_steps != c.mean_steps);  // a different seed moves the samples

  // Zero residual variance collapses the samples onto one value.
  IterativeModel frozen = model;
  std::fill(frozen.sigma2.begin(), frozen.sigma2.end(), 0.0);
  auto d = iterative_impute(frozen, ctxs[0], target, 5, 99);
  for (double v : d.sample_steps) {
    CHECK(v == doctest::Approx(d.sample_steps[0]).epsilon(1e-12));
  }
  CHECK_THROWS(iterative_impute(model, ctxs[0], target, 0, 1));
}
