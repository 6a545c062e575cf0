#include "stepfill/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stepfill/window.hpp"

namespace stepfill {

FillMethod fill_method_from_name(const std::string& name) {
  if (name == "zero") return FillMethod::Zero;
  if (name == "forward") return FillMethod::Forward;
  if (name == "backward") return FillMethod::Backward;
  if (name == "avg_fb") return FillMethod::AvgFb;
  if (name == "mean") return FillMethod::Mean;
  if (name == "micro_mean") return FillMethod::MicroMean;
  if (name == "median") return FillMethod::Median;
  throw std::runtime_error("unknown fill method '" + name + "'");
}

FillFactor fill_factor_from_name(const std::string& name) {
  if (name == "participant") return FillFactor::Participant;
  if (name == "day_of_week") return FillFactor::DayOfWeek;
  if (name == "hour_of_day") return FillFactor::HourOfDay;
  if (name == "dw_hd") return FillFactor::DwHd;
  throw std::runtime_error("unknown fill factor '" + name + "'");
}

namespace {

std::size_t factor_cells(FillFactor f) {
  switch (f) {
    case FillFactor::Participant: return 1;
    case FillFactor::DayOfWeek: return 7;
    case FillFactor::HourOfDay: return 24;
    case FillFactor::DwHd: return 168;
  }
  throw std::invalid_argument("factor_cells: bad factor");
}

std::size_t factor_cell_of(FillFactor f, const HourlyBlock& b) {
  switch (f) {
    case FillFactor::Participant: return 0;
    case FillFactor::DayOfWeek: return static_cast<std::size_t>(b.day_of_week);
    case FillFactor::HourOfDay: return static_cast<std::size_t>(b.hour_of_day);
    case FillFactor::DwHd:
      return static_cast<std::size_t>(b.day_of_week * 24 + b.hour_of_day);
  }
  throw std::invalid_argument("factor_cell_of: bad factor");
}

}  // namespace

FillContext build_fill_context(const ParticipantSeries& series,
                               const std::vector<std::int64_t>& holdout) {
  FillContext ctx;
  ctx.series = &series;
  ctx.holdout.insert(holdout.begin(), holdout.end());

  for (int f = 0; f < 4; ++f) {
    std::size_t cells = factor_cells(static_cast<FillFactor>(f));
    ctx.mean_rate[static_cast<std::size_t>(f)].assign(cells, 0.0);
    ctx.micro_mean_rate[static_cast<std::size_t>(f)].assign(cells, 0.0);
    ctx.median_rate[static_cast<std::size_t>(f)].assign(cells, 0.0);
    ctx.has_cell[static_cast<std::size_t>(f)].assign(cells, 0);
  }

  std::array<std::vector<std::vector<double>>, 4> rates;
  std::array<std::vector<double>, 4> step_sum;
  std::array<std::vector<double>, 4> wear_sum;
  for (int f = 0; f < 4; ++f) {
    std::size_t cells = factor_cells(static_cast<FillFactor>(f));
    rates[static_cast<std::size_t>(f)].resize(cells);
    step_sum[static_cast<std::size_t>(f)].assign(cells, 0.0);
    wear_sum[static_cast<std::size_t>(f)].assign(cells, 0.0);
  }
  std::vector<double> all_hours_rates;

  for (std::int64_t t = 0; t < series.size(); ++t) {
    const HourlyBlock& b = series.blocks[static_cast<std::size_t>(t)];
    if (!response_indicator(b) || ctx.holdout.count(t)) continue;
    double r = step_rate(b);
    all_hours_rates.push_back(r);
    if (!eligible_hour(b.hour_of_day)) continue;
    for (int f = 0; f < 4; ++f) {
      std::size_t c = factor_cell_of(static_cast<FillFactor>(f), b);
      rates[static_cast<std::size_t>(f)][c].push_back(r);
      step_sum[static_cast<std::size_t>(f)][c] += static_cast<double>(b.steps);
      wear_sum[static_cast<std::size_t>(f)][c] += static_cast<double>(b.wear_minutes);
    }
  }

  for (int f = 0; f < 4; ++f) {
    auto fi = static_cast<std::size_t>(f);
    for (std::size_t c = 0; c < rates[fi].size(); ++c) {
      const auto& rs = rates[fi][c];
      if (rs.empty()) continue;
      ctx.has_cell[fi][c] = 1;
      double sum = 0.0;
      for (double r : rs) sum += r;
      ctx.mean_rate[fi][c] = sum / static_cast<double>(rs.size());
      ctx.micro_mean_rate[fi][c] = step_sum[fi][c] / wear_sum[fi][c];
      ctx.median_rate[fi][c] = median(rs);
    }
  }

  ctx.any_usable = !all_hours_rates.empty();
  if (ctx.any_usable) {
    ctx.participant_median_all_hours = median(all_hours_rates);
  }
  auto pf = static_cast<std::size_t>(FillFactor::Participant);
  ctx.any_daytime = ctx.has_cell[pf][0] != 0;
  if (ctx.any_daytime) {
    ctx.participant_median_daytime = ctx.median_rate[pf][0];
  }
  return ctx;
}

namespace {

double participant_median_fallback(const FillContext& ctx) {
  if (ctx.any_daytime) return ctx.participant_median_daytime;
  if (ctx.any_usable) return ctx.participant_median_all_hours;
  return 0.0;
}

// Nearest non-missing block strictly before/after t, any hour. Held-out
// blocks still count: the bracket fills read the raw wear record.
std::optional<double> bracket_rate(const ParticipantSeries& series, std::int64_t t,
                                   int direction) {
  for (std::int64_t u = t + direction; series.in_range(u); u += direction) {
    const HourlyBlock& b = series.blocks[static_cast<std::size_t>(u)];
    if (response_indicator(b)) return step_rate(b);
  }
  return std::nullopt;
}

double all_hours_median_fallback(const FillContext& ctx) {
  return ctx.any_usable ? ctx.participant_median_all_hours : 0.0;
}

}  // namespace

double fill_predict_rate(const FillContext& ctx, FillMethod method,
                         FillFactor factor, std::int64_t t) {
  if (!ctx.series->in_range(t)) {
    throw std::invalid_argument("fill_predict_rate: target out of range");
  }
  const HourlyBlock& b = ctx.series->blocks[static_cast<std::size_t>(t)];
  switch (method) {
    case FillMethod::Zero:
      return 0.0;
    case FillMethod::Forward: {
      auto f = bracket_rate(*ctx.series, t, -1);
      return f ? *f : all_hours_median_fallback(ctx);
    }
    case FillMethod::Backward: {
      auto bk = bracket_rate(*ctx.series, t, +1);
      return bk ? *bk : all_hours_median_fallback(ctx);
    }
    case FillMethod::AvgFb: {
      auto f = bracket_rate(*ctx.series, t, -1);
      auto bk = bracket_rate(*ctx.series, t, +1);
      if (f && bk) return 0.5 * (*f + *bk);
      if (f) return *f;
      if (bk) return *bk;
      return all_hours_median_fallback(ctx);
    }
    case FillMethod::Mean:
    case FillMethod::MicroMean:
    case FillMethod::Median: {
      auto fi = static_cast<std::size_t>(factor);
      std::size_t c = factor_cell_of(factor, b);
      if (!ctx.has_cell[fi][c]) return participant_median_fallback(ctx);
      if (method == FillMethod::Mean) return ctx.mean_rate[fi][c];
      if (method == FillMethod::MicroMean) return ctx.micro_mean_rate[fi][c];
      return ctx.median_rate[fi][c];
    }
  }
  throw std::invalid_argument("fill_predict_rate: bad method");
}

double fill_predict_steps(const FillContext& ctx, FillMethod method,
                          FillFactor factor, std::int64_t t,
                          std::optional<int> wear_override) {
  double rate = fill_predict_rate(ctx, method, factor, t);
  int wear = wear_override
                 ? *wear_override
                 : ctx.series->blocks[static_cast<std::size_t>(t)].wear_minutes;
  if (wear == 0) wear = 60;  // originally-missing blocks assume a full hour
  return rate * static_cast<double>(wear);
}

// --- kNN ---------------------------------------------------------------------

KnnIndex::KnnIndex(const ParticipantContext& ctx, const FillContext& fill_ctx)
    : ctx_(&ctx), fill_ctx_(&fill_ctx) {
  for (std::int64_t t = 0; t < ctx.series->size(); ++t) {
    if (!ctx.usable[static_cast<std::size_t>(t)]) continue;
    pool_.push_back(t);
    profiles_.push_back(build_lapr(ctx, t).values);
    pool_rates_.push_back(
        step_rate(ctx.series->blocks[static_cast<std::size_t>(t)]));
  }
}

double KnnIndex::predict_rate(std::int64_t t, const KnnConfig& cfg) const {
  if (cfg.k <= 0) throw std::invalid_argument("knn: k must be positive");
  if (cfg.weighting == KnnWeighting::Softmax && cfg.tau <= 0.0) {
    throw std::invalid_argument("knn: tau must be positive");
  }
  if (pool_.empty()) {
    return fill_predict_rate(*fill_ctx_, FillMethod::Median, FillFactor::DwHd, t);
  }
  Lapr target = build_lapr(*ctx_, t);
  std::vector<std::pair<double, std::size_t>> scored(pool_.size());
  for (std::size_t i = 0; i < pool_.size(); ++i) {
    double d = 0.0;
    const auto& prof = profiles_[i];
    for (int j = 0; j < kLaprLength; ++j) {
      double diff = target.values[static_cast<std::size_t>(j)] -
                    prof[static_cast<std::size_t>(j)];
      d += diff * diff;
    }
    scored[i] = {d, i};
  }
  std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.k), scored.size());
  auto cmp = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return pool_[a.second] < pool_[b.second];
  };
  std::nth_element(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   scored.end(), cmp);
  scored.resize(k);
  std::sort(scored.begin(), scored.end(), cmp);

  if (cfg.weighting == KnnWeighting::Uniform) {
    double sum = 0.0;
    for (const auto& s : scored) sum += pool_rates_[s.second];
    return sum / static_cast<double>(k);
  }
  // Softmax over negative distances, stabilized at the nearest neighbor.
  double dmin = scored.front().first;
  double wsum = 0.0;
  double acc = 0.0;
  for (const auto& s : scored) {
    double w = std::exp((dmin - s.first) / cfg.tau);
    wsum += w;
    acc += w * pool_rates_[s.second];
  }
  return acc / wsum;
}

double KnnIndex::predict_steps(std::int64_t t, const KnnConfig& cfg,
                               std::optional<int> wear_override) const {
  double rate = predict_rate(t, cfg);
  int wear = wear_override
                 ? *wear_override
                 : ctx_->series->blocks[static_cast<std::size_t>(t)].wear_minutes;
  if (wear == 0) wear = 60;
  return rate * static_cast<double>(wear);
}

// --- Window regression ----------------------------------------------------------

void regression_features(const ParticipantContext& ctx, std::int64_t t, Vec& out) {
  out.assign(kRegressionFeatures, 0.0);
  auto cells = context_window(t, ctx.series->size());
  for (const auto& cell : cells) {
    std::int64_t u = cell.hour_index;
    if (u < 0 || !ctx.usable[static_cast<std::size_t>(u)]) continue;
    int ri = relative_index(cell.row, cell.col);
    out[static_cast<std::size_t>(ri)] = ctx.norm_rate[static_cast<std::size_t>(u)];
    if (ctx.has_hr[static_cast<std::size_t>(u)]) {
      out[static_cast<std::size_t>(kWindowCells + ri)] =
          ctx.norm_hr[static_cast<std::size_t>(u)];
    }
  }
  const HourlyBlock& b = ctx.series->blocks[static_cast<std::size_t>(t)];
  out[static_cast<std::size_t>(2 * kWindowCells + b.day_of_week)] = 1.0;
  out[static_cast<std::size_t>(2 * kWindowCells + 7 + b.hour_of_day)] = 1.0;
}

RegressionModel fit_regression(const std::vector<ParticipantContext>& contexts,
                               const std::vector<TargetRef>& train_targets,
                               const RegressionConfig& cfg) {
  if (train_targets.empty()) {
    throw std::runtime_error("fit_regression: no training targets");
  }
  if (cfg.batch <= 0 || cfg.epochs < 0) {
    throw std::invalid_argument("fit_regression: bad batch/epochs");
  }
  Tensor w("w", {kRegressionFeatures});
  Tensor b("b", {1});
  Rng init_rng(derive_seed(cfg.seed, {0x526567ULL}));
  init_uniform_glorot(w, kRegressionFeatures, 1, init_rng);
  std::vector<Tensor*> params = {&w, &b};
  AdamConfig adam;
  adam.lr = cfg.lr;

  std::vector<std::size_t> order(train_targets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Vec feat;
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, {0x526567ULL, 1,
                                           static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);
    std::size_t n = order.size();
    if (cfg.max_instances_per_epoch > 0 && cfg.max_instances_per_epoch < n) {
      n = cfg.max_instances_per_epoch;
    }
    std::size_t pos = 0;
    while (pos < n) {
      std::size_t end = std::min(n, pos + static_cast<std::size_t>(cfg.batch));
      double inv = 1.0 / static_cast<double>(end - pos);
      for (std::size_t i = pos; i < end; ++i) {
        const TargetRef& ref = train_targets[order[i]];
        const ParticipantContext& ctx = contexts[static_cast<std::size_t>(ref.participant)];
        const HourlyBlock& blk = ctx.series->blocks[static_cast<std::size_t>(ref.t)];
        regression_features(ctx, ref.t, feat);
        double z = b.value[0];
        for (int j = 0; j < kRegressionFeatures; ++j) {
          z += w.value[static_cast<std::size_t>(j)] * feat[static_cast<std::size_t>(j)];
        }
        double rate = z_denormalize(z, ctx.stats.rate_mean, ctx.stats.rate_std);
        double pred = clip_to_step_count(rate, blk.wear_minutes, ctx.stats.max_rate);
        double g = mae_loss_grad(pred, static_cast<double>(blk.steps));
        // Gradient is zero where the clip saturates.
        if (rate > 0.0 && rate < 1.5 * ctx.stats.max_rate) {
          double gz = g * blk.wear_minutes * ctx.stats.rate_std * inv;
          for (int j = 0; j < kRegressionFeatures; ++j) {
            w.grad[static_cast<std::size_t>(j)] += gz * feat[static_cast<std::size_t>(j)];
          }
          b.grad[0] += gz;
        }
      }
      adam_step(params, adam, ++step);
      pos = end;
    }
  }
  RegressionModel model;
  model.w = w.value;
  model.b = b.value[0];
  return model;
}

double regression_predict_rate(const RegressionModel& model,
                               const ParticipantContext& ctx, std::int64_t t) {
  if (static_cast<int>(model.w.size()) != kRegressionFeatures) {
    throw std::invalid_argument("regression_predict_rate: bad model size");
  }
  Vec feat;
  regression_features(ctx, t, feat);
  double z = model.b;
  for (int j = 0; j < kRegressionFeatures; ++j) {
    z += model.w[static_cast<std::size_t>(j)] * feat[static_cast<std::size_t>(j)];
  }
  return z_denormalize(z, ctx.stats.rate_mean, ctx.stats.rate_std);
}

double regression_predict_steps(const RegressionModel& model,
                                const ParticipantContext& ctx, std::int64_t t,
                                std::optional<int> wear_override) {
  double rate = regression_predict_rate(model, ctx, t);
  int wear = wear_override
                 ? *wear_override
                 : ctx.series->blocks[static_cast<std::size_t>(t)].wear_minutes;
  if (wear == 0) wear = 60;
  return clip_to_step_count(rate, wear, ctx.stats.max_rate);
}

// --- Chained per-position regressions ---------------------------------------------

int iterative_flat_index(int row, int col) {
  if (row < 0 || row >= kWindowRows || col < 0 || col >= kWindowCols) {
    throw std::invalid_argument("iterative_flat_index: cell out of grid");
  }
  return col * kWindowRows + row;
}

std::vector<int> iterative_visit_order() {
  std::vector<int> order;
  order.reserve(kIterPositions);
  int lo = 0;
  int hi = kIterPositions - 1;
  while (lo <= hi) {
    order.push_back(lo);
    if (hi != lo) order.push_back(hi);
    ++lo;
    --hi;
  }
  return order;
}

namespace {

constexpr int kIterCenter = kIterPositions / 2;  // flat 103 = window center

// Window state for one target: 207 current values, observed flags, the
// centre's calendar one-hot info and the owning participant.
struct IterRow {
  std::array<double, kIterPositions> state{};
  std::array<std::uint8_t, kIterPositions> observed{};
  int participant = 0;
  int dow = 0;
  int hod = 0;
};

IterRow build_iter_row(const std::vector<ParticipantContext>& contexts,
                       const TargetRef& ref, bool center_observed) {
  const ParticipantContext& ctx = contexts[static_cast<std::size_t>(ref.participant)];
  IterRow row;
  row.participant = ref.participant;
  const HourlyBlock& blk = ctx.series->blocks[static_cast<std::size_t>(ref.t)];
  row.dow = blk.day_of_week;
  row.hod = blk.hour_of_day;
  auto cells = context_window(ref.t, ctx.series->size());
  for (const auto& cell : cells) {
    int flat = iterative_flat_index(cell.row, cell.col);
    std::int64_t u = cell.hour_index;
    if (u >= 0 && ctx.usable[static_cast<std::size_t>(u)]) {
      row.state[static_cast<std::size_t>(flat)] =
          ctx.norm_rate[static_cast<std::size_t>(u)];
      row.observed[static_cast<std::size_t>(flat)] = 1;
    }
  }
  if (center_observed && ctx.usable[static_cast<std::size_t>(ref.t)]) {
    row.state[kIterCenter] = ctx.norm_rate[static_cast<std::size_t>(ref.t)];
    row.observed[kIterCenter] = 1;
  }
  return row;
}

// Features for position p: the other 206 positions' current values followed
// by the center's day-of-week and hour-of-day one-hots.
void iter_features(const IterRow& row, int p, Vec& out) {
  out.assign(kIterFeatures, 0.0);
  int j = 0;
  for (int q = 0; q < kIterPositions; ++q) {
    if (q == p) continue;
    out[static_cast<std::size_t>(j++)] = row.state[static_cast<std::size_t>(q)];
  }
  out[static_cast<std::size_t>(kWindowCells + row.dow)] = 1.0;
  out[static_cast<std::size_t>(kWindowCells + 7 + row.hod)] = 1.0;
}

// Keep an imputed normalized rate inside the feasible range
// [0, 1.5 * max_rate] once denormalized.
double project_feasible(double z, const NormStats& stats) {
  double lo = -stats.rate_mean / stats.rate_std;
  double hi = (1.5 * stats.max_rate - stats.rate_mean) / stats.rate_std;
  return std::max(lo, std::min(z, hi));
}

double iter_predict(const IterativeModel& model, const Vec& feat, int p) {
  double z = model.b[static_cast<std::size_t>(p)];
  const Vec& w = model.w[static_cast<std::size_t>(p)];
  for (int j = 0; j < kIterFeatures; ++j) {
    z += w[static_cast<std::size_t>(j)] * feat[static_cast<std::size_t>(j)];
  }
  return z;
}

}  // namespace

IterativeModel fit_iterative(const std::vector<ParticipantContext>& contexts,
                             const std::vector<TargetRef>& train_targets,
                             const std::vector<TargetRef>& val_targets,
                             const IterativeConfig& cfg) {
  if (train_targets.empty()) {
    throw std::runtime_error("fit_iterative: no training targets");
  }
  if (cfg.batch <= 0 || cfg.epochs <= 0 || cfg.sweeps <= 0) {
    throw std::invalid_argument("fit_iterative: bad batch/epochs/sweeps");
  }

  std::vector<IterRow> rows;
  std::size_t n_rows = train_targets.size();
  if (cfg.max_rows > 0 && cfg.max_rows < n_rows) n_rows = cfg.max_rows;
  rows.reserve(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) {
    rows.push_back(build_iter_row(contexts, train_targets[i], true));
  }

  IterativeModel model;
  model.w.assign(kIterPositions, Vec(kIterFeatures, 0.0));
  model.b.assign(kIterPositions, 0.0);
  model.sigma2.assign(kIterPositions, 0.0);

  auto order = iterative_visit_order();
  Vec feat;
  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    for (int p : order) {
      std::vector<std::size_t> train_rows;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].observed[static_cast<std::size_t>(p)]) train_rows.push_back(i);
      }
      Vec& w = model.w[static_cast<std::size_t>(p)];
      double& b = model.b[static_cast<std::size_t>(p)];
      if (!train_rows.empty()) {
        int t_step = 0;
        Vec gw(kIterFeatures, 0.0);
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
          Rng rng(derive_seed(cfg.seed,
                              {0x49544552ULL, static_cast<std::uint64_t>(sweep),
                               static_cast<std::uint64_t>(p),
                               static_cast<std::uint64_t>(epoch)}));
          rng.shuffle(train_rows);
          std::size_t pos = 0;
          while (pos < train_rows.size()) {
            std::size_t end = std::min(train_rows.size(),
                                       pos + static_cast<std::size_t>(cfg.batch));
            std::fill(gw.begin(), gw.end(), 0.0);
            double gb = 0.0;
            double inv = 1.0 / static_cast<double>(end - pos);
            for (std::size_t k = pos; k < end; ++k) {
              const IterRow& row = rows[train_rows[k]];
              iter_features(row, p, feat);
              double pred = iter_predict(model, feat, p);
              double err = pred - row.state[static_cast<std::size_t>(p)];
              if (std::fabs(err) <= cfg.epsilon) continue;
              double g = (err > 0.0 ? 1.0 : -1.0) * inv;
              for (int j = 0; j < kIterFeatures; ++j) {
                gw[static_cast<std::size_t>(j)] += g * feat[static_cast<std::size_t>(j)];
              }
              gb += g;
            }
            double lr = cfg.lr0 / std::pow(static_cast<double>(++t_step), 0.25);
            for (int j = 0; j < kIterFeatures; ++j) {
              w[static_cast<std::size_t>(j)] -=
                  lr * (gw[static_cast<std::size_t>(j)] +
                        cfg.weight_decay * w[static_cast<std::size_t>(j)]);
            }
            b -= lr * gb;
            pos = end;
          }
        }
      }
      // Chain: replace this position's value wherever it was not observed.
      for (auto& row : rows) {
        if (row.observed[static_cast<std::size_t>(p)]) continue;
        iter_features(row, p, feat);
        double z = iter_predict(model, feat, p);
        const NormStats& stats =
            contexts[static_cast<std::size_t>(row.participant)].stats;
        row.state[static_cast<std::size_t>(p)] = project_feasible(z, stats);
      }
    }
  }

  // Residual variance per position from one deterministic pass over the
  // validation windows.
  std::vector<double> se_sum(kIterPositions, 0.0);
  std::vector<std::int64_t> se_count(kIterPositions, 0);
  for (const auto& ref : val_targets) {
    IterRow row = build_iter_row(contexts, ref, true);
    for (int p : order) {
      iter_features(row, p, feat);
      double z = iter_predict(model, feat, p);
      if (row.observed[static_cast<std::size_t>(p)]) {
        double err = z - row.state[static_cast<std::size_t>(p)];
        se_sum[static_cast<std::size_t>(p)] += err * err;
        se_count[static_cast<std::size_t>(p)] += 1;
      } else {
        const NormStats& stats =
            contexts[static_cast<std::size_t>(row.participant)].stats;
        row.state[static_cast<std::size_t>(p)] = project_feasible(z, stats);
      }
    }
  }
  for (int p = 0; p < kIterPositions; ++p) {
    if (se_count[static_cast<std::size_t>(p)] > 0) {
      model.sigma2[static_cast<std::size_t>(p)] =
          se_sum[static_cast<std::size_t>(p)] /
          static_cast<double>(se_count[static_cast<std::size_t>(p)]);
    }
  }
  return model;
}

IterativeSampleResult iterative_impute(const IterativeModel& model,
                                       const ParticipantContext& ctx,
                                       std::int64_t t, int n_samples,
                                       std::uint64_t seed,
                                       std::optional<int> wear_override) {
  if (n_samples <= 0) {
    throw std::invalid_argument("iterative_impute: n_samples must be positive");
  }
  if (static_cast<int>(model.w.size()) != kIterPositions) {
    throw std::invalid_argument("iterative_impute: bad model");
  }
  IterRow base;
  base.participant = 0;
  {
    const HourlyBlock& blk = ctx.series->blocks[static_cast<std::size_t>(t)];
    base.dow = blk.day_of_week;
    base.hod = blk.hour_of_day;
    auto cells = context_window(t, ctx.series->size());
    for (const auto& cell : cells) {
      int flat = iterative_flat_index(cell.row, cell.col);
      std::int64_t u = cell.hour_index;
      if (u >= 0 && ctx.usable[static_cast<std::size_t>(u)]) {
        base.state[static_cast<std::size_t>(flat)] =
            ctx.norm_rate[static_cast<std::size_t>(u)];
        base.observed[static_cast<std::size_t>(flat)] = 1;
      }
    }
    // The prediction target itself is never treated as observed: if t is a
    // held-out block, `usable` is already false for it.
  }

  int wear = wear_override
                 ? *wear_override
                 : ctx.series->blocks[static_cast<std::size_t>(t)].wear_minutes;
  if (wear == 0) wear = 60;

  Rng rng(derive_seed(seed, {0x4D494345ULL, fnv1a64(ctx.series->participant_id),
                             static_cast<std::uint64_t>(t)}));
  auto order = iterative_visit_order();
  IterativeSampleResult out;
  out.sample_steps.reserve(static_cast<std::size_t>(n_samples));
  Vec feat;
  double sum = 0.0;
  for (int s = 0; s < n_samples; ++s) {
    IterRow row = base;
    for (int p : order) {
      if (row.observed[static_cast<std::size_t>(p)]) continue;
      iter_features(row, p, feat);
      double mu = iter_predict(model, feat, p);
      double sigma = std::sqrt(model.sigma2[static_cast<std::size_t>(p)]);
      double z = mu + sigma * rng.normal();
      row.state[static_cast<std::size_t>(p)] = project_feasible(z, ctx.stats);
    }
    double rate = z_denormalize(row.state[kIterCenter], ctx.stats.rate_mean,
                                ctx.stats.rate_std);
    double steps = clip_to_step_count(rate, wear, ctx.stats.max_rate);
    out.sample_steps.push_back(steps);
    sum += steps;
  }
  out.mean_steps = sum / static_cast<double>(n_samples);
  return out;
}

}  // namespace stepfill
