#include "stepfill/cli.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <iostream>
#include <memory>
#include <optional>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "stepfill/eval.hpp"
#include "stepfill/ingest.hpp"
#include "stepfill/io_util.hpp"
#include "stepfill/model.hpp"
#include "stepfill/parallel.hpp"

namespace stepfill {

namespace {

using nlohmann::json;

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void log_line(const std::string& msg) { std::cerr << "[stepfill] " << msg << "\n"; }

void write_manifest(const std::string& primary_output, json manifest) {
  manifest["version"] = kVersion;
  atomic_write_file(primary_output + ".manifest.json", manifest.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      if (start < s.size()) out.push_back(s.substr(start));
      break;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace

MethodSpec parse_method_token(const std::string& token) {
  MethodSpec spec;
  spec.token = token;
  auto parts = split_list(token, ':');
  if (parts.empty()) throw std::runtime_error("empty method token");
  const std::string& head = parts[0];
  if (head == "attention") {
    if (parts.size() != 1) throw std::runtime_error("attention takes no parameters");
    spec.kind = MethodSpec::Kind::Attention;
    return spec;
  }
  if (head == "regression") {
    if (parts.size() != 1) throw std::runtime_error("regression takes no parameters");
    spec.kind = MethodSpec::Kind::Regression;
    return spec;
  }
  if (head == "iterative") {
    if (parts.size() > 2) throw std::runtime_error("iterative takes at most one parameter");
    spec.kind = MethodSpec::Kind::Iterative;
    if (parts.size() == 2) {
      spec.iterative_samples = static_cast<int>(parse_int(parts[1], "iterative samples"));
      if (spec.iterative_samples <= 0) {
        throw std::runtime_error("iterative sample count must be positive");
      }
    }
    return spec;
  }
  if (head == "knn") {
    spec.kind = MethodSpec::Kind::Knn;
    if (parts.size() < 3) {
      throw std::runtime_error("knn needs a weighting and k, e.g. knn:uniform:35");
    }
    if (parts[1] == "uniform") {
      spec.knn.weighting = KnnWeighting::Uniform;
      if (parts.size() != 3) throw std::runtime_error("knn:uniform takes only k");
    } else if (parts[1] == "softmax") {
      spec.knn.weighting = KnnWeighting::Softmax;
      if (parts.size() != 4) {
        throw std::runtime_error("knn:softmax needs k and tau, e.g. knn:softmax:35:1e-2");
      }
      spec.knn.tau = parse_double(parts[3], "knn tau");
      if (spec.knn.tau <= 0.0) throw std::runtime_error("knn tau must be positive");
    } else {
      throw std::runtime_error("unknown knn weighting '" + parts[1] + "'");
    }
    spec.knn.k = static_cast<int>(parse_int(parts[2], "knn k"));
    if (spec.knn.k <= 0) throw std::runtime_error("knn k must be positive");
    return spec;
  }
  // Fill family.
  spec.kind = MethodSpec::Kind::Fill;
  spec.fill_method = fill_method_from_name(head);
  bool needs_factor = spec.fill_method == FillMethod::Mean ||
                      spec.fill_method == FillMethod::MicroMean ||
                      spec.fill_method == FillMethod::Median;
  if (needs_factor) {
    if (parts.size() != 2) {
      throw std::runtime_error("method '" + head + "' needs a factor, e.g. " + head +
                               ":dw_hd");
    }
    spec.fill_factor = fill_factor_from_name(parts[1]);
  } else if (parts.size() != 1) {
    throw std::runtime_error("method '" + head + "' takes no factor");
  }
  return spec;
}

namespace {

// ----------------------------------------------------------------------------
// Shared evaluation plumbing
// ----------------------------------------------------------------------------

struct EvalTarget {
  std::int64_t t = 0;
  std::int64_t truth_steps = 0;  // negative when unknown (impute mode)
  int wear = 60;
};

struct RunnerData {
  Cohort cohort;
  std::vector<FillContext> fill_ctx;
  std::vector<ParticipantContext> pred_ctx;
  std::vector<char> pred_ok;
  std::vector<std::vector<EvalTarget>> targets;
  // Training material for regression/iterative, with every non-train
  // eligible block held out of the statistics.
  std::vector<ParticipantContext> train_ctx;
  std::vector<char> train_ok;
  std::vector<TargetRef> train_refs;
  std::vector<TargetRef> val_refs;
};

void build_training_material(RunnerData& data, const FoldView& view) {
  std::size_t n = data.cohort.participants.size();
  data.train_ctx.resize(n);
  data.train_ok.assign(n, 0);
  for (std::size_t pi = 0; pi < n; ++pi) {
    const ParticipantSeries& p = data.cohort.participants[pi];
    const std::vector<int>* roles = view.roles(p.participant_id);
    if (!roles) continue;
    std::vector<std::int64_t> holdout;
    for (std::int64_t t = 0; t < p.size(); ++t) {
      int role = (*roles)[static_cast<std::size_t>(t)];
      if (role == static_cast<int>(SplitRole::Val) ||
          role == static_cast<int>(SplitRole::Test)) {
        holdout.push_back(t);
      }
    }
    try {
      data.train_ctx[pi] = build_context(p, holdout);
      data.train_ok[pi] = 1;
    } catch (const std::exception& e) {
      log_line("skipping training data for participant '" + p.participant_id +
               "': " + e.what());
      continue;
    }
    for (std::int64_t t = 0; t < p.size(); ++t) {
      int role = (*roles)[static_cast<std::size_t>(t)];
      if (role == static_cast<int>(SplitRole::Train)) {
        data.train_refs.push_back({static_cast<int>(pi), t});
      } else if (role == static_cast<int>(SplitRole::Val)) {
        data.val_refs.push_back({static_cast<int>(pi), t});
      }
    }
  }
  if (data.train_refs.empty()) {
    throw std::runtime_error("no training blocks available for model fitting");
  }
}

// Route A: holdout evaluation on the test blocks of one split fold.
RunnerData build_route_splits(Cohort cohort, const std::vector<SplitRecord>& records,
                              int fold) {
  RunnerData data;
  data.cohort = std::move(cohort);
  FoldView view = fold_view(records, fold, data.cohort);
  std::size_t n = data.cohort.participants.size();
  data.fill_ctx.resize(n);
  data.pred_ctx.resize(n);
  data.pred_ok.assign(n, 0);
  data.targets.resize(n);
  for (std::size_t pi = 0; pi < n; ++pi) {
    const ParticipantSeries& p = data.cohort.participants[pi];
    const std::vector<int>* roles = view.roles(p.participant_id);
    if (!roles) {
      log_line("participant '" + p.participant_id + "' has no split records; skipped");
      continue;
    }
    std::vector<std::int64_t> holdout;
    for (std::int64_t t = 0; t < p.size(); ++t) {
      int role = (*roles)[static_cast<std::size_t>(t)];
      if (role == static_cast<int>(SplitRole::Val) ||
          role == static_cast<int>(SplitRole::Test)) {
        holdout.push_back(t);
      }
    }
    data.fill_ctx[pi] = build_fill_context(p, holdout);
    try {
      data.pred_ctx[pi] = build_context(p, holdout);
      data.pred_ok[pi] = 1;
    } catch (const std::exception& e) {
      log_line("skipping participant '" + p.participant_id + "': " + e.what());
      continue;
    }
    for (std::int64_t t = 0; t < p.size(); ++t) {
      if ((*roles)[static_cast<std::size_t>(t)] == static_cast<int>(SplitRole::Test)) {
        const HourlyBlock& b = p.blocks[static_cast<std::size_t>(t)];
        data.targets[pi].push_back({t, b.steps, b.wear_minutes});
      }
    }
  }
  build_training_material(data, view);
  return data;
}

// Route B: the cohort carries artificial gaps and a truth table defines the
// targets; every observed block stays visible to the imputers.
RunnerData build_route_truth(Cohort cohort, const TruthData& truth,
                             std::uint64_t seed) {
  RunnerData data;
  data.cohort = std::move(cohort);
  std::size_t n = data.cohort.participants.size();
  if (truth.truth.participants.size() != n) {
    throw std::runtime_error("truth file participant count differs from cohort");
  }
  data.fill_ctx.resize(n);
  data.pred_ctx.resize(n);
  data.pred_ok.assign(n, 0);
  data.targets.resize(n);
  for (std::size_t pi = 0; pi < n; ++pi) {
    const ParticipantSeries& p = data.cohort.participants[pi];
    const ParticipantSeries& tp = truth.truth.participants[pi];
    if (tp.participant_id != p.participant_id || tp.size() != p.size()) {
      throw std::runtime_error("truth file does not align with cohort at participant '" +
                               p.participant_id + "'");
    }
    const auto& masked = truth.was_masked[pi];
    data.fill_ctx[pi] = build_fill_context(p, {});
    try {
      data.pred_ctx[pi] = build_context(p, {});
      data.pred_ok[pi] = 1;
    } catch (const std::exception& e) {
      log_line("skipping participant '" + p.participant_id + "': " + e.what());
      continue;
    }
    for (std::int64_t t = 0; t < p.size(); ++t) {
      if (!masked[static_cast<std::size_t>(t)]) continue;
      if (response_indicator(p.blocks[static_cast<std::size_t>(t)])) {
        throw std::runtime_error("cohort has data at a masked block of participant '" +
                                 p.participant_id + "'");
      }
      const HourlyBlock& tb = tp.blocks[static_cast<std::size_t>(t)];
      if (!response_indicator(tb) || !eligible_hour(tb.hour_of_day)) continue;
      data.targets[pi].push_back({t, tb.steps, tb.wear_minutes});
    }
  }
  auto records = make_splits(data.cohort, 1, seed);
  FoldView view = fold_view(records, 0, data.cohort);
  build_training_material(data, view);
  return data;
}

// Impute mode: every originally-missing block is a target, truth unknown.
RunnerData build_route_missing(Cohort cohort, std::uint64_t seed) {
  RunnerData data;
  data.cohort = std::move(cohort);
  std::size_t n = data.cohort.participants.size();
  data.fill_ctx.resize(n);
  data.pred_ctx.resize(n);
  data.pred_ok.assign(n, 0);
  data.targets.resize(n);
  for (std::size_t pi = 0; pi < n; ++pi) {
    const ParticipantSeries& p = data.cohort.participants[pi];
    data.fill_ctx[pi] = build_fill_context(p, {});
    try {
      data.pred_ctx[pi] = build_context(p, {});
      data.pred_ok[pi] = 1;
    } catch (const std::exception& e) {
      log_line("skipping participant '" + p.participant_id + "': " + e.what());
      continue;
    }
    for (std::int64_t t = 0; t < p.size(); ++t) {
      if (!response_indicator(p.blocks[static_cast<std::size_t>(t)])) {
        data.targets[pi].push_back({t, -1, 60});
      }
    }
  }
  auto records = make_splits(data.cohort, 1, seed);
  FoldView view = fold_view(records, 0, data.cohort);
  build_training_material(data, view);
  return data;
}

struct RunnerOptions {
  std::uint64_t seed = 1;
  int jobs = 1;
  RegressionConfig regression;
  IterativeConfig iterative;
  std::vector<AttentionModel> models;  // for attention
};

using Predictions = std::vector<std::vector<double>>;

Predictions run_method(const MethodSpec& spec, const RunnerData& data,
                       const RunnerOptions& opts) {
  std::size_t n = data.cohort.participants.size();
  Predictions preds(n);
  for (std::size_t pi = 0; pi < n; ++pi) {
    preds[pi].assign(data.targets[pi].size(), 0.0);
  }
  // Flat list so heavy per-target work can be chunked deterministically:
  // every slot is written independently, so the thread count cannot change
  // the result.
  std::vector<std::pair<std::size_t, std::size_t>> flat;
  for (std::size_t pi = 0; pi < n; ++pi) {
    if (!data.pred_ok[pi] && spec.kind != MethodSpec::Kind::Fill) continue;
    for (std::size_t i = 0; i < data.targets[pi].size(); ++i) flat.emplace_back(pi, i);
  }

  switch (spec.kind) {
    case MethodSpec::Kind::Fill: {
      for (std::size_t pi = 0; pi < n; ++pi) {
        for (std::size_t i = 0; i < data.targets[pi].size(); ++i) {
          const EvalTarget& tg = data.targets[pi][i];
          preds[pi][i] = fill_predict_steps(data.fill_ctx[pi], spec.fill_method,
                                            spec.fill_factor, tg.t, tg.wear);
        }
      }
      return preds;
    }
    case MethodSpec::Kind::Knn: {
      std::vector<std::unique_ptr<KnnIndex>> indexes(n);
      for (std::size_t pi = 0; pi < n; ++pi) {
        if (!data.pred_ok[pi] || data.targets[pi].empty()) continue;
        indexes[pi] = std::make_unique<KnnIndex>(data.pred_ctx[pi], data.fill_ctx[pi]);
      }
      parallel_chunks(flat.size(), kDefaultChunkSize, opts.jobs,
                      [&](std::size_t, std::size_t b, std::size_t e) {
                        for (std::size_t f = b; f < e; ++f) {
                          auto [pi, i] = flat[f];
                          const EvalTarget& tg = data.targets[pi][i];
                          preds[pi][i] =
                              indexes[pi]->predict_steps(tg.t, spec.knn, tg.wear);
                        }
                      });
      return preds;
    }
    case MethodSpec::Kind::Regression: {
      RegressionConfig cfg = opts.regression;
      cfg.seed = derive_seed(opts.seed, {fnv1a64("regression")});
      RegressionModel model = fit_regression(data.train_ctx, data.train_refs, cfg);
      for (auto [pi, i] : flat) {
        const EvalTarget& tg = data.targets[pi][i];
        preds[pi][i] =
            regression_predict_steps(model, data.pred_ctx[pi], tg.t, tg.wear);
      }
      return preds;
    }
    case MethodSpec::Kind::Iterative: {
      IterativeConfig cfg = opts.iterative;
      cfg.seed = derive_seed(opts.seed, {fnv1a64("iterative")});
      IterativeModel model =
          fit_iterative(data.train_ctx, data.train_refs, data.val_refs, cfg);
      std::uint64_t impute_seed = derive_seed(opts.seed, {fnv1a64("iterative-impute")});
      parallel_chunks(flat.size(), kDefaultChunkSize, opts.jobs,
                      [&](std::size_t, std::size_t b, std::size_t e) {
                        for (std::size_t f = b; f < e; ++f) {
                          auto [pi, i] = flat[f];
                          const EvalTarget& tg = data.targets[pi][i];
                          preds[pi][i] = iterative_impute(model, data.pred_ctx[pi],
                                                          tg.t, spec.iterative_samples,
                                                          impute_seed, tg.wear)
                                             .mean_steps;
                        }
                      });
      return preds;
    }
    case MethodSpec::Kind::Attention: {
      if (opts.models.empty()) {
        throw std::runtime_error("method 'attention' needs --model");
      }
      parallel_chunks(flat.size(), kDefaultChunkSize, opts.jobs,
                      [&](std::size_t, std::size_t b, std::size_t e) {
                        for (std::size_t f = b; f < e; ++f) {
                          auto [pi, i] = flat[f];
                          const EvalTarget& tg = data.targets[pi][i];
                          preds[pi][i] = predict_step_count_ensemble(
                              opts.models, data.pred_ctx[pi], data.fill_ctx[pi], tg.t,
                              tg.wear);
                        }
                      });
      return preds;
    }
  }
  throw std::runtime_error("unhandled method kind");
}

// ----------------------------------------------------------------------------
// Subcommand state
// ----------------------------------------------------------------------------

struct SynthArgs {
  SynthConfig cfg;
  std::string out;
  std::string truth_out;
};

struct RollupArgs {
  std::string minutes;
  std::string out;
  int anchor_dow = 0;
  int anchor_hour = 0;
  std::string align_reference;
};

struct SplitArgs {
  std::string cohort;
  std::string out;
  int folds = 10;
  std::uint64_t seed = 1;
};

struct TrainArgs {
  std::string cohort;
  std::string splits;
  int fold = 0;
  std::string out;
  std::string log_path;
  TrainConfig cfg;
  bool grid = false;
};

struct EvaluateArgs {
  std::string cohort;
  std::string truth;
  std::string splits;
  int fold = 0;
  std::string methods = "zero,median:dw_hd";
  std::string reference;
  std::vector<std::string> model_paths;
  std::string out_prefix;
  std::uint64_t seed = 1;
  int jobs = 1;
  RegressionConfig regression;
  IterativeConfig iterative;
};

struct ImputeArgs {
  std::string cohort;
  std::string method = "attention";
  std::vector<std::string> model_paths;
  std::string out;
  std::uint64_t seed = 1;
  int jobs = 1;
  RegressionConfig regression;
  IterativeConfig iterative;
};

struct AcfArgs {
  std::string cohort;
  std::string out;
  int max_lag = 504;
  int min_pairs = 30;
};

struct AttnExportArgs {
  std::string cohort;
  std::string truth;
  std::string splits;
  int fold = 0;
  std::string model_path;
  std::string out_prefix;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& args) {
  std::int64_t t0 = now_ms();
  SynthResult res = generate_synthetic(args.cfg);
  atomic_write_file(args.out, cohort_to_csv(res.cohort));
  std::vector<std::string> outputs = {args.out};
  if (!args.truth_out.empty()) {
    atomic_write_file(args.truth_out, truth_to_csv(res.truth));
    outputs.push_back(args.truth_out);
  }
  std::int64_t blocks = 0;
  std::int64_t masked = 0;
  for (std::size_t pi = 0; pi < res.truth.was_masked.size(); ++pi) {
    blocks += static_cast<std::int64_t>(res.truth.was_masked[pi].size());
    for (auto m : res.truth.was_masked[pi]) masked += m;
  }
  json manifest;
  manifest["command"] = "synth";
  manifest["options"] = {{"participants", args.cfg.participants},
                         {"weeks", args.cfg.weeks},
                         {"seed", args.cfg.seed},
                         {"missing_rate", args.cfg.missing_rate},
                         {"overnight_nonwear_prob", args.cfg.overnight_nonwear_prob},
                         {"base_daily_steps", args.cfg.base_daily_steps},
                         {"participant_scale_sd", args.cfg.participant_scale_sd},
                         {"weekend_multiplier", args.cfg.weekend_multiplier},
                         {"ar_coeff", args.cfg.ar_coeff},
                         {"weekly_level_effect", args.cfg.weekly_level_effect},
                         {"daily_noise_sd", args.cfg.daily_noise_sd},
                         {"hourly_noise_sd", args.cfg.hourly_noise_sd},
                         {"zero_inflation_prob", args.cfg.zero_inflation_prob},
                         {"partial_wear_prob", args.cfg.partial_wear_prob},
                         {"hr_missing_prob", args.cfg.hr_missing_prob},
                         {"start_day_of_week", args.cfg.start_day_of_week}};
  manifest["outputs"] = outputs;
  manifest["counts"] = {{"blocks", blocks}, {"masked_blocks", masked}};
  manifest["timing_ms"] = {{"total", now_ms() - t0}};
  write_manifest(args.out, manifest);
  log_line("synth: wrote " + std::to_string(blocks) + " blocks (" +
           std::to_string(masked) + " masked) for " +
           std::to_string(args.cfg.participants) + " participants");
  return 0;
}

int cmd_rollup(const RollupArgs& args) {
  std::int64_t t0 = now_ms();
  auto records = read_minute_csv(args.minutes);
  Cohort cohort = rollup_minutes(records, args.anchor_dow, args.anchor_hour);
  json shifts = json::object();
  if (!args.align_reference.empty()) {
    auto reference = read_reference_profile(args.align_reference);
    for (auto& p : cohort.participants) {
      int s = align_day_shift(p, reference);
      apply_day_shift(p, s);
      shifts[p.participant_id] = s;
      log_line("rollup: participant '" + p.participant_id + "' day shift " +
               std::to_string(s));
    }
  }
  atomic_write_file(args.out, cohort_to_csv(cohort));
  json manifest;
  manifest["command"] = "rollup";
  manifest["options"] = {{"anchor_dow", args.anchor_dow},
                         {"anchor_hour", args.anchor_hour},
                         {"align_reference", args.align_reference}};
  manifest["inputs"] = {args.minutes};
  manifest["outputs"] = {args.out};
  manifest["counts"] = {{"minute_records", records.size()},
                        {"participants", cohort.participants.size()}};
  if (!shifts.empty()) manifest["day_shifts"] = shifts;
  manifest["timing_ms"] = {{"total", now_ms() - t0}};
  write_manifest(args.out, manifest);
  return 0;
}

int cmd_split(const SplitArgs& args) {
  std::int64_t t0 = now_ms();
  Cohort cohort = read_cohort_csv(args.cohort);
  auto records = make_splits(cohort, args.folds, args.seed);
  atomic_write_file(args.out, splits_to_csv(records));
  json manifest;
  manifest["command"] = "split";
  manifest["options"] = {{"folds", args.folds}, {"seed", args.seed}};
  manifest["inputs"] = {args.cohort};
  manifest["outputs"] = {args.out};
  manifest["counts"] = {{"records", records.size()}};
  manifest["timing_ms"] = {{"total", now_ms() - t0}};
  write_manifest(args.out, manifest);
  log_line("split: wrote " + std::to_string(records.size()) + " assignments");
  return 0;
}

struct TrainingData {
  std::vector<ParticipantContext> contexts;
  std::vector<TargetRef> train_refs;
  std::vector<TargetRef> val_refs;
};

TrainingData assemble_training_data(const Cohort& cohort,
                                    const std::vector<SplitRecord>& records,
                                    int fold) {
  TrainingData td;
  FoldView view = fold_view(records, fold, cohort);
  td.contexts.resize(cohort.participants.size());
  for (std::size_t pi = 0; pi < cohort.participants.size(); ++pi) {
    const ParticipantSeries& p = cohort.participants[pi];
    const std::vector<int>* roles = view.roles(p.participant_id);
    if (!roles) continue;
    std::vector<std::int64_t> holdout;
    for (std::int64_t t = 0; t < p.size(); ++t) {
      int role = (*roles)[static_cast<std::size_t>(t)];
      if (role == static_cast<int>(SplitRole::Val) ||
          role == static_cast<int>(SplitRole::Test)) {
        holdout.push_back(t);
      }
    }
    try {
      td.contexts[pi] = build_context(p, holdout);
    } catch (const std::exception& e) {
      log_line("skipping participant '" + p.participant_id + "': " + e.what());
      continue;
    }
    for (std::int64_t t = 0; t < p.size(); ++t) {
      int role = (*roles)[static_cast<std::size_t>(t)];
      if (role == static_cast<int>(SplitRole::Train)) {
        td.train_refs.push_back({static_cast<int>(pi), t});
      } else if (role == static_cast<int>(SplitRole::Val)) {
        td.val_refs.push_back({static_cast<int>(pi), t});
      }
    }
  }
  if (td.train_refs.empty()) {
    throw std::runtime_error("no training blocks for fold " + std::to_string(fold));
  }
  return td;
}

int cmd_train(const TrainArgs& args) {
  std::int64_t t0 = now_ms();
  Cohort cohort = read_cohort_csv(args.cohort);
  std::vector<SplitRecord> records;
  if (!args.splits.empty()) {
    records = read_splits_csv(args.splits);
  } else {
    log_line("train: no --splits given; deriving a single fold from --seed");
    records = make_splits(cohort, 1, args.cfg.seed);
  }
  TrainingData td = assemble_training_data(cohort, records, args.fold);
  log_line("train: " + std::to_string(td.train_refs.size()) + " train / " +
           std::to_string(td.val_refs.size()) + " val instances");

  FitResult fit;
  json grid_results = json::array();
  if (args.grid) {
    const double lrs[] = {0.1, 0.01, 0.001};
    const int dks[] = {4, 8, 16};
    bool have_best = false;
    double best_val = 0.0;
    for (double lr : lrs) {
      for (int dk : dks) {
        TrainConfig cfg = args.cfg;
        cfg.lr = lr;
        cfg.d_k = dk;
        FitResult r = fit_attention(td.contexts, td.train_refs, td.val_refs, cfg);
        double val = r.log[static_cast<std::size_t>(r.best_epoch)].val_micro_mae;
        log_line("train: grid lr=" + format_double(lr) + " d_k=" + std::to_string(dk) +
                 " best val MAE " + format_double(val));
        grid_results.push_back({{"lr", lr}, {"d_k", dk}, {"val_micro_mae", val}});
        if (!have_best || val < best_val) {
          have_best = true;
          best_val = val;
          fit = std::move(r);
        }
      }
    }
  } else {
    fit = fit_attention(td.contexts, td.train_refs, td.val_refs, args.cfg);
  }
  save_checkpoint(fit.model, args.out);
  std::string log_path = args.log_path.empty() ? args.out + ".log.csv" : args.log_path;
  atomic_write_file(log_path, training_log_to_csv(fit.log));
  double best_val =
      fit.log[static_cast<std::size_t>(fit.best_epoch)].val_micro_mae;
  log_line("train: best epoch " + std::to_string(fit.best_epoch) +
           ", val micro MAE " + format_double(best_val));

  json manifest;
  manifest["command"] = "train";
  manifest["options"] = {{"fold", args.fold},
                         {"d_k", fit.model.d_k},
                         {"lr", args.cfg.lr},
                         {"epochs", args.cfg.epochs},
                         {"batch", args.cfg.batch},
                         {"seed", args.cfg.seed},
                         {"jobs", args.cfg.jobs},
                         {"max_instances_per_epoch", args.cfg.max_instances_per_epoch},
                         {"patience", args.cfg.patience},
                         {"grid", args.grid}};
  manifest["inputs"] = json::array({args.cohort});
  if (!args.splits.empty()) manifest["inputs"].push_back(args.splits);
  manifest["outputs"] = {args.out, log_path};
  manifest["counts"] = {{"train_instances", td.train_refs.size()},
                        {"val_instances", td.val_refs.size()}};
  manifest["best_epoch"] = fit.best_epoch;
  manifest["best_val_micro_mae"] = best_val;
  if (args.grid) manifest["grid"] = grid_results;
  manifest["timing_ms"] = {{"total", now_ms() - t0}};
  write_manifest(args.out, manifest);
  return 0;
}

json metrics_to_json(const MetricsResult& m) {
  return {{"micro_mae", m.micro_mae},       {"macro_mae", m.macro_mae},
          {"micro_rmse", m.micro_rmse},     {"macro_rmse", m.macro_rmse},
          {"macro_mae_ci", m.macro_mae_ci}, {"n_blocks", m.n_blocks},
          {"n_participants", m.n_participants}};
}

int cmd_evaluate(const EvaluateArgs& args) {
  std::int64_t t0 = now_ms();
  if (args.truth.empty() == args.splits.empty()) {
    throw std::runtime_error("evaluate needs exactly one of --truth or --splits");
  }
  auto method_tokens = split_list(args.methods, ',');
  if (method_tokens.empty()) throw std::runtime_error("no methods given");
  std::vector<MethodSpec> specs;
  for (const auto& tok : method_tokens) specs.push_back(parse_method_token(tok));
  std::string reference = args.reference.empty() ? specs[0].token : args.reference;
  bool ref_found = false;
  for (const auto& s : specs) ref_found |= s.token == reference;
  if (!ref_found) {
    throw std::runtime_error("reference method '" + reference +
                             "' not in the method list");
  }

  Cohort cohort = read_cohort_csv(args.cohort);
  RunnerData data;
  if (!args.truth.empty()) {
    TruthData truth = read_truth_csv(args.truth);
    data = build_route_truth(std::move(cohort), truth, args.seed);
  } else {
    auto records = read_splits_csv(args.splits);
    data = build_route_splits(std::move(cohort), records, args.fold);
  }
  std::size_t n_participants = data.cohort.participants.size();
  std::size_t n_targets = 0;
  for (const auto& ts : data.targets) n_targets += ts.size();
  log_line("evaluate: " + std::to_string(n_targets) + " target blocks across " +
           std::to_string(n_participants) + " participants");
  if (n_targets == 0) throw std::runtime_error("no evaluation targets");

  RunnerOptions opts;
  opts.seed = args.seed;
  opts.jobs = args.jobs;
  opts.regression = args.regression;
  opts.iterative = args.iterative;
  for (const auto& path : args.model_paths) {
    opts.models.push_back(load_checkpoint(path));
  }

  struct MethodResult {
    MethodSpec spec;
    Predictions preds;
    std::vector<std::vector<double>> abs_errors;   // per participant
    std::vector<double> participant_mae;           // aligned with scored list
    std::vector<int> scored_participants;          // indices with >= 1 target
    MetricsResult metrics;
    std::vector<StepBinStat> step_bins;
  };
  std::vector<MethodResult> results;

  for (const auto& spec : specs) {
    log_line("evaluate: running method '" + spec.token + "'");
    MethodResult r;
    r.spec = spec;
    r.preds = run_method(spec, data, opts);
    r.abs_errors.resize(n_participants);
    std::vector<std::int64_t> truths_flat;
    std::vector<double> preds_flat;
    for (std::size_t pi = 0; pi < n_participants; ++pi) {
      for (std::size_t i = 0; i < data.targets[pi].size(); ++i) {
        double truth = static_cast<double>(data.targets[pi][i].truth_steps);
        r.abs_errors[pi].push_back(std::fabs(r.preds[pi][i] - truth));
        truths_flat.push_back(data.targets[pi][i].truth_steps);
        preds_flat.push_back(r.preds[pi][i]);
      }
      if (!data.targets[pi].empty()) {
        r.scored_participants.push_back(static_cast<int>(pi));
        double s = 0.0;
        for (double e : r.abs_errors[pi]) s += e;
        r.participant_mae.push_back(s / static_cast<double>(r.abs_errors[pi].size()));
      }
    }
    r.metrics = compute_metrics(r.abs_errors);
    r.step_bins = step_bin_breakdown(truths_flat, preds_flat);
    results.push_back(std::move(r));
  }

  const MethodResult* ref_result = nullptr;
  for (const auto& r : results) {
    if (r.spec.token == reference) ref_result = &r;
  }

  // ---- summary CSV ----
  std::string summary =
      "method,n_targets,micro_mae,macro_mae,micro_rmse,macro_rmse,macro_mae_ci\n";
  for (const auto& r : results) {
    summary += r.spec.token;
    summary += ',';
    summary += format_int(r.metrics.n_blocks);
    summary += ',';
    summary += format_double(r.metrics.micro_mae);
    summary += ',';
    summary += format_double(r.metrics.macro_mae);
    summary += ',';
    summary += format_double(r.metrics.micro_rmse);
    summary += ',';
    summary += format_double(r.metrics.macro_rmse);
    summary += ',';
    summary += format_double(r.metrics.macro_mae_ci);
    summary += '\n';
  }

  // ---- missing-rate bin CSV (macro MAE per participant bin) ----
  std::string missing_csv = "method,bin,rate_lo,rate_hi,n_participants,macro_mae\n";
  json missing_json_per_method = json::object();
  for (const auto& r : results) {
    std::array<std::vector<double>, kMissingRateBins> bin_maes;
    for (std::size_t k = 0; k < r.scored_participants.size(); ++k) {
      int pi = r.scored_participants[k];
      double rate = participant_missing_rate(
          data.cohort.participants[static_cast<std::size_t>(pi)]);
      bin_maes[static_cast<std::size_t>(missing_rate_bin(rate))].push_back(
          r.participant_mae[k]);
    }
    json bins = json::array();
    for (int b = 0; b < kMissingRateBins; ++b) {
      const auto& maes = bin_maes[static_cast<std::size_t>(b)];
      double lo = static_cast<double>(b) / kMissingRateBins;
      double hi = static_cast<double>(b + 1) / kMissingRateBins;
      double mae = 0.0;
      for (double m : maes) mae += m;
      if (!maes.empty()) mae /= static_cast<double>(maes.size());
      missing_csv += r.spec.token;
      missing_csv += ',';
      missing_csv += format_int(b);
      missing_csv += ',';
      missing_csv += format_double(lo);
      missing_csv += ',';
      missing_csv += format_double(hi);
      missing_csv += ',';
      missing_csv += format_int(static_cast<std::int64_t>(maes.size()));
      missing_csv += ',';
      missing_csv += maes.empty() ? "" : format_double(mae);
      missing_csv += '\n';
      bins.push_back({{"bin", b},
                      {"rate_lo", lo},
                      {"rate_hi", hi},
                      {"n_participants", maes.size()},
                      {"macro_mae", maes.empty() ? json() : json(mae)}});
    }
    missing_json_per_method[r.spec.token] = bins;
  }

  // ---- step-count bin CSV with ratio against the reference ----
  std::string step_csv = "method,bin,steps_lo,steps_hi,n_blocks,micro_mae,ratio_vs_ref\n";
  json step_json_per_method = json::object();
  for (const auto& r : results) {
    json bins = json::array();
    for (const auto& s : r.step_bins) {
      auto [lo, hi] = step_count_bin_range(s.bin);
      std::optional<double> ratio;
      if (ref_result) {
        for (const auto& rs : ref_result->step_bins) {
          if (rs.bin == s.bin && rs.micro_mae > 0.0) {
            ratio = s.micro_mae / rs.micro_mae;
          }
        }
      }
      step_csv += r.spec.token;
      step_csv += ',';
      step_csv += format_int(s.bin);
      step_csv += ',';
      step_csv += format_int(lo);
      step_csv += ',';
      step_csv += format_int(hi);
      step_csv += ',';
      step_csv += format_int(s.n_blocks);
      step_csv += ',';
      step_csv += format_double(s.micro_mae);
      step_csv += ',';
      step_csv += ratio ? format_double(*ratio) : "";
      step_csv += '\n';
      bins.push_back({{"bin", s.bin},
                      {"steps_lo", lo},
                      {"steps_hi", hi},
                      {"n_blocks", s.n_blocks},
                      {"micro_mae", s.micro_mae},
                      {"ratio_vs_ref", ratio ? json(*ratio) : json()}});
    }
    step_json_per_method[r.spec.token] = bins;
  }

  // ---- predictions CSV ----
  std::string preds_csv = "participant_id,hour_index,method,predicted_steps,true_steps\n";
  for (std::size_t pi = 0; pi < n_participants; ++pi) {
    const auto& p = data.cohort.participants[pi];
    for (std::size_t i = 0; i < data.targets[pi].size(); ++i) {
      for (const auto& r : results) {
        preds_csv += p.participant_id;
        preds_csv += ',';
        preds_csv += format_int(data.targets[pi][i].t);
        preds_csv += ',';
        preds_csv += r.spec.token;
        preds_csv += ',';
        preds_csv += format_double(r.preds[pi][i]);
        preds_csv += ',';
        preds_csv += format_int(data.targets[pi][i].truth_steps);
        preds_csv += '\n';
      }
    }
  }

  // ---- JSONL ----
  std::string jsonl;
  for (const auto& r : results) {
    json line;
    line["method"] = r.spec.token;
    line["metrics"] = metrics_to_json(r.metrics);
    line["missing_rate_bins"] = missing_json_per_method[r.spec.token];
    line["step_count_bins"] = step_json_per_method[r.spec.token];
    if (ref_result && ref_result != &r &&
        r.participant_mae.size() == ref_result->participant_mae.size() &&
        r.participant_mae.size() >= 2) {
      TTestResult tt = paired_t_test(r.participant_mae, ref_result->participant_mae);
      line["ttest_vs_reference"] = {{"reference", reference},
                                    {"t", tt.t},
                                    {"df", tt.df},
                                    {"p", tt.p}};
    }
    jsonl += line.dump();
    jsonl += '\n';
  }

  std::string f_summary = args.out_prefix + "_summary.csv";
  std::string f_missing = args.out_prefix + "_missing_bins.csv";
  std::string f_steps = args.out_prefix + "_step_bins.csv";
  std::string f_preds = args.out_prefix + "_predictions.csv";
  std::string f_jsonl = args.out_prefix + ".jsonl";
  atomic_write_file(f_summary, summary);
  atomic_write_file(f_missing, missing_csv);
  atomic_write_file(f_steps, step_csv);
  atomic_write_file(f_preds, preds_csv);
  atomic_write_file(f_jsonl, jsonl);

  for (const auto& r : results) {
    log_line("evaluate: " + r.spec.token +
             " macro MAE " + format_double(r.metrics.macro_mae) +
             ", micro MAE " + format_double(r.metrics.micro_mae));
  }

  json manifest;
  manifest["command"] = "evaluate";
  manifest["options"] = {{"methods", args.methods},
                         {"reference", reference},
                         {"fold", args.fold},
                         {"seed", args.seed},
                         {"jobs", args.jobs},
                         {"models", args.model_paths}};
  manifest["inputs"] = json::array({args.cohort});
  if (!args.truth.empty()) manifest["inputs"].push_back(args.truth);
  if (!args.splits.empty()) manifest["inputs"].push_back(args.splits);
  manifest["outputs"] = {f_summary, f_missing, f_steps, f_preds, f_jsonl};
  manifest["counts"] = {{"targets", n_targets},
                        {"participants", n_participants}};
  manifest["timing_ms"] = {{"total", now_ms() - t0}};
  write_manifest(args.out_prefix, manifest);
  return 0;
}

int cmd_impute(const ImputeArgs& args) {
  std::int64_t t0 = now_ms();
  MethodSpec spec = parse_method_token(args.method);
  Cohort cohort = read_cohort_csv(args.cohort);
  RunnerData data = build_route_missing(std::move(cohort), args.seed);

  RunnerOptions opts;
  opts.seed = args.seed;
  opts.jobs = args.jobs;
  opts.regression = args.regression;
  opts.iterative = args.iterative;
  for (const auto& path : args.model_paths) {
    opts.models.push_back(load_checkpoint(path));
  }
  Predictions preds = run_method(spec, data, opts);

  std::string csv = "participant_id,hour_index,method,predicted_steps,true_steps\n";
  std::size_t n_targets = 0;
  for (std::size_t pi = 0; pi < data.cohort.participants.size(); ++pi) {
    const auto& p = data.cohort.participants[pi];
    for (std::size_t i = 0; i < data.targets[pi].size(); ++i) {
      csv += p.participant_id;
      csv += ',';
      csv += format_int(data.targets[pi][i].t);
      csv += ',';
      csv += spec.token;
      csv += ',';
      csv += format_double(preds[pi][i]);
      csv += ",\n";
      ++n_targets;
    }
  }
  atomic_write_file(args.out, csv);
  log_line("impute: wrote " + std::to_string(n_targets) + " imputed blocks");

  json manifest;
  manifest["command"] = "impute";
  manifest["options"] = {{"method", args.method},
                         {"seed", args.seed},
                         {"jobs", args.jobs},
                         {"models", args.model_paths}};
  manifest["inputs"] = {args.cohort};
  manifest["outputs"] = {args.out};
  manifest["counts"] = {{"imputed_blocks", n_targets}};
  manifest["timing_ms"] = {{"total", now_ms() - t0}};
  write_manifest(args.out, manifest);
  return 0;
}

int cmd_acf(const AcfArgs& args) {
  std::int64_t t0 = now_ms();
  Cohort cohort = read_cohort_csv(args.cohort);
  auto acf = acf_median(cohort, args.max_lag, args.min_pairs);
  atomic_write_file(args.out, acf_to_csv(acf));
  json manifest;
  manifest["command"] = "acf";
  manifest["options"] = {{"max_lag", args.max_lag}, {"min_pairs", args.min_pairs}};
  manifest["inputs"] = {args.cohort};
  manifest["outputs"] = {args.out};
  manifest["timing_ms"] = {{"total", now_ms() - t0}};
  write_manifest(args.out, manifest);
  log_line("acf: wrote lags 1.." + std::to_string(args.max_lag));
  return 0;
}

int cmd_attn_export(const AttnExportArgs& args) {
  std::int64_t t0 = now_ms();
  if (!args.truth.empty() && !args.splits.empty()) {
    throw std::runtime_error("attn-export takes at most one of --truth/--splits");
  }
  Cohort cohort = read_cohort_csv(args.cohort);
  RunnerData data;
  if (!args.truth.empty()) {
    TruthData truth = read_truth_csv(args.truth);
    data = build_route_truth(std::move(cohort), truth, args.seed);
  } else if (!args.splits.empty()) {
    auto records = read_splits_csv(args.splits);
    data = build_route_splits(std::move(cohort), records, args.fold);
  } else {
    data = build_route_missing(std::move(cohort), args.seed);
  }
  AttentionModel model = load_checkpoint(args.model_path);

  std::vector<TargetRef> refs;
  for (std::size_t pi = 0; pi < data.cohort.participants.size(); ++pi) {
    if (!data.pred_ok[pi]) continue;
    for (const auto& tg : data.targets[pi]) {
      refs.push_back({static_cast<int>(pi), tg.t});
    }
  }
  if (refs.empty()) throw std::runtime_error("attn-export: no targets");
  AttentionMaps maps = accumulate_attention_maps(model, data.pred_ctx, refs);

  std::vector<std::string> outputs;
  std::string overall_path = args.out_prefix + "_overall.csv";
  atomic_write_file(overall_path, attention_grid_to_csv(maps.overall));
  outputs.push_back(overall_path);
  for (int d = 0; d < 7; ++d) {
    std::string path = args.out_prefix + "_dow" + std::to_string(d) + ".csv";
    atomic_write_file(path, attention_grid_to_csv(maps.by_dow[static_cast<std::size_t>(d)]));
    outputs.push_back(path);
  }
  json manifest;
  manifest["command"] = "attn-export";
  manifest["options"] = {{"model", args.model_path},
                         {"fold", args.fold},
                         {"seed", args.seed}};
  manifest["inputs"] = json::array({args.cohort});
  if (!args.truth.empty()) manifest["inputs"].push_back(args.truth);
  if (!args.splits.empty()) manifest["inputs"].push_back(args.splits);
  manifest["outputs"] = outputs;
  manifest["counts"] = {{"targets", maps.overall_count}};
  manifest["timing_ms"] = {{"total", now_ms() - t0}};
  write_manifest(args.out_prefix, manifest);
  log_line("attn-export: averaged " + std::to_string(maps.overall_count) + " maps");
  return 0;
}

void add_regression_iterative_options(CLI::App* cmd, RegressionConfig& reg,
                                      IterativeConfig& iter) {
  cmd->add_option("--reg-lr", reg.lr, "Regression learning rate");
  cmd->add_option("--reg-epochs", reg.epochs, "Regression epochs");
  cmd->add_option("--reg-batch", reg.batch, "Regression batch size");
  cmd->add_option("--reg-max-instances", reg.max_instances_per_epoch,
                  "Cap on regression instances per epoch (0 = all)");
  cmd->add_option("--iter-lr0", iter.lr0, "Iterative base learning rate");
  cmd->add_option("--iter-epochs", iter.epochs, "Iterative SGD epochs per position");
  cmd->add_option("--iter-batch", iter.batch, "Iterative SGD batch size");
  cmd->add_option("--iter-sweeps", iter.sweeps, "Iterative chained sweeps");
  cmd->add_option("--iter-max-rows", iter.max_rows,
                  "Cap on iterative training windows (0 = all)");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"stepfill: impute missing hourly step counts in wearable data"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI/TOML file");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a seeded synthetic cohort");
  c_synth->add_option("--out", synth.out, "Cohort CSV path")->required();
  c_synth->add_option("--truth-out", synth.truth_out, "Truth CSV path (with was_masked)");
  c_synth->add_option("--participants", synth.cfg.participants, "Number of participants");
  c_synth->add_option("--weeks", synth.cfg.weeks, "Weeks of data per participant");
  c_synth->add_option("--seed", synth.cfg.seed, "Generator seed")
      ->envname("STEPFILL_SEED");
  c_synth->add_option("--missing-rate", synth.cfg.missing_rate,
                      "Target masked fraction of daytime blocks");
  c_synth->add_option("--overnight-nonwear-prob", synth.cfg.overnight_nonwear_prob,
                      "Probability a night is off-wrist");
  c_synth->add_option("--base-daily-steps", synth.cfg.base_daily_steps,
                      "Typical daily step total");
  c_synth->add_option("--participant-scale-sd", synth.cfg.participant_scale_sd,
                      "Log-scale SD of per-participant activity");
  c_synth->add_option("--weekend-multiplier", synth.cfg.weekend_multiplier,
                      "Weekend activity multiplier");
  c_synth->add_option("--ar-coeff", synth.cfg.ar_coeff, "Weekly level AR(1) coefficient");
  c_synth->add_option("--weekly-level-effect", synth.cfg.weekly_level_effect,
                      "Weekly level multiplier strength");
  c_synth->add_option("--daily-noise-sd", synth.cfg.daily_noise_sd, "Daily log-noise SD");
  c_synth->add_option("--hourly-noise-sd", synth.cfg.hourly_noise_sd,
                      "Hourly log-noise SD");
  c_synth->add_option("--zero-inflation-prob", synth.cfg.zero_inflation_prob,
                      "Chance a daytime hour is fully idle");
  c_synth->add_option("--partial-wear-prob", synth.cfg.partial_wear_prob,
                      "Chance of partial wear in an hour");
  c_synth->add_option("--hr-missing-prob", synth.cfg.hr_missing_prob,
                      "Chance a worn hour lacks heart rate");
  c_synth->add_option("--start-dow", synth.cfg.start_day_of_week,
                      "Day of week of day 0 (0 = Monday)");

  RollupArgs rollup;
  auto* c_rollup = app.add_subcommand("rollup", "Aggregate minute records to hours");
  c_rollup->add_option("--minutes", rollup.minutes, "Minute CSV path")->required();
  c_rollup->add_option("--out", rollup.out, "Hourly cohort CSV path")->required();
  c_rollup->add_option("--anchor-dow", rollup.anchor_dow,
                       "Day of week at minute 0 (0 = Monday)");
  c_rollup->add_option("--anchor-hour", rollup.anchor_hour, "Hour of day at minute 0");
  c_rollup->add_option("--align-reference", rollup.align_reference,
                       "Weekday profile CSV to align day labels against");

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "Write stratified train/val/test splits");
  c_split->add_option("--cohort", split.cohort, "Cohort CSV path")->required();
  c_split->add_option("--out", split.out, "Splits CSV path")->required();
  c_split->add_option("--folds", split.folds, "Number of folds");
  c_split->add_option("--seed", split.seed, "Split seed")->envname("STEPFILL_SEED");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train the attention imputer");
  c_train->add_option("--cohort", train.cohort, "Cohort CSV path")->required();
  c_train->add_option("--splits", train.splits, "Splits CSV path");
  c_train->add_option("--fold", train.fold, "Fold to train on");
  c_train->add_option("--out", train.out, "Checkpoint output path")->required();
  c_train->add_option("--log", train.log_path, "Training log CSV path");
  c_train->add_option("--dk", train.cfg.d_k, "Key/query projection width");
  c_train->add_option("--lr", train.cfg.lr, "Adam learning rate");
  c_train->add_option("--epochs", train.cfg.epochs, "Training epochs");
  c_train->add_option("--batch", train.cfg.batch, "Batch size");
  c_train->add_option("--max-instances", train.cfg.max_instances_per_epoch,
                      "Cap on instances per epoch (0 = all)");
  c_train->add_option("--patience", train.cfg.patience,
                      "Early-stop patience in epochs (0 = off)");
  c_train->add_option("--seed", train.cfg.seed, "Training seed")
      ->envname("STEPFILL_SEED");
  c_train->add_option("--jobs", train.cfg.jobs, "Worker threads");
  c_train->add_flag("--grid", train.grid, "Grid-search lr x d_k, keep the best");

  EvaluateArgs eval_args;
  auto* c_eval = app.add_subcommand("evaluate", "Score imputation methods");
  c_eval->add_option("--cohort", eval_args.cohort, "Cohort CSV path")->required();
  c_eval->add_option("--truth", eval_args.truth, "Truth CSV (synthetic route)");
  c_eval->add_option("--splits", eval_args.splits, "Splits CSV (holdout route)");
  c_eval->add_option("--fold", eval_args.fold, "Fold to evaluate");
  c_eval->add_option("--methods", eval_args.methods, "Comma-separated method tokens");
  c_eval->add_option("--reference", eval_args.reference,
                     "Reference method for ratios/t-tests (default: first)");
  c_eval->add_option("--model", eval_args.model_paths,
                     "Attention checkpoint(s); repeat for an ensemble");
  c_eval->add_option("--out", eval_args.out_prefix, "Output path prefix")->required();
  c_eval->add_option("--seed", eval_args.seed, "Seed for model-based baselines")
      ->envname("STEPFILL_SEED");
  c_eval->add_option("--jobs", eval_args.jobs, "Worker threads");
  add_regression_iterative_options(c_eval, eval_args.regression, eval_args.iterative);

  ImputeArgs impute;
  auto* c_impute = app.add_subcommand("impute", "Fill originally-missing blocks");
  c_impute->add_option("--cohort", impute.cohort, "Cohort CSV path")->required();
  c_impute->add_option("--method", impute.method, "Method token");
  c_impute->add_option("--model", impute.model_paths,
                       "Attention checkpoint(s); repeat for an ensemble");
  c_impute->add_option("--out", impute.out, "Predictions CSV path")->required();
  c_impute->add_option("--seed", impute.seed, "Seed for model-based baselines")
      ->envname("STEPFILL_SEED");
  c_impute->add_option("--jobs", impute.jobs, "Worker threads");
  add_regression_iterative_options(c_impute, impute.regression, impute.iterative);

  AcfArgs acf;
  auto* c_acf = app.add_subcommand("acf", "Median autocorrelation of step rates");
  c_acf->add_option("--cohort", acf.cohort, "Cohort CSV path")->required();
  c_acf->add_option("--out", acf.out, "ACF CSV path")->required();
  c_acf->add_option("--max-lag", acf.max_lag, "Maximum lag in hours");
  c_acf->add_option("--min-pairs", acf.min_pairs,
                    "Minimum complete pairs per participant and lag");

  AttnExportArgs attn;
  auto* c_attn = app.add_subcommand("attn-export", "Export mean attention maps");
  c_attn->add_option("--cohort", attn.cohort, "Cohort CSV path")->required();
  c_attn->add_option("--truth", attn.truth, "Truth CSV (synthetic route)");
  c_attn->add_option("--splits", attn.splits, "Splits CSV (holdout route)");
  c_attn->add_option("--fold", attn.fold, "Fold when using --splits");
  c_attn->add_option("--model", attn.model_path, "Attention checkpoint")->required();
  c_attn->add_option("--out", attn.out_prefix, "Output path prefix")->required();
  c_attn->add_option("--seed", attn.seed, "Seed")->envname("STEPFILL_SEED");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth);
    if (c_rollup->parsed()) return cmd_rollup(rollup);
    if (c_split->parsed()) return cmd_split(split);
    if (c_train->parsed()) return cmd_train(train);
    if (c_eval->parsed()) return cmd_evaluate(eval_args);
    if (c_impute->parsed()) return cmd_impute(impute);
    if (c_acf->parsed()) return cmd_acf(acf);
    if (c_attn->parsed()) return cmd_attn_export(attn);
    throw std::runtime_error("no subcommand given");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace stepfill
