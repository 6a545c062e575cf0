#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stepfill/cli.hpp"
#include "stepfill/io_util.hpp"

using namespace stepfill;

namespace {

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"stepfill"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

struct TempDir {
  std::filesystem::path dir;
  TempDir() {
    dir = std::filesystem::temp_directory_path() /
          ("stepfill_cli_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
  }
  ~TempDir() { std::filesystem::remove_all(dir); }
  std::string operator/(const std::string& name) const {
    return (dir / name).string();
  }
};

}  // namespace

TEST_CASE("method tokens parse") {
  CHECK(parse_method_token("zero").kind == MethodSpec::Kind::Fill);
  CHECK(parse_method_token("zero").fill_method == FillMethod::Zero);
  CHECK(parse_method_token("forward").fill_method == FillMethod::Forward);
  MethodSpec med = parse_method_token("median:dw_hd");
  CHECK(med.fill_method == FillMethod::Median);
  CHECK(med.fill_factor == FillFactor::DwHd);
  MethodSpec mm = parse_method_token("micro_mean:hour_of_day");
  CHECK(mm.fill_method == FillMethod::MicroMean);
  CHECK(mm.fill_factor == FillFactor::HourOfDay);
  MethodSpec ku = parse_method_token("knn:uniform:35");
  CHECK(ku.kind == MethodSpec::Kind::Knn);
  CHECK(ku.knn.k == 35);
  CHECK(ku.knn.weighting == KnnWeighting::Uniform);
  MethodSpec ks = parse_method_token("knn:softmax:10:1e-2");
  CHECK(ks.knn.weighting == KnnWeighting::Softmax);
  CHECK(ks.knn.k == 10);
  CHECK(ks.knn.tau == 0.01);
  CHECK(parse_method_token("regression").kind == MethodSpec::Kind::Regression);
  MethodSpec it = parse_method_token("iterative");
  CHECK(it.kind == MethodSpec::Kind::Iterative);
  CHECK(it.iterative_samples == 5);
  CHECK(parse_method_token("iterative:10").iterative_samples == 10);
  CHECK(parse_method_token("attention").kind == MethodSpec::Kind::Attention);
}

TEST_CASE("bad method tokens are rejected") {
  CHECK_THROWS(parse_method_token(""));
  CHECK_THROWS(parse_method_token("banana"));
  CHECK_THROWS(parse_method_token("zero:participant"));  // no factor allowed
  CHECK_THROWS(parse_method_token("median"));            // factor required
  CHECK_THROWS(parse_method_token("median:weird"));
  CHECK_THROWS(parse_method_token("knn"));
  CHECK_THROWS(parse_method_token("knn:uniform"));
  CHECK_THROWS(parse_method_token("knn:uniform:0"));
  CHECK_THROWS(parse_method_token("knn:uniform:5:0.1"));  // tau only for softmax
  CHECK_THROWS(parse_method_token("knn:softmax:5"));
  CHECK_THROWS(parse_method_token("knn:softmax:5:-1"));
  CHECK_THROWS(parse_method_token("iterative:0"));
  CHECK_THROWS(parse_method_token("iterative:2:3"));
  CHECK_THROWS(parse_method_token("attention:8"));
}

TEST_CASE("cli usage errors exit 1, data errors exit 2") {
  CHECK(run({"--help"}) == 0);
  CHECK(run({"synth", "--help"}) == 0);
  CHECK(run({"frobnicate"}) == 1);
  CHECK(run({"synth"}) == 1);  // missing required --out
  TempDir tmp;
  CHECK(run({"acf", "--cohort", tmp / "missing.csv", "--out", tmp / "acf.csv"}) == 2);
}

TEST_CASE("cli pipeline: synth, split, train, evaluate, impute") {
  TempDir tmp;
  std::string cohort = tmp / "cohort.csv";
  std::string truth = tmp / "truth.csv";
  CHECK(run({"synth", "--participants", "3", "--weeks", "6", "--seed", "21",
             "--out", cohort, "--truth-out", truth}) == 0);
  CHECK(std::filesystem::exists(cohort));
  CHECK(std::filesystem::exists(truth));
  CHECK(std::filesystem::exists(cohort + ".manifest.json"));

  std::string splits = tmp / "splits.csv";
  CHECK(run({"split", "--cohort", cohort, "--out", splits, "--folds", "2",
             "--seed", "5"}) == 0);

  std::string model = tmp / "model.ckpt";
  CHECK(run({"train", "--cohort", cohort, "--splits", splits, "--fold", "0",
             "--out", model, "--epochs", "1", "--batch", "256",
             "--max-instances", "400", "--seed", "9"}) == 0);
  CHECK(std::filesystem::exists(model));
  CHECK(std::filesystem::exists(model + ".log.csv"));

  // Holdout-route evaluation.
  std::string prefix = tmp / "evalA";
  CHECK(run({"evaluate", "--cohort", cohort, "--splits", splits, "--fold", "0",
             "--methods", "zero,median:dw_hd,attention", "--model", model,
             "--out", prefix, "--seed", "3"}) == 0);
  for (const char* suffix : {"_summary.csv", "_missing_bins.csv", "_step_bins.csv",
                             "_predictions.csv", ".jsonl", ".manifest.json"}) {
    CHECK(std::filesystem::exists(prefix + suffix));
  }
  std::string summary = read_file(prefix + "_summary.csv");
  CHECK(summary.find("median:dw_hd") != std::string::npos);
  CHECK(summary.rfind("method,n_targets,micro_mae,macro_mae,micro_rmse,"
                      "macro_rmse,macro_mae_ci\n", 0) == 0);

  // Truth-route evaluation.
  std::string prefixB = tmp / "evalB";
  CHECK(run({"evaluate", "--cohort", cohort, "--truth", truth, "--methods",
             "zero,median:dw_hd", "--out", prefixB, "--seed", "3"}) == 0);
  CHECK(std::filesystem::exists(prefixB + "_summary.csv"));

  // Exactly one of --truth/--splits.
  CHECK(run({"evaluate", "--cohort", cohort, "--methods", "zero", "--out",
             tmp / "evalC"}) == 2);
  CHECK(run({"evaluate", "--cohort", cohort, "--truth", truth, "--splits", splits,
             "--methods", "zero", "--out", tmp / "evalD"}) == 2);
  // Unknown method token is a data error.
  CHECK(run({"evaluate", "--cohort", cohort, "--truth", truth, "--methods",
             "wat", "--out", tmp / "evalE"}) == 2);
  // Reference must be in the list.
  CHECK(run({"evaluate", "--cohort", cohort, "--truth", truth, "--methods",
             "zero", "--reference", "median:dw_hd", "--out", tmp / "evalF"}) == 2);
  // Attention without --model.
  CHECK(run({"evaluate", "--cohort", cohort, "--truth", truth, "--methods",
             "attention", "--out", tmp / "evalG"}) == 2);

  std::string imputed = tmp / "imputed.csv";
  CHECK(run({"impute", "--cohort", cohort, "--method", "median:dw_hd", "--out",
             imputed}) == 0);
  std::string body = read_file(imputed);
  CHECK(body.rfind("participant_id,hour_index,method,predicted_steps,true_steps\n",
                   0) == 0);
  CHECK(body.find("median:dw_hd") != std::string::npos);

  std::string attn = tmp / "attn";
  CHECK(run({"attn-export", "--cohort", cohort, "--truth", truth, "--model",
             model, "--out", attn}) == 0);
  CHECK(std::filesystem::exists(attn + "_overall.csv"));
  CHECK(std::filesystem::exists(attn + "_dow6.csv"));
}

TEST_CASE("cli acf and rollup") {
  TempDir tmp;
  std::string cohort = tmp / "cohort.csv";
  CHECK(run({"synth", "--participants", "2", "--weeks", "5", "--seed", "33",
             "--out", cohort}) == 0);
  std::string acf = tmp / "acf.csv";
  CHECK(run({"acf", "--cohort", cohort, "--out", acf, "--max-lag", "48"}) == 0);
  std::string body = read_file(acf);
  CHECK(body.rfind("lag,median_acf\n", 0) == 0);
  int lines = 0;
  for (char c : body) lines += c == '\n';
  CHECK(lines == 49);  // header plus lags 1..48

  std::string minutes = tmp / "minutes.csv";
  std::string content = "participant_id,minute_index,steps,heart_rate\n";
  for (int m = 0; m < 60 * 30; m += 3) {
    content += "w," + std::to_string(m) + "," + std::to_string(m % 5) + ",\n";
  }
  atomic_write_file(minutes, content);
  std::string rolled = tmp / "rolled.csv";
  CHECK(run({"rollup", "--minutes", minutes, "--out", rolled, "--anchor-dow",
             "3", "--anchor-hour", "7"}) == 0);
  std::string rolled_body = read_file(rolled);
  CHECK(rolled_body.find("w,0,3,7,") != std::string::npos);
}
