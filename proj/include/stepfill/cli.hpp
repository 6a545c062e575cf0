#pragma once

#include <string>

#include "stepfill/baselines.hpp"

// Command-line front end. run_cli returns the process exit code: 0 on
// success, 1 for usage errors, 2 for data or runtime failures.

namespace stepfill {

constexpr const char* kVersion = "0.1.0";

int run_cli(int argc, const char* const* argv);

// Method tokens accepted by evaluate/impute, e.g. "zero", "median:dw_hd",
// "micro_mean:participant", "knn:uniform:35", "knn:softmax:35:1e-2",
// "regression", "iterative", "iterative:10", "attention".
struct MethodSpec {
  enum class Kind { Fill, Knn, Regression, Iterative, Attention };
  Kind kind = Kind::Fill;
  FillMethod fill_method = FillMethod::Zero;
  FillFactor fill_factor = FillFactor::Participant;
  KnnConfig knn;
  int iterative_samples = 5;
  std::string token;
};

MethodSpec parse_method_token(const std::string& token);

}  // namespace stepfill
