#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "headsmith/data.hpp"
#include "headsmith/metrics.hpp"
#include "headsmith/nas.hpp"

namespace headsmith::pipeline {

// Orchestration: patient-wise splitting, the variance-filter sweep
// (baseline plus one condition per percentile), per-condition architecture
// search, test-set evaluation and report files.

enum class Split { train = 0, val = 1, test = 2 };

struct SplitPlan {
  std::array<double, 3> fractions{0.70, 0.15, 0.15};
  std::uint64_t seed = 0;
  std::map<std::string, Split> assignment;  // patient_id -> split

  Split of(const std::string& patient_id) const;
};

// Groups samples by patient so no patient crosses splits; fills train up to
// its sample target, then val, leaving the rest to test; guarantees every
// split holds at least one patient. Deterministic given the seed.
SplitPlan patient_split(const FeatureMatrix& data, const std::array<double, 3>& fractions,
                        std::uint64_t seed);

struct SplitData {
  FeatureMatrix train, val, test;
};

SplitData apply_split(const SplitPlan& plan, const FeatureMatrix& data);

struct ExperimentConfig {
  std::filesystem::path feature_csv;
  std::vector<double> percentiles{1.5, 50.0, 98.5};  // baseline is implicit
  std::size_t max_trials = 55;
  std::size_t max_epochs = 25;
  std::size_t parallelism = 1;
  std::uint64_t seed = 0;
  std::array<double, 3> fractions{0.70, 0.15, 0.15};
  std::filesystem::path out_dir = "headsmith-out";

  // Percentiles strictly increasing in [0, 100]; fractions non-negative and
  // summing to 1; budgets >= 1. Throws ConfigError.
  void validate() const;

  // JSON config file; unknown keys are rejected. Throws ConfigError.
  static ExperimentConfig from_json_file(const std::filesystem::path& path);
  static ExperimentConfig from_json(const std::string& text, const std::string& origin);
};

// "baseline", then "avt_low"/"avt_mid"/"avt_high" for the canonical
// 1.5/50/98.5 sweep, "avt_p<value>" otherwise.
std::vector<std::string> condition_names(const std::vector<double>& percentiles);

struct ConditionResult {
  std::string name;
  std::optional<double> percentile;  // empty for baseline
  metrics::ClassificationReport report;
  std::string error;                 // nonempty if the condition failed
};

struct ExperimentResult {
  SplitPlan plan;
  std::vector<ConditionResult> conditions;

  bool all_ok() const;
};

// Runs every condition: filter fitted on the training split only, search on
// (train, val), evaluation on test. Writes per-condition report.json,
// selector.json (filtered conditions), trials.jsonl, model.json, table.md and
// history.csv under out_dir/<condition>/, plus a top-level comparison
// table.md. A failing condition is recorded and does not stop the others.
ExperimentResult run_experiment(const ExperimentConfig& config);

// write-temp + rename so readers never see a half-written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace headsmith::pipeline
