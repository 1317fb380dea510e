#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "headsmith/avt.hpp"
#include "headsmith/common.hpp"
#include "headsmith/data.hpp"
#include "headsmith/nnet.hpp"
#include "headsmith/pipeline.hpp"
#include "headsmith/rng.hpp"

namespace fs = std::filesystem;
using namespace headsmith;
using pipeline::ExperimentConfig;
using pipeline::ExperimentResult;
using pipeline::Split;
using pipeline::SplitData;
using pipeline::SplitPlan;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() /
             ("headsmith_test_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file: ", p.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// One patient per entry; entry value = how many samples that patient has.
FeatureMatrix patients_with_sizes(const std::vector<std::size_t>& sizes) {
  FeatureMatrix data;
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  data.values = Matrix(total, 2);
  std::size_t i = 0;
  for (std::size_t p = 0; p < sizes.size(); ++p) {
    for (std::size_t k = 0; k < sizes[p]; ++k) {
      data.sample_ids.push_back("s" + std::to_string(i));
      data.patient_ids.push_back("p" + std::to_string(p));
      data.labels.push_back(static_cast<int>(p % 3));
      ++i;
    }
  }
  return data;
}

std::size_t samples_in(const SplitPlan& plan, const FeatureMatrix& data, Split split) {
  std::size_t count = 0;
  for (const std::string& pid : data.patient_ids) {
    if (plan.of(pid) == split) ++count;
  }
  return count;
}

std::size_t patients_in(const SplitPlan& plan, Split split) {
  std::size_t count = 0;
  for (const auto& [pid, s] : plan.assignment) {
    if (s == split) ++count;
  }
  return count;
}

// Same trial stream except for the timing field.
void check_jsonl_equal_modulo_time(const std::string& a, const std::string& b) {
  std::istringstream la(a), lb(b);
  std::string x, y;
  while (true) {
    const bool got_a = static_cast<bool>(std::getline(la, x));
    const bool got_b = static_cast<bool>(std::getline(lb, y));
    REQUIRE(got_a == got_b);
    if (!got_a) break;
    nlohmann::json ja = nlohmann::json::parse(x);
    nlohmann::json jb = nlohmann::json::parse(y);
    ja.erase("wall_time");
    jb.erase("wall_time");
    CHECK(ja == jb);
  }
}

// Sampling decisions (architecture, config, training seed) must match even
// when the measured accuracies do not.
void check_jsonl_same_sampling(const std::string& a, const std::string& b) {
  std::istringstream la(a), lb(b);
  std::string x, y;
  while (true) {
    const bool got_a = static_cast<bool>(std::getline(la, x));
    const bool got_b = static_cast<bool>(std::getline(lb, y));
    REQUIRE(got_a == got_b);
    if (!got_a) break;
    const nlohmann::json ja = nlohmann::json::parse(x);
    const nlohmann::json jb = nlohmann::json::parse(y);
    CHECK(ja.at("trial_index") == jb.at("trial_index"));
    CHECK(ja.at("architecture") == jb.at("architecture"));
    CHECK(ja.at("config") == jb.at("config"));
    CHECK(ja.at("seed") == jb.at("seed"));
  }
}

ExperimentConfig small_config(const fs::path& csv, const fs::path& out) {
  ExperimentConfig config;
  config.feature_csv = csv;
  config.max_trials = 2;
  config.max_epochs = 2;
  config.seed = 5;
  config.out_dir = out;
  return config;
}

const std::vector<std::string> kPerConditionFiles = {
    "report.json", "trials.jsonl", "model.json", "table.md", "history.csv"};

}  // namespace

TEST_CASE("equal-sized patients split to the exact sample fractions") {
  std::vector<std::size_t> sizes(100, 2);  // 100 patients x 2 samples
  const FeatureMatrix data = patients_with_sizes(sizes);
  const SplitPlan plan = pipeline::patient_split(data, {0.70, 0.15, 0.15}, 42);

  CHECK(plan.assignment.size() == 100);
  CHECK(samples_in(plan, data, Split::train) == 140);
  CHECK(samples_in(plan, data, Split::val) == 30);
  CHECK(samples_in(plan, data, Split::test) == 30);
  CHECK(patients_in(plan, Split::train) == 70);
  CHECK(patients_in(plan, Split::val) == 15);
  CHECK(patients_in(plan, Split::test) == 15);
}

TEST_CASE("uneven patients land within one patient of the sample targets") {
  std::vector<std::size_t> sizes(30);
  for (std::size_t i = 0; i < sizes.size(); ++i) sizes[i] = 1 + i % 8;
  const FeatureMatrix data = patients_with_sizes(sizes);
  const double n = static_cast<double>(data.num_samples());
  const std::size_t max_size = 8;

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SplitPlan plan = pipeline::patient_split(data, {0.70, 0.15, 0.15}, seed);
    const double train_n = static_cast<double>(samples_in(plan, data, Split::train));
    const double val_n = static_cast<double>(samples_in(plan, data, Split::val));
    const double test_n = static_cast<double>(samples_in(plan, data, Split::test));

    CHECK(train_n + val_n + test_n == n);
    CHECK(train_n <= 0.70 * n + 1e-9);
    CHECK(train_n > 0.70 * n - static_cast<double>(max_size));
    CHECK(train_n + val_n <= 0.85 * n + 1e-9);
    CHECK(train_n + val_n > 0.85 * n - static_cast<double>(max_size));
    CHECK(patients_in(plan, Split::train) >= 1);
    CHECK(patients_in(plan, Split::val) >= 1);
    CHECK(patients_in(plan, Split::test) >= 1);
  }
}

TEST_CASE("splitting is deterministic in the seed") {
  const FeatureMatrix data = make_blobs(120, 3, 4, 40, 9);
  const SplitPlan a = pipeline::patient_split(data, {0.70, 0.15, 0.15}, 7);
  const SplitPlan b = pipeline::patient_split(data, {0.70, 0.15, 0.15}, 7);
  const SplitPlan c = pipeline::patient_split(data, {0.70, 0.15, 0.15}, 8);
  CHECK(a.assignment == b.assignment);
  CHECK(a.assignment != c.assignment);
}

TEST_CASE("no patient's samples ever cross a split boundary") {
  const FeatureMatrix data = make_blobs(121, 3, 4, 11, 3);  // 11 samples per patient
  const SplitPlan plan = pipeline::patient_split(data, {0.70, 0.15, 0.15}, 1);
  const SplitData splits = pipeline::apply_split(plan, data);

  std::set<std::string> seen_samples;
  const std::array<const FeatureMatrix*, 3> parts{&splits.train, &splits.val, &splits.test};
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < parts[s]->num_samples(); ++i) {
      CHECK(plan.of(parts[s]->patient_ids[i]) == static_cast<Split>(s));
      CHECK(seen_samples.insert(parts[s]->sample_ids[i]).second);
    }
  }
  CHECK(seen_samples.size() == data.num_samples());

  // row order within a split follows the original file order
  for (const FeatureMatrix* part : parts) {
    for (std::size_t i = 1; i < part->num_samples(); ++i) {
      const int prev = std::stoi(part->sample_ids[i - 1].substr(1));
      const int cur = std::stoi(part->sample_ids[i].substr(1));
      CHECK(prev < cur);
    }
  }
}

TEST_CASE("three dominant-size patients still give one patient per split") {
  const FeatureMatrix data = patients_with_sizes({8, 1, 1});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SplitPlan plan = pipeline::patient_split(data, {0.70, 0.15, 0.15}, seed);
    CHECK(patients_in(plan, Split::train) == 1);
    CHECK(patients_in(plan, Split::val) == 1);
    CHECK(patients_in(plan, Split::test) == 1);
  }
}

TEST_CASE("split rejects impossible inputs") {
  const FeatureMatrix two = patients_with_sizes({3, 3});
  CHECK_THROWS_AS(pipeline::patient_split(two, {0.70, 0.15, 0.15}, 0), DataError);

  CHECK_THROWS_AS(pipeline::patient_split(FeatureMatrix{}, {0.70, 0.15, 0.15}, 0), DataError);

  const FeatureMatrix ok = patients_with_sizes({2, 2, 2, 2});
  CHECK_THROWS_AS(pipeline::patient_split(ok, {0.5, 0.5, 0.5}, 0), std::invalid_argument);
  CHECK_THROWS_AS(pipeline::patient_split(ok, {-0.1, 0.6, 0.5}, 0), std::invalid_argument);

  const SplitPlan plan = pipeline::patient_split(ok, {0.70, 0.15, 0.15}, 0);
  CHECK_THROWS_AS(plan.of("unknown-patient"), DataError);
}

TEST_CASE("condition names follow the canonical sweep or the percentile value") {
  CHECK(pipeline::condition_names({1.5, 50.0, 98.5}) ==
        std::vector<std::string>{"baseline", "avt_low", "avt_mid", "avt_high"});
  CHECK(pipeline::condition_names({}) == std::vector<std::string>{"baseline"});
  CHECK(pipeline::condition_names({12.5}) ==
        std::vector<std::string>{"baseline", "avt_p12_5"});
  CHECK(pipeline::condition_names({50.0}) ==
        std::vector<std::string>{"baseline", "avt_p50"});
  CHECK(pipeline::condition_names({1.5, 50.0}) ==
        std::vector<std::string>{"baseline", "avt_p1_5", "avt_p50"});
}

TEST_CASE("experiment config parses from JSON and rejects anything off-schema") {
  const std::string origin = "test";
  const ExperimentConfig config = ExperimentConfig::from_json(
      R"({"feature_csv": "a.csv", "percentiles": [5.0, 20.0], "max_trials": 7,
          "max_epochs": 3, "parallel": 2, "seed": 11,
          "fractions": [0.6, 0.2, 0.2], "out_dir": "out"})",
      origin);
  CHECK(config.feature_csv == fs::path("a.csv"));
  CHECK(config.percentiles == std::vector<double>{5.0, 20.0});
  CHECK(config.max_trials == 7);
  CHECK(config.max_epochs == 3);
  CHECK(config.parallelism == 2);
  CHECK(config.seed == 11);
  CHECK(config.fractions == std::array<double, 3>{0.6, 0.2, 0.2});
  CHECK(config.out_dir == fs::path("out"));
  CHECK_NOTHROW(config.validate());

  // defaults survive a minimal config
  const ExperimentConfig minimal = ExperimentConfig::from_json(
      R"({"feature_csv": "a.csv"})", origin);
  CHECK(minimal.percentiles == std::vector<double>{1.5, 50.0, 98.5});
  CHECK(minimal.max_trials == 55);
  CHECK(minimal.max_epochs == 25);

  CHECK_THROWS_AS(ExperimentConfig::from_json("not json", origin), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json("[1, 2]", origin), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json("{}", origin), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(
                      R"({"feature_csv": "a.csv", "trials": 3})", origin),
                  ConfigError);  // unknown key
  CHECK_THROWS_AS(ExperimentConfig::from_json(
                      R"({"feature_csv": "a.csv", "max_trials": "many"})", origin),
                  ConfigError);  // wrong type
  CHECK_THROWS_AS(ExperimentConfig::from_json(
                      R"({"feature_csv": "a.csv", "fractions": [0.5, 0.5]})", origin),
                  ConfigError);  // wrong length

  CHECK_THROWS_AS(ExperimentConfig::from_json_file("/no/such/config.json"), ConfigError);
}

TEST_CASE("experiment config validation bounds every field") {
  ExperimentConfig config;
  config.feature_csv = "a.csv";
  CHECK_NOTHROW(config.validate());

  ExperimentConfig bad = config;
  bad.feature_csv.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = config;
  bad.max_trials = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = config;
  bad.max_epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = config;
  bad.parallelism = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = config;
  bad.percentiles = {50.0, 50.0};  // not strictly increasing
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = config;
  bad.percentiles = {-1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = config;
  bad.percentiles = {101.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = config;
  bad.percentiles = {0.0, 100.0};  // the closed interval is allowed
  CHECK_NOTHROW(bad.validate());

  bad = config;
  bad.fractions = {0.5, 0.3, 0.3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("atomic writes leave no temp file and replace existing content") {
  TempDir tmp("atomic");
  const fs::path target = tmp.path / "out.txt";
  pipeline::write_file_atomic(target, "first");
  CHECK(slurp(target) == "first");
  pipeline::write_file_atomic(target, "second");
  CHECK(slurp(target) == "second");
  CHECK(!fs::exists(tmp.path / "out.txt.tmp"));
  CHECK_THROWS_AS(pipeline::write_file_atomic(tmp.path / "no_dir" / "x.txt", "y"), DataError);
}

TEST_CASE("a full experiment writes every artifact and reruns byte-identically") {
  TempDir tmp("experiment");
  const FeatureMatrix data = make_blobs(240, 8, 3, 24, 7);
  const fs::path csv = tmp.path / "features.csv";
  write_feature_csv(csv, data);

  ExperimentConfig config = small_config(csv, tmp.path / "out_a");
  const ExperimentResult result = pipeline::run_experiment(config);

  REQUIRE(result.all_ok());
  REQUIRE(result.conditions.size() == 4);
  CHECK(result.conditions[0].name == "baseline");
  CHECK(!result.conditions[0].percentile.has_value());
  CHECK(result.conditions[1].name == "avt_low");
  CHECK(result.conditions[1].percentile == 1.5);
  CHECK(result.conditions[2].name == "avt_mid");
  CHECK(result.conditions[2].percentile == 50.0);
  CHECK(result.conditions[3].name == "avt_high");
  CHECK(result.conditions[3].percentile == 98.5);
  CHECK(result.plan.assignment.size() == 24);

  // expected retained widths for 8 features: 8 (no filter), then 7 / 4 / 1
  const std::vector<std::size_t> widths{8, 7, 4, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    const fs::path dir = tmp.path / "out_a" / result.conditions[i].name;
    for (const std::string& file : kPerConditionFiles) {
      CHECK_MESSAGE(fs::exists(dir / file), (dir / file).string());
    }
    CHECK(fs::exists(dir / "selector.json") == (i > 0));
    CHECK(result.conditions[i].report.dimensionality == widths[i]);
    CHECK(result.conditions[i].report.accuracy >= 0.0);
    CHECK(result.conditions[i].report.accuracy <= 1.0);

    const nlohmann::json report = nlohmann::json::parse(slurp(dir / "report.json"));
    CHECK(report.at("dimensionality").get<std::size_t>() == widths[i]);

    const nnet::TrainedModel model = nnet::TrainedModel::load(dir / "model.json");
    CHECK(model.spec.input_width == widths[i]);
    CHECK(model.spec.num_classes == 3);

    CHECK(slurp(dir / "history.csv").rfind("epoch,train_loss,val_accuracy\n", 0) == 0);
    CHECK(slurp(dir / "table.md").rfind("| Layer Type | Output Shape | Parameter Count |\n",
                                        0) == 0);
  }

  const std::string comparison = slurp(tmp.path / "out_a" / "table.md");
  CHECK(comparison.find("| Dimensionality | 8 | 7 | 4 | 1 |") != std::string::npos);
  CHECK(comparison.find("baseline") != std::string::npos);
  CHECK(comparison.find("avt_high") != std::string::npos);

  // the filter really was fitted on the training split alone
  const SplitData splits = pipeline::apply_split(result.plan, data);
  const avt::VarianceSelector expected = avt::fit(splits.train, 1.5);
  const avt::VarianceSelector loaded =
      avt::VarianceSelector::load(tmp.path / "out_a" / "avt_low" / "selector.json");
  CHECK(loaded.variances == expected.variances);
  CHECK(loaded.threshold == expected.threshold);
  CHECK(loaded.kept_indices == expected.kept_indices);

  // the strongest filter keeps exactly the dominant class-signal feature
  const avt::VarianceSelector high =
      avt::VarianceSelector::load(tmp.path / "out_a" / "avt_high" / "selector.json");
  CHECK(high.kept_indices == std::vector<std::size_t>{0});

  // rerun into a fresh directory: everything but trial timing is identical
  config.out_dir = tmp.path / "out_b";
  const ExperimentResult rerun = pipeline::run_experiment(config);
  REQUIRE(rerun.all_ok());
  CHECK(rerun.plan.assignment == result.plan.assignment);
  CHECK(slurp(tmp.path / "out_b" / "table.md") == comparison);
  for (const pipeline::ConditionResult& cond : result.conditions) {
    const fs::path a = tmp.path / "out_a" / cond.name;
    const fs::path b = tmp.path / "out_b" / cond.name;
    for (const std::string& file : kPerConditionFiles) {
      if (file == "trials.jsonl") {
        check_jsonl_equal_modulo_time(slurp(a / file), slurp(b / file));
      } else {
        CHECK_MESSAGE(slurp(a / file) == slurp(b / file), (a / file).string());
      }
    }
    if (cond.percentile) {
      CHECK(slurp(a / "selector.json") == slurp(b / "selector.json"));
    }
  }
}

TEST_CASE("validation and test rows cannot influence fitting or sampling") {
  TempDir tmp("leakage");
  const FeatureMatrix data = make_blobs(240, 8, 3, 24, 7);
  write_feature_csv(tmp.path / "clean.csv", data);

  ExperimentConfig config = small_config(tmp.path / "clean.csv", tmp.path / "out_clean");
  const SplitPlan plan =
      pipeline::patient_split(data, config.fractions, mix_seed(config.seed, fnv1a64("split")));

  // same patients and labels, but every non-training row is shifted hard
  FeatureMatrix shifted = data;
  for (std::size_t i = 0; i < shifted.num_samples(); ++i) {
    if (plan.of(shifted.patient_ids[i]) == Split::train) continue;
    for (std::size_t c = 0; c < shifted.num_features(); ++c) {
      shifted.values(i, c) += 250.0;
    }
  }
  write_feature_csv(tmp.path / "shifted.csv", shifted);

  const ExperimentResult clean = pipeline::run_experiment(config);
  config.feature_csv = tmp.path / "shifted.csv";
  config.out_dir = tmp.path / "out_shifted";
  const ExperimentResult contaminated = pipeline::run_experiment(config);
  REQUIRE(clean.all_ok());
  REQUIRE(contaminated.all_ok());
  CHECK(clean.plan.assignment == contaminated.plan.assignment);

  for (const pipeline::ConditionResult& cond : clean.conditions) {
    if (cond.percentile) {
      CHECK(slurp(tmp.path / "out_clean" / cond.name / "selector.json") ==
            slurp(tmp.path / "out_shifted" / cond.name / "selector.json"));
    }
    check_jsonl_same_sampling(slurp(tmp.path / "out_clean" / cond.name / "trials.jsonl"),
                              slurp(tmp.path / "out_shifted" / cond.name / "trials.jsonl"));
  }
}

TEST_CASE("each condition's randomness is keyed by name, not sweep position") {
  TempDir tmp("keyed");
  const FeatureMatrix data = make_blobs(240, 8, 3, 24, 7);
  const fs::path csv = tmp.path / "features.csv";
  write_feature_csv(csv, data);

  ExperimentConfig full = small_config(csv, tmp.path / "out_full");
  const ExperimentResult full_result = pipeline::run_experiment(full);
  REQUIRE(full_result.all_ok());

  ExperimentConfig baseline_only = small_config(csv, tmp.path / "out_base");
  baseline_only.percentiles = {};
  const ExperimentResult base_result = pipeline::run_experiment(baseline_only);
  REQUIRE(base_result.all_ok());
  REQUIRE(base_result.conditions.size() == 1);

  CHECK(slurp(tmp.path / "out_full" / "baseline" / "model.json") ==
        slurp(tmp.path / "out_base" / "baseline" / "model.json"));
  check_jsonl_equal_modulo_time(slurp(tmp.path / "out_full" / "baseline" / "trials.jsonl"),
                                slurp(tmp.path / "out_base" / "baseline" / "trials.jsonl"));
}

TEST_CASE("one failing condition is recorded without stopping the others") {
  TempDir tmp("failing");
  const FeatureMatrix data = make_blobs(240, 8, 3, 24, 7);
  const fs::path csv = tmp.path / "features.csv";
  write_feature_csv(csv, data);

  ExperimentConfig config = small_config(csv, tmp.path / "out");
  fs::create_directories(config.out_dir);
  {  // a stray regular file squats on the avt_mid output directory
    std::ofstream blocker(config.out_dir / "avt_mid");
    blocker << "in the way";
  }

  const ExperimentResult result = pipeline::run_experiment(config);
  REQUIRE(result.conditions.size() == 4);
  CHECK(!result.all_ok());
  CHECK(result.conditions[0].error.empty());
  CHECK(result.conditions[1].error.empty());
  CHECK(!result.conditions[2].error.empty());
  CHECK(result.conditions[3].error.empty());

  // the comparison table covers exactly the conditions that finished
  const std::string comparison = slurp(config.out_dir / "table.md");
  CHECK(comparison.find("avt_low") != std::string::npos);
  CHECK(comparison.find("avt_high") != std::string::npos);
  CHECK(comparison.find("avt_mid") == std::string::npos);
}

TEST_CASE("an experiment whose training split lacks a class aborts") {
  TempDir tmp("class_gap");
  // every patient holds one sample; labels 0/1 except one stray sample of
  // class 2, so some split must see a class the training split may lack
  FeatureMatrix data = patients_with_sizes(std::vector<std::size_t>(20, 1));
  for (std::size_t i = 0; i < data.num_samples(); ++i) {
    data.labels[i] = static_cast<int>(i % 2);
  }
  data.labels[19] = 2;
  const fs::path csv = tmp.path / "features.csv";
  write_feature_csv(csv, data);

  ExperimentConfig config = small_config(csv, tmp.path / "out");
  bool aborted = false;
  try {
    // seed chosen so patient p19 (the only class-2 carrier) is not in train
    for (std::uint64_t seed = 0; seed < 50 && !aborted; ++seed) {
      config.seed = seed;
      const SplitPlan plan =
          pipeline::patient_split(data, config.fractions, mix_seed(seed, fnv1a64("split")));
      if (plan.of("p19") == Split::train) continue;
      pipeline::run_experiment(config);
    }
  } catch (const DataError&) {
    aborted = true;
  }
  CHECK(aborted);
}
