#include "headsmith/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "headsmith/avt.hpp"
#include "headsmith/nnet.hpp"
#include "headsmith/rng.hpp"

namespace headsmith::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

Split SplitPlan::of(const std::string& patient_id) const {
  auto it = assignment.find(patient_id);
  if (it == assignment.end()) throw DataError("patient not covered by the split plan: " + patient_id);
  return it->second;
}

namespace {

void check_fractions(const std::array<double, 3>& fractions) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw std::invalid_argument("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");
}

}  // namespace

SplitPlan patient_split(const FeatureMatrix& data, const std::array<double, 3>& fractions,
                        std::uint64_t seed) {
  check_fractions(fractions);
  if (data.num_samples() == 0) throw DataError("cannot split an empty dataset");

  // Distinct patients in first-appearance order, with their sample counts.
  std::vector<std::string> patients;
  std::map<std::string, std::size_t> sample_count;
  for (const std::string& pid : data.patient_ids) {
    if (sample_count.emplace(pid, 0).second) patients.push_back(pid);
    ++sample_count[pid];
  }
  if (patients.size() < 3) {
    throw DataError("patient-wise split needs at least 3 distinct patients, got " +
                    std::to_string(patients.size()));
  }

  SplitMix64 rng(seed);
  for (std::size_t i = patients.size() - 1; i > 0; --i) {
    std::swap(patients[i], patients[rng.next_below(i + 1)]);
  }

  // Fill train until its sample target, then val; the remainder is test.
  const double n = static_cast<double>(data.num_samples());
  const double train_target = n * fractions[0];
  const double val_target = n * (fractions[0] + fractions[1]);
  SplitPlan plan;
  plan.fractions = fractions;
  plan.seed = seed;
  std::array<std::vector<std::string>, 3> members;
  double cum = 0.0;
  for (const std::string& pid : patients) {
    const double next = cum + static_cast<double>(sample_count[pid]);
    Split split = Split::test;
    if (next <= train_target + 1e-9) {
      split = Split::train;
    } else if (next <= val_target + 1e-9) {
      split = Split::val;
    }
    members[static_cast<std::size_t>(split)].push_back(pid);
    cum = next;
  }

  // No split may end up empty: donate from the split with the most patients.
  for (std::size_t s = 0; s < 3; ++s) {
    if (!members[s].empty()) continue;
    std::size_t donor = 0;
    for (std::size_t d = 1; d < 3; ++d) {
      if (members[d].size() > members[donor].size()) donor = d;
    }
    members[s].push_back(members[donor].back());
    members[donor].pop_back();
  }

  for (std::size_t s = 0; s < 3; ++s) {
    for (const std::string& pid : members[s]) {
      plan.assignment[pid] = static_cast<Split>(s);
    }
  }
  return plan;
}

SplitData apply_split(const SplitPlan& plan, const FeatureMatrix& data) {
  std::array<std::vector<std::size_t>, 3> rows;
  for (std::size_t i = 0; i < data.num_samples(); ++i) {
    rows[static_cast<std::size_t>(plan.of(data.patient_ids[i]))].push_back(i);
  }
  return {data.select_rows(rows[0]), data.select_rows(rows[1]), data.select_rows(rows[2])};
}

void ExperimentConfig::validate() const {
  if (feature_csv.empty()) throw ConfigError("feature_csv is required");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (max_trials == 0) throw ConfigError("max_trials must be >= 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
  if (parallelism == 0) throw ConfigError("parallel must be >= 1");
  double prev = -1.0;
  for (double p : percentiles) {
    if (!(p >= 0.0 && p <= 100.0)) {
      throw ConfigError("percentiles must lie in [0, 100]");
    }
    if (!(p > prev)) throw ConfigError("percentiles must be strictly increasing");
    prev = p;
  }
  try {
    check_fractions(fractions);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(origin + ": config must be a JSON object");

  ExperimentConfig config;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "feature_csv") {
        config.feature_csv = value.get<std::string>();
      } else if (key == "percentiles") {
        config.percentiles = value.get<std::vector<double>>();
      } else if (key == "max_trials") {
        config.max_trials = value.get<std::size_t>();
      } else if (key == "max_epochs") {
        config.max_epochs = value.get<std::size_t>();
      } else if (key == "parallel") {
        config.parallelism = value.get<std::size_t>();
      } else if (key == "seed") {
        config.seed = value.get<std::uint64_t>();
      } else if (key == "fractions") {
        auto fr = value.get<std::vector<double>>();
        if (fr.size() != 3) throw ConfigError(origin + ": fractions needs exactly 3 entries");
        config.fractions = {fr[0], fr[1], fr[2]};
      } else if (key == "out_dir") {
        config.out_dir = value.get<std::string>();
      } else {
        throw ConfigError(origin + ": unknown config key: " + key);
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": bad value type: " + e.what());
  }
  if (config.feature_csv.empty()) throw ConfigError(origin + ": feature_csv is required");
  return config;
}

ExperimentConfig ExperimentConfig::from_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text, path.string());
}

std::vector<std::string> condition_names(const std::vector<double>& percentiles) {
  std::vector<std::string> names{"baseline"};
  const bool canonical = percentiles.size() == 3 && percentiles[0] == 1.5 &&
                         percentiles[1] == 50.0 && percentiles[2] == 98.5;
  if (canonical) {
    names.insert(names.end(), {"avt_low", "avt_mid", "avt_high"});
    return names;
  }
  for (double p : percentiles) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", p);
    std::string label(buf);
    std::replace(label.begin(), label.end(), '.', '_');
    names.push_back("avt_p" + label);
  }
  return names;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + tmp.string());
    out << content;
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

bool ExperimentResult::all_ok() const {
  for (const ConditionResult& cond : conditions) {
    if (!cond.error.empty()) return false;
  }
  return true;
}

namespace {

metrics::ClassificationReport run_condition(const std::string& name,
                                            const std::optional<double>& percentile,
                                            const SplitData& splits,
                                            const ExperimentConfig& config, int num_classes) {
  FeatureMatrix train = splits.train;
  FeatureMatrix val = splits.val;
  FeatureMatrix test = splits.test;
  std::optional<avt::VarianceSelector> selector;
  if (percentile) {
    selector = avt::fit(splits.train, *percentile);  // training split only
    train = avt::transform(*selector, splits.train);
    val = avt::transform(*selector, splits.val);
    test = avt::transform(*selector, splits.test);
  }

  nas::SearchOptions options;
  options.max_trials = config.max_trials;
  options.max_epochs = config.max_epochs;
  options.seed = mix_seed(config.seed, fnv1a64(name));
  options.parallelism = config.parallelism;
  nas::SearchResult search = nas::search(train, val, nas::SearchSpace{}, options);

  std::vector<int> predicted = nnet::predict(search.best_model, test.values);
  metrics::ClassificationReport report =
      metrics::metrics_from_confusion(metrics::confusion(test.labels, predicted, num_classes));
  report.dimensionality = train.num_features();

  const fs::path dir = config.out_dir / name;
  fs::create_directories(dir);
  write_file_atomic(dir / "report.json", report.to_json());
  if (selector) write_file_atomic(dir / "selector.json", selector->to_json());
  write_file_atomic(dir / "trials.jsonl", nas::trials_jsonl(search.trials));
  write_file_atomic(dir / "model.json", search.best_model.to_json() + "\n");
  write_file_atomic(dir / "table.md", nas::export_architecture(search));
  write_file_atomic(dir / "history.csv", nnet::history_csv(search.best_history));
  return report;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  FeatureMatrix data = read_feature_csv(config.feature_csv);
  data.validate();

  ExperimentResult result;
  result.plan = patient_split(data, config.fractions, mix_seed(config.seed, fnv1a64("split")));
  SplitData splits = apply_split(result.plan, data);

  // The class set is whatever the training split contains; a class that never
  // appears in training cannot be learned, so it aborts the run.
  const int num_classes = splits.train.num_classes();
  if (num_classes < 2) throw DataError("training split must contain at least two classes");
  for (const FeatureMatrix* part : {&splits.val, &splits.test}) {
    for (int label : part->labels) {
      if (label >= num_classes) {
        throw DataError("class " + std::to_string(label) +
                        " is absent from the training split; adjust the split or the data");
      }
    }
  }

  fs::create_directories(config.out_dir);
  const std::vector<std::string> names = condition_names(config.percentiles);
  std::vector<metrics::ClassificationReport> ok_reports;
  std::vector<std::string> ok_names;

  for (std::size_t i = 0; i < names.size(); ++i) {
    ConditionResult cond;
    cond.name = names[i];
    if (i > 0) cond.percentile = config.percentiles[i - 1];
    try {
      cond.report = run_condition(cond.name, cond.percentile, splits, config, num_classes);
      ok_reports.push_back(cond.report);
      ok_names.push_back(cond.name);
    } catch (const std::exception& e) {
      cond.error = e.what();
    }
    result.conditions.push_back(std::move(cond));
  }

  if (!ok_reports.empty()) {
    write_file_atomic(config.out_dir / "table.md",
                      metrics::render_comparison(ok_reports, ok_names));
  }
  return result;
}

}  // namespace headsmith::pipeline
