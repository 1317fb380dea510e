// headsmith — post-hoc classifier improvement toolkit.
//
// Subcommands expose each library module: `run` drives the full experiment
// (patient split -> variance-filter sweep -> architecture search -> test
// evaluation), the rest are building blocks for scripting and inspection.
//
// Exit codes: 0 success, 2 bad configuration/flags, 3 bad input data,
// 4 runtime failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "headsmith/avt.hpp"
#include "headsmith/common.hpp"
#include "headsmith/data.hpp"
#include "headsmith/imgprep.hpp"
#include "headsmith/kernels.hpp"
#include "headsmith/metrics.hpp"
#include "headsmith/nas.hpp"
#include "headsmith/nnet.hpp"
#include "headsmith/pipeline.hpp"

namespace fs = std::filesystem;
using namespace headsmith;

namespace {

bool g_serial = false;

void apply_backend() {
  if (g_serial) kernels::set_backend(kernels::Backend::serial);
}

void write_text(const fs::path& path, const std::string& content) {
  pipeline::write_file_atomic(path, content);
}

void cmd_run(const std::string& config_path, const std::optional<std::uint64_t>& seed,
             const std::optional<std::string>& out_dir,
             const std::optional<std::size_t>& max_trials,
             const std::optional<std::size_t>& max_epochs,
             const std::optional<std::size_t>& parallel) {
  apply_backend();
  pipeline::ExperimentConfig config = pipeline::ExperimentConfig::from_json_file(config_path);
  if (seed) config.seed = *seed;
  if (out_dir) config.out_dir = *out_dir;
  if (max_trials) config.max_trials = *max_trials;
  if (max_epochs) config.max_epochs = *max_epochs;
  if (parallel) config.parallelism = *parallel;

  pipeline::ExperimentResult result = pipeline::run_experiment(config);
  for (const pipeline::ConditionResult& cond : result.conditions) {
    if (!cond.error.empty()) {
      std::cerr << "condition " << cond.name << " failed: " << cond.error << "\n";
      continue;
    }
    std::cout << cond.name << ": dimensionality " << cond.report.dimensionality << ", accuracy "
              << metrics::format_percent(cond.report.accuracy) << "\n";
  }
  std::cout << "outputs in " << config.out_dir.string() << "\n";
  if (!result.all_ok()) throw std::runtime_error("one or more conditions failed");
}

void cmd_avt_fit(const std::string& data_path, double percentile, int ddof, bool strict_zero,
                 const std::string& out_path) {
  apply_backend();
  FeatureMatrix data = read_feature_csv(data_path);
  if (data.num_samples() == 1) {
    std::cerr << "warning: a single sample has zero variance everywhere; "
                 "the filter will keep all features\n";
  }
  avt::FitOptions options;
  options.ddof = ddof;
  options.strict_at_zero = strict_zero;
  avt::VarianceSelector selector = avt::fit(data, percentile, options);
  selector.save(out_path);
  std::cout << "kept " << selector.kept_indices.size() << " of " << selector.fitted_width()
            << " features (threshold " << selector.threshold << ")\n";
}

void cmd_avt_apply(const std::string& selector_path, const std::string& data_path,
                   const std::string& out_path) {
  apply_backend();
  avt::VarianceSelector selector = avt::VarianceSelector::load(selector_path);
  FeatureMatrix data = read_feature_csv(data_path);
  write_feature_csv(out_path, avt::transform(selector, data));
  std::cout << "wrote " << out_path << "\n";
}

void cmd_nas(const std::string& train_path, const std::string& val_path, std::size_t max_trials,
             std::size_t max_epochs, std::uint64_t seed, std::size_t parallel,
             const std::string& out_dir) {
  apply_backend();
  FeatureMatrix train = read_feature_csv(train_path);
  FeatureMatrix val = read_feature_csv(val_path);

  nas::SearchOptions options;
  options.max_trials = max_trials;
  options.max_epochs = max_epochs;
  options.seed = seed;
  options.parallelism = parallel;
  nas::SearchResult result = nas::search(train, val, nas::SearchSpace{}, options);

  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "trials.jsonl", nas::trials_jsonl(result.trials));
  write_text(fs::path(out_dir) / "model.json", result.best_model.to_json() + "\n");
  write_text(fs::path(out_dir) / "table.md", nas::export_architecture(result));
  write_text(fs::path(out_dir) / "history.csv", nnet::history_csv(result.best_history));

  const nas::TrialRecord& best = result.trials[result.best_trial_index];
  std::cout << "best trial " << best.trial_index << ": val accuracy "
            << metrics::format_percent(best.val_accuracy) << " after " << best.epochs_run
            << " epochs\n"
            << nas::export_architecture(result);
}

void cmd_evaluate(const std::string& model_path, const std::string& data_path,
                  const std::optional<std::string>& out_path) {
  apply_backend();
  nnet::TrainedModel model = nnet::TrainedModel::load(model_path);
  FeatureMatrix data = read_feature_csv(data_path);
  for (int label : data.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= model.spec.num_classes) {
      throw DataError("label " + std::to_string(label) + " outside the model's class range");
    }
  }
  std::vector<int> predicted = nnet::predict(model, data.values);
  metrics::ClassificationReport report = metrics::metrics_from_confusion(
      metrics::confusion(data.labels, predicted, static_cast<int>(model.spec.num_classes)));
  report.dimensionality = data.num_features();
  const std::string text = report.to_json();
  if (out_path) {
    write_text(*out_path, text);
    std::cout << "wrote " << *out_path << "\n";
  } else {
    std::cout << text;
  }
}

void cmd_split(const std::string& data_path, double train_frac, double val_frac, double test_frac,
               std::uint64_t seed, const std::string& out_dir) {
  apply_backend();
  FeatureMatrix data = read_feature_csv(data_path);
  pipeline::SplitPlan plan = pipeline::patient_split(data, {train_frac, val_frac, test_frac}, seed);
  pipeline::SplitData splits = pipeline::apply_split(plan, data);

  fs::create_directories(out_dir);
  write_feature_csv(fs::path(out_dir) / "train.csv", splits.train);
  write_feature_csv(fs::path(out_dir) / "val.csv", splits.val);
  write_feature_csv(fs::path(out_dir) / "test.csv", splits.test);
  std::cout << "train " << splits.train.num_samples() << ", val " << splits.val.num_samples()
            << ", test " << splits.test.num_samples() << " samples -> " << out_dir << "\n";
}

void cmd_prep(imgprep::BatchOp op, const std::string& in_dir, const std::string& out_dir,
              double margin) {
  apply_backend();
  std::cout << imgprep::process_directory(in_dir, out_dir, op, margin);
}

void cmd_synth_blobs(std::size_t samples, std::size_t features, std::size_t classes,
                     std::size_t patients, std::uint64_t seed, const std::string& out_path) {
  apply_backend();
  write_feature_csv(out_path, make_blobs(samples, features, classes, patients, seed));
  std::cout << "wrote " << out_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"post-hoc classifier improvement: variance filtering, architecture search, "
               "radiograph preprocessing"};
  app.require_subcommand(1);
  app.add_flag("--serial", g_serial, "run compute kernels single-threaded");

  // run
  auto* run = app.add_subcommand("run", "full experiment from a JSON config");
  std::string run_config;
  std::uint64_t run_seed = 0;
  std::string run_out;
  std::size_t run_trials = 0, run_epochs = 0, run_parallel = 0;
  run->add_option("--config", run_config, "experiment config JSON")->required();
  auto* run_seed_opt = run->add_option("--seed", run_seed, "override the config seed");
  auto* run_out_opt = run->add_option("--out", run_out, "override the output directory");
  auto* run_trials_opt = run->add_option("--max-trials", run_trials, "override the trial budget");
  auto* run_epochs_opt = run->add_option("--max-epochs", run_epochs, "override the epoch budget");
  auto* run_par_opt = run->add_option("--parallel", run_parallel, "override search parallelism");
  run->callback([&] {
    cmd_run(run_config,
            run_seed_opt->count() ? std::optional<std::uint64_t>(run_seed) : std::nullopt,
            run_out_opt->count() ? std::optional<std::string>(run_out) : std::nullopt,
            run_trials_opt->count() ? std::optional<std::size_t>(run_trials) : std::nullopt,
            run_epochs_opt->count() ? std::optional<std::size_t>(run_epochs) : std::nullopt,
            run_par_opt->count() ? std::optional<std::size_t>(run_parallel) : std::nullopt);
  });

  // avt-fit
  auto* fit = app.add_subcommand("avt-fit", "fit a variance-percentile feature filter");
  std::string fit_data, fit_out;
  double fit_percentile = 50.0;
  int fit_ddof = 0;
  bool fit_strict = false;
  fit->add_option("--data", fit_data, "feature CSV")->required();
  fit->add_option("--percentile", fit_percentile, "variance percentile in [0, 100]")->required();
  fit->add_option("--ddof", fit_ddof, "0 population (default) or 1 sample variance")
      ->check(CLI::Range(0, 1));
  fit->add_flag("--strict-zero", fit_strict, "drop zero-variance features when the threshold is 0");
  fit->add_option("--out", fit_out, "selector JSON output path")->required();
  fit->callback([&] { cmd_avt_fit(fit_data, fit_percentile, fit_ddof, fit_strict, fit_out); });

  // avt-apply
  auto* apply = app.add_subcommand("avt-apply", "apply a fitted filter to a feature CSV");
  std::string apply_selector, apply_data, apply_out;
  apply->add_option("--selector", apply_selector, "selector JSON")->required();
  apply->add_option("--data", apply_data, "feature CSV")->required();
  apply->add_option("--out", apply_out, "filtered CSV output path")->required();
  apply->callback([&] { cmd_avt_apply(apply_selector, apply_data, apply_out); });

  // nas
  auto* nas_cmd = app.add_subcommand("nas", "architecture search on a train/val pair");
  std::string nas_train, nas_val, nas_out;
  std::size_t nas_trials = 55, nas_epochs = 25, nas_parallel = 1;
  std::uint64_t nas_seed = 0;
  nas_cmd->add_option("--train", nas_train, "training feature CSV")->required();
  nas_cmd->add_option("--val", nas_val, "validation feature CSV")->required();
  nas_cmd->add_option("--max-trials", nas_trials, "trial budget (default 55)");
  nas_cmd->add_option("--max-epochs", nas_epochs, "per-trial epoch budget (default 25)");
  nas_cmd->add_option("--seed", nas_seed, "search seed");
  nas_cmd->add_option("--parallel", nas_parallel, "concurrent trials");
  nas_cmd->add_option("--out", nas_out, "output directory")->required();
  nas_cmd->callback(
      [&] { cmd_nas(nas_train, nas_val, nas_trials, nas_epochs, nas_seed, nas_parallel, nas_out); });

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "classification report of a model on a CSV");
  std::string eval_model, eval_data, eval_out;
  eval->add_option("--model", eval_model, "model JSON")->required();
  eval->add_option("--data", eval_data, "feature CSV")->required();
  auto* eval_out_opt = eval->add_option("--out", eval_out, "report path (default: stdout)");
  eval->callback([&] {
    cmd_evaluate(eval_model, eval_data,
                 eval_out_opt->count() ? std::optional<std::string>(eval_out) : std::nullopt);
  });

  // split
  auto* split = app.add_subcommand("split", "patient-wise train/val/test split");
  std::string split_data, split_out;
  double split_train = 0.70, split_val = 0.15, split_test = 0.15;
  std::uint64_t split_seed = 0;
  split->add_option("--data", split_data, "feature CSV")->required();
  split->add_option("--train-frac", split_train, "training fraction (default 0.70)");
  split->add_option("--val-frac", split_val, "validation fraction (default 0.15)");
  split->add_option("--test-frac", split_test, "test fraction (default 0.15)");
  split->add_option("--seed", split_seed, "split seed");
  split->add_option("--out", split_out, "output directory")->required();
  split->callback(
      [&] { cmd_split(split_data, split_train, split_val, split_test, split_seed, split_out); });

  // prep
  auto* prep = app.add_subcommand("prep", "batch radiograph preprocessing (binary PGM)");
  prep->require_subcommand(1);
  std::string prep_in, prep_out;
  double prep_margin = 1.15;
  struct PrepMode {
    const char* name;
    const char* help;
    imgprep::BatchOp op;
  };
  for (const PrepMode& mode :
       {PrepMode{"equalize", "histogram equalization", imgprep::BatchOp::equalize},
        PrepMode{"mirror", "horizontal mirroring", imgprep::BatchOp::mirror},
        PrepMode{"negatives", "detect and invert negatives", imgprep::BatchOp::negatives}}) {
    auto* sub = prep->add_subcommand(mode.name, mode.help);
    sub->add_option("--in", prep_in, "input directory of .pgm files")->required();
    sub->add_option("--out", prep_out, "output directory")->required();
    if (mode.op == imgprep::BatchOp::negatives) {
      sub->add_option("--margin", prep_margin, "border/center brightness ratio (default 1.15)");
    }
    const imgprep::BatchOp op = mode.op;
    sub->callback([&, op] { cmd_prep(op, prep_in, prep_out, prep_margin); });
  }

  // synth-blobs
  auto* blobs = app.add_subcommand("synth-blobs", "separable Gaussian-blob feature CSV");
  std::size_t blob_samples = 500, blob_features = 62, blob_classes = 5, blob_patients = 50;
  std::uint64_t blob_seed = 0;
  std::string blob_out;
  blobs->add_option("--samples", blob_samples, "sample count (default 500)");
  blobs->add_option("--features", blob_features, "feature count (default 62)");
  blobs->add_option("--classes", blob_classes, "class count (default 5)");
  blobs->add_option("--patients", blob_patients, "patient count (default 50)");
  blobs->add_option("--seed", blob_seed, "generator seed");
  blobs->add_option("--out", blob_out, "output CSV path")->required();
  blobs->callback([&] {
    cmd_synth_blobs(blob_samples, blob_features, blob_classes, blob_patients, blob_seed, blob_out);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
