#include "headsmith/nas.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "headsmith/common.hpp"
#include "headsmith/detail/model_json.hpp"

namespace headsmith::nas {

using json = nlohmann::ordered_json;

void SearchSpace::validate() const {
  if (use_normalization.empty() || num_blocks.empty() || units.empty() ||
      use_batch_norm.empty() || dropout_rates.empty() || learning_rates.empty()) {
    throw std::invalid_argument("search space has an empty choice list");
  }
  for (std::size_t blocks : num_blocks) {
    if (blocks == 0) throw std::invalid_argument("block count choices must be >= 1");
  }
  for (std::size_t u : units) {
    if (u == 0) throw std::invalid_argument("unit choices must be >= 1");
  }
  for (double rate : dropout_rates) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout choices must lie in [0, 1)");
  }
  for (double lr : learning_rates) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning-rate choices must be positive");
  }
}

namespace {

template <typename T>
T pick(const std::vector<T>& choices, SplitMix64& rng) {
  return choices[rng.next_below(choices.size())];
}

}  // namespace

nnet::ArchitectureSpec sample_architecture(const SearchSpace& space, std::size_t input_width,
                                           std::size_t num_classes, SplitMix64& rng) {
  space.validate();
  if (input_width == 0) throw std::invalid_argument("input width must be positive");
  if (num_classes < 2) throw std::invalid_argument("need at least two classes");

  nnet::ArchitectureSpec spec;
  spec.input_width = input_width;
  spec.num_classes = num_classes;
  spec.layers.push_back(nnet::LayerSpec::input());
  spec.layers.push_back(nnet::LayerSpec::encoding());

  if (pick(space.use_normalization, rng)) {
    spec.layers.push_back(nnet::LayerSpec::normalization());
  }
  const std::size_t blocks = pick(space.num_blocks, rng);
  for (std::size_t b = 0; b < blocks; ++b) {
    spec.layers.push_back(nnet::LayerSpec::dense(pick(space.units, rng)));
    if (pick(space.use_batch_norm, rng)) {
      spec.layers.push_back(nnet::LayerSpec::batch_norm());
    }
    spec.layers.push_back(nnet::LayerSpec::relu());
    const double rate = pick(space.dropout_rates, rng);
    if (rate > 0.0) {
      spec.layers.push_back(nnet::LayerSpec::dropout(rate));
    }
  }
  spec.layers.push_back(nnet::LayerSpec::dense(num_classes));
  spec.layers.push_back(nnet::LayerSpec::softmax());
  spec.validate();
  return spec;
}

std::size_t select_best(const std::vector<TrialRecord>& trials) {
  if (trials.empty()) throw std::invalid_argument("no trials to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < trials.size(); ++i) {
    if (trials[i].val_accuracy > trials[best].val_accuracy) best = i;
  }
  return trials[best].trial_index;
}

namespace {

struct TrialOutput {
  TrialRecord record;
  nnet::TrainedModel model;
  nnet::TrainHistory history;
};

TrialOutput run_trial(std::size_t index, const FeatureMatrix& train, const FeatureMatrix& val,
                      const SearchSpace& space, const SearchOptions& options,
                      std::size_t num_classes) {
  const auto started = std::chrono::steady_clock::now();

  SplitMix64 rng(mix_seed(options.seed, index));
  nnet::ArchitectureSpec spec =
      sample_architecture(space, train.values.cols(), num_classes, rng);
  nnet::TrainConfig config;
  config.max_epochs = options.max_epochs;
  config.learning_rate = pick(space.learning_rates, rng);
  const std::uint64_t train_seed = rng.next();

  nnet::TrainResult trained = nnet::train(spec, train, val, config, train_seed);

  TrialOutput out;
  out.record.trial_index = index;
  out.record.architecture = std::move(spec);
  out.record.config = config;
  out.record.seed = train_seed;
  // Score the returned model (best-epoch weights), not the last epoch.
  out.record.val_accuracy = nnet::accuracy(trained.model, val);
  out.record.epochs_run = trained.history.size();
  out.record.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  out.model = std::move(trained.model);
  out.history = std::move(trained.history);
  return out;
}

}  // namespace

SearchResult search(const FeatureMatrix& train, const FeatureMatrix& val,
                    const SearchSpace& space, const SearchOptions& options) {
  space.validate();
  if (options.max_trials == 0) throw std::invalid_argument("trial budget must be >= 1");
  if (train.num_samples() == 0) throw std::invalid_argument("empty training split");
  if (val.num_samples() == 0) throw std::invalid_argument("empty validation split");
  if (train.num_features() != val.num_features()) {
    throw ShapeError("training and validation widths differ");
  }
  const int num_classes = train.num_classes();
  if (num_classes < 2) throw DataError("training split must contain at least two classes");
  for (int label : val.labels) {
    if (label < 0 || label >= num_classes) {
      throw DataError("validation label outside the training class set");
    }
  }

  const std::size_t n = options.max_trials;
  std::vector<TrialOutput> outputs;

  if (options.stop_after_stale > 0) {
    // Stopping depends on earlier trials' scores, so run strictly in order.
    double best_acc = -1.0;
    std::size_t stale = 0;
    for (std::size_t t = 0; t < n; ++t) {
      outputs.push_back(run_trial(t, train, val, space, options,
                                  static_cast<std::size_t>(num_classes)));
      const double acc = outputs.back().record.val_accuracy;
      if (acc > best_acc) {
        best_acc = acc;
        stale = 0;
      } else if (++stale >= options.stop_after_stale) {
        break;
      }
    }
  } else {
    outputs.resize(n);
    const std::size_t workers = std::max<std::size_t>(1, std::min(options.parallelism, n));
    if (workers == 1) {
      for (std::size_t t = 0; t < n; ++t) {
        outputs[t] = run_trial(t, train, val, space, options,
                               static_cast<std::size_t>(num_classes));
      }
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      std::vector<std::exception_ptr> errors(workers);
      pool.reserve(workers);
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t t = next.fetch_add(1); t < n; t = next.fetch_add(1)) {
              outputs[t] = run_trial(t, train, val, space, options,
                                     static_cast<std::size_t>(num_classes));
            }
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
      for (std::thread& worker : pool) worker.join();
      for (const std::exception_ptr& err : errors) {
        if (err) std::rethrow_exception(err);
      }
    }
  }

  SearchResult result;
  result.trials.reserve(outputs.size());
  for (TrialOutput& out : outputs) result.trials.push_back(out.record);
  result.best_trial_index = select_best(result.trials);
  result.best_model = std::move(outputs[result.best_trial_index].model);
  result.best_history = std::move(outputs[result.best_trial_index].history);
  return result;
}

std::string trials_jsonl(const std::vector<TrialRecord>& trials) {
  std::string out;
  for (const TrialRecord& trial : trials) {
    json line;
    line["trial_index"] = trial.trial_index;
    line["architecture"] = nnet::detail::spec_to_json(trial.architecture);
    line["config"] = {{"max_epochs", trial.config.max_epochs},
                      {"batch_size", trial.config.batch_size},
                      {"learning_rate", trial.config.learning_rate},
                      {"patience", trial.config.patience}};
    line["seed"] = trial.seed;
    line["val_accuracy"] = trial.val_accuracy;
    line["epochs_run"] = trial.epochs_run;
    line["wall_time"] = trial.wall_time;
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::string export_architecture(const SearchResult& result) {
  const TrialRecord* best = nullptr;
  for (const TrialRecord& trial : result.trials) {
    if (trial.trial_index == result.best_trial_index) {
      best = &trial;
      break;
    }
  }
  if (best == nullptr) throw std::invalid_argument("best trial index not present in trial list");
  const nnet::ParamCountReport report = nnet::param_count(best->architecture);
  std::string out = "| Layer Type | Output Shape | Parameter Count |\n";
  out += "| --- | --- | --- |\n";
  for (const nnet::LayerParamCount& row : report.per_layer) {
    out += "| ";
    out += nnet::layer_display_name(row.kind);
    out += " | " + std::to_string(row.output_width) + " | ";
    out += row.params == 0 ? std::string("-") : std::to_string(row.params);
    out += " |\n";
  }
  return out;
}

}  // namespace headsmith::nas
