#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "headsmith/common.hpp"
#include "headsmith/data.hpp"
#include "headsmith/nas.hpp"
#include "headsmith/nnet.hpp"
#include "headsmith/rng.hpp"

using namespace headsmith;
using nas::SearchOptions;
using nas::SearchResult;
using nas::SearchSpace;
using nas::TrialRecord;
using nnet::ArchitectureSpec;
using nnet::LayerKind;
using nnet::LayerSpec;

namespace {

template <typename T>
bool contains(const std::vector<T>& choices, const T& value) {
  return std::find(choices.begin(), choices.end(), value) != choices.end();
}

// Walks a sampled stack and checks that every decision came from the space:
// input -> encoding -> [normalization] -> blocks -> head, with each block
// being dense -> [batch_norm] -> relu -> [dropout > 0].
void check_sampled_structure(const ArchitectureSpec& spec, const SearchSpace& space,
                             std::size_t input_width, std::size_t num_classes) {
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.input_width == input_width);
  CHECK(spec.num_classes == num_classes);
  const auto& layers = spec.layers;
  REQUIRE(layers.size() >= 5);
  REQUIRE(layers[0].kind == LayerKind::input);
  REQUIRE(layers[1].kind == LayerKind::multi_category_encoding);

  std::size_t i = 2;
  if (layers[i].kind == LayerKind::normalization) ++i;
  std::size_t blocks = 0;
  while (i < layers.size() - 2) {
    REQUIRE(layers[i].kind == LayerKind::dense);
    CHECK(contains(space.units, layers[i].units));
    ++i;
    if (layers[i].kind == LayerKind::batch_norm) ++i;
    REQUIRE(layers[i].kind == LayerKind::relu);
    ++i;
    if (i < layers.size() - 2 && layers[i].kind == LayerKind::dropout) {
      CHECK(contains(space.dropout_rates, layers[i].dropout_rate));
      CHECK(layers[i].dropout_rate > 0.0);
      ++i;
    }
    ++blocks;
  }
  CHECK(contains(space.num_blocks, blocks));
  REQUIRE(layers[i].kind == LayerKind::dense);
  CHECK(layers[i].units == num_classes);
  CHECK(layers[i + 1].kind == LayerKind::softmax);
}

struct BlobSplits {
  FeatureMatrix train, val;
};

BlobSplits small_blob_splits(std::size_t total, std::size_t train_count, std::size_t features,
                             std::size_t classes, std::uint64_t seed) {
  const FeatureMatrix blobs = make_blobs(total, features, classes, classes * 3, seed);
  std::vector<std::size_t> head(train_count), tail(total - train_count);
  for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
  for (std::size_t i = 0; i < tail.size(); ++i) tail[i] = train_count + i;
  return {blobs.select_rows(head), blobs.select_rows(tail)};
}

// Everything except the timing field, which legitimately differs across runs.
void check_trials_equal(const std::vector<TrialRecord>& a, const std::vector<TrialRecord>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].trial_index == b[i].trial_index);
    CHECK(a[i].architecture == b[i].architecture);
    CHECK(a[i].config == b[i].config);
    CHECK(a[i].seed == b[i].seed);
    CHECK(a[i].val_accuracy == b[i].val_accuracy);
    CHECK(a[i].epochs_run == b[i].epochs_run);
  }
}

TrialRecord stub_trial(std::size_t index, double val_accuracy) {
  TrialRecord trial;
  trial.trial_index = index;
  trial.val_accuracy = val_accuracy;
  return trial;
}

SearchSpace tiny_space() {
  SearchSpace space;
  space.units = {4, 8};
  space.num_blocks = {1, 2};
  space.dropout_rates = {0.0, 0.25};
  space.learning_rates = {1e-2, 1e-3};
  return space;
}

}  // namespace

TEST_CASE("search space validation") {
  CHECK_NOTHROW(SearchSpace{}.validate());

  SearchSpace empty_units;
  empty_units.units.clear();
  CHECK_THROWS_AS(empty_units.validate(), std::invalid_argument);

  SearchSpace zero_unit;
  zero_unit.units = {0};
  CHECK_THROWS_AS(zero_unit.validate(), std::invalid_argument);

  SearchSpace bad_rate;
  bad_rate.dropout_rates = {1.0};
  CHECK_THROWS_AS(bad_rate.validate(), std::invalid_argument);

  SearchSpace bad_lr;
  bad_lr.learning_rates = {0.0};
  CHECK_THROWS_AS(bad_lr.validate(), std::invalid_argument);

  SearchSpace no_blocks;
  no_blocks.num_blocks = {0};
  CHECK_THROWS_AS(no_blocks.validate(), std::invalid_argument);
}

TEST_CASE("sampling is a pure function of the rng state") {
  const SearchSpace space;
  SplitMix64 a(2024), b(2024);
  for (int i = 0; i < 20; ++i) {
    CHECK(nas::sample_architecture(space, 62, 5, a) ==
          nas::sample_architecture(space, 62, 5, b));
  }
}

TEST_CASE("1000 sampled architectures are valid and drawn from the space") {
  const SearchSpace space;
  std::set<std::size_t> block_counts_seen;
  std::set<std::size_t> units_seen;
  bool norm_seen = false, no_norm_seen = false, bn_seen = false, dropout_seen = false;

  for (std::uint64_t i = 0; i < 1000; ++i) {
    SplitMix64 rng(mix_seed(1234, i));
    const ArchitectureSpec spec = nas::sample_architecture(space, 62, 5, rng);
    check_sampled_structure(spec, space, 62, 5);

    std::size_t blocks = 0;
    bool has_norm = false;
    for (const LayerSpec& layer : spec.layers) {
      if (layer.kind == LayerKind::normalization) has_norm = true;
      if (layer.kind == LayerKind::batch_norm) bn_seen = true;
      if (layer.kind == LayerKind::dropout) dropout_seen = true;
      if (layer.kind == LayerKind::dense && layer.units != 5) {
        ++blocks;
        units_seen.insert(layer.units);
      }
    }
    block_counts_seen.insert(blocks);
    (has_norm ? norm_seen : no_norm_seen) = true;
  }

  CHECK(block_counts_seen == std::set<std::size_t>{1, 2, 3});
  CHECK(units_seen == std::set<std::size_t>{16, 32, 64, 128, 256, 512, 1024});
  CHECK(norm_seen);
  CHECK(no_norm_seen);
  CHECK(bn_seen);
  CHECK(dropout_seen);
}

TEST_CASE("sampling rejects degenerate problems") {
  const SearchSpace space;
  SplitMix64 rng(1);
  CHECK_THROWS_AS(nas::sample_architecture(space, 0, 5, rng), std::invalid_argument);
  CHECK_THROWS_AS(nas::sample_architecture(space, 10, 1, rng), std::invalid_argument);
}

TEST_CASE("the search runs exactly its trial budget, in index order") {
  const BlobSplits data = small_blob_splits(60, 40, 4, 3, 17);
  SearchOptions options;
  options.max_trials = 5;
  options.max_epochs = 2;
  options.seed = 9;

  const SearchResult result = nas::search(data.train, data.val, tiny_space(), options);
  REQUIRE(result.trials.size() == 5);
  for (std::size_t i = 0; i < result.trials.size(); ++i) {
    CHECK(result.trials[i].trial_index == i);
    CHECK(result.trials[i].epochs_run >= 1);
    CHECK(result.trials[i].epochs_run <= 2);
    CHECK(result.trials[i].config.max_epochs == 2);
    CHECK(contains(tiny_space().learning_rates, result.trials[i].config.learning_rate));
  }

  // the recorded score is the returned model's validation accuracy
  const TrialRecord& best = result.trials[result.best_trial_index];
  CHECK(nnet::accuracy(result.best_model, data.val) == best.val_accuracy);
  CHECK(result.best_model.spec == best.architecture);
  CHECK(result.best_history.size() == best.epochs_run);
}

TEST_CASE("identical seeds give identical searches") {
  const BlobSplits data = small_blob_splits(60, 40, 4, 3, 23);
  SearchOptions options;
  options.max_trials = 4;
  options.max_epochs = 2;
  options.seed = 31;

  const SearchResult a = nas::search(data.train, data.val, tiny_space(), options);
  const SearchResult b = nas::search(data.train, data.val, tiny_space(), options);
  check_trials_equal(a.trials, b.trials);
  CHECK(a.best_trial_index == b.best_trial_index);
  CHECK(a.best_model == b.best_model);

  options.seed = 32;  // a different seed explores differently
  const SearchResult c = nas::search(data.train, data.val, tiny_space(), options);
  bool any_difference = a.trials.size() != c.trials.size();
  for (std::size_t i = 0; !any_difference && i < a.trials.size(); ++i) {
    any_difference = !(a.trials[i].architecture == c.trials[i].architecture) ||
                     a.trials[i].seed != c.trials[i].seed;
  }
  CHECK(any_difference);
}

TEST_CASE("parallel workers reproduce the serial search bit for bit") {
  const BlobSplits data = small_blob_splits(60, 40, 4, 3, 29);
  SearchOptions options;
  options.max_trials = 6;
  options.max_epochs = 3;
  options.seed = 77;
  options.parallelism = 1;

  const SearchResult serial = nas::search(data.train, data.val, tiny_space(), options);
  options.parallelism = 4;
  const SearchResult parallel = nas::search(data.train, data.val, tiny_space(), options);

  check_trials_equal(serial.trials, parallel.trials);
  CHECK(serial.best_trial_index == parallel.best_trial_index);
  CHECK(serial.best_model == parallel.best_model);
  REQUIRE(serial.best_history.size() == parallel.best_history.size());
  for (std::size_t i = 0; i < serial.best_history.size(); ++i) {
    CHECK(serial.best_history[i].train_loss == parallel.best_history[i].train_loss);
    CHECK(serial.best_history[i].val_accuracy == parallel.best_history[i].val_accuracy);
  }
}

TEST_CASE("stale-trial stopping truncates exactly like a serial replay") {
  const BlobSplits data = small_blob_splits(60, 40, 4, 3, 41);
  SearchOptions options;
  options.max_trials = 8;
  options.max_epochs = 2;
  options.seed = 13;

  const SearchResult full = nas::search(data.train, data.val, tiny_space(), options);
  REQUIRE(full.trials.size() == 8);

  for (std::size_t stale_budget : {std::size_t{1}, std::size_t{2}, std::size_t{3}}) {
    double best = -1.0;
    std::size_t stale = 0;
    std::size_t expected = full.trials.size();
    for (std::size_t i = 0; i < full.trials.size(); ++i) {
      if (full.trials[i].val_accuracy > best) {
        best = full.trials[i].val_accuracy;
        stale = 0;
      } else if (++stale >= stale_budget) {
        expected = i + 1;
        break;
      }
    }

    options.stop_after_stale = stale_budget;
    const SearchResult stopped = nas::search(data.train, data.val, tiny_space(), options);
    REQUIRE(stopped.trials.size() == expected);
    check_trials_equal(stopped.trials,
                       std::vector<TrialRecord>(full.trials.begin(),
                                                full.trials.begin() +
                                                    static_cast<long>(expected)));
  }
}

TEST_CASE("best-trial selection breaks ties toward the lower index") {
  CHECK(nas::select_best({stub_trial(0, 0.5), stub_trial(1, 0.9), stub_trial(2, 0.9),
                          stub_trial(3, 0.3)}) == 1);
  CHECK(nas::select_best({stub_trial(0, 0.7), stub_trial(1, 0.7), stub_trial(2, 0.7)}) == 0);
  // the returned value is the trial's own index, not its list position
  CHECK(nas::select_best({stub_trial(3, 0.2), stub_trial(7, 0.9)}) == 7);
  CHECK(nas::select_best({stub_trial(3, 0.9), stub_trial(7, 0.9)}) == 3);
  CHECK_THROWS_AS(nas::select_best({}), std::invalid_argument);
}

TEST_CASE("trial records serialize as one JSON object per line") {
  const BlobSplits data = small_blob_splits(40, 28, 4, 2, 3);
  SearchOptions options;
  options.max_trials = 3;
  options.max_epochs = 2;
  options.seed = 1;
  const SearchResult result = nas::search(data.train, data.val, tiny_space(), options);

  const std::string text = nas::trials_jsonl(result.trials);
  std::istringstream lines(text);
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const nlohmann::json parsed = nlohmann::json::parse(line);
    const TrialRecord& trial = result.trials[count];
    CHECK(parsed.at("trial_index").get<std::size_t>() == trial.trial_index);
    CHECK(parsed.at("seed").get<std::uint64_t>() == trial.seed);
    CHECK(parsed.at("val_accuracy").get<double>() == trial.val_accuracy);
    CHECK(parsed.at("epochs_run").get<std::size_t>() == trial.epochs_run);
    CHECK(parsed.at("config").at("learning_rate").get<double>() ==
          trial.config.learning_rate);
    CHECK(parsed.at("architecture").is_array());
    CHECK(parsed.at("wall_time").get<double>() >= 0.0);
    // deterministic key order so reruns diff cleanly
    CHECK(line.rfind("{\"trial_index\":", 0) == 0);
    ++count;
  }
  CHECK(count == result.trials.size());
  CHECK(nas::trials_jsonl({}).empty());
}

TEST_CASE("the winning architecture exports as a three-column table") {
  TrialRecord trial;
  trial.trial_index = 5;  // non-positional on purpose
  trial.val_accuracy = 0.9;
  trial.architecture.input_width = 62;
  trial.architecture.num_classes = 5;
  trial.architecture.layers = {
      LayerSpec::input(),      LayerSpec::encoding(),    LayerSpec::dense(128),
      LayerSpec::relu(),       LayerSpec::dropout(0.25), LayerSpec::dense(16),
      LayerSpec::relu(),       LayerSpec::dropout(0.25), LayerSpec::dense(32),
      LayerSpec::relu(),       LayerSpec::dropout(0.25), LayerSpec::dense(5),
      LayerSpec::softmax()};

  SearchResult result;
  result.trials = {stub_trial(4, 0.1), trial};
  result.best_trial_index = 5;

  CHECK(nas::export_architecture(result) ==
        "| Layer Type | Output Shape | Parameter Count |\n"
        "| --- | --- | --- |\n"
        "| Input Layer | 62 | - |\n"
        "| Multi Category Encoding | 62 | - |\n"
        "| Dense Layer | 128 | 8064 |\n"
        "| ReLU Activation | 128 | - |\n"
        "| Dropout | 128 | - |\n"
        "| Dense Layer | 16 | 2064 |\n"
        "| ReLU Activation | 16 | - |\n"
        "| Dropout | 16 | - |\n"
        "| Dense Layer | 32 | 544 |\n"
        "| ReLU Activation | 32 | - |\n"
        "| Dropout | 32 | - |\n"
        "| Dense Layer | 5 | 165 |\n"
        "| Softmax Activation | 5 | - |\n");

  result.best_trial_index = 99;
  CHECK_THROWS_AS(nas::export_architecture(result), std::invalid_argument);
}

TEST_CASE("search rejects unusable inputs") {
  const BlobSplits data = small_blob_splits(40, 28, 4, 2, 5);
  SearchOptions options;
  options.max_trials = 2;
  options.max_epochs = 1;

  SearchOptions no_budget = options;
  no_budget.max_trials = 0;
  CHECK_THROWS_AS(nas::search(data.train, data.val, tiny_space(), no_budget),
                  std::invalid_argument);

  FeatureMatrix empty;
  CHECK_THROWS_AS(nas::search(empty, data.val, tiny_space(), options), std::invalid_argument);
  CHECK_THROWS_AS(nas::search(data.train, empty, tiny_space(), options),
                  std::invalid_argument);

  FeatureMatrix narrow = data.val;
  narrow.values = Matrix(narrow.values.rows(), 2, 0.0);
  CHECK_THROWS_AS(nas::search(data.train, narrow, tiny_space(), options), ShapeError);

  FeatureMatrix one_class = data.train;
  std::fill(one_class.labels.begin(), one_class.labels.end(), 0);
  CHECK_THROWS_AS(nas::search(one_class, data.val, tiny_space(), options), DataError);

  FeatureMatrix stray_label = data.val;
  stray_label.labels[0] = 2;  // not a class the training split knows
  CHECK_THROWS_AS(nas::search(data.train, stray_label, tiny_space(), options), DataError);
}
