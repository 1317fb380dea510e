#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "headsmith/data.hpp"
#include "headsmith/nnet.hpp"
#include "headsmith/rng.hpp"

namespace headsmith::nas {

// Seeded uniform random search over a dense-network grammar. Every sampled
// point expands to input -> encoding -> [normalization] -> blocks -> head,
// where each block is dense(units) -> [batch_norm] -> relu -> [dropout].

struct SearchSpace {
  std::vector<bool> use_normalization{false, true};
  std::vector<std::size_t> num_blocks{1, 2, 3};
  std::vector<std::size_t> units{16, 32, 64, 128, 256, 512, 1024};
  std::vector<bool> use_batch_norm{false, true};
  std::vector<double> dropout_rates{0.0, 0.25, 0.5};
  std::vector<double> learning_rates{1e-2, 1e-3, 1e-4};

  void validate() const;  // non-empty choice lists, sane ranges
};

// One uniform draw per decision, in a fixed order (normalization, block
// count, then units/batch-norm/dropout per block), so a given rng state maps
// to exactly one architecture.
nnet::ArchitectureSpec sample_architecture(const SearchSpace& space, std::size_t input_width,
                                           std::size_t num_classes, SplitMix64& rng);

struct TrialRecord {
  std::size_t trial_index = 0;
  nnet::ArchitectureSpec architecture;
  nnet::TrainConfig config;
  std::uint64_t seed = 0;  // the trial's training seed
  double val_accuracy = 0.0;
  std::size_t epochs_run = 0;
  double wall_time = 0.0;  // seconds; the only nondeterministic field
};

struct SearchResult {
  std::vector<TrialRecord> trials;
  std::size_t best_trial_index = 0;
  nnet::TrainedModel best_model;
  nnet::TrainHistory best_history;
};

struct SearchOptions {
  std::size_t max_trials = 55;
  std::size_t max_epochs = 25;
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;       // worker threads for trials
  std::size_t stop_after_stale = 0;  // >0: stop after N non-improving trials (forces serial)
};

// Argmax over val_accuracy; equal scores resolve to the lowest trial index.
std::size_t select_best(const std::vector<TrialRecord>& trials);

// Runs up to max_trials independent trials, each training a sampled
// architecture for up to max_epochs. Trial t derives all of its randomness
// from mix_seed(seed, t), so results are identical however many workers run.
SearchResult search(const FeatureMatrix& train, const FeatureMatrix& val,
                    const SearchSpace& space, const SearchOptions& options);

// One JSON object per line, in trial order.
std::string trials_jsonl(const std::vector<TrialRecord>& trials);

// Three-column markdown table (Layer Type / Output Shape / Parameter Count)
// for the winning architecture; zero-parameter rows show "-".
std::string export_architecture(const SearchResult& result);

}  // namespace headsmith::nas
