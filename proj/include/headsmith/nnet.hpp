#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "headsmith/common.hpp"
#include "headsmith/data.hpp"
#include "headsmith/rng.hpp"

namespace headsmith::nnet {

// Feed-forward engine sufficient to train any head from the dense-network
// grammar: dense / relu / batch_norm / dropout / softmax plus the two
// passthrough input stages and a fixed-statistics normalization layer.

enum class LayerKind {
  input,
  multi_category_encoding,
  normalization,
  dense,
  relu,
  batch_norm,
  dropout,
  softmax,
};

const char* layer_kind_name(LayerKind kind);     // JSON token, e.g. "batch_norm"
const char* layer_display_name(LayerKind kind);  // table label, e.g. "Batch Normalization"
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
  LayerKind kind = LayerKind::input;
  std::size_t units = 0;       // dense only
  double dropout_rate = 0.0;   // dropout only

  static LayerSpec input() { return {LayerKind::input}; }
  static LayerSpec encoding() { return {LayerKind::multi_category_encoding}; }
  static LayerSpec normalization() { return {LayerKind::normalization}; }
  static LayerSpec dense(std::size_t units) { return {LayerKind::dense, units}; }
  static LayerSpec relu() { return {LayerKind::relu}; }
  static LayerSpec batch_norm() { return {LayerKind::batch_norm}; }
  static LayerSpec dropout(double rate) { return {LayerKind::dropout, 0, rate}; }
  static LayerSpec softmax() { return {LayerKind::softmax}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchitectureSpec {
  std::vector<LayerSpec> layers;
  std::size_t input_width = 0;
  std::size_t num_classes = 0;

  // Grammar checks: input first, dense(num_classes)+softmax last, dense
  // units >= 1, dropout rate in [0,1), at most one normalization layer and
  // only ahead of the first trainable/activation layer.
  void validate() const;

  // Output width after each layer (only dense changes the width).
  std::vector<std::size_t> output_widths() const;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

struct LayerParamCount {
  LayerKind kind;
  std::size_t output_width = 0;
  std::size_t params = 0;
};

struct ParamCountReport {
  std::vector<LayerParamCount> per_layer;
  std::size_t total = 0;
};

// dense(in->out) = (in+1)*out, batch_norm(u) = 4u, normalization(w) = 2w+1,
// everything else 0.
ParamCountReport param_count(const ArchitectureSpec& spec);

struct TrainConfig {
  std::size_t max_epochs = 25;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t patience = 5;  // early stopping on validation accuracy

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct DenseParams {
  Matrix w;               // out x in, row-major
  std::vector<double> b;  // out
  friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

struct BatchNormState {
  std::vector<double> gamma, beta, moving_mean, moving_var;
  friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

struct NormalizationState {
  std::vector<double> mean, var;
  std::size_t count = 0;
  friend bool operator==(const NormalizationState&, const NormalizationState&) = default;
};

struct TrainedModel {
  ArchitectureSpec spec;
  std::vector<DenseParams> dense;          // one per dense layer, in layer order
  std::vector<BatchNormState> batch_norm;  // one per batch_norm layer, in layer order
  NormalizationState normalization;        // populated iff spec has the layer
  TrainConfig config;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static TrainedModel from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static TrainedModel load(const std::filesystem::path& path);

  friend bool operator==(const TrainedModel&, const TrainedModel&) = default;
};

// Seeded model with untrained weights: dense W ~ U(+-sqrt(6/(fan_in+fan_out)))
// drawn row-major in layer order, zero biases, batch-norm gamma=1 beta=0
// moving mean=0 var=1. Normalization statistics are fit from `train_inputs`
// when the spec has that layer.
TrainedModel init_model(const ArchitectureSpec& spec, const TrainConfig& config,
                        std::uint64_t seed, const Matrix* train_inputs = nullptr);

enum class Mode { train, infer };

// Inference-mode forward: dropout is identity, batch norm uses moving
// statistics. Pure function; rows of the result sum to 1.
Matrix forward(const TrainedModel& model, const Matrix& batch);

// Mode-selectable forward. Train mode applies dropout masks drawn from `rng`
// (required when the spec has dropout with rate > 0), normalizes by batch
// statistics and updates the model's moving statistics in place.
Matrix forward(TrainedModel& model, const Matrix& batch, Mode mode, SplitMix64* rng = nullptr);

std::vector<int> predict(const TrainedModel& model, const Matrix& batch);
double accuracy(const TrainedModel& model, const FeatureMatrix& data);

// Mean categorical cross-entropy of probability rows against integer labels.
double cross_entropy(const Matrix& probs, const std::vector<int>& labels);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};
using TrainHistory = std::vector<EpochStats>;

std::string history_csv(const TrainHistory& history);

struct TrainResult {
  TrainedModel model;
  TrainHistory history;
};

// Trains with Adam and categorical cross-entropy; shuffles per epoch; stops
// when validation accuracy has not improved for `patience` consecutive
// epochs; returns the weights of the best validation epoch. Deterministic
// given the seed.
TrainResult train(const ArchitectureSpec& spec, const FeatureMatrix& train_set,
                  const FeatureMatrix& val_set, const TrainConfig& config,
                  std::uint64_t seed);

// ---- training internals, exposed for gradient checking ----

struct DropoutMasks {
  std::vector<Matrix> masks;  // one per dropout layer; entries 0 or 1/(1-rate)
};

DropoutMasks draw_dropout_masks(const ArchitectureSpec& spec, std::size_t batch_rows,
                                SplitMix64& rng);

// Train-mode loss with fixed dropout masks; does not touch moving statistics.
double training_loss(const TrainedModel& model, const Matrix& batch,
                     const std::vector<int>& labels, const DropoutMasks& masks);

struct BatchNormGrads {
  std::vector<double> dgamma, dbeta;
};

struct Gradients {
  std::vector<DenseParams> dense;      // dW, db per dense layer
  std::vector<BatchNormGrads> batch_norm;
  Matrix input;                        // dL/dx for the batch
  double loss = 0.0;
};

Gradients backprop(const TrainedModel& model, const Matrix& batch,
                   const std::vector<int>& labels, const DropoutMasks& masks);

// ---- compound scaling ----

struct ScaledDims {
  long long depth = 0;
  long long width = 0;
  long long resolution = 0;
  friend bool operator==(const ScaledDims&, const ScaledDims&) = default;
};

// (d, w, r) = round(alpha^phi * d0, beta^phi * w0, gamma^phi * r0), each
// rounded half away from zero and clamped to >= 1.
ScaledDims compound_scale(double d0, double w0, double r0,
                          double alpha, double beta, double gamma, double phi);

}  // namespace headsmith::nnet
