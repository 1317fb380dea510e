#include "headsmith/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "headsmith/detail/model_json.hpp"
#include "headsmith/kernels.hpp"

namespace headsmith::nnet {

using json = nlohmann::ordered_json;

namespace {

constexpr double kBatchNormEps = 1e-3;
constexpr double kBatchNormMomentum = 0.99;
constexpr double kNormalizationEps = 1e-6;
constexpr double kProbFloor = 1e-300;  // keeps log() finite

// Matrix-shaped fronts for the raw-pointer kernels.

Matrix dense_forward_m(const Matrix& x, const DenseParams& p) {
  if (x.cols() != p.w.cols()) throw ShapeError("dense layer input width mismatch");
  Matrix y(x.rows(), p.w.rows());
  kernels::dense_forward(x.data(), p.w.data(), p.b.data(), y.data(), x.rows(), x.cols(),
                         p.w.rows());
  return y;
}

Matrix dense_backward_input_m(const Matrix& dy, const Matrix& w) {
  Matrix dx(dy.rows(), w.cols());
  kernels::dense_backward_input(dy.data(), w.data(), dx.data(), dy.rows(), w.cols(), w.rows());
  return dx;
}

Matrix dense_backward_weights_m(const Matrix& dy, const Matrix& x) {
  Matrix dw(dy.cols(), x.cols());
  kernels::dense_backward_weights(dy.data(), x.data(), dw.data(), dy.rows(), x.cols(), dy.cols());
  return dw;
}

std::vector<double> dense_backward_bias_m(const Matrix& dy) {
  std::vector<double> db(dy.cols());
  kernels::dense_backward_bias(dy.data(), db.data(), dy.rows(), dy.cols());
  return db;
}

std::pair<std::vector<double>, std::vector<double>> column_stats(const Matrix& x) {
  std::vector<double> mean(x.cols()), var(x.cols());
  kernels::column_mean_var(x.data(), x.rows(), x.cols(), mean.data(), var.data());
  return {std::move(mean), std::move(var)};
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::input: return "input";
    case LayerKind::multi_category_encoding: return "multi_category_encoding";
    case LayerKind::normalization: return "normalization";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::dropout: return "dropout";
    case LayerKind::softmax: return "softmax";
  }
  throw std::invalid_argument("unknown layer kind");
}

const char* layer_display_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::input: return "Input Layer";
    case LayerKind::multi_category_encoding: return "Multi Category Encoding";
    case LayerKind::normalization: return "Normalization";
    case LayerKind::dense: return "Dense Layer";
    case LayerKind::relu: return "ReLU Activation";
    case LayerKind::batch_norm: return "Batch Normalization";
    case LayerKind::dropout: return "Dropout";
    case LayerKind::softmax: return "Softmax Activation";
  }
  throw std::invalid_argument("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
  for (LayerKind kind : {LayerKind::input, LayerKind::multi_category_encoding,
                         LayerKind::normalization, LayerKind::dense, LayerKind::relu,
                         LayerKind::batch_norm, LayerKind::dropout, LayerKind::softmax}) {
    if (name == layer_kind_name(kind)) return kind;
  }
  throw std::invalid_argument("unknown layer kind: " + name);
}

void ArchitectureSpec::validate() const {
  if (input_width == 0) throw std::invalid_argument("input width must be positive");
  if (num_classes == 0) throw std::invalid_argument("class count must be positive");
  if (layers.size() < 3) {
    throw std::invalid_argument("architecture needs at least input, dense and softmax layers");
  }
  if (layers.front().kind != LayerKind::input) {
    throw std::invalid_argument("first layer must be the input layer");
  }
  const LayerSpec& out_dense = layers[layers.size() - 2];
  if (out_dense.kind != LayerKind::dense || out_dense.units != num_classes) {
    throw std::invalid_argument("second-to-last layer must be a dense layer with one unit per class");
  }
  if (layers.back().kind != LayerKind::softmax) {
    throw std::invalid_argument("last layer must be softmax");
  }

  bool seen_trainable = false;  // anything past input/encoding
  std::size_t normalization_count = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    switch (layer.kind) {
      case LayerKind::input:
        if (i != 0) throw std::invalid_argument("input layer allowed only at position 0");
        break;
      case LayerKind::multi_category_encoding:
        if (seen_trainable) {
          throw std::invalid_argument("encoding layer must precede all processing layers");
        }
        break;
      case LayerKind::normalization:
        if (++normalization_count > 1) {
          throw std::invalid_argument("at most one normalization layer is allowed");
        }
        if (seen_trainable) {
          throw std::invalid_argument("normalization layer must precede all processing layers");
        }
        seen_trainable = true;
        break;
      case LayerKind::dense:
        if (layer.units == 0) throw std::invalid_argument("dense layer needs at least one unit");
        seen_trainable = true;
        break;
      case LayerKind::dropout:
        if (!(layer.dropout_rate >= 0.0 && layer.dropout_rate < 1.0)) {
          throw std::invalid_argument("dropout rate must lie in [0, 1)");
        }
        seen_trainable = true;
        break;
      case LayerKind::softmax:
        if (i + 1 != layers.size()) {
          throw std::invalid_argument("softmax allowed only as the final layer");
        }
        break;
      case LayerKind::relu:
      case LayerKind::batch_norm:
        seen_trainable = true;
        break;
    }
  }
}

std::vector<std::size_t> ArchitectureSpec::output_widths() const {
  std::vector<std::size_t> widths;
  widths.reserve(layers.size());
  std::size_t width = input_width;
  for (const LayerSpec& layer : layers) {
    if (layer.kind == LayerKind::dense) width = layer.units;
    widths.push_back(width);
  }
  return widths;
}

ParamCountReport param_count(const ArchitectureSpec& spec) {
  spec.validate();
  ParamCountReport report;
  std::size_t width = spec.input_width;
  for (const LayerSpec& layer : spec.layers) {
    std::size_t params = 0;
    switch (layer.kind) {
      case LayerKind::normalization:
        params = 2 * width + 1;  // mean, variance and the sample count
        break;
      case LayerKind::dense:
        params = (width + 1) * layer.units;
        width = layer.units;
        break;
      case LayerKind::batch_norm:
        params = 4 * width;  // gamma, beta, moving mean, moving variance
        break;
      default:
        break;
    }
    report.per_layer.push_back({layer.kind, width, params});
    report.total += params;
  }
  return report;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

TrainedModel init_model(const ArchitectureSpec& spec, const TrainConfig& config,
                        std::uint64_t seed, const Matrix* train_inputs) {
  spec.validate();
  config.validate();
  TrainedModel model;
  model.spec = spec;
  model.config = config;
  model.seed = seed;

  SplitMix64 rng(seed);
  std::size_t width = spec.input_width;
  for (const LayerSpec& layer : spec.layers) {
    if (layer.kind == LayerKind::dense) {
      DenseParams params;
      params.w = Matrix(layer.units, width);
      const double limit = std::sqrt(6.0 / static_cast<double>(width + layer.units));
      for (double& value : params.w.values()) value = rng.uniform(-limit, limit);
      params.b.assign(layer.units, 0.0);
      model.dense.push_back(std::move(params));
      width = layer.units;
    } else if (layer.kind == LayerKind::batch_norm) {
      BatchNormState state;
      state.gamma.assign(width, 1.0);
      state.beta.assign(width, 0.0);
      state.moving_mean.assign(width, 0.0);
      state.moving_var.assign(width, 1.0);
      model.batch_norm.push_back(std::move(state));
    } else if (layer.kind == LayerKind::normalization) {
      if (train_inputs == nullptr || train_inputs->rows() == 0) {
        throw std::invalid_argument("normalization layer needs training data to fit its statistics");
      }
      if (train_inputs->cols() != spec.input_width) {
        throw ShapeError("normalization statistics input width mismatch");
      }
      auto [mean, var] = column_stats(*train_inputs);
      model.normalization = {std::move(mean), std::move(var), train_inputs->rows()};
    }
  }
  return model;
}

namespace {

struct BnCache {
  std::vector<double> inv_std;  // 1/sqrt(var + eps)
  Matrix centered;              // x - mean (batch or moving, by mode)
};

struct ForwardCache {
  std::vector<Matrix> acts;  // acts[0] = batch, acts[i+1] = output of layer i
  std::vector<BnCache> bn;   // one per batch_norm layer
};

void apply_normalization(const NormalizationState& stats, Matrix& x) {
  const std::size_t cols = x.cols();
  if (stats.mean.size() != cols) throw ShapeError("normalization statistics width mismatch");
  std::vector<double> inv(cols);
  for (std::size_t c = 0; c < cols; ++c) inv[c] = 1.0 / std::sqrt(stats.var[c] + kNormalizationEps);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) x(r, c) = (x(r, c) - stats.mean[c]) * inv[c];
  }
}

void apply_softmax_rows(Matrix& x) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double max_z = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < x.cols(); ++c) max_z = std::max(max_z, x(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      x(r, c) = std::exp(x(r, c) - max_z);
      sum += x(r, c);
    }
    for (std::size_t c = 0; c < x.cols(); ++c) x(r, c) /= sum;
  }
}

// Train-mode forward with per-layer activations kept for backprop. When
// `update` is non-null its batch-norm moving statistics are refreshed.
ForwardCache forward_train_cached(const TrainedModel& model, const Matrix& batch,
                                  const DropoutMasks& masks, TrainedModel* update) {
  if (batch.rows() == 0) throw std::invalid_argument("empty batch");
  if (batch.cols() != model.spec.input_width) throw ShapeError("batch width mismatch");

  ForwardCache cache;
  cache.acts.reserve(model.spec.layers.size() + 1);
  cache.acts.push_back(batch);
  std::size_t dense_i = 0, bn_i = 0, drop_i = 0;

  for (const LayerSpec& layer : model.spec.layers) {
    Matrix x = cache.acts.back();  // copy; each slot keeps the layer input
    switch (layer.kind) {
      case LayerKind::input:
      case LayerKind::multi_category_encoding:
        break;
      case LayerKind::normalization:
        apply_normalization(model.normalization, x);
        break;
      case LayerKind::dense: {
        const DenseParams& p = model.dense[dense_i++];
        x = dense_forward_m(x, p);
        break;
      }
      case LayerKind::relu:
        for (double& v : x.values()) v = std::max(v, 0.0);
        break;
      case LayerKind::batch_norm: {
        const BatchNormState& state = model.batch_norm[bn_i];
        auto [mean, var] = column_stats(x);
        BnCache bc;
        bc.inv_std.resize(x.cols());
        for (std::size_t c = 0; c < x.cols(); ++c) {
          bc.inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEps);
        }
        bc.centered = Matrix(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          for (std::size_t c = 0; c < x.cols(); ++c) {
            bc.centered(r, c) = x(r, c) - mean[c];
            x(r, c) = state.gamma[c] * bc.centered(r, c) * bc.inv_std[c] + state.beta[c];
          }
        }
        if (update != nullptr) {
          BatchNormState& live = update->batch_norm[bn_i];
          for (std::size_t c = 0; c < x.cols(); ++c) {
            live.moving_mean[c] =
                kBatchNormMomentum * live.moving_mean[c] + (1.0 - kBatchNormMomentum) * mean[c];
            live.moving_var[c] =
                kBatchNormMomentum * live.moving_var[c] + (1.0 - kBatchNormMomentum) * var[c];
          }
        }
        cache.bn.push_back(std::move(bc));
        ++bn_i;
        break;
      }
      case LayerKind::dropout: {
        if (layer.dropout_rate > 0.0) {
          const Matrix& mask = masks.masks.at(drop_i);
          if (mask.rows() != x.rows() || mask.cols() != x.cols()) {
            throw ShapeError("dropout mask shape mismatch");
          }
          for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] *= mask.data()[i];
        }
        ++drop_i;
        break;
      }
      case LayerKind::softmax:
        apply_softmax_rows(x);
        break;
    }
    cache.acts.push_back(std::move(x));
  }
  return cache;
}

}  // namespace

Matrix forward(const TrainedModel& model, const Matrix& batch) {
  if (batch.rows() == 0) throw std::invalid_argument("empty batch");
  if (batch.cols() != model.spec.input_width) throw ShapeError("batch width mismatch");
  Matrix x = batch;
  std::size_t dense_i = 0, bn_i = 0;
  for (const LayerSpec& layer : model.spec.layers) {
    switch (layer.kind) {
      case LayerKind::input:
      case LayerKind::multi_category_encoding:
      case LayerKind::dropout:  // identity at inference
        break;
      case LayerKind::normalization:
        apply_normalization(model.normalization, x);
        break;
      case LayerKind::dense: {
        const DenseParams& p = model.dense[dense_i++];
        x = dense_forward_m(x, p);
        break;
      }
      case LayerKind::relu:
        for (double& v : x.values()) v = std::max(v, 0.0);
        break;
      case LayerKind::batch_norm: {
        const BatchNormState& s = model.batch_norm[bn_i++];
        for (std::size_t c = 0; c < x.cols(); ++c) {
          const double inv = 1.0 / std::sqrt(s.moving_var[c] + kBatchNormEps);
          for (std::size_t r = 0; r < x.rows(); ++r) {
            x(r, c) = s.gamma[c] * (x(r, c) - s.moving_mean[c]) * inv + s.beta[c];
          }
        }
        break;
      }
      case LayerKind::softmax:
        apply_softmax_rows(x);
        break;
    }
  }
  return x;
}

Matrix forward(TrainedModel& model, const Matrix& batch, Mode mode, SplitMix64* rng) {
  if (mode == Mode::infer) return forward(static_cast<const TrainedModel&>(model), batch);
  bool needs_rng = false;
  for (const LayerSpec& layer : model.spec.layers) {
    if (layer.kind == LayerKind::dropout && layer.dropout_rate > 0.0) needs_rng = true;
  }
  if (needs_rng && rng == nullptr) {
    throw std::invalid_argument("train-mode forward with dropout needs an RNG");
  }
  DropoutMasks masks;
  if (rng != nullptr) masks = draw_dropout_masks(model.spec, batch.rows(), *rng);
  ForwardCache cache = forward_train_cached(model, batch, masks, &model);
  return cache.acts.back();
}

std::vector<int> predict(const TrainedModel& model, const Matrix& batch) {
  Matrix probs = forward(model, batch);
  std::vector<int> labels(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c) {
      if (probs(r, c) > probs(r, best)) best = c;  // ties keep the lowest index
    }
    labels[r] = static_cast<int>(best);
  }
  return labels;
}

double accuracy(const TrainedModel& model, const FeatureMatrix& data) {
  if (data.values.rows() == 0) throw std::invalid_argument("accuracy of an empty dataset");
  std::vector<int> predicted = predict(model, data.values);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == data.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  if (probs.rows() != labels.size()) throw ShapeError("probability/label count mismatch");
  if (probs.rows() == 0) throw std::invalid_argument("empty batch");
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= probs.cols()) {
      throw std::invalid_argument("label out of range");
    }
    total += -std::log(std::max(probs(r, static_cast<std::size_t>(y)), kProbFloor));
  }
  return total / static_cast<double>(probs.rows());
}

DropoutMasks draw_dropout_masks(const ArchitectureSpec& spec, std::size_t batch_rows,
                                SplitMix64& rng) {
  DropoutMasks out;
  std::size_t width = spec.input_width;
  for (const LayerSpec& layer : spec.layers) {
    if (layer.kind == LayerKind::dense) width = layer.units;
    if (layer.kind != LayerKind::dropout) continue;
    Matrix mask(batch_rows, width);
    if (layer.dropout_rate > 0.0) {
      const double keep = 1.0 - layer.dropout_rate;
      for (double& v : mask.values()) v = (rng.next_double() < keep) ? 1.0 / keep : 0.0;
    } else {
      for (double& v : mask.values()) v = 1.0;
    }
    out.masks.push_back(std::move(mask));
  }
  return out;
}

double training_loss(const TrainedModel& model, const Matrix& batch,
                     const std::vector<int>& labels, const DropoutMasks& masks) {
  ForwardCache cache = forward_train_cached(model, batch, masks, nullptr);
  return cross_entropy(cache.acts.back(), labels);
}

namespace {

Gradients backward_from_cache(const TrainedModel& model, const ForwardCache& cache,
                              const std::vector<int>& labels, const DropoutMasks& masks) {
  const Matrix& probs = cache.acts.back();
  const double batch_n = static_cast<double>(probs.rows());

  Gradients grads;
  grads.loss = cross_entropy(probs, labels);
  grads.dense.resize(model.dense.size());
  grads.batch_norm.resize(model.batch_norm.size());

  // dL/d(probs) for mean cross-entropy.
  Matrix g(probs.rows(), probs.cols());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto y = static_cast<std::size_t>(labels[r]);
    g(r, y) = -1.0 / (std::max(probs(r, y), kProbFloor) * batch_n);
  }

  std::size_t dense_i = model.dense.size();
  std::size_t bn_i = model.batch_norm.size();
  std::size_t drop_i = masks.masks.size();

  for (std::size_t li = model.spec.layers.size(); li-- > 0;) {
    const LayerSpec& layer = model.spec.layers[li];
    const Matrix& in = cache.acts[li];        // input to this layer
    const Matrix& out = cache.acts[li + 1];   // its output
    switch (layer.kind) {
      case LayerKind::input:
      case LayerKind::multi_category_encoding:
        break;
      case LayerKind::softmax: {
        Matrix dz(g.rows(), g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < g.cols(); ++c) dot += g(r, c) * out(r, c);
          for (std::size_t c = 0; c < g.cols(); ++c) {
            dz(r, c) = out(r, c) * (g(r, c) - dot);
          }
        }
        g = std::move(dz);
        break;
      }
      case LayerKind::dense: {
        --dense_i;
        const DenseParams& p = model.dense[dense_i];
        grads.dense[dense_i].w = dense_backward_weights_m(g, in);
        grads.dense[dense_i].b = dense_backward_bias_m(g);
        g = dense_backward_input_m(g, p.w);
        break;
      }
      case LayerKind::relu:
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (in.data()[i] <= 0.0) g.data()[i] = 0.0;
        }
        break;
      case LayerKind::dropout:
        --drop_i;
        if (layer.dropout_rate > 0.0) {
          const Matrix& mask = masks.masks[drop_i];
          for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] *= mask.data()[i];
        }
        break;
      case LayerKind::batch_norm: {
        --bn_i;
        const BatchNormState& state = model.batch_norm[bn_i];
        const BnCache& bc = cache.bn[bn_i];
        const std::size_t rows = g.rows(), cols = g.cols();
        BatchNormGrads& bg = grads.batch_norm[bn_i];
        bg.dgamma.assign(cols, 0.0);
        bg.dbeta.assign(cols, 0.0);
        Matrix dx(rows, cols);
        for (std::size_t c = 0; c < cols; ++c) {
          const double inv = bc.inv_std[c];
          double sum_dxhat = 0.0, sum_dxhat_centered = 0.0;
          for (std::size_t r = 0; r < rows; ++r) {
            const double xhat = bc.centered(r, c) * inv;
            bg.dgamma[c] += g(r, c) * xhat;
            bg.dbeta[c] += g(r, c);
            const double dxhat = g(r, c) * state.gamma[c];
            sum_dxhat += dxhat;
            sum_dxhat_centered += dxhat * bc.centered(r, c);
          }
          const double dvar = sum_dxhat_centered * (-0.5) * inv * inv * inv;
          const double dmean = -inv * sum_dxhat;
          for (std::size_t r = 0; r < rows; ++r) {
            const double dxhat = g(r, c) * state.gamma[c];
            dx(r, c) = dxhat * inv + dvar * 2.0 * bc.centered(r, c) / static_cast<double>(rows) +
                       dmean / static_cast<double>(rows);
          }
        }
        g = std::move(dx);
        break;
      }
      case LayerKind::normalization: {
        for (std::size_t c = 0; c < g.cols(); ++c) {
          const double inv = 1.0 / std::sqrt(model.normalization.var[c] + kNormalizationEps);
          for (std::size_t r = 0; r < g.rows(); ++r) g(r, c) *= inv;
        }
        break;
      }
    }
  }
  grads.input = std::move(g);
  return grads;
}

}  // namespace

Gradients backprop(const TrainedModel& model, const Matrix& batch,
                   const std::vector<int>& labels, const DropoutMasks& masks) {
  ForwardCache cache = forward_train_cached(model, batch, masks, nullptr);
  return backward_from_cache(model, cache, labels, masks);
}

namespace {

// Adam moment estimates for every trainable tensor, in model order.
struct AdamState {
  struct Moments {
    std::vector<double> m, v;
  };
  std::vector<Moments> dense_w, dense_b, bn_gamma, bn_beta;
  std::uint64_t t = 0;

  explicit AdamState(const TrainedModel& model) {
    for (const DenseParams& p : model.dense) {
      dense_w.push_back({std::vector<double>(p.w.size(), 0.0),
                         std::vector<double>(p.w.size(), 0.0)});
      dense_b.push_back({std::vector<double>(p.b.size(), 0.0),
                         std::vector<double>(p.b.size(), 0.0)});
    }
    for (const BatchNormState& s : model.batch_norm) {
      bn_gamma.push_back({std::vector<double>(s.gamma.size(), 0.0),
                          std::vector<double>(s.gamma.size(), 0.0)});
      bn_beta.push_back({std::vector<double>(s.beta.size(), 0.0),
                         std::vector<double>(s.beta.size(), 0.0)});
    }
  }

  static void update(Moments& mom, const double* grad, double* param, std::size_t n,
                     const TrainConfig& cfg, double c1, double c2) {
    for (std::size_t i = 0; i < n; ++i) {
      mom.m[i] = cfg.adam_beta1 * mom.m[i] + (1.0 - cfg.adam_beta1) * grad[i];
      mom.v[i] = cfg.adam_beta2 * mom.v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
      const double m_hat = mom.m[i] / c1;
      const double v_hat = mom.v[i] / c2;
      param[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
    }
  }

  void step(TrainedModel& model, const Gradients& grads, const TrainConfig& cfg) {
    ++t;
    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < model.dense.size(); ++i) {
      update(dense_w[i], grads.dense[i].w.data(), model.dense[i].w.data(),
             model.dense[i].w.size(), cfg, c1, c2);
      update(dense_b[i], grads.dense[i].b.data(), model.dense[i].b.data(),
             model.dense[i].b.size(), cfg, c1, c2);
    }
    for (std::size_t i = 0; i < model.batch_norm.size(); ++i) {
      update(bn_gamma[i], grads.batch_norm[i].dgamma.data(), model.batch_norm[i].gamma.data(),
             model.batch_norm[i].gamma.size(), cfg, c1, c2);
      update(bn_beta[i], grads.batch_norm[i].dbeta.data(), model.batch_norm[i].beta.data(),
             model.batch_norm[i].beta.size(), cfg, c1, c2);
    }
  }
};

struct WeightSnapshot {
  std::vector<DenseParams> dense;
  std::vector<BatchNormState> batch_norm;
};

WeightSnapshot snapshot(const TrainedModel& model) {
  return {model.dense, model.batch_norm};
}

void restore(TrainedModel& model, const WeightSnapshot& snap) {
  model.dense = snap.dense;
  model.batch_norm = snap.batch_norm;
}

}  // namespace

TrainResult train(const ArchitectureSpec& spec, const FeatureMatrix& train_set,
                  const FeatureMatrix& val_set, const TrainConfig& config,
                  std::uint64_t seed) {
  spec.validate();
  config.validate();
  if (train_set.values.rows() == 0) throw std::invalid_argument("empty training set");
  if (val_set.values.rows() == 0) throw std::invalid_argument("empty validation set");
  if (train_set.values.cols() != spec.input_width || val_set.values.cols() != spec.input_width) {
    throw ShapeError("dataset width does not match the architecture input width");
  }
  for (const FeatureMatrix* part : {&train_set, &val_set}) {
    for (int label : part->labels) {
      if (label < 0 || static_cast<std::size_t>(label) >= spec.num_classes) {
        throw DataError("label out of range for the architecture class count");
      }
    }
  }

  TrainedModel model = init_model(spec, config, seed, &train_set.values);
  TrainResult result;
  if (config.max_epochs == 0) {
    result.model = std::move(model);
    return result;
  }

  SplitMix64 rng(mix_seed(seed, fnv1a64("train")));
  AdamState adam(model);
  const std::size_t n = train_set.values.rows();

  WeightSnapshot best = snapshot(model);
  double best_acc = -1.0;
  std::size_t since_improve = 0;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    // Fisher-Yates shuffle driven by the training stream.
    for (std::size_t i = n - 1; i > 0; --i) {
      const std::size_t j = rng.next_below(i + 1);
      std::swap(order[i], order[j]);
    }

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      Matrix batch(count, spec.input_width);
      std::vector<int> labels(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = order[start + i];
        for (std::size_t c = 0; c < spec.input_width; ++c) {
          batch(i, c) = train_set.values(src, c);
        }
        labels[i] = train_set.labels[src];
      }
      DropoutMasks masks = draw_dropout_masks(spec, count, rng);
      ForwardCache cache = forward_train_cached(model, batch, masks, &model);
      Gradients grads = backward_from_cache(model, cache, labels, masks);
      adam.step(model, grads, config);
      loss_sum += grads.loss * static_cast<double>(count);
    }

    const double train_loss = loss_sum / static_cast<double>(n);
    const double val_acc = accuracy(model, val_set);
    result.history.push_back({epoch, train_loss, val_acc});

    if (val_acc > best_acc) {
      best_acc = val_acc;
      best = snapshot(model);
      since_improve = 0;
    } else {
      ++since_improve;
      if (since_improve >= config.patience) break;
    }
  }

  restore(model, best);
  result.model = std::move(model);
  return result;
}

std::string history_csv(const TrainHistory& history) {
  std::string out = "epoch,train_loss,val_accuracy\n";
  char buf[128];
  for (const EpochStats& row : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", row.epoch, row.train_loss,
                  row.val_accuracy);
    out += buf;
  }
  return out;
}

// ---- serialization ----

namespace detail {

json spec_to_json(const ArchitectureSpec& spec) {
  json layers = json::array();
  for (const LayerSpec& layer : spec.layers) {
    json entry;
    entry["kind"] = layer_kind_name(layer.kind);
    if (layer.kind == LayerKind::input) entry["width"] = spec.input_width;
    if (layer.kind == LayerKind::dense) entry["units"] = layer.units;
    if (layer.kind == LayerKind::dropout) entry["rate"] = layer.dropout_rate;
    layers.push_back(std::move(entry));
  }
  return layers;
}

ArchitectureSpec spec_from_json(const json& layers) {
  ArchitectureSpec spec;
  for (const json& entry : layers) {
    LayerSpec layer;
    layer.kind = layer_kind_from_name(entry.at("kind").get<std::string>());
    if (layer.kind == LayerKind::input) spec.input_width = entry.at("width").get<std::size_t>();
    if (layer.kind == LayerKind::dense) layer.units = entry.at("units").get<std::size_t>();
    if (layer.kind == LayerKind::dropout) layer.dropout_rate = entry.at("rate").get<double>();
    spec.layers.push_back(layer);
  }
  for (auto it = spec.layers.rbegin(); it != spec.layers.rend(); ++it) {
    if (it->kind == LayerKind::dense) {
      spec.num_classes = it->units;
      break;
    }
  }
  return spec;
}

}  // namespace detail

namespace {

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r > 0 ? rows.at(0).size() : 0;
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    const json& row = rows.at(i);
    if (row.size() != c) throw DataError("ragged weight matrix in model file");
    for (std::size_t j = 0; j < c; ++j) m(i, j) = row.at(j).get<double>();
  }
  return m;
}

}  // namespace

std::string TrainedModel::to_json() const {
  json doc;
  doc["spec"] = detail::spec_to_json(spec);
  json weights = json::array();
  for (const DenseParams& p : dense) {
    weights.push_back(json::array({matrix_to_json(p.w), json(p.b)}));
  }
  doc["weights"] = std::move(weights);
  json bn = json::array();
  for (const BatchNormState& s : batch_norm) {
    bn.push_back({{"gamma", s.gamma},
                  {"beta", s.beta},
                  {"moving_mean", s.moving_mean},
                  {"moving_var", s.moving_var}});
  }
  doc["stats"]["batch_norm"] = std::move(bn);
  bool has_normalization = false;
  for (const LayerSpec& layer : spec.layers) {
    if (layer.kind == LayerKind::normalization) has_normalization = true;
  }
  if (has_normalization) {
    doc["stats"]["normalization"] = {
        {"mean", normalization.mean}, {"var", normalization.var}, {"count", normalization.count}};
  } else {
    doc["stats"]["normalization"] = nullptr;
  }
  doc["config"] = {{"max_epochs", config.max_epochs},
                   {"batch_size", config.batch_size},
                   {"learning_rate", config.learning_rate},
                   {"adam_beta1", config.adam_beta1},
                   {"adam_beta2", config.adam_beta2},
                   {"adam_epsilon", config.adam_epsilon},
                   {"patience", config.patience}};
  doc["seed"] = seed;
  return doc.dump(2);
}

TrainedModel TrainedModel::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    TrainedModel model;
    model.spec = detail::spec_from_json(doc.at("spec"));
    for (const json& pair : doc.at("weights")) {
      DenseParams p;
      p.w = matrix_from_json(pair.at(0));
      p.b = pair.at(1).get<std::vector<double>>();
      model.dense.push_back(std::move(p));
    }
    for (const json& s : doc.at("stats").at("batch_norm")) {
      model.batch_norm.push_back({s.at("gamma").get<std::vector<double>>(),
                                  s.at("beta").get<std::vector<double>>(),
                                  s.at("moving_mean").get<std::vector<double>>(),
                                  s.at("moving_var").get<std::vector<double>>()});
    }
    const json& norm = doc.at("stats").at("normalization");
    if (!norm.is_null()) {
      model.normalization = {norm.at("mean").get<std::vector<double>>(),
                             norm.at("var").get<std::vector<double>>(),
                             norm.at("count").get<std::size_t>()};
    }
    const json& cfg = doc.at("config");
    model.config.max_epochs = cfg.at("max_epochs").get<std::size_t>();
    model.config.batch_size = cfg.at("batch_size").get<std::size_t>();
    model.config.learning_rate = cfg.at("learning_rate").get<double>();
    model.config.adam_beta1 = cfg.at("adam_beta1").get<double>();
    model.config.adam_beta2 = cfg.at("adam_beta2").get<double>();
    model.config.adam_epsilon = cfg.at("adam_epsilon").get<double>();
    model.config.patience = cfg.at("patience").get<std::size_t>();
    model.seed = doc.at("seed").get<std::uint64_t>();
    model.spec.validate();
    return model;
  } catch (const json::exception& e) {
    throw DataError(std::string("model file missing or malformed field: ") + e.what());
  }
}

void TrainedModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << to_json() << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

TrainedModel TrainedModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

ScaledDims compound_scale(double d0, double w0, double r0, double alpha, double beta,
                          double gamma, double phi) {
  for (double base : {d0, w0, r0}) {
    if (!(base >= 1.0)) throw std::invalid_argument("base dimensions must be >= 1");
  }
  for (double coeff : {alpha, beta, gamma}) {
    if (!(coeff > 0.0)) throw std::invalid_argument("scaling coefficients must be positive");
  }
  auto scale_one = [phi](double coeff, double base) {
    const double scaled = std::pow(coeff, phi) * base;
    return std::max(1LL, std::llround(scaled));  // llround rounds half away from zero
  };
  return {scale_one(alpha, d0), scale_one(beta, w0), scale_one(gamma, r0)};
}

}  // namespace headsmith::nnet
