#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "headsmith/data.hpp"

namespace headsmith::avt {

// Adaptive variance thresholding: the variance cutoff is not a fixed number
// but the p-th percentile of the observed per-feature variances, so the
// filter adapts to whatever feature scale a backbone emits.

struct FitOptions {
  int ddof = 0;               // 0 = population variance, 1 = sample variance
  bool strict_at_zero = false;  // drop zero-variance features when threshold == 0
};

struct VarianceSelector {
  double percentile = 0.0;          // p in [0, 100]
  std::vector<double> variances;    // per-feature, length = fitted width
  double threshold = 0.0;           // percentile(variances, p)
  std::vector<std::size_t> kept_indices;  // sorted, unique, v[i] >= threshold

  std::size_t fitted_width() const { return variances.size(); }

  std::string to_json() const;
  static VarianceSelector from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static VarianceSelector load(const std::filesystem::path& path);
};

// Per-feature variance of a samples x features matrix. Population variance
// (divide by sample count) unless ddof = 1. Empty matrix is an error.
std::vector<double> feature_variances(const FeatureMatrix& data, int ddof = 0);

// Linear interpolation between closest ranks: with sorted values s and
// t = (n-1)*p/100, returns s[floor(t)] + frac(t) * (s[floor(t)+1] - s[floor(t)]).
double percentile(const std::vector<double>& values, double p);

VarianceSelector fit(const FeatureMatrix& data, double p, const FitOptions& opts = {});

// Filters any matrix of the fitted width down to the kept features. Sample
// order, ids and labels are carried through unchanged.
FeatureMatrix transform(const VarianceSelector& selector, const FeatureMatrix& data);

}  // namespace headsmith::avt
