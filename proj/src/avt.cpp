#include "headsmith/avt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "headsmith/kernels.hpp"

namespace headsmith::avt {

std::vector<double> feature_variances(const FeatureMatrix& data, int ddof) {
  const std::size_t z = data.num_samples();
  const std::size_t w = data.num_features();
  if (z == 0 || w == 0) throw std::invalid_argument("feature_variances: empty matrix");
  if (ddof != 0 && ddof != 1) throw std::invalid_argument("feature_variances: ddof must be 0 or 1");
  if (ddof == 1 && z < 2)
    throw std::invalid_argument("feature_variances: ddof=1 needs at least 2 samples");

  std::vector<double> mean(w), var(w);
  kernels::column_mean_var(data.values.data(), z, w, mean.data(), var.data());
  if (ddof == 1) {
    const double scale = static_cast<double>(z) / static_cast<double>(z - 1);
    for (double& v : var) v *= scale;
  }
  return var;
}

double percentile(const std::vector<double>& values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile: empty vector");
  if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("percentile: p must be in [0,100]");

  std::vector<double> s(values);
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  const double t = static_cast<double>(n - 1) * p / 100.0;
  const std::size_t lo = static_cast<std::size_t>(t);
  if (lo + 1 >= n) return s[n - 1];
  const double frac = t - static_cast<double>(lo);
  return s[lo] + frac * (s[lo + 1] - s[lo]);
}

VarianceSelector fit(const FeatureMatrix& data, double p, const FitOptions& opts) {
  VarianceSelector sel;
  sel.percentile = p;
  sel.variances = feature_variances(data, opts.ddof);
  sel.threshold = percentile(sel.variances, p);
  // Keep-at-threshold: v >= j. With strict_at_zero, a zero threshold drops
  // the zero-variance features instead of keeping them.
  const bool strict = opts.strict_at_zero && sel.threshold == 0.0;
  for (std::size_t i = 0; i < sel.variances.size(); ++i) {
    const double v = sel.variances[i];
    if (strict ? v > sel.threshold : v >= sel.threshold) sel.kept_indices.push_back(i);
  }
  return sel;
}

FeatureMatrix transform(const VarianceSelector& selector, const FeatureMatrix& data) {
  if (data.num_features() != selector.fitted_width())
    throw ShapeError("transform: data width " + std::to_string(data.num_features()) +
                     " != fitted width " + std::to_string(selector.fitted_width()));
  FeatureMatrix out;
  out.sample_ids = data.sample_ids;
  out.patient_ids = data.patient_ids;
  out.labels = data.labels;
  out.values = Matrix(data.num_samples(), selector.kept_indices.size());
  for (std::size_t r = 0; r < data.num_samples(); ++r) {
    std::size_t c = 0;
    for (std::size_t idx : selector.kept_indices) out.values(r, c++) = data.values(r, idx);
  }
  return out;
}

std::string VarianceSelector::to_json() const {
  nlohmann::json j;
  j["percentile"] = percentile;
  j["threshold"] = threshold;
  j["width"] = variances.size();
  j["variances"] = variances;
  j["kept_indices"] = kept_indices;
  return j.dump(2) + "\n";
}

VarianceSelector VarianceSelector::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("selector JSON parse error: ") + e.what());
  }
  VarianceSelector sel;
  try {
    sel.percentile = j.at("percentile").get<double>();
    sel.threshold = j.at("threshold").get<double>();
    sel.variances = j.at("variances").get<std::vector<double>>();
    sel.kept_indices = j.at("kept_indices").get<std::vector<std::size_t>>();
    if (j.at("width").get<std::size_t>() != sel.variances.size())
      throw DataError("selector width does not match variances length");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("selector JSON missing field: ") + e.what());
  }
  return sel;
}

void VarianceSelector::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << to_json();
}

VarianceSelector VarianceSelector::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

}  // namespace headsmith::avt
