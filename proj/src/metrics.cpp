#include "headsmith/metrics.hpp"

#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace headsmith::metrics {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts)
    for (std::uint64_t c : row) n += c;
  return n;
}

std::vector<std::vector<double>> ConfusionMatrix::row_normalized() const {
  std::vector<std::vector<double>> out(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    std::uint64_t row_sum = 0;
    for (std::uint64_t c : counts[i]) row_sum += c;
    out[i].resize(counts[i].size(), 0.0);
    if (row_sum == 0) continue;
    for (std::size_t j = 0; j < counts[i].size(); ++j)
      out[i][j] = static_cast<double>(counts[i][j]) / static_cast<double>(row_sum);
  }
  return out;
}

ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred, int k) {
  if (y_true.size() != y_pred.size())
    throw std::invalid_argument("confusion: y_true and y_pred lengths differ");
  if (y_true.empty()) throw std::invalid_argument("confusion: empty label vectors");
  if (k < 2) throw std::invalid_argument("confusion: need at least 2 classes");

  ConfusionMatrix cm;
  cm.counts.assign(static_cast<std::size_t>(k), std::vector<std::uint64_t>(k, 0));
  for (int c = 0; c < k; ++c) cm.class_names.push_back(std::to_string(c));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i];
    const int p = y_pred[i];
    if (t < 0 || t >= k) throw std::invalid_argument("confusion: true label out of range");
    if (p < 0 || p >= k) throw std::invalid_argument("confusion: predicted label out of range");
    ++cm.counts[t][p];
  }
  return cm;
}

ClassificationReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const std::size_t k = cm.num_classes();
  if (k < 2) throw std::invalid_argument("metrics_from_confusion: need at least 2 classes");
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("metrics_from_confusion: all-zero matrix");

  ClassificationReport rep;
  rep.confusion = cm;

  std::uint64_t trace = 0;
  std::vector<std::uint64_t> row_sum(k, 0), col_sum(k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      row_sum[i] += cm.counts[i][j];
      col_sum[j] += cm.counts[i][j];
      if (i == j) trace += cm.counts[i][j];
    }
  rep.accuracy = static_cast<double>(trace) / static_cast<double>(total);

  for (std::size_t c = 0; c < k; ++c) {
    PerClassMetrics pc;
    pc.name = c < cm.class_names.size() ? cm.class_names[c] : std::to_string(c);
    pc.support = row_sum[c];
    const double tp = static_cast<double>(cm.counts[c][c]);
    const double fp = static_cast<double>(col_sum[c]) - tp;
    const double fn = static_cast<double>(row_sum[c]) - tp;
    if (tp + fp > 0) {
      pc.precision = tp / (tp + fp);
    } else {
      pc.precision = 0.0;
      pc.zero_division = true;
    }
    if (tp + fn > 0) {
      pc.recall = tp / (tp + fn);
    } else {
      pc.recall = 0.0;
      pc.zero_division = true;
    }
    pc.f1 = (pc.precision + pc.recall > 0)
                ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall)
                : 0.0;
    rep.per_class.push_back(pc);
  }

  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(total);
  for (const auto& pc : rep.per_class) {
    rep.macro_precision += pc.precision / kd;
    rep.macro_recall += pc.recall / kd;
    rep.macro_f1 += pc.f1 / kd;
    const double w = static_cast<double>(pc.support) / nd;
    rep.weighted_precision += w * pc.precision;
    rep.weighted_recall += w * pc.recall;
    rep.weighted_f1 += w * pc.f1;
  }
  return rep;
}

std::vector<std::optional<double>> recall_table(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    std::uint64_t row_sum = 0;
    for (std::uint64_t v : cm.counts[c]) row_sum += v;
    if (row_sum == 0)
      out.push_back(std::nullopt);
    else
      out.push_back(static_cast<double>(cm.counts[c][c]) / static_cast<double>(row_sum));
  }
  return out;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", fraction * 100.0);
  return buf;
}

std::string ClassificationReport::to_json(Average avg) const {
  nlohmann::json j;
  j["dimensionality"] = dimensionality;
  j["accuracy"] = accuracy;
  j["precision"] = precision(avg);
  j["recall"] = recall(avg);
  j["f1"] = f1(avg);
  j["average"] = avg == Average::macro ? "macro" : "weighted";
  nlohmann::json per = nlohmann::json::array();
  for (const auto& pc : per_class) {
    per.push_back({{"class", pc.name},
                   {"precision", pc.precision},
                   {"recall", pc.recall},
                   {"f1", pc.f1},
                   {"support", pc.support},
                   {"zero_division", pc.zero_division}});
  }
  j["per_class"] = per;
  nlohmann::json conf = nlohmann::json::array();
  for (const auto& row : confusion.counts) conf.push_back(row);
  j["confusion"] = conf;
  return j.dump(2) + "\n";
}

std::string render_comparison(const std::vector<ClassificationReport>& reports,
                              const std::vector<std::string>& condition_names,
                              Average avg) {
  if (reports.empty()) throw std::invalid_argument("render_comparison: no reports");
  if (reports.size() != condition_names.size())
    throw std::invalid_argument("render_comparison: names/reports length mismatch");

  std::string out;
  out += "| |";
  for (const auto& name : condition_names) out += " " + name + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < reports.size(); ++i) out += "---|";
  out += "\n";

  out += "| Dimensionality |";
  for (const auto& r : reports) out += " " + std::to_string(r.dimensionality) + " |";
  out += "\n";
  const char* row_names[4] = {"Accuracy", "Precision", "Recall", "F1-score"};
  for (int row = 0; row < 4; ++row) {
    out += std::string("| ") + row_names[row] + " |";
    for (const auto& r : reports) {
      double v = 0.0;
      switch (row) {
        case 0: v = r.accuracy; break;
        case 1: v = r.precision(avg); break;
        case 2: v = r.recall(avg); break;
        case 3: v = r.f1(avg); break;
      }
      out += " " + format_percent(v) + " |";
    }
    out += "\n";
  }

  // Per-class recall, rows ordered by class index.
  std::size_t k = 0;
  for (const auto& r : reports) k = std::max(k, r.confusion.num_classes());
  out += "\n| Class |";
  for (const auto& name : condition_names) out += " " + name + " |";
  out += "\n|---|";
  for (std::size_t i = 0; i < reports.size(); ++i) out += "---|";
  out += "\n";
  for (std::size_t c = 0; c < k; ++c) {
    out += "| " + std::to_string(c) + " |";
    for (const auto& r : reports) {
      const auto table = recall_table(r.confusion);
      if (c < table.size() && table[c].has_value())
        out += " " + format_percent(*table[c]) + " |";
      else
        out += " n/a |";
    }
    out += "\n";
  }
  return out;
}

}  // namespace headsmith::metrics
