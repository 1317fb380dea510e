#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace headsmith::metrics {

enum class Average { macro, weighted };

// K x K counts; rows are true labels, columns predicted labels.
struct ConfusionMatrix {
  std::vector<std::vector<std::uint64_t>> counts;
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return counts.size(); }
  std::uint64_t total() const;
  std::vector<std::vector<double>> row_normalized() const;
};

struct PerClassMetrics {
  std::string name;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  bool zero_division = false;  // precision or recall was 0/0 and reported as 0
};

struct ClassificationReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  std::vector<PerClassMetrics> per_class;
  ConfusionMatrix confusion;
  std::size_t dimensionality = 0;  // feature width entering NAS, set by callers

  double precision(Average avg = Average::macro) const {
    return avg == Average::macro ? macro_precision : weighted_precision;
  }
  double recall(Average avg = Average::macro) const {
    return avg == Average::macro ? macro_recall : weighted_recall;
  }
  double f1(Average avg = Average::macro) const {
    return avg == Average::macro ? macro_f1 : weighted_f1;
  }

  std::string to_json(Average avg = Average::macro) const;
};

ConfusionMatrix confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred, int k);

// One-vs-rest TP/FP/FN per class; accuracy = trace / total; macro averages
// are unweighted means with 0/0 cells contributing 0 (flagged per class).
ClassificationReport metrics_from_confusion(const ConfusionMatrix& cm);

// Diagonal over row sum per class; a class with no true samples has no entry.
std::vector<std::optional<double>> recall_table(const ConfusionMatrix& cm);

// "12.34%" with two decimals, the result tables' number format.
std::string format_percent(double fraction);

// Markdown table with one column per report: rows Dimensionality, Accuracy,
// Precision, Recall, F1-score, followed by a per-class recall table.
std::string render_comparison(const std::vector<ClassificationReport>& reports,
                              const std::vector<std::string>& condition_names,
                              Average avg = Average::macro);

}  // namespace headsmith::metrics
