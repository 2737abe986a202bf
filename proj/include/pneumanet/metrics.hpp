#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pneumanet {

// PNEUMONIA is the positive class.
struct ConfusionMatrix {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Prediction p counts as positive when p >= threshold.
ConfusionMatrix confusion(std::span<const float> probabilities, std::span<const int> labels,
                          double threshold = 0.5);
ConfusionMatrix confusion(std::span<const double> probabilities, std::span<const int> labels,
                          double threshold = 0.5);

struct MetricsReport {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  // Set when the corresponding denominator was zero and 0.0 was reported.
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;
};

MetricsReport compute_metrics(const ConfusionMatrix& cm);

// F1 from precision and recall alone (0 when both are 0).
double f1_score(double precision, double recall);

// Half-up to two decimals, e.g. 0.855 -> "0.86".
std::string format_metric(double value);

// Experiment ids 1..4 map to the row names below.
inline const char* experiment_name(int id) {
  switch (id) {
    case 1: return "Original";
    case 2: return "Augmented";
    case 3: return "Generated";
    case 4: return "Org+Aug+Gen";
    default: return "?";
  }
}

// Fixed-width text table with rounded values; rows in experiment order,
// missing experiments omitted.
std::string report_table(const std::map<int, MetricsReport>& reports);

// experiment,accuracy,precision,recall,f1 with raw values.
std::string report_csv(const std::map<int, MetricsReport>& reports);

}  // namespace pneumanet
