#include "pneumanet/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "pneumanet/error.hpp"

namespace pneumanet {

namespace {

template <typename P>
ConfusionMatrix count(std::span<const P> probs, std::span<const int> labels, double threshold) {
  if (probs.size() != labels.size()) {
    throw InvalidArgument("confusion: " + std::to_string(probs.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw InvalidArgument("confusion: label " + std::to_string(y) + " is not 0 or 1");
    const bool positive = static_cast<double>(probs[i]) >= threshold;
    if (positive) ++(y ? cm.tp : cm.fp);
    else ++(y ? cm.fn : cm.tn);
  }
  return cm;
}

}  // namespace

ConfusionMatrix confusion(std::span<const float> p, std::span<const int> y, double threshold) {
  return count(p, y, threshold);
}

ConfusionMatrix confusion(std::span<const double> p, std::span<const int> y, double threshold) {
  return count(p, y, threshold);
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0 ? 2 * precision * recall / s : 0.0;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InvalidArgument("compute_metrics: empty confusion matrix");
  MetricsReport r;
  const auto d = [](std::uint64_t v) { return static_cast<double>(v); };
  r.accuracy = d(cm.tp + cm.tn) / d(cm.total());
  if (cm.tp + cm.fp > 0) r.precision = d(cm.tp) / d(cm.tp + cm.fp);
  else r.precision_degenerate = true;
  if (cm.tp + cm.fn > 0) r.recall = d(cm.tp) / d(cm.tp + cm.fn);
  else r.recall_degenerate = true;
  if (r.precision + r.recall > 0) r.f1 = f1_score(r.precision, r.recall);
  else r.f1_degenerate = true;
  return r;
}

std::string format_metric(double value) {
  // The epsilon keeps values such as 0.855 (stored as 0.85499999...) on the
  // half-up side.
  const double cents = std::floor(value * 100.0 + 0.5 + 1e-9);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", cents / 100.0);
  return buf;
}

std::string report_table(const std::map<int, MetricsReport>& reports) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-12s %9s %10s %7s %9s\n", "Experiment", "Accuracy", "Precision",
                "Recall", "F1-Score");
  out << line;
  for (int id = 1; id <= 4; ++id) {
    const auto it = reports.find(id);
    if (it == reports.end()) continue;
    const MetricsReport& r = it->second;
    std::snprintf(line, sizeof line, "%-12s %9s %10s %7s %9s\n", experiment_name(id),
                  format_metric(r.accuracy).c_str(), format_metric(r.precision).c_str(),
                  format_metric(r.recall).c_str(), format_metric(r.f1).c_str());
    out << line;
  }
  return out.str();
}

std::string report_csv(const std::map<int, MetricsReport>& reports) {
  std::ostringstream out;
  out.precision(17);
  out << "experiment,accuracy,precision,recall,f1\n";
  for (int id = 1; id <= 4; ++id) {
    const auto it = reports.find(id);
    if (it == reports.end()) continue;
    const MetricsReport& r = it->second;
    out << experiment_name(id) << ',' << r.accuracy << ',' << r.precision << ',' << r.recall << ','
        << r.f1 << '\n';
  }
  return out.str();
}

}  // namespace pneumanet
