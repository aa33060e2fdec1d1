#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuserank/patcher.hpp"

namespace fuserank::eval {

/// Binary confusion counts with covid as the positive class.
struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const Label> predictions, std::span<const Label> truth);

/// Metrics are fractions in [0, 1] (MCC in [-1, 1]). A metric whose
/// denominator is zero is left empty and its name listed in undefined_metrics.
struct EvaluationReport {
  ConfusionMatrix confusion;
  std::optional<double> accuracy;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> precision;
  std::optional<double> f1;
  std::optional<double> mcc;
  std::vector<std::string> undefined_metrics;
};

EvaluationReport evaluate_metrics(const ConfusionMatrix& c);

/// Percentage rounded half away from zero, e.g. percent(0.982666, 2) == 98.27.
double percent(double fraction, int decimals);

/// 100 * num / den rounded half away from zero to `decimals` places and
/// formatted, computed exactly in integer arithmetic. Empty when den == 0.
std::optional<std::string> ratio_percent(std::uint64_t num, std::uint64_t den, int decimals);

/// 2x2 grid of counts (rows = true class, columns = predicted class, covid
/// first) with per-row recall/miss and per-column predictive value/error
/// percentages at one decimal.
std::string render_confusion_report(const ConfusionMatrix& c, const std::string& title = "Confusion Matrix for Test Data");

/// Percentages shown by render_confusion_report, in display order:
/// rows[i] = {correct, wrong} for true class i, cols[j] likewise for
/// predicted class j. "n/a" where the row/column is empty.
struct ConfusionPercentages {
  std::string rows[2][2];
  std::string cols[2][2];
};
ConfusionPercentages confusion_percentages(const ConfusionMatrix& c);

/// {confusion, metrics, undefined}; metrics hold fractions, null when undefined.
std::string report_to_json(const EvaluationReport& report);

/// Metric lines formatted as percentages with two decimals.
std::string render_metrics(const EvaluationReport& report);

}  // namespace fuserank::eval
