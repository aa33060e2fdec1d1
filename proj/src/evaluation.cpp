#include "fuserank/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "fuserank/error.hpp"

namespace fuserank::eval {

using nlohmann::json;

ConfusionMatrix confusion(std::span<const Label> predictions, std::span<const Label> truth) {
  if (predictions.size() != truth.size())
    fail(ErrorKind::invalid_argument, "confusion: " + std::to_string(predictions.size()) + " predictions for " +
                                          std::to_string(truth.size()) + " labels");
  if (truth.empty()) fail(ErrorKind::invalid_argument, "confusion: no samples");
  ConfusionMatrix c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool pred_pos = predictions[i] == Label::covid;
    const bool true_pos = truth[i] == Label::covid;
    if (pred_pos && true_pos) ++c.tp;
    else if (!pred_pos && !true_pos) ++c.tn;
    else if (pred_pos) ++c.fp;
    else ++c.fn;
  }
  return c;
}

EvaluationReport evaluate_metrics(const ConfusionMatrix& c) {
  if (c.total() == 0) fail(ErrorKind::invalid_argument, "evaluate_metrics: empty confusion matrix");
  EvaluationReport r;
  r.confusion = c;
  const auto tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const auto fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);

  auto ratio = [&](const char* name, double num, double den) -> std::optional<double> {
    if (den == 0.0) {
      r.undefined_metrics.emplace_back(name);
      return std::nullopt;
    }
    return num / den;
  };
  r.accuracy = ratio("accuracy", tp + tn, tp + tn + fn + fp);
  r.sensitivity = ratio("sensitivity", tp, tp + fn);
  r.specificity = ratio("specificity", tn, tn + fp);
  r.precision = ratio("precision", tp, tp + fp);
  r.f1 = ratio("f1", 2.0 * tp, 2.0 * tp + fp + fn);
  const double mcc_den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  r.mcc = ratio("mcc", tp * tn - fp * fn, std::sqrt(mcc_den));
  return r;
}

double percent(double fraction, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(fraction * 100.0 * scale) / scale;
}

std::optional<std::string> ratio_percent(std::uint64_t num, std::uint64_t den, int decimals) {
  if (den == 0) return std::nullopt;
  std::uint64_t scale = 1;
  for (int i = 0; i < decimals; ++i) scale *= 10;
  // round(num * 100 * scale / den), ties away from zero
  const std::uint64_t q = (2 * num * 100 * scale + den) / (2 * den);
  std::string digits = std::to_string(q / scale);
  if (decimals > 0) {
    std::string frac = std::to_string(q % scale);
    frac.insert(0, static_cast<std::size_t>(decimals) - frac.size(), '0');
    digits += "." + frac;
  }
  return digits + "%";
}

ConfusionPercentages confusion_percentages(const ConfusionMatrix& c) {
  const auto pct = [](std::uint64_t num, std::uint64_t den) { return ratio_percent(num, den, 1).value_or("n/a"); };
  ConfusionPercentages p;
  // Row 0: true covid -> predicted covid (tp) / nofinding (fn).
  p.rows[0][0] = pct(c.tp, c.tp + c.fn);
  p.rows[0][1] = pct(c.fn, c.tp + c.fn);
  // Row 1: true nofinding -> correct is tn, wrong is fp.
  p.rows[1][0] = pct(c.tn, c.tn + c.fp);
  p.rows[1][1] = pct(c.fp, c.tn + c.fp);
  // Column 0: predicted covid; column 1: predicted nofinding.
  p.cols[0][0] = pct(c.tp, c.tp + c.fp);
  p.cols[0][1] = pct(c.fp, c.tp + c.fp);
  p.cols[1][0] = pct(c.tn, c.tn + c.fn);
  p.cols[1][1] = pct(c.fn, c.tn + c.fn);
  return p;
}

std::string render_confusion_report(const ConfusionMatrix& c, const std::string& title) {
  if (c.total() == 0) fail(ErrorKind::invalid_argument, "render_confusion_report: empty confusion matrix");
  const ConfusionPercentages p = confusion_percentages(c);
  std::ostringstream out;
  out << title << "\n\n";
  out << std::left << std::setw(26) << "" << std::right << std::setw(12) << "Covid-19" << std::setw(14) << "No findings"
      << "\n";
  const auto row = [&](const char* head, const char* cls, std::uint64_t a, std::uint64_t b, int i) {
    out << std::left << std::setw(12) << head << std::setw(14) << cls << std::right << std::setw(12) << a
        << std::setw(14) << b << std::setw(9) << p.rows[i][0] << std::setw(9) << p.rows[i][1] << "\n";
  };
  row("True Class", "Covid-19", c.tp, c.fn, 0);
  row("", "No findings", c.fp, c.tn, 1);
  out << std::left << std::setw(26) << "" << std::right << std::setw(12) << p.cols[0][0] << std::setw(14)
      << p.cols[1][0] << "\n";
  out << std::left << std::setw(26) << "" << std::right << std::setw(12) << p.cols[0][1] << std::setw(14)
      << p.cols[1][1] << "\n";
  out << std::left << std::setw(26) << "" << std::right << std::setw(12) << "Covid-19" << std::setw(14) << "No findings"
      << "\n";
  out << std::left << std::setw(26) << "" << "  Predicted Class\n";
  return out.str();
}

std::string report_to_json(const EvaluationReport& report) {
  const auto value = [](const std::optional<double>& v) -> json { return v ? json(*v) : json(nullptr); };
  json j{{"confusion",
          {{"tp", report.confusion.tp}, {"tn", report.confusion.tn}, {"fp", report.confusion.fp}, {"fn", report.confusion.fn}}},
         {"metrics",
          {{"accuracy", value(report.accuracy)},
           {"sensitivity", value(report.sensitivity)},
           {"specificity", value(report.specificity)},
           {"precision", value(report.precision)},
           {"f1", value(report.f1)},
           {"mcc", value(report.mcc)}}},
         {"undefined", report.undefined_metrics}};
  return j.dump(2);
}

std::string render_metrics(const EvaluationReport& report) {
  std::ostringstream out;
  const auto line = [&](const char* name, const std::optional<double>& v) {
    out << std::left << std::setw(13) << name;
    if (v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f%%", percent(*v, 2));
      out << buf;
    } else {
      out << "undefined";
    }
    out << "\n";
  };
  line("Accuracy", report.accuracy);
  line("Sensitivity", report.sensitivity);
  line("Specificity", report.specificity);
  line("Precision", report.precision);
  line("F1-score", report.f1);
  line("MCC", report.mcc);
  return out.str();
}

}  // namespace fuserank::eval
