#include "fuserank/svm.hpp"

#include <algorithm>
#include <cmath>
#include <compare>
#include <numeric>

#include <json.hpp>

#include "fuserank/error.hpp"
#include "fuserank/io_util.hpp"

namespace fuserank::svm {

using fusion::FeatureMatrix;
using nlohmann::json;

void SolverConfig::validate() const {
  if (max_iterations == 0 || !(gradient_tolerance > 0) || !(initial_step > 0) || !(shrink > 0 && shrink < 1) ||
      !(sufficient_decrease > 0 && sufficient_decrease < 1))
    fail(ErrorKind::invalid_argument, "solver config values must be positive (shrink and sufficient_decrease in (0,1))");
}

FeatureMatrix standardize_and_augment(const FeatureMatrix& m, std::span<const nn::Standardizer> standardizers) {
  if (standardizers.size() != m.dim) fail(ErrorKind::invalid_argument, "standardizer count differs from feature dim");
  FeatureMatrix out;
  out.rows = m.rows;
  out.dim = m.dim + 1;
  out.labels = m.labels;
  out.values.resize(out.rows * out.dim);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.dim; ++c) out.values[r * out.dim + c] = standardizers[c].apply(m.at(r, c));
    out.values[r * out.dim + m.dim] = 1.0;
  }
  return out;
}

namespace {

void check_dims(std::span<const double> w, const FeatureMatrix& m) {
  if (w.size() != m.dim || m.values.size() != m.rows * m.dim || m.labels.size() != m.rows)
    fail(ErrorKind::invalid_argument, "svm: weight length " + std::to_string(w.size()) + " does not match data dim " +
                                          std::to_string(m.dim));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

double objective(std::span<const double> w, const FeatureMatrix& m, double C) {
  check_dims(w, m);
  double loss = 0.0;
  for (std::size_t n = 0; n < m.rows; ++n) {
    const double slack = std::max(1.0 - label_sign(m.labels[n]) * dot(w, m.row(n)), 0.0);
    loss += slack * slack;
  }
  return 0.5 * dot(w, w) + C * loss;
}

std::vector<double> gradient(std::span<const double> w, const FeatureMatrix& m, double C) {
  check_dims(w, m);
  std::vector<double> g(w.begin(), w.end());
  for (std::size_t n = 0; n < m.rows; ++n) {
    const double y = label_sign(m.labels[n]);
    const auto x = m.row(n);
    const double slack = std::max(1.0 - y * dot(w, x), 0.0);
    if (slack == 0.0) continue;
    const double scale = -2.0 * C * y * slack;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * x[i];
  }
  return g;
}

LinearSvmModel train(const FeatureMatrix& m, double C, const SolverConfig& cfg) {
  m.validate();
  cfg.validate();
  if (!(C > 0) || !std::isfinite(C)) fail(ErrorKind::invalid_argument, "C must be positive and finite");
  if (m.rows < 2) fail(ErrorKind::invalid_argument, "train: need at least 2 rows");
  const auto positives = std::count(m.labels.begin(), m.labels.end(), Label::covid);
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(m.rows))
    fail(ErrorKind::invalid_argument, "train: both classes must be present");

  // Canonical row order: lexicographic on (features, label).
  std::vector<std::size_t> order(m.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ra = m.row(a), rb = m.row(b);
    const auto cmp = std::lexicographical_compare_three_way(ra.begin(), ra.end(), rb.begin(), rb.end());
    if (cmp != 0) return cmp < 0;
    return m.labels[a] < m.labels[b];
  });
  const FeatureMatrix canonical = m.select_rows(order);

  LinearSvmModel model;
  model.dim = m.dim;
  model.C = C;
  model.standardizers.reserve(m.dim);
  std::vector<double> column(m.rows);
  for (std::size_t c = 0; c < m.dim; ++c) {
    for (std::size_t r = 0; r < m.rows; ++r) column[r] = canonical.at(r, c);
    model.standardizers.push_back(nn::standardize_fit(column));
  }
  const FeatureMatrix data = standardize_and_augment(canonical, model.standardizers);

  std::vector<double> w(data.dim, 0.0);
  double f = objective(w, data, C);
  SolverReport& report = model.report;
  report.objective_trace.push_back(f);

  // Trial step: initial_step on the first iteration, then the Barzilai-Borwein
  // estimate s's / s'y from the last accepted move. Backtracking still enforces
  // the Armijo condition, so every accepted step decreases f.
  std::vector<double> candidate(w.size());
  std::vector<double> prev_w, prev_g;
  double trial = cfg.initial_step;
  for (;;) {
    const std::vector<double> g = gradient(w, data, C);
    const double g2 = dot(g, g);
    report.final_gradient_norm = std::sqrt(g2);
    if (!std::isfinite(g2)) fail(ErrorKind::numeric, "train: non-finite gradient");
    if (report.final_gradient_norm <= cfg.gradient_tolerance) {
      report.converged = true;
      break;
    }
    if (report.iterations >= cfg.max_iterations) break;

    if (!prev_w.empty()) {
      double ss = 0.0, sy = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double s = w[i] - prev_w[i];
        ss += s * s;
        sy += s * (g[i] - prev_g[i]);
      }
      trial = (sy > 0.0 && std::isfinite(ss / sy)) ? std::clamp(ss / sy, 1e-10, 1e10) : cfg.initial_step;
    }

    double step = trial;
    bool accepted = false;
    while (step > 1e-20) {
      for (std::size_t i = 0; i < w.size(); ++i) candidate[i] = w[i] - step * g[i];
      const double fc = objective(candidate, data, C);
      if (!std::isfinite(fc)) fail(ErrorKind::numeric, "train: non-finite objective");
      if (fc <= f - cfg.sufficient_decrease * step * g2) {
        prev_w = w;
        prev_g = g;
        w.swap(candidate);
        f = fc;
        accepted = true;
        break;
      }
      step *= cfg.shrink;
    }
    if (!accepted) break;  // no representable descent step left
    ++report.iterations;
    report.objective_trace.push_back(f);
  }
  report.final_objective = f;
  model.weights = std::move(w);
  return model;
}

Prediction predict(const LinearSvmModel& model, std::span<const double> x) {
  if (x.size() != model.dim)
    fail(ErrorKind::invalid_argument, "predict: input has " + std::to_string(x.size()) + " features, model expects " +
                                          std::to_string(model.dim));
  double score = model.weights.back();
  for (std::size_t i = 0; i < model.dim; ++i) score += model.weights[i] * model.standardizers[i].apply(x[i]);
  return {score >= 0.0 ? Label::covid : Label::nofinding, score};
}

std::string model_to_json(const LinearSvmModel& model, const std::string& config_hash) {
  json standardizers = json::array();
  for (const auto& s : model.standardizers) standardizers.push_back({{"mean", s.mean}, {"stdev", s.stdev}});
  json j{{"dim", model.dim},
         {"C", model.C},
         {"weights", model.weights},
         {"standardizers", standardizers},
         {"label_map", {{"covid", 1}, {"nofinding", -1}}},
         {"solver_report",
          {{"iterations", model.report.iterations},
           {"final_objective", model.report.final_objective},
           {"final_gradient_norm", model.report.final_gradient_norm},
           {"converged", model.report.converged}}}};
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  return j.dump() + "\n";
}

LinearSvmModel model_from_json(std::string_view text, std::string* config_hash) {
  try {
    const json j = json::parse(text);
    LinearSvmModel model;
    model.dim = j.at("dim").get<std::size_t>();
    model.C = j.at("C").get<double>();
    model.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& s : j.at("standardizers")) {
      const double stdev = s.at("stdev").get<double>();
      model.standardizers.push_back({s.at("mean").get<double>(), stdev, stdev < nn::Standardizer::kEpsilon});
    }
    const auto& rep = j.at("solver_report");
    model.report.iterations = rep.at("iterations").get<std::size_t>();
    model.report.final_objective = rep.at("final_objective").get<double>();
    model.report.final_gradient_norm = rep.at("final_gradient_norm").get<double>();
    model.report.converged = rep.at("converged").get<bool>();
    if (model.weights.size() != model.dim + 1 || model.standardizers.size() != model.dim)
      fail(ErrorKind::format, "svm model: weights/standardizers do not match dim");
    if (!(model.C > 0)) fail(ErrorKind::format, "svm model: C must be positive");
    if (config_hash) *config_hash = j.value("config_hash", std::string());
    return model;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed svm model: ") + e.what());
  }
}

void write_model(const std::filesystem::path& path, const LinearSvmModel& model, const std::string& config_hash) {
  io::write_file_atomic(path, model_to_json(model, config_hash));
}

LinearSvmModel read_model(const std::filesystem::path& path, std::string* config_hash) {
  try {
    return model_from_json(io::read_text_file(path), config_hash);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace fuserank::svm
