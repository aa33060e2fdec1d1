// Acceptance runner: one PASS/FAIL line per headline criterion, each with its
// own wall-clock budget. Exit status is non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuserank/error.hpp"
#include "fuserank/evaluation.hpp"
#include "fuserank/fusion.hpp"
#include "fuserank/io_util.hpp"
#include "fuserank/nn_core.hpp"
#include "fuserank/patcher.hpp"
#include "fuserank/pipeline.hpp"
#include "fuserank/svm.hpp"
#include "oracles.hpp"
#include "published_counts.hpp"

namespace fs = std::filesystem;
using namespace fuserank;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Outcome metric_reproduction() {
  int checked = 0, matched = 0;
  std::ostringstream misses;
  for (const auto& row : published::kRows) {
    const auto r = eval::evaluate_metrics({row.tp, row.tn, row.fp, row.fn});
    const std::optional<double> got[] = {r.accuracy, r.sensitivity, r.specificity, r.precision, r.f1, r.mcc};
    for (std::size_t i = 0; i < 6; ++i) {
      ++checked;
      const double printed = std::strtod(row.printed[i], nullptr);
      if (got[i] && std::abs(*got[i] * 100.0 - printed) <= 0.005 && eval::percent(*got[i], 2) == printed) {
        ++matched;
      } else {
        misses << " " << row.subset << "/" << row.method << "/" << published::kMetricNames[i] << " computed "
               << (got[i] ? eval::percent(*got[i], 2) : NAN) << " printed " << row.printed[i] << ";";
      }
    }
  }
  return {matched == checked, std::to_string(matched) + "/" + std::to_string(checked) + " printed values reproduced" +
                                  (matched == checked ? "" : ", mismatches:" + misses.str())};
}

Outcome confusion_report() {
  int checked = 0, matched = 0;
  for (const auto& fig : published::kFigures) {
    const eval::ConfusionMatrix c{fig.covid_covid, fig.nofinding_nofinding, fig.nofinding_covid, fig.covid_nofinding};
    const auto pct = eval::confusion_percentages(c);
    const auto text = eval::render_confusion_report(c);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        checked += 2;
        matched += pct.rows[i][j] == fig.rows[i][j] && text.find(fig.rows[i][j]) != std::string::npos;
        matched += pct.cols[i][j] == fig.cols[i][j] && text.find(fig.cols[i][j]) != std::string::npos;
      }
  }
  return {matched == checked, std::to_string(matched) + "/" + std::to_string(checked) + " row/column percentages"};
}

Outcome nn_oracle() {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  int instances = 0;
  double worst = 0.0;
  bool shapes_ok = true;
  while (instances < 100) {
    const std::size_t h = dim(rng), w = dim(rng), k = dim(rng), s = dim(rng) % 3 + 1, p = dim(rng) % 3;
    if (k > h + 2 * p || k > w + 2 * p || (h + 2 * p - k) % s || (w + 2 * p - k) % s || p >= k) continue;
    const nn::ConvGeometry g{.kernel = k, .stride = s, .padding = p};
    const nn::Tensor2D in(h, w, uniform(rng, h * w, -1, 1));
    const nn::Tensor2D ker(k, k, uniform(rng, k * k, -1, 1));
    const auto cc = nn::cross_correlate2d(in, ker, g);
    const auto cv = nn::convolve2d(in, ker, g);
    const auto mx = nn::pool2d(in, g, nn::PoolMode::max);
    const auto mn = nn::pool2d(in, g, nn::PoolMode::mean);
    const std::size_t oh = (h + 2 * p - k) / s + 1, ow = (w + 2 * p - k) / s + 1;
    for (const auto* t : {&cc, &cv, &mx, &mn}) shapes_ok &= t->height() == oh && t->width() == ow;
    worst = std::max({worst, oracle::max_rel_error(cc, oracle::correlate(in, ker, s, p)),
                      oracle::max_rel_error(cv, oracle::correlate(in, oracle::rotate180(ker), s, p)),
                      oracle::max_rel_error(mx, oracle::pool(in, k, s, p, nn::PoolMode::max)),
                      oracle::max_rel_error(mn, oracle::pool(in, k, s, p, nn::PoolMode::mean))});
    ++instances;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d instances, max rel err %.2e, output shapes %s", instances, worst,
                shapes_ok ? "ok" : "WRONG");
  return {shapes_ok && worst <= 1e-5, buf};
}

fusion::FeatureMatrix random_labelled(std::mt19937_64& rng, std::size_t rows, std::size_t dim, double spread) {
  fusion::FeatureMatrix m{rows, dim, uniform(rng, rows * dim, -spread, spread), {}};
  for (std::size_t r = 0; r < rows; ++r) m.labels.push_back(r % 2 ? Label::nofinding : Label::covid);
  std::shuffle(m.labels.begin(), m.labels.end(), rng);
  return m;
}

Outcome svm_numerics() {
  std::mt19937_64 rng(977);
  std::uniform_real_distribution<double> cdist(0.05, 5.0);
  double fd_worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_labelled(rng, 3 + trial % 8, 1 + trial % 5, 2.0);
    const double C = cdist(rng);
    const auto w = uniform(rng, m.dim, -1.5, 1.5);
    const auto g = svm::gradient(w, m, C);
    for (std::size_t i = 0; i < m.dim; ++i) {
      auto wp = w, wm = w;
      wp[i] += 1e-5;
      wm[i] -= 1e-5;
      const double fd = (svm::objective(wp, m, C) - svm::objective(wm, m, C)) / 2e-5;
      fd_worst = std::max(fd_worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i])));
    }
  }

  std::uniform_int_distribution<std::size_t> rows(2, 5), dims(1, 2);
  double grid_worst = 0.0;
  bool monotone = true;
  for (int trial = 0; trial < 40; ++trial) {
    auto m = random_labelled(rng, rows(rng), dims(rng), 2.0);
    m.labels[0] = Label::covid;
    m.labels[1] = Label::nofinding;
    const double C = cdist(rng);
    const auto model = svm::train(m, C);
    const auto data = svm::standardize_and_augment(m, model.standardizers);
    grid_worst = std::max(grid_worst, model.report.final_objective - oracle::svm_grid_minimum(data, C));
    const auto& tr = model.report.objective_trace;
    for (std::size_t i = 1; i < tr.size(); ++i) monotone &= tr[i] <= tr[i - 1];
  }
  for (int trial = 0; trial < 10; ++trial) {
    const auto model = svm::train(random_labelled(rng, 60, 8, 3.0), 2.0);
    const auto& tr = model.report.objective_trace;
    for (std::size_t i = 1; i < tr.size(); ++i) monotone &= tr[i] <= tr[i - 1];
  }
  char buf[200];
  std::snprintf(buf, sizeof buf, "FD max rel err %.2e (50 inst), objective - grid min <= %.2e (40 inst), trace %s",
                fd_worst, grid_worst, monotone ? "non-increasing" : "INCREASES");
  return {fd_worst < 1e-4 && grid_worst <= 1e-3 && monotone, buf};
}

Outcome ranking_oracle() {
  std::mt19937_64 rng(4242);
  int order_ok = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = random_labelled(rng, 20, 10, 3.0);
    const auto got = fusion::rank_features(m);
    const auto want = oracle::rank(m);
    order_ok += got.order == want.order;
    for (std::size_t c = 0; c < 10; ++c) worst = std::max(worst, std::abs(got.t_values[c] - want.t[c]));
  }
  // Constant columns carry no class information and must come last.
  auto m = random_labelled(rng, 20, 10, 3.0);
  for (std::size_t r = 0; r < 20; ++r) {
    m.values[r * 10 + 1] = 2.0;
    m.values[r * 10 + 6] = -5.0;
  }
  const auto r = fusion::rank_features(m);
  const bool last = r.order[8] == 1 && r.order[9] == 6;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d/50 orders exact, max |dt| %.2e, class-independent columns last: %s", order_ok,
                worst, last ? "yes" : "NO");
  return {order_ok == 50 && worst <= 1e-9 && last, buf};
}

Outcome end_to_end() {
  const fs::path base = fs::temp_directory_path() / "fuserank_acceptance_e2e";
  fs::remove_all(base);
  auto a = pipeline::PipelineConfig::load(fs::path(FUSERANK_FIXTURE_DIR) / "synthetic" / "config.json");
  auto b = a;
  a.output_dir = base / "run_a";
  b.output_dir = base / "run_b";
  const auto ra = pipeline::cmd_pipeline(a);
  const auto rb = pipeline::cmd_pipeline(b);
  bool identical = ra.to_json(false) == rb.to_json(false);
  for (const char* f : {"patches/manifest.jsonl", "features.frft", "selection.json", "svm_model.json", "split.json"})
    identical &= io::read_file_bytes(a.output_dir / f) == io::read_file_bytes(b.output_dir / f);
  auto strip = [](const fs::path& p) {
    auto j = nlohmann::json::parse(io::read_text_file(p));
    j.erase("timings");
    return j;
  };
  identical &= strip(a.report_json_path()) == strip(b.report_json_path());
  const double acc = ra.evaluation.accuracy.value_or(0.0);
  fs::remove_all(base);
  char buf[200];
  std::snprintf(buf, sizeof buf, "test accuracy %.2f%% on %llu rows, artifacts %s across two runs", acc * 100.0,
                static_cast<unsigned long long>(ra.evaluation.confusion.total()),
                identical ? "byte-identical" : "DIFFER");
  return {acc >= 0.90 && identical, buf};
}

Outcome split_arithmetic() {
  std::vector<Label> labels;
  for (int i = 0; i < 3000; ++i) {
    labels.push_back(Label::covid);
    labels.push_back(Label::nofinding);
  }
  const auto s = dataset::split_indices(labels, 0.75, 0);
  const auto covid_test = std::count_if(s.test.begin(), s.test.end(), [&](auto i) { return labels[i] == Label::covid; });
  const auto nf_test = static_cast<long>(s.test.size()) - covid_test;
  bool rows_ok = true;
  for (const auto& row : published::kRows) rows_ok &= row.tp + row.fn == 750 && row.tn + row.fp == 750;
  const bool ok = s.train.size() == 4500 && s.test.size() == 1500 && covid_test == 750 && nf_test == 750 && rows_ok;
  return {ok, std::to_string(s.train.size()) + "/" + std::to_string(s.test.size()) + " train/test, test covid " +
                  std::to_string(covid_test) + " nofinding " + std::to_string(nf_test) +
                  (rows_ok ? ", published row sums 750" : ", published row sums DIFFER")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"metric-reproduction", 1.0, metric_reproduction},
      {"confusion-report-reproduction", 1.0, confusion_report},
      {"nn-core-oracle-suite", 5.0, nn_oracle},
      {"svm-numerical-suite", 30.0, svm_numerics},
      {"ranking-oracle", 5.0, ranking_oracle},
      {"end-to-end-synthetic", 120.0, end_to_end},
      {"split-arithmetic", 1.0, split_arithmetic},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = out.ok && in_time;
    failures += !pass;
    std::printf("%s %s (%.3fs, limit %.0fs%s): %s\n", pass ? "PASS" : "FAIL", c.name.c_str(), secs, c.budget_seconds,
                in_time ? "" : ", OVER TIME", out.detail.c_str());
  }
  std::fflush(stdout);
  return failures == 0 ? 0 : 1;
}
