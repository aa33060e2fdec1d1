// fuserank: command-line driver for the patch -> backbone features -> fusion
// -> t-test ranking -> squared-hinge SVM -> evaluation pipeline.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fuserank/error.hpp"
#include "fuserank/pipeline.hpp"

namespace {

using fuserank::ErrorKind;
using fuserank::pipeline::PipelineConfig;

enum ExitCode : int { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4, kStale = 5 };

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return kConfig;
    case ErrorKind::numeric: return kNumeric;
    case ErrorKind::staleness: return kStale;
    default: return kData;
  }
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<double> C;
  std::optional<double> train_fraction;
  std::optional<std::string> output_dir;
  std::optional<std::size_t> patch_size;
  std::optional<std::size_t> count_per_class;
  std::optional<std::size_t> max_iterations;

  void apply(PipelineConfig& c) const {
    if (seed) c.dataset.seed = *seed;
    if (k) c.k = *k;
    if (C) c.C = *C;
    if (train_fraction) c.train_fraction = *train_fraction;
    if (output_dir) c.output_dir = *output_dir;
    if (patch_size) c.dataset.patch_size = *patch_size;
    if (count_per_class) c.dataset.count_per_class = *count_per_class;
    if (max_iterations) c.solver.max_iterations = *max_iterations;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fuserank: fused deep-feature t-test ranking + linear SVM patch classifier"};
  app.require_subcommand(1);

  std::string config_path;
  bool dry_run = false;
  bool resubstitution = false;
  Overrides ov;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Pipeline config (JSON)")->required();
    sub->add_flag("--dry-run", dry_run, "Validate config and input paths without computing");
    sub->add_option("--seed", ov.seed, "Override dataset.seed");
    sub->add_option("--k", ov.k, "Override fusion.k");
    sub->add_option("--C", ov.C, "Override svm.C");
    sub->add_option("--train-fraction", ov.train_fraction, "Override split.train_fraction");
    sub->add_option("--output-dir", ov.output_dir, "Override output_dir");
    sub->add_option("--patch-size", ov.patch_size, "Override dataset.patch_size");
    sub->add_option("--count-per-class", ov.count_per_class, "Override dataset.count_per_class");
    sub->add_option("--max-iterations", ov.max_iterations, "Override svm.max_iterations");
  };
  auto* extract = app.add_subcommand("extract", "Sample labelled patches and write the manifest");
  auto* features = app.add_subcommand("features", "Run the three backbones and write the fused feature store");
  auto* train = app.add_subcommand("train", "Split, rank, select top-k and train the SVM");
  auto* evaluate = app.add_subcommand("evaluate", "Score held-out rows and write the run report");
  auto* pipeline = app.add_subcommand("pipeline", "Run all stages in order");
  for (auto* sub : {extract, features, train, evaluate, pipeline}) add_common(sub);
  for (auto* sub : {evaluate, pipeline})
    sub->add_flag("--resubstitution", resubstitution, "Evaluate on training rows (labelled resubstitution)");

  CLI11_PARSE(app, argc, argv);

  using namespace fuserank::pipeline;
  std::string stage = "config";
  try {
    PipelineConfig config = PipelineConfig::load(config_path);
    ov.apply(config);
    config.validate(dry_run);
    if (dry_run) {
      std::cout << "config OK (" << config.full_hash().substr(0, 12) << "); inputs present\n";
      return kOk;
    }
    EvaluateOptions opts;
    opts.resubstitution = resubstitution;
    if (extract->parsed()) {
      stage = "extract";
      cmd_extract(config);
      std::cout << "patches written to " << config.patches_dir().string() << "\n";
    } else if (features->parsed()) {
      stage = "features";
      cmd_features(config);
      std::cout << "feature store written to " << config.store_path().string() << "\n";
    } else if (train->parsed()) {
      stage = "train";
      cmd_train(config);
      std::cout << "model written to " << config.model_path().string() << "\n";
    } else {
      stage = evaluate->parsed() ? "evaluate" : "pipeline";
      const RunReport report = evaluate->parsed() ? cmd_evaluate(config, opts) : cmd_pipeline(config, opts);
      std::cout << report.to_text();
    }
    return kOk;
  } catch (const fuserank::Error& e) {
    std::cerr << "fuserank " << stage << ": " << fuserank::to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "fuserank " << stage << ": " << e.what() << "\n";
    return kData;
  }
}
