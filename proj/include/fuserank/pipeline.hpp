#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuserank/evaluation.hpp"
#include "fuserank/svm.hpp"

namespace fuserank::pipeline {

namespace fs = std::filesystem;

struct DatasetConfig {
  fs::path source_dir;
  fs::path regions_file;
  std::string subset_name = "subset";
  std::size_t patch_size = 32;
  std::size_t count_per_class = 3000;
  std::uint64_t seed = 0;
};

struct BackboneConfig {
  std::vector<std::string> order{"vgg16", "googlenet", "resnet50"};
  std::vector<fs::path> paths;
};

struct PipelineConfig {
  DatasetConfig dataset;
  BackboneConfig backbones;
  std::size_t k = 1500;
  double C = 1.0;
  svm::SolverConfig solver;
  double train_fraction = 0.75;
  fs::path output_dir = "fuserank_out";

  /// Relative paths in the file are resolved against base_dir.
  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base_dir);
  static PipelineConfig load(const fs::path& path);
  nlohmann::json to_json() const;

  /// Value invariants; with check_paths also requires inputs to exist.
  void validate(bool check_paths) const;

  /// SHA-256 over the sections each stage depends on. output_dir never
  /// participates.
  std::string extract_hash() const;
  std::string features_hash() const;
  std::string train_hash() const;
  std::string full_hash() const;

  fs::path patches_dir() const { return output_dir / "patches"; }
  fs::path store_path() const { return output_dir / "features.frft"; }
  fs::path selection_path() const { return output_dir / "selection.json"; }
  fs::path model_path() const { return output_dir / "svm_model.json"; }
  fs::path split_path() const { return output_dir / "split.json"; }
  fs::path report_json_path() const { return output_dir / "report.json"; }
  fs::path report_text_path() const { return output_dir / "report.txt"; }
};

/// Worker count for feature extraction: FUSERANK_THREADS if set (>= 1), else
/// hardware concurrency.
std::size_t thread_budget();

struct StageTimings {
  std::map<std::string, double> seconds;
};

void cmd_extract(const PipelineConfig& config, StageTimings* timings = nullptr);
void cmd_features(const PipelineConfig& config, StageTimings* timings = nullptr);
void cmd_train(const PipelineConfig& config, StageTimings* timings = nullptr);

struct EvaluateOptions {
  /// Evaluate on the training rows; the report is labelled "resubstitution".
  bool resubstitution = false;
  /// Test hook: report this confusion matrix instead of the computed one.
  std::optional<eval::ConfusionMatrix> injected_confusion;
};

struct RunReport {
  std::string config_hash;
  std::string evaluated_on;  // "test" or "resubstitution"
  StageTimings timings;
  nlohmann::json dataset_counts;
  nlohmann::json selection_summary;
  nlohmann::json solver_report;
  eval::EvaluationReport evaluation;

  nlohmann::json to_json(bool include_timings = true) const;
  std::string to_text() const;
};

RunReport cmd_evaluate(const PipelineConfig& config, const EvaluateOptions& options = {},
                       StageTimings* timings = nullptr);

/// extract -> features -> train -> evaluate; the first failure aborts with
/// an error whose message is prefixed by the stage name.
RunReport cmd_pipeline(const PipelineConfig& config, const EvaluateOptions& options = {});

/// Split membership persisted by cmd_train.
struct SplitRecord {
  std::string config_hash;
  std::string store_digest;
  std::size_t rows = 0;
  std::uint64_t seed = 0;
  double train_fraction = 0.75;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

void write_split(const fs::path& path, const SplitRecord& split);
SplitRecord read_split(const fs::path& path);

}  // namespace fuserank::pipeline
