#include "fuserank/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "fuserank/error.hpp"
#include "fuserank/fusion.hpp"
#include "fuserank/io_util.hpp"
#include "fuserank/patcher.hpp"
#include "fuserank/runtime.hpp"

namespace fuserank::pipeline {

using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, std::string("config field '") + key + "' has the wrong type");
  }
}

class StageClock {
 public:
  StageClock(StageTimings* sink, std::string stage)
      : sink_(sink), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
  ~StageClock() {
    if (sink_) {
      sink_->seconds[stage_] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
  }

 private:
  StageTimings* sink_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

void require_hash(const std::string& found, const std::string& expected, const fs::path& artifact) {
  if (found != expected)
    fail(ErrorKind::staleness, artifact.string() + " was produced by a different configuration (hash " +
                                   (found.empty() ? std::string("missing") : found.substr(0, 12)) + ", expected " +
                                   expected.substr(0, 12) + "); rerun the earlier stage");
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) fail(ErrorKind::io, std::string(what) + " not found: " + p.string());
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) fail(ErrorKind::config, "config must be a JSON object");
  PipelineConfig c;
  const json ds = j.value("dataset", json::object());
  c.dataset.source_dir = resolve(base_dir, get_or<std::string>(ds, "source_dir", "."));
  c.dataset.regions_file = resolve(base_dir, get_or<std::string>(ds, "regions_file", "regions.json"));
  c.dataset.subset_name = get_or<std::string>(ds, "subset_name", c.dataset.subset_name);
  c.dataset.patch_size = get_or<std::size_t>(ds, "patch_size", c.dataset.patch_size);
  c.dataset.count_per_class = get_or<std::size_t>(ds, "count_per_class", c.dataset.count_per_class);
  c.dataset.seed = get_or<std::uint64_t>(ds, "seed", c.dataset.seed);

  const json bb = j.value("backbones", json::object());
  c.backbones.order = get_or<std::vector<std::string>>(bb, "order", c.backbones.order);
  for (const auto& p : get_or<std::vector<std::string>>(bb, "paths", {})) c.backbones.paths.push_back(resolve(base_dir, p));

  c.k = get_or<std::size_t>(j.value("fusion", json::object()), "k", c.k);
  const json sv = j.value("svm", json::object());
  c.C = get_or<double>(sv, "C", c.C);
  c.solver.max_iterations = get_or<std::size_t>(sv, "max_iterations", c.solver.max_iterations);
  c.solver.gradient_tolerance = get_or<double>(sv, "gradient_tolerance", c.solver.gradient_tolerance);
  c.solver.initial_step = get_or<double>(sv, "initial_step", c.solver.initial_step);
  c.solver.shrink = get_or<double>(sv, "shrink", c.solver.shrink);
  c.solver.sufficient_decrease = get_or<double>(sv, "sufficient_decrease", c.solver.sufficient_decrease);
  c.train_fraction = get_or<double>(j.value("split", json::object()), "train_fraction", c.train_fraction);
  c.output_dir = resolve(base_dir, get_or<std::string>(j, "output_dir", c.output_dir.string()));
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::config, "config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_text_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

json PipelineConfig::to_json() const {
  std::vector<std::string> paths;
  for (const auto& p : backbones.paths) paths.push_back(p.generic_string());
  return json{{"dataset",
               {{"source_dir", dataset.source_dir.generic_string()},
                {"regions_file", dataset.regions_file.generic_string()},
                {"subset_name", dataset.subset_name},
                {"patch_size", dataset.patch_size},
                {"count_per_class", dataset.count_per_class},
                {"seed", dataset.seed}}},
              {"backbones", {{"order", backbones.order}, {"paths", paths}}},
              {"fusion", {{"k", k}}},
              {"svm",
               {{"C", C},
                {"max_iterations", solver.max_iterations},
                {"gradient_tolerance", solver.gradient_tolerance},
                {"initial_step", solver.initial_step},
                {"shrink", solver.shrink},
                {"sufficient_decrease", solver.sufficient_decrease}}},
              {"split", {{"train_fraction", train_fraction}}},
              {"output_dir", output_dir.generic_string()}};
}

void PipelineConfig::validate(bool check_paths) const {
  if (dataset.patch_size != 16 && dataset.patch_size != 32)
    fail(ErrorKind::config, "dataset.patch_size must be 16 or 32, got " + std::to_string(dataset.patch_size));
  if (dataset.count_per_class < 2) fail(ErrorKind::config, "dataset.count_per_class must be >= 2");
  if (backbones.order.size() != 3 || backbones.paths.size() != 3)
    fail(ErrorKind::config, "exactly 3 backbones (order and paths) are required");
  if (k < 1 || k > 3 * backbone::kFeatureDim)
    fail(ErrorKind::config, "fusion.k must lie in [1, 3000], got " + std::to_string(k));
  if (!(C > 0)) fail(ErrorKind::config, "svm.C must be positive");
  if (!(train_fraction > 0 && train_fraction < 1)) fail(ErrorKind::config, "split.train_fraction must lie in (0, 1)");
  try {
    solver.validate();
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
  if (!check_paths) return;
  if (!fs::is_directory(dataset.source_dir))
    fail(ErrorKind::config, "dataset.source_dir is not a directory: " + dataset.source_dir.string());
  if (!fs::exists(dataset.regions_file))
    fail(ErrorKind::config, "dataset.regions_file not found: " + dataset.regions_file.string());
  for (const auto& p : backbones.paths)
    if (!fs::exists(p)) fail(ErrorKind::config, "backbone model not found: " + p.string());
}

std::string PipelineConfig::extract_hash() const { return io::sha256_hex(to_json().at("dataset").dump()); }

std::string PipelineConfig::features_hash() const {
  const json j = to_json();
  return io::sha256_hex(json{{"dataset", j.at("dataset")}, {"backbones", j.at("backbones")}}.dump());
}

std::string PipelineConfig::train_hash() const {
  json j = to_json();
  j.erase("output_dir");
  return io::sha256_hex(j.dump());
}

std::string PipelineConfig::full_hash() const { return train_hash(); }

std::size_t thread_budget() {
  if (const char* env = std::getenv("FUSERANK_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void cmd_extract(const PipelineConfig& config, StageTimings* timings) {
  StageClock clock(timings, "extract");
  config.validate(false);
  const auto regions = dataset::read_regions(config.dataset.regions_file);

  std::set<std::string> ids;
  for (const auto& r : regions) ids.insert(r.image_id);
  std::vector<dataset::SourceImage> images;
  for (const auto& id : ids) {
    const fs::path p = config.dataset.source_dir / id;
    require_exists(p, "source image");
    images.push_back({id, dataset::read_pgm(p)});
  }
  const dataset::PatchSet ps =
      dataset::extract_patches(images, regions, config.dataset.patch_size, config.dataset.count_per_class,
                               config.dataset.seed, config.dataset.subset_name);
  dataset::write_manifest(ps, config.patches_dir(), config.extract_hash());
}

void cmd_features(const PipelineConfig& config, StageTimings* timings) {
  StageClock clock(timings, "features");
  config.validate(false);
  std::string manifest_hash;
  const dataset::PatchSet ps = dataset::read_manifest(config.patches_dir(), &manifest_hash);
  require_hash(manifest_hash, config.extract_hash(), config.patches_dir() / dataset::kManifestName);

  std::vector<backbone::Backbone> backbones;
  for (const auto& p : config.backbones.paths) {
    try {
      backbones.push_back(backbone::Backbone::load(p));
    } catch (const Error& e) {
      fail(e.kind(), "loading backbone " + p.string() + ": " + e.what());
    }
  }

  const std::size_t rows = ps.patches.size();
  const std::size_t dim = 3 * backbone::kFeatureDim;
  fusion::FeatureStore store;
  store.backbone_order = config.backbones.order;
  store.config_hash = config.features_hash();
  store.matrix.rows = rows;
  store.matrix.dim = dim;
  store.matrix.values.resize(rows * dim);
  for (const auto& p : ps.patches) store.matrix.labels.push_back(p.label);

  // Each worker writes only its own rows, so the output does not depend on
  // scheduling.
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= rows) return;
      try {
        const auto& patch = ps.patches[i];
        std::vector<backbone::FeatureVector> feats;
        for (const auto& b : backbones) {
          const auto& in = b.graph().input_shape;
          try {
            feats.push_back(b.infer_features(dataset::normalize_patch(patch, in.height, in.width, in.channels)));
          } catch (const Error& e) {
            fail(e.kind(), "patch " + std::to_string(i) + " (" + std::string(to_string(patch.label)) + " from " +
                               patch.provenance.image_id + " at " + std::to_string(patch.provenance.x) + "," +
                               std::to_string(patch.provenance.y) + ") backbone '" + b.graph().name + "': " + e.what());
          }
        }
        const std::vector<double> fused = fusion::fuse_features(feats[0], feats[1], feats[2]);
        std::copy(fused.begin(), fused.end(), store.matrix.values.begin() + static_cast<std::ptrdiff_t>(i * dim));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(rows);
        return;
      }
    }
  };
  const std::size_t workers = std::min(thread_budget(), std::max<std::size_t>(rows, 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
  }
  if (first_error) std::rethrow_exception(first_error);
  fusion::write_store(config.store_path(), store);
}

void write_split(const fs::path& path, const SplitRecord& split) {
  const json j{{"config_hash", split.config_hash}, {"store_digest", split.store_digest},
               {"rows", split.rows},               {"seed", split.seed},
               {"train_fraction", split.train_fraction}, {"train", split.train},
               {"test", split.test}};
  io::write_file_atomic(path, j.dump() + "\n");
}

SplitRecord read_split(const fs::path& path) {
  try {
    const json j = json::parse(io::read_text_file(path));
    return {j.at("config_hash").get<std::string>(), j.at("store_digest").get<std::string>(),
            j.at("rows").get<std::size_t>(),        j.at("seed").get<std::uint64_t>(),
            j.at("train_fraction").get<double>(),   j.at("train").get<std::vector<std::size_t>>(),
            j.at("test").get<std::vector<std::size_t>>()};
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
}

void cmd_train(const PipelineConfig& config, StageTimings* timings) {
  StageClock clock(timings, "train");
  config.validate(false);
  require_exists(config.store_path(), "feature store");
  const auto store_bytes = io::read_file_bytes(config.store_path());
  const fusion::FeatureStore store = fusion::decode_store(store_bytes);
  require_hash(store.config_hash, config.features_hash(), config.store_path());
  if (config.k > store.matrix.dim)
    fail(ErrorKind::config, "fusion.k=" + std::to_string(config.k) + " exceeds feature dim " + std::to_string(store.matrix.dim));

  const dataset::SplitIndices idx = dataset::split_indices(store.matrix.labels, config.train_fraction, config.dataset.seed);
  const fusion::FeatureMatrix train_rows = store.matrix.select_rows(idx.train);
  const fusion::RankedSelection ranking = fusion::rank_features(train_rows);
  const fusion::FeatureMatrix selected = fusion::select_top_k(train_rows, ranking, config.k);
  const svm::LinearSvmModel model = svm::train(selected, config.C, config.solver);

  const std::string hash = config.train_hash();
  fusion::write_selection(config.selection_path(), ranking, hash);
  svm::write_model(config.model_path(), model, hash);
  write_split(config.split_path(), SplitRecord{hash, io::sha256_hex(store_bytes), store.matrix.rows, config.dataset.seed,
                                               config.train_fraction, idx.train, idx.test});
}

json RunReport::to_json(bool include_timings) const {
  json j{{"config_hash", config_hash},
         {"evaluated_on", evaluated_on},
         {"dataset", dataset_counts},
         {"selection", selection_summary},
         {"solver_report", solver_report},
         {"evaluation", json::parse(eval::report_to_json(evaluation))}};
  if (include_timings) j["timings"] = timings.seconds;
  return j;
}

std::string RunReport::to_text() const {
  std::ostringstream out;
  out << "fuserank run report\n";
  out << "config hash: " << config_hash << "\n";
  out << "evaluated on: " << evaluated_on;
  if (evaluated_on == "resubstitution") out << " (training rows; not a test estimate)";
  out << "\n";
  out << "rows: " << dataset_counts.dump() << "\n";
  out << "selection: k=" << selection_summary.value("k", 0) << " of " << selection_summary.value("dim", 0) << "\n";
  out << "solver: " << solver_report.dump() << "\n\n";
  const std::string title = evaluated_on == "test" ? "Confusion Matrix for Test Data"
                                                   : "Confusion Matrix for Training Data (resubstitution)";
  out << eval::render_confusion_report(evaluation.confusion, title) << "\n";
  out << eval::render_metrics(evaluation);
  if (!timings.seconds.empty()) {
    out << "\ntimings (s):";
    for (const auto& [stage, s] : timings.seconds) out << " " << stage << "=" << s;
    out << "\n";
  }
  return out.str();
}

RunReport cmd_evaluate(const PipelineConfig& config, const EvaluateOptions& options, StageTimings* timings) {
  RunReport report;
  {
    StageClock clock(timings, "evaluate");
    config.validate(false);
    for (const auto& p : {config.store_path(), config.selection_path(), config.model_path(), config.split_path()})
      require_exists(p, "artifact");

    const auto store_bytes = io::read_file_bytes(config.store_path());
    const fusion::FeatureStore store = fusion::decode_store(store_bytes);
    require_hash(store.config_hash, config.features_hash(), config.store_path());
    const std::string hash = config.train_hash();
    std::string sel_hash, model_hash;
    const fusion::RankedSelection ranking = fusion::read_selection(config.selection_path(), &sel_hash);
    require_hash(sel_hash, hash, config.selection_path());
    const svm::LinearSvmModel model = svm::read_model(config.model_path(), &model_hash);
    require_hash(model_hash, hash, config.model_path());
    const SplitRecord split = read_split(config.split_path());
    require_hash(split.config_hash, hash, config.split_path());
    if (split.rows != store.matrix.rows || split.store_digest != io::sha256_hex(store_bytes))
      fail(ErrorKind::staleness, "split.json does not match the current feature store; rerun train");
    if (ranking.order.size() != store.matrix.dim || model.dim != config.k)
      fail(ErrorKind::staleness, "selection/model dimensions do not match the feature store and fusion.k");

    const auto& rows = options.resubstitution ? split.train : split.test;
    const fusion::FeatureMatrix subset = fusion::select_top_k(store.matrix.select_rows(rows), ranking, config.k);
    std::vector<Label> predicted;
    predicted.reserve(subset.rows);
    for (std::size_t r = 0; r < subset.rows; ++r) predicted.push_back(svm::predict(model, subset.row(r)).label);

    const eval::ConfusionMatrix cm =
        options.injected_confusion ? *options.injected_confusion : eval::confusion(predicted, subset.labels);
    report.evaluation = eval::evaluate_metrics(cm);
    report.config_hash = config.full_hash();
    report.evaluated_on = options.resubstitution ? "resubstitution" : "test";

    const auto count = [](const std::vector<Label>& labels, const std::vector<std::size_t>& idx, Label l) {
      return std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return labels[i] == l; });
    };
    const auto& labels = store.matrix.labels;
    report.dataset_counts = json{{"rows", store.matrix.rows},
                                 {"train", {{"covid", count(labels, split.train, Label::covid)},
                                            {"nofinding", count(labels, split.train, Label::nofinding)}}},
                                 {"test", {{"covid", count(labels, split.test, Label::covid)},
                                           {"nofinding", count(labels, split.test, Label::nofinding)}}}};
    json top = json::array();
    for (std::size_t i = 0; i < std::min<std::size_t>(10, ranking.order.size()); ++i)
      top.push_back({{"feature", ranking.order[i]}, {"t", ranking.t_values[ranking.order[i]]}});
    report.selection_summary = json{{"k", config.k}, {"dim", store.matrix.dim}, {"top", top}};
    report.solver_report = json{{"iterations", model.report.iterations},
                                {"final_objective", model.report.final_objective},
                                {"final_gradient_norm", model.report.final_gradient_norm},
                                {"converged", model.report.converged}};
  }
  if (timings) report.timings = *timings;
  io::write_file_atomic(config.report_json_path(), report.to_json().dump(2) + "\n");
  io::write_file_atomic(config.report_text_path(), report.to_text());
  return report;
}

RunReport cmd_pipeline(const PipelineConfig& config, const EvaluateOptions& options) {
  StageTimings timings;
  const auto stage = [](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      fail(e.kind(), std::string(name) + ": " + e.what());
    }
  };
  stage("extract", [&] { cmd_extract(config, &timings); });
  stage("features", [&] { cmd_features(config, &timings); });
  stage("train", [&] { cmd_train(config, &timings); });
  return stage("evaluate", [&] { return cmd_evaluate(config, options, &timings); });
}

}  // namespace fuserank::pipeline
