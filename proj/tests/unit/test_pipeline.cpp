#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "fuserank/error.hpp"
#include "fuserank/io_util.hpp"
#include "fuserank/pipeline.hpp"
#include "fuserank/runtime.hpp"
#include "test_support.hpp"

namespace fuserank::pipeline {
namespace {

using fuserank::testing::fixture_dir;
using fuserank::testing::TempDir;
using nlohmann::json;

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no fuserank::Error thrown";
  return ErrorKind::io;
}

fs::path config_path() { return fixture_dir() / "synthetic" / "config.json"; }

PipelineConfig small_config(const fs::path& out, std::size_t per_class = 40) {
  auto c = PipelineConfig::load(config_path());
  c.output_dir = out;
  c.dataset.count_per_class = per_class;
  return c;
}

std::string slurp(const fs::path& p) { return io::read_text_file(p); }

json report_without_timings(const fs::path& p) {
  auto j = json::parse(slurp(p));
  j.erase("timings");
  return j;
}

class ThreadEnv {
 public:
  explicit ThreadEnv(const char* value) {
    if (const char* old = std::getenv("FUSERANK_THREADS")) saved_ = old;
    ::setenv("FUSERANK_THREADS", value, 1);
  }
  ~ThreadEnv() {
    if (saved_) ::setenv("FUSERANK_THREADS", saved_->c_str(), 1);
    else ::unsetenv("FUSERANK_THREADS");
  }

 private:
  std::optional<std::string> saved_;
};

TEST(Config, LoadsFixtureAndResolvesPaths) {
  const auto c = PipelineConfig::load(config_path());
  EXPECT_EQ(c.dataset.patch_size, 16u);
  EXPECT_EQ(c.k, 1500u);
  ASSERT_EQ(c.backbones.paths.size(), 3u);
  EXPECT_TRUE(fs::exists(c.backbones.paths[0]));
  EXPECT_TRUE(fs::exists(c.dataset.regions_file));
  EXPECT_NO_THROW(c.validate(true));
}

TEST(Config, Invariants) {
  const auto base = PipelineConfig::load(config_path());
  auto c = base;
  c.dataset.patch_size = 24;
  EXPECT_EQ(kind_of([&] { c.validate(false); }), ErrorKind::config);
  c = base;
  c.k = 3001;
  EXPECT_EQ(kind_of([&] { c.validate(false); }), ErrorKind::config);
  c = base;
  c.k = 0;
  EXPECT_EQ(kind_of([&] { c.validate(false); }), ErrorKind::config);
  c = base;
  c.backbones.paths.pop_back();
  EXPECT_EQ(kind_of([&] { c.validate(false); }), ErrorKind::config);
  c = base;
  c.dataset.regions_file = "/nonexistent/regions.json";
  EXPECT_EQ(kind_of([&] { c.validate(true); }), ErrorKind::config);
}

TEST(Config, HashesAreStageScoped) {
  const auto base = PipelineConfig::load(config_path());
  auto c = base;
  c.output_dir = "/somewhere/else";
  EXPECT_EQ(c.full_hash(), base.full_hash());
  c.k = 3000;
  EXPECT_EQ(c.extract_hash(), base.extract_hash());
  EXPECT_EQ(c.features_hash(), base.features_hash());
  EXPECT_NE(c.train_hash(), base.train_hash());
  c = base;
  c.dataset.seed = 8;
  EXPECT_NE(c.extract_hash(), base.extract_hash());
}

TEST(ExtractStage, RerunIsByteIdentical) {
  TempDir tmp("extract");
  const auto c = small_config(tmp.path());
  cmd_extract(c);
  const auto first = slurp(c.patches_dir() / "manifest.jsonl");
  const auto patch = io::read_file_bytes(c.patches_dir() / "covid_3.pgm");
  cmd_extract(c);
  EXPECT_EQ(slurp(c.patches_dir() / "manifest.jsonl"), first);
  EXPECT_EQ(io::read_file_bytes(c.patches_dir() / "covid_3.pgm"), patch);
  EXPECT_NE(first.find(c.extract_hash()), std::string::npos);
}

TEST(ExtractStage, MissingRegionsFileNamesPath) {
  TempDir tmp("extract_missing");
  auto c = small_config(tmp.path());
  c.dataset.regions_file = tmp.path() / "nope.json";
  try {
    cmd_extract(c);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("nope.json"), std::string::npos);
  }
}

TEST(FeaturesStage, RowsMatchDirectInference) {
  TempDir tmp("features");
  const auto c = small_config(tmp.path(), 3);
  cmd_extract(c);
  cmd_features(c);
  const auto store = fusion::read_store(c.store_path());
  EXPECT_EQ(store.matrix.rows, 6u);
  EXPECT_EQ(store.matrix.dim, 3000u);
  EXPECT_EQ(store.backbone_order, c.backbones.order);
  EXPECT_EQ(store.config_hash, c.features_hash());

  const auto ps = dataset::read_manifest(c.patches_dir());
  for (std::size_t b = 0; b < 3; ++b) {
    const auto bb = backbone::Backbone::load(c.backbones.paths[b]);
    const auto& in = bb.graph().input_shape;
    for (std::size_t r = 0; r < ps.patches.size(); ++r) {
      const auto f = bb.infer_features(dataset::normalize_patch(ps.patches[r], in.height, in.width, in.channels));
      for (std::size_t i = 0; i < 1000; ++i)
        ASSERT_EQ(store.matrix.at(r, b * 1000 + i), static_cast<double>(static_cast<float>(f.values[i])));
    }
  }
}

TEST(FeaturesStage, ThreadCountDoesNotChangeBytes) {
  TempDir tmp("features_threads");
  const auto c = small_config(tmp.path(), 12);
  cmd_extract(c);
  std::vector<std::uint8_t> one, many;
  {
    ThreadEnv env("1");
    EXPECT_EQ(thread_budget(), 1u);
    cmd_features(c);
    one = io::read_file_bytes(c.store_path());
  }
  {
    ThreadEnv env("5");
    EXPECT_EQ(thread_budget(), 5u);
    cmd_features(c);
    many = io::read_file_bytes(c.store_path());
  }
  EXPECT_EQ(one, many);
}

TEST(FeaturesStage, StaleManifestRefused) {
  TempDir tmp("features_stale");
  auto c = small_config(tmp.path(), 3);
  cmd_extract(c);
  c.dataset.seed += 1;
  EXPECT_EQ(kind_of([&] { cmd_features(c); }), ErrorKind::staleness);
}

TEST(TrainStage, TestRowsDoNotInfluenceModel) {
  TempDir tmp("train_leak");
  const auto c = small_config(tmp.path());
  cmd_extract(c);
  cmd_features(c);
  cmd_train(c);
  const auto model = io::read_file_bytes(c.model_path());
  const auto selection = io::read_file_bytes(c.selection_path());

  auto store = fusion::read_store(c.store_path());
  const auto split = read_split(c.split_path());
  ASSERT_FALSE(split.test.empty());
  for (std::size_t r : split.test)
    for (std::size_t i = 0; i < store.matrix.dim; ++i) store.matrix.values[r * store.matrix.dim + i] *= -3.0;
  fusion::write_store(c.store_path(), store);
  cmd_train(c);
  EXPECT_EQ(io::read_file_bytes(c.model_path()), model);
  EXPECT_EQ(io::read_file_bytes(c.selection_path()), selection);
  EXPECT_EQ(read_split(c.split_path()).test, split.test);
}

TEST(TrainStage, KOfFullWidthAndHalfWidth) {
  TempDir tmp("train_k");
  auto c = small_config(tmp.path());
  cmd_extract(c);
  cmd_features(c);
  for (std::size_t k : {1500u, 3000u}) {
    c.k = k;
    cmd_train(c);
    std::string hash;
    const auto m = svm::read_model(c.model_path(), &hash);
    EXPECT_EQ(m.dim, k);
    EXPECT_EQ(m.weights.size(), k + 1);
    EXPECT_EQ(hash, c.train_hash());
    EXPECT_EQ(cmd_evaluate(c).selection_summary.at("k"), k);
  }
}

TEST(EvaluateStage, RefusesStaleArtifacts) {
  TempDir tmp("evaluate_stale");
  auto c = small_config(tmp.path());
  cmd_pipeline(c);

  auto changed = c;
  changed.k = 1000;
  EXPECT_EQ(kind_of([&] { cmd_evaluate(changed); }), ErrorKind::staleness);
  changed = c;
  changed.C = 0.5;
  EXPECT_EQ(kind_of([&] { cmd_evaluate(changed); }), ErrorKind::staleness);

  auto store = fusion::read_store(c.store_path());
  store.matrix.values[0] += 1.0;
  fusion::write_store(c.store_path(), store);
  EXPECT_EQ(kind_of([&] { cmd_evaluate(c); }), ErrorKind::staleness);

  fs::remove(c.model_path());
  EXPECT_NE(kind_of([&] { cmd_evaluate(c); }), ErrorKind::staleness);
}

TEST(EvaluateStage, ResubstitutionIsLabelled) {
  TempDir tmp("evaluate_resub");
  const auto c = small_config(tmp.path());
  cmd_pipeline(c);
  const auto r = cmd_evaluate(c, {.resubstitution = true});
  EXPECT_EQ(r.evaluated_on, "resubstitution");
  EXPECT_EQ(r.evaluation.confusion.total(), 60u);
  EXPECT_NE(r.to_text().find("resubstitution"), std::string::npos);
  EXPECT_EQ(json::parse(slurp(c.report_json_path())).at("evaluated_on"), "resubstitution");
  const auto t = cmd_evaluate(c);
  EXPECT_EQ(t.evaluated_on, "test");
  EXPECT_EQ(t.evaluation.confusion.total(), 20u);
}

TEST(EvaluateStage, InjectedConfusionEchoesMetrics) {
  TempDir tmp("evaluate_inject");
  const auto c = small_config(tmp.path());
  cmd_pipeline(c);
  const auto r = cmd_evaluate(c, {.injected_confusion = eval::ConfusionMatrix{742, 732, 18, 8}});
  const auto text = r.to_text();
  for (const char* s : {"98.27%", "98.93%", "97.60%", "97.63%", "98.28%", "96.54%"})
    EXPECT_NE(text.find(s), std::string::npos) << s;
  EXPECT_NE(slurp(c.report_text_path()).find("98.27%"), std::string::npos);
}

TEST(Pipeline, EndToEndDeterministicAndAccurate) {
  TempDir a("e2e_a"), b("e2e_b");
  auto ca = PipelineConfig::load(config_path());
  auto cb = ca;
  ca.output_dir = a.path();
  cb.output_dir = b.path();
  const auto ra = cmd_pipeline(ca);
  const auto rb = cmd_pipeline(cb);

  EXPECT_GE(*ra.evaluation.accuracy, 0.90);
  EXPECT_EQ(ra.evaluated_on, "test");
  EXPECT_EQ(ra.evaluation.confusion.total(), 100u);
  EXPECT_TRUE(ra.solver_report.at("converged").get<bool>());
  for (const auto* name : {"patches/manifest.jsonl", "features.frft", "selection.json", "svm_model.json", "split.json"})
    EXPECT_EQ(io::read_file_bytes(a.path() / name), io::read_file_bytes(b.path() / name)) << name;
  EXPECT_EQ(report_without_timings(ca.report_json_path()), report_without_timings(cb.report_json_path()));
  EXPECT_EQ(ra.to_json(false), rb.to_json(false));
  EXPECT_EQ(ra.config_hash, ca.full_hash());

  for (const auto& entry : fs::recursive_directory_iterator(a.path()))
    EXPECT_NE(entry.path().extension(), ".tmp") << entry.path();
}

TEST(Pipeline, ErrorsCarryStagePrefix) {
  TempDir tmp("pipeline_err");
  auto c = small_config(tmp.path());
  c.backbones.paths[1] = tmp.path() / "missing.frmdl";
  try {
    cmd_pipeline(c);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(std::string(e.what()).rfind("features: ", 0), 0u) << e.what();
    EXPECT_NE(std::string(e.what()).find("missing.frmdl"), std::string::npos);
  }
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FUSERANK_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  TempDir tmp("cli");
  const std::string cfg = "-c " + config_path().string() + " --output-dir " + tmp.path().string();
  EXPECT_EQ(run_cli("pipeline --dry-run " + cfg), 0);
  EXPECT_FALSE(fs::exists(tmp.path() / "features.frft"));
  EXPECT_EQ(run_cli("pipeline --dry-run --patch-size 20 " + cfg), 2);
  EXPECT_EQ(run_cli("evaluate " + cfg), 3);

  EXPECT_EQ(run_cli("pipeline --count-per-class 20 " + cfg), 0);
  EXPECT_TRUE(fs::exists(tmp.path() / "report.json"));
  EXPECT_EQ(run_cli("evaluate --count-per-class 20 --k 100 " + cfg), 5);
  EXPECT_EQ(run_cli("evaluate --count-per-class 20 --resubstitution " + cfg), 0);

  std::ofstream(tmp.path() / "bad.json") << "{\"fusion\": {\"k\": \"many\"}}";
  EXPECT_EQ(run_cli("pipeline --dry-run -c " + (tmp.path() / "bad.json").string()), 2);
}

}  // namespace
}  // namespace fuserank::pipeline
