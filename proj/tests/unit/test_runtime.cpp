#include <bit>
#include <cmath>
#include <fstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "fuserank/error.hpp"
#include "fuserank/io_util.hpp"
#include "fuserank/model.hpp"
#include "fuserank/runtime.hpp"
#include "test_support.hpp"

namespace fuserank::backbone {
namespace {

using fuserank::testing::fixture_dir;
using fuserank::testing::TempDir;
using nlohmann::json;

constexpr const char* kGoldenSha256 = "b2ea3a4e54580739dd77dd76cef215db0a6031fbc5744a3ac568854a179c31d2";

struct Reference {
  nn::Tensor3D input;
  std::vector<double> output;
  json per_layer;
};

Reference load_reference(const std::string& stem, const Shape3& shape) {
  const auto j = json::parse(io::read_text_file(fixture_dir() / (stem + ".ref.json")));
  return {nn::Tensor3D(shape.height, shape.width, shape.channels, j.at("inputs").at(0).get<std::vector<double>>()),
          j.at("outputs").at(0).get<std::vector<double>>(), j.at("per_layer")};
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no fuserank::Error thrown";
  return ErrorKind::io;
}

LayerSpec dense_layer(const std::string& id, const std::string& input, std::size_t units, std::size_t in) {
  LayerSpec l;
  l.id = id;
  l.op = OpKind::dense;
  l.params.units = units;
  l.inputs = {input};
  l.weight_slots = {{"weight", {units, in}}, {"bias", {units}}};
  return l;
}

LayerSpec simple_layer(const std::string& id, OpKind op, std::vector<std::string> inputs) {
  LayerSpec l;
  l.id = id;
  l.op = op;
  l.inputs = std::move(inputs);
  return l;
}

ModelGraph identity_graph() {
  ModelGraph g;
  g.name = "identity";
  g.input_shape = {10, 10, 10};
  g.layers = {dense_layer("fc", "input", 1000, 1000)};
  g.output_dim = 1000;
  return g;
}

WeightStore identity_weights() {
  std::vector<float> w(1000 * 1000, 0.0f);
  for (std::size_t i = 0; i < 1000; ++i) w[i * 1000 + i] = 1.0f;
  WeightStore ws;
  ws.blobs = {{w, std::vector<float>(1000, 0.0f)}};
  return ws;
}

TEST(LoadModel, GoldenFixture) {
  const auto path = fixture_dir() / "test_model_seed0.frmdl";
  EXPECT_EQ(io::sha256_hex(io::read_file_bytes(path)), kGoldenSha256);
  const auto m = load_model(path);
  EXPECT_EQ(m.graph.name, "test_model_seed0");
  EXPECT_EQ(m.graph.input_shape, (Shape3{32, 32, 3}));
  ASSERT_EQ(m.graph.layers.size(), 5u);
  EXPECT_EQ(m.graph.layers[0].op, OpKind::conv2d);
  EXPECT_EQ(m.graph.layers[4].op, OpKind::dense);
  EXPECT_EQ(m.weights.slot(0, 0).size(), 8u * 3 * 3 * 3);
  EXPECT_EQ(m.weights.slot(4, 0).size(), 1000u * 512);
  EXPECT_TRUE(validate_graph(m.graph).empty());
}

TEST(LoadModel, BadMagic) {
  auto bytes = io::read_file_bytes(fixture_dir() / "test_model_seed0.frmdl");
  std::fill(bytes.begin(), bytes.begin() + 8, 'X');
  EXPECT_EQ(kind_of([&] { decode_model(bytes); }), ErrorKind::format);
}

TEST(LoadModel, OneFloatShort) {
  auto bytes = io::read_file_bytes(fixture_dir() / "test_model_seed0.frmdl");
  bytes.resize(bytes.size() - 4);
  EXPECT_EQ(kind_of([&] { decode_model(bytes); }), ErrorKind::format);
}

TEST(LoadModel, TrailingBytesAndTruncatedHeader) {
  auto bytes = io::read_file_bytes(fixture_dir() / "test_model_seed0.frmdl");
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_EQ(kind_of([&] { decode_model(longer); }), ErrorKind::format);
  bytes.resize(20);
  EXPECT_EQ(kind_of([&] { decode_model(bytes); }), ErrorKind::format);
}

TEST(LoadModel, NonFiniteWeight) {
  auto g = identity_graph();
  auto w = identity_weights();
  w.blobs[0][1][3] = std::numeric_limits<float>::infinity();
  const auto bytes = encode_model(g, w);
  EXPECT_EQ(kind_of([&] { decode_model(bytes); }), ErrorKind::format);
}

TEST(LoadModel, GraphErrorsSurfaceAsGraphError) {
  auto g = identity_graph();
  g.layers[0].inputs = {"fc"};
  const auto bytes = encode_model(g, identity_weights());
  EXPECT_EQ(kind_of([&] { decode_model(bytes); }), ErrorKind::graph);
}

TEST(LoadModel, EncodeDecodeRoundTrip) {
  const auto m = load_model(fixture_dir() / "googlenet_test.frmdl");
  const auto bytes = encode_model(m.graph, m.weights);
  const auto back = decode_model(bytes);
  EXPECT_EQ(back.graph, m.graph);
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(encode_model(back.graph, back.weights), bytes);
}

TEST(ValidateGraph, SelfReferenceGivesOneCycleDiagnostic) {
  ModelGraph g;
  g.name = "cyclic";
  g.input_shape = {1, 1, 1000};
  g.layers = {simple_layer("a", OpKind::relu, {"input"}), simple_layer("b", OpKind::relu, {"b"}),
              dense_layer("fc", "b", 1000, 1000)};
  g.output_dim = 1000;
  const auto d = validate_graph(g);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].layer_id, "b");
  EXPECT_NE(d[0].message.find("cycle"), std::string::npos);
}

TEST(ValidateGraph, ForwardReference) {
  ModelGraph g;
  g.name = "fwd";
  g.input_shape = {1, 1, 1000};
  g.layers = {simple_layer("a", OpKind::relu, {"b"}), simple_layer("b", OpKind::relu, {"input"}),
              dense_layer("fc", "a", 1000, 1000)};
  g.output_dim = 1000;
  const auto d = validate_graph(g);
  ASSERT_FALSE(d.empty());
  EXPECT_EQ(d[0].layer_id, "a");
}

TEST(ValidateGraph, NarrowDenseAgainstOutputDim) {
  ModelGraph g;
  g.name = "narrow";
  g.input_shape = {1, 1, 10};
  g.layers = {dense_layer("fc", "input", 10, 10)};
  g.output_dim = 1000;
  const auto d = validate_graph(g);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].layer_id, "fc");
}

TEST(ValidateGraph, AddAndConcatShapeRules) {
  ModelGraph g;
  g.name = "merge";
  g.input_shape = {4, 4, 2};
  LayerSpec pool;
  pool.id = "pool";
  pool.op = OpKind::maxpool;
  pool.params.geometry = {.kernel = 2, .stride = 2};
  pool.inputs = {"input"};
  g.layers = {pool, simple_layer("sum", OpKind::add, {"input", "pool"}), dense_layer("fc", "sum", 1000, 32)};
  g.output_dim = 1000;
  auto d = validate_graph(g);
  ASSERT_FALSE(d.empty());
  EXPECT_EQ(d[0].layer_id, "sum");

  g.layers[1] = simple_layer("cat", OpKind::concat, {"input", "pool"});
  g.layers[2] = dense_layer("fc", "cat", 1000, 48);
  d = validate_graph(g);
  ASSERT_FALSE(d.empty());
  EXPECT_EQ(d[0].layer_id, "cat");

  // Same spatial dims concat along channels.
  g.layers[1] = simple_layer("cat", OpKind::concat, {"input", "input"});
  g.layers[2] = dense_layer("fc", "cat", 1000, 64);
  g.layers.erase(g.layers.begin());
  EXPECT_TRUE(validate_graph(g).empty());
}

TEST(ValidateGraph, ConvGeometryAndSlotShapes) {
  ModelGraph g;
  g.name = "conv";
  g.input_shape = {4, 4, 1};
  LayerSpec conv;
  conv.id = "conv";
  conv.op = OpKind::conv2d;
  conv.params.geometry = {.kernel = 3, .stride = 2};
  conv.params.out_channels = 2;
  conv.inputs = {"input"};
  conv.weight_slots = {{"weight", {2, 3, 3, 1}}, {"bias", {2}}};
  g.layers = {conv, dense_layer("fc", "conv", 1000, 2)};
  g.output_dim = 1000;
  auto d = validate_graph(g);
  ASSERT_FALSE(d.empty());
  EXPECT_EQ(d[0].layer_id, "conv");

  g.layers[0].params.geometry.rounding = nn::Rounding::floor;
  EXPECT_TRUE(validate_graph(g).empty());
  g.layers[0].weight_slots[0].shape = {2, 3, 3, 2};
  d = validate_graph(g);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].layer_id, "conv");
}

TEST(ValidateGraph, SoftmaxSinkUsesDenseBelow) {
  const auto m = load_model(fixture_dir() / "googlenet_test.frmdl");
  const auto idx = feature_layer_index(m.graph);
  EXPECT_EQ(m.graph.layers[idx].id, "fc");
  EXPECT_EQ(m.graph.layers.back().op, OpKind::softmax);
}

TEST(InferFeatures, IdentityDenseModel) {
  TempDir tmp("identity");
  save_model(tmp.path() / "id.frmdl", identity_graph(), identity_weights());
  const auto bb = Backbone::load(tmp.path() / "id.frmdl");
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(static_cast<double>(i)) * 3.0;
  const auto f = bb.infer_features(nn::Tensor3D(10, 10, 10, x));
  EXPECT_EQ(f.backbone_name, "identity");
  EXPECT_EQ(f.values, x);
}

TEST(InferFeatures, ShapeMismatch) {
  const auto bb = Backbone::load(fixture_dir() / "test_model_seed0.frmdl");
  EXPECT_EQ(kind_of([&] { bb.infer_features(nn::Tensor3D(16, 16, 3)); }), ErrorKind::invalid_argument);
}

TEST(InferFeatures, NonFiniteActivationNamesLayer) {
  auto g = identity_graph();
  auto w = identity_weights();
  for (auto& v : w.blobs[0][0]) v = 3e38f;
  const Backbone bb(g, w);
  try {
    bb.infer_features(nn::Tensor3D(10, 10, 10, 1e300));
    FAIL() << "expected numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("fc"), std::string::npos);
  }
}

TEST(InferFeatures, BitIdenticalAcrossRuns) {
  const auto bb = Backbone::load(fixture_dir() / "resnet50_test.frmdl");
  const auto ref = load_reference("resnet50_test", bb.graph().input_shape);
  const auto a = bb.infer_features(ref.input);
  const auto b = bb.infer_features(ref.input);
  ASSERT_EQ(a.values.size(), b.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a.values[i]), std::bit_cast<std::uint64_t>(b.values[i]));
}

class ReferenceActivations : public ::testing::TestWithParam<std::string> {};

TEST_P(ReferenceActivations, EveryLayerWithinTolerance) {
  const auto bb = Backbone::load(fixture_dir() / (GetParam() + ".frmdl"));
  const auto ref = load_reference(GetParam(), bb.graph().input_shape);
  const auto acts = bb.forward_all(ref.input);
  ASSERT_EQ(acts.size(), bb.graph().layers.size());
  for (std::size_t l = 0; l < acts.size(); ++l) {
    const auto& id = bb.graph().layers[l].id;
    const auto want = ref.per_layer.at(id).get<std::vector<double>>();
    ASSERT_EQ(acts[l].size(), want.size()) << id;
    EXPECT_EQ(acts[l].height() * acts[l].width() * acts[l].channels(), bb.shapes()[l].elements());
    double worst = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(acts[l].values()[i] - want[i]));
    EXPECT_LE(worst, 1e-3) << id;
  }
  const auto f = bb.infer_features(ref.input);
  ASSERT_EQ(f.values.size(), kFeatureDim);
  for (std::size_t i = 0; i < kFeatureDim; ++i) EXPECT_NEAR(f.values[i], ref.output[i], 1e-3);
}

INSTANTIATE_TEST_SUITE_P(Fixtures, ReferenceActivations,
                         ::testing::Values("test_model_seed0", "vgg16_test", "googlenet_test", "resnet50_test"));

TEST(InferFeatures, FloorGeometryShapes) {
  const auto bb = Backbone::load(fixture_dir() / "resnet50_test.frmdl");
  EXPECT_EQ(bb.shapes()[0], (Shape3{16, 16, 8}));
  EXPECT_EQ(bb.shapes()[2], (Shape3{8, 8, 8}));
}

TEST(OpNames, RoundTrip) {
  for (auto op : {OpKind::conv2d, OpKind::relu, OpKind::maxpool, OpKind::avgpool, OpKind::global_avgpool, OpKind::dense,
                  OpKind::add, OpKind::concat, OpKind::flatten, OpKind::lrn, OpKind::softmax})
    EXPECT_EQ(parse_op(to_string(op)), op);
  EXPECT_FALSE(parse_op("batchnorm").has_value());
}

}  // namespace
}  // namespace fuserank::backbone
