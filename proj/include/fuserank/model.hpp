#pragma once

// Layer DAG + binary32 parameter container ("FRMDL001").
//
// Layout on disk:
//   bytes 0..7   ASCII magic "FRMDL001"
//   bytes 8..11  u32 little-endian header length L
//   L bytes      UTF-8 JSON header {name, input_shape, layers[], output_dim}
//   then, for each layer in stored order and each weight slot in declared
//   order, raw little-endian binary32 values in row-major declared shape.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fuserank/nn_core.hpp"

namespace fuserank::backbone {

inline constexpr std::string_view kModelMagic = "FRMDL001";
/// Layer id that refers to the model input tensor.
inline constexpr std::string_view kInputId = "input";

enum class OpKind {
  conv2d,
  relu,
  maxpool,
  avgpool,
  global_avgpool,
  dense,
  add,
  concat,
  flatten,
  lrn,
  softmax,
};

std::string_view to_string(OpKind op);
std::optional<OpKind> parse_op(std::string_view name);

/// Height x width x channels.
struct Shape3 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t elements() const noexcept { return height * width * channels; }
  bool operator==(const Shape3&) const = default;
};

struct WeightSlot {
  std::string name;
  std::vector<std::size_t> shape;

  std::size_t element_count() const noexcept;
  bool operator==(const WeightSlot&) const = default;
};

/// Op-specific parameters; fields not used by an op keep their defaults.
struct LayerParams {
  nn::ConvGeometry geometry;     // conv2d, maxpool, avgpool
  std::size_t out_channels = 0;  // conv2d
  std::size_t units = 0;         // dense
  nn::LrnParams lrn;             // lrn

  bool operator==(const LayerParams& other) const;
};

struct LayerSpec {
  std::string id;
  OpKind op = OpKind::relu;
  LayerParams params;
  std::vector<std::string> inputs;
  std::vector<WeightSlot> weight_slots;

  bool operator==(const LayerSpec&) const = default;
};

struct ModelGraph {
  std::string name;
  Shape3 input_shape;
  std::vector<LayerSpec> layers;
  std::size_t output_dim = 0;

  bool operator==(const ModelGraph&) const = default;
};

/// One binary32 blob per (layer, slot), in declared order.
struct WeightStore {
  std::vector<std::vector<std::vector<float>>> blobs;

  std::span<const float> slot(std::size_t layer, std::size_t slot_index) const {
    return blobs.at(layer).at(slot_index);
  }
  bool operator==(const WeightStore&) const = default;
};

struct Diagnostic {
  std::string layer_id;
  std::string message;
};

/// Checks every structural invariant: unique ids, inputs referencing earlier
/// layers only, op arity, slot shapes against inferred geometry, conv/pool
/// output sizes, a single sink, and output_dim against the feature layer.
/// Returns an empty list iff the graph is valid.
std::vector<Diagnostic> validate_graph(const ModelGraph& model);

/// Activation shape of every layer, in stored order. Requires a valid graph.
std::vector<Shape3> infer_shapes(const ModelGraph& model);

/// Index of the layer whose activation is the feature vector: the sink, or the
/// sink's input when the sink is a softmax.
std::size_t feature_layer_index(const ModelGraph& model);

struct LoadedModel {
  ModelGraph graph;
  WeightStore weights;
};

LoadedModel decode_model(std::span<const std::uint8_t> bytes);
LoadedModel load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_model(const ModelGraph& graph, const WeightStore& weights);
void save_model(const std::filesystem::path& path, const ModelGraph& graph, const WeightStore& weights);

/// JSON header text exactly as encode_model would write it.
std::string graph_header_json(const ModelGraph& graph);
ModelGraph parse_graph_header(std::string_view json_text);

}  // namespace fuserank::backbone
