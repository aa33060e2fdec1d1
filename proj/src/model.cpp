#include "fuserank/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "fuserank/error.hpp"
#include "fuserank/io_util.hpp"

namespace fuserank::backbone {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 11> kOpNames{{
    {OpKind::conv2d, "conv2d"},
    {OpKind::relu, "relu"},
    {OpKind::maxpool, "maxpool"},
    {OpKind::avgpool, "avgpool"},
    {OpKind::global_avgpool, "global_avgpool"},
    {OpKind::dense, "dense"},
    {OpKind::add, "add"},
    {OpKind::concat, "concat"},
    {OpKind::flatten, "flatten"},
    {OpKind::lrn, "lrn"},
    {OpKind::softmax, "softmax"},
}};

bool uses_geometry(OpKind op) {
  return op == OpKind::conv2d || op == OpKind::maxpool || op == OpKind::avgpool;
}

std::string shape_text(const std::vector<std::size_t>& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Expected slots for an op given its (single) input shape.
std::vector<WeightSlot> expected_slots(const LayerSpec& layer, const Shape3& in) {
  switch (layer.op) {
    case OpKind::conv2d: {
      const std::size_t k = layer.params.geometry.kernel;
      return {{"weight", {layer.params.out_channels, k, k, in.channels}},
              {"bias", {layer.params.out_channels}}};
    }
    case OpKind::dense:
      return {{"weight", {layer.params.units, in.elements()}}, {"bias", {layer.params.units}}};
    default:
      return {};
  }
}

/// Shape of a single-input op's output; throws fuserank::Error on bad geometry.
Shape3 single_output_shape(const LayerSpec& layer, const Shape3& in) {
  const auto& g = layer.params.geometry;
  switch (layer.op) {
    case OpKind::conv2d:
      return {nn::conv_output_size(in.height, g.padding, g.kernel, g.stride, g.rounding),
              nn::conv_output_size(in.width, g.padding, g.kernel, g.stride, g.rounding),
              layer.params.out_channels};
    case OpKind::maxpool:
    case OpKind::avgpool:
      return {nn::conv_output_size(in.height, g.padding, g.kernel, g.stride, g.rounding),
              nn::conv_output_size(in.width, g.padding, g.kernel, g.stride, g.rounding), in.channels};
    case OpKind::global_avgpool:
      return {1, 1, in.channels};
    case OpKind::dense:
      return {1, 1, layer.params.units};
    case OpKind::flatten:
      return {1, 1, in.elements()};
    case OpKind::relu:
    case OpKind::lrn:
    case OpKind::softmax:
      return in;
    default:
      break;
  }
  fail(ErrorKind::graph, "not a single-input op");
}

struct Inference {
  std::vector<Diagnostic> diagnostics;
  std::vector<std::optional<Shape3>> shapes;
};

Inference run_inference(const ModelGraph& model) {
  Inference result;
  auto diag = [&](const std::string& id, std::string msg) {
    result.diagnostics.push_back({id, std::move(msg)});
  };

  if (model.input_shape.height == 0 || model.input_shape.width == 0 || model.input_shape.channels == 0)
    diag(std::string(kInputId), "input_shape components must be >= 1");
  if (model.layers.empty()) {
    diag("", "model has no layers");
    return result;
  }

  std::map<std::string, std::size_t> index_of;
  std::set<std::string> consumed;
  result.shapes.resize(model.layers.size());
  bool reference_error = false;

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& layer = model.layers[li];
    bool inputs_ok = true;
    const std::size_t diagnostics_before = result.diagnostics.size();

    if (layer.id.empty() || layer.id == kInputId) {
      diag(layer.id, "layer id must be non-empty and not \"input\"");
    } else if (index_of.contains(layer.id)) {
      diag(layer.id, "duplicate layer id");
    }

    std::vector<std::optional<Shape3>> in_shapes;
    for (const auto& ref : layer.inputs) {
      if (ref == kInputId) {
        in_shapes.emplace_back(model.input_shape);
        continue;
      }
      if (ref == layer.id) {
        diag(layer.id, "cycle: layer references itself");
        inputs_ok = false;
        continue;
      }
      auto it = index_of.find(ref);
      if (it == index_of.end()) {
        const bool later = std::any_of(model.layers.begin() + static_cast<std::ptrdiff_t>(li), model.layers.end(),
                                       [&](const LayerSpec& l) { return l.id == ref; });
        diag(layer.id, later ? "forward reference to later layer '" + ref + "' (graph must be topologically ordered)"
                             : "reference to unknown layer '" + ref + "'");
        inputs_ok = false;
        continue;
      }
      consumed.insert(ref);
      in_shapes.push_back(result.shapes[it->second]);
    }
    if (result.diagnostics.size() != diagnostics_before) reference_error = true;
    if (!layer.id.empty() && !index_of.contains(layer.id)) index_of.emplace(layer.id, li);

    const bool multi = layer.op == OpKind::add || layer.op == OpKind::concat;
    if (multi ? layer.inputs.size() < 2 : layer.inputs.size() != 1) {
      diag(layer.id, std::string(to_string(layer.op)) + " expects " + (multi ? "at least 2 inputs" : "exactly 1 input") +
                         ", got " + std::to_string(layer.inputs.size()));
      inputs_ok = false;
    }
    if (uses_geometry(layer.op) && (layer.params.geometry.kernel == 0 || layer.params.geometry.stride == 0)) {
      diag(layer.id, "kernel and stride must be >= 1");
      inputs_ok = false;
    }
    if (layer.op == OpKind::conv2d && layer.params.out_channels == 0) {
      diag(layer.id, "conv2d out_channels must be >= 1");
      inputs_ok = false;
    }
    if (layer.op == OpKind::dense && layer.params.units == 0) {
      diag(layer.id, "dense units must be >= 1");
      inputs_ok = false;
    }
    if (layer.op == OpKind::lrn && layer.params.lrn.size == 0) {
      diag(layer.id, "lrn size must be >= 1");
      inputs_ok = false;
    }
    // Upstream problems were already reported; do not cascade.
    if (!inputs_ok || std::any_of(in_shapes.begin(), in_shapes.end(), [](const auto& s) { return !s; })) continue;

    std::optional<Shape3> out;
    if (layer.op == OpKind::add) {
      const bool equal = std::all_of(in_shapes.begin(), in_shapes.end(),
                                     [&](const auto& s) { return *s == *in_shapes.front(); });
      if (!equal) {
        diag(layer.id, "add operands must have equal shapes");
      } else {
        out = *in_shapes.front();
      }
    } else if (layer.op == OpKind::concat) {
      Shape3 acc = *in_shapes.front();
      acc.channels = 0;
      bool ok = true;
      for (const auto& s : in_shapes) {
        if (s->height != acc.height || s->width != acc.width) ok = false;
        acc.channels += s->channels;
      }
      if (!ok) {
        diag(layer.id, "concat operands must agree in height and width (channel-axis concat only)");
      } else {
        out = acc;
      }
    } else {
      try {
        out = single_output_shape(layer, *in_shapes.front());
      } catch (const Error& e) {
        diag(layer.id, std::string("geometry: ") + e.what());
      }
    }

    const std::vector<WeightSlot> want = in_shapes.size() == 1 ? expected_slots(layer, *in_shapes.front())
                                                               : std::vector<WeightSlot>{};
    if (layer.weight_slots != want) {
      std::string got, exp;
      for (const auto& s : layer.weight_slots) got += s.name + shape_text(s.shape) + " ";
      for (const auto& s : want) exp += s.name + shape_text(s.shape) + " ";
      diag(layer.id, "weight slot shape mismatch: declared {" + got + "} expected {" + exp + "}");
    }
    result.shapes[li] = out;
  }

  // Sink analysis is meaningless once references are broken.
  if (reference_error) return result;

  // Exactly one sink, and it must be the last stored layer.
  std::vector<std::string> sinks;
  for (const auto& layer : model.layers)
    if (!consumed.contains(layer.id)) sinks.push_back(layer.id);
  if (sinks.size() != 1) {
    std::string list;
    for (const auto& s : sinks) list += s + " ";
    diag(sinks.empty() ? "" : sinks.back(), "expected exactly one output layer, found " +
                                                std::to_string(sinks.size()) + ": " + list);
    return result;
  }
  if (sinks.front() != model.layers.back().id) {
    diag(sinks.front(), "output layer must be the last stored layer");
    return result;
  }

  std::size_t feature = model.layers.size() - 1;
  if (model.layers[feature].op == OpKind::softmax && model.layers[feature].inputs.size() == 1) {
    auto it = index_of.find(model.layers[feature].inputs.front());
    if (it != index_of.end()) feature = it->second;
  }
  const LayerSpec& head = model.layers[feature];
  if (head.op != OpKind::dense) {
    diag(head.id, "feature layer must be dense, got " + std::string(to_string(head.op)));
  } else if (result.shapes[feature] && result.shapes[feature]->elements() != model.output_dim) {
    diag(head.id, "output layer width " + std::to_string(result.shapes[feature]->elements()) +
                      " does not match output_dim " + std::to_string(model.output_dim));
  }
  return result;
}

std::size_t get_count(const json& params, const char* key, std::size_t fallback, const std::string& layer_id) {
  if (!params.contains(key)) return fallback;
  const auto& v = params.at(key);
  if (!v.is_number_unsigned()) fail(ErrorKind::format, "layer '" + layer_id + "': param '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

LayerParams parse_params(OpKind op, const json& params, const std::string& id) {
  LayerParams p;
  if (!params.is_object()) fail(ErrorKind::format, "layer '" + id + "': params must be an object");
  if (uses_geometry(op)) {
    const char* kernel_key = op == OpKind::conv2d ? "kernel" : "window";
    p.geometry.kernel = get_count(params, kernel_key, 0, id);
    p.geometry.stride = get_count(params, "stride", 1, id);
    p.geometry.padding = get_count(params, "padding", 0, id);
    const std::string rounding = params.value("rounding", std::string("exact"));
    if (rounding == "exact") {
      p.geometry.rounding = nn::Rounding::exact;
    } else if (rounding == "floor") {
      p.geometry.rounding = nn::Rounding::floor;
    } else {
      fail(ErrorKind::format, "layer '" + id + "': unknown rounding '" + rounding + "'");
    }
  }
  if (op == OpKind::conv2d) p.out_channels = get_count(params, "out_channels", 0, id);
  if (op == OpKind::dense) p.units = get_count(params, "units", 0, id);
  if (op == OpKind::lrn) {
    p.lrn.size = get_count(params, "size", 5, id);
    p.lrn.alpha = params.value("alpha", 1e-4);
    p.lrn.beta = params.value("beta", 0.75);
    p.lrn.k = params.value("k", 1.0);
  }
  return p;
}

json params_to_json(const LayerSpec& layer) {
  json p = json::object();
  const auto& g = layer.params.geometry;
  if (uses_geometry(layer.op)) {
    p[layer.op == OpKind::conv2d ? "kernel" : "window"] = g.kernel;
    p["stride"] = g.stride;
    p["padding"] = g.padding;
    if (g.rounding == nn::Rounding::floor) p["rounding"] = "floor";
  }
  if (layer.op == OpKind::conv2d) p["out_channels"] = layer.params.out_channels;
  if (layer.op == OpKind::dense) p["units"] = layer.params.units;
  if (layer.op == OpKind::lrn) {
    p["size"] = layer.params.lrn.size;
    p["alpha"] = layer.params.lrn.alpha;
    p["beta"] = layer.params.lrn.beta;
    p["k"] = layer.params.lrn.k;
  }
  return p;
}

}  // namespace

std::string_view to_string(OpKind op) {
  for (const auto& [kind, name] : kOpNames)
    if (kind == op) return name;
  return "unknown";
}

std::optional<OpKind> parse_op(std::string_view name) {
  for (const auto& [kind, n] : kOpNames)
    if (n == name) return kind;
  return std::nullopt;
}

std::size_t WeightSlot::element_count() const noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

bool LayerParams::operator==(const LayerParams& other) const {
  return geometry.kernel == other.geometry.kernel && geometry.stride == other.geometry.stride &&
         geometry.padding == other.geometry.padding && geometry.rounding == other.geometry.rounding &&
         out_channels == other.out_channels && units == other.units && lrn.size == other.lrn.size &&
         lrn.alpha == other.lrn.alpha && lrn.beta == other.lrn.beta && lrn.k == other.lrn.k;
}

std::vector<Diagnostic> validate_graph(const ModelGraph& model) { return run_inference(model).diagnostics; }

std::vector<Shape3> infer_shapes(const ModelGraph& model) {
  Inference inf = run_inference(model);
  if (!inf.diagnostics.empty()) {
    const auto& d = inf.diagnostics.front();
    fail(ErrorKind::graph, "layer '" + d.layer_id + "': " + d.message);
  }
  std::vector<Shape3> shapes;
  shapes.reserve(inf.shapes.size());
  for (const auto& s : inf.shapes) shapes.push_back(*s);
  return shapes;
}

std::size_t feature_layer_index(const ModelGraph& model) {
  std::size_t last = model.layers.size() - 1;
  if (model.layers[last].op == OpKind::softmax) {
    for (std::size_t i = 0; i < last; ++i)
      if (model.layers[i].id == model.layers[last].inputs.front()) return i;
  }
  return last;
}

std::string graph_header_json(const ModelGraph& graph) {
  json header;
  header["name"] = graph.name;
  header["input_shape"] = {graph.input_shape.height, graph.input_shape.width, graph.input_shape.channels};
  header["output_dim"] = graph.output_dim;
  json layers = json::array();
  for (const auto& layer : graph.layers) {
    json slots = json::array();
    for (const auto& s : layer.weight_slots) slots.push_back(json::array({s.name, s.shape}));
    layers.push_back({{"id", layer.id},
                      {"op", to_string(layer.op)},
                      {"params", params_to_json(layer)},
                      {"inputs", layer.inputs},
                      {"weight_slots", slots}});
  }
  header["layers"] = layers;
  return header.dump();
}

ModelGraph parse_graph_header(std::string_view json_text) {
  json header;
  try {
    header = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("model header is not valid JSON: ") + e.what());
  }
  try {
    ModelGraph graph;
    graph.name = header.at("name").get<std::string>();
    const auto shape = header.at("input_shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) fail(ErrorKind::format, "input_shape must have 3 components");
    graph.input_shape = {shape[0], shape[1], shape[2]};
    graph.output_dim = header.at("output_dim").get<std::size_t>();
    for (const auto& jl : header.at("layers")) {
      LayerSpec layer;
      layer.id = jl.at("id").get<std::string>();
      const auto op_name = jl.at("op").get<std::string>();
      const auto op = parse_op(op_name);
      if (!op) fail(ErrorKind::format, "layer '" + layer.id + "': unsupported op '" + op_name + "'");
      layer.op = *op;
      layer.params = parse_params(layer.op, jl.value("params", json::object()), layer.id);
      layer.inputs = jl.at("inputs").get<std::vector<std::string>>();
      for (const auto& js : jl.value("weight_slots", json::array())) {
        if (!js.is_array() || js.size() != 2) fail(ErrorKind::format, "layer '" + layer.id + "': weight slot must be [name, shape]");
        layer.weight_slots.push_back({js[0].get<std::string>(), js[1].get<std::vector<std::size_t>>()});
      }
      graph.layers.push_back(std::move(layer));
    }
    return graph;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed model header: ") + e.what());
  }
}

LoadedModel decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kModelMagic.size() + 4 ||
      std::memcmp(bytes.data(), kModelMagic.data(), kModelMagic.size()) != 0)
    fail(ErrorKind::format, "bad magic: not an FRMDL001 model container");
  std::size_t pos = kModelMagic.size();
  const std::uint32_t header_len = io::read_u32_le(bytes.subspan(pos, 4));
  pos += 4;
  if (bytes.size() - pos < header_len) fail(ErrorKind::format, "truncated model header");
  const std::string_view header_text(reinterpret_cast<const char*>(bytes.data() + pos), header_len);
  pos += header_len;

  LoadedModel model;
  model.graph = parse_graph_header(header_text);

  const auto diagnostics = validate_graph(model.graph);
  if (!diagnostics.empty()) {
    std::string msg = "invalid model graph:";
    for (const auto& d : diagnostics) msg += " [" + d.layer_id + "] " + d.message + ";";
    fail(ErrorKind::graph, msg);
  }

  for (const auto& layer : model.graph.layers) {
    std::vector<std::vector<float>> slots;
    for (const auto& slot : layer.weight_slots) {
      const std::size_t count = slot.element_count();
      if ((bytes.size() - pos) / 4 < count)
        fail(ErrorKind::format, "truncated weights in layer '" + layer.id + "' slot '" + slot.name + "'");
      std::vector<float> values = io::read_f32_le_array(bytes.subspan(pos, count * 4));
      pos += count * 4;
      for (float v : values) {
        if (!std::isfinite(v))
          fail(ErrorKind::format, "non-finite weight in layer '" + layer.id + "' slot '" + slot.name + "'");
      }
      slots.push_back(std::move(values));
    }
    model.weights.blobs.push_back(std::move(slots));
  }
  if (pos != bytes.size())
    fail(ErrorKind::format, std::to_string(bytes.size() - pos) + " trailing bytes after weights");
  return model;
}

LoadedModel load_model(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = io::read_file_bytes(path);
  try {
    return decode_model(bytes);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_model(const ModelGraph& graph, const WeightStore& weights) {
  const std::string header = graph_header_json(graph);
  std::vector<std::uint8_t> out(kModelMagic.begin(), kModelMagic.end());
  io::append_u32_le(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  if (weights.blobs.size() != graph.layers.size()) fail(ErrorKind::invalid_argument, "weight store does not match layer count");
  for (std::size_t li = 0; li < graph.layers.size(); ++li) {
    const auto& slots = graph.layers[li].weight_slots;
    if (weights.blobs[li].size() != slots.size())
      fail(ErrorKind::invalid_argument, "weight store slot count mismatch in layer '" + graph.layers[li].id + "'");
    for (std::size_t si = 0; si < slots.size(); ++si) {
      if (weights.blobs[li][si].size() != slots[si].element_count())
        fail(ErrorKind::invalid_argument, "weight blob size mismatch in layer '" + graph.layers[li].id + "'");
      io::append_f32_le_array(out, weights.blobs[li][si]);
    }
  }
  return out;
}

void save_model(const std::filesystem::path& path, const ModelGraph& graph, const WeightStore& weights) {
  io::write_file_atomic(path, encode_model(graph, weights));
}

}  // namespace fuserank::backbone
