#include "fuserank/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fuserank/error.hpp"

namespace fuserank::backbone {

namespace {

nn::Tensor3D as_flat(std::vector<double> values) {
  const std::size_t n = values.size();
  return nn::Tensor3D(1, 1, n, std::move(values));
}

// Inputs and weights are finite and shapes were validated at load, so the only
// invalid-argument a primitive can still raise is a tensor built from
// overflowed values.
template <class Fn>
nn::Tensor3D guarded(Fn&& fn, const std::string& layer_id) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::invalid_argument) throw;
    fail(ErrorKind::numeric, "non-finite activation in layer '" + layer_id + "': " + e.what());
  }
}

void check_finite(const nn::Tensor3D& t, const std::string& layer_id) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "non-finite activation in layer '" + layer_id + "'");
  }
}

}  // namespace

Backbone::Backbone(ModelGraph graph, const WeightStore& weights) : graph_(std::move(graph)) {
  shapes_ = infer_shapes(graph_);
  feature_layer_ = feature_layer_index(graph_);
  if (weights.blobs.size() != graph_.layers.size())
    fail(ErrorKind::graph, "weight store has " + std::to_string(weights.blobs.size()) + " layers, graph has " +
                               std::to_string(graph_.layers.size()));
  weights_.resize(graph_.layers.size());
  for (std::size_t li = 0; li < graph_.layers.size(); ++li) {
    const auto& slots = graph_.layers[li].weight_slots;
    if (weights.blobs[li].size() != slots.size())
      fail(ErrorKind::graph, "layer '" + graph_.layers[li].id + "': missing weight slots");
    for (std::size_t si = 0; si < slots.size(); ++si) {
      const auto& blob = weights.blobs[li][si];
      if (blob.size() != slots[si].element_count())
        fail(ErrorKind::graph, "layer '" + graph_.layers[li].id + "' slot '" + slots[si].name + "': expected " +
                                   std::to_string(slots[si].element_count()) + " values, got " +
                                   std::to_string(blob.size()));
      weights_[li].emplace_back(blob.begin(), blob.end());
    }
  }
}

Backbone Backbone::load(const std::filesystem::path& path) {
  LoadedModel m = load_model(path);
  return Backbone(std::move(m.graph), m.weights);
}

nn::Tensor3D Backbone::run_layer(std::size_t index, const std::vector<const nn::Tensor3D*>& inputs) const {
  const LayerSpec& layer = graph_.layers[index];
  const nn::Tensor3D& in = *inputs.front();
  switch (layer.op) {
    case OpKind::conv2d:
      return nn::conv2d_multi(in, weights_[index][0], weights_[index][1], layer.params.out_channels,
                              layer.params.geometry);
    case OpKind::relu:
      return nn::relu(in);
    case OpKind::maxpool:
      return nn::pool2d_multi(in, layer.params.geometry, nn::PoolMode::max);
    case OpKind::avgpool:
      return nn::pool2d_multi(in, layer.params.geometry, nn::PoolMode::mean);
    case OpKind::global_avgpool: {
      nn::Tensor3D out(1, 1, in.channels());
      const auto area = static_cast<double>(in.height() * in.width());
      for (std::size_t ch = 0; ch < in.channels(); ++ch) {
        double sum = 0.0;
        for (std::size_t r = 0; r < in.height(); ++r)
          for (std::size_t c = 0; c < in.width(); ++c) sum += in(r, c, ch);
        out(0, 0, ch) = sum / area;
      }
      return out;
    }
    case OpKind::dense: {
      const auto& w = weights_[index][0];
      const nn::MatrixView view{w, layer.params.units, in.size()};
      return as_flat(nn::dense(in.values(), view, weights_[index][1]));
    }
    case OpKind::add: {
      nn::Tensor3D out = in;
      for (std::size_t k = 1; k < inputs.size(); ++k) {
        auto dst = out.values();
        auto src = inputs[k]->values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
      return out;
    }
    case OpKind::concat: {
      std::size_t channels = 0;
      for (const auto* t : inputs) channels += t->channels();
      nn::Tensor3D out(in.height(), in.width(), channels);
      for (std::size_t r = 0; r < in.height(); ++r) {
        for (std::size_t c = 0; c < in.width(); ++c) {
          std::size_t offset = 0;
          for (const auto* t : inputs) {
            for (std::size_t ch = 0; ch < t->channels(); ++ch) out(r, c, offset + ch) = (*t)(r, c, ch);
            offset += t->channels();
          }
        }
      }
      return out;
    }
    case OpKind::flatten:
      return as_flat(std::vector<double>(in.values().begin(), in.values().end()));
    case OpKind::lrn:
      return nn::local_response_norm(in, layer.params.lrn);
    case OpKind::softmax:
      return nn::Tensor3D(in.height(), in.width(), in.channels(), nn::softmax(in.values()));
  }
  fail(ErrorKind::graph, "unsupported op in layer '" + layer.id + "'");
}

std::vector<nn::Tensor3D> Backbone::forward_all(const nn::Tensor3D& image) const {
  const Shape3 expect = graph_.input_shape;
  if (image.height() != expect.height || image.width() != expect.width || image.channels() != expect.channels)
    fail(ErrorKind::invalid_argument, "input shape " + std::to_string(image.height()) + "x" +
                                          std::to_string(image.width()) + "x" + std::to_string(image.channels()) +
                                          " does not match model input shape");
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < graph_.layers.size(); ++i) index_of.emplace(graph_.layers[i].id, i);

  std::vector<nn::Tensor3D> acts(graph_.layers.size());
  for (std::size_t li = 0; li < graph_.layers.size(); ++li) {
    std::vector<const nn::Tensor3D*> inputs;
    for (const auto& ref : graph_.layers[li].inputs)
      inputs.push_back(ref == kInputId ? &image : &acts[index_of.at(ref)]);
    acts[li] = guarded([&] { return run_layer(li, inputs); }, graph_.layers[li].id);
    const Shape3& s = shapes_[li];
    if (acts[li].height() != s.height || acts[li].width() != s.width || acts[li].channels() != s.channels)
      fail(ErrorKind::graph, "layer '" + graph_.layers[li].id + "' produced an unexpected shape");
    check_finite(acts[li], graph_.layers[li].id);
  }
  return acts;
}

FeatureVector Backbone::infer_features(const nn::Tensor3D& image) const {
  const Shape3 expect = graph_.input_shape;
  if (image.height() != expect.height || image.width() != expect.width || image.channels() != expect.channels)
    fail(ErrorKind::invalid_argument, "input shape " + std::to_string(image.height()) + "x" +
                                          std::to_string(image.width()) + "x" + std::to_string(image.channels()) +
                                          " does not match model input shape");
  std::map<std::string, std::size_t> index_of;
  std::vector<std::size_t> last_use(graph_.layers.size(), 0);
  for (std::size_t i = 0; i < graph_.layers.size(); ++i) {
    index_of.emplace(graph_.layers[i].id, i);
    last_use[i] = i;
    for (const auto& ref : graph_.layers[i].inputs)
      if (ref != kInputId) last_use[index_of.at(ref)] = i;
  }

  // Activations are released after their last consumer runs.
  std::vector<nn::Tensor3D> acts(graph_.layers.size());
  for (std::size_t li = 0; li <= feature_layer_; ++li) {
    std::vector<const nn::Tensor3D*> inputs;
    for (const auto& ref : graph_.layers[li].inputs)
      inputs.push_back(ref == kInputId ? &image : &acts[index_of.at(ref)]);
    acts[li] = guarded([&] { return run_layer(li, inputs); }, graph_.layers[li].id);
    check_finite(acts[li], graph_.layers[li].id);
    for (const auto& ref : graph_.layers[li].inputs) {
      if (ref == kInputId) continue;
      const std::size_t src = index_of.at(ref);
      if (last_use[src] == li && src != feature_layer_) acts[src] = nn::Tensor3D();
    }
  }
  const auto values = acts[feature_layer_].values();
  return FeatureVector{graph_.name, std::vector<double>(values.begin(), values.end())};
}

FeatureVector infer_features(const ModelGraph& model, const WeightStore& weights, const nn::Tensor3D& image) {
  return Backbone(model, weights).infer_features(image);
}

}  // namespace fuserank::backbone
