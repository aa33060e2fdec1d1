#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fuserank/model.hpp"
#include "fuserank/tensor.hpp"

namespace fuserank::backbone {

inline constexpr std::size_t kFeatureDim = 1000;

struct FeatureVector {
  std::string backbone_name;
  std::vector<double> values;
};

/// A validated model with its weights widened to binary64. Immutable after
/// construction; infer_features may be called concurrently.
class Backbone {
 public:
  Backbone(ModelGraph graph, const WeightStore& weights);

  static Backbone load(const std::filesystem::path& path);

  const ModelGraph& graph() const noexcept { return graph_; }
  const std::vector<Shape3>& shapes() const noexcept { return shapes_; }

  FeatureVector infer_features(const nn::Tensor3D& image) const;

  /// Activation of every layer, in stored order.
  std::vector<nn::Tensor3D> forward_all(const nn::Tensor3D& image) const;

 private:
  nn::Tensor3D run_layer(std::size_t index, const std::vector<const nn::Tensor3D*>& inputs) const;

  ModelGraph graph_;
  std::vector<Shape3> shapes_;
  std::vector<std::vector<std::vector<double>>> weights_;
  std::size_t feature_layer_ = 0;
};

FeatureVector infer_features(const ModelGraph& model, const WeightStore& weights, const nn::Tensor3D& image);

}  // namespace fuserank::backbone
