#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rlvs/tensor.hpp"

namespace rlvs {

enum class LayerKind {
  kConv2d,
  kDense,
  kRelu,
  kMaxPool,
  kAvgPool,
  kGlobalAvgPool,
  kConcat,
  kFlatten,
  kSoftmax,
};

std::string_view to_string(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(std::string_view name);

// Name that refers to the model input in a layer's input list.
inline constexpr std::string_view kModelInput = "input";

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::kRelu;
  std::vector<std::string> inputs;
  std::uint32_t kernel = 0;
  std::uint32_t stride = 1;
  std::uint32_t padding = 0;
  std::uint32_t out_channels = 0;
  // conv2d: (out, in, k, k). dense: (out, in_features, 1, 1).
  Tensor weights;
  std::vector<float> bias;

  // Filled in by Model::add: producer indices (-1 = model input) and the
  // per-item output shape (batch dimension 1).
  std::vector<int> sources;
  Shape out_shape;

  bool has_parameters() const {
    return kind == LayerKind::kConv2d || kind == LayerKind::kDense;
  }
};

struct ModelMeta {
  std::string name = "model";
  std::uint64_t seed = 0;
  std::string config_json = "{}";
  // Per-channel value subtracted from the input before the first layer.
  // Empty means the input is used as given.
  std::vector<float> input_mean;

  bool operator==(const ModelMeta&) const = default;
};

// A layer DAG in topological order. Layers can only reference layers added
// before them, so the graph is acyclic by construction; the last layer is
// the single output.
class Model {
 public:
  Model() = default;
  Model(Shape input_shape, std::uint32_t class_count, ModelMeta meta = {});

  // Validates the layer against its producers and appends it. Zero-sized
  // parameter tensors are allocated (zero-filled) when absent.
  const Layer& add(Layer layer);

  std::string conv2d(std::string name, std::string input,
                     std::uint32_t out_channels, std::uint32_t kernel,
                     std::uint32_t stride = 1, std::uint32_t padding = 0);
  std::string dense(std::string name, std::string input,
                    std::uint32_t out_features);
  std::string relu(std::string name, std::string input);
  std::string maxpool(std::string name, std::string input, std::uint32_t kernel,
                      std::uint32_t stride, std::uint32_t padding = 0);
  std::string avgpool(std::string name, std::string input, std::uint32_t kernel,
                      std::uint32_t stride, std::uint32_t padding = 0);
  std::string global_avgpool(std::string name, std::string input);
  std::string concat(std::string name, std::vector<std::string> inputs);
  std::string flatten(std::string name, std::string input);
  std::string softmax(std::string name, std::string input);

  // Throws kInvalidModel unless the graph has layers, every non-final layer
  // is consumed, and the logits layer yields (class_count, 1, 1).
  void validate() const;

  const Shape& input_shape() const { return input_shape_; }
  std::uint32_t class_count() const { return class_count_; }
  const ModelMeta& meta() const { return meta_; }
  ModelMeta& meta() { return meta_; }

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  // Layer whose output is the logits: the last layer, or its input when the
  // last layer is a softmax.
  std::size_t logits_index() const;
  // Per-layer list of consumer indices.
  std::vector<std::vector<std::size_t>> consumers() const;

  std::size_t parameter_count() const;

  bool operator==(const Model&) const;

 private:
  Shape input_shape_;
  std::uint32_t class_count_ = 0;
  ModelMeta meta_;
  std::vector<Layer> layers_;
};

// He-uniform initialization: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
// biases zero. Each layer draws from its own seeded stream.
void init_he_uniform(Model& model, std::uint64_t seed);

}  // namespace rlvs
