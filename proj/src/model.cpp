#include "rlvs/model.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <utility>

#include "rlvs/rng.hpp"

namespace rlvs {
namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 9> kKindNames{{
    {LayerKind::kConv2d, "conv2d"},
    {LayerKind::kDense, "dense"},
    {LayerKind::kRelu, "relu"},
    {LayerKind::kMaxPool, "maxpool"},
    {LayerKind::kAvgPool, "avgpool"},
    {LayerKind::kGlobalAvgPool, "global_avgpool"},
    {LayerKind::kConcat, "concat"},
    {LayerKind::kFlatten, "flatten"},
    {LayerKind::kSoftmax, "softmax"},
}};

[[noreturn]] void invalid(const std::string& layer, const std::string& msg) {
  throw Error(ErrorCode::kInvalidModel, layer, msg);
}

std::uint32_t window_out(std::uint32_t in, std::uint32_t k, std::uint32_t s,
                         std::uint32_t p, const std::string& layer) {
  if (in + 2 * p < k) {
    invalid(layer, "kernel " + std::to_string(k) + " larger than padded input " +
                       std::to_string(in + 2 * p));
  }
  return (in + 2 * p - k) / s + 1;
}

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<LayerKind> parse_layer_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

Model::Model(Shape input_shape, std::uint32_t class_count, ModelMeta meta)
    : input_shape_(input_shape.with_batch(1)),
      class_count_(class_count),
      meta_(std::move(meta)) {
  if (input_shape_.count() == 0) invalid("input", "empty input shape");
  if (class_count_ == 0) invalid("input", "class count must be positive");
}

const Layer& Model::add(Layer layer) {
  const std::string& name = layer.name;
  if (name.empty() || name == kModelInput) invalid(name, "reserved or empty layer name");
  if (find(name)) invalid(name, "duplicate layer name");
  if (layer.inputs.empty()) invalid(name, "layer has no inputs");

  layer.sources.clear();
  std::vector<Shape> in_shapes;
  for (const auto& input : layer.inputs) {
    if (input == kModelInput) {
      layer.sources.push_back(-1);
      in_shapes.push_back(input_shape_);
    } else {
      auto idx = find(input);
      if (!idx) invalid(name, "unknown input layer '" + input + "'");
      layer.sources.push_back(static_cast<int>(*idx));
      in_shapes.push_back(layers_[*idx].out_shape);
    }
  }
  if (layer.kind != LayerKind::kConcat && in_shapes.size() != 1) {
    invalid(name, std::string(to_string(layer.kind)) + " takes exactly one input");
  }
  const Shape in = in_shapes.front();
  if (layer.stride < 1) invalid(name, "stride must be >= 1");

  switch (layer.kind) {
    case LayerKind::kConv2d: {
      if (layer.kernel < 1 || layer.out_channels < 1) {
        invalid(name, "conv2d needs kernel >= 1 and out_channels >= 1");
      }
      const Shape wshape{layer.out_channels, in.c, layer.kernel, layer.kernel};
      if (layer.weights.empty()) layer.weights = Tensor(wshape);
      if (layer.weights.shape() != wshape) {
        invalid(name, "weight shape " + layer.weights.shape().str() +
                          " does not match " + wshape.str());
      }
      if (layer.bias.empty()) layer.bias.assign(layer.out_channels, 0.0f);
      if (layer.bias.size() != layer.out_channels) invalid(name, "bias length mismatch");
      layer.out_shape = {1, layer.out_channels,
                         window_out(in.h, layer.kernel, layer.stride, layer.padding, name),
                         window_out(in.w, layer.kernel, layer.stride, layer.padding, name)};
      break;
    }
    case LayerKind::kDense: {
      if (layer.out_channels < 1) invalid(name, "dense needs out_channels >= 1");
      const auto features = static_cast<std::uint32_t>(in.item_count());
      const Shape wshape{layer.out_channels, features, 1, 1};
      if (layer.weights.empty()) layer.weights = Tensor(wshape);
      if (layer.weights.shape() != wshape) {
        invalid(name, "weight shape " + layer.weights.shape().str() +
                          " does not match " + wshape.str());
      }
      if (layer.bias.empty()) layer.bias.assign(layer.out_channels, 0.0f);
      if (layer.bias.size() != layer.out_channels) invalid(name, "bias length mismatch");
      layer.out_shape = {1, layer.out_channels, 1, 1};
      break;
    }
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      if (layer.kernel < 1) invalid(name, "pool kernel must be >= 1");
      if (layer.padding >= layer.kernel) invalid(name, "pool padding must be < kernel");
      layer.out_shape = {1, in.c,
                         window_out(in.h, layer.kernel, layer.stride, layer.padding, name),
                         window_out(in.w, layer.kernel, layer.stride, layer.padding, name)};
      break;
    case LayerKind::kGlobalAvgPool:
      layer.out_shape = {1, in.c, 1, 1};
      break;
    case LayerKind::kConcat: {
      if (in_shapes.size() < 2) invalid(name, "concat needs at least two inputs");
      std::uint32_t channels = 0;
      for (const auto& s : in_shapes) {
        if (s.h != in.h || s.w != in.w) {
          invalid(name, "concat inputs differ in spatial size: " + s.str() + " vs " +
                            in.str());
        }
        channels += s.c;
      }
      layer.out_shape = {1, channels, in.h, in.w};
      break;
    }
    case LayerKind::kFlatten:
      layer.out_shape = {1, static_cast<std::uint32_t>(in.item_count()), 1, 1};
      break;
    case LayerKind::kRelu:
    case LayerKind::kSoftmax:
      layer.out_shape = in;
      break;
  }
  if (!layer.has_parameters()) {
    layer.weights = Tensor();
    layer.bias.clear();
  }
  layers_.push_back(std::move(layer));
  return layers_.back();
}

std::string Model::conv2d(std::string name, std::string input,
                          std::uint32_t out_channels, std::uint32_t kernel,
                          std::uint32_t stride, std::uint32_t padding) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::kConv2d;
  l.inputs = {std::move(input)};
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return add(std::move(l)).name;
}

std::string Model::dense(std::string name, std::string input,
                         std::uint32_t out_features) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::kDense;
  l.inputs = {std::move(input)};
  l.out_channels = out_features;
  return add(std::move(l)).name;
}

namespace {
Layer simple(std::string name, LayerKind kind, std::string input) {
  Layer l;
  l.name = std::move(name);
  l.kind = kind;
  l.inputs = {std::move(input)};
  return l;
}
}  // namespace

std::string Model::relu(std::string name, std::string input) {
  return add(simple(std::move(name), LayerKind::kRelu, std::move(input))).name;
}

std::string Model::maxpool(std::string name, std::string input,
                           std::uint32_t kernel, std::uint32_t stride,
                           std::uint32_t padding) {
  Layer l = simple(std::move(name), LayerKind::kMaxPool, std::move(input));
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return add(std::move(l)).name;
}

std::string Model::avgpool(std::string name, std::string input,
                           std::uint32_t kernel, std::uint32_t stride,
                           std::uint32_t padding) {
  Layer l = simple(std::move(name), LayerKind::kAvgPool, std::move(input));
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return add(std::move(l)).name;
}

std::string Model::global_avgpool(std::string name, std::string input) {
  return add(simple(std::move(name), LayerKind::kGlobalAvgPool, std::move(input))).name;
}

std::string Model::concat(std::string name, std::vector<std::string> inputs) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::kConcat;
  l.inputs = std::move(inputs);
  return add(std::move(l)).name;
}

std::string Model::flatten(std::string name, std::string input) {
  return add(simple(std::move(name), LayerKind::kFlatten, std::move(input))).name;
}

std::string Model::softmax(std::string name, std::string input) {
  return add(simple(std::move(name), LayerKind::kSoftmax, std::move(input))).name;
}

void Model::validate() const {
  if (layers_.empty()) invalid(meta_.name, "model has no layers");
  if (!meta_.input_mean.empty() && meta_.input_mean.size() != input_shape_.c) {
    invalid(meta_.name, "input_mean has " + std::to_string(meta_.input_mean.size()) +
                            " entries for " + std::to_string(input_shape_.c) + " channels");
  }
  const auto users = consumers();
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
    if (users[i].empty()) {
      invalid(layers_[i].name, "output is never consumed (model must have a single output)");
    }
  }
  if (!users.back().empty()) invalid(layers_.back().name, "output layer is consumed");
  const Shape logits = layers_[logits_index()].out_shape;
  if (logits != Shape{1, class_count_, 1, 1}) {
    invalid(layers_[logits_index()].name,
            "logits shape " + logits.str() + " does not match class count " +
                std::to_string(class_count_));
  }
}

std::optional<std::size_t> Model::find(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t Model::index_of(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw Error(ErrorCode::kInvalidArgument, std::string(name), "no such layer");
  return *idx;
}

std::size_t Model::logits_index() const {
  if (layers_.empty()) invalid(meta_.name, "model has no layers");
  const Layer& last = layers_.back();
  if (last.kind == LayerKind::kSoftmax && last.sources.front() >= 0) {
    return static_cast<std::size_t>(last.sources.front());
  }
  return layers_.size() - 1;
}

std::vector<std::vector<std::size_t>> Model::consumers() const {
  std::vector<std::vector<std::size_t>> users(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (int src : layers_[i].sources) {
      if (src >= 0) users[static_cast<std::size_t>(src)].push_back(i);
    }
  }
  return users;
}

std::size_t Model::parameter_count() const {
  std::size_t total = 0;
  for (const auto& l : layers_) total += l.weights.size() + l.bias.size();
  return total;
}

bool Model::operator==(const Model& other) const {
  if (input_shape_ != other.input_shape_ || class_count_ != other.class_count_ ||
      !(meta_ == other.meta_) || layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& a = layers_[i];
    const Layer& b = other.layers_[i];
    if (a.name != b.name || a.kind != b.kind || a.inputs != b.inputs ||
        a.kernel != b.kernel || a.stride != b.stride || a.padding != b.padding ||
        a.out_channels != b.out_channels || a.weights.shape() != b.weights.shape() ||
        !same_bits(a.weights.storage(), b.weights.storage()) || !same_bits(a.bias, b.bias)) {
      return false;
    }
  }
  return true;
}

void init_he_uniform(Model& model, std::uint64_t seed) {
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    Layer& l = model.layers()[i];
    if (!l.has_parameters()) continue;
    const Shape ws = l.weights.shape();
    const double fan_in = static_cast<double>(ws.c) * ws.h * ws.w;
    const double limit = std::sqrt(6.0 / fan_in);
    Rng rng(seed, "init", i);
    for (float& w : l.weights.values()) w = static_cast<float>(rng.uniform(-limit, limit));
    std::fill(l.bias.begin(), l.bias.end(), 0.0f);
  }
}

}  // namespace rlvs
