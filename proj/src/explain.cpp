#include "rlvs/explain.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "layer_ops.hpp"

namespace rlvs {
namespace {

constexpr float kAlphaBetaStabilizer = 1e-12f;

enum class Part { kAll, kPositive, kNegative };

float part_of(float v, Part p) {
  switch (p) {
    case Part::kAll: return v;
    case Part::kPositive: return v > 0.0f ? v : 0.0f;
    case Part::kNegative: return v < 0.0f ? v : 0.0f;
  }
  return v;
}

// The linear map of a conv2d, dense or average-pooling layer, optionally
// restricted to its positive or negative weights.
class LinearView {
 public:
  LinearView(const Layer& layer, const Shape& in) : layer_(layer), in_(in) {
    out_size_ = layer.out_shape.item_count();
    in_size_ = in.item_count();
    if (layer.has_parameters()) {
      geo_ = detail::conv_geometry(layer, in);
      w_pos_ = layer.weights;
      w_neg_ = layer.weights;
      for (float& w : w_pos_.values()) w = part_of(w, Part::kPositive);
      for (float& w : w_neg_.values()) w = part_of(w, Part::kNegative);
    }
  }

  std::size_t in_size() const { return in_size_; }
  std::size_t out_size() const { return out_size_; }

  // Bias of output neuron j, restricted to `part`.
  float bias(std::size_t j, Part part) const {
    if (!layer_.has_parameters()) return 0.0f;
    const std::size_t per_channel =
        layer_.kind == LayerKind::kDense ? 1 : layer_.out_shape.plane();
    return part_of(layer_.bias[j / per_channel], part);
  }

  // z = W_part x.
  void apply(const float* x, Part part, float* z) {
    switch (layer_.kind) {
      case LayerKind::kConv2d:
        kernels::conv_forward(x, geo_, weights(part), static_cast<const float*>(nullptr), z,
                              scratch_);
        break;
      case LayerKind::kDense:
        kernels::dense_forward(x, in_size_, weights(part), static_cast<const float*>(nullptr),
                               out_size_, z);
        break;
      default:
        pool_apply(x, part, z);
        break;
    }
  }

  // out = W_part^T s.
  void apply_transpose(const float* s, Part part, float* out) {
    std::fill(out, out + in_size_, 0.0f);
    switch (layer_.kind) {
      case LayerKind::kConv2d:
        kernels::conv_backward_data(s, geo_, weights(part), out, scratch_);
        break;
      case LayerKind::kDense:
        kernels::dense_backward_data(s, in_size_, weights(part), out_size_, out);
        break;
      default:
        pool_transpose(s, part, out);
        break;
    }
  }

 private:
  const float* weights(Part part) const {
    switch (part) {
      case Part::kAll: return layer_.weights.data();
      case Part::kPositive: return w_pos_.data();
      case Part::kNegative: return w_neg_.data();
    }
    return layer_.weights.data();
  }

  // Pooling windows: visits (output index, input index) pairs with the
  // uniform weight of the window.
  template <typename F>
  void for_each_window(F&& f) const {
    if (layer_.kind == LayerKind::kGlobalAvgPool) {
      const std::size_t plane = in_.plane();
      const float w = 1.0f / static_cast<float>(plane);
      for (std::uint32_t c = 0; c < in_.c; ++c) {
        for (std::size_t i = 0; i < plane; ++i) f(std::size_t{c}, c * plane + i, w);
      }
      return;
    }
    const Shape os = layer_.out_shape;
    const float w = 1.0f / static_cast<float>(layer_.kernel * layer_.kernel);
    for (std::uint32_t c = 0; c < os.c; ++c) {
      for (std::uint32_t oy = 0; oy < os.h; ++oy) {
        for (std::uint32_t ox = 0; ox < os.w; ++ox) {
          const std::size_t j = (std::size_t{c} * os.h + oy) * os.w + ox;
          for (std::uint32_t ky = 0; ky < layer_.kernel; ++ky) {
            const long iy = static_cast<long>(oy) * layer_.stride + ky - layer_.padding;
            if (iy < 0 || iy >= static_cast<long>(in_.h)) continue;
            for (std::uint32_t kx = 0; kx < layer_.kernel; ++kx) {
              const long ix = static_cast<long>(ox) * layer_.stride + kx - layer_.padding;
              if (ix < 0 || ix >= static_cast<long>(in_.w)) continue;
              f(j, (std::size_t{c} * in_.h + static_cast<std::size_t>(iy)) * in_.w +
                       static_cast<std::size_t>(ix),
                w);
            }
          }
        }
      }
    }
  }

  void pool_apply(const float* x, Part part, float* z) const {
    std::fill(z, z + out_size_, 0.0f);
    if (part == Part::kNegative) return;
    for_each_window([&](std::size_t j, std::size_t i, float w) { z[j] += w * x[i]; });
  }

  void pool_transpose(const float* s, Part part, float* out) const {
    if (part == Part::kNegative) return;
    for_each_window([&](std::size_t j, std::size_t i, float w) { out[i] += w * s[j]; });
  }

  const Layer& layer_;
  Shape in_;
  std::size_t in_size_ = 0;
  std::size_t out_size_ = 0;
  kernels::ConvGeometry geo_;
  Tensor w_pos_;
  Tensor w_neg_;
  std::vector<float> scratch_;
};

void epsilon_rule(LinearView& view, const float* x, const float* r_out, double eps,
                  bool with_bias, float* r_in) {
  std::vector<float> z(view.out_size());
  view.apply(x, Part::kAll, z.data());
  std::vector<float> s(view.out_size());
  for (std::size_t j = 0; j < s.size(); ++j) {
    const double zj = z[j] + (with_bias ? view.bias(j, Part::kAll) : 0.0f);
    const double denom = zj + eps * (zj >= 0.0 ? 1.0 : -1.0);
    s[j] = denom == 0.0 ? 0.0f : static_cast<float>(r_out[j] / denom);
  }
  std::vector<float> c(view.in_size());
  view.apply_transpose(s.data(), Part::kAll, c.data());
  for (std::size_t i = 0; i < c.size(); ++i) r_in[i] += x[i] * c[i];
}

void alpha_beta_rule(LinearView& view, const float* x, const float* r_out, double alpha,
                     double beta, bool with_bias, float* r_in) {
  const std::size_t n_in = view.in_size();
  const std::size_t n_out = view.out_size();
  std::vector<float> x_pos(n_in), x_neg(n_in);
  bool any_negative = false;
  for (std::size_t i = 0; i < n_in; ++i) {
    x_pos[i] = part_of(x[i], Part::kPositive);
    x_neg[i] = part_of(x[i], Part::kNegative);
    any_negative |= x_neg[i] != 0.0f;
  }
  std::vector<float> tmp(n_out), zp(n_out), zn(n_out);
  // z+ = W+ x+ + W- x-,  z- = W- x+ + W+ x-
  view.apply(x_pos.data(), Part::kPositive, zp.data());
  if (beta != 0.0) view.apply(x_pos.data(), Part::kNegative, zn.data());
  if (any_negative) {
    view.apply(x_neg.data(), Part::kNegative, tmp.data());
    for (std::size_t j = 0; j < n_out; ++j) zp[j] += tmp[j];
    if (beta != 0.0) {
      view.apply(x_neg.data(), Part::kPositive, tmp.data());
      for (std::size_t j = 0; j < n_out; ++j) zn[j] += tmp[j];
    }
  }

  std::vector<float> s(n_out), c(n_in);
  auto distribute = [&](Part w_for_pos_x, Part w_for_neg_x, float sign) {
    view.apply_transpose(s.data(), w_for_pos_x, c.data());
    for (std::size_t i = 0; i < n_in; ++i) r_in[i] += sign * x_pos[i] * c[i];
    if (any_negative) {
      view.apply_transpose(s.data(), w_for_neg_x, c.data());
      for (std::size_t i = 0; i < n_in; ++i) r_in[i] += sign * x_neg[i] * c[i];
    }
  };

  if (alpha != 0.0) {
    for (std::size_t j = 0; j < n_out; ++j) {
      const float b = with_bias ? view.bias(j, Part::kPositive) : 0.0f;
      s[j] = static_cast<float>(alpha * r_out[j] / (zp[j] + b + kAlphaBetaStabilizer));
    }
    distribute(Part::kPositive, Part::kNegative, 1.0f);
  }
  if (beta != 0.0) {
    for (std::size_t j = 0; j < n_out; ++j) {
      const float b = with_bias ? view.bias(j, Part::kNegative) : 0.0f;
      s[j] = static_cast<float>(beta * r_out[j] / (zn[j] + b - kAlphaBetaStabilizer));
    }
    distribute(Part::kNegative, Part::kPositive, -1.0f);
  }
}

}  // namespace

Rule RuleConfig::rule_for(LayerKind kind) const {
  auto it = rules.find(kind);
  if (it == rules.end()) {
    throw Error(ErrorCode::kInvalidArgument, std::string(to_string(kind)),
                "no relevance rule assigned to this layer kind");
  }
  return it->second;
}

void RuleConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw Error(ErrorCode::kInvalidArgument, "rules", "epsilon must be a finite value >= 0");
  }
  if (!std::isfinite(alpha) || !std::isfinite(beta)) {
    throw Error(ErrorCode::kInvalidArgument, "rules", "alpha and beta must be finite");
  }
  if (require_conservation && std::abs(alpha - beta - 1.0) > 1e-12) {
    throw Error(ErrorCode::kInvalidArgument, "rules",
                "conservation requires alpha - beta = 1");
  }
}

RuleConfig RuleConfig::conserving() {
  RuleConfig c;
  c.epsilon = 0.0;
  c.alpha = 1.0;
  c.beta = 0.0;
  c.bias_mode = BiasMode::kExclude;
  c.require_conservation = true;
  return c;
}

RelevanceState propagate_relevance(const Model& model, const ForwardTrace& trace,
                                   std::size_t target_class, const RuleConfig& rules) {
  rules.validate();
  check_trace(model, trace);
  if (target_class >= model.class_count()) {
    throw Error(ErrorCode::kInvalidArgument, "lrp",
                "target class " + std::to_string(target_class) + " out of range");
  }
  const auto& layers = model.layers();
  const std::size_t top = model.logits_index();
  const std::uint32_t batch = trace.batch();

  RelevanceState state;
  state.target_class = target_class;
  state.layers.resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    state.layers[i] = Tensor(trace.outputs[i].shape());
  }
  state.input = Tensor(trace.input.shape());
  const Tensor& logits = trace.outputs[top];
  for (std::uint32_t b = 0; b < batch; ++b) {
    const float r = logits.at(b, static_cast<std::uint32_t>(target_class), 0, 0);
    state.output_relevance.push_back(r);
    state.layers[top].at(b, static_cast<std::uint32_t>(target_class), 0, 0) = r;
  }

  auto sink = [&](std::size_t li, std::size_t slot) -> Tensor& {
    const int src = layers[li].sources[slot];
    return src < 0 ? state.input : state.layers[static_cast<std::size_t>(src)];
  };
  const bool with_bias = rules.bias_mode == BiasMode::kIncludeInDenominator;

  for (std::size_t li = top + 1; li-- > 0;) {
    const Layer& layer = layers[li];
    const Tensor& r_out = state.layers[li];
    const Tensor& x = trace.source(model, li, 0);

    switch (layer.kind) {
      case LayerKind::kConv2d:
      case LayerKind::kDense:
      case LayerKind::kAvgPool:
      case LayerKind::kGlobalAvgPool: {
        LinearView view(layer, x.shape().with_batch(1));
        Tensor& r_in = sink(li, 0);
        const Rule rule = rules.rule_for(layer.kind);
        for (std::uint32_t b = 0; b < batch; ++b) {
          if (rule == Rule::kEpsilon) {
            epsilon_rule(view, x.item(b).data(), r_out.item(b).data(), rules.epsilon, with_bias,
                         r_in.item(b).data());
          } else {
            alpha_beta_rule(view, x.item(b).data(), r_out.item(b).data(), rules.alpha,
                            rules.beta, with_bias, r_in.item(b).data());
          }
        }
        break;
      }
      case LayerKind::kRelu:
      case LayerKind::kFlatten: {
        Tensor& r_in = sink(li, 0);
        for (std::size_t i = 0; i < r_out.size(); ++i) r_in[i] += r_out[i];
        break;
      }
      case LayerKind::kMaxPool: {
        Tensor& r_in = sink(li, 0);
        const auto& am = trace.argmax[li];
        const std::size_t out_item = layer.out_shape.item_count();
        for (std::uint32_t b = 0; b < batch; ++b) {
          float* dst = r_in.item(b).data();
          for (std::size_t j = 0; j < out_item; ++j) {
            const std::size_t o = std::size_t{b} * out_item + j;
            dst[am[o]] += r_out[o];
          }
        }
        break;
      }
      case LayerKind::kConcat: {
        std::size_t offset = 0;
        for (std::size_t s = 0; s < layer.sources.size(); ++s) {
          Tensor& r_in = sink(li, s);
          const std::size_t part = r_in.shape().item_count();
          for (std::uint32_t b = 0; b < batch; ++b) {
            const float* src = r_out.item(b).data() + offset;
            float* dst = r_in.item(b).data();
            for (std::size_t j = 0; j < part; ++j) dst[j] += src[j];
          }
          offset += part;
        }
        break;
      }
      case LayerKind::kSoftmax:
        throw Error(ErrorCode::kUnsupported, layer.name,
                    "relevance cannot pass through a non-terminal softmax");
    }

    for (std::size_t s = 0; s < layer.sources.size(); ++s) {
      if (!sink(li, s).all_finite()) {
        throw Error(ErrorCode::kNonFinite, layer.name, "non-finite relevance");
      }
    }
  }
  return state;
}

Heatmap channel_collapse(const Tensor& relevance, std::uint32_t item) {
  const Shape s = relevance.shape();
  if (item >= s.n) throw Error(ErrorCode::kInvalidArgument, "channel_collapse", "item out of range");
  Heatmap map(s.h, s.w);
  for (std::uint32_t c = 0; c < s.c; ++c) {
    const auto plane = relevance.plane(item, c);
    for (std::size_t i = 0; i < plane.size(); ++i) map.values[i] += plane[i];
  }
  return map;
}

std::vector<Heatmap> lrp(const Model& model, const ForwardTrace& trace,
                         std::size_t target_class, const RuleConfig& rules) {
  const RelevanceState state = propagate_relevance(model, trace, target_class, rules);
  std::vector<Heatmap> maps;
  for (std::uint32_t b = 0; b < trace.batch(); ++b) {
    Heatmap map = channel_collapse(state.input, b);
    map.provenance.model_id = model.meta().name;
    map.provenance.target_class = static_cast<int>(target_class);
    maps.push_back(std::move(map));
  }
  return maps;
}

namespace {

// Can the logits layer be reached from the model input without passing
// through layer `removed`?
bool reachable_without(const Model& model, std::size_t removed) {
  const auto& layers = model.layers();
  const std::size_t top = model.logits_index();
  std::vector<char> reached(layers.size(), 0);
  for (std::size_t i = 0; i <= top; ++i) {
    if (i == removed) continue;
    for (int src : layers[i].sources) {
      if (src < 0 || reached[static_cast<std::size_t>(src)]) {
        reached[i] = 1;
        break;
      }
    }
  }
  return top != removed && reached[top];
}

}  // namespace

double ConservationReport::max_deviation() const {
  double worst = input_deviation;
  for (const auto& l : layers) worst = std::max(worst, l.relative_deviation);
  return worst;
}

ConservationReport relevance_conservation(const RelevanceState& state, const Model& model,
                                          std::uint32_t item) {
  ConservationReport report;
  report.output_relevance = state.output_relevance.at(item);
  const double ref = std::abs(report.output_relevance);
  auto deviation = [ref, &report](double sum) {
    const double d = std::abs(sum - report.output_relevance);
    return ref > 0.0 ? d / ref : d;
  };
  const std::size_t top = model.logits_index();
  for (std::size_t i = 0; i <= top; ++i) {
    double sum = 0.0;
    for (float v : state.layers[i].item(item)) sum += v;
    const bool on_path = !reachable_without(model, i);
    report.layers.push_back({model.layer(i).name, sum, on_path, on_path ? deviation(sum) : 0.0});
  }
  for (float v : state.input.item(item)) report.input_sum += v;
  report.input_deviation = deviation(report.input_sum);
  return report;
}

}  // namespace rlvs
