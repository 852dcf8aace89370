#include "rlvs/forward.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "kernels.hpp"
#include "layer_ops.hpp"

namespace rlvs {

const Tensor& ForwardTrace::source(const Model& model, std::size_t layer,
                                   std::size_t slot) const {
  const int src = model.layer(layer).sources.at(slot);
  return src < 0 ? input : outputs.at(static_cast<std::size_t>(src));
}

const Tensor& ForwardTrace::logits(const Model& model) const {
  return outputs.at(model.logits_index());
}

namespace detail {

kernels::ConvGeometry conv_geometry(const Layer& layer, const Shape& in) {
  kernels::ConvGeometry g;
  g.in_c = in.c;
  g.in_h = in.h;
  g.in_w = in.w;
  g.out_c = layer.out_shape.c;
  g.out_h = layer.out_shape.h;
  g.out_w = layer.out_shape.w;
  g.k = layer.kernel;
  g.s = layer.stride;
  g.p = layer.padding;
  return g;
}

template <typename T>
BasicTensor<T> run_layer(const Layer& layer,
                         const std::vector<const BasicTensor<T>*>& inputs,
                         std::vector<std::uint32_t>* argmax) {
  const BasicTensor<T>& x = *inputs.front();
  const Shape in = x.shape();
  const std::uint32_t batch = in.n;
  BasicTensor<T> out(layer.out_shape.with_batch(batch));

  switch (layer.kind) {
    case LayerKind::kConv2d: {
      const auto g = conv_geometry(layer, in);
      std::vector<T> scratch;
      for (std::uint32_t b = 0; b < batch; ++b) {
        kernels::conv_forward(x.item(b).data(), g, layer.weights.data(),
                              layer.bias.data(), out.item(b).data(), scratch);
      }
      break;
    }
    case LayerKind::kDense:
      for (std::uint32_t b = 0; b < batch; ++b) {
        kernels::dense_forward(x.item(b).data(), in.item_count(), layer.weights.data(),
                               layer.bias.data(), layer.out_channels, out.item(b).data());
      }
      break;
    case LayerKind::kRelu:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
      break;
    case LayerKind::kMaxPool: {
      const Shape os = out.shape();
      if (argmax != nullptr) argmax->assign(out.size(), 0);
      for (std::uint32_t b = 0; b < batch; ++b) {
        for (std::uint32_t c = 0; c < os.c; ++c) {
          for (std::uint32_t oy = 0; oy < os.h; ++oy) {
            for (std::uint32_t ox = 0; ox < os.w; ++ox) {
              T best = -std::numeric_limits<T>::infinity();
              std::uint32_t best_at = 0;
              bool found = false;
              for (std::uint32_t ky = 0; ky < layer.kernel; ++ky) {
                const long iy = static_cast<long>(oy) * layer.stride + ky - layer.padding;
                if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
                for (std::uint32_t kx = 0; kx < layer.kernel; ++kx) {
                  const long ix = static_cast<long>(ox) * layer.stride + kx - layer.padding;
                  if (ix < 0 || ix >= static_cast<long>(in.w)) continue;
                  const T v = x.at(b, c, static_cast<std::uint32_t>(iy),
                                   static_cast<std::uint32_t>(ix));
                  // Strict comparison: the first maximum in row-major order wins.
                  if (!found || v > best) {
                    best = v;
                    best_at = static_cast<std::uint32_t>(
                        (std::size_t{c} * in.h + static_cast<std::size_t>(iy)) * in.w +
                        static_cast<std::size_t>(ix));
                    found = true;
                  }
                }
              }
              const std::size_t o = out.index(b, c, oy, ox);
              out[o] = best;
              if (argmax != nullptr) (*argmax)[o] = best_at;
            }
          }
        }
      }
      break;
    }
    case LayerKind::kAvgPool: {
      const Shape os = out.shape();
      const T norm = T{1} / static_cast<T>(layer.kernel * layer.kernel);
      for (std::uint32_t b = 0; b < batch; ++b) {
        for (std::uint32_t c = 0; c < os.c; ++c) {
          for (std::uint32_t oy = 0; oy < os.h; ++oy) {
            for (std::uint32_t ox = 0; ox < os.w; ++ox) {
              T acc = T{0};
              for (std::uint32_t ky = 0; ky < layer.kernel; ++ky) {
                const long iy = static_cast<long>(oy) * layer.stride + ky - layer.padding;
                if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
                for (std::uint32_t kx = 0; kx < layer.kernel; ++kx) {
                  const long ix = static_cast<long>(ox) * layer.stride + kx - layer.padding;
                  if (ix < 0 || ix >= static_cast<long>(in.w)) continue;
                  acc += x.at(b, c, static_cast<std::uint32_t>(iy),
                              static_cast<std::uint32_t>(ix));
                }
              }
              out.at(b, c, oy, ox) = acc * norm;
            }
          }
        }
      }
      break;
    }
    case LayerKind::kGlobalAvgPool: {
      const T norm = T{1} / static_cast<T>(in.plane());
      for (std::uint32_t b = 0; b < batch; ++b) {
        for (std::uint32_t c = 0; c < in.c; ++c) {
          T acc = T{0};
          for (T v : x.plane(b, c)) acc += v;
          out.at(b, c, 0, 0) = acc * norm;
        }
      }
      break;
    }
    case LayerKind::kConcat:
      for (std::uint32_t b = 0; b < batch; ++b) {
        T* dst = out.item(b).data();
        for (const auto* part : inputs) {
          auto src = part->item(b);
          std::memcpy(dst, src.data(), src.size() * sizeof(T));
          dst += src.size();
        }
      }
      break;
    case LayerKind::kFlatten:
      std::memcpy(out.data(), x.data(), x.size() * sizeof(T));
      break;
    case LayerKind::kSoftmax:
      softmax_channels(x, out);
      break;
  }
  return out;
}

template <typename T>
void softmax_channels(const BasicTensor<T>& x, BasicTensor<T>& out) {
  const Shape s = x.shape();
  for (std::uint32_t b = 0; b < s.n; ++b) {
    for (std::uint32_t y = 0; y < s.h; ++y) {
      for (std::uint32_t xx = 0; xx < s.w; ++xx) {
        T m = -std::numeric_limits<T>::infinity();
        for (std::uint32_t c = 0; c < s.c; ++c) m = std::max(m, x.at(b, c, y, xx));
        T total = T{0};
        for (std::uint32_t c = 0; c < s.c; ++c) {
          const T e = std::exp(x.at(b, c, y, xx) - m);
          out.at(b, c, y, xx) = e;
          total += e;
        }
        for (std::uint32_t c = 0; c < s.c; ++c) out.at(b, c, y, xx) /= total;
      }
    }
  }
}

template BasicTensor<float> run_layer(const Layer&, const std::vector<const BasicTensor<float>*>&,
                                      std::vector<std::uint32_t>*);
template BasicTensor<double> run_layer(const Layer&, const std::vector<const BasicTensor<double>*>&,
                                       std::vector<std::uint32_t>*);
template void softmax_channels(const BasicTensor<float>&, BasicTensor<float>&);
template void softmax_channels(const BasicTensor<double>&, BasicTensor<double>&);

}  // namespace detail

namespace {

void check_input(const Model& model, const Shape& shape) {
  if (shape.n == 0 || shape.with_batch(1) != model.input_shape()) {
    const std::string first = model.layers().empty() ? "input" : model.layers().front().name;
    throw Error(ErrorCode::kShapeMismatch, first,
                "input shape " + shape.str() + " does not match model input " +
                    model.input_shape().str());
  }
}

template <typename T>
std::vector<BasicTensor<T>> run_all(const Model& model, const BasicTensor<T>& input,
                                    std::vector<std::vector<std::uint32_t>>* argmax) {
  model.validate();
  check_input(model, input.shape());
  const auto& layers = model.layers();
  std::vector<BasicTensor<T>> outputs;
  outputs.reserve(layers.size());
  if (argmax != nullptr) argmax->assign(layers.size(), {});
  std::vector<const BasicTensor<T>*> ins;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    ins.clear();
    for (int src : layers[i].sources) {
      ins.push_back(src < 0 ? &input : &outputs[static_cast<std::size_t>(src)]);
    }
    outputs.push_back(detail::run_layer(
        layers[i], ins,
        (argmax != nullptr && layers[i].kind == LayerKind::kMaxPool) ? &(*argmax)[i]
                                                                     : nullptr));
  }
  return outputs;
}

template <typename T>
BasicTensor<T> centered(const Model& model, const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  const auto& mean = model.meta().input_mean;
  if (mean.empty() || mean.size() != input.shape().c) return out;
  const Shape s = input.shape();
  for (std::uint32_t n = 0; n < s.n; ++n) {
    for (std::uint32_t c = 0; c < s.c; ++c) {
      for (T& v : out.plane(n, c)) v -= static_cast<T>(mean[c]);
    }
  }
  return out;
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& input, bool capture) {
  ForwardTrace trace;
  Tensor x = centered(model, input);
  trace.outputs = run_all(model, x, capture ? &trace.argmax : nullptr);
  ForwardResult result;
  result.logits = trace.outputs[model.logits_index()];
  if (capture) {
    trace.input = std::move(x);
    result.trace = std::move(trace);
  }
  return result;
}

TensorD forward_reference(const Model& model, const TensorD& input) {
  auto outputs = run_all(model, centered(model, input), nullptr);
  return std::move(outputs[model.logits_index()]);
}

void check_trace(const Model& model, const ForwardTrace& trace) {
  const auto& layers = model.layers();
  if (trace.outputs.size() != layers.size() || trace.argmax.size() != layers.size()) {
    throw Error(ErrorCode::kTraceMismatch, model.meta().name,
                "trace covers " + std::to_string(trace.outputs.size()) + " layers, model has " +
                    std::to_string(layers.size()));
  }
  const std::uint32_t batch = trace.input.shape().n;
  if (batch == 0 || trace.input.shape().with_batch(1) != model.input_shape()) {
    throw Error(ErrorCode::kTraceMismatch, "input", "trace input shape does not match model");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (trace.outputs[i].shape() != layers[i].out_shape.with_batch(batch)) {
      throw Error(ErrorCode::kTraceMismatch, layers[i].name,
                  "recorded output shape " + trace.outputs[i].shape().str() +
                      " does not match layer");
    }
    if (layers[i].kind == LayerKind::kMaxPool &&
        trace.argmax[i].size() != trace.outputs[i].size()) {
      throw Error(ErrorCode::kTraceMismatch, layers[i].name, "missing maxpool argmax map");
    }
  }
}

bool replay_matches(const Model& model, const ForwardTrace& trace) {
  check_trace(model, trace);
  const auto& layers = model.layers();
  std::vector<const Tensor*> ins;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    ins.clear();
    for (std::size_t s = 0; s < layers[i].sources.size(); ++s) {
      ins.push_back(&trace.source(model, i, s));
    }
    std::vector<std::uint32_t> argmax;
    const Tensor out = detail::run_layer(layers[i], ins, &argmax);
    const Tensor& rec = trace.outputs[i];
    if (std::memcmp(out.data(), rec.data(), out.size() * sizeof(float)) != 0) return false;
    if (layers[i].kind == LayerKind::kMaxPool && argmax != trace.argmax[i]) return false;
  }
  return true;
}

Tensor softmax_probs(const Tensor& logits) {
  Tensor out(logits.shape());
  detail::softmax_channels(logits, out);
  return out;
}

}  // namespace rlvs
