#include "rlvs/backward.hpp"

#include "kernels.hpp"
#include "layer_ops.hpp"

namespace rlvs {

Gradients backward(const Model& model, const ForwardTrace& trace,
                   const Tensor& output_grad, BackwardOptions options) {
  check_trace(model, trace);
  const auto& layers = model.layers();
  const std::size_t top = model.logits_index();
  const std::uint32_t batch = trace.batch();
  if (output_grad.shape() != trace.outputs[top].shape()) {
    throw Error(ErrorCode::kShapeMismatch, layers[top].name,
                "output gradient shape " + output_grad.shape().str() +
                    " does not match logits " + trace.outputs[top].shape().str());
  }

  Gradients grads;
  grads.layers.resize(layers.size());
  std::vector<Tensor> act(layers.size());
  act[top] = output_grad;
  Tensor input_grad;
  if (options.input_grad) input_grad = Tensor(trace.input.shape());

  // Gradient buffer for slot `s` of layer `i`; nullptr when nothing upstream
  // needs it (the model input with input_grad disabled).
  auto sink = [&](std::size_t i, std::size_t s) -> Tensor* {
    const int src = layers[i].sources[s];
    if (src < 0) return options.input_grad ? &input_grad : nullptr;
    Tensor& t = act[static_cast<std::size_t>(src)];
    if (t.empty()) t = Tensor(trace.outputs[static_cast<std::size_t>(src)].shape());
    return &t;
  };

  std::vector<float> scratch;
  for (std::size_t li = top + 1; li-- > 0;) {
    const Layer& layer = layers[li];
    if (act[li].empty()) continue;  // no path to the logits
    const Tensor& g = act[li];
    const Tensor& x = trace.source(model, li, 0);
    const Shape in = x.shape();
    LayerGradients& lg = grads.layers[li];

    switch (layer.kind) {
      case LayerKind::kConv2d: {
        const auto geo = detail::conv_geometry(layer, in);
        lg.weights = Tensor(layer.weights.shape());
        lg.bias.assign(layer.bias.size(), 0.0f);
        Tensor* dx = sink(li, 0);
        for (std::uint32_t b = 0; b < batch; ++b) {
          kernels::conv_backward_weights(g.item(b).data(), x.item(b).data(), geo,
                                         lg.weights.data(), lg.bias.data(), scratch);
          if (dx != nullptr) {
            kernels::conv_backward_data(g.item(b).data(), geo, layer.weights.data(),
                                        dx->item(b).data(), scratch);
          }
        }
        break;
      }
      case LayerKind::kDense: {
        const std::size_t n_in = in.item_count();
        lg.weights = Tensor(layer.weights.shape());
        lg.bias.assign(layer.bias.size(), 0.0f);
        Tensor* dx = sink(li, 0);
        for (std::uint32_t b = 0; b < batch; ++b) {
          const float* gb = g.item(b).data();
          const float* xb = x.item(b).data();
          for (std::uint32_t o = 0; o < layer.out_channels; ++o) {
            kernels::axpy(lg.weights.data() + o * n_in, gb[o], xb, n_in);
            lg.bias[o] += gb[o];
          }
          if (dx != nullptr) {
            kernels::dense_backward_data(gb, n_in, layer.weights.data(), layer.out_channels,
                                         dx->item(b).data());
          }
        }
        break;
      }
      case LayerKind::kRelu: {
        Tensor* dx = sink(li, 0);
        if (dx == nullptr) break;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (x[i] > 0.0f) (*dx)[i] += g[i];
        }
        break;
      }
      case LayerKind::kMaxPool: {
        Tensor* dx = sink(li, 0);
        if (dx == nullptr) break;
        const auto& am = trace.argmax[li];
        const std::size_t out_item = layer.out_shape.item_count();
        for (std::uint32_t b = 0; b < batch; ++b) {
          float* dxb = dx->item(b).data();
          for (std::size_t j = 0; j < out_item; ++j) {
            const std::size_t o = std::size_t{b} * out_item + j;
            dxb[am[o]] += g[o];
          }
        }
        break;
      }
      case LayerKind::kAvgPool: {
        Tensor* dx = sink(li, 0);
        if (dx == nullptr) break;
        const Shape os = g.shape();
        const float norm = 1.0f / static_cast<float>(layer.kernel * layer.kernel);
        for (std::uint32_t b = 0; b < batch; ++b) {
          for (std::uint32_t c = 0; c < os.c; ++c) {
            for (std::uint32_t oy = 0; oy < os.h; ++oy) {
              for (std::uint32_t ox = 0; ox < os.w; ++ox) {
                const float v = g.at(b, c, oy, ox) * norm;
                for (std::uint32_t ky = 0; ky < layer.kernel; ++ky) {
                  const long iy = static_cast<long>(oy) * layer.stride + ky - layer.padding;
                  if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
                  for (std::uint32_t kx = 0; kx < layer.kernel; ++kx) {
                    const long ix = static_cast<long>(ox) * layer.stride + kx - layer.padding;
                    if (ix < 0 || ix >= static_cast<long>(in.w)) continue;
                    dx->at(b, c, static_cast<std::uint32_t>(iy), static_cast<std::uint32_t>(ix)) += v;
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::kGlobalAvgPool: {
        Tensor* dx = sink(li, 0);
        if (dx == nullptr) break;
        const float norm = 1.0f / static_cast<float>(in.plane());
        for (std::uint32_t b = 0; b < batch; ++b) {
          for (std::uint32_t c = 0; c < in.c; ++c) {
            const float v = g.at(b, c, 0, 0) * norm;
            for (float& d : dx->plane(b, c)) d += v;
          }
        }
        break;
      }
      case LayerKind::kConcat: {
        std::size_t offset = 0;
        for (std::size_t s = 0; s < layer.sources.size(); ++s) {
          const std::size_t part = trace.source(model, li, s).shape().item_count();
          Tensor* dx = sink(li, s);
          if (dx != nullptr) {
            for (std::uint32_t b = 0; b < batch; ++b) {
              const float* src = g.item(b).data() + offset;
              float* dst = dx->item(b).data();
              for (std::size_t j = 0; j < part; ++j) dst[j] += src[j];
            }
          }
          offset += part;
        }
        break;
      }
      case LayerKind::kFlatten: {
        Tensor* dx = sink(li, 0);
        if (dx == nullptr) break;
        for (std::size_t i = 0; i < g.size(); ++i) (*dx)[i] += g[i];
        break;
      }
      case LayerKind::kSoftmax: {
        Tensor* dx = sink(li, 0);
        if (dx == nullptr) break;
        const Tensor& y = trace.outputs[li];
        const Shape s = y.shape();
        for (std::uint32_t b = 0; b < batch; ++b) {
          for (std::uint32_t yy = 0; yy < s.h; ++yy) {
            for (std::uint32_t xx = 0; xx < s.w; ++xx) {
              float inner = 0.0f;
              for (std::uint32_t c = 0; c < s.c; ++c) inner += g.at(b, c, yy, xx) * y.at(b, c, yy, xx);
              for (std::uint32_t c = 0; c < s.c; ++c) {
                dx->at(b, c, yy, xx) += y.at(b, c, yy, xx) * (g.at(b, c, yy, xx) - inner);
              }
            }
          }
        }
        break;
      }
    }
  }

  // Parameter gradients for layers with no path to the logits are zero.
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].has_parameters() && grads.layers[i].weights.empty()) {
      grads.layers[i].weights = Tensor(layers[i].weights.shape());
      grads.layers[i].bias.assign(layers[i].bias.size(), 0.0f);
    }
  }
  grads.input = std::move(input_grad);
  if (options.keep_activation_grads) grads.activations = std::move(act);
  return grads;
}

}  // namespace rlvs
