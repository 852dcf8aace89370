#include "rlvs/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "rlvs/backward.hpp"

namespace rlvs {

const char* to_string(CoarseMethod m) {
  switch (m) {
    case CoarseMethod::kProbabilityMap: return "probability_map";
    case CoarseMethod::kGradCam: return "gradcam";
  }
  return "?";
}

std::vector<float> upsample_nearest(const std::vector<float>& grid, std::uint32_t gh,
                                    std::uint32_t gw, std::uint32_t h, std::uint32_t w) {
  std::vector<float> out(std::size_t{h} * w);
  for (std::uint32_t y = 0; y < h; ++y) {
    const auto sy = std::min<std::uint32_t>(
        gh - 1, static_cast<std::uint32_t>((y + 0.5) * gh / h));
    for (std::uint32_t x = 0; x < w; ++x) {
      const auto sx = std::min<std::uint32_t>(
          gw - 1, static_cast<std::uint32_t>((x + 0.5) * gw / w));
      out[std::size_t{y} * w + x] = grid[std::size_t{sy} * gw + sx];
    }
  }
  return out;
}

std::vector<float> upsample_bilinear(const std::vector<float>& grid, std::uint32_t gh,
                                     std::uint32_t gw, std::uint32_t h, std::uint32_t w) {
  auto coord = [](std::uint32_t i, std::uint32_t n, std::uint32_t out, std::uint32_t& lo,
                  std::uint32_t& hi, double& t) {
    double s = (i + 0.5) * n / out - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    lo = static_cast<std::uint32_t>(s);
    hi = std::min(lo + 1, n - 1);
    t = s - lo;
  };
  std::vector<float> out(std::size_t{h} * w);
  for (std::uint32_t y = 0; y < h; ++y) {
    std::uint32_t y0, y1;
    double ty;
    coord(y, gh, h, y0, y1, ty);
    for (std::uint32_t x = 0; x < w; ++x) {
      std::uint32_t x0, x1;
      double tx;
      coord(x, gw, w, x0, x1, tx);
      auto g = [&](std::uint32_t yy, std::uint32_t xx) {
        return static_cast<double>(grid[std::size_t{yy} * gw + xx]);
      };
      const double top = g(y0, x0) * (1 - tx) + g(y0, x1) * tx;
      const double bottom = g(y1, x0) * (1 - tx) + g(y1, x1) * tx;
      out[std::size_t{y} * w + x] = static_cast<float>(top * (1 - ty) + bottom * ty);
    }
  }
  return out;
}

CoarseMap probability_map(const Model& model, const Tensor& tile, std::uint32_t patch_size,
                          std::uint32_t stride, std::size_t target_class,
                          std::uint32_t batch_size) {
  const Shape ts = tile.shape();
  const Shape ms = model.input_shape();
  if (ts.n != 1 || ts.c != ms.c) {
    throw Error(ErrorCode::kShapeMismatch, "probability_map",
                "tile " + ts.str() + " does not match model channels");
  }
  if (ms.h != patch_size || ms.w != patch_size) {
    throw Error(ErrorCode::kShapeMismatch, "probability_map",
                "model input is not " + std::to_string(patch_size) + " square");
  }
  if (stride == 0 || batch_size == 0) {
    throw Error(ErrorCode::kInvalidArgument, "probability_map", "stride and batch must be > 0");
  }
  if (target_class >= model.class_count()) {
    throw Error(ErrorCode::kInvalidArgument, "probability_map", "target class out of range");
  }
  if (ts.h < patch_size || ts.w < patch_size) {
    throw Error(ErrorCode::kEmptyInput, "probability_map", "tile smaller than one patch");
  }
  CoarseMap map;
  map.method = CoarseMethod::kProbabilityMap;
  map.target_class = target_class;
  map.grid_h = (ts.h - patch_size) / stride + 1;
  map.grid_w = (ts.w - patch_size) / stride + 1;
  const std::size_t cells = std::size_t{map.grid_h} * map.grid_w;
  map.grid.resize(cells);

  for (std::size_t first = 0; first < cells; first += batch_size) {
    const auto count = static_cast<std::uint32_t>(std::min<std::size_t>(batch_size, cells - first));
    Tensor batch(ms.with_batch(count));
    for (std::uint32_t b = 0; b < count; ++b) {
      const std::size_t cell = first + b;
      const std::uint32_t oy = static_cast<std::uint32_t>(cell / map.grid_w) * stride;
      const std::uint32_t ox = static_cast<std::uint32_t>(cell % map.grid_w) * stride;
      for (std::uint32_t c = 0; c < ms.c; ++c) {
        for (std::uint32_t y = 0; y < patch_size; ++y) {
          const float* src = &tile.at(0, c, oy + y, ox);
          std::copy(src, src + patch_size, &batch.at(b, c, y, 0));
        }
      }
    }
    const Tensor probs = softmax_probs(forward(model, batch).logits);
    for (std::uint32_t b = 0; b < count; ++b) {
      map.grid[first + b] = probs.at(b, static_cast<std::uint32_t>(target_class), 0, 0);
    }
  }
  map.raster = Heatmap(ts.h, ts.w);
  map.raster.values = upsample_nearest(map.grid, map.grid_h, map.grid_w, ts.h, ts.w);
  map.raster.provenance.method = to_string(map.method);
  map.raster.provenance.model_id = model.meta().name;
  map.raster.provenance.target_class = static_cast<int>(target_class);
  return map;
}

std::string default_gradcam_layer(const Model& model) {
  const auto& layers = model.layers();
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (it->kind == LayerKind::kConv2d) return it->name;
  }
  throw Error(ErrorCode::kInvalidArgument, "gradcam", "model has no conv2d layer");
}

std::vector<float> gradcam_combine(const Tensor& features, const std::vector<float>& weights) {
  const Shape s = features.shape();
  if (s.n != 1 || weights.size() != s.c) {
    throw Error(ErrorCode::kShapeMismatch, "gradcam", "one weight per feature map required");
  }
  std::vector<double> acc(s.plane(), 0.0);
  for (std::uint32_t k = 0; k < s.c; ++k) {
    const auto plane = features.plane(0, k);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(weights[k]) * plane[i];
  }
  std::vector<float> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(std::max(acc[i], 0.0));
  return out;
}

CoarseMap gradcam(const Model& model, const ForwardTrace& trace, std::size_t target_class,
                  const std::string& layer, std::uint32_t item) {
  check_trace(model, trace);
  const std::string name = layer.empty() ? default_gradcam_layer(model) : layer;
  std::size_t index = model.index_of(name);
  const Shape fs = model.layer(index).out_shape;
  if (fs.h * fs.w <= 1) {
    throw Error(ErrorCode::kInvalidArgument, name, "layer has no spatial extent");
  }
  if (target_class >= model.class_count()) {
    throw Error(ErrorCode::kInvalidArgument, "gradcam", "target class out of range");
  }
  if (item >= trace.batch()) {
    throw Error(ErrorCode::kInvalidArgument, "gradcam", "batch item out of range");
  }
  const auto consumers = model.consumers()[index];
  if (consumers.size() == 1 && model.layer(consumers[0]).kind == LayerKind::kRelu) {
    index = consumers[0];
  }

  const Tensor& logits = trace.logits(model);
  Tensor seed(logits.shape());
  seed.at(item, static_cast<std::uint32_t>(target_class), 0, 0) = 1.0f;
  BackwardOptions opts;
  opts.keep_activation_grads = true;
  opts.input_grad = false;
  const Gradients grads = backward(model, trace, seed, opts);

  const Tensor features = trace.outputs[index].slice_item(item);
  const Tensor dfeat = grads.activations[index].slice_item(item);
  std::vector<float> weights(fs.c);
  for (std::uint32_t k = 0; k < fs.c; ++k) {
    double acc = 0.0;
    for (float g : dfeat.plane(0, k)) acc += g;
    weights[k] = static_cast<float>(acc / static_cast<double>(fs.plane()));
  }

  CoarseMap map;
  map.method = CoarseMethod::kGradCam;
  map.target_class = target_class;
  map.grid_h = fs.h;
  map.grid_w = fs.w;
  map.grid = gradcam_combine(features, weights);
  const Shape in = model.input_shape();
  map.raster = Heatmap(in.h, in.w);
  map.raster.values = upsample_bilinear(map.grid, fs.h, fs.w, in.h, in.w);
  map.raster.provenance.method = to_string(map.method);
  map.raster.provenance.model_id = model.meta().name;
  map.raster.provenance.target_class = static_cast<int>(target_class);
  return map;
}

void write_coarse_map(const CoarseMap& map, const std::filesystem::path& path) {
  write_heatmap(map.raster, path);
  Heatmap grid(map.grid_h, map.grid_w);
  grid.values = map.grid;
  grid.provenance = map.raster.provenance;
  write_heatmap(grid, std::filesystem::path(path.string() + ".grid"));
}

}  // namespace rlvs
