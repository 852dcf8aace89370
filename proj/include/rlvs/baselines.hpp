#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlvs/forward.hpp"
#include "rlvs/heatmap_raster.hpp"

namespace rlvs {

enum class CoarseMethod { kProbabilityMap, kGradCam };

const char* to_string(CoarseMethod m);

// A coarse explanation: values on its native grid plus the same values
// resampled to the image it explains.
struct CoarseMap {
  std::uint32_t grid_h = 0;
  std::uint32_t grid_w = 0;
  std::vector<float> grid;
  Heatmap raster;
  CoarseMethod method = CoarseMethod::kProbabilityMap;
  std::size_t target_class = 0;

  float cell(std::uint32_t y, std::uint32_t x) const { return grid[std::size_t{y} * grid_w + x]; }
};

// Softmax probability of `target_class` for every patch of a sliding
// window with origins (i*stride, j*stride), upsampled to the tile by
// nearest neighbour. The model input must be patch_size square and `tile`
// a single (1, c, H, W) image.
CoarseMap probability_map(const Model& model, const Tensor& tile, std::uint32_t patch_size,
                          std::uint32_t stride, std::size_t target_class,
                          std::uint32_t batch_size = 64);

// Name of the last conv2d layer; throws kInvalidArgument if there is none.
std::string default_gradcam_layer(const Model& model);

// ReLU(sum_k weights[k] * features[k]) for features shaped (1, K, h, w).
std::vector<float> gradcam_combine(const Tensor& features, const std::vector<float>& weights);

// Grad-CAM for batch item `item` at `layer` (the last conv2d when empty).
// When the layer feeds exactly one ReLU, the rectified maps are used.
// Channel weights are the spatial mean of d(logit_target)/d(feature map);
// the map is bilinearly upsampled to the input size.
CoarseMap gradcam(const Model& model, const ForwardTrace& trace, std::size_t target_class,
                  const std::string& layer = {}, std::uint32_t item = 0);

// Nearest-neighbour and bilinear resampling with pixel centres at +0.5.
std::vector<float> upsample_nearest(const std::vector<float>& grid, std::uint32_t gh,
                                    std::uint32_t gw, std::uint32_t h, std::uint32_t w);
std::vector<float> upsample_bilinear(const std::vector<float>& grid, std::uint32_t gh,
                                     std::uint32_t gw, std::uint32_t h, std::uint32_t w);

// Writes the upsampled raster to `path` and the native grid to
// `<path>.grid`, both as heatmap rasters tagged with the method.
void write_coarse_map(const CoarseMap& map, const std::filesystem::path& path);

}  // namespace rlvs
