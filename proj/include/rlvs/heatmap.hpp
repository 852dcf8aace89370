#pragma once

#include <cstdint>
#include <vector>

#include "rlvs/explain.hpp"
#include "rlvs/heatmap_raster.hpp"
#include "rlvs/image.hpp"

namespace rlvs {

struct PatchOrigin {
  std::uint32_t y = 0;
  std::uint32_t x = 0;
  bool operator==(const PatchOrigin&) const = default;
};

// Patch origins covering a tile, sorted row-major.
struct PatchGrid {
  std::uint32_t tile_h = 0;
  std::uint32_t tile_w = 0;
  std::uint32_t patch = 0;
  std::uint32_t stride = 0;
  std::vector<std::uint32_t> ys;
  std::vector<std::uint32_t> xs;
  std::vector<PatchOrigin> origins;
};

inline constexpr std::uint32_t kDefaultPatchSize = 200;
inline constexpr double kVisualizationOverlap = 0.1;
inline constexpr double kDefaultRenderAlpha = 0.6;

// stride = round(patch * (1 - overlap)); the last row/column origin is
// clamped to tile - patch so the grid reaches the edge.
PatchGrid plan_grid(std::uint32_t tile_h, std::uint32_t tile_w, std::uint32_t patch,
                    double overlap);

struct TileHeatmap {
  Heatmap map;
  std::vector<std::uint32_t> coverage;
};

// Coverage-weighted mean of the patch maps, one per grid origin.
TileHeatmap stitch(const std::vector<Heatmap>& patches, const PatchGrid& grid);

// global: every map divided by the largest |v| over the whole set.
// local: every map divided by its own largest |v|.
// All-zero maps are left unchanged with divisor 1. Returns the divisors.
std::vector<double> normalize(std::vector<Heatmap>& maps, Normalization policy);

// Diverging overlay on the base image's luminance:
//   a = alpha * min(|v|, 1), endpoint = red (v > 0) or blue (v < 0)
//   out = round((1 - a) * gray + a * endpoint) per channel
Image render(const Heatmap& map, const Image& base, double alpha = kDefaultRenderAlpha);

// The (1, c, patch, patch) crop of `tile` at `origin`.
Tensor extract_patch(const Tensor& tile, PatchOrigin origin, std::uint32_t patch);

// LRP heatmap for every patch of the grid, in grid order, computed in
// batches. Provenance records the tile id and patch origin.
std::vector<Heatmap> explain_patches(const Model& model, const Tensor& tile,
                                     const PatchGrid& grid, std::size_t target_class,
                                     const RuleConfig& rules = {},
                                     const std::string& tile_id = {},
                                     std::uint32_t batch_size = 32);

}  // namespace rlvs
