#include "rlvs/heatmap.hpp"

#include <algorithm>
#include <cmath>

namespace rlvs {
namespace {

std::vector<std::uint32_t> axis_origins(std::uint32_t extent, std::uint32_t patch,
                                        std::uint32_t stride) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t o = 0;; o += stride) {
    if (o + patch >= extent) {
      out.push_back(extent - patch);
      break;
    }
    out.push_back(o);
  }
  return out;
}

}  // namespace

PatchGrid plan_grid(std::uint32_t tile_h, std::uint32_t tile_w, std::uint32_t patch,
                    double overlap) {
  if (!(overlap >= 0.0 && overlap <= 0.95)) {
    throw Error(ErrorCode::kInvalidArgument, "plan_grid", "overlap must lie in [0, 0.95]");
  }
  if (patch == 0 || tile_h < patch || tile_w < patch) {
    throw Error(ErrorCode::kInvalidArgument, "plan_grid",
                "tile " + std::to_string(tile_h) + "x" + std::to_string(tile_w) +
                    " is smaller than patch " + std::to_string(patch));
  }
  PatchGrid g;
  g.tile_h = tile_h;
  g.tile_w = tile_w;
  g.patch = patch;
  g.stride = std::max<std::uint32_t>(
      1, static_cast<std::uint32_t>(std::lround(patch * (1.0 - overlap))));
  g.ys = axis_origins(tile_h, patch, g.stride);
  g.xs = axis_origins(tile_w, patch, g.stride);
  for (std::uint32_t y : g.ys) {
    for (std::uint32_t x : g.xs) g.origins.push_back({y, x});
  }
  return g;
}

TileHeatmap stitch(const std::vector<Heatmap>& patches, const PatchGrid& grid) {
  if (patches.size() != grid.origins.size()) {
    throw Error(ErrorCode::kShapeMismatch, "stitch",
                std::to_string(patches.size()) + " patch maps for " +
                    std::to_string(grid.origins.size()) + " grid origins");
  }
  std::vector<double> acc(std::size_t{grid.tile_h} * grid.tile_w, 0.0);
  TileHeatmap tile;
  tile.coverage.assign(acc.size(), 0);
  for (std::size_t p = 0; p < patches.size(); ++p) {
    const Heatmap& m = patches[p];
    if (m.height != grid.patch || m.width != grid.patch) {
      throw Error(ErrorCode::kShapeMismatch, "stitch",
                  "patch map " + std::to_string(p) + " is not " + std::to_string(grid.patch) +
                      " square");
    }
    const PatchOrigin o = grid.origins[p];
    for (std::uint32_t y = 0; y < grid.patch; ++y) {
      const std::size_t row = std::size_t{o.y + y} * grid.tile_w + o.x;
      for (std::uint32_t x = 0; x < grid.patch; ++x) {
        acc[row + x] += m.at(y, x);
        ++tile.coverage[row + x];
      }
    }
  }
  tile.map = Heatmap(grid.tile_h, grid.tile_w);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (tile.coverage[i] == 0) {
      throw Error(ErrorCode::kInvalidArgument, "stitch", "grid leaves pixels uncovered");
    }
    tile.map.values[i] = static_cast<float>(acc[i] / tile.coverage[i]);
  }
  if (!patches.empty()) {
    tile.map.provenance = patches.front().provenance;
    tile.map.provenance.origin_x = 0;
    tile.map.provenance.origin_y = 0;
  }
  return tile;
}

std::vector<double> normalize(std::vector<Heatmap>& maps, Normalization policy) {
  std::vector<double> divisors(maps.size(), 1.0);
  if (policy == Normalization::kRaw) return divisors;
  double global = 0.0;
  for (const Heatmap& m : maps) global = std::max(global, m.max_abs() * m.divisor);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    Heatmap& m = maps[i];
    // Work from the raw scale so normalizing twice is a no-op.
    const double raw_max = m.max_abs() * m.divisor;
    m.normalization = policy;
    if (raw_max == 0.0) {
      m.divisor = 1.0;
      continue;
    }
    const double target = policy == Normalization::kGlobal ? global : raw_max;
    if (target != m.divisor) {
      for (float& v : m.values) v = static_cast<float>(v * m.divisor / target);
    }
    m.divisor = target;
    divisors[i] = target;
  }
  return divisors;
}

Image render(const Heatmap& map, const Image& base, double alpha) {
  if (map.height != base.height || map.width != base.width) {
    throw Error(ErrorCode::kShapeMismatch, "render",
                "heatmap " + std::to_string(map.width) + "x" + std::to_string(map.height) +
                    " vs image " + std::to_string(base.width) + "x" + std::to_string(base.height));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "render", "alpha must lie in [0, 1]");
  }
  Image out(base.width, base.height);
  auto blend = [](double gray, double a, double end) {
    return static_cast<std::uint8_t>(std::lround((1.0 - a) * gray + a * end));
  };
  for (std::uint32_t y = 0; y < base.height; ++y) {
    for (std::uint32_t x = 0; x < base.width; ++x) {
      const double gray = luminance(base.at(x, y));
      const float v = map.at(y, x);
      const double a = alpha * std::min(1.0, std::abs(static_cast<double>(v)));
      const Rgb end = v > 0.0f ? Rgb{255, 0, 0} : Rgb{0, 0, 255};
      out.set(x, y, {blend(gray, a, end.r), blend(gray, a, end.g), blend(gray, a, end.b)});
    }
  }
  return out;
}

Tensor extract_patch(const Tensor& tile, PatchOrigin origin, std::uint32_t patch) {
  const Shape s = tile.shape();
  if (s.n != 1 || origin.y + patch > s.h || origin.x + patch > s.w) {
    throw Error(ErrorCode::kShapeMismatch, "extract_patch", "patch outside tile " + s.str());
  }
  Tensor out(Shape{1, s.c, patch, patch});
  for (std::uint32_t c = 0; c < s.c; ++c) {
    for (std::uint32_t y = 0; y < patch; ++y) {
      const float* src = &tile.at(0, c, origin.y + y, origin.x);
      std::copy(src, src + patch, &out.at(0, c, y, 0));
    }
  }
  return out;
}

std::vector<Heatmap> explain_patches(const Model& model, const Tensor& tile,
                                     const PatchGrid& grid, std::size_t target_class,
                                     const RuleConfig& rules, const std::string& tile_id,
                                     std::uint32_t batch_size) {
  const Shape ms = model.input_shape();
  if (ms.h != grid.patch || ms.w != grid.patch) {
    throw Error(ErrorCode::kShapeMismatch, "explain_patches",
                "model input " + ms.str() + " does not match patch size");
  }
  if (batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "explain_patches", "batch 0");
  std::vector<Heatmap> maps;
  maps.reserve(grid.origins.size());
  for (std::size_t first = 0; first < grid.origins.size(); first += batch_size) {
    const std::size_t count = std::min<std::size_t>(batch_size, grid.origins.size() - first);
    std::vector<Tensor> patches;
    for (std::size_t i = 0; i < count; ++i) {
      patches.push_back(extract_patch(tile, grid.origins[first + i], grid.patch));
    }
    const auto fr = forward(model, stack(patches), true);
    auto batch_maps = lrp(model, *fr.trace, target_class, rules);
    for (std::size_t i = 0; i < count; ++i) {
      Heatmap& m = batch_maps[i];
      m.provenance.tile_id = tile_id;
      m.provenance.origin_x = grid.origins[first + i].x;
      m.provenance.origin_y = grid.origins[first + i].y;
      maps.push_back(std::move(m));
    }
  }
  return maps;
}

}  // namespace rlvs
