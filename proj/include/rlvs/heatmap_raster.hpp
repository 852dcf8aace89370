#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlvs/tensor.hpp"

namespace rlvs {

enum class Normalization { kRaw, kLocal, kGlobal };

const char* to_string(Normalization n);

struct HeatmapProvenance {
  std::string method = "lrp";
  std::string model_id;
  int target_class = -1;
  std::string tile_id;
  std::uint32_t origin_x = 0;
  std::uint32_t origin_y = 0;

  bool operator==(const HeatmapProvenance&) const = default;
};

// Single-channel signed raster. `divisor` is the value the raw map was
// divided by (1 while raw).
struct Heatmap {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<float> values;
  Normalization normalization = Normalization::kRaw;
  double divisor = 1.0;
  HeatmapProvenance provenance;

  Heatmap() = default;
  Heatmap(std::uint32_t h, std::uint32_t w, float fill = 0.0f)
      : height(h), width(w), values(std::size_t{h} * w, fill) {}

  float& at(std::uint32_t y, std::uint32_t x) { return values[std::size_t{y} * width + x]; }
  float at(std::uint32_t y, std::uint32_t x) const { return values[std::size_t{y} * width + x]; }
  std::size_t size() const { return values.size(); }
  double sum() const;
  double max_abs() const;

  bool operator==(const Heatmap&) const = default;
};

// "RHMP", height, width (little-endian uint32), then height*width
// little-endian floats. Normalization and provenance go to a JSON sidecar
// at `<path>.json`.
void write_heatmap(const Heatmap& map, const std::filesystem::path& path);
Heatmap read_heatmap(const std::filesystem::path& path);
std::filesystem::path heatmap_sidecar_path(const std::filesystem::path& path);

}  // namespace rlvs
