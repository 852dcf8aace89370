#include "rlvs/heatmap_raster.hpp"

#include <cmath>
#include <cstring>
#include <string_view>

#include "json.hpp"

namespace rlvs {

const char* to_string(Normalization n) {
  switch (n) {
    case Normalization::kRaw: return "raw";
    case Normalization::kLocal: return "local";
    case Normalization::kGlobal: return "global";
  }
  return "raw";
}

double Heatmap::sum() const {
  double s = 0.0;
  for (float v : values) s += v;
  return s;
}

double Heatmap::max_abs() const {
  double m = 0.0;
  for (float v : values) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

std::filesystem::path heatmap_sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

void write_heatmap(const Heatmap& map, const std::filesystem::path& path) {
  if (map.values.size() != std::size_t{map.height} * map.width) {
    throw Error(ErrorCode::kShapeMismatch, path.string(), "heatmap value count does not match dims");
  }
  std::vector<unsigned char> bytes;
  bytes.reserve(12 + 4 * map.values.size());
  for (char c : std::string_view("RHMP")) bytes.push_back(static_cast<unsigned char>(c));
  detail::put_u32_le(bytes, map.height);
  detail::put_u32_le(bytes, map.width);
  for (float v : map.values) detail::put_f32_le(bytes, v);
  detail::write_file(path, bytes);

  const auto& p = map.provenance;
  nlohmann::json side{{"normalization", to_string(map.normalization)},
                      {"divisor", map.divisor},
                      {"method", p.method},
                      {"model_id", p.model_id},
                      {"target_class", p.target_class},
                      {"tile_id", p.tile_id},
                      {"origin", {p.origin_x, p.origin_y}}};
  const std::string text = side.dump(2) + "\n";
  detail::write_file(heatmap_sidecar_path(path),
                     std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

Heatmap read_heatmap(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RHMP", 4) != 0) {
    throw Error(ErrorCode::kCorruptFile, path.string(), "missing RHMP header");
  }
  Heatmap map(detail::get_u32_le(&bytes[4]), detail::get_u32_le(&bytes[8]));
  if (bytes.size() != 12 + 4 * map.values.size()) {
    throw Error(ErrorCode::kCorruptFile, path.string(), "payload length does not match header");
  }
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    map.values[i] = detail::get_f32_le(&bytes[12 + 4 * i]);
  }
  const auto side_path = heatmap_sidecar_path(path);
  if (std::filesystem::exists(side_path)) {
    const auto side_bytes = detail::read_file(side_path);
    try {
      const auto side = nlohmann::json::parse(side_bytes.begin(), side_bytes.end());
      const auto norm = side.value("normalization", std::string("raw"));
      map.normalization = norm == "global"  ? Normalization::kGlobal
                          : norm == "local" ? Normalization::kLocal
                                            : Normalization::kRaw;
      map.divisor = side.value("divisor", 1.0);
      auto& p = map.provenance;
      p.method = side.value("method", std::string("lrp"));
      p.model_id = side.value("model_id", std::string());
      p.target_class = side.value("target_class", -1);
      p.tile_id = side.value("tile_id", std::string());
      if (side.contains("origin")) {
        p.origin_x = side["origin"].at(0).get<std::uint32_t>();
        p.origin_y = side["origin"].at(1).get<std::uint32_t>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kCorruptFile, side_path.string(), e.what());
    }
  }
  return map;
}

}  // namespace rlvs
