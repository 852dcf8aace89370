#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rlvs/tensor.hpp"

namespace rlvs {

// 8-bit RGB, row-major, interleaved.
struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

struct Image {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  Image() = default;
  Image(std::uint32_t w, std::uint32_t h, Rgb fill = {});

  Rgb at(std::uint32_t x, std::uint32_t y) const;
  void set(std::uint32_t x, std::uint32_t y, Rgb c);
  bool operator==(const Image&) const = default;
};

// Rec. 601 luma, rounded.
std::uint8_t luminance(Rgb c);

void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

// (1, 3, h, w) tensor scaled to [0, 1], and back (clamped, rounded).
Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const Tensor& t, std::uint32_t item = 0);

}  // namespace rlvs
