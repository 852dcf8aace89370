#include "rlvs/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>

namespace rlvs {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors by longjmp; the message is parked here and turned
// into an exception once control is back in C++ frames.
void png_fail(png_structp png, png_const_charp msg) {
  *static_cast<std::string*>(png_get_error_ptr(png)) = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

Image::Image(std::uint32_t w, std::uint32_t h, Rgb fill)
    : width(w), height(h), pixels(std::size_t{w} * h * 3) {
  for (std::size_t i = 0; i < std::size_t{w} * h; ++i) {
    pixels[3 * i] = fill.r;
    pixels[3 * i + 1] = fill.g;
    pixels[3 * i + 2] = fill.b;
  }
}

Rgb Image::at(std::uint32_t x, std::uint32_t y) const {
  const std::size_t i = (std::size_t{y} * width + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Image::set(std::uint32_t x, std::uint32_t y, Rgb c) {
  const std::size_t i = (std::size_t{y} * width + x) * 3;
  pixels[i] = c.r;
  pixels[i + 1] = c.g;
  pixels[i + 2] = c.b;
}

std::uint8_t luminance(Rgb c) {
  const double y = 0.299 * c.r + 0.587 * c.g + 0.114 * c.b;
  return static_cast<std::uint8_t>(std::clamp(std::lround(y), 0L, 255L));
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.pixels.size() != std::size_t{image.width} * image.height * 3 || image.width == 0 ||
      image.height == 0) {
    throw Error(ErrorCode::kInvalidArgument, path.string(), "image has inconsistent dimensions");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error(ErrorCode::kIo, path.string(), "cannot open for writing");
  std::string message;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};
  if (setjmp(png_jmpbuf(png))) throw Error(ErrorCode::kIo, path.string(), message);
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t y = 0; y < image.height; ++y) {
    png_write_row(png, image.pixels.data() + std::size_t{y} * image.width * 3);
  }
  png_write_end(png, nullptr);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error(ErrorCode::kIo, path.string(), "cannot open for reading");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error(ErrorCode::kCorruptFile, path.string(), "not a PNG file");
  }
  std::string message;
  Image image;
  std::vector<png_bytep> rows;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};
  if (setjmp(png_jmpbuf(png))) throw Error(ErrorCode::kCorruptFile, path.string(), message);
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  image = Image(png_get_image_width(png, info), png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != std::size_t{image.width} * 3) {
    throw Error(ErrorCode::kUnsupported, path.string(), "unsupported PNG layout");
  }
  rows.resize(image.height);
  for (std::uint32_t y = 0; y < image.height; ++y) {
    rows[y] = image.pixels.data() + std::size_t{y} * image.width * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  return image;
}

Tensor image_to_tensor(const Image& image) {
  Tensor t(Shape{1, 3, image.height, image.width});
  const std::size_t plane = t.shape().plane();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      t[c * plane + i] = static_cast<float>(image.pixels[3 * i + c]) / 255.0f;
    }
  }
  return t;
}

Image tensor_to_image(const Tensor& t, std::uint32_t item) {
  const Shape s = t.shape();
  if (s.c != 3 || item >= s.n) {
    throw Error(ErrorCode::kShapeMismatch, "tensor_to_image", "expected a 3-channel tensor");
  }
  Image image(s.w, s.h);
  const std::size_t plane = s.plane();
  const float* src = t.item(item).data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const long v = std::lround(std::clamp(src[c * plane + i], 0.0f, 1.0f) * 255.0f);
      image.pixels[3 * i + c] = static_cast<std::uint8_t>(v);
    }
  }
  return image;
}

}  // namespace rlvs
