#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rlvs/error.hpp"

namespace rlvs {

struct Shape {
  std::uint32_t n = 0;
  std::uint32_t c = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;

  std::size_t count() const {
    return std::size_t{n} * c * h * w;
  }
  std::size_t item_count() const { return std::size_t{c} * h * w; }
  std::size_t plane() const { return std::size_t{h} * w; }
  Shape with_batch(std::uint32_t batch) const { return {batch, c, h, w}; }

  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense (batch, channel, height, width) array, row-major. The float
// instantiation is the carrier for images, activations and relevance; the
// double one exists for numerical verification.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(shape), data_(shape.count(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count()) {
      throw Error(ErrorCode::kShapeMismatch, "tensor",
                  "data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::size_t index(std::uint32_t n, std::uint32_t c, std::uint32_t h,
                    std::uint32_t w) const {
    return ((std::size_t{n} * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::uint32_t n, std::uint32_t c, std::uint32_t h, std::uint32_t w) {
    return data_[index(n, c, h, w)];
  }
  const T& at(std::uint32_t n, std::uint32_t c, std::uint32_t h,
              std::uint32_t w) const {
    return data_[index(n, c, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> item(std::uint32_t n) {
    return {data_.data() + std::size_t{n} * shape_.item_count(),
            shape_.item_count()};
  }
  std::span<const T> item(std::uint32_t n) const {
    return {data_.data() + std::size_t{n} * shape_.item_count(),
            shape_.item_count()};
  }
  std::span<T> plane(std::uint32_t n, std::uint32_t c) {
    return {data_.data() + index(n, c, 0, 0), shape_.plane()};
  }
  std::span<const T> plane(std::uint32_t n, std::uint32_t c) const {
    return {data_.data() + index(n, c, 0, 0), shape_.plane()};
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Reinterprets the same data under a shape with the same element count.
  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(shape, data_);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  // Copies batch item `n` into a tensor with batch size one.
  BasicTensor slice_item(std::uint32_t n) const {
    auto src = item(n);
    return BasicTensor(shape_.with_batch(1),
                       std::vector<T>(src.begin(), src.end()));
  }

  bool all_finite() const;
  // Sum in storage order, accumulated in double.
  double sum() const;
  double max_abs() const;

  bool operator==(const BasicTensor&) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

// Stacks single-item tensors of identical shape into one batch.
Tensor stack(std::span<const Tensor> items);

// Raw raster: "RLVS" then n, c, h, w as little-endian uint32, then the
// floats as little-endian IEEE-754.
void write_raster(const Tensor& tensor, const std::filesystem::path& path);
Tensor read_raster(const std::filesystem::path& path);

namespace detail {
void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v);
void put_f32_le(std::vector<unsigned char>& out, float v);
std::uint32_t get_u32_le(const unsigned char* p);
float get_f32_le(const unsigned char* p);
std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const unsigned char> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
}  // namespace detail

}  // namespace rlvs
