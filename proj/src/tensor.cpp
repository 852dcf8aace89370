#include "rlvs/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace rlvs {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kInvalidModel: return "invalid model";
    case ErrorCode::kTraceMismatch: return "trace mismatch";
    case ErrorCode::kCorruptFile: return "corrupt file";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kSingleClass: return "single-class input";
    case ErrorCode::kEmptyInput: return "empty input";
  }
  return "unknown";
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
double BasicTensor<T>::sum() const {
  double acc = 0.0;
  for (T v : data_) acc += static_cast<double>(v);
  return acc;
}

template <typename T>
double BasicTensor<T>::max_abs() const {
  double m = 0.0;
  for (T v : data_) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) {
    throw Error(ErrorCode::kEmptyInput, "stack", "no tensors to stack");
  }
  const Shape item_shape = items.front().shape();
  std::vector<float> data;
  data.reserve(item_shape.item_count() * items.size());
  for (const auto& t : items) {
    if (t.shape() != item_shape.with_batch(1)) {
      throw Error(ErrorCode::kShapeMismatch, "stack",
                  "expected " + item_shape.with_batch(1).str() + ", got " +
                      t.shape().str());
    }
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  return Tensor(item_shape.with_batch(static_cast<std::uint32_t>(items.size())),
                std::move(data));
}

namespace detail {

void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f32_le(std::vector<unsigned char>& out, float v) {
  put_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
         (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

float get_f32_le(const unsigned char* p) {
  return std::bit_cast<float>(get_u32_le(p));
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, path.string(), "cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path,
                std::span<const unsigned char> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, path.string(), "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, path.string(), "write failed");
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

}  // namespace detail

void write_raster(const Tensor& tensor, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  bytes.reserve(16 + tensor.size() * 4);
  bytes.insert(bytes.end(), {'R', 'L', 'V', 'S'});
  const Shape& s = tensor.shape();
  for (std::uint32_t d : {s.n, s.c, s.h, s.w}) detail::put_u32_le(bytes, d);
  for (float v : tensor.values()) detail::put_f32_le(bytes, v);
  detail::write_file(path, bytes);
}

Tensor read_raster(const std::filesystem::path& path) {
  constexpr std::size_t kHeader = 20;
  const auto bytes = detail::read_file(path);
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), "RLVS", 4) != 0) {
    throw Error(ErrorCode::kCorruptFile, path.string(), "missing RLVS header");
  }
  const Shape shape{detail::get_u32_le(&bytes[4]), detail::get_u32_le(&bytes[8]),
                    detail::get_u32_le(&bytes[12]), detail::get_u32_le(&bytes[16])};
  if (bytes.size() != kHeader + shape.count() * 4) {
    throw Error(ErrorCode::kCorruptFile, path.string(),
                "payload length does not match header shape " + shape.str());
  }
  std::vector<float> data(shape.count());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = detail::get_f32_le(&bytes[kHeader + 4 * i]);
  }
  return Tensor(shape, std::move(data));
}

}  // namespace rlvs
