#pragma once

#include <filesystem>

#include "rlvs/model.hpp"

namespace rlvs {

inline constexpr const char* kModelMagic = "RLVS-MODEL-1";

// Writes a JSON manifest at `path` and the parameters as a little-endian
// float32 blob next to it (same stem, ".bin" extension). Rejects models that
// fail Model::validate().
void save_model(const Model& model, const std::filesystem::path& path);

// Inverse of save_model. Throws kCorruptFile on a bad header or blob/length
// mismatch and kUnsupported on an unknown layer kind.
Model load_model(const std::filesystem::path& path);

std::filesystem::path model_blob_path(const std::filesystem::path& manifest);

}  // namespace rlvs
