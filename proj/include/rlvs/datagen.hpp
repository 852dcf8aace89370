#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlvs/evaluation.hpp"
#include "rlvs/image.hpp"

namespace rlvs {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Synthetic H&E-like scenes. Sizes are in pixels, densities in cells per
// 1000 px^2 of image area.
struct SynthConfig {
  std::uint32_t patch_size = 64;
  double tumor_density = 2.0;   // in cancer patches
  double normal_density = 2.5;
  Range tumor_nucleus_radius{4.5, 6.5};
  Range normal_nucleus_radius{2.2, 3.4};
  double tumor_irregularity = 0.18;
  double normal_irregularity = 0.03;
  double necrosis_probability = 0.0;  // per patch
  Range necrosis_radius{8.0, 16.0};
  double debris_density = 25.0;       // dark fragments per 1000 px^2 of necrosis
  Range debris_radius{0.6, 1.4};
  double noise_sd = 0.025;
  double case_tone_sd = 0.03;
  std::uint32_t case_size = 30;
  double test_fraction = 0.2;

  // Copy with all lengths multiplied by `s` (densities rescaled to keep the
  // expected cell count per patch).
  SynthConfig scaled(double s) const;
  void validate() const;
  std::string hash() const;
  std::string to_json() const;
  static SynthConfig from_json(const std::string& text);
};

inline constexpr int kNoCancer = 0;
inline constexpr int kCancer = 1;

const char* label_name(int label);

struct Sample {
  Image image;
  AnnotationSet annotations;
  int label = kNoCancer;
  std::uint32_t case_id = 0;
  bool train = true;
  std::vector<std::string> region_classes;
};

struct Dataset {
  SynthConfig config;
  std::uint64_t seed = 0;
  std::string kind = "tumor";
  std::vector<Sample> samples;

  std::size_t count(int label, bool train) const;
};

// Exactly round(n * tumor_fraction) patches contain tumour cells and are
// labelled cancer (none when tumor_density is 0). Patches are grouped into
// cases of cfg.case_size; a test_fraction of the cases forms the test split.
Dataset gen_dataset(const SynthConfig& cfg, std::size_t n_patches, double tumor_fraction,
                    std::uint64_t seed);

// Each patch has one cell centred exactly on the patch centre whose type
// sets the label; distractors of both types are placed off-centre.
Dataset make_center_bias_dataset(const SynthConfig& cfg, std::size_t n_patches,
                                 std::uint64_t seed);

inline constexpr Rgb kDefaultArtifactColor{160, 70, 130};  // between haematoxylin and eosin

// Sets the size x size top-left pixels to `color`.
void inject_corner_artifact(Image& image, std::uint32_t size = 5,
                            Rgb color = kDefaultArtifactColor);

struct TileOptions {
  std::uint32_t width = 600;
  std::uint32_t height = 600;
  std::uint32_t necrosis_regions = 0;
  double cell_density = 2.5;
  double tumor_share_in_nests = 0.85;
  double tumor_share_outside = 0.05;
  double excluded_share = 0.03;
};

// A large evaluation tile with tumour nests, normal tissue and optional
// necrosis, fully annotated. Label is cancer iff any tumour cell exists.
Sample gen_tile(const SynthConfig& cfg, const TileOptions& opt, std::uint64_t seed,
                const std::string& tile_id = "tile");

struct ManifestEntry {
  std::string image;       // relative to the manifest directory
  std::string annotation;  // relative to the manifest directory
  int label = kNoCancer;
  bool train = true;
  std::uint32_t case_id = 0;
  std::vector<std::string> region_classes;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string kind;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string config_json;
  std::vector<ManifestEntry> entries;

  std::size_t count(int label, bool train) const;
};

// Writes images/NNNNN.png, annotations/NNNNN.json and manifest.json.
DatasetManifest write_dataset(const Dataset& data, const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
Dataset load_dataset(const DatasetManifest& manifest);

inline const std::vector<std::string> kRegionClasses{"necrosis", "vessel", "artifact"};

// Drops every training sample containing a region of class `region_class`;
// the test split is untouched. Returns the number dropped.
std::size_t exclude_class(DatasetManifest& manifest, const std::string& region_class);
std::size_t exclude_class(Dataset& data, const std::string& region_class);

}  // namespace rlvs
