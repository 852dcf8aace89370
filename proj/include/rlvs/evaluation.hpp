#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rlvs/heatmap_raster.hpp"
#include "rlvs/image.hpp"

namespace rlvs {

enum class PointClass { kCancer, kNonCancer, kExcluded };

const char* to_string(PointClass c);
PointClass parse_point_class(const std::string& s);

// Coordinates are in pixels; pixel (i, j) has its centre at x = i, y = j.
struct PointAnnotation {
  double x = 0.0;
  double y = 0.0;
  PointClass cls = PointClass::kCancer;
};

struct Vertex {
  double x = 0.0;
  double y = 0.0;
};

struct RegionAnnotation {
  std::string id;
  std::string cls;  // necrosis, vessel, artifact, ...
  std::vector<Vertex> polygon;
};

struct AnnotationSet {
  std::string tile_id;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<PointAnnotation> points;
  std::vector<RegionAnnotation> regions;

  // Throws kInvalidArgument for out-of-bounds coordinates, polygons with
  // fewer than 3 vertices or self-intersecting polygons.
  void validate() const;
};

// {"tile_id", "width", "height", "points": [{x, y, class}],
//  "regions": [{id, class, polygon: [[x, y], ...]}]}
AnnotationSet read_annotations(const std::filesystem::path& path);
void write_annotations(const AnnotationSet& set, const std::filesystem::path& path);

// Even-odd rule.
bool point_in_polygon(const std::vector<Vertex>& polygon, double x, double y);
bool polygon_is_simple(const std::vector<Vertex>& polygon);

// Pixel indices (y * width + x) inside a disc / polygon, clipped to bounds.
std::vector<std::size_t> disc_pixels(std::uint32_t width, std::uint32_t height, double cx,
                                     double cy, double radius);
std::vector<std::size_t> polygon_pixels(std::uint32_t width, std::uint32_t height,
                                        const std::vector<Vertex>& polygon);

// Mean of max(0, v) over the given pixels.
double rectified_mean(const Heatmap& map, const std::vector<std::size_t>& pixels);

enum class ScoreSource { kCancerCell, kNonCancerCell, kRegion };

const char* to_string(ScoreSource s);

struct ScoredItem {
  double score = 0.0;
  bool positive = false;  // cancer cell
  ScoreSource source = ScoreSource::kCancerCell;
  std::string label;      // region class/id, empty for cells
};

inline constexpr double kDefaultCellRadius = 25.0;

// One score per non-excluded point (rectified disc mean) and one per region
// (rectified polygon mean). Cancer cells are positives; non-cancer cells and
// regions are negatives.
std::vector<ScoredItem> cell_scores(const Heatmap& map, const AnnotationSet& ann,
                                    double radius = kDefaultCellRadius);

struct RocCurve {
  std::vector<double> fpr;
  std::vector<double> tpr;
  std::vector<double> thresholds;  // thresholds[k] yields point k + 1
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;

  double trapezoid_auc() const;
};

// Threshold sweep over the unique scores (score >= threshold is called
// positive). AUC is the Mann-Whitney statistic with midrank ties.
RocCurve roc(const std::vector<double>& scores, const std::vector<bool>& positive);
RocCurve roc(const std::vector<ScoredItem>& items);

struct AucSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::vector<double> runs;
};

// AUCs of heatmaps with i.i.d. U[-1, 1] pixels scored like real maps.
AucSummary random_baseline_auc(const AnnotationSet& ann, std::size_t runs, std::uint64_t seed,
                               double radius = kDefaultCellRadius);

struct ClassifierMetrics {
  // confusion[true][predicted]
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  std::array<double, 2> precision{};
  std::array<double, 2> recall{};
  std::array<double, 2> f1{};
  std::array<std::size_t, 2> support{};
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
};

// Binary labels in {0, 1}. Undefined ratios (0/0) count as 0.
ClassifierMetrics classifier_metrics(const std::vector<int>& predictions,
                                     const std::vector<int>& labels);

struct CenterMassProfile {
  std::vector<double> fractions;
  std::vector<double> mass_inside;  // mean over maps with nonzero mass
  Heatmap mean_abs;                 // pixelwise mean |R|
  std::size_t maps_used = 0;
};

// Share of sum |R| inside the centred box of size (f*W, f*H); a pixel
// counts when its centre (x + 0.5, y + 0.5) lies inside the closed box.
CenterMassProfile center_mass_profile(const std::vector<Heatmap>& maps,
                                      const std::vector<double>& fractions);

// Pixelwise mean of the maps whose predicted class equals `cls`.
Heatmap class_average_heatmap(const std::vector<Heatmap>& maps,
                              const std::vector<int>& predicted, int cls);

struct RegionComparisonRow {
  std::string tile_id;
  std::string region_id;
  std::string cls;
  std::size_t area = 0;
  double score_a = 0.0;
  double score_b = 0.0;
};

// Mean rectified relevance per region under two models' maps; maps_a[i],
// maps_b[i] and tiles[i] describe the same tile.
std::vector<RegionComparisonRow> region_relevance_comparison(
    const std::vector<Heatmap>& maps_a, const std::vector<Heatmap>& maps_b,
    const std::vector<AnnotationSet>& tiles);

void write_roc_csv(const RocCurve& curve, const std::filesystem::path& path);
void write_scores_csv(const std::vector<ScoredItem>& items, const std::filesystem::path& path);
void write_metrics_csv(const ClassifierMetrics& m, const std::filesystem::path& path);

// Square plot: white background, grey chance diagonal, curves drawn in order
// with a fixed palette.
Image plot_roc(const std::vector<RocCurve>& curves, std::uint32_t size = 256);

}  // namespace rlvs
