#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rlvs/datagen.hpp"
#include "rlvs/evaluation.hpp"
#include "rlvs/explain.hpp"
#include "rlvs/trainer.hpp"

namespace rlvs {

// A numeric check against a frozen threshold.
struct Verdict {
  std::string criterion;
  double value = 0.0;
  std::string op;  // ">=", ">", "<=", "<", "=="
  double threshold = 0.0;
  bool pass = false;
};

Verdict make_verdict(std::string criterion, double value, std::string op, double threshold);

struct ExperimentReport {
  std::string name;
  std::uint64_t seed = 0;
  bool quick = false;
  nlohmann::json inputs = nlohmann::json::object();
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<Verdict> verdicts;
  std::vector<std::string> artifacts;  // relative to the output directory
  double runtime_seconds = 0.0;

  bool passed() const;
  const Verdict& verdict(const std::string& criterion) const;
  nlohmann::json to_json() const;
};

struct ExperimentOptions {
  std::uint64_t seed = 0;
  std::filesystem::path out;  // empty: no artifacts are written
  // Small datasets and few epochs; for exercising the pipeline only.
  bool quick = false;
  bool verbose = false;
};

const std::vector<std::string>& experiment_names();

// Runs the named experiment end to end and writes report.json plus its
// artifacts under options.out. Throws kInvalidArgument for unknown names.
ExperimentReport run_experiment(const std::string& name, const ExperimentOptions& options);

ExperimentReport run_feature_verification(const ExperimentOptions& options);
ExperimentReport run_sampling_ratio(const ExperimentOptions& options);
ExperimentReport run_center_bias(const ExperimentOptions& options);
ExperimentReport run_corner_bias(const ExperimentOptions& options);
ExperimentReport run_missing_class(const ExperimentOptions& options);

// Evaluation radius for a synthetic configuration: the mean radius of a
// tumour cell including its cytoplasm.
double tumor_cell_radius(const SynthConfig& cfg);

// Stitched LRP heatmaps for whole tiles (non-overlapping patches, or the
// given overlap), not normalized.
std::vector<Heatmap> tile_heatmaps(const Model& model, const std::vector<Sample>& tiles,
                                   std::size_t target_class, const RuleConfig& rules = {},
                                   double overlap = 0.0);

// Globally normalizes `maps` and scores every annotated cell and region.
RocCurve tile_roc(std::vector<Heatmap>& maps, const std::vector<Sample>& tiles, double radius,
                  std::vector<ScoredItem>* items = nullptr);

// Small translation-sensitive classifier: conv/pool stages followed by a
// flattening dense head.
Model positional_model(std::uint32_t patch_size, std::uint64_t seed);

}  // namespace rlvs
