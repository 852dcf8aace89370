#include "rlvs/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "rlvs/baselines.hpp"
#include "rlvs/heatmap.hpp"
#include "rlvs/model_io.hpp"

namespace rlvs {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Writes artifacts below the output directory and records their paths.
class Outputs {
 public:
  Outputs(const ExperimentOptions& opt, ExperimentReport& report)
      : root_(opt.out), report_(report), verbose_(opt.verbose) {
    if (!root_.empty()) fs::create_directories(root_);
  }

  bool enabled() const { return !root_.empty(); }

  void log(const std::string& msg) const {
    if (verbose_) std::cerr << "[" << report_.name << "] " << msg << std::endl;
  }

  fs::path path(const std::string& rel) {
    const fs::path p = root_ / rel;
    fs::create_directories(p.parent_path());
    report_.artifacts.push_back(rel);
    return p;
  }

  void png(const std::string& rel, const Image& img) {
    if (enabled()) write_png(img, path(rel));
  }
  void heatmap(const std::string& rel, const Heatmap& map) {
    if (enabled()) write_heatmap(map, path(rel));
  }
  void model(const std::string& rel, const Model& m) {
    if (enabled()) save_model(m, path(rel));
  }
  void train_log(const std::string& rel, const std::vector<EpochLog>& log) {
    if (enabled()) write_train_log(log, path(rel));
  }
  void roc(const std::string& rel, const RocCurve& c) {
    if (enabled()) write_roc_csv(c, path(rel));
  }
  void scores(const std::string& rel, const std::vector<ScoredItem>& items) {
    if (enabled()) write_scores_csv(items, path(rel));
  }
  void metrics(const std::string& rel, const ClassifierMetrics& m) {
    if (enabled()) write_metrics_csv(m, path(rel));
  }
  void text(const std::string& rel, const std::string& body) {
    if (enabled()) detail::write_text(path(rel), body);
  }

  void finish(const Stopwatch& clock) {
    report_.runtime_seconds = clock.seconds();
    if (!enabled()) return;
    detail::write_text(root_ / "report.json", report_.to_json().dump(2) + "\n");
  }

 private:
  fs::path root_;
  ExperimentReport& report_;
  bool verbose_;
};

json metrics_json(const ClassifierMetrics& m) {
  return json{{"accuracy", m.accuracy},
              {"weighted_f1", m.weighted_f1},
              {"precision_cancer", m.precision[kCancer]},
              {"recall_cancer", m.recall[kCancer]},
              {"f1_cancer", m.f1[kCancer]},
              {"confusion", {{m.confusion[0][0], m.confusion[0][1]}, {m.confusion[1][0], m.confusion[1][1]}}}};
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

struct Seeds {
  std::uint64_t data, init, sampling, tiles;
  explicit Seeds(std::uint64_t seed, std::uint64_t variant = 0)
      : data(derive_seed(seed, "data", variant)),
        init(derive_seed(seed, "init", variant)),
        sampling(derive_seed(seed, "sampling", variant)),
        tiles(derive_seed(seed, "tiles", variant)) {}
};

TrainConfig desk_train_config(bool quick) {
  TrainConfig t;
  t.learning_rate = 0.02;
  t.lr_decay = 0.1;
  t.decay_every = 10;
  t.batch_size = 32;
  t.max_epochs = quick ? 2 : 14;
  t.folds = quick ? 2 : 3;
  return t;
}

std::vector<Sample> make_tiles(const SynthConfig& cfg, std::uint32_t count, std::uint32_t size,
                               std::uint64_t seed, std::uint32_t necrosis_base = 0) {
  std::vector<Sample> tiles;
  for (std::uint32_t i = 0; i < count; ++i) {
    TileOptions opt;
    opt.width = opt.height = size;
    opt.cell_density = cfg.normal_density;
    opt.necrosis_regions = necrosis_base ? necrosis_base + i % 5 : 0;
    tiles.push_back(gen_tile(cfg, opt, derive_seed(seed, "tile", i), "tile-" + std::to_string(i)));
  }
  return tiles;
}

json train_summary(const TrainResult& r) {
  json curve = json::array();
  for (double v : r.mean_val_loss) curve.push_back(v);
  return json{{"best_epoch", r.best_epoch}, {"mean_val_loss", curve}};
}

TrainResult fit(const Model& init, const LabeledSet& set, const TrainConfig& cfg, Outputs& out,
                const std::string& tag) {
  Stopwatch clock;
  TrainResult r = train(init, set, cfg);
  out.log(tag + ": trained " + std::to_string(r.best_epoch) + " epochs in " +
          std::to_string(static_cast<int>(clock.seconds())) + " s");
  out.model("models/" + tag + ".json", r.model);
  out.train_log("logs/" + tag + ".csv", r.log);
  return r;
}

// Patch-level LRP heatmaps (target cancer) for selected items of a set.
std::vector<Heatmap> patch_heatmaps(const Model& model, const Tensor& images,
                                    const std::vector<std::size_t>& items,
                                    const RuleConfig& rules = {}) {
  std::vector<Heatmap> maps;
  constexpr std::size_t kBatch = 32;
  for (std::size_t first = 0; first < items.size(); first += kBatch) {
    std::vector<Tensor> batch;
    for (std::size_t k = first; k < std::min(items.size(), first + kBatch); ++k) {
      batch.push_back(images.slice_item(static_cast<std::uint32_t>(items[k])));
    }
    const auto fr = forward(model, stack(batch), true);
    for (Heatmap& h : lrp(model, *fr.trace, kCancer, rules)) maps.push_back(std::move(h));
  }
  return maps;
}

Image render_tile(const Heatmap& map, const Sample& tile) { return render(map, tile.image); }

}  // namespace

Verdict make_verdict(std::string criterion, double value, std::string op, double threshold) {
  bool pass = false;
  if (op == ">=") pass = value >= threshold;
  else if (op == ">") pass = value > threshold;
  else if (op == "<=") pass = value <= threshold;
  else if (op == "<") pass = value < threshold;
  else if (op == "==") pass = value == threshold;
  else throw Error(ErrorCode::kInvalidArgument, "verdict", "unknown comparison " + op);
  if (!std::isfinite(value)) pass = false;
  return {std::move(criterion), value, std::move(op), threshold, pass};
}

bool ExperimentReport::passed() const {
  return !verdicts.empty() &&
         std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.pass; });
}

const Verdict& ExperimentReport::verdict(const std::string& criterion) const {
  for (const Verdict& v : verdicts) {
    if (v.criterion == criterion) return v;
  }
  throw Error(ErrorCode::kInvalidArgument, name, "no verdict named " + criterion);
}

json ExperimentReport::to_json() const {
  json v = json::array();
  for (const Verdict& x : verdicts) {
    v.push_back({{"criterion", x.criterion},
                 {"value", x.value},
                 {"op", x.op},
                 {"threshold", x.threshold},
                 {"pass", x.pass}});
  }
  return json{{"experiment", name},  {"seed", seed},       {"quick", quick},
              {"inputs", inputs},    {"metrics", metrics}, {"verdicts", v},
              {"passed", passed()},  {"artifacts", artifacts},
              {"runtime_seconds", runtime_seconds}};
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"feature-verification", "sampling-ratio",
                                              "center-bias", "corner-bias", "missing-class"};
  return names;
}

ExperimentReport run_experiment(const std::string& name, const ExperimentOptions& options) {
  if (name == "feature-verification") return run_feature_verification(options);
  if (name == "sampling-ratio") return run_sampling_ratio(options);
  if (name == "center-bias") return run_center_bias(options);
  if (name == "corner-bias") return run_corner_bias(options);
  if (name == "missing-class") return run_missing_class(options);
  std::string valid;
  for (const auto& n : experiment_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw Error(ErrorCode::kInvalidArgument, "experiment",
              "unknown experiment '" + name + "'; valid names: " + valid);
}

double tumor_cell_radius(const SynthConfig& cfg) {
  return 1.55 * 0.5 * (cfg.tumor_nucleus_radius.lo + cfg.tumor_nucleus_radius.hi);
}

std::vector<Heatmap> tile_heatmaps(const Model& model, const std::vector<Sample>& tiles,
                                   std::size_t target_class, const RuleConfig& rules,
                                   double overlap) {
  const std::uint32_t P = model.input_shape().h;
  std::vector<Heatmap> maps;
  for (const Sample& t : tiles) {
    const Tensor x = image_to_tensor(t.image);
    const PatchGrid grid = plan_grid(t.image.height, t.image.width, P, overlap);
    const auto patches = explain_patches(model, x, grid, target_class, rules, t.annotations.tile_id);
    Heatmap m = stitch(patches, grid).map;
    m.provenance.tile_id = t.annotations.tile_id;
    maps.push_back(std::move(m));
  }
  return maps;
}

RocCurve tile_roc(std::vector<Heatmap>& maps, const std::vector<Sample>& tiles, double radius,
                  std::vector<ScoredItem>* items) {
  normalize(maps, Normalization::kGlobal);
  std::vector<ScoredItem> all;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto s = cell_scores(maps[i], tiles[i].annotations, radius);
    all.insert(all.end(), s.begin(), s.end());
  }
  RocCurve curve = roc(all);
  if (items) *items = std::move(all);
  return curve;
}

Model positional_model(std::uint32_t patch_size, std::uint64_t seed) {
  ModelMeta meta;
  meta.name = "positional";
  meta.seed = seed;
  Model m(Shape{1, 3, patch_size, patch_size}, 2, meta);
  std::string x = m.relu("relu1", m.conv2d("conv1", std::string(kModelInput), 16, 5, 1, 2));
  x = m.maxpool("pool1", x, 2, 2);
  x = m.relu("relu2", m.conv2d("conv2", x, 16, 3, 1, 1));
  x = m.maxpool("pool2", x, 2, 2);
  x = m.flatten("flat", x);
  x = m.relu("relu3", m.dense("fc1", x, 32));
  m.dense("fc2", x, 2);
  init_he_uniform(m, seed);
  return m;
}

// Trains the reference CNN on synthetic tumour patches and measures how
// well positive relevance on held-out tiles singles out cancer cells.
ExperimentReport run_feature_verification(const ExperimentOptions& opt) {
  Stopwatch clock;
  ExperimentReport r;
  r.name = "feature-verification";
  r.seed = opt.seed;
  r.quick = opt.quick;
  Outputs out(opt, r);
  const Seeds seeds(opt.seed);

  const SynthConfig cfg = SynthConfig{}.scaled(0.75);
  const std::size_t n_patches = opt.quick ? 160 : 2400;
  const std::uint32_t n_tiles = opt.quick ? 2 : 5;
  const std::uint32_t tile_size = opt.quick ? 96 : 240;
  TrainConfig tc = desk_train_config(opt.quick);
  tc.seed = seeds.sampling;
  const double radius = tumor_cell_radius(cfg);
  r.inputs = {{"synth_config", json::parse(cfg.to_json())},
              {"config_hash", cfg.hash()},
              {"patches", n_patches},
              {"tumor_fraction", 0.5},
              {"train_config", json::parse(tc.to_json())},
              {"tiles", n_tiles},
              {"tile_size", tile_size},
              {"cell_radius", radius},
              {"seeds", {{"data", seeds.data}, {"init", seeds.init}, {"tiles", seeds.tiles}}}};

  const Dataset data = gen_dataset(cfg, n_patches, 0.5, seeds.data);
  const LabeledSet train_set = to_labeled(data, true);
  const LabeledSet test_set = to_labeled(data, false);
  out.log("dataset: " + std::to_string(train_set.size()) + " train / " +
          std::to_string(test_set.size()) + " test");
  const TrainResult tr = fit(reference_model(cfg.patch_size, seeds.init), train_set, tc, out, "reference");
  const ClassifierMetrics cm = classifier_metrics(predict_labels(tr.model, test_set.images), test_set.labels);
  out.metrics("test_metrics.csv", cm);

  const auto tiles = make_tiles(cfg, n_tiles, tile_size, seeds.tiles);
  std::vector<Heatmap> maps = tile_heatmaps(tr.model, tiles, kCancer);
  std::vector<ScoredItem> items;
  const RocCurve lrp_roc = tile_roc(maps, tiles, radius, &items);

  // Coarse baselines on the same tiles, scored the same way.
  std::vector<Heatmap> cam_maps, prob_maps;
  for (const Sample& t : tiles) {
    const Tensor x = image_to_tensor(t.image);
    const PatchGrid grid = plan_grid(t.image.height, t.image.width, cfg.patch_size, 0.0);
    std::vector<Heatmap> cams;
    for (const PatchOrigin& o : grid.origins) {
      const auto fr = forward(tr.model, extract_patch(x, o, cfg.patch_size), true);
      cams.push_back(gradcam(tr.model, *fr.trace, kCancer).raster);
    }
    cam_maps.push_back(stitch(cams, grid).map);
    prob_maps.push_back(probability_map(tr.model, x, cfg.patch_size, cfg.patch_size, kCancer).raster);
  }
  const RocCurve cam_roc = tile_roc(cam_maps, tiles, radius);
  const RocCurve prob_roc = tile_roc(prob_maps, tiles, radius);

  std::vector<double> random_aucs;
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    random_aucs.push_back(random_baseline_auc(tiles[i].annotations, opt.quick ? 5 : 20,
                                              derive_seed(opt.seed, "random", i), radius).mean);
  }

  r.metrics = {{"train", train_summary(tr)},
               {"test", metrics_json(cm)},
               {"cell_auc", {{"lrp", lrp_roc.auc}, {"gradcam", cam_roc.auc},
                             {"probability_map", prob_roc.auc}, {"random", mean_of(random_aucs)}}},
               {"cells", {{"positives", lrp_roc.positives}, {"negatives", lrp_roc.negatives}}}};
  r.verdicts.push_back(make_verdict("lrp_cell_auc", lrp_roc.auc, ">=", 0.85));

  out.roc("roc/lrp.csv", lrp_roc);
  out.roc("roc/gradcam.csv", cam_roc);
  out.roc("roc/probability_map.csv", prob_roc);
  out.scores("roc/lrp_scores.csv", items);
  out.png("roc/roc.png", plot_roc({lrp_roc, cam_roc, prob_roc}));
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const std::string id = tiles[i].annotations.tile_id;
    out.png("tiles/" + id + ".png", tiles[i].image);
    out.heatmap("heatmaps/" + id + ".rhm", maps[i]);
    out.png("heatmaps/" + id + ".png", render_tile(maps[i], tiles[i]));
  }
  out.finish(clock);
  return r;
}

// Trains on an imbalanced set with 0.5 and 0.8 cancer shares per batch
// and compares patch-level recall and precision over several seeds.
ExperimentReport run_sampling_ratio(const ExperimentOptions& opt) {
  Stopwatch clock;
  ExperimentReport r;
  r.name = "sampling-ratio";
  r.seed = opt.seed;
  r.quick = opt.quick;
  Outputs out(opt, r);

  SynthConfig cfg = SynthConfig{}.scaled(0.5);
  cfg.tumor_density *= 0.5;
  const std::size_t n_patches = opt.quick ? 160 : 1600;
  const double tumor_fraction = 0.25;
  const std::uint32_t n_seeds = opt.quick ? 2 : 5;
  const std::vector<double> ratios{0.5, 0.8};
  TrainConfig tc = desk_train_config(opt.quick);
  r.inputs = {{"synth_config", json::parse(cfg.to_json())},
              {"config_hash", cfg.hash()},
              {"patches", n_patches},
              {"tumor_fraction", tumor_fraction},
              {"ratios", ratios},
              {"runs", n_seeds},
              {"train_config", json::parse(tc.to_json())}};

  std::vector<std::vector<double>> recall(ratios.size()), precision(ratios.size()), f1(ratios.size());
  json runs = json::array();
  for (std::uint32_t s = 0; s < n_seeds; ++s) {
    const Seeds seeds(opt.seed, s);
    const Dataset data = gen_dataset(cfg, n_patches, tumor_fraction, seeds.data);
    const LabeledSet train_set = to_labeled(data, true);
    const LabeledSet test_set = to_labeled(data, false);
    const Model init = reference_model(cfg.patch_size, seeds.init);
    for (std::size_t k = 0; k < ratios.size(); ++k) {
      TrainConfig c = tc;
      c.cancer_ratio = ratios[k];
      c.seed = seeds.sampling;
      const std::string tag = "run" + std::to_string(s) + "_ratio" + (k == 0 ? "0.5" : "0.8");
      const TrainResult tr = fit(init, train_set, c, out, tag);
      const ClassifierMetrics cm = classifier_metrics(predict_labels(tr.model, test_set.images), test_set.labels);
      out.metrics("metrics/" + tag + ".csv", cm);
      recall[k].push_back(cm.recall[kCancer]);
      precision[k].push_back(cm.precision[kCancer]);
      f1[k].push_back(cm.weighted_f1);
      runs.push_back({{"run", s}, {"ratio", ratios[k]}, {"best_epoch", tr.best_epoch}, {"test", metrics_json(cm)}});
    }
  }
  json summary = json::object();
  for (std::size_t k = 0; k < ratios.size(); ++k) {
    summary[k == 0 ? "0.5" : "0.8"] = {{"mean_recall", mean_of(recall[k])},
                                       {"mean_precision", mean_of(precision[k])},
                                       {"mean_weighted_f1", mean_of(f1[k])}};
  }
  r.metrics = {{"runs", runs}, {"summary", summary}};
  r.verdicts.push_back(make_verdict("recall_gain", mean_of(recall[1]) - mean_of(recall[0]), ">=", 0.0));
  r.verdicts.push_back(make_verdict("precision_gain", mean_of(precision[1]) - mean_of(precision[0]), "<=", 0.0));
  out.finish(clock);
  return r;
}

// Labels depend only on the centre cell. A model trained without
// translation augmentation concentrates relevance in the patch centre; the
// translation-augmented control spreads it out.
ExperimentReport run_center_bias(const ExperimentOptions& opt) {
  Stopwatch clock;
  ExperimentReport r;
  r.name = "center-bias";
  r.seed = opt.seed;
  r.quick = opt.quick;
  Outputs out(opt, r);
  const Seeds seeds(opt.seed);

  const SynthConfig cfg = SynthConfig{}.scaled(0.625);
  const std::uint32_t P = cfg.patch_size;
  const std::size_t n_patches = opt.quick ? 160 : 2000;
  const std::uint32_t n_tiles = opt.quick ? 2 : 5;
  const std::uint32_t tile_size = opt.quick ? 80 : 200;
  TrainConfig biased = desk_train_config(opt.quick);
  biased.seed = seeds.sampling;
  biased.translate = false;
  TrainConfig control = biased;
  control.translate = true;
  control.max_shift = P / 3;
  const std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  const double radius = tumor_cell_radius(cfg);
  r.inputs = {{"synth_config", json::parse(cfg.to_json())},
              {"config_hash", cfg.hash()},
              {"patches", n_patches},
              {"biased_train_config", json::parse(biased.to_json())},
              {"control_train_config", json::parse(control.to_json())},
              {"tiles", n_tiles},
              {"tile_size", tile_size},
              {"cell_radius", radius}};

  const Dataset data = make_center_bias_dataset(cfg, n_patches, seeds.data);
  const LabeledSet train_set = to_labeled(data, true);
  const LabeledSet test_set = to_labeled(data, false);
  const Model init = positional_model(P, seeds.init);
  const TrainResult tb = fit(init, train_set, biased, out, "biased");
  const TrainResult tcn = fit(init, train_set, control, out, "control");

  std::vector<std::size_t> all(test_set.size());
  std::iota(all.begin(), all.end(), 0);
  const auto tiles = make_tiles(cfg, n_tiles, tile_size, seeds.tiles);
  json models = json::object();
  double profile_half[2] = {0, 0}, auc[2] = {0, 0};
  const TrainResult* trained[2] = {&tb, &tcn};
  const char* names[2] = {"biased", "control"};
  std::vector<RocCurve> curves;
  for (int k = 0; k < 2; ++k) {
    const Model& m = trained[k]->model;
    const ClassifierMetrics cm = classifier_metrics(predict_labels(m, test_set.images), test_set.labels);
    const CenterMassProfile prof = center_mass_profile(patch_heatmaps(m, test_set.images, all), fractions);
    std::vector<Heatmap> maps = tile_heatmaps(m, tiles, kCancer);
    const RocCurve curve = tile_roc(maps, tiles, radius);
    curves.push_back(curve);
    profile_half[k] = prof.mass_inside[4];
    auc[k] = curve.auc;
    models[names[k]] = {{"train", train_summary(*trained[k])},
                        {"test", metrics_json(cm)},
                        {"center_mass", prof.mass_inside},
                        {"cell_auc", curve.auc}};
    Heatmap mean_abs = prof.mean_abs;
    std::vector<Heatmap> one{mean_abs};
    normalize(one, Normalization::kLocal);
    out.heatmap(std::string("mean_abs/") + names[k] + ".rhm", prof.mean_abs);
    out.png(std::string("mean_abs/") + names[k] + ".png",
            render(one[0], Image(P, P, Rgb{255, 255, 255})));
    out.roc(std::string("roc/") + names[k] + ".csv", curve);
    for (std::size_t i = 0; i < tiles.size(); ++i) {
      out.png(std::string("heatmaps/") + names[k] + "_" + tiles[i].annotations.tile_id + ".png",
              render_tile(maps[i], tiles[i]));
    }
  }
  out.png("roc/roc.png", plot_roc(curves));
  r.metrics = {{"fractions", fractions}, {"models", models}};
  r.verdicts.push_back(make_verdict("biased_center_mass_f0.5", profile_half[0], ">=", 1.5 * 0.25));
  r.verdicts.push_back(make_verdict("control_center_mass_f0.5", profile_half[1], "<", 1.25 * 0.25));
  r.verdicts.push_back(make_verdict("control_auc_gain", auc[1] - auc[0], ">", 0.0));
  out.finish(clock);
  return r;
}

// A 5x5 corner artifact on every cancer patch. The model trained on the
// corrupted data classifies perfectly but places its relevance on the
// artifact; a control trained on clean data does not.
ExperimentReport run_corner_bias(const ExperimentOptions& opt) {
  Stopwatch clock;
  ExperimentReport r;
  r.name = "corner-bias";
  r.seed = opt.seed;
  r.quick = opt.quick;
  Outputs out(opt, r);
  const Seeds seeds(opt.seed);

  const SynthConfig cfg = SynthConfig{}.scaled(0.75);
  const std::uint32_t P = cfg.patch_size;
  constexpr std::uint32_t kArtifact = 5;
  const std::size_t n_patches = opt.quick ? 160 : 2000;
  const std::size_t n_explained = opt.quick ? 10 : 50;
  TrainConfig tc = desk_train_config(opt.quick);
  tc.seed = seeds.sampling;
  tc.translate = false;
  tc.rotate = false;
  const double area_fraction = static_cast<double>(kArtifact * kArtifact) / (P * P);
  r.inputs = {{"synth_config", json::parse(cfg.to_json())},
              {"config_hash", cfg.hash()},
              {"patches", n_patches},
              {"artifact_size", kArtifact},
              {"architecture", "positional"},
              {"artifact_color", {kDefaultArtifactColor.r, kDefaultArtifactColor.g, kDefaultArtifactColor.b}},
              {"train_config", json::parse(tc.to_json())},
              {"explained_patches", n_explained}};

  const Dataset clean = gen_dataset(cfg, n_patches, 0.5, seeds.data);
  Dataset corrupted = clean;
  for (Sample& s : corrupted.samples) {
    if (s.label == kCancer) inject_corner_artifact(s.image, kArtifact);
  }
  const LabeledSet train_bad = to_labeled(corrupted, true);
  const LabeledSet test_bad = to_labeled(corrupted, false);
  const LabeledSet train_clean = to_labeled(clean, true);
  const LabeledSet test_clean = to_labeled(clean, false);
  // A global-average-pooling head dilutes a 5x5 corner feature to ~1% of its
  // input; the flatten head keeps one weight per position.
  const Model init = positional_model(P, seeds.init);
  const TrainResult biased = fit(init, train_bad, tc, out, "biased");
  const TrainResult control = fit(init, train_clean, tc, out, "control");

  std::vector<std::size_t> corrupted_items;
  for (std::size_t i = 0; i < test_bad.size() && corrupted_items.size() < n_explained; ++i) {
    if (test_bad.labels[i] == kCancer) corrupted_items.push_back(i);
  }
  auto corner_share = [&](const Model& m, std::vector<Heatmap>* keep) {
    const auto maps = patch_heatmaps(m, test_bad.images, corrupted_items);
    std::vector<double> shares;
    for (const Heatmap& h : maps) {
      double inside = 0.0, total = 0.0;
      for (std::uint32_t y = 0; y < h.height; ++y) {
        for (std::uint32_t x = 0; x < h.width; ++x) {
          const double v = std::max(0.0f, h.at(y, x));
          total += v;
          if (x < kArtifact && y < kArtifact) inside += v;
        }
      }
      shares.push_back(total > 0.0 ? inside / total : 0.0);
    }
    if (keep) *keep = maps;
    return mean_of(shares);
  };
  std::vector<Heatmap> biased_maps, control_maps;
  const double share_biased = corner_share(biased.model, &biased_maps);
  const double share_control = corner_share(control.model, &control_maps);
  const ClassifierMetrics cm_bad =
      classifier_metrics(predict_labels(biased.model, test_bad.images), test_bad.labels);
  // The biased model on clean test patches exposes the shortcut.
  const ClassifierMetrics cm_bad_on_clean =
      classifier_metrics(predict_labels(biased.model, test_clean.images), test_clean.labels);
  const ClassifierMetrics cm_control =
      classifier_metrics(predict_labels(control.model, test_clean.images), test_clean.labels);

  r.metrics = {{"area_fraction", area_fraction},
               {"biased", {{"train", train_summary(biased)},
                           {"test_corrupted", metrics_json(cm_bad)},
                           {"test_clean", metrics_json(cm_bad_on_clean)},
                           {"corner_share", share_biased},
                           {"corner_share_over_area", share_biased / area_fraction}}},
               {"control", {{"train", train_summary(control)},
                            {"test_clean", metrics_json(cm_control)},
                            {"corner_share", share_control},
                            {"corner_share_over_area", share_control / area_fraction}}}};
  r.verdicts.push_back(make_verdict("biased_test_accuracy", cm_bad.accuracy, ">=", 0.99));
  r.verdicts.push_back(make_verdict("biased_corner_share_over_area", share_biased / area_fraction, ">=", 10.0));
  r.verdicts.push_back(make_verdict("control_corner_share_over_area", share_control / area_fraction, "<", 2.0));

  std::vector<int> predicted(biased_maps.size(), kCancer);
  std::vector<Heatmap> avg{class_average_heatmap(biased_maps, predicted, kCancer),
                           class_average_heatmap(control_maps, predicted, kCancer)};
  normalize(avg, Normalization::kLocal);
  const Image first = tensor_to_image(test_bad.images, static_cast<std::uint32_t>(corrupted_items.at(0)));
  out.png("patches/corrupted_example.png", first);
  out.png("heatmaps/biased_example.png", render(biased_maps.at(0), first));
  out.png("heatmaps/control_example.png", render(control_maps.at(0), first));
  out.heatmap("heatmaps/biased_class_average.rhm", avg[0]);
  out.heatmap("heatmaps/control_class_average.rhm", avg[1]);
  out.png("heatmaps/biased_class_average.png", render(avg[0], first));
  out.png("heatmaps/control_class_average.png", render(avg[1], first));
  out.finish(clock);
  return r;
}

// Necrosis appears in training patches of both classes. One model sees it,
// the other is trained with every necrosis-bearing patch removed; both are
// compared on tiles with several necrotic regions.
ExperimentReport run_missing_class(const ExperimentOptions& opt) {
  Stopwatch clock;
  ExperimentReport r;
  r.name = "missing-class";
  r.seed = opt.seed;
  r.quick = opt.quick;
  Outputs out(opt, r);
  const Seeds seeds(opt.seed);

  SynthConfig cfg = SynthConfig{}.scaled(0.75);
  cfg.necrosis_probability = 0.35;
  const std::size_t n_patches = opt.quick ? 160 : 2000;
  const std::uint32_t n_tiles = opt.quick ? 2 : 5;
  const std::uint32_t tile_size = opt.quick ? 96 : 240;
  TrainConfig tc = desk_train_config(opt.quick);
  tc.seed = seeds.sampling;
  r.inputs = {{"synth_config", json::parse(cfg.to_json())},
              {"config_hash", cfg.hash()},
              {"patches", n_patches},
              {"train_config", json::parse(tc.to_json())},
              {"tiles", n_tiles},
              {"tile_size", tile_size},
              {"necrosis_regions_per_tile", "1 + tile index mod 5"}};

  const Dataset full = gen_dataset(cfg, n_patches, 0.5, seeds.data);
  Dataset excluded = full;
  const std::size_t dropped = exclude_class(excluded, "necrosis");
  const Model init = reference_model(cfg.patch_size, seeds.init);
  const TrainResult tr_full = fit(init, to_labeled(full, true), tc, out, "full");
  const TrainResult tr_excl = fit(init, to_labeled(excluded, true), tc, out, "necrosis_excluded");
  const LabeledSet test_set = to_labeled(full, false);
  const ClassifierMetrics cm_full = classifier_metrics(predict_labels(tr_full.model, test_set.images), test_set.labels);
  const ClassifierMetrics cm_excl = classifier_metrics(predict_labels(tr_excl.model, test_set.images), test_set.labels);

  const auto tiles = make_tiles(cfg, n_tiles, tile_size, seeds.tiles, 1);
  std::vector<Heatmap> maps_excl = tile_heatmaps(tr_excl.model, tiles, kCancer);
  std::vector<Heatmap> maps_full = tile_heatmaps(tr_full.model, tiles, kCancer);
  normalize(maps_excl, Normalization::kGlobal);
  normalize(maps_full, Normalization::kGlobal);
  std::vector<AnnotationSet> anns;
  for (const Sample& t : tiles) anns.push_back(t.annotations);
  const auto rows = region_relevance_comparison(maps_excl, maps_full, anns);

  std::size_t higher = 0;
  std::vector<double> a, b;
  json table = json::array();
  for (const auto& row : rows) {
    if (row.cls != "necrosis") continue;
    a.push_back(row.score_a);
    b.push_back(row.score_b);
    if (row.score_a > row.score_b) ++higher;
    table.push_back({{"tile", row.tile_id}, {"region", row.region_id}, {"area", row.area},
                     {"necrosis_excluded", row.score_a}, {"full", row.score_b}});
  }
  const double share_higher = a.empty() ? 0.0 : static_cast<double>(higher) / static_cast<double>(a.size());
  r.metrics = {{"dropped_training_patches", dropped},
               {"full", {{"train", train_summary(tr_full)}, {"test", metrics_json(cm_full)},
                         {"region_variance", variance_of(b)}, {"region_mean", mean_of(b)}}},
               {"necrosis_excluded", {{"train", train_summary(tr_excl)}, {"test", metrics_json(cm_excl)},
                                      {"region_variance", variance_of(a)}, {"region_mean", mean_of(a)}}},
               {"regions", table}};
  r.verdicts.push_back(make_verdict("necrosis_regions", static_cast<double>(a.size()), ">=", 6.0));
  r.verdicts.push_back(make_verdict("share_regions_excluded_higher", share_higher, ">=", 0.5));
  r.verdicts.push_back(make_verdict("full_minus_excluded_variance", variance_of(b) - variance_of(a), "<", 0.0));

  std::string csv = "tile,region,area,necrosis_excluded,full\n";
  for (const auto& row : rows) {
    csv += row.tile_id + "," + row.region_id + "," + std::to_string(row.area) + "," +
           std::to_string(row.score_a) + "," + std::to_string(row.score_b) + "\n";
  }
  out.text("regions.csv", csv);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const std::string id = tiles[i].annotations.tile_id;
    out.png("tiles/" + id + ".png", tiles[i].image);
    out.png("heatmaps/excluded_" + id + ".png", render_tile(maps_excl[i], tiles[i]));
    out.png("heatmaps/full_" + id + ".png", render_tile(maps_full[i], tiles[i]));
  }
  out.finish(clock);
  return r;
}

}  // namespace rlvs
