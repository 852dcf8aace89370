// rlvs: synthetic data generation, training, relevance heatmaps and the
// bias experiments from the command line.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rlvs/baselines.hpp"
#include "rlvs/datagen.hpp"
#include "rlvs/evaluation.hpp"
#include "rlvs/experiments.hpp"
#include "rlvs/heatmap.hpp"
#include "rlvs/model_io.hpp"
#include "rlvs/trainer.hpp"

namespace fs = std::filesystem;
using namespace rlvs;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string config;
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::kIo, p.string(), "cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void say(const std::string& line) { std::cout << line << std::endl; }

// ---- gen -----------------------------------------------------------------

struct GenArgs {
  std::string kind = "tumor";
  std::size_t patches = 1000;
  double tumor_fraction = 0.5;
  double scale = 1.0;
  bool corner_artifact = false;
  std::uint32_t width = 600, height = 600, necrosis_regions = 0;
};

void cmd_gen(const Globals& g, const GenArgs& a) {
  SynthConfig cfg = g.config.empty() ? SynthConfig{} : SynthConfig::from_json(read_text(g.config));
  if (a.scale != 1.0) cfg = cfg.scaled(a.scale);
  const fs::path out(g.out);
  if (a.kind == "tile") {
    TileOptions opt;
    opt.width = a.width;
    opt.height = a.height;
    opt.necrosis_regions = a.necrosis_regions;
    opt.cell_density = cfg.normal_density;
    const Sample tile = gen_tile(cfg, opt, g.seed, "tile-" + std::to_string(g.seed));
    fs::create_directories(out);
    write_png(tile.image, out / "tile.png");
    write_annotations(tile.annotations, out / "tile.json");
    say("wrote " + (out / "tile.png").string() + " with " +
        std::to_string(tile.annotations.points.size()) + " cells, " +
        std::to_string(tile.annotations.regions.size()) + " regions");
    return;
  }
  Dataset data;
  if (a.kind == "tumor") {
    data = gen_dataset(cfg, a.patches, a.tumor_fraction, g.seed);
  } else if (a.kind == "center-bias") {
    data = make_center_bias_dataset(cfg, a.patches, g.seed);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "gen", "unknown kind '" + a.kind + "' (tumor, center-bias, tile)");
  }
  if (a.corner_artifact) {
    for (Sample& s : data.samples) {
      if (s.label == kCancer) inject_corner_artifact(s.image);
    }
    data.kind += "+corner-artifact";
  }
  const DatasetManifest m = write_dataset(data, out);
  say("wrote " + std::to_string(m.entries.size()) + " patches to " + (out / "manifest.json").string() +
      " (train " + std::to_string(m.count(kCancer, true)) + " cancer / " +
      std::to_string(m.count(kNoCancer, true)) + " non-cancer, test " +
      std::to_string(m.count(kCancer, false)) + " / " + std::to_string(m.count(kNoCancer, false)) + ")");
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string arch = "reference";
  std::string exclude;
  std::vector<std::string> set;
};

void cmd_train(const Globals& g, const TrainArgs& a) {
  TrainConfig cfg = g.config.empty() ? TrainConfig{} : TrainConfig::from_json(read_text(g.config));
  cfg.seed = derive_seed(g.seed, "sampling");
  DatasetManifest manifest = read_manifest(a.data);
  if (!a.exclude.empty()) {
    const std::size_t n = exclude_class(manifest, a.exclude);
    say("excluded " + std::to_string(n) + " training patches containing " + a.exclude);
  }
  const Dataset data = load_dataset(manifest);
  const LabeledSet train_set = to_labeled(data, true);
  const std::uint32_t P = train_set.images.shape().h;
  const std::uint64_t init_seed = derive_seed(g.seed, "init");
  Model init;
  if (a.arch == "reference") init = reference_model(P, init_seed);
  else if (a.arch == "positional") init = positional_model(P, init_seed);
  else throw Error(ErrorCode::kInvalidArgument, "train", "unknown architecture '" + a.arch + "'");
  init.meta().config_json = cfg.to_json();

  const TrainResult r = train(init, train_set, cfg);
  const fs::path out(g.out);
  fs::create_directories(out);
  save_model(r.model, out / "model.json");
  write_train_log(r.log, out / "train_log.csv");
  say("trained " + std::to_string(r.best_epoch) + " epochs; model at " + (out / "model.json").string());
  if (data.count(kCancer, false) + data.count(kNoCancer, false) > 0) {
    const LabeledSet test = to_labeled(data, false);
    const ClassifierMetrics m = classifier_metrics(predict_labels(r.model, test.images), test.labels);
    write_metrics_csv(m, out / "test_metrics.csv");
    std::ostringstream os;
    os << "test accuracy " << m.accuracy << ", weighted F1 " << m.weighted_f1;
    say(os.str());
  }
}

// ---- explain / stitch / render -------------------------------------------

struct ExplainArgs {
  std::string model;
  std::string image;
  int target = kCancer;
  std::string method = "lrp";
  double overlap = 0.0;
  std::string normalization = "local";
};

Normalization parse_norm(const std::string& s) {
  if (s == "raw") return Normalization::kRaw;
  if (s == "local") return Normalization::kLocal;
  if (s == "global") return Normalization::kGlobal;
  throw Error(ErrorCode::kInvalidArgument, "normalization", "expected raw, local or global, got " + s);
}

void cmd_explain(const Globals& g, const ExplainArgs& a) {
  const Model model = load_model(a.model);
  const Image img = read_png(a.image);
  const Tensor x = image_to_tensor(img);
  const std::uint32_t P = model.input_shape().h;
  if (a.target < 0 || static_cast<std::uint32_t>(a.target) >= model.class_count()) {
    throw Error(ErrorCode::kInvalidArgument, "explain", "target class out of range");
  }
  const auto target = static_cast<std::size_t>(a.target);
  const fs::path out(g.out);
  fs::create_directories(out);
  Heatmap map;
  if (a.method == "probability") {
    const CoarseMap cm = probability_map(model, x, P, static_cast<std::uint32_t>(std::lround(P * (1 - a.overlap))), target);
    write_coarse_map(cm, out / "heatmap.rhm");
    map = cm.raster;
  } else if (a.method == "lrp" || a.method == "gradcam") {
    const PatchGrid grid = plan_grid(img.height, img.width, P, a.overlap);
    std::vector<Heatmap> patches;
    if (a.method == "lrp") {
      patches = explain_patches(model, x, grid, target, {}, fs::path(a.image).stem().string());
    } else {
      for (const PatchOrigin& o : grid.origins) {
        const auto fr = forward(model, extract_patch(x, o, P), true);
        Heatmap h = gradcam(model, *fr.trace, target).raster;
        h.provenance.origin_x = o.x;
        h.provenance.origin_y = o.y;
        patches.push_back(std::move(h));
      }
    }
    if (grid.origins.size() > 1) {
      fs::create_directories(out / "patches");
      for (std::size_t i = 0; i < patches.size(); ++i) {
        write_heatmap(patches[i], out / "patches" / ("patch_" + std::to_string(i) + ".rhm"));
      }
    }
    map = stitch(patches, grid).map;
    std::vector<Heatmap> one{map};
    normalize(one, parse_norm(a.normalization));
    map = one[0];
    map.provenance.method = a.method;
    write_heatmap(map, out / "heatmap.rhm");
  } else {
    throw Error(ErrorCode::kInvalidArgument, "explain", "unknown method '" + a.method + "' (lrp, gradcam, probability)");
  }
  std::vector<Heatmap> shown{map};
  if (a.method == "probability") normalize(shown, Normalization::kLocal);
  write_png(render(shown[0], img), out / "heatmap.png");
  say("wrote " + (out / "heatmap.rhm").string() + " (" + std::to_string(map.height) + "x" +
      std::to_string(map.width) + ") and " + (out / "heatmap.png").string());
}

struct StitchArgs {
  std::vector<std::string> inputs;
  std::uint32_t width = 0, height = 0, patch = kDefaultPatchSize;
  double overlap = 0.0;
  std::string normalization = "raw";
};

void cmd_stitch(const Globals& g, const StitchArgs& a) {
  std::vector<fs::path> files;
  for (const auto& in : a.inputs) {
    if (fs::is_directory(in)) {
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.path().extension() == ".rhm") files.push_back(e.path());
      }
    } else {
      files.emplace_back(in);
    }
  }
  const PatchGrid grid = plan_grid(a.height, a.width, a.patch, a.overlap);
  std::vector<Heatmap> ordered(grid.origins.size());
  std::vector<bool> seen(grid.origins.size(), false);
  for (const fs::path& f : files) {
    Heatmap h = read_heatmap(f);
    const PatchOrigin o{h.provenance.origin_y, h.provenance.origin_x};
    const auto it = std::find(grid.origins.begin(), grid.origins.end(), o);
    if (it == grid.origins.end()) {
      throw Error(ErrorCode::kInvalidArgument, f.string(), "origin is not on the patch grid");
    }
    const auto k = static_cast<std::size_t>(it - grid.origins.begin());
    if (seen[k]) throw Error(ErrorCode::kInvalidArgument, f.string(), "duplicate patch origin");
    seen[k] = true;
    ordered[k] = std::move(h);
  }
  if (std::count(seen.begin(), seen.end(), false) > 0) {
    throw Error(ErrorCode::kInvalidArgument, "stitch",
                std::to_string(grid.origins.size()) + " patches expected, " + std::to_string(files.size()) + " given");
  }
  std::vector<Heatmap> tile{stitch(ordered, grid).map};
  normalize(tile, parse_norm(a.normalization));
  fs::path out(g.out);
  if (out.extension() != ".rhm") {
    fs::create_directories(out);
    out /= "tile.rhm";
  } else if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  write_heatmap(tile[0], out);
  say("stitched " + std::to_string(ordered.size()) + " patches into " + out.string() + " (" +
      std::to_string(tile[0].height) + "x" + std::to_string(tile[0].width) + ")");
}

struct RenderArgs {
  std::string heatmap;
  std::string image;
  double alpha = kDefaultRenderAlpha;
};

void cmd_render(const Globals& g, const RenderArgs& a) {
  const Heatmap map = read_heatmap(a.heatmap);
  const Image base = a.image.empty() ? Image(map.width, map.height, Rgb{255, 255, 255}) : read_png(a.image);
  fs::path out(g.out);
  if (out.extension() != ".png") {
    fs::create_directories(out);
    out /= "render.png";
  } else if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  write_png(render(map, base, a.alpha), out);
  say("wrote " + out.string());
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> heatmaps;
  std::vector<std::string> annotations;
  double radius = kDefaultCellRadius;
  std::string normalization = "global";
  std::size_t random_runs = 0;
};

void cmd_eval(const Globals& g, const EvalArgs& a) {
  if (a.heatmaps.size() != a.annotations.size()) {
    throw Error(ErrorCode::kInvalidArgument, "eval", "one annotation file per heatmap required");
  }
  std::vector<Heatmap> maps;
  for (const auto& h : a.heatmaps) maps.push_back(read_heatmap(h));
  normalize(maps, parse_norm(a.normalization));
  std::vector<ScoredItem> items;
  std::vector<AnnotationSet> anns;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    anns.push_back(read_annotations(a.annotations[i]));
    const auto s = cell_scores(maps[i], anns.back(), a.radius);
    items.insert(items.end(), s.begin(), s.end());
  }
  const RocCurve curve = roc(items);
  const fs::path out(g.out);
  fs::create_directories(out);
  write_roc_csv(curve, out / "roc.csv");
  write_scores_csv(items, out / "scores.csv");
  write_png(plot_roc({curve}), out / "roc.png");
  nlohmann::json summary{{"auc", curve.auc}, {"positives", curve.positives}, {"negatives", curve.negatives},
                         {"radius", a.radius}};
  if (a.random_runs > 0) {
    std::vector<double> means;
    for (std::size_t i = 0; i < anns.size(); ++i) {
      const AucSummary r = random_baseline_auc(anns[i], a.random_runs, derive_seed(g.seed, "random", i), a.radius);
      means.push_back(r.mean);
    }
    double m = 0.0;
    for (double v : means) m += v / static_cast<double>(means.size());
    summary["random_baseline_auc"] = m;
  }
  detail::write_text(out / "summary.json", summary.dump(2) + "\n");
  std::ostringstream os;
  os << "AUC " << curve.auc << " over " << curve.positives << " cancer cells and " << curve.negatives
     << " negatives";
  say(os.str());
}

// ---- experiment ----------------------------------------------------------

void cmd_experiment(const Globals& g, const std::string& name, bool quick, bool verbose) {
  ExperimentOptions opt;
  opt.seed = g.seed;
  opt.out = fs::path(g.out) / name;
  opt.quick = quick;
  opt.verbose = verbose;
  const ExperimentReport r = run_experiment(name, opt);
  for (const Verdict& v : r.verdicts) {
    std::ostringstream os;
    os << (v.pass ? "PASS " : "FAIL ") << v.criterion << " = " << v.value << " (" << v.op << " "
       << v.threshold << ")";
    say(os.str());
  }
  say("report: " + (opt.out / "report.json").string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relevance heatmaps for histopathology-style patch classifiers"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream")->default_val(0);
  app.add_option("--out", g.out, "Output directory or file")->default_val("out");
  app.add_option("--config", g.config, "JSON config (synthesis config for gen, training config for train)");
  app.fallthrough();

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen", "Generate a synthetic patch dataset or an annotated tile");
  c_gen->add_option("--kind", gen.kind, "tumor, center-bias or tile")->default_val("tumor");
  c_gen->add_option("--patches", gen.patches, "Number of patches")->default_val(1000);
  c_gen->add_option("--tumor-fraction", gen.tumor_fraction, "Share of cancer patches")->default_val(0.5);
  c_gen->add_option("--scale", gen.scale, "Scale all lengths of the synthesis config")->default_val(1.0);
  c_gen->add_flag("--corner-artifact", gen.corner_artifact, "Paint a 5x5 artifact on every cancer patch");
  c_gen->add_option("--width", gen.width, "Tile width")->default_val(600);
  c_gen->add_option("--height", gen.height, "Tile height")->default_val(600);
  c_gen->add_option("--necrosis-regions", gen.necrosis_regions, "Necrotic regions per tile")->default_val(0);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a classifier with cross-validated early stopping");
  c_train->add_option("--data", tr.data, "Dataset manifest.json")->required();
  c_train->add_option("--arch", tr.arch, "reference or positional")->default_val("reference");
  c_train->add_option("--exclude-class", tr.exclude, "Drop training patches with this region class");

  ExplainArgs ex;
  auto* c_explain = app.add_subcommand("explain", "Explain a patch or tile with a saved model");
  c_explain->add_option("--model", ex.model, "Model manifest")->required();
  c_explain->add_option("--image", ex.image, "PNG patch or tile")->required();
  c_explain->add_option("--target", ex.target, "Class to explain")->default_val(kCancer);
  c_explain->add_option("--method", ex.method, "lrp, gradcam or probability")->default_val("lrp");
  c_explain->add_option("--overlap", ex.overlap, "Patch overlap on tiles")->default_val(0.0);
  c_explain->add_option("--normalization", ex.normalization, "raw, local or global")->default_val("local");

  StitchArgs st;
  auto* c_stitch = app.add_subcommand("stitch", "Stitch patch heatmaps into a tile heatmap");
  c_stitch->add_option("inputs", st.inputs, "Patch heatmap files or directories")->required();
  c_stitch->add_option("--width", st.width, "Tile width")->required();
  c_stitch->add_option("--height", st.height, "Tile height")->required();
  c_stitch->add_option("--patch", st.patch, "Patch size")->default_val(kDefaultPatchSize);
  c_stitch->add_option("--overlap", st.overlap, "Patch overlap")->default_val(0.0);
  c_stitch->add_option("--normalization", st.normalization, "raw, local or global")->default_val("raw");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Cell-level ROC of heatmaps against annotations");
  c_eval->add_option("--heatmap", ev.heatmaps, "Tile heatmap(s)")->required();
  c_eval->add_option("--annotations", ev.annotations, "Annotation file(s), same order")->required();
  c_eval->add_option("--radius", ev.radius, "Disc radius around point annotations")->default_val(kDefaultCellRadius);
  c_eval->add_option("--normalization", ev.normalization, "raw, local or global")->default_val("global");
  c_eval->add_option("--random-runs", ev.random_runs, "Random-heatmap baseline runs")->default_val(0);

  std::string exp_name;
  bool quick = false, verbose = false;
  std::string names;
  for (const auto& n : experiment_names()) names += (names.empty() ? "" : ", ") + n;
  auto* c_exp = app.add_subcommand("experiment", "Run a named experiment end to end");
  c_exp->add_option("name", exp_name, "One of: " + names)->required();
  c_exp->add_flag("--quick", quick, "Small sizes for a smoke run");
  c_exp->add_flag("--verbose", verbose, "Progress on stderr");

  RenderArgs rd;
  auto* c_render = app.add_subcommand("render", "Render a heatmap over an image");
  c_render->add_option("--heatmap", rd.heatmap, "Heatmap raster")->required();
  c_render->add_option("--image", rd.image, "Base PNG (white when omitted)");
  c_render->add_option("--alpha", rd.alpha, "Overlay opacity")->default_val(kDefaultRenderAlpha);

  CLI11_PARSE(app, argc, argv);
  try {
    if (c_gen->parsed()) cmd_gen(g, gen);
    else if (c_train->parsed()) cmd_train(g, tr);
    else if (c_explain->parsed()) cmd_explain(g, ex);
    else if (c_stitch->parsed()) cmd_stitch(g, st);
    else if (c_eval->parsed()) cmd_eval(g, ev);
    else if (c_exp->parsed()) cmd_experiment(g, exp_name, quick, verbose);
    else if (c_render->parsed()) cmd_render(g, rd);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
