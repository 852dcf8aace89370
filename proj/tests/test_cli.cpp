#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "rlvs/datagen.hpp"
#include "rlvs/heatmap_raster.hpp"
#include "rlvs/image.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "rlvs_cli_test";

struct Run {
  int status = 0;
  std::string output;
};

Run run(const std::string& args) {
  const fs::path log = kWork / "last.log";
  const std::string cmd = std::string(RLVS_CLI) + " " + args + " > " + log.string() + " 2>&1";
  Run r;
  const int raw = std::system(cmd.c_str());
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& body) {
  std::ofstream(p) << body;
}

}  // namespace

TEST_CASE("gen, train, explain, stitch and render on a 600x600 tile") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const std::string w = kWork.string();

  // 200 px patches; a zero-epoch run saves the initialized model.
  Run r = run("gen --kind tumor --patches 6 --scale 3.125 --seed 1 --out " + w + "/data");
  REQUIRE_MESSAGE(r.status == 0, r.output);
  CHECK(fs::exists(kWork / "data/manifest.json"));
  CHECK(rlvs::read_png(kWork / "data/images/00000.png").width == 200);
  write(kWork / "train.json", R"({"max_epochs": 0, "batch_size": 4})");
  r = run("train --data " + w + "/data/manifest.json --config " + w + "/train.json --out " + w + "/model");
  REQUIRE_MESSAGE(r.status == 0, r.output);
  REQUIRE(fs::exists(kWork / "model/model.json"));

  r = run("gen --kind tile --width 600 --height 600 --seed 2 --out " + w + "/tile");
  REQUIRE_MESSAGE(r.status == 0, r.output);

  r = run("explain --model " + w + "/model/model.json --image " + w + "/tile/tile.png --out " + w + "/explain");
  REQUIRE_MESSAGE(r.status == 0, r.output);
  const rlvs::Heatmap direct = rlvs::read_heatmap(kWork / "explain/heatmap.rhm");
  CHECK(direct.height == 600);
  CHECK(direct.width == 600);
  CHECK(fs::exists(kWork / "explain/heatmap.png"));
  std::size_t patches = 0;
  for (const auto& e : fs::directory_iterator(kWork / "explain/patches")) patches += e.path().extension() == ".rhm";
  CHECK(patches == 9);

  r = run("stitch " + w + "/explain/patches --width 600 --height 600 --patch 200 --overlap 0 --out " + w +
          "/stitched.rhm");
  REQUIRE_MESSAGE(r.status == 0, r.output);
  const rlvs::Heatmap stitched = rlvs::read_heatmap(kWork / "stitched.rhm");
  CHECK(stitched.height == 600);
  CHECK(stitched.width == 600);

  r = run("render --heatmap " + w + "/stitched.rhm --image " + w + "/tile/tile.png --out " + w + "/render.png");
  REQUIRE_MESSAGE(r.status == 0, r.output);
  CHECK(rlvs::read_png(kWork / "render.png").width == 600);

  // A missing patch is an error.
  fs::remove(kWork / "explain/patches/patch_4.rhm");
  r = run("stitch " + w + "/explain/patches --width 600 --height 600 --patch 200 --out " + w + "/bad.rhm");
  CHECK(r.status != 0);
}

TEST_CASE("eval writes a ROC and rejects single-class annotations") {
  fs::create_directories(kWork);
  const std::string w = kWork.string();
  rlvs::Heatmap map(40, 40);
  for (std::uint32_t y = 0; y < 40; ++y) {
    for (std::uint32_t x = 0; x < 40; ++x) map.at(y, x) = x < 20 ? 1.0f : 0.0f;
  }
  rlvs::write_heatmap(map, kWork / "eval.rhm");
  rlvs::AnnotationSet ann;
  ann.tile_id = "t";
  ann.width = ann.height = 40;
  ann.points = {{10, 10, rlvs::PointClass::kCancer}, {30, 30, rlvs::PointClass::kNonCancer}};
  rlvs::write_annotations(ann, kWork / "ann.json");
  Run r = run("eval --heatmap " + w + "/eval.rhm --annotations " + w + "/ann.json --radius 3 --out " + w + "/eval");
  REQUIRE_MESSAGE(r.status == 0, r.output);
  const auto summary = nlohmann::json::parse(slurp(kWork / "eval/summary.json"));
  CHECK(summary["auc"].get<double>() == 1.0);
  CHECK(fs::exists(kWork / "eval/roc.csv"));

  ann.points = {{10, 10, rlvs::PointClass::kCancer}, {12, 30, rlvs::PointClass::kCancer}};
  rlvs::write_annotations(ann, kWork / "single.json");
  r = run("eval --heatmap " + w + "/eval.rhm --annotations " + w + "/single.json --radius 3 --out " + w + "/eval2");
  CHECK(r.status != 0);
  CHECK(r.output.find("single-class input") != std::string::npos);
}

TEST_CASE("experiment names and determinism") {
  fs::create_directories(kWork);
  const std::string w = kWork.string();
  Run r = run("experiment no-such-thing --out " + w + "/exp");
  CHECK(r.status != 0);
  for (const char* name : {"feature-verification", "sampling-ratio", "center-bias", "corner-bias", "missing-class"}) {
    CHECK(r.output.find(name) != std::string::npos);
  }

  r = run("experiment corner-bias --quick --seed 7 --out " + w + "/exp1");
  REQUIRE_MESSAGE(r.status == 0, r.output);
  r = run("experiment corner-bias --quick --seed 7 --out " + w + "/exp2");
  REQUIRE_MESSAGE(r.status == 0, r.output);
  const auto a = nlohmann::json::parse(slurp(kWork / "exp1/corner-bias/report.json"));
  const auto b = nlohmann::json::parse(slurp(kWork / "exp2/corner-bias/report.json"));
  CHECK(a["metrics"] == b["metrics"]);
  CHECK(a["verdicts"] == b["verdicts"]);
  CHECK(a["inputs"] == b["inputs"]);
  for (const auto& rel : a["artifacts"]) {
    CHECK_MESSAGE(fs::exists(kWork / "exp1/corner-bias" / rel.get<std::string>()), rel);
  }
}

TEST_CASE("bad flags exit nonzero") {
  fs::create_directories(kWork);
  CHECK(run("gen --kind nonsense --out " + kWork.string() + "/x").status != 0);
  CHECK(run("explain --image missing.png --model missing.json").status != 0);
  CHECK(run("frobnicate").status != 0);
}
