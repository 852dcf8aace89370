#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rlvs/heatmap.hpp"
#include "support.hpp"

using namespace rlvs;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("rlvs_hm_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Heatmap constant_map(std::uint32_t n, float v) { return Heatmap(n, n, v); }

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("grid planning") {
  const auto g = plan_grid(600, 600, 200, 0.0);
  CHECK(g.stride == 200);
  CHECK(g.origins.size() == 9);
  CHECK(g.ys == std::vector<std::uint32_t>{0, 200, 400});
  CHECK(g.xs == std::vector<std::uint32_t>{0, 200, 400});

  for (double overlap : {0.0, 0.1, 0.5, 0.95}) {
    const auto single = plan_grid(200, 200, 200, overlap);
    REQUIRE(single.origins.size() == 1);
    CHECK(single.origins[0] == PatchOrigin{0, 0});
  }

  const auto clamped = plan_grid(200, 380, 200, 0.0);
  CHECK(clamped.xs == std::vector<std::uint32_t>{0, 180});
  CHECK(clamped.ys == std::vector<std::uint32_t>{0});

  const auto vis = plan_grid(600, 600, 200, 0.1);
  CHECK(vis.stride == 180);
  CHECK(vis.xs == std::vector<std::uint32_t>{0, 180, 360, 400});

  CHECK_THROWS_AS(plan_grid(600, 600, 200, -0.01), Error);
  CHECK_THROWS_AS(plan_grid(600, 600, 200, 0.96), Error);
  CHECK_THROWS_AS(plan_grid(100, 600, 200, 0.0), Error);
}

TEST_CASE("grid covers every pixel, row-major") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto patch = static_cast<std::uint32_t>(4 + rng.below(20));
    const auto h = patch + static_cast<std::uint32_t>(rng.below(60));
    const auto w = patch + static_cast<std::uint32_t>(rng.below(60));
    const auto g = plan_grid(h, w, patch, rng.uniform(0.0, 0.95));
    std::vector<int> cover(std::size_t{h} * w, 0);
    for (std::size_t i = 0; i < g.origins.size(); ++i) {
      const auto o = g.origins[i];
      if (i > 0) {
        const auto p = g.origins[i - 1];
        CHECK((p.y < o.y || (p.y == o.y && p.x < o.x)));
      }
      for (std::uint32_t y = 0; y < patch; ++y) {
        for (std::uint32_t x = 0; x < patch; ++x) ++cover[(o.y + y) * w + o.x + x];
      }
    }
    CHECK(*std::min_element(cover.begin(), cover.end()) >= 1);
  }
}

TEST_CASE("stitching examples") {
  const auto disjoint = plan_grid(4, 8, 4, 0.0);
  const auto t = stitch({constant_map(4, 1.5f), constant_map(4, -2.0f)}, disjoint);
  for (std::uint32_t y = 0; y < 4; ++y) {
    for (std::uint32_t x = 0; x < 8; ++x) CHECK(t.map.at(y, x) == (x < 4 ? 1.5f : -2.0f));
  }

  PatchGrid same = plan_grid(4, 4, 4, 0.0);
  same.origins.push_back({0, 0});
  const auto t2 = stitch({constant_map(4, 0.7f), constant_map(4, 0.7f)}, same);
  for (float v : t2.map.values) CHECK(v == doctest::Approx(0.7f));
  for (auto c : t2.coverage) CHECK(c == 2);

  const auto half = plan_grid(4, 6, 4, 0.5);
  REQUIRE(half.xs == std::vector<std::uint32_t>{0, 2});
  const auto t3 = stitch({constant_map(4, 0.0f), constant_map(4, 1.0f)}, half);
  for (std::uint32_t y = 0; y < 4; ++y) {
    CHECK(t3.map.at(y, 0) == 0.0f);
    CHECK(t3.map.at(y, 1) == 0.0f);
    CHECK(t3.map.at(y, 2) == 0.5f);
    CHECK(t3.map.at(y, 3) == 0.5f);
    CHECK(t3.map.at(y, 4) == 1.0f);
  }

  CHECK_THROWS_AS(stitch({constant_map(4, 0.0f)}, half), Error);
  CHECK_THROWS_AS(stitch({constant_map(3, 0.0f), constant_map(4, 0.0f)}, half), Error);
}

TEST_CASE("stitching is linear and preserves sums at coverage one") {
  Rng rng(2);
  const auto g = plan_grid(30, 25, 10, 0.3);
  std::vector<Heatmap> maps, scaled;
  for (std::size_t i = 0; i < g.origins.size(); ++i) {
    Heatmap m(10, 10);
    for (float& v : m.values) v = static_cast<float>(rng.uniform(-1, 1));
    Heatmap s = m;
    for (float& v : s.values) v *= 4.0f;
    maps.push_back(m);
    scaled.push_back(s);
  }
  const auto a = stitch(maps, g);
  const auto b = stitch(scaled, g);
  for (std::size_t i = 0; i < a.map.size(); ++i) CHECK(b.map.values[i] == doctest::Approx(4.0f * a.map.values[i]));

  const auto exact = plan_grid(20, 30, 10, 0.0);
  std::vector<Heatmap> tiles;
  double total = 0.0;
  for (std::size_t i = 0; i < exact.origins.size(); ++i) {
    Heatmap m(10, 10);
    for (float& v : m.values) v = static_cast<float>(rng.uniform(-1, 1));
    total += m.sum();
    tiles.push_back(m);
  }
  CHECK(stitch(tiles, exact).map.sum() == doctest::Approx(total).epsilon(1e-9));
}

TEST_CASE("normalization policies") {
  std::vector<Heatmap> set{Heatmap(2, 2), Heatmap(2, 2)};
  set[0].values = {1, -2, 0.5f, 0};
  set[1].values = {4, 0, -3, 1};
  auto global = set;
  const auto d = normalize(global, Normalization::kGlobal);
  CHECK(d == std::vector<double>{4.0, 4.0});
  CHECK(global[0].max_abs() == 0.5);
  CHECK(global[1].values == std::vector<float>{1, 0, -0.75f, 0.25f});
  for (const auto& m : global) {
    CHECK(m.normalization == Normalization::kGlobal);
    CHECK(m.divisor == 4.0);
  }
  auto again = global;
  normalize(again, Normalization::kGlobal);
  CHECK(again == global);

  auto local = set;
  normalize(local, Normalization::kLocal);
  CHECK(local[0].max_abs() == 1.0);
  CHECK(local[0].divisor == 2.0);
  CHECK(local[1].max_abs() == 1.0);
  auto local_again = local;
  normalize(local_again, Normalization::kLocal);
  CHECK(local_again == local);

  std::vector<Heatmap> zeros{Heatmap(3, 3), Heatmap(2, 2)};
  const auto before = zeros;
  CHECK(normalize(zeros, Normalization::kGlobal) == std::vector<double>{1.0, 1.0});
  CHECK(zeros[0].values == before[0].values);
  CHECK(zeros[1].divisor == 1.0);
}

TEST_CASE("normalized random maps lie in [-1, 1] with max 1") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Heatmap> maps(3, Heatmap(5, 7));
    for (auto& m : maps) {
      for (float& v : m.values) v = static_cast<float>(rng.uniform(-50, 50));
    }
    auto local = maps;
    normalize(local, Normalization::kLocal);
    for (const auto& m : local) CHECK(m.max_abs() == 1.0);
    normalize(maps, Normalization::kGlobal);
    double top = 0.0;
    for (const auto& m : maps) {
      CHECK(m.max_abs() <= 1.0);
      top = std::max(top, m.max_abs());
    }
    CHECK(top == 1.0);
  }
}

TEST_CASE("render colour endpoints and blend") {
  const Image gray(2, 1, Rgb{128, 128, 128});
  Heatmap zero(1, 2);
  CHECK(render(zero, gray) == gray);

  Heatmap ends(1, 2);
  ends.values = {1.0f, -1.0f};
  const Image pure = render(ends, gray, 1.0);
  CHECK(pure.at(0, 0) == Rgb{255, 0, 0});
  CHECK(pure.at(1, 0) == Rgb{0, 0, 255});

  Heatmap half(1, 2);
  half.values = {0.5f, -0.5f};
  const Image blended = render(half, gray, 0.5);
  CHECK(blended.at(0, 0) == Rgb{160, 96, 96});
  CHECK(blended.at(1, 0) == Rgb{96, 96, 160});

  const Image colour(2, 1, Rgb{200, 40, 90});
  const std::uint8_t l = luminance(Rgb{200, 40, 90});
  CHECK(render(zero, colour).at(1, 0) == Rgb{l, l, l});
  CHECK_THROWS_AS(render(Heatmap(2, 2), gray), Error);
}

TEST_CASE("render output is byte-identical across runs") {
  const auto dir = scratch_dir("render");
  Rng rng(4);
  Image base(16, 12);
  for (auto& p : base.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  Heatmap map(12, 16);
  for (float& v : map.values) v = static_cast<float>(rng.uniform(-1, 1));
  write_png(render(map, base), dir / "a.png");
  write_png(render(map, base), dir / "b.png");
  CHECK(file_bytes(dir / "a.png") == file_bytes(dir / "b.png"));
  CHECK(read_png(dir / "a.png") == render(map, base));
}

TEST_CASE("png and tensor conversion") {
  const auto dir = scratch_dir("png");
  Image img(3, 2);
  img.set(0, 0, {255, 0, 10});
  img.set(2, 1, {1, 2, 3});
  write_png(img, dir / "x.png");
  CHECK(read_png(dir / "x.png") == img);
  const Tensor t = image_to_tensor(img);
  CHECK(t.shape() == Shape{1, 3, 2, 3});
  CHECK(t.at(0, 0, 0, 0) == 1.0f);
  CHECK(t.at(0, 2, 0, 0) == doctest::Approx(10.0 / 255));
  CHECK(tensor_to_image(t) == img);

  std::ofstream(dir / "bad.png") << "not a png at all";
  CHECK_THROWS_AS(read_png(dir / "bad.png"), Error);
  auto bytes = file_bytes(dir / "x.png");
  bytes.resize(bytes.size() / 2);
  std::ofstream(dir / "cut.png", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                         static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(read_png(dir / "cut.png"), Error);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), Error);
}

TEST_CASE("heatmap file round trip with sidecar") {
  const auto dir = scratch_dir("rhmp");
  Heatmap m(3, 4);
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = 0.25f * static_cast<float>(i) - 1.0f;
  m.normalization = Normalization::kGlobal;
  m.divisor = 3.5;
  m.provenance = {"lrp", "model-a", 1, "tile-7", 40, 80};
  write_heatmap(m, dir / "m.rhmp");
  const auto bytes = file_bytes(dir / "m.rhmp");
  CHECK(bytes.size() == 12 + 4 * 12);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RHMP");
  CHECK(fs::exists(heatmap_sidecar_path(dir / "m.rhmp")));
  CHECK(read_heatmap(dir / "m.rhmp") == m);

  auto cut = bytes;
  cut.pop_back();
  std::ofstream(dir / "cut.rhmp", std::ios::binary)
      .write(reinterpret_cast<const char*>(cut.data()), static_cast<std::streamsize>(cut.size()));
  fs::copy_file(heatmap_sidecar_path(dir / "m.rhmp"), heatmap_sidecar_path(dir / "cut.rhmp"));
  CHECK_THROWS_AS(read_heatmap(dir / "cut.rhmp"), Error);
}

TEST_CASE("patch explanations are stitched at tile resolution") {
  Rng rng(5);
  Model m(Shape{1, 3, 8, 8}, 2);
  m.conv2d("conv", std::string(kModelInput), 4, 3, 1, 1);
  m.relu("relu", "conv");
  m.global_avgpool("gap", "relu");
  m.dense("fc", "gap", 2);
  testing::randomize_parameters(m, rng, 1.0, false);
  const Tensor tile = testing::random_tensor(Shape{1, 3, 20, 20}, rng);
  const auto grid = plan_grid(20, 20, 8, 0.25);
  const auto maps = explain_patches(m, tile, grid, 1, {}, "t0", 4);
  REQUIRE(maps.size() == grid.origins.size());
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto fr = forward(m, extract_patch(tile, grid.origins[i], 8), true);
    CHECK(maps[i].values == lrp(m, *fr.trace, 1)[0].values);
    CHECK(maps[i].provenance.origin_x == grid.origins[i].x);
    CHECK(maps[i].provenance.tile_id == "t0");
  }
  const auto tiled = stitch(maps, grid);
  CHECK(tiled.map.height == 20);
  CHECK(tiled.map.width == 20);
}
